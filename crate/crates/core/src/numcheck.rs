//! Finite-difference and grid-scan oracles.
//!
//! Nothing here knows how the analytic derivatives are computed; the
//! functions only sample whatever closure they are handed.

use crate::cheby::{exact_psi, ChebyshevSeries, EvalPoint};
use crate::error::{Error, Result};
use crate::grid::uniform_grid;

/// Default central-difference step for first derivatives.
pub const FD_STEP: f64 = 1e-5;
/// Default central-difference step for second derivatives (differencing the
/// analytic first derivative). At degree 30 a step of 1e-4 already carries a
/// truncation error near 7e-5 relative; 1e-6 keeps it below 1e-7 up to
/// degree 50 while round-off stays near 1e-9.
pub const FD_STEP_SECOND: f64 = 1e-6;

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: f64, h: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let hi = f(x + h)?;
    let lo = f(x - h)?;
    Ok((hi - lo) / (2.0 * h))
}

/// Samples of a function on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub max_abs: f64,
    /// First grid point attaining `max_abs`.
    pub argmax: f64,
}

pub fn scan<F>(f: F, lo: f64, hi: f64, n: usize) -> Result<ScanReport>
where
    F: Fn(f64) -> Result<f64>,
{
    let grid = uniform_grid(lo, hi, n)?;
    let values = grid.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;

    let (mut max_abs, mut argmax) = (values[0].abs(), grid[0]);
    for (&x, v) in grid.iter().zip(&values).skip(1) {
        if v.abs() > max_abs {
            max_abs = v.abs();
            argmax = x;
        }
    }

    Ok(ScanReport {
        grid,
        values,
        max_abs,
        argmax,
    })
}

/// Grid sup-norm of `exact_psi - clenshaw_eval` over `[-1, 1]`.
pub fn max_abs_error(margin: f64, degree: usize, n: usize) -> Result<f64> {
    let series = ChebyshevSeries::new(margin, degree)?;
    let grid = uniform_grid(-1.0, 1.0, n)?;
    Ok(grid
        .into_iter()
        .map(|x| {
            let x = EvalPoint::new(x).expect("grid stays in [-1, 1]");
            (exact_psi(x, margin) - series.eval(x)).abs()
        })
        .fold(0.0, f64::max))
}

/// Slack for comparing a computed grid error against the analytic tail bound.
/// The tail bound is attained with equality at `x = +-1`, so the two agree
/// only up to evaluation round-off.
pub const ROUNDOFF_ALLOWANCE: f64 = 1e-14;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}
