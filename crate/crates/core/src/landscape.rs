//! CSV exports of the transform curves and the two-class loss derivative
//! surfaces, plus the hard/easy gradient gap.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so parsing
//! an export gives back the exact in-memory values. Cells that are not finite
//! (the exact transform's derivatives at the branch points) are left empty.

use std::fmt::Write as _;
use std::path::Path;

use crate::cheby::{
    exact_psi, exact_psi_derivative, exact_psi_hessian, ChebyshevSeries, EvalPoint,
};
use crate::error::{Error, Result};
use crate::grid::uniform_grid;
use crate::io::write_atomic;
use crate::losses::{
    binary_derivative_surface, binary_target_derivative, DerivativeSurface, LossSpec,
};

/// Hard example: target and non-target cosines equal.
pub const POINT_A: (f64, f64) = (0.8, 0.8);
/// Easy example: target cosine well above the non-target.
pub const POINT_B: (f64, f64) = (0.8, 0.2);

/// The exact second derivative is left blank this close to `x = +-1`.
pub const EXACT_HESSIAN_CUTOFF: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveBundle {
    pub grid: Vec<f64>,
    /// `(label, values)`; `None` marks an empty cell.
    pub columns: Vec<(String, Vec<Option<f64>>)>,
}

impl CurveBundle {
    pub fn column(&self, label: &str) -> Option<&[Option<f64>]> {
        self.columns
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x");
        for (label, _) in &self.columns {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (i, x) in self.grid.iter().enumerate() {
            let _ = write!(out, "{x}");
            for (_, values) in &self.columns {
                out.push(',');
                if let Some(v) = values[i] {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty curve CSV".into()))?;
        let mut names = header.split(',');
        if names.next() != Some("x") {
            return Err(Error::InvalidArgument(
                "curve CSV must start with an x column".into(),
            ));
        }
        let mut columns: Vec<(String, Vec<Option<f64>>)> =
            names.map(|n| (n.to_string(), Vec::new())).collect();
        let mut grid = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut cells = line.split(',');
            grid.push(parse_cell(cells.next(), n + 2)?.ok_or_else(|| bad_row(n + 2))?);
            for (_, values) in columns.iter_mut() {
                values.push(parse_cell(cells.next(), n + 2)?);
            }
            if cells.next().is_some() {
                return Err(bad_row(n + 2));
            }
        }
        Ok(CurveBundle { grid, columns })
    }
}

fn bad_row(line: usize) -> Error {
    Error::InvalidArgument(format!("malformed CSV row at line {line}"))
}

fn parse_cell(cell: Option<&str>, line: usize) -> Result<Option<f64>> {
    match cell {
        None => Err(bad_row(line)),
        Some("") => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| bad_row(line)),
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Exact `psi`, `psi'`, `psi''` and, per degree, the series value and its two
/// derivatives on a uniform grid over `[-1, 1]`.
pub fn curve_bundle(margin: f64, degrees: &[usize], grid_n: usize) -> Result<CurveBundle> {
    let grid = uniform_grid(-1.0, 1.0, grid_n)?;
    let points: Vec<EvalPoint> = grid
        .iter()
        .map(|&x| EvalPoint::new(x))
        .collect::<Result<_>>()?;
    let series = degrees
        .iter()
        .map(|&d| ChebyshevSeries::new(margin, d))
        .collect::<Result<Vec<_>>>()?;
    if series.is_empty() {
        crate::cheby::check_margin(margin)?;
    }

    let mut columns = vec![
        (
            "psi".to_string(),
            points
                .iter()
                .map(|&x| finite(exact_psi(x, margin)))
                .collect(),
        ),
        (
            "psi_d1".to_string(),
            points
                .iter()
                .map(|&x| finite(exact_psi_derivative(x, margin)))
                .collect(),
        ),
        (
            "psi_d2".to_string(),
            points
                .iter()
                .map(|&x| {
                    if 1.0 - x.value().abs() < EXACT_HESSIAN_CUTOFF {
                        None
                    } else {
                        finite(exact_psi_hessian(x, margin))
                    }
                })
                .collect(),
        ),
    ];
    for s in &series {
        let d = s.degree();
        if columns.iter().any(|(l, _)| *l == format!("cheb{d}")) {
            return Err(Error::InvalidArgument(format!(
                "degree {d} requested twice"
            )));
        }
        columns.push((
            format!("cheb{d}"),
            points.iter().map(|&x| Some(s.eval(x))).collect(),
        ));
        columns.push((
            format!("cheb{d}_d1"),
            points.iter().map(|&x| Some(s.derivative(x))).collect(),
        ));
        columns.push((
            format!("cheb{d}_d2"),
            points.iter().map(|&x| Some(s.hessian(x))).collect(),
        ));
    }
    Ok(CurveBundle { grid, columns })
}

pub fn export_curves(
    margin: f64,
    degrees: &[usize],
    grid_n: usize,
    out: &Path,
) -> Result<CurveBundle> {
    let bundle = curve_bundle(margin, degrees, grid_n)?;
    write_atomic(out, bundle.to_csv().as_bytes())?;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceBundle {
    pub axis: Vec<f64>,
    /// `(loss label, surface)`, labels unique.
    pub surfaces: Vec<(String, DerivativeSurface)>,
    pub point_a: (f64, f64),
    pub point_b: (f64, f64),
}

impl SurfaceBundle {
    /// Grid indices `(i, j)` of a point, if it sits exactly on a node.
    pub fn node_of(&self, point: (f64, f64)) -> Option<(usize, usize)> {
        let find = |v: f64| self.axis.iter().position(|&a| (a - v).abs() <= 1e-12);
        Some((find(point.0)?, find(point.1)?))
    }

    /// Long format: `loss,s_p,s_n,dL_dsp`.
    pub fn to_csv(&self) -> String {
        let n = self.axis.len();
        let mut out = String::with_capacity(48 * n * n * self.surfaces.len() + 32);
        out.push_str("loss,s_p,s_n,dL_dsp\n");
        for (label, surface) in &self.surfaces {
            for (i, sp) in self.axis.iter().enumerate() {
                for (j, sn) in self.axis.iter().enumerate() {
                    let _ = writeln!(out, "{label},{sp},{sn},{}", surface.at(i, j));
                }
            }
        }
        out
    }
}

pub fn surface_bundle(specs: &[LossSpec], grid_n: usize) -> Result<SurfaceBundle> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no loss specs given".into()));
    }
    let mut surfaces: Vec<(String, DerivativeSurface)> = Vec::with_capacity(specs.len());
    for spec in specs {
        let label = spec.label();
        if surfaces.iter().any(|(l, _)| *l == label) {
            return Err(Error::InvalidArgument(format!(
                "loss {label} requested twice"
            )));
        }
        surfaces.push((label, binary_derivative_surface(spec, grid_n)?));
    }
    Ok(SurfaceBundle {
        axis: surfaces[0].1.axis.clone(),
        surfaces,
        point_a: POINT_A,
        point_b: POINT_B,
    })
}

pub fn export_surfaces(specs: &[LossSpec], grid_n: usize, out: &Path) -> Result<SurfaceBundle> {
    let bundle = surface_bundle(specs, grid_n)?;
    write_atomic(out, bundle.to_csv().as_bytes())?;
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeGap {
    pub grad_a: f64,
    pub grad_b: f64,
    pub ratio: f64,
}

/// `|dL/ds_p|` at the hard point A and the easy point B, and their ratio.
pub fn derivative_gap(spec: &LossSpec) -> Result<DerivativeGap> {
    gap_between(spec, POINT_A, POINT_B)
}

pub fn gap_between(spec: &LossSpec, a: (f64, f64), b: (f64, f64)) -> Result<DerivativeGap> {
    let grad_a = binary_target_derivative(spec, a.0, a.1)?.abs();
    let grad_b = binary_target_derivative(spec, b.0, b.1)?.abs();
    Ok(DerivativeGap {
        grad_a,
        grad_b,
        ratio: grad_a / grad_b,
    })
}
