//! Chebyshev series for the additive angular margin transform
//! `psi(x, m) = cos(arccos(x) + m)`.
//!
//! The expansion has a closed form: the odd part is the single term
//! `cos(m) * T_1(x)`, and the even part comes from expanding
//! `-sin(m) * sqrt(1 - x^2)`, whose coefficients telescope. The series is
//! stored with its constant term `a_0` entering the sum at full weight, so
//! that
//!
//! ```text
//! f(x) = a_0 + a_1 T_1(x) + a_2 T_2(x) + ... + a_n T_n(x)
//! a_0 = -2 sin(m) / pi,   a_1 = cos(m),   a_{2k+1} = 0 (k >= 1)
//! a_{2k} = (2 sin(m) / pi) * (1 / (2k - 1) - 1 / (2k + 1))
//! ```
//!
//! With that convention `f(1) = psi(1, m)` up to the truncated tail, and the
//! worst-case error is the tail sum `2 sin(m) / (pi (2K + 1))`.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::grid::uniform_grid;

/// Below this distance from `x = +-1` the trigonometric Hessian form is
/// `0/0` and the polynomial form is used instead.
pub const HESSIAN_SWITCH_EPS: f64 = 1e-6;

/// A cosine value validated to lie in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EvalPoint(f64);

impl EvalPoint {
    pub fn new(x: f64) -> Result<Self> {
        if x.is_finite() && (-1.0..=1.0).contains(&x) {
            Ok(EvalPoint(x))
        } else {
            Err(Error::OutOfDomain(x))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for EvalPoint {
    type Error = Error;

    fn try_from(x: f64) -> Result<Self> {
        EvalPoint::new(x)
    }
}

pub(crate) fn check_margin(margin: f64) -> Result<()> {
    if margin.is_finite() && (0.0..FRAC_PI_2).contains(&margin) {
        Ok(())
    } else {
        Err(Error::InvalidMargin(margin))
    }
}

/// Truncated Chebyshev expansion of `cos(arccos(x) + margin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevSeries {
    margin: f64,
    coefficients: Vec<f64>,
}

impl ChebyshevSeries {
    /// Builds the closed-form coefficients `a_0..=a_degree`.
    pub fn new(margin: f64, degree: usize) -> Result<Self> {
        check_margin(margin)?;
        if degree < 1 {
            return Err(Error::InvalidDegree(degree));
        }

        let (sin_m, cos_m) = margin.sin_cos();
        let scale = 2.0 * sin_m / PI;

        let mut coefficients = vec![0.0; degree + 1];
        coefficients[0] = -scale;
        coefficients[1] = cos_m;
        for k in 1..=degree / 2 {
            let two_k = (2 * k) as f64;
            coefficients[2 * k] = scale * (1.0 / (two_k - 1.0) - 1.0 / (two_k + 1.0));
        }

        Ok(ChebyshevSeries {
            margin,
            coefficients,
        })
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Highest coefficient index.
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Clenshaw backward recurrence for `sum a_k T_k(x)`.
    pub fn eval(&self, x: EvalPoint) -> f64 {
        clenshaw_t(&self.coefficients, x.value())
    }

    /// First derivative, `sum_{k>=1} k a_k U_{k-1}(x)`, evaluated with the
    /// second-kind recurrence so it stays finite at the endpoints.
    pub fn derivative(&self, x: EvalPoint) -> f64 {
        let weights: Vec<f64> = self
            .coefficients
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, a)| k as f64 * a)
            .collect();
        clenshaw_u(&weights, x.value())
    }

    /// Second derivative of the truncated series.
    ///
    /// In the interior this sums `a_k T_k''(x)` in trigonometric form:
    /// `T_k'' = -k (k T_k sqrt(1-x^2) - x sin(k acos x)) / (1-x^2)^{3/2}`.
    /// Within [`HESSIAN_SWITCH_EPS`] of the endpoints it differentiates the
    /// coefficient vector twice and evaluates the result with Clenshaw.
    pub fn hessian(&self, x: EvalPoint) -> f64 {
        let x = x.value();
        if 1.0 - x.abs() <= HESSIAN_SWITCH_EPS {
            let second = differentiate(&differentiate(&self.coefficients));
            return clenshaw_t(&second, x);
        }

        let theta = x.acos();
        let sin_theta = (1.0 - x * x).sqrt();
        let denom = sin_theta * sin_theta * sin_theta;
        let mut sum = 0.0;
        // T_1 is linear, so its term is skipped.
        for (k, &a) in self.coefficients.iter().enumerate().skip(2) {
            if a == 0.0 {
                continue;
            }
            let kf = k as f64;
            let (sin_k, cos_k) = (kf * theta).sin_cos();
            sum += a * kf * (kf * cos_k * sin_theta - x * sin_k);
        }
        -sum / denom
    }

    /// Maximum of `|f'(x)|` over a uniform grid on `[-1, 1]` that includes
    /// both endpoints.
    pub fn lipschitz_constant(&self, grid_points: usize) -> Result<f64> {
        let grid = uniform_grid(-1.0, 1.0, grid_points)?;
        Ok(grid
            .into_iter()
            .map(|x| self.derivative(EvalPoint(x)).abs())
            .fold(0.0, f64::max))
    }
}

pub fn coefficients(margin: f64, degree: usize) -> Result<ChebyshevSeries> {
    ChebyshevSeries::new(margin, degree)
}

/// Checked Clenshaw evaluation.
pub fn clenshaw_eval(series: &ChebyshevSeries, x: f64) -> Result<f64> {
    Ok(series.eval(EvalPoint::new(x)?))
}

pub fn series_derivative(series: &ChebyshevSeries, x: f64) -> Result<f64> {
    Ok(series.derivative(EvalPoint::new(x)?))
}

pub fn series_hessian(series: &ChebyshevSeries, x: f64) -> Result<f64> {
    Ok(series.hessian(EvalPoint::new(x)?))
}

pub fn lipschitz_constant(series: &ChebyshevSeries, grid_points: usize) -> Result<f64> {
    series.lipschitz_constant(grid_points)
}

/// First-kind Chebyshev polynomial by the three-term recurrence.
pub fn cheb_t(k: usize, x: EvalPoint) -> f64 {
    let x = x.value();
    match k {
        0 => 1.0,
        1 => x,
        _ => {
            let (mut prev, mut cur) = (1.0, x);
            for _ in 1..k {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Second-kind Chebyshev polynomial, `U_0 = 1`, `U_1 = 2x`.
pub fn cheb_u(k: usize, x: EvalPoint) -> f64 {
    let x = x.value();
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if k == 0 {
        return prev;
    }
    for _ in 1..k {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `cos(arccos(x) + m)` via `x cos m - sqrt(1 - x^2) sin m`.
pub fn exact_psi(x: EvalPoint, margin: f64) -> f64 {
    let x = x.value();
    let (sin_m, cos_m) = margin.sin_cos();
    x * cos_m - (1.0 - x * x).sqrt() * sin_m
}

/// `d/dx psi = cos m + x sin m / sqrt(1 - x^2)`. Infinite at `x = +-1`.
pub fn exact_psi_derivative(x: EvalPoint, margin: f64) -> f64 {
    let x = x.value();
    let (sin_m, cos_m) = margin.sin_cos();
    cos_m + x * sin_m / (1.0 - x * x).sqrt()
}

/// `d^2/dx^2 psi = sin m / (1 - x^2)^{3/2}`. Infinite at `x = +-1`.
pub fn exact_psi_hessian(x: EvalPoint, margin: f64) -> f64 {
    let x = x.value();
    margin.sin() / (1.0 - x * x).powf(1.5)
}

/// Tail bound on `sup |psi - f|` for the degree-`degree` series:
/// `sum_{k>K} a_{2k} = 2 sin(m) / (pi (2K + 1))` with `2K <= degree`.
pub fn approx_error_bound(margin: f64, degree: usize) -> Result<f64> {
    check_margin(margin)?;
    if degree < 1 {
        return Err(Error::InvalidDegree(degree));
    }
    let half = (degree / 2) as f64;
    Ok(2.0 * margin.sin() / (PI * (2.0 * half + 1.0)))
}

// Full-weight constant term: sum c_k T_k = b_0 - x b_1.
fn clenshaw_t(coefficients: &[f64], x: f64) -> f64 {
    let (b0, b1) = clenshaw_backward(coefficients, x);
    b0 - x * b1
}

// U_1 - 2x U_0 = 0, so the sum is b_0.
fn clenshaw_u(coefficients: &[f64], x: f64) -> f64 {
    clenshaw_backward(coefficients, x).0
}

fn clenshaw_backward(coefficients: &[f64], x: f64) -> (f64, f64) {
    let two_x = 2.0 * x;
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coefficients.iter().rev() {
        let b0 = c + two_x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    (b1, b2)
}

/// Coefficients of the derivative series, both in full-weight-constant form.
fn differentiate(coefficients: &[f64]) -> Vec<f64> {
    let n = coefficients.len().saturating_sub(1);
    if n == 0 {
        return vec![0.0];
    }
    let mut out = vec![0.0; n + 2];
    for j in (1..=n).rev() {
        out[j - 1] = out[j + 1] + 2.0 * j as f64 * coefficients[j];
    }
    out.truncate(n);
    out[0] *= 0.5;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ep(x: f64) -> EvalPoint {
        EvalPoint::new(x).unwrap()
    }

    /// Chebyshev projection by Gauss-Chebyshev quadrature:
    /// `a_0 = (1/pi) int psi w`, `a_k = (2/pi) int psi T_k w`.
    fn quadrature_coefficient(margin: f64, k: usize, nodes: usize) -> f64 {
        let mut sum = 0.0;
        for j in 1..=nodes {
            let theta = (2 * j - 1) as f64 * PI / (2 * nodes) as f64;
            let x = theta.cos();
            let psi = x * margin.cos() - theta.sin() * margin.sin();
            sum += psi * (k as f64 * theta).cos();
        }
        let weight = if k == 0 { 1.0 } else { 2.0 };
        weight * sum / nodes as f64
    }

    #[test]
    fn reference_coefficients_at_margin_point_two() {
        let s = coefficients(0.2, 4).unwrap();
        let a = s.coefficients();
        assert_eq!(a.len(), 5);
        assert!((a[0] - -0.1265).abs() < 5e-5);
        assert!((a[1] - 0.98007).abs() < 5e-6);
        assert!((a[2] - 0.08433).abs() < 5e-5);
        assert_eq!(a[3], 0.0);
        assert!((a[4] - 0.01687).abs() < 5e-5);
    }

    #[test]
    fn zero_margin_is_identity() {
        let s = coefficients(0.0, 6).unwrap();
        assert_eq!(s.coefficients(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.eval(ep(0.73)), 0.73);
        assert_eq!(s.derivative(ep(-0.2)), 1.0);
        assert_eq!(s.hessian(ep(0.4)), 0.0);
        assert_eq!(s.hessian(ep(1.0)), 0.0);
    }

    #[test]
    fn margin_point_three_degree_two_matches_quadrature() {
        let s = coefficients(0.3, 2).unwrap();
        let a = s.coefficients();
        for (k, &expected) in [-0.18813, 0.95534, 0.12542].iter().enumerate() {
            assert!((a[k] - expected).abs() < 5e-6, "a_{k} = {}", a[k]);
            let q = quadrature_coefficient(0.3, k, 20_000);
            assert!((a[k] - q).abs() < 1e-8, "a_{k}: {} vs {q}", a[k]);
        }
    }

    #[test]
    fn closed_form_matches_quadrature_up_to_ten() {
        for &m in &[0.1, 0.2, 0.3, 0.5, 1.2] {
            let s = coefficients(m, 10).unwrap();
            for (k, &a) in s.coefficients().iter().enumerate() {
                let q = quadrature_coefficient(m, k, 20_000);
                assert!((a - q).abs() < 1e-8, "m={m} k={k}: {a} vs {q}");
            }
        }
    }

    #[test]
    fn even_coefficients_strictly_decrease() {
        let s = coefficients(0.3, 50).unwrap();
        let a = s.coefficients();
        for k in 1..25 {
            assert!(a[2 * k].abs() > a[2 * k + 2].abs());
            assert_eq!(a[2 * k + 1], 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            coefficients(-0.1, 4),
            Err(Error::InvalidMargin(_))
        ));
        assert!(matches!(
            coefficients(FRAC_PI_2, 4),
            Err(Error::InvalidMargin(_))
        ));
        assert!(matches!(
            coefficients(f64::NAN, 4),
            Err(Error::InvalidMargin(_))
        ));
        assert!(matches!(coefficients(0.3, 0), Err(Error::InvalidDegree(0))));
        let s = coefficients(0.3, 4).unwrap();
        assert!(matches!(
            clenshaw_eval(&s, 1.0001),
            Err(Error::OutOfDomain(_))
        ));
        assert!(matches!(
            lipschitz_constant(&s, 1),
            Err(Error::GridTooSmall(1))
        ));
    }

    #[test]
    fn first_kind_polynomials() {
        assert_eq!(cheb_t(0, ep(0.37)), 1.0);
        assert_eq!(cheb_t(3, ep(0.5)), -1.0);
        let x: f64 = 0.83;
        assert!((cheb_t(7, ep(x)) - (7.0 * x.acos()).cos()).abs() < 1e-12);
    }

    #[test]
    fn second_kind_polynomials() {
        assert_eq!(cheb_u(0, ep(-0.9)), 1.0);
        assert_eq!(cheb_u(5, ep(1.0)), 6.0);
        let x: f64 = 0.3;
        let oracle = (5.0 * x.acos()).sin() / (1.0 - x * x).sqrt();
        assert!((cheb_u(4, ep(x)) - oracle).abs() < 1e-12);
    }

    #[test]
    fn exact_psi_values() {
        assert!((exact_psi(ep(1.0), 0.3) - 0.3f64.cos()).abs() < 1e-15);
        assert_eq!(exact_psi(ep(0.5), 0.0), 0.5);
        let oracle = (PI / 3.0).cos() * 0.3f64.cos() - (PI / 3.0).sin() * 0.3f64.sin();
        assert!((exact_psi(ep(0.5), 0.3) - oracle).abs() < 1e-15);
        assert!((oracle - 0.22174).abs() < 5e-6);
    }

    #[test]
    fn clenshaw_matches_direct_sum() {
        let s = coefficients(0.3, 30).unwrap();
        let direct: f64 = s
            .coefficients()
            .iter()
            .enumerate()
            .map(|(k, a)| a * cheb_t(k, ep(0.5)))
            .sum();
        assert!((s.eval(ep(0.5)) - direct).abs() < 1e-12);
        let bound = approx_error_bound(0.3, 30).unwrap();
        assert!((s.eval(ep(0.5)) - exact_psi(ep(0.5), 0.3)).abs() <= bound);
    }

    #[test]
    fn derivative_at_endpoint_matches_closed_form() {
        let m: f64 = 0.3;
        let s = coefficients(m, 30).unwrap();
        let closed: f64 = m.cos()
            + (1..=15)
                .map(|k| {
                    let k = k as f64;
                    4.0 * k * m.sin() / PI
                        * (1.0 / (2.0 * k - 1.0) - 1.0 / (2.0 * k + 1.0))
                        * 2.0
                        * k
                })
                .sum::<f64>();
        let d = s.derivative(ep(1.0));
        assert_relative_eq!(d, closed, max_relative = 1e-13);
        assert!((d - 6.78).abs() < 5e-3);
    }

    #[test]
    fn derivative_matches_eq_form_with_odd_second_kind_terms() {
        let m: f64 = 0.3;
        let s = coefficients(m, 30).unwrap();
        for &x in &[-1.0, -0.7, 0.0, 0.31, 0.9, 1.0] {
            let eq: f64 = m.cos()
                + (1..=15)
                    .map(|k| {
                        let kf = k as f64;
                        4.0 * kf * m.sin() / PI
                            * (1.0 / (2.0 * kf - 1.0) - 1.0 / (2.0 * kf + 1.0))
                            * cheb_u(2 * k - 1, ep(x))
                    })
                    .sum::<f64>();
            assert!((s.derivative(ep(x)) - eq).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_forms_agree_near_switch() {
        // Just inside the switch the trig form still applies; compare it to the
        // polynomial form evaluated directly.
        let s = coefficients(0.3, 30).unwrap();
        let second = differentiate(&differentiate(s.coefficients()));
        for &x in &[-0.999, -0.5, 0.0, 0.5, 0.9, 0.999] {
            let poly = clenshaw_t(&second, x);
            let trig = s.hessian(ep(x));
            assert_relative_eq!(trig, poly, max_relative = 1e-8);
        }
    }

    #[test]
    fn hessian_at_half_converges_to_exact() {
        let exact = exact_psi_hessian(ep(0.5), 0.3);
        assert!((exact - 0.45498).abs() < 5e-6);
        // At x = 0.5 (theta = pi/3) the tail's second derivative does not
        // vanish: truncated Hessians cycle with period three in the even
        // index and never settle. Their running average does converge.
        let low = coefficients(0.3, 30).unwrap().hessian(ep(0.5));
        assert!(low.is_finite() && low > 0.0);
        let averaged: f64 = [400, 402, 404]
            .iter()
            .map(|&d| coefficients(0.3, d).unwrap().hessian(ep(0.5)))
            .sum::<f64>()
            / 3.0;
        assert!((averaged - exact).abs() / exact < 0.01, "{averaged}");
    }

    #[test]
    fn hessian_finite_near_branch_cut() {
        let s = coefficients(0.3, 30).unwrap();
        for &x in &[0.999, 1.0 - 1e-7, 1.0, -1.0] {
            assert!(s.hessian(ep(x)).is_finite());
        }
        assert!(exact_psi_hessian(ep(0.999), 0.3) > 3000.0);
    }

    #[test]
    fn differentiate_low_order() {
        assert_eq!(differentiate(&[0.0, 1.0]), vec![1.0]);
        assert_eq!(differentiate(&[0.0, 0.0, 1.0]), vec![0.0, 4.0]);
        // T_3' = 12x^2 - 3 = 3 + 6 T_2
        assert_eq!(differentiate(&[0.0, 0.0, 0.0, 1.0]), vec![3.0, 0.0, 6.0]);
    }

    #[test]
    fn lipschitz_examples() {
        let id = coefficients(0.0, 5).unwrap();
        assert_eq!(id.lipschitz_constant(1001).unwrap(), 1.0);
        let quad = coefficients(0.3, 2).unwrap();
        let a = quad.coefficients();
        let l = quad.lipschitz_constant(100_001).unwrap();
        assert_relative_eq!(l, a[1] + 4.0 * a[2], max_relative = 1e-14);
        assert!((l - 1.45702).abs() < 1e-5);
    }

    #[test]
    fn error_bound_values() {
        assert_eq!(approx_error_bound(0.0, 9).unwrap(), 0.0);
        assert_relative_eq!(
            approx_error_bound(0.3, 30).unwrap(),
            2.0 * 0.3f64.sin() / (31.0 * PI)
        );
        assert!((approx_error_bound(0.3, 30).unwrap() - 0.00607).abs() < 5e-6);
        assert!((approx_error_bound(0.2, 4).unwrap() - 0.02529).abs() < 1e-5);
        // odd degrees share the bound of the even degree below them
        assert_eq!(
            approx_error_bound(0.3, 5).unwrap(),
            approx_error_bound(0.3, 4).unwrap()
        );
    }
}
