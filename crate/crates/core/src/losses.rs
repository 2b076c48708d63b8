//! Margin-based softmax cross-entropy losses over cosine logits.
//!
//! Every loss here has the same shape: the target-class cosine `x_y` is
//! passed through a margin transform `psi`, all logits are multiplied by the
//! scale `s`, and the result goes through softmax cross-entropy. Non-target
//! cosines are never transformed. Gradients are returned with respect to the
//! raw cosines.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cheby::{check_margin, exact_psi, exact_psi_derivative, ChebyshevSeries, EvalPoint};
use crate::error::{Error, Result};
use crate::numcheck::relative_error;

pub const DEFAULT_SCALE: f64 = 32.0;
pub const DEFAULT_MARGIN: f64 = 0.3;
pub const DEFAULT_DEGREE: usize = 30;
pub const DEFAULT_A_SOFTMAX_MARGIN: u32 = 2;
pub const DEFAULT_AM_SOFTMAX_MARGIN: f64 = 0.2;

/// Cosines fed to `arccos` are clamped to `[-1 + eps, 1 - eps]`.
pub const ARCCOS_CLAMP_EPS: f64 = 1e-7;

/// Per-sample gradient magnitude above which the gradient check reports an
/// entry as exploding.
pub const LARGE_GRADIENT: f64 = 100.0;

/// Denominator floor for the relative error used by [`loss_grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    NSoftmax,
    ASoftmax,
    AmSoftmax,
    AamSoftmax,
    ChebyAam,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::NSoftmax,
        LossKind::ASoftmax,
        LossKind::AmSoftmax,
        LossKind::AamSoftmax,
        LossKind::ChebyAam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::NSoftmax => "nsoftmax",
            LossKind::ASoftmax => "asoftmax",
            LossKind::AmSoftmax => "amsoftmax",
            LossKind::AamSoftmax => "aamsoftmax",
            LossKind::ChebyAam => "chebyaam",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        match normalized.as_str() {
            "nsoftmax" | "normface" => Ok(LossKind::NSoftmax),
            "asoftmax" | "sphereface" => Ok(LossKind::ASoftmax),
            "amsoftmax" | "cosface" => Ok(LossKind::AmSoftmax),
            "aamsoftmax" | "arcface" | "aam" => Ok(LossKind::AamSoftmax),
            "chebyaam" | "cheby" => Ok(LossKind::ChebyAam),
            _ => Err(Error::InvalidArgument(format!("unknown loss kind '{s}'"))),
        }
    }
}

/// A fully parameterised margin loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    kind: LossKind,
    margin: f64,
    scale: f64,
    series: Option<ChebyshevSeries>,
}

impl LossSpec {
    /// `margin` is radians for A-, AAM- and ChebyAAM-Softmax (an integer
    /// multiplier for A-Softmax), a cosine offset for AM-Softmax, and ignored
    /// for N-Softmax. `degree` only matters for ChebyAAM.
    pub fn new(kind: LossKind, margin: f64, scale: f64, degree: usize) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidMargin(margin));
        }

        let mut series = None;
        let margin = match kind {
            LossKind::NSoftmax => 0.0,
            LossKind::ASoftmax => {
                if margin < 1.0 || margin.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "A-Softmax margin must be a positive integer, got {margin}"
                    )));
                }
                margin
            }
            LossKind::AmSoftmax => margin,
            LossKind::AamSoftmax => {
                check_margin(margin)?;
                margin
            }
            LossKind::ChebyAam => {
                series = Some(ChebyshevSeries::new(margin, degree)?);
                margin
            }
        };

        Ok(LossSpec {
            kind,
            margin,
            scale,
            series,
        })
    }

    pub fn n_softmax(scale: f64) -> Result<Self> {
        Self::new(LossKind::NSoftmax, 0.0, scale, 0)
    }

    pub fn a_softmax(multiplier: u32, scale: f64) -> Result<Self> {
        Self::new(LossKind::ASoftmax, multiplier as f64, scale, 0)
    }

    pub fn am_softmax(margin: f64, scale: f64) -> Result<Self> {
        Self::new(LossKind::AmSoftmax, margin, scale, 0)
    }

    pub fn aam_softmax(margin: f64, scale: f64) -> Result<Self> {
        Self::new(LossKind::AamSoftmax, margin, scale, 0)
    }

    pub fn cheby_aam(margin: f64, degree: usize, scale: f64) -> Result<Self> {
        Self::new(LossKind::ChebyAam, margin, scale, degree)
    }

    /// The spec each kind gets when only a kind and a scale are chosen:
    /// margin 0.3 for AAM/ChebyAAM, 0.2 for AM, multiplier 2 for A.
    pub fn default_for(kind: LossKind, scale: f64) -> Result<Self> {
        match kind {
            LossKind::NSoftmax => Self::n_softmax(scale),
            LossKind::ASoftmax => Self::a_softmax(DEFAULT_A_SOFTMAX_MARGIN, scale),
            LossKind::AmSoftmax => Self::am_softmax(DEFAULT_AM_SOFTMAX_MARGIN, scale),
            LossKind::AamSoftmax => Self::aam_softmax(DEFAULT_MARGIN, scale),
            LossKind::ChebyAam => Self::cheby_aam(DEFAULT_MARGIN, DEFAULT_DEGREE, scale),
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn degree(&self) -> Option<usize> {
        self.series.as_ref().map(ChebyshevSeries::degree)
    }

    pub fn series(&self) -> Option<&ChebyshevSeries> {
        self.series.as_ref()
    }

    /// Comma-free label such as `chebyaam:m=0.3:d=30:s=32`.
    pub fn label(&self) -> String {
        match self.kind {
            LossKind::NSoftmax => format!("nsoftmax:s={}", self.scale),
            LossKind::ChebyAam => format!(
                "chebyaam:m={}:d={}:s={}",
                self.margin,
                self.degree().unwrap_or_default(),
                self.scale
            ),
            kind => format!("{kind}:m={}:s={}", self.margin, self.scale),
        }
    }

    /// `psi(x)` for the target logit.
    pub fn transform_target_logit(&self, x: f64) -> Result<f64> {
        Ok(self.target_transform(EvalPoint::new(x)?).value)
    }

    /// `psi(x)`, `psi'(x)`, and whether `x` was clamped before `arccos`.
    pub(crate) fn target_transform(&self, x: EvalPoint) -> Transformed {
        let raw = x.value();
        match self.kind {
            LossKind::NSoftmax => Transformed::plain(raw, 1.0),
            LossKind::AmSoftmax => Transformed::plain(raw - self.margin, 1.0),
            LossKind::ChebyAam => {
                let series = self
                    .series
                    .as_ref()
                    .expect("ChebyAAM spec carries a series");
                Transformed::plain(series.eval(x), series.derivative(x))
            }
            LossKind::AamSoftmax => {
                let (xc, clamped) = clamp_for_arccos(raw);
                let xc = EvalPoint::new(xc).expect("clamped cosine stays in range");
                Transformed {
                    value: exact_psi(xc, self.margin),
                    derivative: exact_psi_derivative(xc, self.margin),
                    clamped,
                }
            }
            LossKind::ASoftmax => {
                let (xc, clamped) = clamp_for_arccos(raw);
                let (value, derivative) = a_softmax_transform(xc, self.margin);
                Transformed {
                    value,
                    derivative,
                    clamped,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Transformed {
    pub value: f64,
    pub derivative: f64,
    pub clamped: bool,
}

impl Transformed {
    fn plain(value: f64, derivative: f64) -> Self {
        Transformed {
            value,
            derivative,
            clamped: false,
        }
    }
}

fn clamp_for_arccos(x: f64) -> (f64, bool) {
    let limit = 1.0 - ARCCOS_CLAMP_EPS;
    let clamped = x.clamp(-limit, limit);
    (clamped, clamped != x)
}

// psi = (-1)^k cos(m theta) - 2k with m theta in [k pi, (k+1) pi].
fn a_softmax_transform(x: f64, multiplier: f64) -> (f64, f64) {
    let theta = x.acos();
    let angle = multiplier * theta;
    let k = (angle / PI).floor().min(multiplier - 1.0).max(0.0);
    let sign = if (k as u64).is_multiple_of(2) {
        1.0
    } else {
        -1.0
    };
    let value = sign * angle.cos() - 2.0 * k;
    let derivative = sign * multiplier * angle.sin() / (1.0 - x * x).sqrt();
    (value, derivative)
}

/// Cosine logits for a batch, row-major `[rows x classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineBatch {
    cosines: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl CosineBatch {
    pub fn new(cosines: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if classes < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if cosines.len() != labels.len() * classes {
            return Err(Error::Shape(format!(
                "{} cosines for {} rows of {} classes",
                cosines.len(),
                labels.len(),
                classes
            )));
        }
        for (i, &v) in cosines.iter().enumerate() {
            let (row, col) = (i / classes, i % classes);
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::CosineOutOfRange { row, col, value: v });
            }
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::LabelOutOfRange {
                    row,
                    label,
                    classes,
                });
            }
        }
        Ok(CosineBatch {
            cosines,
            labels,
            classes,
        })
    }

    /// Seeded batch with cosines uniform in `[-bound, bound]` and uniform labels.
    pub fn random(seed: u64, rows: usize, classes: usize, bound: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cosines = (0..rows * classes)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        Self::new(cosines, labels, classes)
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cosines(&self) -> &[f64] {
        &self.cosines
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.cosines[i * self.classes..(i + 1) * self.classes]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub per_sample_loss: Vec<f64>,
    pub mean_loss: f64,
    /// `d mean_loss / d cosine`, row-major like the batch.
    pub grad_cosines: Vec<f64>,
    /// Rows whose target cosine was clamped before `arccos`.
    pub clamped: Vec<bool>,
}

impl LossOutput {
    /// Gradient of sample `row`'s own loss (not divided by the batch size).
    pub fn per_sample_grad(&self, row: usize, col: usize, classes: usize) -> f64 {
        self.grad_cosines[row * classes + col] * self.per_sample_loss.len() as f64
    }
}

/// Softmax cross-entropy on `s * [psi(x_y), x_j...]`, with analytic gradients.
pub fn loss_forward(spec: &LossSpec, batch: &CosineBatch) -> LossOutput {
    let rows = batch.rows();
    let classes = batch.classes();
    let s = spec.scale();
    let inv_rows = 1.0 / rows as f64;

    let mut per_sample_loss = Vec::with_capacity(rows);
    let mut grad_cosines = vec![0.0; rows * classes];
    let mut clamped = Vec::with_capacity(rows);
    let mut logits = vec![0.0; classes];

    for i in 0..rows {
        let label = batch.labels()[i];
        let row = batch.row(i);
        let target = spec.target_transform(EvalPoint::new(row[label]).expect("validated batch"));

        for (j, (z, &x)) in logits.iter_mut().zip(row).enumerate() {
            *z = s * if j == label { target.value } else { x };
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum_exp.ln();
        // log_sum >= 0 and max >= z_y, so the loss cannot go negative.
        per_sample_loss.push(log_sum + (max - logits[label]));

        let grad_row = &mut grad_cosines[i * classes..(i + 1) * classes];
        let mut rest = 0.0;
        for (j, (g, &z)) in grad_row.iter_mut().zip(&logits).enumerate() {
            if j != label {
                let p = (z - max - log_sum).exp();
                rest += p;
                *g = s * p * inv_rows;
            }
        }
        // 1 - p_y as the sum of the other probabilities avoids cancellation.
        grad_row[label] = -s * rest * target.derivative * inv_rows;
        clamped.push(target.clamped);
    }

    let mean_loss = pairwise_sum(&per_sample_loss) * inv_rows;
    LossOutput {
        per_sample_loss,
        mean_loss,
        grad_cosines,
        clamped,
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(row, col)` of the worst entry.
    pub worst_entry: (usize, usize),
    /// Target entries whose per-sample gradient magnitude exceeds
    /// [`LARGE_GRADIENT`], as `(row, col, analytic per-sample gradient)`.
    pub large_gradients: Vec<(usize, usize, f64)>,
    /// Rows whose target cosine hit the `arccos` clamp.
    pub clamped_rows: Vec<usize>,
}

/// Compares `grad_cosines` against central differences of `mean_loss`.
///
/// Relative error is `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn loss_grad_check(spec: &LossSpec, batch: &CosineBatch, step: f64) -> Result<GradCheckReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let classes = batch.classes();
    let analytic = loss_forward(spec, batch);

    let mut max_relative_error = 0.0;
    let mut worst_entry = (0, 0);
    let mut perturbed = batch.clone();
    for idx in 0..batch.cosines().len() {
        let x = batch.cosines()[idx];
        perturbed.cosines[idx] = x + step;
        let hi = loss_forward(spec, &checked(&perturbed)?).mean_loss;
        perturbed.cosines[idx] = x - step;
        let lo = loss_forward(spec, &checked(&perturbed)?).mean_loss;
        perturbed.cosines[idx] = x;

        let numeric = (hi - lo) / (2.0 * step);
        let err = relative_error(analytic.grad_cosines[idx], numeric, GRAD_CHECK_FLOOR);
        if err > max_relative_error || err.is_nan() {
            max_relative_error = err;
            worst_entry = (idx / classes, idx % classes);
        }
    }

    let mut large_gradients = Vec::new();
    for (row, &label) in batch.labels().iter().enumerate() {
        let g = analytic.per_sample_grad(row, label, classes);
        if g.abs() > LARGE_GRADIENT {
            large_gradients.push((row, label, g));
        }
    }
    let clamped_rows = analytic
        .clamped
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| c.then_some(i))
        .collect();

    Ok(GradCheckReport {
        max_relative_error,
        worst_entry,
        large_gradients,
        clamped_rows,
    })
}

fn checked(batch: &CosineBatch) -> Result<CosineBatch> {
    for &v in &batch.cosines {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference stencil leaves [-1, 1] at cosine {v}"
            )));
        }
    }
    Ok(batch.clone())
}

/// `d loss / d s_p` for the two-class problem with target cosine `s_p` and
/// non-target cosine `s_n`: `-s (1 - p) psi'(s_p)`.
pub fn binary_target_derivative(spec: &LossSpec, s_p: f64, s_n: f64) -> Result<f64> {
    let target = spec.target_transform(EvalPoint::new(s_p)?);
    EvalPoint::new(s_n)?;
    let s = spec.scale();
    // 1 - p = sigmoid(-(z_p - z_n))
    let one_minus_p = logistic(-s * (target.value - s_n));
    Ok(-s * one_minus_p * target.derivative)
}

/// Square grid of `d loss / d s_p` over `(s_p, s_n)` in `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSurface {
    pub axis: Vec<f64>,
    /// `values[i * n + j]` is the derivative at `s_p = axis[i]`, `s_n = axis[j]`.
    pub values: Vec<f64>,
}

impl DerivativeSurface {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis.len() + j]
    }
}

pub fn binary_derivative_surface(spec: &LossSpec, resolution: usize) -> Result<DerivativeSurface> {
    let axis = crate::grid::uniform_grid(-1.0, 1.0, resolution)?;
    let mut values = Vec::with_capacity(resolution * resolution);
    for &sp in &axis {
        for &sn in &axis {
            values.push(binary_target_derivative(spec, sp, sn)?);
        }
    }
    Ok(DerivativeSurface { axis, values })
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Recursive halving; fixed association order for a given length.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let (left, right) = values.split_at(values.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn aam() -> LossSpec {
        LossSpec::aam_softmax(0.3, DEFAULT_SCALE).unwrap()
    }

    fn cheby() -> LossSpec {
        LossSpec::cheby_aam(0.3, 30, DEFAULT_SCALE).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::n_softmax(0.0).is_err());
        assert!(LossSpec::n_softmax(-1.0).is_err());
        assert!(LossSpec::am_softmax(-0.1, 32.0).is_err());
        assert!(LossSpec::new(LossKind::ASoftmax, 1.5, 32.0, 0).is_err());
        assert!(LossSpec::new(LossKind::ASoftmax, 0.0, 32.0, 0).is_err());
        assert!(LossSpec::cheby_aam(0.3, 0, 32.0).is_err());
        assert!(LossSpec::aam_softmax(2.0, 32.0).is_err());
        assert_eq!(
            LossSpec::cheby_aam(0.3, 30, 32.0).unwrap().degree(),
            Some(30)
        );
    }

    #[test]
    fn kind_parsing() {
        for kind in LossKind::ALL {
            assert_eq!(kind.name().parse::<LossKind>().unwrap(), kind);
        }
        assert_eq!(
            "AAM-Softmax".parse::<LossKind>().unwrap(),
            LossKind::AamSoftmax
        );
        assert!("softmax2".parse::<LossKind>().is_err());
    }

    #[test]
    fn transform_examples() {
        let v = aam().transform_target_logit(0.5).unwrap();
        assert!((v - 0.22174).abs() < 5e-6);
        let am = LossSpec::am_softmax(0.2, 32.0).unwrap();
        assert!((am.transform_target_logit(0.5).unwrap() - 0.3).abs() < 1e-15);
        let c = cheby().transform_target_logit(0.5).unwrap();
        assert!((c - v).abs() <= 0.00607);
        assert!(aam().transform_target_logit(1.2).is_err());
    }

    #[test]
    fn a_softmax_piecewise() {
        let spec = LossSpec::a_softmax(2, 32.0).unwrap();
        // m = 2: psi = 2x^2 - 1 for x >= 0 and -2x^2 - 1 for x < 0.
        for &x in &[0.9, 0.5, 0.1, -0.1, -0.5, -0.9] {
            let expected = if x >= 0.0 {
                2.0 * x * x - 1.0
            } else {
                -2.0 * x * x - 1.0
            };
            let got = spec.transform_target_logit(x).unwrap();
            assert!((got - expected).abs() < 1e-12, "x={x}: {got} vs {expected}");
        }
        // monotone decreasing in theta, so increasing in x
        let spec4 = LossSpec::a_softmax(4, 32.0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=200 {
            let x = -0.99 + 1.98 * i as f64 / 200.0;
            let v = spec4.transform_target_logit(x).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn margins_penalise_target() {
        let am = LossSpec::am_softmax(0.2, 32.0).unwrap();
        for i in 1..2000 {
            let x = -1.0 + i as f64 / 1000.0;
            assert!(am.transform_target_logit(x).unwrap() < x);
        }
        // cos(theta + m) < cos(theta) needs theta + m/2 < pi, i.e.
        // x > -cos(m/2); past that point the additive angle wraps around.
        let m: f64 = 0.3;
        let edge = -(m / 2.0).cos();
        for i in 1..2000 {
            let x = -1.0 + i as f64 / 1000.0;
            let v = aam().transform_target_logit(x).unwrap();
            if x > edge {
                assert!(v < x, "x={x}");
            } else {
                assert!(v >= x, "x={x}");
            }
        }
    }

    #[test]
    fn equal_logits_give_ln_two() {
        for &c in &[-0.7, 0.0, 0.42] {
            let batch = CosineBatch::new(vec![c, c], vec![0], 2).unwrap();
            let out = loss_forward(&LossSpec::n_softmax(1.0).unwrap(), &batch);
            assert!((out.per_sample_loss[0] - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        for &s in &[1.0, 32.0, 64.0] {
            for classes in [2, 5, 16] {
                let batch =
                    CosineBatch::new(vec![0.3; classes * 3], vec![0, 1, 1], classes).unwrap();
                let out = loss_forward(&LossSpec::n_softmax(s).unwrap(), &batch);
                for l in out.per_sample_loss {
                    assert_relative_eq!(l, (classes as f64).ln(), max_relative = 1e-14);
                }
            }
        }
    }

    #[test]
    fn scaled_two_class_value() {
        let batch = CosineBatch::new(vec![0.9, 0.1], vec![0], 2).unwrap();
        let out = loss_forward(&LossSpec::n_softmax(2.0).unwrap(), &batch);
        let oracle = -((1.8f64).exp() / ((1.8f64).exp() + (0.2f64).exp())).ln();
        assert!((out.mean_loss - oracle).abs() < 1e-14);
        assert!((oracle - 0.18390).abs() < 5e-6);
    }

    #[test]
    fn n_softmax_rows_sum_to_zero() {
        let batch = CosineBatch::random(3, 6, 10, 0.95).unwrap();
        let out = loss_forward(&LossSpec::n_softmax(32.0).unwrap(), &batch);
        for row in out.grad_cosines.chunks(10) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn zero_margin_cheby_matches_n_softmax() {
        let batch = CosineBatch::random(11, 8, 16, 1.0).unwrap();
        let a = loss_forward(&LossSpec::cheby_aam(0.0, 17, 32.0).unwrap(), &batch);
        let b = loss_forward(&LossSpec::n_softmax(32.0).unwrap(), &batch);
        for (x, y) in a.per_sample_loss.iter().zip(&b.per_sample_loss) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in a.grad_cosines.iter().zip(&b.grad_cosines) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_validation() {
        assert!(matches!(
            CosineBatch::new(vec![], vec![], 2),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            CosineBatch::new(vec![0.1, f64::NAN], vec![0], 2),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
        assert!(matches!(
            CosineBatch::new(vec![0.1, 1.5], vec![0], 2),
            Err(Error::CosineOutOfRange { .. })
        ));
        assert!(matches!(
            CosineBatch::new(vec![0.1, 0.2], vec![2], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(CosineBatch::new(vec![0.1, 0.2, 0.3], vec![0], 2).is_err());
    }

    #[test]
    fn grad_check_all_kinds() {
        let batch = CosineBatch::random(5, 8, 16, 0.99).unwrap();
        for kind in LossKind::ALL {
            let spec = LossSpec::default_for(kind, DEFAULT_SCALE).unwrap();
            let report = loss_grad_check(&spec, &batch, 1e-5).unwrap();
            let tol = if kind == LossKind::NSoftmax {
                1e-6
            } else {
                1e-5
            };
            assert!(report.max_relative_error <= tol, "{kind}: {report:?}");
        }
        assert!(loss_grad_check(&cheby(), &batch, 0.0).is_err());
    }

    #[test]
    fn grad_check_flags_exploding_aam_target() {
        // A competing class keeps the target probability low, so the
        // per-sample gradient carries the full psi'(0.99999) factor.
        let batch = CosineBatch::new(vec![0.99999, 0.99, 0.1, -0.3], vec![0], 4).unwrap();
        let report = loss_grad_check(&aam(), &batch, 1e-7).unwrap();
        assert_eq!(report.large_gradients.len(), 1);
        assert_eq!(report.large_gradients[0].0, 0);
        let x: f64 = 0.99999;
        let exact = (x.acos() + 0.3).sin() / (1.0 - x * x).sqrt();
        assert!(exact > 60.0);
        assert!(report.max_relative_error < 1e-4, "{report:?}");

        // ChebyAAM stays under its ceiling s (1 + L) at the same point.
        let spec = cheby();
        let lip = spec.series().unwrap().lipschitz_constant(100_001).unwrap();
        let out = loss_forward(&spec, &batch);
        let g = out.per_sample_grad(0, 0, 4).abs();
        assert!(g <= spec.scale() * (1.0 + lip));
        assert!(report.large_gradients[0].2.abs() > 5.0 * g);
    }

    #[test]
    fn clamping_is_flagged_at_the_boundary() {
        let batch = CosineBatch::new(vec![1.0, 0.2], vec![0], 2).unwrap();
        let out = loss_forward(&aam(), &batch);
        assert_eq!(out.clamped, vec![true]);
        assert!(out.grad_cosines.iter().all(|g| g.is_finite()));
        let out = loss_forward(&cheby(), &batch);
        assert_eq!(out.clamped, vec![false]);
    }

    #[test]
    fn binary_derivative_matches_forward_gradient() {
        for spec in [
            aam(),
            cheby(),
            LossSpec::default_for(LossKind::ASoftmax, 32.0).unwrap(),
        ] {
            for &(sp, sn) in &[(0.8, 0.8), (0.8, 0.2), (-0.4, 0.5), (0.1, -0.9)] {
                let batch = CosineBatch::new(vec![sp, sn], vec![0], 2).unwrap();
                let out = loss_forward(&spec, &batch);
                let d = binary_target_derivative(&spec, sp, sn).unwrap();
                assert_relative_eq!(
                    d,
                    out.grad_cosines[0],
                    max_relative = 1e-10,
                    epsilon = 1e-300
                );
            }
        }
    }

    #[test]
    fn binary_surface_shape_and_symmetry() {
        let s = binary_derivative_surface(&LossSpec::n_softmax(1.0).unwrap(), 5).unwrap();
        assert_eq!(s.values.len(), 25);
        for i in 0..5 {
            assert!((s.at(i, i) + 0.5).abs() < 1e-15);
        }
        assert!(binary_derivative_surface(&aam(), 1).is_err());
    }

    #[test]
    fn aam_surface_finite_with_clamping() {
        let s = binary_derivative_surface(&aam(), 201).unwrap();
        assert!(s.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cheby_surface_bounded() {
        let spec = cheby();
        let lip = spec.series().unwrap().lipschitz_constant(100_001).unwrap();
        let s = binary_derivative_surface(&spec, 201).unwrap();
        let sup = s.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= spec.scale() * (1.0 + lip));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 4950.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
