//! Desk-scale training harness.
//!
//! A single linear layer with unit-norm rows (a cosine classifier) is fit to
//! synthetic clusters on the unit hypersphere. Inputs are unit vectors, so
//! the layer's outputs are exactly the cosine logits that the margin losses
//! consume. Training is plain SGD on the linear-layer gradient followed by
//! row renormalisation, with a warmup-cosine learning-rate schedule.
//! Every step is logged so gradient spikes and NaNs can be compared across
//! losses on identical data.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::{loss_forward, CosineBatch, LossSpec};

// Independent ChaCha streams per concern, so changing e.g. the batch size
// leaves the dataset and initial weights untouched.
const DATA_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

pub const TELEMETRY_HEADER: &str = "step,lr,mean_loss,grad_norm,max_target_cosine";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub momentum: f64,
    pub seed: u64,
    pub dim: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Standard deviation of the per-coordinate Gaussian noise added to a
    /// class prototype before renormalising.
    pub spread: f64,
}

impl TrainConfig {
    pub fn new(loss: LossSpec) -> Self {
        TrainConfig {
            loss,
            epochs: 30,
            batch_size: 64,
            peak_lr: 0.2,
            warmup_fraction: 0.1,
            momentum: 0.0,
            seed: 0,
            dim: 32,
            num_classes: 16,
            samples_per_class: 200,
            spread: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!(
                "warmup_fraction must be in (0, 1), got {}",
                self.warmup_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.num_classes < 2 {
            return bad(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            ));
        }
        if self.samples_per_class < 1 {
            return bad("samples_per_class must be at least 1".into());
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return bad(format!("spread must be non-negative, got {}", self.spread));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        (self.num_classes * self.samples_per_class).div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereDataset {
    /// Row-major `[samples x dim]`.
    pub points: Vec<f64>,
    pub labels: Vec<usize>,
    pub prototypes: Vec<f64>,
    pub num_classes: usize,
    pub dim: usize,
    pub seed: u64,
}

impl SphereDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

/// Random unit prototypes, then `samples_per_class` noisy unit points each.
pub fn make_sphere_clusters(config: &TrainConfig) -> Result<SphereDataset> {
    if config.dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "dim must be at least 2, got {}",
            config.dim
        )));
    }
    if config.num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "num_classes must be at least 2, got {}",
            config.num_classes
        )));
    }

    let dim = config.dim;
    let mut rng = rng_for(config.seed, DATA_STREAM);
    let prototypes: Vec<f64> = (0..config.num_classes)
        .flat_map(|_| random_unit(&mut rng, dim))
        .collect();

    let n = config.num_classes * config.samples_per_class;
    let mut points = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..config.num_classes {
        let proto = &prototypes[class * dim..(class + 1) * dim];
        for _ in 0..config.samples_per_class {
            let mut p: Vec<f64> = proto
                .iter()
                .map(|&c| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    c + config.spread * noise
                })
                .collect();
            normalize(&mut p);
            points.extend_from_slice(&p);
            labels.push(class);
        }
    }

    Ok(SphereDataset {
        points,
        labels,
        prototypes,
        num_classes: config.num_classes,
        dim,
        seed: config.seed,
    })
}

/// Linear warmup from 0 to `peak`, then half-cosine decay towards 0.
pub fn warmup_cosine_lr(
    step: usize,
    total_steps: usize,
    peak: f64,
    warmup_fraction: f64,
) -> Result<f64> {
    if step >= total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} out of range for {total_steps} total steps"
        )));
    }
    let warmup = warmup_steps(total_steps, warmup_fraction);
    if step < warmup {
        return Ok(peak * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(peak * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Warmup length in steps: `round(fraction * total)`, at least 1 and never
/// past the last step.
pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    let w = (warmup_fraction * total_steps as f64).round() as usize;
    w.clamp(1, total_steps.saturating_sub(1).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub mean_loss: f64,
    /// Frobenius norm of the weight gradient.
    pub grad_norm: f64,
    pub max_target_cosine: f64,
    /// Largest per-sample `|d loss_i / d cos_{i,y}|` in the batch.
    pub max_target_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTelemetry {
    pub records: Vec<StepRecord>,
    pub final_accuracy: f64,
    pub nan_seen: bool,
    pub grad_norm_max: f64,
    /// Mean target cosine over the whole training set after training.
    pub final_mean_target_cosine: f64,
}

impl TrainTelemetry {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(TELEMETRY_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.step, r.lr, r.mean_loss, r.grad_norm, r.max_target_cosine
            );
        }
        out
    }

    pub fn summary(&self, config: &TrainConfig) -> String {
        let max_target_grad = self
            .records
            .iter()
            .map(|r| r.max_target_grad)
            .fold(0.0, f64::max);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("loss", config.loss.label());
        kv("seed", config.seed.to_string());
        kv("epochs", config.epochs.to_string());
        kv("steps", self.records.len().to_string());
        kv("final_accuracy", self.final_accuracy.to_string());
        kv(
            "final_mean_target_cosine",
            self.final_mean_target_cosine.to_string(),
        );
        kv("nan_seen", self.nan_seen.to_string());
        kv("grad_norm_max", self.grad_norm_max.to_string());
        kv("max_target_grad", max_target_grad.to_string());
        out
    }

    /// Writes `telemetry.csv` and `summary.txt` into `dir`.
    pub fn write(&self, config: &TrainConfig, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("telemetry.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("summary.txt"), self.summary(config).as_bytes())
    }
}

struct CosineClassifier {
    /// Row-major `[classes x dim]`, unit rows.
    weights: Vec<f64>,
    dim: usize,
}

impl CosineClassifier {
    fn init(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, INIT_STREAM);
        let weights = (0..classes)
            .flat_map(|_| random_unit(&mut rng, dim))
            .collect();
        CosineClassifier { weights, dim }
    }

    // Round-off can push a dot product of unit vectors a hair past 1.
    fn cosines(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.dim)
            .map(|w| {
                w.iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .clamp(-1.0, 1.0)
            })
            .collect()
    }

    fn renormalize(&mut self) {
        for row in self.weights.chunks_mut(self.dim) {
            normalize(row);
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Accuracy and mean target cosine over the dataset.
    fn evaluate(&self, data: &SphereDataset) -> (f64, f64) {
        let mut correct = 0usize;
        let mut target_sum = 0.0;
        for i in 0..data.len() {
            let label = data.labels[i];
            let cos = self.cosines(data.point(i));
            let best = cos
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (j, &c)| if c > acc.1 { (j, c) } else { acc },
                )
                .0;
            if best == label {
                correct += 1;
            }
            target_sum += cos[label];
        }
        let n = data.len().max(1) as f64;
        (correct as f64 / n, target_sum / n)
    }
}

/// Runs SGD with the configured loss and records one [`StepRecord`] per step.
///
/// A non-finite loss, gradient or weight halts training after recording the
/// offending step and sets `nan_seen`.
pub fn train(config: &TrainConfig) -> Result<TrainTelemetry> {
    config.validate()?;
    let data = make_sphere_clusters(config)?;
    let mut model = CosineClassifier::init(config.num_classes, config.dim, config.seed);
    let mut velocity = vec![0.0; model.weights.len()];
    let mut shuffle_rng = rng_for(config.seed, SHUFFLE_STREAM);

    let classes = config.num_classes;
    let dim = config.dim;
    let total_steps = config.total_steps();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(total_steps);
    let mut nan_seen = false;
    let mut step = 0;

    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let lr = warmup_cosine_lr(step, total_steps, config.peak_lr, config.warmup_fraction)?;

            let mut cosines = Vec::with_capacity(chunk.len() * classes);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                cosines.extend(model.cosines(data.point(i)));
                labels.push(data.labels[i]);
            }
            let max_target_cosine = labels
                .iter()
                .enumerate()
                .map(|(r, &y)| cosines[r * classes + y])
                .fold(f64::NEG_INFINITY, f64::max);

            let batch = match CosineBatch::new(cosines, labels, classes) {
                Ok(b) => b,
                Err(Error::NonFinite { .. }) => {
                    records.push(StepRecord {
                        step,
                        lr,
                        mean_loss: f64::NAN,
                        grad_norm: f64::NAN,
                        max_target_cosine,
                        max_target_grad: f64::NAN,
                    });
                    nan_seen = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let out = loss_forward(&config.loss, &batch);

            // dL/dW = G^T X for logits W x.
            let mut grad = vec![0.0; classes * dim];
            for (r, &i) in chunk.iter().enumerate() {
                let x = data.point(i);
                for j in 0..classes {
                    let g = out.grad_cosines[r * classes + j];
                    if g == 0.0 {
                        continue;
                    }
                    for (gw, &xv) in grad[j * dim..(j + 1) * dim].iter_mut().zip(x) {
                        *gw += g * xv;
                    }
                }
            }
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let max_target_grad = batch
                .labels()
                .iter()
                .enumerate()
                .map(|(r, &y)| out.per_sample_grad(r, y, classes).abs())
                .fold(0.0, f64::max);

            records.push(StepRecord {
                step,
                lr,
                mean_loss: out.mean_loss,
                grad_norm,
                max_target_cosine,
                max_target_grad,
            });
            step += 1;

            if !out.mean_loss.is_finite() || !grad_norm.is_finite() {
                nan_seen = true;
                break 'epochs;
            }

            for ((w, v), g) in model.weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *w -= lr * *v;
            }
            model.renormalize();
            if !model.is_finite() {
                nan_seen = true;
                break 'epochs;
            }
        }
    }

    let (final_accuracy, final_mean_target_cosine) = model.evaluate(&data);
    let grad_norm_max = records
        .iter()
        .map(|r| r.grad_norm)
        .fold(
            0.0,
            |acc: f64, g| if g.is_nan() { f64::NAN } else { acc.max(g) },
        );

    Ok(TrainTelemetry {
        records,
        final_accuracy,
        nan_seen,
        grad_norm_max,
        final_mean_target_cosine,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstabilityFlags {
    pub grad_norm_exceeded: bool,
    pub nan_seen: bool,
    /// First step whose gradient norm exceeded the threshold or was non-finite.
    pub first_offending_step: Option<usize>,
}

pub fn detect_instability(telemetry: &TrainTelemetry, threshold: f64) -> Result<InstabilityFlags> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let first_offending_step = telemetry
        .records
        .iter()
        .find(|r| !r.grad_norm.is_finite() || !r.mean_loss.is_finite() || r.grad_norm > threshold)
        .map(|r| r.step);
    Ok(InstabilityFlags {
        grad_norm_exceeded: telemetry.records.iter().any(|r| r.grad_norm > threshold),
        nan_seen: telemetry.nan_seen,
        first_offending_step,
    })
}
