//! Verification scoring: cosine scores, EER and minDCF over trial lists.
//!
//! A trial is accepted when its score is at least the threshold. Sweeping the
//! threshold upward through the distinct score levels yields the operating
//! points `(FRR, FAR)`, starting at `(0, 1)` (accept everything) and ending at
//! `(1, 0)` (reject everything). Equal scores always move together.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_P_TARGET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    pub is_target: bool,
}

impl TrialScore {
    pub fn new(
        enroll_id: impl Into<String>,
        test_id: impl Into<String>,
        score: f64,
        is_target: bool,
    ) -> Self {
        TrialScore {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            score,
            is_target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl DcfParams {
    pub fn new(p_target: f64, c_miss: f64, c_fa: f64) -> Result<Self> {
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p_target must be in (0, 1), got {p_target}"
            )));
        }
        if !(c_miss > 0.0 && c_fa > 0.0 && c_miss.is_finite() && c_fa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "costs must be positive, got c_miss={c_miss}, c_fa={c_fa}"
            )));
        }
        Ok(DcfParams {
            p_target,
            c_miss,
            c_fa,
        })
    }
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: DEFAULT_P_TARGET,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vectors have dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine of a zero-norm vector".into(),
        ));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Lowest accepted score; `+inf` for the reject-everything point.
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
}

/// All operating points, ordered by increasing threshold.
pub fn operating_points(scores: &[TrialScore]) -> Result<Vec<OperatingPoint>> {
    let targets = scores.iter().filter(|t| t.is_target).count();
    let nontargets = scores.len() - targets;
    if targets == 0 || nontargets == 0 {
        return Err(Error::SingleClass);
    }
    if let Some(bad) = scores.iter().find(|t| !t.score.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite score for trial {} {}",
            bad.enroll_id, bad.test_id
        )));
    }

    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|t| (t.score, t.is_target)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (nt, nn) = (targets as f64, nontargets as f64);
    let mut points = Vec::with_capacity(sorted.len() + 1);
    let (mut misses, mut false_accepts) = (0usize, nontargets);
    let mut i = 0;
    while i < sorted.len() {
        let level = sorted[i].0;
        points.push(OperatingPoint {
            threshold: level,
            frr: misses as f64 / nt,
            far: false_accepts as f64 / nn,
        });
        while i < sorted.len() && sorted[i].0 == level {
            if sorted[i].1 {
                misses += 1;
            } else {
                false_accepts -= 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        frr: 1.0,
        far: 0.0,
    });
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

/// Equal error rate, linearly interpolated where `FAR - FRR` changes sign.
pub fn compute_eer(scores: &[TrialScore]) -> Result<EerResult> {
    let points = operating_points(scores)?;
    Ok(eer_from_points(&points))
}

pub(crate) fn eer_from_points(points: &[OperatingPoint]) -> EerResult {
    // The first point has FAR - FRR = 1 and the last has -1, so a crossing exists.
    let i = points
        .iter()
        .position(|p| p.far - p.frr <= 0.0)
        .expect("sweep ends at FRR = 1, FAR = 0");
    let (a, b) = (points[i - 1], points[i]);
    let (da, db) = (a.far - a.frr, b.far - b.frr);
    let alpha = da / (da - db);
    let eer = a.frr + alpha * (b.frr - a.frr);
    let upper = if b.threshold.is_finite() {
        b.threshold
    } else {
        a.threshold
    };
    EerResult {
        eer,
        threshold: a.threshold + alpha * (upper - a.threshold),
    }
}

/// Normalised minimum detection cost over all operating points.
pub fn compute_min_dcf(scores: &[TrialScore], params: &DcfParams) -> Result<f64> {
    let points = operating_points(scores)?;
    Ok(min_dcf_from_points(&points, params))
}

pub(crate) fn min_dcf_from_points(points: &[OperatingPoint], params: &DcfParams) -> f64 {
    let miss_weight = params.c_miss * params.p_target;
    let fa_weight = params.c_fa * (1.0 - params.p_target);
    let norm = miss_weight.min(fa_weight);
    points
        .iter()
        .map(|p| (miss_weight * p.frr + fa_weight * p.far) / norm)
        .fold(f64::INFINITY, f64::min)
}

/// Joins a trial list (`label enroll test`) with a score file
/// (`enroll test score`), preserving trial order.
pub fn parse_trials(trial_file: &Path, scores_file: &Path) -> Result<Vec<TrialScore>> {
    let trials = fs::read_to_string(trial_file).map_err(|e| Error::io(trial_file, e))?;
    let scores = fs::read_to_string(scores_file).map_err(|e| Error::io(scores_file, e))?;
    join_trials(&trials, trial_file, &scores, scores_file)
}

pub fn join_trials(
    trials: &str,
    trial_path: &Path,
    scores: &str,
    scores_path: &Path,
) -> Result<Vec<TrialScore>> {
    let parse_err = |path: &Path, line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut by_pair: HashMap<(&str, &str), (f64, usize)> = HashMap::new();
    for (n, line) in scores.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [enroll, test, score] => {
                let score: f64 = score
                    .parse()
                    .map_err(|_| parse_err(scores_path, n, format!("bad score '{score}'")))?;
                if !score.is_finite() {
                    return Err(parse_err(
                        scores_path,
                        n,
                        format!("non-finite score '{score}'"),
                    ));
                }
                if let Some((_, first)) = by_pair.insert((enroll, test), (score, n)) {
                    return Err(parse_err(
                        scores_path,
                        n,
                        format!("duplicate score for {enroll} {test} (first on line {first})"),
                    ));
                }
            }
            _ => {
                return Err(parse_err(
                    scores_path,
                    n,
                    format!(
                        "expected 'enroll_id test_id score', got {} fields",
                        fields.len()
                    ),
                ))
            }
        }
    }

    let mut out = Vec::new();
    for (n, line) in trials.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [label, enroll, test] => {
                let is_target = match *label {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(parse_err(
                            trial_path,
                            n,
                            format!("label must be 0 or 1, got '{other}'"),
                        ))
                    }
                };
                let (score, _) =
                    by_pair
                        .get(&(*enroll, *test))
                        .ok_or_else(|| Error::MissingScore {
                            enroll: enroll.to_string(),
                            test: test.to_string(),
                            line: n,
                        })?;
                out.push(TrialScore::new(*enroll, *test, *score, is_target));
            }
            _ => {
                return Err(parse_err(
                    trial_path,
                    n,
                    format!(
                        "expected 'label enroll_id test_id', got {} fields",
                        fields.len()
                    ),
                ))
            }
        }
    }
    Ok(out)
}
