//! Uniform value of a feature set on the hypersphere and best-prior
//! selection.
//!
//! `V = log mean_{i != j} exp(-tau * |f_i - f_j|^2)` over ordered pairs.
//! Lower values mean features that spread more evenly; the participant with
//! the lowest value owns the best prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::priors::FeatureMatrix;
use crate::seed;

pub const DEFAULT_TAU: f64 = 2.0;

/// Sign applied to the exponent. `Negative` is the uniformity loss whose
/// minimum marks the best prior; `Positive` evaluates
/// `log mean exp(+tau * d^2)` literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExponentSign {
    #[default]
    Negative,
    Positive,
}

impl ExponentSign {
    fn factor(self) -> f64 {
        match self {
            ExponentSign::Negative => -1.0,
            ExponentSign::Positive => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformitySettings {
    pub tau: f64,
    pub normalize: bool,
    pub sign: ExponentSign,
    /// Ordered pairs evaluated before switching to a sampled estimate.
    pub max_pairs: usize,
}

impl Default for UniformitySettings {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, normalize: true, sign: ExponentSign::Negative, max_pairs: 400_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformValueReport {
    pub participant_id: u32,
    pub value: f64,
    pub tau: f64,
    pub shared_set_hash: String,
}

fn prepare(features: &FeatureMatrix, tau: f64, normalize: bool) -> Result<Matrix> {
    if features.rows() < 2 {
        return Err(Error::InsufficientData(features.rows()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Numeric(format!("tau must be positive and finite, got {tau}")));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("features contain non-finite entries".into()));
    }
    if !normalize {
        return Ok(features.clone());
    }
    let mut out = features.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

/// Streaming log-sum-exp with a running maximum.
#[derive(Default)]
struct LogSumExp {
    max: f64,
    sum: f64,
    count: u64,
}

impl LogSumExp {
    fn push(&mut self, e: f64) {
        if self.count == 0 {
            self.max = e;
            self.sum = 1.0;
        } else if e <= self.max {
            self.sum += (e - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - e).exp() + 1.0;
            self.max = e;
        }
        self.count += 1;
    }

    fn log_mean(&self) -> f64 {
        self.max + self.sum.ln() - (self.count as f64).ln()
    }
}

fn finish(acc: &LogSumExp) -> Result<f64> {
    let v = acc.log_mean();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("uniform value evaluated to {v}")))
    }
}

/// Exact uniform value over all ordered pairs `i != j`.
pub fn uniform_value(features: &FeatureMatrix, tau: f64, normalize: bool) -> Result<f64> {
    uniform_value_signed(features, tau, normalize, ExponentSign::Negative)
}

pub fn uniform_value_signed(
    features: &FeatureMatrix,
    tau: f64,
    normalize: bool,
    sign: ExponentSign,
) -> Result<f64> {
    let f = prepare(features, tau, normalize)?;
    let k = sign.factor() * tau;
    let mut acc = LogSumExp::default();
    let n = f.rows();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc.push(k * squared_distance(f.row(i), f.row(j)));
            }
        }
    }
    finish(&acc)
}

/// Same estimand over `max_pairs` ordered pairs drawn uniformly with
/// replacement; exact when `max_pairs` covers every ordered pair.
pub fn uniform_value_subsampled(
    features: &FeatureMatrix,
    tau: f64,
    normalize: bool,
    max_pairs: usize,
    seed: u64,
) -> Result<f64> {
    uniform_value_subsampled_signed(features, tau, normalize, ExponentSign::Negative, max_pairs, seed)
}

pub fn uniform_value_subsampled_signed(
    features: &FeatureMatrix,
    tau: f64,
    normalize: bool,
    sign: ExponentSign,
    max_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if max_pairs == 0 {
        return Err(Error::InsufficientData(0));
    }
    let n = features.rows();
    if n >= 2 && max_pairs >= n * (n - 1) {
        return uniform_value_signed(features, tau, normalize, sign);
    }
    let f = prepare(features, tau, normalize)?;
    let k = sign.factor() * tau;
    let mut rng = seed::rng(seed);
    let mut acc = LogSumExp::default();
    for _ in 0..max_pairs {
        let i = rng.random_range(0..n);
        // j uniform over the n-1 indices other than i
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        acc.push(k * squared_distance(f.row(i), f.row(j)));
    }
    finish(&acc)
}

/// Evaluates with `settings`, falling back to sampling for large sets.
pub fn evaluate(features: &FeatureMatrix, settings: &UniformitySettings, seed: u64) -> Result<f64> {
    uniform_value_subsampled_signed(
        features,
        settings.tau,
        settings.normalize,
        settings.sign,
        settings.max_pairs.max(1),
        seed,
    )
}

/// Argmin over report values; ties go to the smallest participant id.
pub fn select_best_prior(reports: &[UniformValueReport]) -> Result<u32> {
    let first = reports.first().ok_or_else(|| Error::Selection("no reports".into()))?;
    for r in reports {
        if r.shared_set_hash != first.shared_set_hash {
            return Err(Error::Selection(format!(
                "participant {} reported on shared set {} instead of {}",
                r.participant_id, r.shared_set_hash, first.shared_set_hash
            )));
        }
        if r.tau != first.tau {
            return Err(Error::Selection(format!(
                "participant {} used tau {} instead of {}",
                r.participant_id, r.tau, first.tau
            )));
        }
        if !r.value.is_finite() {
            return Err(Error::Selection(format!("participant {} reported {}", r.participant_id, r.value)));
        }
    }
    let best = reports
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then(a.participant_id.cmp(&b.participant_id)))
        .expect("non-empty");
    Ok(best.participant_id)
}

/// Participant ids ordered from best (lowest value) to worst, ties by id.
pub fn rank_reports(reports: &[UniformValueReport]) -> Vec<u32> {
    let mut sorted: Vec<&UniformValueReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.participant_id.cmp(&b.participant_id)));
    sorted.into_iter().map(|r| r.participant_id).collect()
}
