//! Seeded Gaussian-cluster benchmark standing in for an image corpus.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub classes: usize,
    /// Unlabeled training samples handed to the platform.
    pub train: usize,
    /// Labeled samples reserved for probing.
    pub eval: usize,
    pub dim: usize,
    /// Distance of each class centre from the origin, in units of the
    /// within-class standard deviation.
    pub margin: f64,
    /// Dimension of the random subspace holding class structure; `0` means
    /// the whole space.
    pub signal_dim: usize,
    /// Standard deviation of label-independent noise in the complement of
    /// the signal subspace.
    pub nuisance: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self { classes: 10, train: 2000, eval: 1000, dim: 32, margin: 3.0, signal_dim: 8, nuisance: 3.0, seed: 0 }
    }
}

/// Held-out labeled samples for representation probing.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub samples: Vec<Sample>,
    pub labels: Vec<u32>,
    pub classes: usize,
}

impl EvalSet {
    pub fn new(samples: Vec<Sample>, labels: Vec<u32>, classes: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::InvalidEval(format!("{} samples, {} labels", samples.len(), labels.len())));
        }
        if classes < 2 {
            return Err(Error::InvalidEval(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidEval(format!("label {l} out of range for {classes} classes")));
        }
        Ok(Self { samples, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Class centres at `margin` times seeded random unit directions, unit
/// isotropic noise around them. Labels are stratified (`i mod C`, then
/// shuffled). Training ids are `0..train`, eval ids follow.
pub fn make_synthetic_benchmark(spec: &BenchmarkSpec) -> Result<(Dataset, EvalSet)> {
    let c = spec.classes;
    if c < 2 {
        return Err(Error::InvalidDimension(format!("need at least 2 classes, got {c}")));
    }
    if spec.train < 10 * c {
        return Err(Error::InvalidDimension(format!(
            "need at least {} training samples for {c} classes, got {}",
            10 * c,
            spec.train
        )));
    }
    if spec.dim == 0 || spec.eval < 2 * c {
        return Err(Error::InvalidDimension("dim must be positive and eval hold two samples per class".into()));
    }
    let s = if spec.signal_dim == 0 { spec.dim } else { spec.signal_dim };
    if s > spec.dim || !(spec.nuisance >= 0.0 && spec.nuisance.is_finite()) {
        return Err(Error::InvalidDimension(format!(
            "signal_dim {s} must not exceed dim {} and nuisance must be finite and >= 0",
            spec.dim
        )));
    }
    let mut rng = seed::rng(spec.seed);
    let basis = orthonormal_basis(spec.dim, s, &mut rng);
    let centres: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let u: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
            let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            embed(&basis, &u.iter().map(|a| spec.margin * a / norm).collect::<Vec<_>>())
        })
        .collect();

    let draw = |count: usize, id0: u64, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut labels: Vec<u32> = (0..count).map(|i| (i % c) as u32).collect();
        labels.shuffle(rng);
        let samples: Vec<Sample> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let z: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
                let mut x: Vec<f64> = centres[l as usize].iter().zip(embed(&basis, &z)).map(|(a, b)| a + b).collect();
                if s < spec.dim {
                    let g: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
                    for (xi, ni) in x.iter_mut().zip(complement(&basis, &g)) {
                        *xi += spec.nuisance * ni;
                    }
                }
                Sample::new(id0 + i as u64, x.into_iter().map(|v| v as f32).collect())
            })
            .collect();
        (samples, labels)
    };
    let (train_s, train_l) = draw(spec.train, 0, &mut rng);
    let (eval_s, eval_l) = draw(spec.eval, spec.train as u64, &mut rng);
    Ok((Dataset::new(train_s, Some(train_l))?, EvalSet::new(eval_s, eval_l, c)?))
}

/// `k` orthonormal vectors in `R^m` by Gram-Schmidt on Gaussian draws.
fn orthonormal_basis(m: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p = dot(b, &v);
            v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= p * bi);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    basis
}

fn embed(basis: &[Vec<f64>], coords: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; basis[0].len()];
    for (b, a) in basis.iter().zip(coords) {
        out.iter_mut().zip(b).for_each(|(o, bi)| *o += a * bi);
    }
    out
}

/// Component of `v` orthogonal to the span of `basis`.
fn complement(basis: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for b in basis {
        let p = dot(b, v);
        out.iter_mut().zip(b).for_each(|(o, bi)| *o -= p * bi);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_stratified() {
        let spec = BenchmarkSpec { classes: 3, train: 100, eval: 30, dim: 4, margin: 2.0, signal_dim: 0, nuisance: 0.0, seed: 5 };
        let (a, ea) = make_synthetic_benchmark(&spec).unwrap();
        let (b, eb) = make_synthetic_benchmark(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
        let labels = a.labels().unwrap();
        for class in 0..3 {
            let count = labels.iter().filter(|&&l| l == class).count() as f64;
            assert!((count - 100.0 / 3.0).abs() <= 1.0);
        }
        let max_train = a.samples().iter().map(|s| s.id).max().unwrap();
        assert!(ea.samples.iter().all(|s| s.id > max_train));
    }

    #[test]
    fn rejects_degenerate_sizes() {
        let base = BenchmarkSpec { classes: 3, train: 100, eval: 30, dim: 4, margin: 2.0, signal_dim: 0, nuisance: 0.0, seed: 5 };
        assert!(make_synthetic_benchmark(&BenchmarkSpec { classes: 1, ..base.clone() }).is_err());
        assert!(make_synthetic_benchmark(&BenchmarkSpec { train: 29, ..base.clone() }).is_err());
        assert!(make_synthetic_benchmark(&BenchmarkSpec { dim: 0, ..base }).is_err());
    }
}
