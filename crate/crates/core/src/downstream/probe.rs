//! Linear probing of frozen representations.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::benchmark::EvalSet;
use super::model::DownstreamModel;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Standardise each representation coordinate on the probe's training
    /// half before fitting.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 0.5, l2: 1e-3, standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// Training loss curve of the probed model.
    pub loss_curve: Vec<f64>,
    pub test_count: usize,
}

/// Seeded stratified halving: each class is shuffled and split in two.
fn split(labels: &[u32], classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == c).collect();
        idx.shuffle(&mut rng);
        let half = idx.len() / 2;
        train.extend_from_slice(&idx[..half]);
        test.extend_from_slice(&idx[half..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Multinomial logistic regression on `reps`, fitted by full-batch gradient
/// descent on a seeded 50/50 split and scored on the held-out half.
pub fn probe_representations(
    reps: &Matrix,
    labels: &[u32],
    classes: usize,
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let present: std::collections::BTreeSet<u32> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::InvalidEval("probe needs at least two distinct classes".into()));
    }
    if reps.rows() != labels.len() {
        return Err(Error::InvalidEval(format!("{} representations, {} labels", reps.rows(), labels.len())));
    }
    let (train, test) = split(labels, classes, seed);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidEval("too few samples to split".into()));
    }
    let d = reps.cols();
    let (mut mean, mut scale) = (vec![0.0; d], vec![1.0; d]);
    if cfg.standardize {
        for &i in &train {
            mean.iter_mut().zip(reps.row(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= train.len() as f64);
        let mut var = vec![0.0; d];
        for &i in &train {
            var.iter_mut().zip(reps.row(i)).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
        }
        for (s, v) in scale.iter_mut().zip(&var) {
            let sd = (v / train.len() as f64).sqrt();
            // constant coordinates carry nothing
            *s = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
        }
    }
    let feat = |i: usize| -> Vec<f64> {
        reps.row(i).iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect()
    };
    let xtr: Vec<Vec<f64>> = train.iter().map(|&i| feat(i)).collect();
    let ytr: Vec<usize> = train.iter().map(|&i| labels[i] as usize).collect();

    let mut w = Matrix::zeros(classes, d);
    let mut b = vec![0.0; classes];
    let inv = 1.0 / xtr.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw = Matrix::zeros(classes, d);
        let mut gb = vec![0.0; classes];
        for (x, &y) in xtr.iter().zip(&ytr) {
            let p = softmax(&logits(&w, &b, x));
            for c in 0..classes {
                let e = (p[c] - f64::from(u8::from(c == y))) * inv;
                gb[c] += e;
                gw.row_mut(c).iter_mut().zip(x).for_each(|(g, xi)| *g += e * xi);
            }
        }
        for c in 0..classes {
            let wr: Vec<f64> = w.row(c).to_vec();
            for ((wi, gi), w0) in w.row_mut(c).iter_mut().zip(gw.row(c)).zip(wr) {
                *wi -= cfg.learning_rate * (gi + cfg.l2 * w0);
            }
            b[c] -= cfg.learning_rate * gb[c];
        }
    }

    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for &i in &test {
        let l = logits(&w, &b, &feat(i));
        // first maximum wins
        let pred = l.iter().enumerate().fold(0, |best, (c, v)| if *v > l[best] { c } else { best });
        let y = labels[i] as usize;
        total[y] += 1;
        correct[y] += usize::from(pred == y);
    }
    let per_class_accuracy =
        correct.iter().zip(&total).map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 }).collect();
    Ok(ProbeResult {
        accuracy: correct.iter().sum::<usize>() as f64 / test.len() as f64,
        per_class_accuracy,
        loss_curve: Vec::new(),
        test_count: test.len(),
    })
}

fn logits(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    w.row_iter().zip(b).map(|(r, bi)| dot(r, x) + bi).collect()
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let mx = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Probes the penultimate representations of a frozen `model` on `eval`.
pub fn linear_probe(model: &DownstreamModel, eval: &EvalSet, probe_seed: u64, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let reps: Vec<Vec<f64>> = eval
        .samples
        .iter()
        .map(|s| model.represent(&s.x.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect();
    let reps = Matrix::from_rows(model.representation_dim(), &reps)?;
    let mut result = probe_representations(&reps, &eval.labels, eval.classes, probe_seed, cfg)?;
    result.loss_curve = model.loss_curve.clone();
    Ok(result)
}

/// Probes raw inputs, useful as a reference point.
pub fn probe_inputs(eval: &EvalSet, probe_seed: u64, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let m = eval.samples.first().map_or(0, |s| s.dim());
    let rows: Vec<Vec<f64>> = eval.samples.iter().map(|s| s.x.iter().map(|&v| v as f64).collect()).collect();
    probe_representations(&Matrix::from_rows(m, &rows)?, &eval.labels, eval.classes, probe_seed, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two-sided 99% normal-approximation interval for a binomial rate.
    fn binomial_99(p: f64, n: usize) -> (f64, f64) {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        (p - 2.576 * sd, p + 2.576 * sd)
    }

    #[test]
    fn one_hot_representations_are_perfect() {
        let labels: Vec<u32> = (0..200).map(|i| i % 4).collect();
        let reps = Matrix::from_fn(200, 4, |i, j| f64::from(u8::from(labels[i] as usize == j)));
        let r = probe_representations(&reps, &labels, 4, 3, &ProbeConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class_accuracy.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn random_representations_are_at_chance() {
        let labels: Vec<u32> = (0..2000).map(|i| i % 5).collect();
        let mut rng = seed::rng(77);
        let reps = Matrix::from_fn(2000, 8, |_, _| rng.random::<f64>());
        let r = probe_representations(&reps, &labels, 5, 1, &ProbeConfig::default()).unwrap();
        let (lo, hi) = binomial_99(0.2, r.test_count);
        assert!(r.accuracy >= lo && r.accuracy <= hi, "accuracy {}", r.accuracy);
    }

    #[test]
    fn constant_representations_are_at_chance() {
        let labels: Vec<u32> = (0..300).map(|i| i % 3).collect();
        let reps = Matrix::zeros(300, 6);
        let r = probe_representations(&reps, &labels, 3, 1, &ProbeConfig::default()).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let reps = Matrix::zeros(10, 2);
        assert!(matches!(
            probe_representations(&reps, &[0; 10], 2, 0, &ProbeConfig::default()),
            Err(Error::InvalidEval(_))
        ));
    }

    #[test]
    fn deterministic() {
        let labels: Vec<u32> = (0..100).map(|i| i % 2).collect();
        let reps = Matrix::from_fn(100, 3, |i, j| ((i * 31 + j * 7) % 11) as f64 + labels[i] as f64);
        let a = probe_representations(&reps, &labels, 2, 9, &ProbeConfig::default()).unwrap();
        let b = probe_representations(&reps, &labels, 2, 9, &ProbeConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
