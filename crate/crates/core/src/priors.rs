//! Deterministic stand-ins for participants' prior models.
//!
//! Every non-oracle extractor is a seeded base map `f` blended with a
//! degradation term according to its quality `q`:
//!
//! ```text
//! psi(x) = q * f(x) + (1 - q) * (collapse * c + jitter * eta(x))
//! ```
//!
//! `c` is a fixed seeded direction shared by every input, so low-quality
//! models collapse towards a single point, and `eta(x)` is pseudo-random
//! noise keyed on the bit pattern of `x`, so the extractor remains a pure
//! function of its input.
//!
//! A `pretrained` prior built with a labeled context reads its input
//! through a lens: one discriminant direction per class, computed from the
//! class centroids and the within-class covariance of the context. This stands in for what a model
//! pretrained on related data brings along, namely which directions of the
//! input carry semantic content. Without labels the lens is the identity.
//!
//! Quality also limits perception: a prior of quality `q` sees only
//! `ceil(q * d)` of the `d` lens directions (or raw coordinates), so a weak
//! prior's target space carries less of the class structure and aligning
//! to it loses information that no linear map can restore.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::seed::{self, splitmix64};

/// Row `i` holds the features of the `i`-th sample of the batch.
pub type FeatureMatrix = Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Linear,
    Mlp,
    WeakMlp,
    Oracle,
}

/// How a `weak-mlp` prior is weakened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum WeakMode {
    /// Blend the seeded network with degradation noise by `1 - quality`.
    #[default]
    Blend,
    /// Train a small classifier for `steps` full-batch steps on the labeled
    /// context dataset and use its hidden activations.
    Trained { steps: usize },
}

fn default_hidden() -> usize {
    64
}
fn default_collapse() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.5
}
fn default_pretrained() -> bool {
    true
}
fn default_quality() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModelSpec {
    pub kind: PriorKind,
    pub seed: u64,
    #[serde(default)]
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default = "default_quality")]
    pub quality: f64,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Use the identity as the linear map (requires `in_dim == out_dim`).
    #[serde(default)]
    pub identity: bool,
    #[serde(default)]
    pub weak_mode: WeakMode,
    #[serde(default = "default_collapse")]
    pub collapse: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_pretrained")]
    pub pretrained: bool,
}

impl PriorModelSpec {
    pub fn new(kind: PriorKind, seed: u64, in_dim: usize, out_dim: usize, quality: f64) -> Self {
        Self {
            kind,
            seed,
            in_dim,
            out_dim,
            quality,
            label_noise: 0.0,
            hidden: default_hidden(),
            identity: false,
            weak_mode: WeakMode::Blend,
            collapse: default_collapse(),
            jitter: default_jitter(),
            pretrained: default_pretrained(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPrior(m));
        if self.out_dim == 0 || self.in_dim == 0 {
            return bad("in_dim and out_dim must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.quality) {
            return bad(format!("quality {} outside [0,1]", self.quality));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("label_noise {} outside [0,1]", self.label_noise));
        }
        if self.identity && (self.kind != PriorKind::Linear || self.in_dim != self.out_dim) {
            return bad("identity override needs a linear prior with in_dim == out_dim".into());
        }
        if matches!(self.kind, PriorKind::Mlp | PriorKind::WeakMlp) && self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if !(self.collapse.is_finite() && self.jitter.is_finite()) {
            return bad("collapse and jitter must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Extractor {
    Linear { g: Matrix },
    Mlp { u: Matrix, b: Vec<f64>, v: Matrix },
    Hidden { u: Matrix, b: Vec<f64> },
    Oracle { labels: Arc<BTreeMap<u64, u32>>, classes: usize },
}

/// An immutable feature extractor built from a [`PriorModelSpec`].
#[derive(Debug, Clone)]
pub struct PriorModel {
    spec: PriorModelSpec,
    extractor: Extractor,
    collapse_dir: Vec<f64>,
    lens: Option<Matrix>,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Builds the extractor described by `spec`. `context` supplies labels for
/// the oracle kind and training data for trained weak models.
pub fn build_prior(spec: &PriorModelSpec, context: Option<&Dataset>) -> Result<PriorModel> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let perceiving = !spec.identity
        && matches!(
            (spec.kind, spec.weak_mode),
            (PriorKind::Linear | PriorKind::Mlp, _) | (PriorKind::WeakMlp, WeakMode::Blend)
        );
    let lens = if perceiving {
        let lens = if spec.pretrained { context.and_then(centroid_lens) } else { None };
        restrict_view(lens, spec.in_dim, spec.quality, spec.seed)
    } else {
        None
    };
    let m = lens.as_ref().map_or(spec.in_dim, Matrix::rows);
    let (l, h) = (spec.out_dim, spec.hidden);
    let extractor = match spec.kind {
        PriorKind::Linear if spec.identity => Extractor::Linear { g: Matrix::identity(m) },
        PriorKind::Linear => Extractor::Linear { g: gaussian(l, m, 1.0 / (m as f64).sqrt(), &mut rng) },
        PriorKind::Mlp | PriorKind::WeakMlp => {
            let u = gaussian(h, m, 0.4 / (m as f64).sqrt(), &mut rng);
            let b = (0..h).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
            let v = gaussian(l, h, 1.0 / (h as f64).sqrt(), &mut rng);
            match (spec.kind, spec.weak_mode) {
                (PriorKind::WeakMlp, WeakMode::Trained { steps }) => {
                    let data = context.ok_or(Error::MissingLabels)?;
                    let (u, b) = train_hidden(data, l, steps, spec.seed)?;
                    Extractor::Hidden { u, b }
                }
                _ => Extractor::Mlp { u, b, v },
            }
        }
        PriorKind::Oracle => {
            let data = context.ok_or(Error::MissingLabels)?;
            let labels = data.label_map().ok_or(Error::MissingLabels)?;
            let classes = labels.values().copied().max().map_or(0, |c| c as usize + 1);
            if classes > l {
                return Err(Error::InvalidPrior(format!(
                    "oracle needs out_dim >= {classes} classes, got {l}"
                )));
            }
            Extractor::Oracle { labels: Arc::new(labels), classes }
        }
    };
    let collapse_dir = (0..l).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(PriorModel { spec: spec.clone(), extractor, collapse_dir, lens })
}

/// Keeps `ceil(q * d)` of the `d` input directions (lens rows, or raw
/// coordinates without a lens), chosen by a seeded shuffle.
fn restrict_view(lens: Option<Matrix>, in_dim: usize, quality: f64, seed: u64) -> Option<Matrix> {
    let d = lens.as_ref().map_or(in_dim, Matrix::rows);
    let keep = ((quality * d as f64).ceil() as usize).clamp(1, d);
    if keep == d {
        return lens;
    }
    let mut idx: Vec<usize> = (0..d).collect();
    idx.shuffle(&mut seed::rng(seed::substream(seed, 0x71E3)));
    idx.truncate(keep);
    idx.sort_unstable();
    let base = lens.unwrap_or_else(|| Matrix::identity(in_dim));
    Some(base.select_rows(&idx))
}

/// Discriminant directions `Sw^-1 (mu_c - mu)` of the labeled context, one
/// per class, each scaled so that within-class noise projects to unit
/// variance. `None` if the context is unlabeled or degenerate.
fn centroid_lens(data: &Dataset) -> Option<Matrix> {
    let labels = data.labels()?;
    let classes = labels.iter().copied().max()? as usize + 1;
    let m = data.dim();
    let mut sums = Matrix::zeros(classes, m);
    let mut counts = vec![0usize; classes];
    for (s, &y) in data.samples().iter().zip(labels) {
        counts[y as usize] += 1;
        for (acc, &v) in sums.row_mut(y as usize).iter_mut().zip(&s.x) {
            *acc += v as f64;
        }
    }
    let means = Matrix::from_fn(classes, m, |c, j| sums.get(c, j) / counts[c].max(1) as f64);
    let mut sw = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (s, &y) in data.samples().iter().zip(labels) {
        let d = nalgebra::DVector::from_iterator(m, s.x.iter().zip(means.row(y as usize)).map(|(&v, mu)| v as f64 - mu));
        sw.ger(1.0, &d, &d, 1.0);
    }
    sw /= data.len() as f64;
    let ridge = 1e-6 * sw.trace() / m as f64;
    for i in 0..m {
        sw[(i, i)] += ridge;
    }
    let chol = sw.clone().cholesky()?;
    let total: Vec<f64> = (0..m).map(|j| sums.row_iter().map(|r| r[j]).sum::<f64>() / data.len() as f64).collect();
    let rows: Vec<Vec<f64>> = (0..classes)
        .filter(|&c| counts[c] > 0)
        .map(|c| {
            let diff = nalgebra::DVector::from_iterator(m, means.row(c).iter().zip(&total).map(|(a, b)| a - b));
            let d = chol.solve(&diff);
            let scale = d.dot(&(&sw * &d)).sqrt().max(1e-12);
            d.iter().map(|v| v / scale).collect()
        })
        .collect();
    Some(Matrix::from_fn(rows.len(), m, |i, j| rows[i][j]))
}

/// Keyed on the exact bits of `x`, so equal inputs always get equal noise.
fn input_key(seed: u64, x: &[f32]) -> u64 {
    x.iter().fold(splitmix64(seed ^ 0xA5A5_5A5A), |h, v| splitmix64(h ^ u64::from(v.to_bits())))
}

impl PriorModel {
    pub fn spec(&self) -> &PriorModelSpec {
        &self.spec
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn extract(&self, batch: &[Sample]) -> Result<FeatureMatrix> {
        let l = self.spec.out_dim;
        let mut out = Matrix::zeros(batch.len(), l);
        for (i, s) in batch.iter().enumerate() {
            if s.dim() != self.spec.in_dim {
                return Err(Error::Extraction { expected: self.spec.in_dim, got: s.dim() });
            }
            self.extract_one(s, out.row_mut(i))?;
        }
        Ok(out)
    }

    fn extract_one(&self, s: &Sample, out: &mut [f64]) -> Result<()> {
        let mut x: Vec<f64> = s.x.iter().map(|&v| v as f64).collect();
        if let Some(lens) = &self.lens {
            x = lens.mul_vec(&x);
        }
        match &self.extractor {
            Extractor::Linear { g } => {
                for (o, row) in out.iter_mut().zip(g.row_iter()) {
                    *o = dot(row, &x);
                }
            }
            Extractor::Mlp { u, b, v } => {
                let hidden: Vec<f64> =
                    u.row_iter().zip(b).map(|(row, bi)| (dot(row, &x) + bi).tanh()).collect();
                for (o, row) in out.iter_mut().zip(v.row_iter()) {
                    *o = dot(row, &hidden);
                }
            }
            Extractor::Hidden { u, b } => {
                for ((o, row), bi) in out.iter_mut().zip(u.row_iter()).zip(b) {
                    *o = (dot(row, &x) + bi).tanh();
                }
            }
            Extractor::Oracle { labels, classes } => {
                let &label = labels.get(&s.id).ok_or(Error::MissingLabels)?;
                let mut class = label as usize;
                let key = splitmix64(self.spec.seed ^ splitmix64(s.id));
                let mut rng = seed::rng(key);
                if *classes > 1 && rng.random::<f64>() < self.spec.label_noise {
                    // uniform over the other classes
                    let shift = rng.random_range(1..*classes);
                    class = (class + shift) % classes;
                }
                out.fill(0.0);
                out[class] = 1.0;
                return Ok(());
            }
        }
        let q = self.spec.quality;
        if q < 1.0 {
            let mut rng = seed::rng(input_key(self.spec.seed, &s.x));
            for (o, c) in out.iter_mut().zip(&self.collapse_dir) {
                let eta: f64 = rng.sample(StandardNormal);
                *o = q * *o + (1.0 - q) * (self.spec.collapse * c + self.spec.jitter * eta);
            }
        }
        Ok(())
    }
}

/// One spec per quality level, each with its seed offset by the level index.
pub fn grade_roster(base: &PriorModelSpec, quality_levels: &[f64]) -> Vec<PriorModelSpec> {
    quality_levels
        .iter()
        .enumerate()
        .map(|(i, &q)| PriorModelSpec {
            quality: q,
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        })
        .collect()
}

/// Trains `m -> width -> classes` with softmax cross-entropy for `steps`
/// full-batch gradient steps and returns the input layer.
fn train_hidden(data: &Dataset, width: usize, steps: usize, seed: u64) -> Result<(Matrix, Vec<f64>)> {
    let labels = data.labels().ok_or(Error::MissingLabels)?;
    let classes = labels.iter().copied().max().map_or(1, |c| c as usize + 1);
    let m = data.dim();
    let mut rng = seed::rng(seed::substream(seed, 0x7EA1));
    let mut u = gaussian(width, m, 1.0 / (m as f64).sqrt(), &mut rng);
    let mut b = vec![0.0; width];
    let mut v = gaussian(classes, width, 1.0 / (width as f64).sqrt(), &mut rng);
    let xs: Vec<Vec<f64>> =
        data.samples().iter().map(|s| s.x.iter().map(|&v| v as f64).collect()).collect();
    let lr = 0.5;
    let inv_n = 1.0 / xs.len() as f64;
    for _ in 0..steps {
        let mut gu = Matrix::zeros(width, m);
        let mut gb = vec![0.0; width];
        let mut gv = Matrix::zeros(classes, width);
        for (x, &y) in xs.iter().zip(labels) {
            let h: Vec<f64> = u.row_iter().zip(&b).map(|(r, bi)| (dot(r, x) + bi).tanh()).collect();
            let logits: Vec<f64> = v.row_iter().map(|r| dot(r, &h)).collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let delta: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(c, l)| (l - mx).exp() / z - f64::from(u8::from(c == y as usize)))
                .collect();
            for (c, d) in delta.iter().enumerate() {
                for (g, hj) in gv.row_mut(c).iter_mut().zip(&h) {
                    *g += d * hj * inv_n;
                }
            }
            for j in 0..width {
                let back: f64 = delta.iter().enumerate().map(|(c, d)| d * v.get(c, j)).sum();
                let dh = back * (1.0 - h[j] * h[j]) * inv_n;
                gb[j] += dh;
                for (g, xi) in gu.row_mut(j).iter_mut().zip(x) {
                    *g += dh * xi;
                }
            }
        }
        u = u.sub(&gu.scale(lr));
        v = v.sub(&gv.scale(lr));
        for (bi, g) in b.iter_mut().zip(&gb) {
            *bi -= lr * g;
        }
    }
    Ok((u, b))
}
