//! A small tanh MLP trained to regress optimized targets from inputs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::OptimizedDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainLoss {
    /// Squared error summed over target dimensions, averaged over samples.
    #[default]
    Mse,
    /// `1 - cos(output, target)`, averaged over samples.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: TrainLoss,
    /// Heavy-ball momentum; 0 gives plain mini-batch gradient descent.
    pub momentum: f64,
    /// Epoch `e` uses step size `learning_rate / (1 + lr_decay·e)`.
    pub lr_decay: f64,
    /// Scale of the input layer's initial weights. At 0 the untrained
    /// network maps every input to the same representation.
    pub input_init_scale: f64,
    /// Divide targets by their root-mean-square row norm before fitting, so
    /// training behaves the same whatever scale the target space has.
    pub normalize_targets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 20,
            loss: TrainLoss::Mse,
            momentum: 0.0,
            lr_decay: 2.0,
            input_init_scale: 0.0,
            normalize_targets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub(crate) w: Matrix,
    pub(crate) b: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer { w: Matrix::zeros(self.w.rows(), self.w.cols()), b: vec![0.0; self.b.len()] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamModel {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
    pub(crate) layers: Vec<Layer>,
    /// Full-dataset training loss at initialisation and after each epoch.
    pub loss_curve: Vec<f64>,
}

impl DownstreamModel {
    pub fn init(input_dim: usize, output_dim: usize, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || cfg.hidden.contains(&0) {
            return Err(Error::Downstream("layer widths must be positive".into()));
        }
        let mut rng = seed::rng(seed);
        let mut widths = vec![input_dim];
        widths.extend(&cfg.hidden);
        widths.push(output_dim);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let scale = if i == 0 && !cfg.hidden.is_empty() { cfg.input_init_scale } else { 1.0 }
                    / (w[0] as f64).sqrt();
                Layer {
                    w: Matrix::from_fn(w[1], w[0], |_, _| scale * rng.sample::<f64, _>(StandardNormal)),
                    b: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { input_dim, hidden: cfg.hidden.clone(), output_dim, seed, layers, loss_curve: Vec::new() })
    }

    /// Activations of every layer: `acts[0]` is the input, the last is the
    /// output.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let z: Vec<f64> = layer.w.row_iter().zip(&layer.b).map(|(r, b)| dot(r, prev) + b).collect();
            acts.push(if i == last { z } else { z.into_iter().map(f64::tanh).collect() });
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_all(x).pop().unwrap()
    }

    /// Penultimate-layer representation (the input itself with no hidden
    /// layers).
    pub fn represent(&self, x: &[f64]) -> Vec<f64> {
        let mut acts = self.forward_all(x);
        acts.pop();
        acts.pop().unwrap()
    }

    pub fn representation_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.as_slice().len() + l.b.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(l.w.as_slice());
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Downstream(format!("expected {} parameters, got {}", self.param_count(), p.len())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.w.as_slice().len();
            l.w = Matrix::from_vec(l.w.rows(), l.w.cols(), p[off..off + n].to_vec())?;
            off += n;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mean loss over `(x, y)` pairs and its gradient, flattened in
    /// [`params`](Self::params) order.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], loss: TrainLoss) -> (f64, Vec<f64>) {
        let idx: Vec<usize> = (0..xs.len()).collect();
        let (l, g) = self.batch_gradient(xs, ys, &idx, loss);
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in g {
            flat.extend_from_slice(layer.w.as_slice());
            flat.extend_from_slice(&layer.b);
        }
        (l, flat)
    }

    pub fn loss(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], loss: TrainLoss) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        xs.iter().zip(ys).map(|(x, y)| sample_loss(&self.forward(x), y, loss).0).sum::<f64>() / xs.len() as f64
    }

    fn batch_gradient(&self, xs: &[Vec<f64>], ys: &[Vec<f64>], batch: &[usize], loss: TrainLoss) -> (f64, Vec<Layer>) {
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut total = 0.0;
        let inv = 1.0 / batch.len().max(1) as f64;
        let last = self.layers.len() - 1;
        for &k in batch {
            let acts = self.forward_all(&xs[k]);
            let (l, mut delta) = sample_loss(acts.last().unwrap(), &ys[k], loss);
            total += l;
            for li in (0..self.layers.len()).rev() {
                if li != last {
                    // tanh'(z) = 1 - a²
                    delta.iter_mut().zip(&acts[li + 1]).for_each(|(d, a)| *d *= 1.0 - a * a);
                }
                let input = &acts[li];
                let g = &mut grads[li];
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.b[j] += d * inv;
                    g.w.row_mut(j).iter_mut().zip(input).for_each(|(gw, a)| *gw += d * a * inv);
                }
                if li > 0 {
                    let w = &self.layers[li].w;
                    let mut back = vec![0.0; w.cols()];
                    for (j, &d) in delta.iter().enumerate() {
                        back.iter_mut().zip(w.row(j)).for_each(|(bk, wjk)| *bk += d * wjk);
                    }
                    delta = back;
                }
            }
        }
        (total * inv, grads)
    }
}

/// Loss of one prediction and its gradient with respect to the prediction.
fn sample_loss(pred: &[f64], target: &[f64], loss: TrainLoss) -> (f64, Vec<f64>) {
    match loss {
        TrainLoss::Mse => {
            let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
            let l = diff.iter().map(|d| d * d).sum();
            (l, diff.into_iter().map(|d| 2.0 * d).collect())
        }
        TrainLoss::Cosine => {
            const EPS: f64 = 1e-12;
            let pn = pred.iter().map(|v| v * v).sum::<f64>().sqrt().max(EPS);
            let tn = target.iter().map(|v| v * v).sum::<f64>().sqrt().max(EPS);
            let cos = dot(pred, target) / (pn * tn);
            let grad = pred
                .iter()
                .zip(target)
                .map(|(p, t)| -(t / (pn * tn) - cos * p / (pn * pn)))
                .collect();
            (1.0 - cos, grad)
        }
    }
}

pub(crate) fn to_f64_rows<'a>(rows: impl Iterator<Item = &'a [f32]>) -> Vec<Vec<f64>> {
    rows.map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

/// Fits a fresh model to `(x, target)` pairs by seeded mini-batch gradient
/// descent. `epochs = 0` returns the seeded initialisation.
pub fn train_on_optimized(
    data: &OptimizedDataset,
    cfg: &ModelConfig,
    epochs: usize,
    seed: u64,
) -> Result<DownstreamModel> {
    let first = data.samples().first().ok_or_else(|| Error::Downstream("empty optimized dataset".into()))?;
    let mut model = DownstreamModel::init(first.dim(), data.n, cfg, seed)?;
    train_model(&mut model, data, cfg, epochs)?;
    Ok(model)
}

/// Continues training `model` in place; its output width must match the
/// dataset's target dimension.
pub fn train_model(model: &mut DownstreamModel, data: &OptimizedDataset, cfg: &ModelConfig, epochs: usize) -> Result<()> {
    if model.output_dim != data.n {
        return Err(Error::Downstream(format!(
            "model outputs {} dimensions, targets have {}",
            model.output_dim, data.n
        )));
    }
    if data.samples().iter().any(|s| s.dim() != model.input_dim) {
        return Err(Error::Downstream(format!("inputs must have dimension {}", model.input_dim)));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Downstream("batch_size and learning_rate must be positive".into()));
    }
    let xs = to_f64_rows(data.samples().iter().map(|s| s.x.as_slice()));
    let mut ys = to_f64_rows(data.pairs().map(|(_, t)| t));
    if cfg.normalize_targets {
        let ms = ys.iter().map(|y| dot(y, y)).sum::<f64>() / ys.len().max(1) as f64;
        if ms > 0.0 {
            let inv = 1.0 / ms.sqrt();
            ys.iter_mut().flatten().for_each(|v| *v *= inv);
        }
    }
    let mut rng = seed::rng(seed::substream(model.seed, 0xBA7C));
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut velocity: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
    model.loss_curve.push(model.loss(&xs, &ys, cfg.loss));
    for epoch in 0..epochs {
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grads) = model.batch_gradient(&xs, &ys, batch, cfg.loss);
            for ((layer, g), v) in model.layers.iter_mut().zip(&grads).zip(&mut velocity) {
                let step = |vel: &mut f64, grad: f64| {
                    *vel = cfg.momentum * *vel + grad;
                    lr * *vel
                };
                let mut w = layer.w.clone().into_vec();
                let mut vw = v.w.clone().into_vec();
                for ((wi, gi), vi) in w.iter_mut().zip(g.w.as_slice()).zip(vw.iter_mut()) {
                    *wi -= step(vi, *gi);
                }
                layer.w = Matrix::from_vec(layer.w.rows(), layer.w.cols(), w)?;
                v.w = Matrix::from_vec(v.w.rows(), v.w.cols(), vw)?;
                for ((bi, gi), vi) in layer.b.iter_mut().zip(&g.b).zip(v.b.iter_mut()) {
                    *bi -= step(vi, *gi);
                }
            }
        }
        let l = model.loss(&xs, &ys, cfg.loss);
        if !l.is_finite() {
            return Err(Error::Numeric(format!("training diverged (loss {l})")));
        }
        model.loss_curve.push(l);
    }
    Ok(())
}
