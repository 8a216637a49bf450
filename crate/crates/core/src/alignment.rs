//! Per-participant linear maps from projected feature space onto the
//! reference participant's target space, fitted on the platform's shared
//! set by ridge-regularised least squares.

use sha2::{Digest, Sha256};

use crate::dataset::{Sample, TargetSet, SHARED_SET_SHARD_ID};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// The platform's small shared unlabeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedSet {
    samples: Vec<Sample>,
    hash: String,
}

impl SharedSet {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidDimension("shared set must not be empty".into()));
        };
        let m = first.dim();
        if samples.iter().any(|s| s.dim() != m) {
            return Err(Error::InvalidDimension("shared set samples differ in dimension".into()));
        }
        let mut h = Sha256::new();
        for s in &samples {
            h.update(s.id.to_le_bytes());
            for v in &s.x {
                h.update(v.to_le_bytes());
            }
        }
        let hash = hex::encode(h.finalize());
        Ok(Self { samples, hash })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }
}

/// The reference participant's targets on the shared set, stored at target
/// precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedTargets {
    pub n: usize,
    values: Matrix,
}

impl SharedTargets {
    pub fn from_matrix(values: &Matrix) -> Result<Self> {
        if !values.is_finite() {
            return Err(Error::Numeric("shared targets contain non-finite values".into()));
        }
        let rounded = Matrix::from_fn(values.rows(), values.cols(), |i, j| values.get(i, j) as f32 as f64);
        Ok(Self { n: values.cols(), values: rounded })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn to_target_set(&self) -> TargetSet {
        TargetSet::from_matrix(SHARED_SET_SHARD_ID, &self.values, true).expect("finite by construction")
    }

    pub fn from_target_set(ts: &TargetSet) -> Result<Self> {
        Self::from_matrix(&ts.to_matrix())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformationMatrix {
    pub participant_id: u32,
    pub n: usize,
    values: Matrix,
    bias: Option<Vec<f64>>,
    pub ridge_lambda: f64,
    /// `‖T·Fᵀ − Yᵀ‖²_F` at the solution, without the ridge term.
    pub residual: f64,
}

impl TransformationMatrix {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn is_identity(&self) -> bool {
        self.bias.is_none() && self.values == Matrix::identity(self.n)
    }

    /// Each row `r` mapped to `T·r (+ b)`.
    pub fn apply(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.n {
            return Err(Error::Alignment(format!(
                "transformation is {n}x{n}, rows have width {}",
                rows.cols(),
                n = self.n
            )));
        }
        if self.is_identity() {
            return Ok(rows.clone());
        }
        let mut out = rows.map_rows(&self.values)?;
        if let Some(b) = &self.bias {
            for i in 0..out.rows() {
                out.row_mut(i).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
        }
        Ok(out)
    }
}

/// `lambda_rel` times the mean squared row norm of `features`, i.e. the
/// mean diagonal of `F·Fᵀ`.
pub fn relative_ridge_lambda(features: &Matrix, lambda_rel: f64) -> f64 {
    if features.rows() == 0 {
        return lambda_rel;
    }
    let mean_sq = features.as_slice().iter().map(|v| v * v).sum::<f64>() / features.rows() as f64;
    lambda_rel * mean_sq
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for r in m.row_iter() {
        mean.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    let k = 1.0 / m.rows().max(1) as f64;
    mean.iter_mut().for_each(|a| *a *= k);
    mean
}

fn center(m: &Matrix, mean: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) - mean[j])
}

/// Minimises `‖T·Fᵀ − Yᵀ‖²_F + λ‖T‖²_F` over `T ∈ ℝ^{n×n}`.
///
/// Solved through the thin SVD `F = U S Vᵀ`, giving
/// `T = Yᵀ U diag(s / (s² + λ)) Vᵀ`. With `affine`, rows are centred first
/// and an unpenalised bias restores the means.
pub fn fit_transformation(
    participant_id: u32,
    features: &Matrix,
    shared_targets: &SharedTargets,
    ridge_lambda: f64,
    affine: bool,
) -> Result<TransformationMatrix> {
    let y = shared_targets.values();
    let n = features.cols();
    if features.rows() != y.rows() {
        return Err(Error::Alignment(format!(
            "{} feature rows vs {} target rows",
            features.rows(),
            y.rows()
        )));
    }
    if y.cols() != n {
        return Err(Error::Alignment(format!("features have width {n}, targets {}", y.cols())));
    }
    if n == 0 || features.rows() == 0 {
        return Err(Error::Alignment("empty system".into()));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::Alignment(format!("ridge_lambda must be finite and >= 0, got {ridge_lambda}")));
    }
    if !features.is_finite() {
        return Err(Error::Numeric("shared features contain non-finite values".into()));
    }

    let (f, yc, means) = if affine {
        let fm = column_means(features);
        let ym = column_means(y);
        (center(features, &fm), center(y, &ym), Some((fm, ym)))
    } else {
        (features.clone(), y.clone(), None)
    };

    let svd = f.to_nalgebra().svd(true, true);
    let (u, vt) = (svd.u.as_ref().expect("u requested"), svd.v_t.as_ref().expect("v_t requested"));
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (f.rows().max(n) as f64) * f64::EPSILON;
    let rank = s.iter().filter(|&&v| v > tol).count();
    if ridge_lambda == 0.0 && rank < n {
        return Err(Error::IllPosed { rank, n });
    }

    // Yᵀ U  (n x r), scaled per column, times Vᵀ (r x n)
    let ytu = yc.to_nalgebra().transpose() * u;
    let mut scaled = ytu;
    for (k, &sk) in s.iter().enumerate() {
        let w = if ridge_lambda == 0.0 {
            if sk > tol { 1.0 / sk } else { 0.0 }
        } else {
            sk / (sk * sk + ridge_lambda)
        };
        scaled.column_mut(k).scale_mut(w);
    }
    let t = Matrix::from_nalgebra(&(scaled * vt));
    if !t.is_finite() {
        return Err(Error::Numeric("transformation has non-finite entries".into()));
    }

    let bias = means.map(|(fm, ym)| {
        let tf = t.mul_vec(&fm);
        ym.iter().zip(tf).map(|(a, b)| a - b).collect::<Vec<f64>>()
    });
    let mut out = TransformationMatrix { participant_id, n, values: t, bias, ridge_lambda, residual: 0.0 };
    let pred = out.apply(features)?;
    out.residual = pred.sub(y).as_slice().iter().map(|v| v * v).sum();
    Ok(out)
}

/// The identity map used by the reference participant itself.
pub fn alignment_for_best(participant_id: u32, n: usize) -> Result<TransformationMatrix> {
    if n == 0 {
        return Err(Error::InvalidDimension("n must be at least 1".into()));
    }
    Ok(TransformationMatrix {
        participant_id,
        n,
        values: Matrix::identity(n),
        bias: None,
        ridge_lambda: 0.0,
        residual: 0.0,
    })
}

pub fn apply_transformation(t: &TransformationMatrix, targets: &TargetSet) -> Result<TargetSet> {
    if targets.n != t.n {
        return Err(Error::Alignment(format!("targets have width {}, transformation {}", targets.n, t.n)));
    }
    TargetSet::from_matrix(targets.shard_id, &t.apply(&targets.to_matrix())?, true)
}
