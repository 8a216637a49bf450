//! Random linear maps that bring every participant's features into the
//! run's common target dimension.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::priors::FeatureMatrix;
use crate::seed;

/// An `n x l` map with i.i.d. `N(0, 1/n)` entries, fully determined by
/// `(l, n, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub l: usize,
    pub n: usize,
    pub seed: u64,
    values: Matrix,
}

impl ProjectionMatrix {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("projection dimension must be positive".into()));
        }
        Ok(Self { l: n, n, seed: 0, values: Matrix::identity(n) })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn is_identity(&self) -> bool {
        self.l == self.n && self.values == Matrix::identity(self.n)
    }
}

pub fn sample_projection(l: usize, n: usize, seed: u64) -> Result<ProjectionMatrix> {
    if l == 0 || n == 0 {
        return Err(Error::InvalidDimension(format!("projection {l} -> {n} has a zero dimension")));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let mut rng = seed::rng(seed);
    let values = Matrix::from_fn(n, l, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    Ok(ProjectionMatrix { l, n, seed, values })
}

/// Row `i` of the result is `W · F_i`.
pub fn project(w: &ProjectionMatrix, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if features.cols() != w.l {
        return Err(Error::Projection { expected: w.l, got: features.cols() });
    }
    features.map_rows(&w.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_projection_is_noop() {
        let w = ProjectionMatrix::identity(3).unwrap();
        let f = Matrix::from_rows(3, &[[1.0, -2.0, 3.5]]).unwrap();
        assert_eq!(project(&w, &f).unwrap(), f);
        assert!(w.is_identity());
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        assert_eq!(sample_projection(7, 3, 99).unwrap(), sample_projection(7, 3, 99).unwrap());
        assert_ne!(sample_projection(7, 3, 99).unwrap(), sample_projection(7, 3, 100).unwrap());
    }

    #[test]
    fn one_hot_selects_column() {
        let w = sample_projection(4, 3, 5).unwrap();
        let e2 = Matrix::from_rows(4, &[[0.0, 0.0, 1.0, 0.0]]).unwrap();
        let y = project(&w, &e2).unwrap();
        for i in 0..3 {
            assert_eq!(y.get(0, i), w.values().get(i, 2));
        }
        let zero = project(&w, &Matrix::zeros(1, 4)).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        assert!(sample_projection(0, 2, 1).is_err());
        assert!(sample_projection(2, 0, 1).is_err());
        let w = sample_projection(3, 2, 1).unwrap();
        assert!(matches!(
            project(&w, &Matrix::zeros(1, 4)),
            Err(Error::Projection { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn entry_variance_is_one_over_n() {
        let w = sample_projection(200, 50, 3).unwrap();
        let vals = w.values().as_slice();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var * 50.0 - 1.0).abs() < 0.05, "var {var}");
    }

    proptest! {
        #[test]
        fn linear_and_rowwise(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let w = sample_projection(5, 4, seed).unwrap();
            let f = Matrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64 * 0.1 - 0.7);
            let g = Matrix::from_fn(3, 5, |i, j| ((i + 2 * j) % 4) as f64 - 1.5);
            let lhs = project(&w, &f.scale(a).add(&g.scale(b))).unwrap();
            let rhs = project(&w, &f).unwrap().scale(a).add(&project(&w, &g).unwrap().scale(b));
            prop_assert!(lhs.sub(&rhs).frobenius_norm() <= 1e-12 * (1.0 + rhs.frobenius_norm()));

            let stacked = project(&w, &f.vstack(&g).unwrap()).unwrap();
            let separate = project(&w, &f).unwrap().vstack(&project(&w, &g).unwrap()).unwrap();
            prop_assert_eq!(stacked, separate);
        }
    }
}
