use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Identity,
    RandomProjection,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Identity => "identity",
            FeatureKind::RandomProjection => "random-projection",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(FeatureKind::Identity),
            "random-projection" => Ok(FeatureKind::RandomProjection),
            other => Err(Error::invalid(format!("unknown feature map `{other}`"))),
        }
    }
}

/// Frozen feature extractor in front of the discriminator.
///
/// `RandomProjection` computes `tanh(x W)` with a seeded Gaussian `W`
/// scaled by `1/sqrt(d)`; it has no trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Identity { dim: usize },
    RandomProjection { weights: Matrix },
}

impl FeatureMap {
    pub fn new(kind: FeatureKind, dim: usize, feature_dim: usize, seed: u64) -> Self {
        match kind {
            FeatureKind::Identity => FeatureMap::Identity { dim },
            FeatureKind::RandomProjection => {
                let mut rng = seeded(seed, Stream::Projection);
                let scale = 1.0 / (dim as f64).sqrt();
                let data = (0..dim * feature_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect();
                FeatureMap::RandomProjection {
                    weights: Matrix::from_vec(dim, feature_dim, data).expect("sized"),
                }
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::RandomProjection { weights } => weights.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::RandomProjection { weights } => weights.cols(),
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Error::check_dim(self.input_dim(), x.cols())?;
        Ok(match self {
            FeatureMap::Identity { .. } => x.clone(),
            FeatureMap::RandomProjection { weights } => x.matmul(weights).map(f64::tanh),
        })
    }

    /// Gradient with respect to the input, given the output `features` of
    /// [`FeatureMap::apply`] and the upstream gradient.
    pub fn backward(&self, features: &Matrix, grad_out: &Matrix) -> Matrix {
        match self {
            FeatureMap::Identity { .. } => grad_out.clone(),
            FeatureMap::RandomProjection { weights } => {
                let mut g = grad_out.clone();
                for (gi, y) in g.data_mut().iter_mut().zip(features.data()) {
                    *gi *= 1.0 - y * y;
                }
                g.matmul_t(weights)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_identity() {
        let f = FeatureMap::new(FeatureKind::Identity, 2, 16, 0);
        let x = Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(f.apply(&x).unwrap(), x);
    }

    #[test]
    fn projection_is_deterministic_and_zero_preserving() {
        let f = FeatureMap::new(FeatureKind::RandomProjection, 2, 16, 9);
        let g = FeatureMap::new(FeatureKind::RandomProjection, 2, 16, 9);
        let x = Matrix::from_rows(&[vec![0.3, -0.7]]).unwrap();
        assert_eq!(f.apply(&x).unwrap(), g.apply(&x).unwrap());
        let zero = f.apply(&Matrix::zeros(1, 2)).unwrap();
        assert_eq!(zero.cols(), 16);
        assert!(zero.data().iter().all(|v| *v == 0.0));
        assert!(f.apply(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let f = FeatureMap::new(FeatureKind::RandomProjection, 3, 5, 4);
        let x = Matrix::from_rows(&[vec![0.2, -0.4, 0.9]]).unwrap();
        let w = Matrix::from_rows(&[vec![0.1, -0.3, 0.5, 0.7, -0.2]]).unwrap();
        let loss = |x: &Matrix| -> f64 {
            f.apply(x)
                .unwrap()
                .data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let grad = f.backward(&f.apply(&x).unwrap(), &w);
        for j in 0..3 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let mut xm = x.clone();
            xm.data_mut()[j] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - grad.data()[j]).abs() < 1e-8);
        }
    }
}
