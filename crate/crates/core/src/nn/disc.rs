use rand::Rng;

use super::mlp::{Activation, Mlp, MlpTape};
use super::params::ParamStore;
use crate::error::Result;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscConfig {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl DiscConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            widths: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

/// Scalar critic over feature vectors. It sees no timestep and no label.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct DiscTape {
    mlp: MlpTape,
}

impl Discriminator {
    pub fn init<R: Rng + ?Sized>(
        config: &DiscConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![config.input_dim];
        dims.extend(&config.widths);
        dims.push(1);
        Ok(Self {
            mlp: Mlp::init(store, "disc.mlp", &dims, config.activation, false, rng)?,
        })
    }

    /// Logits as a column vector.
    pub fn forward(&self, store: &ParamStore, features: &Matrix) -> Result<Vec<f64>> {
        Ok(self.mlp.forward(store, features)?.into_data())
    }

    pub fn forward_tape(
        &self,
        store: &ParamStore,
        features: &Matrix,
    ) -> Result<(Vec<f64>, DiscTape)> {
        let (out, mlp) = self.mlp.forward_tape(store, features)?;
        Ok((out.into_data(), DiscTape { mlp }))
    }

    /// Accumulates parameter gradients and returns `d loss / d features`.
    pub fn backward(
        &self,
        store: &ParamStore,
        tape: &DiscTape,
        grad_logits: &[f64],
        grads: &mut ParamStore,
    ) -> Result<Matrix> {
        let g = Matrix::from_vec(grad_logits.len(), 1, grad_logits.to_vec())?;
        self.mlp.backward(store, &tape.mlp, &g, grads)
    }
}
