use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Smooth hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative from the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-z).exp());
                sig * (1.0 + z * (1.0 - sig))
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected network `x W_0 + b_0 -> act -> ... -> x W_L + b_L`,
/// linear output. Weights are stored `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    first_param: usize,
}

/// Values recorded by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of hidden layers.
    pre: Vec<Matrix>,
}

impl Mlp {
    /// Registers `W_i`/`b_i` for each layer in `store` under `prefix`.
    /// Weights are LeCun-normal, biases zero; `zero_output` zeroes the last
    /// layer so the network starts out predicting 0.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        activation: Activation,
        zero_output: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {dims:?}")));
        }
        let first_param = store.len();
        let layers = dims.len() - 1;
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weights = if zero_output && i + 1 == layers {
                vec![0.0; fan_in * fan_out]
            } else {
                (0..fan_in * fan_out)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * scale
                    })
                    .collect()
            };
            store.push(format!("{prefix}.l{i}.w"), vec![fan_in, fan_out], weights)?;
            store.push(
                format!("{prefix}.l{i}.b"),
                vec![fan_out],
                vec![0.0; fan_out],
            )?;
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            first_param,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("nonempty")
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn weight(&self, store: &ParamStore, i: usize) -> Matrix {
        let p = store.get(self.first_param + 2 * i);
        Matrix::from_vec(p.shape[0], p.shape[1], p.data.clone()).expect("shape recorded at init")
    }

    fn bias<'a>(&self, store: &'a ParamStore, i: usize) -> &'a [f64] {
        &store.get(self.first_param + 2 * i + 1).data
    }

    fn run(
        &self,
        store: &ParamStore,
        x: &Matrix,
        mut tape: Option<&mut MlpTape>,
    ) -> Result<Matrix> {
        Error::check_dim(self.input_dim(), x.cols())?;
        let mut h = x.clone();
        for i in 0..self.layers() {
            let mut z = h.matmul(&self.weight(store, i));
            z.add_row_vector(self.bias(store, i));
            let last = i + 1 == self.layers();
            let next = if last {
                z.clone()
            } else {
                z.map(|v| self.activation.apply(v))
            };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(h);
                if !last {
                    t.pre.push(z);
                }
            }
            h = next;
        }
        Ok(h)
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        self.run(store, x, None)
    }

    pub fn forward_tape(&self, store: &ParamStore, x: &Matrix) -> Result<(Matrix, MlpTape)> {
        let mut tape = MlpTape {
            inputs: Vec::with_capacity(self.layers()),
            pre: Vec::with_capacity(self.layers()),
        };
        let out = self.run(store, x, Some(&mut tape))?;
        Ok((out, tape))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(
        &self,
        store: &ParamStore,
        tape: &MlpTape,
        grad_out: &Matrix,
        grads: &mut ParamStore,
    ) -> Result<Matrix> {
        Error::check_dim(self.output_dim(), grad_out.cols())?;
        let mut g = grad_out.clone();
        for i in (0..self.layers()).rev() {
            if i + 1 < self.layers() {
                // g is d(loss)/d(output of hidden layer i); push through act.
                let pre = &tape.pre[i];
                let post = &tape.inputs[i + 1];
                for ((gv, z), y) in g.data_mut().iter_mut().zip(pre.data()).zip(post.data()) {
                    *gv *= self.activation.derivative(*z, *y);
                }
            }
            let input = &tape.inputs[i];
            let dw = input.t_matmul(&g);
            let db = g.sum_rows();
            for (acc, v) in grads
                .get_mut(self.first_param + 2 * i)
                .data
                .iter_mut()
                .zip(dw.data())
            {
                *acc += v;
            }
            for (acc, v) in grads
                .get_mut(self.first_param + 2 * i + 1)
                .data
                .iter_mut()
                .zip(&db)
            {
                *acc += v;
            }
            g = g.matmul_t(&self.weight(store, i));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::rng::{seeded, Stream};

    #[test]
    fn zero_output_layer_predicts_zero() {
        let mut store = ParamStore::new();
        let mut rng = seeded(1, Stream::Init);
        let mlp = Mlp::init(
            &mut store,
            "m",
            &[3, 8, 2],
            Activation::Tanh,
            true,
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 2.0, -3.0], vec![5.0, 5.0, 5.0]]).unwrap();
        assert!(mlp
            .forward(&store, &x)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut store = ParamStore::new();
        let mut rng = seeded(2, Stream::Init);
        let mlp = Mlp::init(
            &mut store,
            "m",
            &[2, 5, 5, 1],
            Activation::Silu,
            false,
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -0.9]]).unwrap();
        assert_eq!(
            mlp.forward(&store, &x).unwrap(),
            mlp.forward_tape(&store, &x).unwrap().0
        );
        assert!(mlp.forward(&store, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Silu] {
            let mut store = ParamStore::new();
            let mut rng = seeded(3, Stream::Init);
            let mlp = Mlp::init(&mut store, "m", &[3, 6, 4, 2], act, false, &mut rng).unwrap();
            for p in store.iter_mut() {
                for (k, v) in p.data.iter_mut().enumerate() {
                    *v += 0.05 * (k as f64).sin();
                }
            }
            let x = Matrix::from_rows(&[vec![0.2, -0.5, 1.1], vec![-1.0, 0.4, 0.0]]).unwrap();
            let target = Matrix::from_rows(&[vec![0.5, -0.2], vec![0.1, 0.3]]).unwrap();
            let loss = |s: &ParamStore| -> f64 {
                let y = mlp.forward(s, &x).unwrap();
                y.data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    * 0.5
            };
            let (y, tape) = mlp.forward_tape(&store, &x).unwrap();
            let mut g = y.clone();
            for (gv, t) in g.data_mut().iter_mut().zip(target.data()) {
                *gv -= t;
            }
            let mut grads = store.zeros_like();
            mlp.backward(&store, &tape, &g, &mut grads).unwrap();
            let report = check_gradients(&store, &grads, 1e-5, loss);
            assert!(report.max_rel_error < 1e-6, "{act}: {report:?}");
        }
    }
}
