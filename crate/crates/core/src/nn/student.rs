use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{Activation, Mlp, MlpTape};
use super::params::ParamStore;
use crate::dynamics::{c_coefficient, ddim_step_batch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::Condition;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub dim: usize,
    pub classes: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Sine/cosine pairs per time input.
    pub fourier_freqs: usize,
    pub class_embed_dim: usize,
    /// Feed the jump target `s` to the network (otherwise only `t`).
    pub condition_on_s: bool,
    pub zero_output: bool,
}

impl StudentConfig {
    pub fn new(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            widths: vec![128, 128, 128],
            activation: Activation::Tanh,
            fourier_freqs: 8,
            class_embed_dim: 8,
            condition_on_s: true,
            zero_output: false,
        }
    }

    fn input_dim(&self) -> usize {
        let time = 2 * self.fourier_freqs * if self.condition_on_s { 2 } else { 1 };
        self.dim + time + self.class_embed_dim
    }
}

/// Noise predictor `eps_theta(x, t, s, c)` and the consistency function
/// built on it. Holds the architecture only; parameters live in a
/// [`ParamStore`] so the online and EMA copies share one network.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentNet {
    config: StudentConfig,
    embed: usize,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct StudentTape {
    mlp: MlpTape,
    embed_rows: Vec<usize>,
}

/// Tape for [`StudentNet::consistency_tape`].
#[derive(Debug, Clone)]
pub struct ConsistencyTape {
    student: StudentTape,
    /// `d f / d eps_hat = -C_{t,s}` per row.
    eps_slope: Vec<f64>,
}

/// `sin(k pi u), cos(k pi u)` for `k = 1..=freqs`.
fn fourier(u: f64, freqs: usize, out: &mut Vec<f64>) {
    for k in 1..=freqs {
        let arg = k as f64 * std::f64::consts::PI * u;
        out.push(arg.sin());
        out.push(arg.cos());
    }
}

impl StudentNet {
    pub fn init<R: Rng + ?Sized>(
        config: StudentConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if config.dim == 0 || config.classes == 0 {
            return Err(Error::invalid(
                "student needs a positive dimension and class count",
            ));
        }
        let rows = config.classes + 1;
        let table = (0..rows * config.class_embed_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let embed = store.push("student.embed", vec![rows, config.class_embed_dim], table)?;
        let mut dims = vec![config.input_dim()];
        dims.extend(&config.widths);
        dims.push(config.dim);
        let mlp = Mlp::init(
            store,
            "student.mlp",
            &dims,
            config.activation,
            config.zero_output,
            rng,
        )?;
        Ok(Self { config, embed, mlp })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    fn embed_row(&self, cond: Condition) -> Result<usize> {
        match cond {
            Condition::Null => Ok(self.config.classes),
            Condition::Class(k) if k < self.config.classes => Ok(k),
            Condition::Class(k) => Err(Error::invalid(format!("class {k} out of range"))),
        }
    }

    fn assemble(
        &self,
        store: &ParamStore,
        x: &Matrix,
        t: &[usize],
        s: &[usize],
        cond: &[Condition],
        schedule: &NoiseSchedule,
    ) -> Result<(Matrix, Vec<usize>)> {
        Error::check_dim(self.config.dim, x.cols())?;
        for len in [t.len(), s.len(), cond.len()] {
            Error::check_dim(x.rows(), len)?;
        }
        let table = &store.get(self.embed).data;
        let e = self.config.class_embed_dim;
        let width = self.config.input_dim();
        let mut data = Vec::with_capacity(x.rows() * width);
        let mut rows = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            if s[i] > t[i] {
                return Err(Error::TimestepOrder(format!(
                    "student called with s={} > t={}",
                    s[i], t[i]
                )));
            }
            schedule.check_timestep(t[i])?;
            data.extend_from_slice(x.row(i));
            fourier(
                schedule.normalized(t[i]),
                self.config.fourier_freqs,
                &mut data,
            );
            if self.config.condition_on_s {
                fourier(
                    schedule.normalized(s[i]),
                    self.config.fourier_freqs,
                    &mut data,
                );
            }
            let r = self.embed_row(cond[i])?;
            data.extend_from_slice(&table[r * e..(r + 1) * e]);
            rows.push(r);
        }
        Ok((Matrix::from_vec(x.rows(), width, data)?, rows))
    }

    fn finite(out: Matrix) -> Result<Matrix> {
        if out.all_finite() {
            Ok(out)
        } else {
            let bad = out.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
            Err(Error::NonFinite {
                iteration: 0,
                what: format!(
                    "student output entry {bad} (row {})",
                    bad / out.cols().max(1)
                ),
            })
        }
    }

    /// `eps_theta(x, t, s, c)` for a batch.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Matrix,
        t: &[usize],
        s: &[usize],
        cond: &[Condition],
        schedule: &NoiseSchedule,
    ) -> Result<Matrix> {
        let (input, _) = self.assemble(store, x, t, s, cond, schedule)?;
        Self::finite(self.mlp.forward(store, &input)?)
    }

    pub fn forward_tape(
        &self,
        store: &ParamStore,
        x: &Matrix,
        t: &[usize],
        s: &[usize],
        cond: &[Condition],
        schedule: &NoiseSchedule,
    ) -> Result<(Matrix, StudentTape)> {
        let (input, embed_rows) = self.assemble(store, x, t, s, cond, schedule)?;
        let (out, mlp) = self.mlp.forward_tape(store, &input)?;
        Ok((Self::finite(out)?, StudentTape { mlp, embed_rows }))
    }

    /// Accumulates `d loss / d params` given `d loss / d eps_hat`.
    pub fn backward(
        &self,
        store: &ParamStore,
        tape: &StudentTape,
        grad_eps: &Matrix,
        grads: &mut ParamStore,
    ) -> Result<()> {
        let g_in = self.mlp.backward(store, &tape.mlp, grad_eps, grads)?;
        let e = self.config.class_embed_dim;
        let offset = self.config.input_dim() - e;
        let table = &mut grads.get_mut(self.embed).data;
        for (i, &r) in tape.embed_rows.iter().enumerate() {
            let src = &g_in.row(i)[offset..offset + e];
            for (acc, v) in table[r * e..(r + 1) * e].iter_mut().zip(src) {
                *acc += v;
            }
        }
        Ok(())
    }

    /// `f_theta(x, t, s) = ddim(x, t -> s, eps_theta(x, t, s, c))`.
    /// Rows with `s == t` return `x` unchanged whatever the parameters.
    pub fn consistency(
        &self,
        store: &ParamStore,
        x: &Matrix,
        t: &[usize],
        s: &[usize],
        cond: &[Condition],
        schedule: &NoiseSchedule,
    ) -> Result<Matrix> {
        let eps = self.forward(store, x, t, s, cond, schedule)?;
        ddim_step_batch(x, t, s, &eps, schedule)
    }

    pub fn consistency_tape(
        &self,
        store: &ParamStore,
        x: &Matrix,
        t: &[usize],
        s: &[usize],
        cond: &[Condition],
        schedule: &NoiseSchedule,
    ) -> Result<(Matrix, ConsistencyTape)> {
        let (eps, student) = self.forward_tape(store, x, t, s, cond, schedule)?;
        let out = ddim_step_batch(x, t, s, &eps, schedule)?;
        let eps_slope = t
            .iter()
            .zip(s)
            .map(|(&ti, &si)| c_coefficient(ti, si, schedule).map(|c| -c))
            .collect::<Result<Vec<_>>>()?;
        Ok((out, ConsistencyTape { student, eps_slope }))
    }

    /// Accumulates `d loss / d params` given `d loss / d f_theta`.
    pub fn consistency_backward(
        &self,
        store: &ParamStore,
        tape: &ConsistencyTape,
        grad_out: &Matrix,
        grads: &mut ParamStore,
    ) -> Result<()> {
        let mut g = grad_out.clone();
        for (i, slope) in tape.eps_slope.iter().enumerate() {
            for v in g.row_mut(i) {
                *v *= slope;
            }
        }
        self.backward(store, &tape.student, &g, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::rng::{seeded, Stream};
    use crate::schedule::ScheduleKind;

    fn setup(zero_output: bool) -> (StudentNet, ParamStore, NoiseSchedule) {
        let mut cfg = StudentConfig::new(2, 2);
        cfg.widths = vec![16, 16];
        cfg.zero_output = zero_output;
        let mut store = ParamStore::new();
        let net = StudentNet::init(cfg, &mut store, &mut seeded(4, Stream::Init)).unwrap();
        (
            net,
            store,
            NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap(),
        )
    }

    fn batch() -> (Matrix, Vec<usize>, Vec<usize>, Vec<Condition>) {
        (
            Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5], vec![-0.7, 0.1]]).unwrap(),
            vec![750, 300, 45],
            vec![600, 0, 45],
            vec![Condition::Class(0), Condition::Null, Condition::Class(1)],
        )
    }

    #[test]
    fn zero_output_predicts_zero() {
        let (net, store, sched) = setup(true);
        let (x, t, s, c) = batch();
        let eps = net.forward(&store, &x, &t, &s, &c, &sched).unwrap();
        assert!(eps.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_validates() {
        let (net, store, sched) = setup(false);
        let (x, t, s, c) = batch();
        let a = net.forward(&store, &x, &t, &s, &c, &sched).unwrap();
        let b = net.forward(&store, &x, &t, &s, &c, &sched).unwrap();
        assert_eq!(a, b);
        assert!(net
            .forward(&store, &x, &[10, 10, 10], &[20, 0, 0], &c, &sched)
            .is_err());
        assert!(net
            .forward(&store, &x, &t, &s, &[Condition::Class(2); 3], &sched)
            .is_err());
    }

    #[test]
    fn boundary_condition_is_exact() {
        let (net, store, sched) = setup(false);
        let (x, t, _, c) = batch();
        let f = net.consistency(&store, &x, &t, &t, &c, &sched).unwrap();
        assert_eq!(f, x);
    }

    #[test]
    fn consistency_gradients_match_finite_differences() {
        let (net, store, sched) = setup(false);
        let (x, t, s, c) = batch();
        let target = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, 0.5]]).unwrap();
        let loss = |p: &ParamStore| -> f64 {
            let f = net.consistency(p, &x, &t, &s, &c, &sched).unwrap();
            f.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b).powi(2))
                .sum()
        };
        let (f, tape) = net
            .consistency_tape(&store, &x, &t, &s, &c, &sched)
            .unwrap();
        let mut g = f.clone();
        for (gv, tv) in g.data_mut().iter_mut().zip(target.data()) {
            *gv = 2.0 * (*gv - tv);
        }
        let mut grads = store.zeros_like();
        net.consistency_backward(&store, &tape, &g, &mut grads)
            .unwrap();
        let report = check_gradients(&store, &grads, 1e-5, loss);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        // The third row has s == t, so the class-1 embedding row gets no gradient.
        let e = &grads.get(0).data;
        assert!(e[8..16].iter().all(|v| *v == 0.0));
    }
}
