use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gmm::{Condition, GmmSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{seeded, Stream};
use crate::schedule::NoiseSchedule;

/// Anything that predicts the noise component of a noised sample.
pub trait NoisePredictor {
    fn dim(&self) -> usize;

    fn predict(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>>;

    /// Row-wise prediction; row `i` uses `t[i]` and `cond[i]`.
    fn predict_batch(
        &self,
        x: &Matrix,
        t: &[usize],
        cond: &[Condition],
        schedule: &NoiseSchedule,
    ) -> Result<Matrix> {
        Error::check_dim(x.rows(), t.len())?;
        Error::check_dim(x.rows(), cond.len())?;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let eps = self.predict(x.row(i), t[i], cond[i], schedule)?;
            out.row_mut(i).copy_from_slice(&eps);
        }
        Ok(out)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        (**self).predict(x, t, cond, schedule)
    }
}

/// The exact MMSE noise predictor of a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticTeacher {
    spec: GmmSpec,
}

struct Posterior {
    /// Normalized component responsibilities.
    resp: Vec<f64>,
    /// Log marginal density `log p_t(x)`.
    log_density: f64,
}

impl AnalyticTeacher {
    pub fn new(spec: GmmSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &GmmSpec {
        &self.spec
    }

    fn components(&self, cond: Condition) -> Result<Vec<usize>> {
        self.spec.check_condition(cond)?;
        Ok(match cond {
            Condition::Null => (0..self.spec.components()).collect(),
            Condition::Class(k) => vec![k],
        })
    }

    fn posterior(&self, x: &[f64], alpha_bar: f64, comps: &[usize]) -> Posterior {
        let d = self.spec.dim() as f64;
        let sa = alpha_bar.sqrt();
        let logs: Vec<f64> = comps
            .iter()
            .map(|&k| {
                let var = alpha_bar * self.spec.stdevs()[k].powi(2) + 1.0 - alpha_bar;
                let sq: f64 = x
                    .iter()
                    .zip(&self.spec.means()[k])
                    .map(|(xi, mi)| (xi - sa * mi).powi(2))
                    .sum();
                // Conditioning on a label drops the mixture weight.
                let log_w = if comps.len() == 1 {
                    0.0
                } else {
                    self.spec.weights()[k].ln()
                };
                log_w - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * sq / var
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        Posterior {
            resp: logs.iter().map(|l| (l - max).exp() / sum).collect(),
            log_density: max + sum.ln(),
        }
    }

    /// `E[x0 | x_t]` under the (possibly label-restricted) mixture.
    pub fn posterior_mean(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        Error::check_dim(self.spec.dim(), x.len())?;
        schedule.check_timestep(t)?;
        let comps = self.components(cond)?;
        let a = schedule.alpha_bar(t);
        let sa = a.sqrt();
        let post = self.posterior(x, a, &comps);
        let mut mean = vec![0.0; x.len()];
        for (&k, r) in comps.iter().zip(&post.resp) {
            let s2 = self.spec.stdevs()[k].powi(2);
            let gain = sa * s2 / (a * s2 + 1.0 - a);
            for ((m, xi), mk) in mean.iter_mut().zip(x).zip(&self.spec.means()[k]) {
                *m += r * (mk + gain * (xi - sa * mk));
            }
        }
        Ok(mean)
    }

    /// `log p_t(x)` of the noised marginal.
    pub fn log_density(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<f64> {
        Error::check_dim(self.spec.dim(), x.len())?;
        schedule.check_timestep(t)?;
        let comps = self.components(cond)?;
        Ok(self.posterior(x, schedule.alpha_bar(t), &comps).log_density)
    }

    /// `grad log p_t(x)`.
    pub fn score(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        Error::check_dim(self.spec.dim(), x.len())?;
        schedule.check_timestep(t)?;
        let comps = self.components(cond)?;
        let a = schedule.alpha_bar(t);
        let sa = a.sqrt();
        let post = self.posterior(x, a, &comps);
        let mut score = vec![0.0; x.len()];
        for (&k, r) in comps.iter().zip(&post.resp) {
            let var = a * self.spec.stdevs()[k].powi(2) + 1.0 - a;
            for ((g, xi), mk) in score.iter_mut().zip(x).zip(&self.spec.means()[k]) {
                *g -= r * (xi - sa * mk) / var;
            }
        }
        Ok(score)
    }
}

impl NoisePredictor for AnalyticTeacher {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn predict(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        if t == 0 {
            return Err(Error::invalid("noise prediction is singular at timestep 0"));
        }
        let mean = self.posterior_mean(x, t, cond, schedule)?;
        let (sa, sigma) = (schedule.signal(t), schedule.sigma(t));
        Ok(x.iter()
            .zip(&mean)
            .map(|(xi, mi)| (xi - sa * mi) / sigma)
            .collect())
    }
}

/// Shape of the bounded perturbation added to the exact predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Constant,
    Sinusoidal,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::Constant => "constant",
            FieldKind::Sinusoidal => "sinusoidal",
        })
    }
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" | "constant-vector" => Ok(FieldKind::Constant),
            "sinusoidal" | "seeded-sinusoidal" => Ok(FieldKind::Sinusoidal),
            other => Err(Error::invalid(format!(
                "unknown perturbation field `{other}`"
            ))),
        }
    }
}

/// Unit-bounded vector field `u(x, t)` with `|u|_inf <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationField {
    Constant(Vec<f64>),
    /// `u_j = sin(a_j . x + b_j * t/T + c_j)`.
    Sinusoidal {
        freq: Vec<Vec<f64>>,
        time_freq: Vec<f64>,
        phase: Vec<f64>,
    },
}

impl PerturbationField {
    /// Constant field; entries must lie in `[-1, 1]`.
    pub fn constant(u: Vec<f64>) -> Result<Self> {
        if u.iter().any(|v| !(v.abs() <= 1.0)) {
            return Err(Error::invalid("constant field entries must lie in [-1, 1]"));
        }
        Ok(PerturbationField::Constant(u))
    }

    /// The unit vector along the first axis.
    pub fn first_axis(dim: usize) -> Self {
        let mut u = vec![0.0; dim];
        u[0] = 1.0;
        PerturbationField::Constant(u)
    }

    pub fn new(kind: FieldKind, dim: usize, seed: u64) -> Self {
        match kind {
            FieldKind::Constant => Self::first_axis(dim),
            FieldKind::Sinusoidal => {
                let mut rng = seeded(seed, Stream::Field);
                let mut normal = |scale: f64| -> f64 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                };
                let freq = (0..dim)
                    .map(|_| (0..dim).map(|_| normal(1.0)).collect())
                    .collect();
                let time_freq = (0..dim).map(|_| normal(std::f64::consts::PI)).collect();
                let phase = (0..dim)
                    .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                    .collect();
                PerturbationField::Sinusoidal {
                    freq,
                    time_freq,
                    phase,
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64], t_norm: f64) -> Vec<f64> {
        match self {
            PerturbationField::Constant(u) => u.clone(),
            PerturbationField::Sinusoidal {
                freq,
                time_freq,
                phase,
            } => freq
                .iter()
                .zip(time_freq)
                .zip(phase)
                .map(|((a, b), c)| {
                    let arg: f64 =
                        a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() + b * t_norm + c;
                    arg.sin()
                })
                .collect(),
        }
    }
}

/// Exact predictor plus `delta * u(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedTeacher {
    base: AnalyticTeacher,
    delta: f64,
    field: PerturbationField,
}

impl PerturbedTeacher {
    pub fn new(base: AnalyticTeacher, delta: f64, field: PerturbationField) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!(
                "delta must be finite and >= 0, got {delta}"
            )));
        }
        if let PerturbationField::Constant(u) = &field {
            Error::check_dim(base.dim(), u.len())?;
        }
        Ok(Self { base, delta, field })
    }

    pub fn exact(base: AnalyticTeacher) -> Self {
        let dim = base.dim();
        Self {
            base,
            delta: 0.0,
            field: PerturbationField::first_axis(dim),
        }
    }

    pub fn base(&self) -> &AnalyticTeacher {
        &self.base
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn field(&self) -> &PerturbationField {
        &self.field
    }
}

impl NoisePredictor for PerturbedTeacher {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn predict(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        let mut eps = self.base.predict(x, t, cond, schedule)?;
        if self.delta != 0.0 {
            let u = self.field.eval(x, schedule.normalized(t));
            for (e, ui) in eps.iter_mut().zip(u) {
                *e += self.delta * ui;
            }
        }
        Ok(eps)
    }
}

/// A teacher that knows the true injected noise and errs by `delta * u`.
/// With `delta = 0` it predicts the noise exactly, so denoising recovers the
/// forward path.
#[derive(Debug, Clone, Copy)]
pub struct NoiseInformedTeacher<'a> {
    pub eps: &'a [f64],
    pub delta: f64,
    pub field: &'a PerturbationField,
}

impl NoisePredictor for NoiseInformedTeacher<'_> {
    fn dim(&self) -> usize {
        self.eps.len()
    }

    fn predict(
        &self,
        x: &[f64],
        t: usize,
        _cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        Error::check_dim(self.eps.len(), x.len())?;
        let u = self.field.eval(x, schedule.normalized(t));
        Ok(self
            .eps
            .iter()
            .zip(u)
            .map(|(e, ui)| e + self.delta * ui)
            .collect())
    }
}
