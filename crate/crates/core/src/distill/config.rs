use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{FeatureKind, FieldKind, GmmSpec};
use crate::nn::Activation;
use crate::schedule::ScheduleKind;

/// Where the student's input state comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// States on teacher trajectories launched at `tau_eta`, via the bank.
    Std,
    /// Forward-noised states at random grid timesteps, no bank.
    BaselineCd,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Std => "std",
            Mode::BaselineCd => "baseline-cd",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std" => Ok(Mode::Std),
            "baseline-cd" | "cd" => Ok(Mode::BaselineCd),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

/// Timestep `r` at which real samples are noised for the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RRule {
    BelowS,
    EqualS,
    AboveS,
    Zero,
}

impl RRule {
    pub const ALL: [RRule; 4] = [RRule::BelowS, RRule::EqualS, RRule::AboveS, RRule::Zero];
}

impl fmt::Display for RRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RRule::BelowS => "below-s",
            RRule::EqualS => "equal-s",
            RRule::AboveS => "above-s",
            RRule::Zero => "zero",
        })
    }
}

impl FromStr for RRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "below-s" => Ok(RRule::BelowS),
            "equal-s" => Ok(RRule::EqualS),
            "above-s" => Ok(RRule::AboveS),
            "zero" => Ok(RRule::Zero),
            other => Err(Error::invalid(format!("unknown r rule `{other}`"))),
        }
    }
}

/// Student learning rate over the main loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr_student` down to 0 at `iterations`.
    Cosine,
}

impl LrSchedule {
    /// Multiplier at main-loop iteration `it` of `total`.
    pub fn factor(self, it: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let f = (it as f64 / total.max(1) as f64).min(1.0);
                0.5 * (1.0 + (std::f64::consts::PI * f).cos())
            }
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::invalid(format!("unknown lr schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub total_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::LinearBeta,
            total_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub eta: f64,
    pub rho: f64,
    pub gamma: f64,
    pub bank_capacity: usize,
    pub ema_mu: f64,
    pub lambda_adv: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub ode_steps: usize,
    pub iterations: u64,
    pub warmup_iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
    pub r_rule: RRule,
    pub fixed_omega_per_trajectory: bool,
    pub lr_student: f64,
    pub lr_disc: f64,
    pub lr_schedule: LrSchedule,
    /// Bound on the L2 norm of the student's main-loop gradient; 0 disables.
    pub grad_clip: f64,
    /// Checkpoint cadence in iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            eta: 0.75,
            rho: 0.8,
            gamma: 0.9,
            bank_capacity: 4,
            ema_mu: 0.95,
            lambda_adv: 0.1,
            omega_min: 0.0,
            omega_max: 2.0,
            ode_steps: 50,
            iterations: 5000,
            warmup_iterations: 2000,
            batch_size: 256,
            seed: 0,
            mode: Mode::Std,
            r_rule: RRule::BelowS,
            fixed_omega_per_trajectory: false,
            lr_student: 2e-3,
            lr_disc: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            grad_clip: 0.1,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub fourier_freqs: usize,
    pub class_embed_dim: usize,
    pub condition_on_s: bool,
    pub disc_widths: Vec<usize>,
    pub feature_kind: FeatureKind,
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![128, 128, 128],
            activation: Activation::Tanh,
            fourier_freqs: 8,
            class_embed_dim: 8,
            condition_on_s: true,
            disc_widths: vec![64, 64],
            feature_kind: FeatureKind::RandomProjection,
            feature_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub delta: f64,
    pub field: FieldKind,
    pub field_seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            field: FieldKind::Constant,
            field_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub nfe: Vec<usize>,
    pub samples: usize,
    pub projections: usize,
    /// Trajectories used for the consistency gap.
    pub gap_batch: usize,
    /// Evaluation cadence during training; 0 disables snapshots.
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            nfe: vec![1, 2, 4, 8],
            samples: 4096,
            projections: 128,
            gap_batch: 256,
            eval_every: 0,
            seed: 1,
        }
    }
}

/// Everything a run needs, as resolved from defaults, file and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct LabConfig {
    pub schedule: ScheduleConfig,
    pub distill: DistillConfig,
    pub model: ModelConfig,
    pub gmm: GmmSpec,
    pub teacher: TeacherConfig,
    pub eval: EvalConfig,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            distill: DistillConfig::default(),
            model: ModelConfig::default(),
            gmm: GmmSpec::two_blobs(),
            teacher: TeacherConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn range(ok: bool, key: &str, msg: impl fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, msg.to_string()))
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.distill;
        range(
            self.schedule.total_steps >= 2,
            "schedule.total_steps",
            "must be at least 2",
        )?;
        range(
            self.schedule.kind != ScheduleKind::Explicit,
            "schedule.kind",
            "explicit schedules cannot be configured",
        )?;
        range(
            d.eta > 0.0 && d.eta <= 1.0,
            "distill.eta",
            format!("{} outside (0, 1]", d.eta),
        )?;
        range(
            (0.0..=1.0).contains(&d.rho),
            "distill.rho",
            format!("{} outside [0, 1]", d.rho),
        )?;
        range(
            (0.0..=1.0).contains(&d.gamma),
            "distill.gamma",
            format!("{} outside [0, 1]", d.gamma),
        )?;
        range(
            d.bank_capacity >= 1,
            "distill.bank_capacity",
            "must be at least 1",
        )?;
        range(
            (0.0..=1.0).contains(&d.ema_mu),
            "distill.ema_mu",
            format!("{} outside [0, 1]", d.ema_mu),
        )?;
        range(
            d.lambda_adv >= 0.0 && d.lambda_adv.is_finite(),
            "distill.lambda_adv",
            format!("{} must be a finite value >= 0", d.lambda_adv),
        )?;
        range(
            d.omega_min.is_finite() && d.omega_max.is_finite() && d.omega_min <= d.omega_max,
            "distill.omega_min",
            format!(
                "need omega_min <= omega_max, got {} > {}",
                d.omega_min, d.omega_max
            ),
        )?;
        range(d.ode_steps >= 1, "distill.ode_steps", "must be at least 1")?;
        range(
            d.batch_size >= 1,
            "distill.batch_size",
            "must be at least 1",
        )?;
        range(d.lr_student > 0.0, "distill.lr_student", "must be positive")?;
        range(d.lr_disc > 0.0, "distill.lr_disc", "must be positive")?;
        range(
            d.grad_clip >= 0.0 && d.grad_clip.is_finite(),
            "distill.grad_clip",
            "must be a finite value >= 0",
        )?;
        let tau = (d.eta * self.schedule.total_steps as f64).round().max(1.0) as usize;
        range(
            d.ode_steps <= tau,
            "distill.ode_steps",
            format!("{} steps do not fit below tau = {tau}", d.ode_steps),
        )?;
        let m = &self.model;
        range(
            !m.widths.is_empty() && m.widths.iter().all(|w| *w > 0),
            "model.widths",
            "need positive widths",
        )?;
        range(
            m.disc_widths.iter().all(|w| *w > 0),
            "model.disc_widths",
            "need positive widths",
        )?;
        range(
            m.feature_dim >= 1,
            "model.feature_dim",
            "must be at least 1",
        )?;
        range(
            self.teacher.delta >= 0.0 && self.teacher.delta.is_finite(),
            "teacher.delta",
            "must be a finite value >= 0",
        )?;
        let e = &self.eval;
        range(
            e.nfe.iter().all(|n| (1..=d.ode_steps).contains(n)),
            "eval.nfe",
            format!("values must lie in 1..={}", d.ode_steps),
        )?;
        range(e.samples >= 1, "eval.samples", "must be at least 1")?;
        range(e.projections >= 1, "eval.projections", "must be at least 1")?;
        range(e.gap_batch >= 1, "eval.gap_batch", "must be at least 1")?;
        Ok(())
    }

    /// Guidance scale used when a single fixed value is needed at
    /// evaluation time: the midpoint of the training range.
    pub fn omega_eval(&self) -> f64 {
        0.5 * (self.distill.omega_min + self.distill.omega_max)
    }
}
