use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{DistillConfig, LabConfig, Mode};
use super::losses::{adv_losses, sample_r, sample_target_s, std_forward, StdInputs, StdTerm};
use super::report::{Branch, IterationRecord};
use crate::bank::{BankEntry, TrajectoryBank};
use crate::dynamics::{
    guided_eps_batch, guided_step_batch, guided_step_rows, perturb_batch, CountingPredictor,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{
    AnalyticTeacher, Condition, FeatureMap, GmmSpec, PerturbationField, PerturbedTeacher,
};
use crate::nn::{
    adam_step, ema_update, AdamConfig, AdamState, Checkpoint, DiscConfig, Discriminator,
    ParamStore, StudentConfig, StudentNet,
};
use crate::rng::{seeded, stream_rng, Stream};
use crate::schedule::{NoiseSchedule, StepGrid};

pub(crate) fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Rescales `grads` onto the ball of radius `bound`; 0 leaves it alone.
pub(crate) fn clip_norm(grads: &mut ParamStore, bound: f64) {
    if bound > 0.0 {
        let norm = grads.norm();
        if norm > bound {
            grads.scale(bound / norm);
        }
    }
}

/// Builds the configured (possibly imperfect) teacher.
pub fn build_teacher(lab: &LabConfig) -> Result<PerturbedTeacher> {
    let field = PerturbationField::new(lab.teacher.field, lab.gmm.dim(), lab.teacher.field_seed);
    PerturbedTeacher::new(
        AnalyticTeacher::new(lab.gmm.clone()),
        lab.teacher.delta,
        field,
    )
}

/// Input state of one training iteration.
struct Prepared {
    branch: Branch,
    x0: Matrix,
    x: Matrix,
    start: Matrix,
    t: Vec<usize>,
    cond: Vec<Condition>,
    omega: Vec<f64>,
    /// Per row: the lane slot this state came from or will be stored in.
    slots: Vec<Option<Slot>>,
    solver_steps: u64,
}

#[derive(Clone, Copy)]
enum Slot {
    Existing(usize),
    Reserved(usize),
}

/// Complete training state: student, EMA target, discriminator, optimizer
/// moments and the trajectory banks.
///
/// Each batch row owns a lane, an independent bank of `bank_capacity`
/// single-trajectory slots, so rows of one batch sit at different
/// timesteps.
#[derive(Clone)]
pub struct Trainer {
    lab: LabConfig,
    schedule: NoiseSchedule,
    grid: StepGrid,
    teacher: CountingPredictor<PerturbedTeacher>,
    features: FeatureMap,
    net: StudentNet,
    theta: ParamStore,
    theta_minus: ParamStore,
    disc: Discriminator,
    psi: ParamStore,
    adam_theta: AdamState,
    adam_psi: AdamState,
    banks: Vec<TrajectoryBank>,
    iteration: u64,
    warmup_done: u64,
}

impl Trainer {
    pub fn new(lab: LabConfig) -> Result<Self> {
        lab.validate()?;
        let schedule = NoiseSchedule::new(lab.schedule.kind, lab.schedule.total_steps)?;
        let tau = schedule.tau_eta(lab.distill.eta)?;
        let grid = StepGrid::uniform(tau, lab.distill.ode_steps)?;
        let teacher = CountingPredictor::new(build_teacher(&lab)?);
        let dim = lab.gmm.dim();
        let m = &lab.model;
        let features = FeatureMap::new(m.feature_kind, dim, m.feature_dim, lab.distill.seed);
        let mut rng = seeded(lab.distill.seed, Stream::Init);
        let mut theta = ParamStore::new();
        let net = StudentNet::init(
            StudentConfig {
                dim,
                classes: lab.gmm.components(),
                widths: m.widths.clone(),
                activation: m.activation,
                fourier_freqs: m.fourier_freqs,
                class_embed_dim: m.class_embed_dim,
                condition_on_s: m.condition_on_s,
                zero_output: false,
            },
            &mut theta,
            &mut rng,
        )?;
        let mut psi = ParamStore::new();
        let disc = Discriminator::init(
            &DiscConfig {
                input_dim: features.output_dim(),
                widths: m.disc_widths.clone(),
                activation: m.activation,
            },
            &mut psi,
            &mut rng,
        )?;
        let banks = vec![TrajectoryBank::new(lab.distill.bank_capacity)?; lab.distill.batch_size];
        Ok(Self {
            theta_minus: theta.clone(),
            adam_theta: AdamState::new(&theta),
            adam_psi: AdamState::new(&psi),
            lab,
            schedule,
            grid,
            teacher,
            features,
            net,
            theta,
            disc,
            psi,
            banks,
            iteration: 0,
            warmup_done: 0,
        })
    }

    pub fn config(&self) -> &LabConfig {
        &self.lab
    }

    /// Changes loop settings of a live trainer, e.g. to branch several
    /// variants off one warmed-up state. Settings that shape the state
    /// (schedule, grid, batch, bank size, seed, networks) must stay put.
    pub fn adjust(&mut self, f: impl FnOnce(&mut DistillConfig)) -> Result<()> {
        let mut lab = self.lab.clone();
        f(&mut lab.distill);
        let (a, b) = (&self.lab.distill, &lab.distill);
        if a.eta != b.eta
            || a.ode_steps != b.ode_steps
            || a.batch_size != b.batch_size
            || a.bank_capacity != b.bank_capacity
            || a.seed != b.seed
            || a.warmup_iterations != b.warmup_iterations
        {
            return Err(Error::invalid(
                "adjust cannot change eta, ode_steps, batch_size, bank_capacity, seed or warmup",
            ));
        }
        lab.validate()?;
        self.lab = lab;
        Ok(())
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn grid(&self) -> &StepGrid {
        &self.grid
    }

    pub fn teacher(&self) -> &PerturbedTeacher {
        self.teacher.inner()
    }

    /// Teacher model evaluations so far (two per guided solver step).
    pub fn teacher_evals(&self) -> u64 {
        self.teacher.calls()
    }

    pub fn spec(&self) -> &GmmSpec {
        &self.lab.gmm
    }

    pub fn net(&self) -> &StudentNet {
        &self.net
    }

    pub fn theta(&self) -> &ParamStore {
        &self.theta
    }

    pub fn theta_minus(&self) -> &ParamStore {
        &self.theta_minus
    }

    pub fn psi(&self) -> &ParamStore {
        &self.psi
    }

    /// One bank per batch row.
    pub fn banks(&self) -> &[TrajectoryBank] {
        &self.banks
    }

    /// Trajectories currently in flight across all lanes.
    pub fn bank_occupancy(&self) -> usize {
        self.banks.iter().map(TrajectoryBank::occupancy).sum()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn warmup_done(&self) -> u64 {
        self.warmup_done
    }

    pub fn warmup_complete(&self) -> bool {
        self.warmup_done >= self.lab.distill.warmup_iterations
    }

    fn seed(&self) -> u64 {
        self.lab.distill.seed
    }

    /// One regression step of `eps_theta(x, t, s, c)` onto the guided teacher
    /// noise at forward-noised grid states. Returns the batch loss.
    pub fn warmup_step(&mut self) -> Result<f64> {
        let k = self.warmup_done;
        let mut rng = stream_rng(self.seed(), Stream::Warmup, k);
        let b = self.lab.distill.batch_size;
        let ts = self.grid.timesteps();
        let n = self.grid.steps();
        let (x0, cond) = self.lab.gmm.sample_batch(b, &mut rng);
        let t: Vec<usize> = (0..b).map(|_| ts[rng.random_range(0..n)]).collect();
        let eps = normal_matrix(b, x0.cols(), &mut rng);
        let omega = rng.random_range(self.lab.distill.omega_min..=self.lab.distill.omega_max);
        let s: Vec<usize> = t
            .iter()
            .map(|&ti| sample_target_s(ti, self.lab.distill.gamma, &self.grid, &mut rng).min(ti))
            .collect();
        let x = perturb_batch(&x0, &t, &eps, &self.schedule)?;
        let target = guided_eps_batch(self.teacher.inner(), &x, &t, &cond, omega, &self.schedule)?;
        let (pred, tape) = self
            .net
            .forward_tape(&self.theta, &x, &t, &s, &cond, &self.schedule)?;
        let mut grad = pred;
        let mut loss = 0.0;
        for (g, y) in grad.data_mut().iter_mut().zip(target.data()) {
            let d = *g - y;
            loss += d * d;
            *g = 2.0 * d / b as f64;
        }
        loss /= b as f64;
        let mut grads = self.theta.zeros_like();
        self.net.backward(&self.theta, &tape, &grad, &mut grads)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite {
                iteration: k,
                what: "warmup loss or gradient".into(),
            });
        }
        adam_step(
            &mut self.theta,
            &grads,
            &mut self.adam_theta,
            &AdamConfig::with_lr(self.lab.distill.lr_student),
        )?;
        self.warmup_done += 1;
        if self.warmup_complete() {
            self.finish_warmup();
        }
        Ok(loss)
    }

    fn finish_warmup(&mut self) {
        self.theta_minus = self.theta.clone();
        self.adam_theta = AdamState::new(&self.theta);
    }

    /// Runs the remaining warmup steps, returning their losses.
    pub fn warmup(&mut self) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        while !self.warmup_complete() {
            losses.push(self.warmup_step()?);
        }
        Ok(losses)
    }

    /// The per-iteration draws shared by every mode.
    fn shared_draws(&self) -> (Matrix, Vec<Condition>, Matrix, f64) {
        let (seed, it) = (self.seed(), self.iteration);
        let b = self.lab.distill.batch_size;
        let (x0, cond) = self
            .lab
            .gmm
            .sample_batch(b, &mut stream_rng(seed, Stream::Data, it));
        let eps = normal_matrix(b, x0.cols(), &mut stream_rng(seed, Stream::Noise, it));
        let d = &self.lab.distill;
        let omega = stream_rng(seed, Stream::Omega, it).random_range(d.omega_min..=d.omega_max);
        (x0, cond, eps, omega)
    }

    fn fresh(
        &self,
        x0: Matrix,
        cond: Vec<Condition>,
        eps: &Matrix,
        omega: f64,
        reserve: bool,
    ) -> Result<Prepared> {
        let tau = self.grid.start();
        let n = x0.rows();
        let t = vec![tau; n];
        let x = perturb_batch(&x0, &t, eps, &self.schedule)?;
        Ok(Prepared {
            branch: Branch::Fresh,
            start: x.clone(),
            x0,
            x,
            t,
            cond,
            omega: vec![omega; n],
            slots: self
                .banks
                .iter()
                .map(|b| {
                    if reserve {
                        b.try_reserve().map(Slot::Reserved)
                    } else {
                        None
                    }
                })
                .collect(),
            solver_steps: 0,
        })
    }

    /// Bank branch: every lane with an occupied slot contributes a uniformly
    /// drawn trajectory; empty lanes start a fresh one.
    fn draw_from_banks<R: Rng>(&self, mut fresh: Prepared, omega: f64, rng: &mut R) -> Result<Prepared> {
        fresh.branch = Branch::Bank;
        for (i, bank) in self.banks.iter().enumerate() {
            if bank.is_empty() {
                continue;
            }
            let (k, e) = bank.sample(rng)?;
            fresh.x0.row_mut(i).copy_from_slice(&e.x0);
            fresh.x.row_mut(i).copy_from_slice(&e.state);
            fresh.start.row_mut(i).copy_from_slice(&e.start);
            fresh.cond[i] = e.cond;
            fresh.t[i] = e.t;
            fresh.omega[i] = e.omega.unwrap_or(omega);
            fresh.slots[i] = Some(Slot::Existing(k));
        }
        Ok(fresh)
    }

    /// One iteration in the configured mode.
    pub fn train_iteration(&mut self) -> Result<IterationRecord> {
        let clock = Instant::now();
        let evals_before = self.teacher.calls();
        let (x0, cond, eps, omega) = self.shared_draws();
        let prep = match self.lab.distill.mode {
            Mode::Std => {
                let mut rng = stream_rng(self.seed(), Stream::Branch, self.iteration);
                let coin: f64 = rng.random();
                let fresh = self.fresh(x0, cond, &eps, omega, true)?;
                if coin < self.lab.distill.rho && self.bank_occupancy() > 0 {
                    self.draw_from_banks(fresh, omega, &mut rng)?
                } else {
                    fresh
                }
            }
            Mode::BaselineCd => {
                let mut rng = stream_rng(self.seed(), Stream::GridPosition, self.iteration);
                let ts = self.grid.timesteps();
                let n = x0.rows();
                let t: Vec<usize> = (0..n)
                    .map(|_| ts[rng.random_range(0..self.grid.steps())])
                    .collect();
                let x = perturb_batch(&x0, &t, &eps, &self.schedule)?;
                Prepared {
                    branch: Branch::Forward,
                    start: x.clone(),
                    x0,
                    x,
                    t,
                    cond,
                    omega: vec![omega; n],
                    slots: vec![None; n],
                    solver_steps: 0,
                }
            }
        };
        self.step_from(prep, omega, clock, evals_before)
    }

    /// A bank-free iteration that rebuilds its input by rolling the teacher
    /// out from `tau_eta` to a uniformly chosen grid position.
    pub fn train_iteration_rollout(&mut self) -> Result<IterationRecord> {
        let clock = Instant::now();
        let evals_before = self.teacher.calls();
        let (x0, cond, eps, omega) = self.shared_draws();
        let n = self.grid.steps();
        let j = stream_rng(self.seed(), Stream::GridPosition, self.iteration).random_range(1..=n);
        let mut prep = self.fresh(x0, cond, &eps, omega, false)?;
        prep.branch = Branch::Rollout;
        let ts = self.grid.timesteps().to_vec();
        for k in 0..j - 1 {
            let b = prep.x.rows();
            prep.x = guided_step_batch(
                &self.teacher,
                &prep.x,
                &vec![ts[k]; b],
                &vec![ts[k + 1]; b],
                &prep.cond,
                omega,
                &self.schedule,
            )?;
            prep.solver_steps += 1;
        }
        prep.t = vec![ts[j - 1]; prep.x.rows()];
        self.step_from(prep, omega, clock, evals_before)
    }

    fn step_from(
        &mut self,
        prep: Prepared,
        omega: f64,
        clock: Instant,
        evals_before: u64,
    ) -> Result<IterationRecord> {
        let it = self.iteration;
        let seed = self.seed();
        let d = self.lab.distill.clone();
        let b = prep.x.rows();
        let t_n = prep
            .t
            .iter()
            .map(|&t| self.grid.next_after(t))
            .collect::<Result<Vec<_>>>()?;
        let x_teacher = guided_step_rows(
            &self.teacher,
            &prep.x,
            &prep.t,
            &t_n,
            &prep.cond,
            &prep.omega,
            &self.schedule,
        )?;

        let mut s_rng = stream_rng(seed, Stream::TargetStep, it);
        let s: Vec<usize> = (0..b)
            .map(|i| sample_target_s(prep.t[i], d.gamma, &self.grid, &mut s_rng).min(t_n[i]))
            .collect();
        let std = std_forward(
            &self.net,
            &self.theta,
            &self.theta_minus,
            StdInputs {
                x_in: &prep.x,
                t_in: &prep.t,
                x_teacher: &x_teacher,
                t_n: &t_n,
                s: &s,
                cond: &prep.cond,
            },
            &self.schedule,
        )?;

        let mut r_rng = stream_rng(seed, Stream::RealStep, it);
        let r: Vec<usize> = s
            .iter()
            .map(|&si| sample_r(d.r_rule, si, &self.grid, &mut r_rng))
            .collect();
        let eps_r = normal_matrix(
            b,
            prep.x0.cols(),
            &mut stream_rng(seed, Stream::RealNoise, it),
        );
        let x_real = perturb_batch(&prep.x0, &r, &eps_r, &self.schedule)?;
        let adv = adv_losses(&self.disc, &self.psi, &self.features, &std.fake, &x_real)?;

        let grads = self.theta_grads(&std, &adv.grad_fake, d.lambda_adv)?;
        for (what, ok) in [
            ("distillation loss", std.loss.is_finite()),
            ("generator loss", adv.l_g.is_finite()),
            ("discriminator loss", adv.l_d.is_finite()),
            ("student gradient", grads.all_finite()),
            ("discriminator gradient", adv.disc_grads.all_finite()),
        ] {
            if !ok {
                return Err(Error::NonFinite {
                    iteration: it,
                    what: what.into(),
                });
            }
        }

        let mut grads = grads;
        clip_norm(&mut grads, d.grad_clip);
        let lr = d.lr_student * d.lr_schedule.factor(it, d.iterations);
        adam_step(
            &mut self.theta,
            &grads,
            &mut self.adam_theta,
            &AdamConfig::with_lr(lr),
        )?;
        ema_update(&mut self.theta_minus, &self.theta, d.ema_mu)?;
        adam_step(
            &mut self.psi,
            &adv.disc_grads,
            &mut self.adam_psi,
            &AdamConfig::with_lr(d.lr_disc),
        )?;

        for (i, slot) in prep.slots.iter().enumerate() {
            match slot {
                Some(Slot::Existing(k)) => {
                    self.banks[i].commit(*k, x_teacher.row(i).to_vec(), t_n[i])?
                }
                Some(Slot::Reserved(k)) => self.banks[i].insert(
                    *k,
                    BankEntry {
                        x0: prep.x0.row(i).to_vec(),
                        state: x_teacher.row(i).to_vec(),
                        start: prep.start.row(i).to_vec(),
                        cond: prep.cond[i],
                        t: t_n[i],
                        omega: d.fixed_omega_per_trajectory.then_some(prep.omega[i]),
                    },
                )?,
                None => {}
            }
        }
        self.iteration += 1;
        Ok(IterationRecord {
            iteration: it,
            branch: prep.branch,
            t_mean: prep.t.iter().sum::<usize>() as f64 / b as f64,
            omega,
            l_std: std.loss,
            l_g: adv.l_g,
            l_d: adv.l_d,
            solver_steps: prep.solver_steps + 1,
            teacher_evals: self.teacher.calls() - evals_before,
            bank_occupancy: self.bank_occupancy(),
            wall_ns: clock.elapsed().as_nanos() as u64,
        })
    }

    /// `d/dθ (L_STD + lambda L_G)`, both terms reaching θ through the same
    /// consistency output.
    fn theta_grads(
        &self,
        std: &StdTerm,
        adv_grad_fake: &Matrix,
        lambda: f64,
    ) -> Result<ParamStore> {
        let mut grad_fake = std.grad_fake.clone();
        if lambda != 0.0 {
            for (g, a) in grad_fake.data_mut().iter_mut().zip(adv_grad_fake.data()) {
                *g += lambda * a;
            }
        }
        let mut grads = self.theta.zeros_like();
        self.net
            .consistency_backward(&self.theta, &std.tape, &grad_fake, &mut grads)?;
        Ok(grads)
    }

    /// Full persistent state. The bank is not saved.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        c.push_text("config", &crate::toolkit::config::render(&self.lab))?;
        c.push_text("schedule/kind", &self.schedule.kind().to_string())?;
        c.push_f64(
            "schedule/total_steps",
            vec![self.schedule.total_steps() as f64],
        )?;
        c.push_f64("state/iteration", vec![self.iteration as f64])?;
        c.push_f64("state/warmup_done", vec![self.warmup_done as f64])?;
        c.push_store("theta", &self.theta)?;
        c.push_store("theta_minus", &self.theta_minus)?;
        c.push_store("psi", &self.psi)?;
        c.push_store("adam_theta.m", &self.adam_theta.m)?;
        c.push_store("adam_theta.v", &self.adam_theta.v)?;
        c.push_f64("adam_theta.step", vec![self.adam_theta.step as f64])?;
        c.push_store("adam_psi.m", &self.adam_psi.m)?;
        c.push_store("adam_psi.v", &self.adam_psi.v)?;
        c.push_f64("adam_psi.step", vec![self.adam_psi.step as f64])?;
        c.push_text("bank", "not persisted")?;
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let lab = crate::toolkit::config::parse(&ckpt.get_text("config")?, "checkpoint config")?;
        let mut tr = Trainer::new(lab)?;
        let kind = ckpt.get_text("schedule/kind")?;
        let steps = ckpt.get_scalar("schedule/total_steps")?;
        if kind != tr.schedule.kind().to_string() || steps != tr.schedule.total_steps() as f64 {
            return Err(Error::Checkpoint(format!(
                "schedule ({kind}, {steps}) does not match the stored config"
            )));
        }
        let count = |name: &str| -> Result<u64> {
            let v = ckpt.get_scalar(name)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Checkpoint(format!("`{name}` is not a count")));
            }
            Ok(v as u64)
        };
        tr.iteration = count("state/iteration")?;
        tr.warmup_done = count("state/warmup_done")?;
        ckpt.load_store("theta", &mut tr.theta)?;
        ckpt.load_store("theta_minus", &mut tr.theta_minus)?;
        ckpt.load_store("psi", &mut tr.psi)?;
        ckpt.load_store("adam_theta.m", &mut tr.adam_theta.m)?;
        ckpt.load_store("adam_theta.v", &mut tr.adam_theta.v)?;
        tr.adam_theta.step = count("adam_theta.step")?;
        ckpt.load_store("adam_psi.m", &mut tr.adam_psi.m)?;
        ckpt.load_store("adam_psi.v", &mut tr.adam_psi.v)?;
        tr.adam_psi.step = count("adam_psi.step")?;
        Ok(tr)
    }
}
