//! Forward noising, the deterministic DDIM update, guidance, rollouts, and
//! the one-step residual identity between a denoised state and the forward
//! state that shares its noise.

use std::cell::Cell;
use std::io::Write;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{Condition, NoisePredictor};
use crate::schedule::{NoiseSchedule, StepGrid};

/// `sqrt(a_t) x0 + sqrt(1 - a_t) eps`.
pub fn perturb(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    Error::check_dim(x0.len(), eps.len())?;
    schedule.check_timestep(t)?;
    let (a, s) = (schedule.signal(t), schedule.sigma(t));
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Row-wise [`perturb`] with per-row timesteps.
pub fn perturb_batch(
    x0: &Matrix,
    t: &[usize],
    eps: &Matrix,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    Error::check_dim(x0.rows(), t.len())?;
    Error::check_dim(x0.rows(), eps.rows())?;
    let mut out = Matrix::zeros(x0.rows(), x0.cols());
    for i in 0..x0.rows() {
        let row = perturb(x0.row(i), t[i], eps.row(i), schedule)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

fn check_order(t: usize, s: usize, schedule: &NoiseSchedule) -> Result<()> {
    schedule.check_timestep(t)?;
    if s > t {
        return Err(Error::TimestepOrder(format!(
            "target {s} is above source {t}"
        )));
    }
    Ok(())
}

/// Deterministic DDIM jump from `t` down to `s` given a noise estimate.
/// A zero-length jump returns `x_t` unchanged.
pub fn ddim_step(
    x_t: &[f64],
    t: usize,
    s: usize,
    eps_pred: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    check_order(t, s, schedule)?;
    Error::check_dim(x_t.len(), eps_pred.len())?;
    if s == t {
        return Ok(x_t.to_vec());
    }
    let (sa_t, sig_t) = (schedule.signal(t), schedule.sigma(t));
    let (sa_s, sig_s) = (schedule.signal(s), schedule.sigma(s));
    Ok(x_t
        .iter()
        .zip(eps_pred)
        .map(|(x, e)| {
            let x0_hat = (x - sig_t * e) / sa_t;
            sa_s * x0_hat + sig_s * e
        })
        .collect())
}

/// Row-wise [`ddim_step`] with per-row source and target timesteps.
pub fn ddim_step_batch(
    x_t: &Matrix,
    t: &[usize],
    s: &[usize],
    eps_pred: &Matrix,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    Error::check_dim(x_t.rows(), t.len())?;
    Error::check_dim(x_t.rows(), s.len())?;
    Error::check_dim(x_t.rows(), eps_pred.rows())?;
    let mut out = Matrix::zeros(x_t.rows(), x_t.cols());
    for i in 0..x_t.rows() {
        let row = ddim_step(x_t.row(i), t[i], s[i], eps_pred.row(i), schedule)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// `C_{t,s} = (sqrt(a_s) sqrt(1 - a_t) - sqrt(a_t) sqrt(1 - a_s)) / sqrt(a_t)`.
///
/// A DDIM jump is affine in the noise estimate with slope `-C_{t,s}`, so an
/// error `e` in the estimate displaces the landing point by `-C_{t,s} e`.
pub fn c_coefficient(t: usize, s: usize, schedule: &NoiseSchedule) -> Result<f64> {
    check_order(t, s, schedule)?;
    if s == t {
        return Ok(0.0);
    }
    let (sa_t, sig_t) = (schedule.signal(t), schedule.sigma(t));
    let (sa_s, sig_s) = (schedule.signal(s), schedule.sigma(s));
    Ok((sa_s * sig_t - sa_t * sig_s) / sa_t)
}

/// Classifier-free guidance: `(1 + w) eps(x, c) - w eps(x, null)`.
/// Always costs two model evaluations.
pub fn cfg_eps<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &[f64],
    t: usize,
    cond: Condition,
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let e_c = model.predict(x, t, cond, schedule)?;
    let e_u = model.predict(x, t, Condition::Null, schedule)?;
    Ok(combine_guidance(&e_c, &e_u, omega))
}

fn combine_guidance(e_c: &[f64], e_u: &[f64], omega: f64) -> Vec<f64> {
    e_c.iter()
        .zip(e_u)
        .map(|(c, u)| (1.0 + omega) * c - omega * u)
        .collect()
}

/// One guided solver step for a batch. Each row equals
/// `ddim_step(x, t, s, cfg_eps(..))` bit for bit.
pub fn guided_step_batch<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &Matrix,
    t: &[usize],
    s: &[usize],
    cond: &[Condition],
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    guided_step_rows(model, x, t, s, cond, &vec![omega; x.rows()], schedule)
}

/// [`guided_step_batch`] with a guidance scale per row.
pub fn guided_step_rows<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &Matrix,
    t: &[usize],
    s: &[usize],
    cond: &[Condition],
    omega: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    let eps = guided_eps_rows(model, x, t, cond, omega, schedule)?;
    ddim_step_batch(x, t, s, &eps, schedule)
}

/// Row-wise [`cfg_eps`] with one batched call per condition branch.
pub fn guided_eps_batch<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &Matrix,
    t: &[usize],
    cond: &[Condition],
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    guided_eps_rows(model, x, t, cond, &vec![omega; x.rows()], schedule)
}

pub fn guided_eps_rows<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &Matrix,
    t: &[usize],
    cond: &[Condition],
    omega: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    Error::check_dim(x.rows(), omega.len())?;
    let nulls = vec![Condition::Null; x.rows()];
    let e_c = model.predict_batch(x, t, cond, schedule)?;
    let e_u = model.predict_batch(x, t, &nulls, schedule)?;
    let mut eps = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        eps.row_mut(i)
            .copy_from_slice(&combine_guidance(e_c.row(i), e_u.row(i), omega[i]));
    }
    Ok(eps)
}

/// States visited by a deterministic reverse rollout, highest timestep first.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<(usize, Vec<f64>)>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &[f64] {
        &self.states.last().expect("trajectories are never empty").1
    }

    /// CSV rows `timestep,x_1,...,x_d` with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.states.first().map_or(0, |s| s.1.len());
        let header: Vec<String> = std::iter::once("timestep".to_string())
            .chain((1..=d).map(|i| format!("x_{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in &self.states {
            let cells: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{t},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Guided DDIM rollout along `grid`, starting from `x_tau` at `grid.start()`.
/// State `k` is the result of `k` solver steps.
pub fn rollout<P: NoisePredictor + ?Sized>(
    model: &P,
    x_tau: &[f64],
    grid: &StepGrid,
    cond: Condition,
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<Trajectory> {
    rollout_steps(model, x_tau, grid, grid.steps(), cond, omega, schedule)
}

/// The first `steps` solver steps of [`rollout`].
pub fn rollout_steps<P: NoisePredictor + ?Sized>(
    model: &P,
    x_tau: &[f64],
    grid: &StepGrid,
    steps: usize,
    cond: Condition,
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<Trajectory> {
    if steps > grid.steps() {
        return Err(Error::invalid(format!(
            "asked for {steps} steps on a {}-step grid",
            grid.steps()
        )));
    }
    let ts = grid.timesteps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x_tau.to_vec();
    states.push((ts[0], x.clone()));
    for k in 0..steps {
        let eps = cfg_eps(model, &x, ts[k], cond, omega, schedule)?;
        x = ddim_step(&x, ts[k], ts[k + 1], &eps, schedule)?;
        states.push((ts[k + 1], x.clone()));
    }
    Ok(Trajectory { states })
}

/// Both sides of the one-step identity
/// `ddim(x_t -> s) - x_s = C_{t,s} (eps - eps_teacher(x_t))`, where `x_t`
/// and `x_s` are forward samples sharing `eps`.
///
/// Returns `(residual, predicted)`; they agree up to rounding for any teacher.
pub fn one_step_residual<P: NoisePredictor + ?Sized>(
    x0: &[f64],
    eps: &[f64],
    t: usize,
    s: usize,
    teacher: &P,
    cond: Condition,
    schedule: &NoiseSchedule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_order(t, s, schedule)?;
    let x_t = perturb(x0, t, eps, schedule)?;
    let x_s = perturb(x0, s, eps, schedule)?;
    let eps_teacher = teacher.predict(&x_t, t, cond, schedule)?;
    let x_hat_s = ddim_step(&x_t, t, s, &eps_teacher, schedule)?;
    let c = c_coefficient(t, s, schedule)?;
    let residual = x_hat_s.iter().zip(&x_s).map(|(a, b)| a - b).collect();
    let predicted = eps
        .iter()
        .zip(&eps_teacher)
        .map(|(e, p)| c * (e - p))
        .collect();
    Ok((residual, predicted))
}

/// Wraps a predictor and counts model evaluations (one per batch call).
#[derive(Debug, Clone)]
pub struct CountingPredictor<P> {
    inner: P,
    calls: Cell<u64>,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: NoisePredictor> NoisePredictor for CountingPredictor<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn predict(
        &self,
        x: &[f64],
        t: usize,
        cond: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(x, t, cond, schedule)
    }

    fn predict_batch(
        &self,
        x: &Matrix,
        t: &[usize],
        cond: &[Condition],
        schedule: &NoiseSchedule,
    ) -> Result<Matrix> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict_batch(x, t, cond, schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AnalyticTeacher, GmmSpec, PerturbationField, PerturbedTeacher};
    use crate::rng::{seeded, Stream};
    use crate::schedule::ScheduleKind;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// `alpha_bar = [1, a_s, a_t]`, so `t = 2`, `s = 1`.
    fn toy_schedule(a_t: f64, a_s: f64) -> NoiseSchedule {
        NoiseSchedule::from_alpha_bars(vec![1.0, a_s, a_t]).unwrap()
    }

    struct Fixed(Vec<f64>);
    impl NoisePredictor for Fixed {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn predict(
            &self,
            _: &[f64],
            _: usize,
            _: Condition,
            _: &NoiseSchedule,
        ) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    struct ByCondition {
        cond: Vec<f64>,
        null: Vec<f64>,
    }
    impl NoisePredictor for ByCondition {
        fn dim(&self) -> usize {
            self.cond.len()
        }
        fn predict(
            &self,
            _: &[f64],
            _: usize,
            c: Condition,
            _: &NoiseSchedule,
        ) -> Result<Vec<f64>> {
            Ok(match c {
                Condition::Null => self.null.clone(),
                Condition::Class(_) => self.cond.clone(),
            })
        }
    }

    #[test]
    fn perturb_examples() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
        let x0 = [0.7, -1.1];
        let eps = [0.3, 0.9];
        assert_eq!(perturb(&x0, 0, &eps, &s).unwrap(), x0.to_vec());
        let z = perturb(&[0.0, 0.0], 400, &eps, &s).unwrap();
        assert_eq!(z, vec![s.sigma(400) * 0.3, s.sigma(400) * 0.9]);
        let toy = toy_schedule(0.25, 0.64);
        let v = perturb(&[1.0], 2, &[1.0], &toy).unwrap();
        assert!((v[0] - 1.366_025_403_8).abs() < 1e-9);
        assert!(perturb(&[1.0], 2, &[1.0, 2.0], &toy).is_err());
    }

    #[test]
    fn perturb_sample_mean() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
        let mut rng = seeded(5, Stream::Noise);
        let (x0, t, n) = ([1.5, -0.5], 300, 100_000);
        let mut acc = [0.0; 2];
        for _ in 0..n {
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let v = perturb(&x0, t, &eps, &s).unwrap();
            acc[0] += v[0];
            acc[1] += v[1];
        }
        let tol = 4.0 * ((1.0 - s.alpha_bar(t)) / n as f64).sqrt();
        for k in 0..2 {
            assert!((acc[k] / n as f64 - s.signal(t) * x0[k]).abs() < tol);
        }
    }

    #[test]
    fn ddim_examples() {
        let toy = toy_schedule(0.25, 0.64);
        let x = [1.0, -2.5];
        assert_eq!(ddim_step(&x, 2, 2, &[9.0, 9.0], &toy).unwrap(), x.to_vec());
        let scaled = ddim_step(&x, 2, 1, &[0.0, 0.0], &toy).unwrap();
        assert!((scaled[0] - 1.6).abs() < 1e-12 && (scaled[1] + 4.0).abs() < 1e-12);
        // x0_hat = (1 - 0.8660254 * 0.5) / 0.5 = 1.1339746; 0.8 * x0_hat + 0.6 * 0.5
        let v = ddim_step(&[1.0], 2, 1, &[0.5], &toy).unwrap();
        assert!((v[0] - 1.207_179_677).abs() < 1e-9);
        assert!(ddim_step(&[1.0], 1, 2, &[0.5], &toy).is_err());
    }

    #[test]
    fn c_coefficient_examples() {
        let toy = toy_schedule(0.25, 0.64);
        assert_eq!(c_coefficient(2, 2, &toy).unwrap(), 0.0);
        // 2 * (0.8 * sqrt(0.75) - 0.5 * 0.6)
        assert!((c_coefficient(2, 1, &toy).unwrap() - 0.785_640_646_1).abs() < 1e-9);
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
        let c0 = c_coefficient(600, 0, &s).unwrap();
        assert!((c0 - s.sigma(600) / s.signal(600)).abs() < 1e-12);
        assert!(c_coefficient(1, 2, &toy).is_err());
        for t in (1..=1000).step_by(37) {
            for s_ in (0..=t).step_by(11) {
                assert!(c_coefficient(t, s_, &s).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn guidance_examples() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 10).unwrap();
        let m = ByCondition {
            cond: vec![2.0],
            null: vec![1.0],
        };
        assert_eq!(
            cfg_eps(&m, &[0.0], 3, Condition::Class(0), 0.0, &s).unwrap(),
            vec![2.0]
        );
        assert_eq!(
            cfg_eps(&m, &[0.0], 3, Condition::Class(0), 1.0, &s).unwrap(),
            vec![3.0]
        );
        let same = ByCondition {
            cond: vec![0.3],
            null: vec![0.3],
        };
        let g = cfg_eps(&same, &[0.0], 3, Condition::Class(0), 7.5, &s).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_step_rollout_is_one_ddim_step() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
        let teacher = AnalyticTeacher::new(GmmSpec::standard_normal(2));
        let grid = StepGrid::from_timesteps(vec![600, 0]).unwrap();
        let x = [0.4, -1.3];
        let traj = rollout(&teacher, &x, &grid, Condition::Null, 0.0, &s).unwrap();
        let eps = teacher.predict(&x, 600, Condition::Null, &s).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_eq!(
            traj.endpoint(),
            &ddim_step(&x, 600, 0, &eps, &s).unwrap()[..]
        );
        assert!(StepGrid::from_timesteps(vec![0]).is_err());
    }

    #[test]
    fn standard_gaussian_step_is_a_contraction_factor() {
        let toy = toy_schedule(0.25, 0.64);
        let teacher = AnalyticTeacher::new(GmmSpec::standard_normal(1));
        let grid = StepGrid::from_timesteps(vec![2, 1, 0]).unwrap();
        let traj = rollout_steps(&teacher, &[1.0], &grid, 1, Condition::Null, 0.0, &toy).unwrap();
        // sqrt(0.64 * 0.25) + sqrt(0.36 * 0.75)
        assert!((traj.states[1].1[0] - 0.919_615_242_3).abs() < 1e-9);
        assert!(rollout_steps(&teacher, &[1.0], &grid, 3, Condition::Null, 0.0, &toy).is_err());
    }

    #[test]
    fn rollout_composes_through_intermediate_states() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
        let teacher = AnalyticTeacher::new(GmmSpec::two_blobs());
        let grid = StepGrid::from_timesteps(vec![700, 350, 0]).unwrap();
        let (t, m, e) = (
            grid.timesteps()[0],
            grid.timesteps()[1],
            grid.timesteps()[2],
        );
        let x = [0.9, 0.2];
        let c = Condition::Class(1);
        let traj = rollout(&teacher, &x, &grid, c, 0.5, &s).unwrap();
        let e1 = cfg_eps(&teacher, &x, t, c, 0.5, &s).unwrap();
        let mid = ddim_step(&x, t, m, &e1, &s).unwrap();
        let e2 = cfg_eps(&teacher, &mid, m, c, 0.5, &s).unwrap();
        let two = ddim_step(&mid, m, e, &e2, &s).unwrap();
        assert_eq!(traj.endpoint(), &two[..]);
        let single = ddim_step(&x, t, e, &e1, &s).unwrap();
        assert!(single.iter().zip(&two).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn residual_identity_examples() {
        let toy = toy_schedule(0.25, 0.64);
        let informed = Fixed(vec![1.0]);
        let (r, p) =
            one_step_residual(&[1.0], &[1.0], 2, 1, &informed, Condition::Null, &toy).unwrap();
        assert!(r[0].abs() < 1e-15 && p[0] == 0.0);

        let half = Fixed(vec![0.5]);
        let (r, p) = one_step_residual(&[1.0], &[1.0], 2, 1, &half, Condition::Null, &toy).unwrap();
        assert!((r[0] - 0.392_820_323).abs() < 1e-9);
        assert!((p[0] - 0.392_820_323).abs() < 1e-9);

        let (r, _) = one_step_residual(&[1.0], &[1.0], 2, 2, &half, Condition::Null, &toy).unwrap();
        assert_eq!(r, vec![0.0]);
        assert!(one_step_residual(&[1.0], &[1.0], 1, 2, &half, Condition::Null, &toy).is_err());
    }

    #[test]
    fn counting_predictor_counts_batches() {
        let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 100).unwrap();
        let teacher = CountingPredictor::new(AnalyticTeacher::new(GmmSpec::two_blobs()));
        let x = Matrix::zeros(5, 2);
        let out = guided_step_batch(
            &teacher,
            &x,
            &[50; 5],
            &[40; 5],
            &[Condition::Class(0); 5],
            1.0,
            &s,
        )
        .unwrap();
        assert_eq!(out.rows(), 5);
        assert_eq!(teacher.calls(), 2);
    }

    proptest! {
        #[test]
        fn zero_length_jump_is_identity(x in prop::collection::vec(-1e3f64..1e3, 1..5), t in 0usize..=1000, e in -10f64..10.0) {
            let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
            let eps = vec![e; x.len()];
            prop_assert_eq!(ddim_step(&x, t, t, &eps, &s).unwrap(), x);
        }

        #[test]
        fn residual_identity_holds_for_any_teacher(seed in 0u64..10_000, t in 1usize..=1000, frac in 0.0f64..1.0, delta in 0.0f64..2.0) {
            let s = NoiseSchedule::new(ScheduleKind::LinearBeta, 1000).unwrap();
            let mut rng = seeded(seed, Stream::Noise);
            let x0: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let s_step = ((t as f64) * frac) as usize;
            let teacher = PerturbedTeacher::new(
                AnalyticTeacher::new(GmmSpec::two_blobs()),
                delta,
                PerturbationField::new(crate::models::FieldKind::Sinusoidal, 2, seed),
            ).unwrap();
            let (r, p) = one_step_residual(&x0, &eps, t, s_step, &teacher, Condition::Null, &s).unwrap();
            for (a, b) in r.iter().zip(&p) {
                prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
            }
        }
    }
}
