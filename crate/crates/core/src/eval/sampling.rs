use std::io::Write;

use rand::Rng;

use super::metrics::{random_directions, sliced_wasserstein_with};
use crate::distill::{normal_matrix, Trainer};
use crate::dynamics::{guided_step_batch, perturb_batch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{Condition, GmmSpec, NoisePredictor};
use crate::nn::{ParamStore, StudentNet};
use crate::rng::{seeded, stream_rng, Stream};
use crate::schedule::{NoiseSchedule, StepGrid};

/// A batch launched at the top of a grid: clean origins, labels and
/// forward-noised start states.
#[derive(Debug, Clone, PartialEq)]
pub struct StartBatch {
    pub x0: Matrix,
    pub cond: Vec<Condition>,
    pub x_tau: Matrix,
}

pub fn start_batch<R: Rng + ?Sized>(
    spec: &GmmSpec,
    n: usize,
    tau: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<StartBatch> {
    let (x0, cond) = spec.sample_batch(n, rng);
    let eps = normal_matrix(n, spec.dim(), rng);
    let x_tau = perturb_batch(&x0, &vec![tau; n], &eps, schedule)?;
    Ok(StartBatch { x0, cond, x_tau })
}

/// Every state of a batched guided teacher rollout over the whole grid.
pub fn teacher_rollout_batch<P: NoisePredictor + ?Sized>(
    teacher: &P,
    start: &StartBatch,
    grid: &StepGrid,
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<Vec<Matrix>> {
    let ts = grid.timesteps();
    let n = start.x_tau.rows();
    let mut states = Vec::with_capacity(ts.len());
    states.push(start.x_tau.clone());
    for k in 0..grid.steps() {
        let next = guided_step_batch(
            teacher,
            states.last().expect("nonempty"),
            &vec![ts[k]; n],
            &vec![ts[k + 1]; n],
            &start.cond,
            omega,
            schedule,
        )?;
        states.push(next);
    }
    Ok(states)
}

/// Grid positions `round(k N / nfe)` for `k = 0..=nfe`.
pub fn jump_positions(steps: usize, nfe: usize) -> Result<Vec<usize>> {
    if nfe == 0 || nfe > steps {
        return Err(Error::invalid(format!("NFE {nfe} outside 1..={steps}")));
    }
    Ok((0..=nfe)
        .map(|k| ((k * steps) as f64 / nfe as f64).round() as usize)
        .collect())
}

/// Few-step student sampling: `nfe` consistency jumps down the grid.
pub fn student_sample(
    net: &StudentNet,
    theta: &ParamStore,
    start: &StartBatch,
    grid: &StepGrid,
    nfe: usize,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    let ts = grid.timesteps();
    let n = start.x_tau.rows();
    let pos = jump_positions(grid.steps(), nfe)?;
    let mut x = start.x_tau.clone();
    for w in pos.windows(2) {
        x = net.consistency(
            theta,
            &x,
            &vec![ts[w[0]]; n],
            &vec![ts[w[1]]; n],
            &start.cond,
            schedule,
        )?;
    }
    Ok(x)
}

/// Mean over teacher-trajectory pairs `t' < t` and over the batch of
/// `|f(x_t, t, 0) - f(x_t', t', 0)|`, along rollouts of `teacher` from
/// `tau_eta`.
#[allow(clippy::too_many_arguments)]
pub fn consistency_gap<P: NoisePredictor + ?Sized>(
    net: &StudentNet,
    theta: &ParamStore,
    teacher: &P,
    spec: &GmmSpec,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    omega: f64,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = seeded(seed, Stream::Eval);
    let start = start_batch(spec, batch, grid.start(), schedule, &mut rng)?;
    let states = teacher_rollout_batch(teacher, &start, grid, omega, schedule)?;
    let ts = grid.timesteps();
    let zeros = vec![0; batch];
    let jumps = states
        .iter()
        .zip(ts)
        .map(|(x, &t)| net.consistency(theta, x, &vec![t; batch], &zeros, &start.cond, schedule))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..jumps.len() {
        for b in a + 1..jumps.len() {
            for i in 0..batch {
                let d: f64 = jumps[a]
                    .row(i)
                    .iter()
                    .zip(jumps[b].row(i))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                total += d.sqrt();
            }
            pairs += 1;
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        total / (pairs * batch) as f64
    })
}

/// [`consistency_gap`] for a trainer's current student with its configured
/// teacher, evaluation guidance scale and evaluation seed.
pub fn consistency_gap_for(tr: &Trainer) -> Result<f64> {
    let lab = tr.config();
    consistency_gap(
        tr.net(),
        tr.theta(),
        tr.teacher(),
        tr.spec(),
        tr.schedule(),
        tr.grid(),
        lab.omega_eval(),
        lab.eval.gap_batch,
        lab.eval.seed,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointRow {
    pub nfe: usize,
    /// Sliced Wasserstein from student endpoints to teacher batch A.
    pub distance: f64,
    /// Sliced Wasserstein between teacher batches A and B.
    pub noise_floor: f64,
}

pub fn write_endpoint_csv<W: Write>(rows: &[EndpointRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "nfe,distance,noise_floor,ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{:?},{:?},{:?}",
            r.nfe,
            r.distance,
            r.noise_floor,
            r.distance / r.noise_floor
        )?;
    }
    Ok(())
}

/// Student `nfe`-jump endpoints against full teacher rollouts. The student
/// batch and the two teacher batches use independent starts.
#[allow(clippy::too_many_arguments)]
pub fn endpoint_eval<P: NoisePredictor + ?Sized>(
    net: &StudentNet,
    theta: &ParamStore,
    teacher: &P,
    spec: &GmmSpec,
    schedule: &NoiseSchedule,
    grid: &StepGrid,
    omega: f64,
    nfe: &[usize],
    n: usize,
    projections: usize,
    seed: u64,
) -> Result<Vec<EndpointRow>> {
    let tau = grid.start();
    let endpoint = |stream_iter: u64| -> Result<Matrix> {
        let mut rng = stream_rng(seed, Stream::Eval, stream_iter);
        let start = start_batch(spec, n, tau, schedule, &mut rng)?;
        Ok(
            teacher_rollout_batch(teacher, &start, grid, omega, schedule)?
                .pop()
                .expect("nonempty"),
        )
    };
    let teacher_a = endpoint(1)?;
    let teacher_b = endpoint(2)?;
    let student_start = start_batch(
        spec,
        n,
        tau,
        schedule,
        &mut stream_rng(seed, Stream::Eval, 3),
    )?;
    let dirs = random_directions(
        spec.dim(),
        projections,
        &mut stream_rng(seed, Stream::Projection, 0),
    );
    let floor = sliced_wasserstein_with(&teacher_a, &teacher_b, &dirs)?;
    nfe.iter()
        .map(|&k| {
            let x = student_sample(net, theta, &student_start, grid, k, schedule)?;
            Ok(EndpointRow {
                nfe: k,
                distance: sliced_wasserstein_with(&x, &teacher_a, &dirs)?,
                noise_floor: floor,
            })
        })
        .collect()
}

/// [`endpoint_eval`] with a trainer's configured settings.
pub fn endpoint_eval_for(tr: &Trainer, nfe: &[usize]) -> Result<Vec<EndpointRow>> {
    let lab = tr.config();
    endpoint_eval(
        tr.net(),
        tr.theta(),
        tr.teacher(),
        tr.spec(),
        tr.schedule(),
        tr.grid(),
        lab.omega_eval(),
        nfe,
        lab.eval.samples,
        lab.eval.projections,
        lab.eval.seed,
    )
}
