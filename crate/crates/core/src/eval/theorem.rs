use std::fmt;
use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{c_coefficient, one_step_residual};
use crate::error::Result;
use crate::models::{
    AnalyticTeacher, Condition, GmmSpec, NoiseInformedTeacher, PerturbationField, PerturbedTeacher,
};
use crate::rng::{stream_rng, Stream};
use crate::schedule::{NoiseSchedule, StepGrid};

/// Which imperfect teacher a row exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremTeacher {
    /// Knows the injected noise and errs by exactly `delta * u`.
    Informed,
    /// Mixture MMSE predictor plus `delta * u`.
    Analytic,
}

impl fmt::Display for TheoremTeacher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TheoremTeacher::Informed => "informed",
            TheoremTeacher::Analytic => "analytic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremSweep {
    pub deltas: Vec<f64>,
    /// Source timesteps; every grid timestep below each is a target.
    pub t_values: Vec<usize>,
    pub grid: StepGrid,
    pub trials: usize,
    pub spec: GmmSpec,
    pub seed: u64,
    pub tolerance: f64,
}

impl TheoremSweep {
    /// `t in {0.1T, ..., 0.9T}`, targets on a uniform `steps`-step grid over
    /// `[0, T]`, 100 trials, `delta in {0, 0.1, 0.3, 1.0}`.
    pub fn standard(schedule: &NoiseSchedule, steps: usize, seed: u64) -> Result<Self> {
        let total = schedule.total_steps();
        Ok(Self {
            deltas: vec![0.0, 0.1, 0.3, 1.0],
            t_values: (1..=9).map(|k| (k * total + 5) / 10).collect(),
            grid: StepGrid::uniform(total, steps)?,
            trials: 100,
            spec: GmmSpec::two_blobs(),
            seed,
            tolerance: 1e-9,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremRow {
    pub teacher: TheoremTeacher,
    pub t: usize,
    pub s: usize,
    pub alpha_bar_t: f64,
    pub alpha_bar_s: f64,
    pub c: f64,
    pub delta: f64,
    /// Max over trials and coordinates of `|residual - predicted|`.
    pub max_identity_error: f64,
    pub max_residual_norm: f64,
    pub min_residual_norm: f64,
    /// Informed rows: max `|norm(2 delta) - 2 norm(delta)|`; 0 otherwise.
    pub max_doubling_error: f64,
    /// Informed rows: max `|norm - C delta |u||`; 0 otherwise.
    pub max_slope_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub rows: Vec<TheoremRow>,
    pub tolerance: f64,
}

impl TheoremRow {
    fn failures(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let tag = format!(
            "{} t={} s={} delta={}",
            self.teacher, self.t, self.s, self.delta
        );
        if !(self.max_identity_error <= tol) {
            out.push(format!(
                "{tag}: identity error {:e}",
                self.max_identity_error
            ));
        }
        if self.teacher == TheoremTeacher::Informed {
            if self.delta == 0.0 && !(self.max_residual_norm <= 1e-12) {
                out.push(format!(
                    "{tag}: exact teacher residual {:e}",
                    self.max_residual_norm
                ));
            }
            if self.delta > 0.0 && self.s < self.t && !(self.min_residual_norm > 0.0) {
                out.push(format!("{tag}: zero residual for an imperfect teacher"));
            }
            if !(self.max_doubling_error <= tol) {
                out.push(format!(
                    "{tag}: doubling error {:e}",
                    self.max_doubling_error
                ));
            }
            if !(self.max_slope_error <= tol) {
                out.push(format!("{tag}: slope error {:e}", self.max_slope_error));
            }
        }
        out
    }
}

impl TheoremReport {
    pub fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .flat_map(|r| r.failures(self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_identity_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.max_identity_error)
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "teacher,t,s,alpha_bar_t,alpha_bar_s,c_ts,delta,max_identity_error,max_residual_norm,\
             min_residual_norm,max_doubling_error,max_slope_error"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:?},{:?},{:?},{:?},{:e},{:?},{:?},{:e},{:e}",
                r.teacher,
                r.t,
                r.s,
                r.alpha_bar_t,
                r.alpha_bar_s,
                r.c,
                r.delta,
                r.max_identity_error,
                r.max_residual_norm,
                r.min_residual_norm,
                r.max_doubling_error,
                r.max_slope_error
            )?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sweeps the one-step residual identity over random `(x0, eps)` for every
/// `(teacher, t, s, delta)` combination, with a constant unit field.
pub fn verify_theorem(sweep: &TheoremSweep, schedule: &NoiseSchedule) -> Result<TheoremReport> {
    let dim = sweep.spec.dim();
    let field = PerturbationField::first_axis(dim);
    let u_norm = norm(&field.eval(&vec![0.0; dim], 0.0));
    let base = AnalyticTeacher::new(sweep.spec.clone());
    let mut rows = Vec::new();
    for (ti, &t) in sweep.t_values.iter().enumerate() {
        schedule.check_timestep(t)?;
        let targets: Vec<usize> = sweep
            .grid
            .timesteps()
            .iter()
            .copied()
            .filter(|&s| s < t)
            .collect();
        for &s in &targets {
            let c = c_coefficient(t, s, schedule)?;
            for kind in [TheoremTeacher::Informed, TheoremTeacher::Analytic] {
                for &delta in &sweep.deltas {
                    let analytic = PerturbedTeacher::new(base.clone(), delta, field.clone())?;
                    let mut row = TheoremRow {
                        teacher: kind,
                        t,
                        s,
                        alpha_bar_t: schedule.alpha_bar(t),
                        alpha_bar_s: schedule.alpha_bar(s),
                        c,
                        delta,
                        max_identity_error: 0.0,
                        max_residual_norm: 0.0,
                        min_residual_norm: f64::INFINITY,
                        max_doubling_error: 0.0,
                        max_slope_error: 0.0,
                    };
                    // Same (x0, eps) draws for every teacher and delta of a pair.
                    let mut rng =
                        stream_rng(sweep.seed, Stream::Eval, (ti as u64) << 32 | s as u64);
                    for _ in 0..sweep.trials {
                        let (x0, cond) = sweep.spec.sample(Condition::Null, &mut rng)?;
                        let eps: Vec<f64> =
                            (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                        let (res, pred) = match kind {
                            TheoremTeacher::Informed => {
                                let teacher = NoiseInformedTeacher {
                                    eps: &eps,
                                    delta,
                                    field: &field,
                                };
                                one_step_residual(&x0, &eps, t, s, &teacher, cond, schedule)?
                            }
                            TheoremTeacher::Analytic => {
                                one_step_residual(&x0, &eps, t, s, &analytic, cond, schedule)?
                            }
                        };
                        let err = res
                            .iter()
                            .zip(&pred)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        let n = norm(&res);
                        row.max_identity_error = row.max_identity_error.max(err);
                        row.max_residual_norm = row.max_residual_norm.max(n);
                        row.min_residual_norm = row.min_residual_norm.min(n);
                        if kind == TheoremTeacher::Informed {
                            let doubled = NoiseInformedTeacher {
                                eps: &eps,
                                delta: 2.0 * delta,
                                field: &field,
                            };
                            let (res2, _) =
                                one_step_residual(&x0, &eps, t, s, &doubled, cond, schedule)?;
                            row.max_doubling_error =
                                row.max_doubling_error.max((norm(&res2) - 2.0 * n).abs());
                            row.max_slope_error =
                                row.max_slope_error.max((n - c * delta * u_norm).abs());
                        }
                    }
                    rows.push(row);
                }
            }
        }
    }
    Ok(TheoremReport {
        rows,
        tolerance: sweep.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    #[test]
    fn small_sweep_passes() {
        let schedule = NoiseSchedule::new(ScheduleKind::LinearBeta, 100).unwrap();
        let mut sweep = TheoremSweep::standard(&schedule, 10, 3).unwrap();
        sweep.trials = 5;
        let report = verify_theorem(&sweep, &schedule).unwrap();
        assert!(report.passed(), "{:?}", report.failures());
        // 9 t values, t = 10k has k grid targets below it.
        assert_eq!(report.rows.len(), 45 * 2 * 4);
        let analytic_zero = report
            .rows
            .iter()
            .find(|r| r.teacher == TheoremTeacher::Analytic && r.delta == 0.0 && r.s + 10 < r.t)
            .unwrap();
        assert!(analytic_zero.min_residual_norm > 0.0);
    }

    #[test]
    fn hand_example() {
        let schedule = NoiseSchedule::from_alpha_bars(vec![1.0, 0.64, 0.25]).unwrap();
        let sweep = TheoremSweep {
            deltas: vec![0.5],
            t_values: vec![2],
            grid: StepGrid::from_timesteps(vec![2, 1, 0]).unwrap(),
            trials: 3,
            spec: GmmSpec::standard_normal(1),
            seed: 0,
            tolerance: 1e-9,
        };
        let report = verify_theorem(&sweep, &schedule).unwrap();
        let row = report
            .rows
            .iter()
            .find(|r| r.teacher == TheoremTeacher::Informed && r.s == 1)
            .unwrap();
        assert!((row.max_residual_norm - 0.3928203).abs() < 1e-7);
        assert!((row.min_residual_norm - 0.3928203).abs() < 1e-7);
        assert!(report.passed());
    }
}
