use std::io::Write;
use std::time::Instant;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::sampling::{consistency_gap_for, endpoint_eval_for};
use crate::distill::{LabConfig, Mode, RRule, Trainer};
use crate::error::{Error, Result};
use crate::models::GmmSpec;
use crate::rng::{seeded, Stream};

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Two-sided p-value of a paired t-test on `diffs`.
pub fn paired_t_test(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    if n < 2 {
        return 1.0;
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return if mean == 0.0 { 1.0 } else { 0.0 };
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub seed: u64,
    pub delta: f64,
    pub nfe: usize,
    pub distance: f64,
    pub noise_floor: f64,
    pub consistency_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub delta: f64,
    pub nfe: usize,
    pub seeds: usize,
    /// Seeds where the STD distance is at most the baseline distance.
    pub std_wins: usize,
    pub std_median: f64,
    pub cd_median: f64,
    /// Paired t-test on per-seed distance differences.
    pub p_value: f64,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "mode,seed,delta,nfe,distance,noise_floor,consistency_gap"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:?},{},{:?},{:?},{:?}",
                r.mode, r.seed, r.delta, r.nfe, r.distance, r.noise_floor, r.consistency_gap
            )?;
        }
        Ok(())
    }

    fn distance(&self, mode: Mode, seed: u64, delta: f64, nfe: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.seed == seed && r.delta == delta && r.nfe == nfe)
            .map(|r| r.distance)
    }

    pub fn summarize(&self, delta: f64, nfe: usize) -> Result<ComparisonSummary> {
        let mut seeds: Vec<u64> = self
            .rows
            .iter()
            .filter(|r| r.delta == delta)
            .map(|r| r.seed)
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut std = Vec::new();
        let mut cd = Vec::new();
        for &seed in &seeds {
            let missing = || {
                Error::invalid(format!(
                    "table lacks a row for seed {seed}, delta {delta}, NFE {nfe}"
                ))
            };
            std.push(
                self.distance(Mode::Std, seed, delta, nfe)
                    .ok_or_else(missing)?,
            );
            cd.push(
                self.distance(Mode::BaselineCd, seed, delta, nfe)
                    .ok_or_else(missing)?,
            );
        }
        let diffs: Vec<f64> = std.iter().zip(&cd).map(|(a, b)| a - b).collect();
        Ok(ComparisonSummary {
            delta,
            nfe,
            seeds: seeds.len(),
            std_wins: diffs.iter().filter(|d| **d <= 0.0).count(),
            p_value: paired_t_test(&diffs),
            std_median: median(&mut std),
            cd_median: median(&mut cd),
        })
    }
}

/// Runs both modes from one shared warmed-up student per seed, with
/// matched iteration counts, teacher calls and random draws, then scores
/// each at every NFE.
pub fn compare_std_cd(
    lab: &LabConfig,
    seeds: &[u64],
    delta: f64,
    nfe: &[usize],
) -> Result<ComparisonTable> {
    let mut table = ComparisonTable::default();
    for &seed in seeds {
        let mut cfg = lab.clone();
        cfg.distill.seed = seed;
        cfg.teacher.delta = delta;
        cfg.eval.seed = lab.eval.seed.wrapping_add(seed);
        let mut base = Trainer::new(cfg)?;
        base.warmup()?;
        for mode in [Mode::Std, Mode::BaselineCd] {
            let mut tr = base.clone();
            tr.adjust(|d| d.mode = mode)?;
            let until = tr.config().distill.iterations;
            while tr.iteration() < until {
                tr.train_iteration()?;
            }
            let gap = consistency_gap_for(&tr)?;
            for row in endpoint_eval_for(&tr, nfe)? {
                table.rows.push(ComparisonRow {
                    mode,
                    seed,
                    delta,
                    nfe: row.nfe,
                    distance: row.distance,
                    noise_floor: row.noise_floor,
                    consistency_gap: gap,
                });
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub r_rules: Vec<RRule>,
    pub rhos: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub nfe: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub r_rule: RRule,
    pub rho: f64,
    pub lambda_adv: f64,
    pub seed: u64,
    pub nfe: usize,
    pub distance: f64,
    pub noise_floor: f64,
    pub consistency_gap: f64,
    /// Mean discriminator loss over the last 10% of iterations.
    pub final_l_d: f64,
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "r_rule,rho,lambda_adv,seed,nfe,distance,noise_floor,consistency_gap,final_l_d"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:?},{:?},{},{},{:?},{:?},{:?},{:?}",
            r.r_rule,
            r.rho,
            r.lambda_adv,
            r.seed,
            r.nfe,
            r.distance,
            r.noise_floor,
            r.consistency_gap,
            r.final_l_d
        )?;
    }
    Ok(())
}

/// Full grid `r_rules x rhos x lambdas x seeds`, every variant branched
/// from the same warmed-up student of its seed.
pub fn ablate(lab: &LabConfig, spec: &AblationSpec) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &seed in &spec.seeds {
        let mut cfg = lab.clone();
        cfg.distill.seed = seed;
        cfg.eval.seed = lab.eval.seed.wrapping_add(seed);
        let mut base = Trainer::new(cfg)?;
        base.warmup()?;
        for &rule in &spec.r_rules {
            for &rho in &spec.rhos {
                for &lambda in &spec.lambdas {
                    let mut tr = base.clone();
                    tr.adjust(|d| {
                        d.r_rule = rule;
                        d.rho = rho;
                        d.lambda_adv = lambda;
                    })?;
                    let until = tr.config().distill.iterations;
                    let tail = (until / 10).max(1) as usize;
                    let mut l_d = Vec::new();
                    while tr.iteration() < until {
                        l_d.push(tr.train_iteration()?.l_d);
                    }
                    let recent = &l_d[l_d.len().saturating_sub(tail)..];
                    let final_l_d = recent.iter().sum::<f64>() / recent.len().max(1) as f64;
                    let gap = consistency_gap_for(&tr)?;
                    for row in endpoint_eval_for(&tr, &spec.nfe)? {
                        rows.push(AblationRow {
                            r_rule: rule,
                            rho,
                            lambda_adv: lambda,
                            seed,
                            nfe: row.nfe,
                            distance: row.distance,
                            noise_floor: row.noise_floor,
                            consistency_gap: gap,
                            final_l_d,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub iterations: u64,
    pub ode_steps: usize,
    pub with_bank_steps_per_iter: f64,
    pub without_bank_steps_per_iter: f64,
    pub with_bank_seconds: f64,
    pub without_bank_seconds: f64,
    /// `without_bank_seconds / with_bank_seconds`.
    pub wall_ratio: f64,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "iterations,ode_steps,with_bank_steps_per_iter,without_bank_steps_per_iter,\
             with_bank_seconds,without_bank_seconds,wall_ratio"
        )?;
        writeln!(
            w,
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            self.iterations,
            self.ode_steps,
            self.with_bank_steps_per_iter,
            self.without_bank_steps_per_iter,
            self.with_bank_seconds,
            self.without_bank_seconds,
            self.wall_ratio
        )
    }
}

/// A many-component planar mixture with a small student, so that teacher
/// evaluations dominate iteration cost.
pub fn bench_config(ode_steps: usize, seed: u64) -> Result<LabConfig> {
    let k = 512;
    let mut rng = seeded(seed, Stream::Data);
    let means = (0..k)
        .map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
        .collect();
    let mut lab = LabConfig {
        gmm: GmmSpec::new(vec![1.0 / k as f64; k], means, vec![0.3; k])?,
        ..LabConfig::default()
    };
    lab.distill.ode_steps = ode_steps;
    lab.distill.rho = 1.0;
    lab.distill.batch_size = 64;
    lab.distill.warmup_iterations = 0;
    lab.distill.seed = seed;
    lab.model.widths = vec![16];
    lab.model.disc_widths = vec![16];
    lab.model.class_embed_dim = 4;
    lab.validate()?;
    Ok(lab)
}

/// Times `iterations` bank-driven iterations against `iterations` that
/// rebuild their input by a teacher rollout from `tau_eta`.
pub fn bank_bench(lab: &LabConfig, iterations: u64) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::invalid("bench needs at least one iteration"));
    }
    let mut cfg = lab.clone();
    cfg.distill.mode = Mode::Std;
    let mut base = Trainer::new(cfg)?;
    base.warmup()?;
    let arm = |rollout: bool| -> Result<(u64, f64)> {
        let mut tr = base.clone();
        let clock = Instant::now();
        let mut steps = 0;
        for _ in 0..iterations {
            let rec = if rollout {
                tr.train_iteration_rollout()?
            } else {
                tr.train_iteration()?
            };
            steps += rec.solver_steps;
        }
        Ok((steps, clock.elapsed().as_secs_f64()))
    };
    let (bank_steps, bank_secs) = arm(false)?;
    let (roll_steps, roll_secs) = arm(true)?;
    Ok(BenchReport {
        iterations,
        ode_steps: lab.distill.ode_steps,
        with_bank_steps_per_iter: bank_steps as f64 / iterations as f64,
        without_bank_steps_per_iter: roll_steps as f64 / iterations as f64,
        with_bank_seconds: bank_secs,
        without_bank_seconds: roll_secs,
        wall_ratio: roll_secs / bank_secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_test_edges() {
        assert_eq!(paired_t_test(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(paired_t_test(&[1.0, 1.0]), 0.0);
        let p = paired_t_test(&[0.1, -0.2, 0.05, 0.0, -0.1]);
        assert!((p - 0.607167577712837).abs() < 1e-9, "{p}");
        let p = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((p - 0.013235599563682695).abs() < 1e-9, "{p}");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
