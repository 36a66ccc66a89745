//! Command-line entry point.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 a failed
//! assertion or tolerance check, 3 I/O or file-format error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config;
use super::data;
use super::manifest::{new_run_dir, runs_root, RunManifest};
use super::plot::{render_svg, PlotKind, Table};
use crate::distill::{self, LabConfig, Mode, RRule, Trainer};
use crate::error::{Error, Result};
use crate::eval::{
    self, ablate, bank_bench, compare_std_cd, consistency_gap_for, endpoint_eval_for, start_batch,
    student_sample, teacher_rollout_batch, verify_theorem, write_ablation_csv, write_endpoint_csv,
    AblationSpec, TheoremSweep,
};
use crate::nn::gradcheck::network_suite;
use crate::nn::Checkpoint;
use crate::rng::{seeded, Stream};
use crate::schedule::NoiseSchedule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "trajdistill",
    version,
    about = "Single-trajectory consistency distillation lab"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Layered configuration: defaults, then `--config`, then `--set`, then
/// the dedicated flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Configuration file (`[section]` headers, `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long = "r-rule")]
    r_rule: Option<RRule>,
    #[arg(long = "lambda-adv")]
    lambda_adv: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<LabConfig> {
        let lab = match &self.config {
            Some(p) => config::load(p)?,
            None => LabConfig::default(),
        };
        let mut lab = config::apply_overrides(lab, &self.set)?;
        if let Some(v) = self.seed {
            lab.distill.seed = v;
        }
        if let Some(v) = self.rho {
            lab.distill.rho = v;
        }
        if let Some(v) = self.eta {
            lab.distill.eta = v;
        }
        if let Some(v) = self.delta {
            lab.teacher.delta = v;
        }
        if let Some(v) = self.iterations {
            lab.distill.iterations = v;
        }
        if let Some(v) = self.mode {
            lab.distill.mode = v;
        }
        if let Some(v) = self.r_rule {
            lab.distill.r_rule = v;
        }
        if let Some(v) = self.lambda_adv {
            lab.distill.lambda_adv = v;
        }
        lab.validate()?;
        Ok(lab)
    }
}

#[derive(Debug, Clone, Args)]
struct OutArgs {
    /// Run directory; defaults to a fresh directory under `$STDLAB_RUNS`
    /// (or `./runs`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a labelled dataset from the configured mixture.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        /// Output CSV file.
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a student (single-trajectory or baseline mode).
    Distill {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Iterations to add when resuming.
        #[arg(long, default_value_t = 0)]
        extra: u64,
    },
    /// Few-step student endpoints from fresh noised starts.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        nfe: usize,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Full-grid teacher endpoints from fresh noised starts.
    TeacherSample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        /// Guidance scale; defaults to the middle of the training range.
        #[arg(long)]
        omega: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sweep the one-step residual identity; fails above tolerance.
    VerifyTheorem {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Target grid resolution over [0, T].
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Endpoint distances and consistency gap of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Single-trajectory against baseline consistency distillation.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Teacher imperfection for the main rows.
        #[arg(long = "compare-delta", default_value_t = 0.3)]
        compare_delta: f64,
        /// Skip the perfect-teacher control rows.
        #[arg(long)]
        no_control: bool,
        /// Exit 2 when the expected direction is not observed.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// r-rule x rho x lambda grid.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.8")]
        rhos: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        lambdas: Vec<f64>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "below-s,equal-s,above-s,zero"
        )]
        rules: Vec<RRule>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Teacher solver steps and wall time with and without the bank.
    BankBench {
        #[arg(long, default_value_t = 50)]
        ode_steps: usize,
        #[arg(long, default_value_t = 200)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Minimum wall-clock ratio to pass.
        #[arg(long, default_value_t = 5.0)]
        min_ratio: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Finite-difference check of student and discriminator gradients.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        configs: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// CSV to SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "scatter")]
        kind: PlotKind,
        #[arg(long)]
        x: String,
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

/// Where a subcommand writes and what it has written.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn open(out: &OutArgs, command: &str, lab: &LabConfig) -> Result<Self> {
        let dir = match &out.out {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                d.clone()
            }
            None => new_run_dir(&runs_root(), command, lab.distill.seed)?,
        };
        Ok(Self {
            dir,
            manifest: RunManifest::new(command, lab),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.artifacts.push(PathBuf::from(name));
        Ok(path)
    }

    fn csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Error::io(self.dir.join(name), e))?;
        self.write(name, &buf)
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.manifest.finish(&self.dir)?;
        println!("run directory: {}", self.dir.display());
        Ok(self.dir)
    }
}

fn code_for(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Checkpoint(_) | Error::Csv(_) => EXIT_IO,
        Error::NonFinite { .. } => EXIT_CHECK,
        _ => EXIT_USAGE,
    }
}

fn load_trainer(path: &Path) -> Result<Trainer> {
    Trainer::from_checkpoint(&Checkpoint::load(path)?)
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::GenData { cfg, n, output } => {
            let lab = cfg.resolve()?;
            data::gen_data(&lab.gmm, n, lab.distill.seed, &output)?;
            println!("wrote {n} points to {}", output.display());
            Ok(EXIT_OK)
        }
        Command::Distill {
            cfg,
            out,
            resume,
            extra,
        } => {
            let (tr, report, artifacts, lab) = match resume {
                Some(path) => {
                    let ckpt = Checkpoint::load(&path)?;
                    let lab = Trainer::from_checkpoint(&ckpt)?.config().clone();
                    let mut run = Run::open(&out, "distill", &lab)?;
                    let (tr, report, artifacts) = distill::resume(&ckpt, extra, Some(&run.dir))?;
                    run.manifest.artifacts.extend(artifacts.files.clone());
                    run.finish()?;
                    (tr, report, artifacts, lab)
                }
                None => {
                    let lab = cfg.resolve()?;
                    let mut run = Run::open(&out, "distill", &lab)?;
                    let (tr, report, artifacts) = distill::run(lab.clone(), Some(&run.dir))?;
                    run.manifest.artifacts.extend(artifacts.files.clone());
                    run.finish()?;
                    (tr, report, artifacts, lab)
                }
            };
            println!(
                "mode {} seed {}: {} iterations, trailing L_STD {:.6}, {} files",
                lab.distill.mode,
                lab.distill.seed,
                tr.iteration(),
                report.trailing_std_loss(100).unwrap_or(f64::NAN),
                artifacts.files.len()
            );
            Ok(EXIT_OK)
        }
        Command::Sample {
            checkpoint,
            nfe,
            n,
            seed,
            out,
        } => {
            let tr = load_trainer(&checkpoint)?;
            let mut run = Run::open(&out, "sample", tr.config())?;
            let mut rng = seeded(seed, Stream::Eval);
            let start = start_batch(tr.spec(), n, tr.grid().start(), tr.schedule(), &mut rng)?;
            let x = student_sample(tr.net(), tr.theta(), &start, tr.grid(), nfe, tr.schedule())?;
            let name = format!("samples_nfe{nfe}.csv");
            run.csv(&name, |w| data::write_points(&x, &start.cond, w))?;
            run.finish()?;
            Ok(EXIT_OK)
        }
        Command::TeacherSample { cfg, n, omega, out } => {
            let lab = cfg.resolve()?;
            let tr = Trainer::new(lab.clone())?;
            let mut run = Run::open(&out, "teacher-sample", &lab)?;
            let mut rng = seeded(lab.eval.seed, Stream::Eval);
            let start = start_batch(tr.spec(), n, tr.grid().start(), tr.schedule(), &mut rng)?;
            let omega = omega.unwrap_or_else(|| lab.omega_eval());
            let states =
                teacher_rollout_batch(tr.teacher(), &start, tr.grid(), omega, tr.schedule())?;
            let end = states.last().expect("nonempty");
            run.csv("teacher_samples.csv", |w| {
                data::write_points(end, &start.cond, w)
            })?;
            run.finish()?;
            Ok(EXIT_OK)
        }
        Command::VerifyTheorem {
            cfg,
            steps,
            trials,
            out,
        } => {
            let lab = cfg.resolve()?;
            let schedule = NoiseSchedule::new(lab.schedule.kind, lab.schedule.total_steps)?;
            let mut sweep = TheoremSweep::standard(&schedule, steps, lab.distill.seed)?;
            sweep.trials = trials;
            sweep.spec = lab.gmm.clone();
            let report = verify_theorem(&sweep, &schedule)?;
            let mut run = Run::open(&out, "verify-theorem", &lab)?;
            run.csv("theorem.csv", |w| report.write_csv(w))?;
            run.finish()?;
            let failures = report.failures();
            println!(
                "{} rows, max identity error {:e}, {} failures",
                report.rows.len(),
                report.max_identity_error(),
                failures.len()
            );
            for f in failures.iter().take(20) {
                println!("  {f}");
            }
            Ok(if failures.is_empty() {
                EXIT_OK
            } else {
                EXIT_CHECK
            })
        }
        Command::Eval { checkpoint, out } => {
            let tr = load_trainer(&checkpoint)?;
            let mut run = Run::open(&out, "eval", tr.config())?;
            let rows = endpoint_eval_for(&tr, &tr.config().eval.nfe)?;
            let gap = consistency_gap_for(&tr)?;
            run.csv("endpoints.csv", |w| write_endpoint_csv(&rows, w))?;
            run.write(
                "consistency_gap.csv",
                format!("iteration,consistency_gap\n{},{gap:?}\n", tr.iteration()).as_bytes(),
            )?;
            run.finish()?;
            for r in &rows {
                println!(
                    "NFE {:>2}: distance {:.4} (floor {:.4})",
                    r.nfe, r.distance, r.noise_floor
                );
            }
            println!("consistency gap {gap:.5}");
            Ok(EXIT_OK)
        }
        Command::Compare {
            cfg,
            seeds,
            compare_delta,
            no_control,
            strict,
            out,
        } => {
            let lab = cfg.resolve()?;
            let seed_list: Vec<u64> = (0..seeds).map(|k| lab.distill.seed + k).collect();
            let nfe = lab.eval.nfe.clone();
            let mut table = compare_std_cd(&lab, &seed_list, compare_delta, &nfe)?;
            if !no_control {
                table
                    .rows
                    .extend(compare_std_cd(&lab, &seed_list, 0.0, &nfe)?.rows);
            }
            let mut run = Run::open(&out, "compare", &lab)?;
            run.csv("comparison.csv", |w| table.write_csv(w))?;
            let mut ok = true;
            let mut summary =
                String::from("delta,nfe,seeds,std_wins,std_median,cd_median,p_value\n");
            for &k in &nfe {
                let s = table.summarize(compare_delta, k)?;
                summary.push_str(&format!(
                    "{:?},{},{},{},{:?},{:?},{:?}\n",
                    s.delta, s.nfe, s.seeds, s.std_wins, s.std_median, s.cd_median, s.p_value
                ));
                println!(
                    "delta {} NFE {k}: STD median {:.4} vs CD {:.4}, STD wins {}/{}",
                    s.delta, s.std_median, s.cd_median, s.std_wins, s.seeds
                );
                if 2 * s.std_wins <= s.seeds {
                    println!("  expected direction NOT observed at NFE {k}");
                    ok = false;
                }
                if !no_control {
                    let c = table.summarize(0.0, k)?;
                    summary.push_str(&format!(
                        "{:?},{},{},{},{:?},{:?},{:?}\n",
                        c.delta, c.nfe, c.seeds, c.std_wins, c.std_median, c.cd_median, c.p_value
                    ));
                    println!("  control (delta 0): paired t-test p = {:.3}", c.p_value);
                }
            }
            run.write("comparison_summary.csv", summary.as_bytes())?;
            run.finish()?;
            Ok(if strict && !ok { EXIT_CHECK } else { EXIT_OK })
        }
        Command::Ablate {
            cfg,
            seeds,
            rhos,
            lambdas,
            rules,
            out,
        } => {
            let lab = cfg.resolve()?;
            let spec = AblationSpec {
                r_rules: rules,
                rhos,
                lambdas,
                seeds: (0..seeds).map(|k| lab.distill.seed + k).collect(),
                nfe: lab.eval.nfe.clone(),
            };
            let rows = ablate(&lab, &spec)?;
            let mut run = Run::open(&out, "ablate", &lab)?;
            run.csv("ablation.csv", |w| write_ablation_csv(&rows, w))?;
            run.finish()?;
            println!("{} rows", rows.len());
            Ok(EXIT_OK)
        }
        Command::BankBench {
            ode_steps,
            iterations,
            seed,
            min_ratio,
            out,
        } => {
            let lab = eval::bench_config(ode_steps, seed)?;
            let report = bank_bench(&lab, iterations)?;
            let mut run = Run::open(&out, "bank-bench", &lab)?;
            run.csv("bank_bench.csv", |w| report.write_csv(w))?;
            run.finish()?;
            println!(
                "steps/iter: with bank {:.3}, without {:.3}; wall ratio {:.2}",
                report.with_bank_steps_per_iter,
                report.without_bank_steps_per_iter,
                report.wall_ratio
            );
            let ok = report.with_bank_steps_per_iter <= 2.0 && report.wall_ratio >= min_ratio;
            Ok(if ok { EXIT_OK } else { EXIT_CHECK })
        }
        Command::Gradcheck {
            configs,
            h,
            tolerance,
            seed,
        } => {
            let cases = network_suite(configs, h, seed)?;
            let mut ok = true;
            for c in &cases {
                let pass = c.report.max_rel_error < tolerance;
                ok &= pass;
                println!(
                    "{} {:<13} #{}: max rel error {:.2e} over {} coordinates",
                    if pass { "PASS" } else { "FAIL" },
                    c.network,
                    c.config,
                    c.report.max_rel_error,
                    c.report.checked
                );
            }
            Ok(if ok { EXIT_OK } else { EXIT_CHECK })
        }
        Command::Plot {
            input,
            output,
            kind,
            x,
            y,
            title,
        } => {
            let text = fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let table = Table::parse(&text)?;
            let ys: Vec<&str> = y.iter().map(String::as_str).collect();
            let svg = render_svg(&table, kind, &x, &ys, &title)?;
            fs::write(&output, svg).map_err(|e| Error::io(&output, e))?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand, returning
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            code_for(&e)
        }
    }
}
