use std::fs;
use std::path::{Path, PathBuf};

use super::report::{RunReport, Snapshot};
use super::trainer::Trainer;
use crate::error::{Error, Result};
use crate::eval::consistency_gap_for;
use crate::nn::Checkpoint;

/// Files written by a run, relative to its output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], artifacts: &mut RunArtifacts) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    artifacts.files.push(PathBuf::from(name));
    Ok(())
}

fn save_checkpoint(
    tr: &Trainer,
    dir: &Path,
    name: &str,
    artifacts: &mut RunArtifacts,
) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    tr.to_checkpoint()?.save(&path)?;
    artifacts.files.push(PathBuf::from(name));
    Ok(())
}

/// Warmup, then main-loop iterations until `tr.iteration() == until`, with
/// periodic snapshots and checkpoints. A non-finite failure writes
/// `failure.stdl` (the state before the failing step) when a directory is
/// given.
pub fn train_until(
    tr: &mut Trainer,
    until: u64,
    out_dir: Option<&Path>,
    artifacts: &mut RunArtifacts,
) -> Result<RunReport> {
    let mut report = RunReport::default();
    let fail = |tr: &Trainer, err: Error, artifacts: &mut RunArtifacts| -> Error {
        if let (Some(dir), Error::NonFinite { .. }) = (out_dir, &err) {
            let _ = save_checkpoint(tr, dir, "failure.stdl", artifacts);
        }
        err
    };
    while !tr.warmup_complete() {
        let snapshot = tr.clone();
        match tr.warmup_step() {
            Ok(l) => report.warmup_losses.push(l),
            Err(e) => return Err(fail(&snapshot, e, artifacts)),
        }
    }
    let eval_every = tr.config().eval.eval_every;
    let ckpt_every = tr.config().distill.checkpoint_every;
    let snap = |tr: &Trainer, report: &mut RunReport| -> Result<()> {
        report.snapshots.push(Snapshot {
            iteration: tr.iteration(),
            consistency_gap: consistency_gap_for(tr)?,
        });
        Ok(())
    };
    if eval_every > 0 {
        snap(tr, &mut report)?;
    }
    while tr.iteration() < until {
        let before = tr.clone();
        let record = match tr.train_iteration() {
            Ok(r) => r,
            Err(e) => return Err(fail(&before, e, artifacts)),
        };
        report.records.push(record);
        let it = tr.iteration();
        if eval_every > 0 && (it % eval_every == 0 || it == until) {
            snap(tr, &mut report)?;
        }
        if let Some(dir) = out_dir {
            if ckpt_every > 0 && it % ckpt_every == 0 && it < until {
                save_checkpoint(
                    tr,
                    dir,
                    &format!("checkpoints/iter_{it:06}.stdl"),
                    artifacts,
                )?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(tr, dir, "checkpoints/final.stdl", artifacts)?;
        let mut csv = Vec::new();
        report
            .write_metrics_csv(&mut csv)
            .map_err(|e| Error::io(dir, e))?;
        write_file(dir, "metrics.csv", &csv, artifacts)?;
        let mut warm = String::from("step,loss\n");
        for (i, l) in report.warmup_losses.iter().enumerate() {
            warm.push_str(&format!("{i},{l:?}\n"));
        }
        write_file(dir, "warmup.csv", warm.as_bytes(), artifacts)?;
        if !report.snapshots.is_empty() {
            let mut csv = Vec::new();
            report
                .write_snapshots_csv(&mut csv)
                .map_err(|e| Error::io(dir, e))?;
            write_file(dir, "snapshots.csv", &csv, artifacts)?;
        }
    }
    Ok(report)
}

/// Fresh run of the configured length.
pub fn run(
    lab: crate::distill::LabConfig,
    out_dir: Option<&Path>,
) -> Result<(Trainer, RunReport, RunArtifacts)> {
    let mut tr = Trainer::new(lab)?;
    let until = tr.config().distill.iterations;
    let mut artifacts = RunArtifacts::default();
    let report = train_until(&mut tr, until, out_dir, &mut artifacts)?;
    Ok((tr, report, artifacts))
}

/// Continues a checkpointed run for `extra` iterations. Going past the
/// configured length extends it, and with it the learning-rate horizon.
pub fn resume(
    ckpt: &Checkpoint,
    extra: u64,
    out_dir: Option<&Path>,
) -> Result<(Trainer, RunReport, RunArtifacts)> {
    let mut tr = Trainer::from_checkpoint(ckpt)?;
    let until = tr.iteration() + extra;
    if until > tr.config().distill.iterations {
        tr.adjust(|d| d.iterations = until)?;
    }
    let mut artifacts = RunArtifacts::default();
    let report = train_until(&mut tr, until, out_dir, &mut artifacts)?;
    Ok((tr, report, artifacts))
}
