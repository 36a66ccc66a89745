//! Plain-text `key = value` configuration with `[section]` headers.
//!
//! Resolution is layered: built-in defaults, then a file, then
//! `section.key=value` overrides. Unknown sections and keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::distill::LabConfig;
use crate::error::{Error, Result};
use crate::models::GmmSpec;

#[derive(Default)]
struct GmmPending {
    weights: Option<String>,
    means: Option<String>,
    stdevs: Option<String>,
}

impl GmmPending {
    fn resolve(self, lab: &mut LabConfig, location: &str) -> Result<()> {
        if self.weights.is_none() && self.means.is_none() && self.stdevs.is_none() {
            return Ok(());
        }
        let current = lab.gmm.to_entries();
        let pick = |v: Option<String>, i: usize| v.unwrap_or_else(|| current[i].1.clone());
        let (w, m, s) = (
            pick(self.weights, 0),
            pick(self.means, 1),
            pick(self.stdevs, 2),
        );
        lab.gmm = GmmSpec::from_entries(&w, &m, &s)
            .map_err(|e| Error::config(format!("{location} [gmm]"), e.to_string()))?;
        Ok(())
    }
}

fn value<T: FromStr>(raw: &str, location: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| Error::config(location, format!("cannot parse `{raw}`: {e}")))
}

fn list<T: FromStr>(raw: &str, location: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| value(p, location))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn assign(
    lab: &mut LabConfig,
    gmm: &mut GmmPending,
    section: &str,
    key: &str,
    raw: &str,
    location: &str,
) -> Result<()> {
    let raw = raw.trim();
    let loc = format!("{location} {section}.{key}");
    let loc = loc.as_str();
    match (section, key) {
        ("schedule", "kind") => lab.schedule.kind = value(raw, loc)?,
        ("schedule", "total_steps") => lab.schedule.total_steps = value(raw, loc)?,

        ("distill", "eta") => lab.distill.eta = value(raw, loc)?,
        ("distill", "rho") => lab.distill.rho = value(raw, loc)?,
        ("distill", "gamma") => lab.distill.gamma = value(raw, loc)?,
        ("distill", "bank_capacity") => lab.distill.bank_capacity = value(raw, loc)?,
        ("distill", "ema_mu") => lab.distill.ema_mu = value(raw, loc)?,
        ("distill", "lambda_adv") => lab.distill.lambda_adv = value(raw, loc)?,
        ("distill", "omega_min") => lab.distill.omega_min = value(raw, loc)?,
        ("distill", "omega_max") => lab.distill.omega_max = value(raw, loc)?,
        ("distill", "ode_steps") => lab.distill.ode_steps = value(raw, loc)?,
        ("distill", "iterations") => lab.distill.iterations = value(raw, loc)?,
        ("distill", "warmup_iterations") => lab.distill.warmup_iterations = value(raw, loc)?,
        ("distill", "batch_size") => lab.distill.batch_size = value(raw, loc)?,
        ("distill", "seed") => lab.distill.seed = value(raw, loc)?,
        ("distill", "mode") => lab.distill.mode = value(raw, loc)?,
        ("distill", "r_rule") => lab.distill.r_rule = value(raw, loc)?,
        ("distill", "fixed_omega_per_trajectory") => {
            lab.distill.fixed_omega_per_trajectory = value(raw, loc)?
        }
        ("distill", "lr_student") => lab.distill.lr_student = value(raw, loc)?,
        ("distill", "lr_disc") => lab.distill.lr_disc = value(raw, loc)?,
        ("distill", "lr_schedule") => lab.distill.lr_schedule = value(raw, loc)?,
        ("distill", "grad_clip") => lab.distill.grad_clip = value(raw, loc)?,
        ("distill", "checkpoint_every") => lab.distill.checkpoint_every = value(raw, loc)?,

        ("model", "widths") => lab.model.widths = list(raw, loc)?,
        ("model", "activation") => lab.model.activation = value(raw, loc)?,
        ("model", "fourier_freqs") => lab.model.fourier_freqs = value(raw, loc)?,
        ("model", "class_embed_dim") => lab.model.class_embed_dim = value(raw, loc)?,
        ("model", "condition_on_s") => lab.model.condition_on_s = value(raw, loc)?,
        ("model", "disc_widths") => lab.model.disc_widths = list(raw, loc)?,
        ("model", "feature_kind") => lab.model.feature_kind = value(raw, loc)?,
        ("model", "feature_dim") => lab.model.feature_dim = value(raw, loc)?,

        ("gmm", "weights") => gmm.weights = Some(raw.to_string()),
        ("gmm", "means") => gmm.means = Some(raw.to_string()),
        ("gmm", "stdevs") => gmm.stdevs = Some(raw.to_string()),

        ("teacher", "delta") => lab.teacher.delta = value(raw, loc)?,
        ("teacher", "field") => lab.teacher.field = value(raw, loc)?,
        ("teacher", "field_seed") => lab.teacher.field_seed = value(raw, loc)?,

        ("eval", "nfe") => lab.eval.nfe = list(raw, loc)?,
        ("eval", "samples") => lab.eval.samples = value(raw, loc)?,
        ("eval", "projections") => lab.eval.projections = value(raw, loc)?,
        ("eval", "gap_batch") => lab.eval.gap_batch = value(raw, loc)?,
        ("eval", "eval_every") => lab.eval.eval_every = value(raw, loc)?,
        ("eval", "seed") => lab.eval.seed = value(raw, loc)?,

        _ => return Err(Error::config(loc, "unknown key")),
    }
    Ok(())
}

/// Applies the file text on top of `base` and validates the result.
pub fn parse_onto(base: LabConfig, text: &str, origin: &str) -> Result<LabConfig> {
    let mut lab = base;
    let mut gmm = GmmPending::default();
    let mut section: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let location = format!("{origin}:{}", i + 1);
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::config(&location, "unterminated section header"))?
                .trim();
            section = Some(name.to_string());
            continue;
        }
        let (key, raw) = line.split_once('=').ok_or_else(|| {
            Error::config(&location, format!("expected `key = value`, got `{line}`"))
        })?;
        let section = section
            .as_deref()
            .ok_or_else(|| Error::config(&location, "key outside of any section"))?;
        assign(&mut lab, &mut gmm, section, key.trim(), raw, &location)?;
    }
    gmm.resolve(&mut lab, origin)?;
    lab.validate()?;
    Ok(lab)
}

/// Defaults overlaid with `text`.
pub fn parse(text: &str, origin: &str) -> Result<LabConfig> {
    parse_onto(LabConfig::default(), text, origin)
}

pub fn load(path: &Path) -> Result<LabConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}

/// Applies `section.key=value` overrides in order and validates.
pub fn apply_overrides<S: AsRef<str>>(base: LabConfig, overrides: &[S]) -> Result<LabConfig> {
    let mut lab = base;
    let mut gmm = GmmPending::default();
    for o in overrides {
        let o = o.as_ref();
        let (path, raw) = o.split_once('=').ok_or_else(|| {
            Error::config("--set", format!("expected section.key=value, got `{o}`"))
        })?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::config("--set", format!("expected section.key, got `{path}`")))?;
        assign(&mut lab, &mut gmm, section, key, raw, "--set")?;
    }
    gmm.resolve(&mut lab, "--set")?;
    lab.validate()?;
    Ok(lab)
}

/// Canonical text form; `parse(&render(c))` reproduces `c` exactly.
pub fn render(lab: &LabConfig) -> String {
    let d = &lab.distill;
    let m = &lab.model;
    let e = &lab.eval;
    let f = |v: f64| format!("{v:?}");
    let sections: Vec<(&str, Vec<(String, String)>)> = vec![
        (
            "schedule",
            vec![
                ("kind".into(), lab.schedule.kind.to_string()),
                ("total_steps".into(), lab.schedule.total_steps.to_string()),
            ],
        ),
        (
            "distill",
            vec![
                ("eta".into(), f(d.eta)),
                ("rho".into(), f(d.rho)),
                ("gamma".into(), f(d.gamma)),
                ("bank_capacity".into(), d.bank_capacity.to_string()),
                ("ema_mu".into(), f(d.ema_mu)),
                ("lambda_adv".into(), f(d.lambda_adv)),
                ("omega_min".into(), f(d.omega_min)),
                ("omega_max".into(), f(d.omega_max)),
                ("ode_steps".into(), d.ode_steps.to_string()),
                ("iterations".into(), d.iterations.to_string()),
                ("warmup_iterations".into(), d.warmup_iterations.to_string()),
                ("batch_size".into(), d.batch_size.to_string()),
                ("seed".into(), d.seed.to_string()),
                ("mode".into(), d.mode.to_string()),
                ("r_rule".into(), d.r_rule.to_string()),
                (
                    "fixed_omega_per_trajectory".into(),
                    d.fixed_omega_per_trajectory.to_string(),
                ),
                ("lr_student".into(), f(d.lr_student)),
                ("lr_disc".into(), f(d.lr_disc)),
                ("lr_schedule".into(), d.lr_schedule.to_string()),
                ("grad_clip".into(), f(d.grad_clip)),
                ("checkpoint_every".into(), d.checkpoint_every.to_string()),
            ],
        ),
        (
            "model",
            vec![
                ("widths".into(), join(&m.widths)),
                ("activation".into(), m.activation.to_string()),
                ("fourier_freqs".into(), m.fourier_freqs.to_string()),
                ("class_embed_dim".into(), m.class_embed_dim.to_string()),
                ("condition_on_s".into(), m.condition_on_s.to_string()),
                ("disc_widths".into(), join(&m.disc_widths)),
                ("feature_kind".into(), m.feature_kind.to_string()),
                ("feature_dim".into(), m.feature_dim.to_string()),
            ],
        ),
        ("gmm", lab.gmm.to_entries()),
        (
            "teacher",
            vec![
                ("delta".into(), f(lab.teacher.delta)),
                ("field".into(), lab.teacher.field.to_string()),
                ("field_seed".into(), lab.teacher.field_seed.to_string()),
            ],
        ),
        (
            "eval",
            vec![
                ("nfe".into(), join(&e.nfe)),
                ("samples".into(), e.samples.to_string()),
                ("projections".into(), e.projections.to_string()),
                ("gap_batch".into(), e.gap_batch.to_string()),
                ("eval_every".into(), e.eval_every.to_string()),
                ("seed".into(), e.seed.to_string()),
            ],
        ),
    ];
    let mut out = String::new();
    for (i, (name, entries)) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "[{name}]");
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{Mode, RRule};

    #[test]
    fn empty_file_gives_defaults() {
        let lab = parse("", "empty").unwrap();
        assert_eq!(lab, LabConfig::default());
        assert_eq!(lab.distill.eta, 0.75);
        assert_eq!(lab.distill.bank_capacity, 4);
        assert_eq!(lab.distill.gamma, 0.9);
        assert_eq!(lab.distill.rho, 0.8);
    }

    #[test]
    fn render_round_trips() {
        let mut lab = LabConfig::default();
        lab.distill.mode = Mode::BaselineCd;
        lab.distill.r_rule = RRule::Zero;
        lab.distill.lr_student = 0.1 + 0.2;
        lab.model.disc_widths = vec![];
        lab.teacher.delta = 0.3;
        lab.gmm = GmmSpec::new(
            vec![0.2, 0.8],
            vec![vec![0.1, 1.0 / 3.0], vec![-2.0, 5.5]],
            vec![0.3, 1.7],
        )
        .unwrap();
        let text = render(&lab);
        assert_eq!(parse(&text, "rendered").unwrap(), lab);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(
            parse("[distill]\neta = 1.5\n", "f"),
            Err(Error::Config { .. })
        ));
        assert!(parse("[distill]\nbogus = 1\n", "f").is_err());
        assert!(parse("[nowhere]\neta = 0.5\n", "f").is_err());
        assert!(parse("eta = 0.5\n", "f").is_err());
        assert!(parse("[distill]\neta 0.5\n", "f").is_err());
        assert!(parse("[distill\n", "f").is_err());
        assert!(parse("[distill]\nrho = lots\n", "f").is_err());
        let err = parse("# header\n\n[distill]\nbogus = 1\n", "cfg.ini").unwrap_err();
        assert!(err.to_string().contains("cfg.ini:4"), "{err}");
    }

    #[test]
    fn overrides_win_over_file() {
        let file = parse("[distill]\nrho = 0.5\n", "f").unwrap();
        assert_eq!(file.distill.rho, 0.5);
        let lab = apply_overrides(file, &["distill.rho=0.2"]).unwrap();
        assert_eq!(lab.distill.rho, 0.2);
        assert!(apply_overrides(LabConfig::default(), &["rho=0.2"]).is_err());
        assert!(apply_overrides(LabConfig::default(), &["distill.rho"]).is_err());
    }

    #[test]
    fn partial_gmm_update_keeps_other_entries() {
        let lab = apply_overrides(LabConfig::default(), &["gmm.stdevs=0.25, 0.75"]).unwrap();
        let e = lab.gmm.to_entries();
        assert_eq!(e[2].1, "0.25, 0.75");
        assert_eq!(e[0].1, LabConfig::default().gmm.to_entries()[0].1);
        assert!(apply_overrides(LabConfig::default(), &["gmm.weights=1.0"]).is_err());
    }
}
