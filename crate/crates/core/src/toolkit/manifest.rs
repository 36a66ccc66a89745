//! Per-run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::distill::LabConfig;
use crate::error::{Error, Result};
use crate::toolkit::config;

/// Environment variable naming the root under which run directories are
/// created.
pub const RUNS_ENV: &str = "STDLAB_RUNS";

pub const MANIFEST_FILE: &str = "manifest.txt";

const CONFIG_MARKER: &str = "--- config ---";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Fresh directory `<root>/<command>-s<seed>-<ms>[-k]`.
pub fn new_run_dir(root: &Path, command: &str, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = unix_ms();
    for k in 0.. {
        let name = if k == 0 {
            format!("{command}-s{seed}-{stamp}")
        } else {
            format!("{command}-s{seed}-{stamp}-{k}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// Relative to the run directory.
    pub artifacts: Vec<PathBuf>,
    pub config: LabConfig,
}

impl RunManifest {
    pub fn new(command: &str, config: &LabConfig) -> Self {
        Self {
            command: command.to_string(),
            version: crate::VERSION.to_string(),
            seed: config.distill.seed,
            started_unix_ms: unix_ms(),
            finished_unix_ms: 0,
            artifacts: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("command = {}\n", self.command));
        out.push_str(&format!("version = {}\n", self.version));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("started_unix_ms = {}\n", self.started_unix_ms));
        out.push_str(&format!("finished_unix_ms = {}\n", self.finished_unix_ms));
        for a in &self.artifacts {
            out.push_str(&format!("artifact = {}\n", a.display()));
        }
        out.push_str(CONFIG_MARKER);
        out.push('\n');
        out.push_str(&config::render(&self.config));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (head, cfg) = text
            .split_once(&format!("{CONFIG_MARKER}\n"))
            .ok_or_else(|| Error::config("manifest", "missing config block"))?;
        let mut m = RunManifest {
            command: String::new(),
            version: String::new(),
            seed: 0,
            started_unix_ms: 0,
            finished_unix_ms: 0,
            artifacts: Vec::new(),
            config: config::parse(cfg, "manifest config")?,
        };
        for (i, line) in head.lines().enumerate() {
            let loc = format!("manifest:{}", i + 1);
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(&loc, format!("expected `key = value`, got `{line}`"))
            })?;
            let v = v.trim();
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::config(&loc, format!("bad number `{v}`")))
            };
            match k.trim() {
                "command" => m.command = v.to_string(),
                "version" => m.version = v.to_string(),
                "seed" => m.seed = num(v)?,
                "started_unix_ms" => m.started_unix_ms = num(v)?,
                "finished_unix_ms" => m.finished_unix_ms = num(v)?,
                "artifact" => m.artifacts.push(PathBuf::from(v)),
                other => return Err(Error::config(&loc, format!("unknown key `{other}`"))),
            }
        }
        Ok(m)
    }

    /// Stamps the finish time and writes `manifest.txt` via a temporary file
    /// and rename.
    pub fn finish(&mut self, run_dir: &Path) -> Result<PathBuf> {
        self.finished_unix_ms = unix_ms();
        let path = run_dir.join(MANIFEST_FILE);
        let tmp = run_dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, self.render()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let mut lab = LabConfig::default();
        lab.distill.seed = 17;
        lab.teacher.delta = 0.3;
        let mut m = RunManifest::new("distill", &lab);
        m.artifacts = vec!["metrics.csv".into(), "checkpoints/final.stdl".into()];
        m.finished_unix_ms = 99;
        let back = RunManifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config.distill.seed, 17);
        assert!(RunManifest::parse("seed = 1\n").is_err());
    }

    #[test]
    fn finish_writes_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let run = new_run_dir(dir.path(), "probe", 3).unwrap();
        let other = new_run_dir(dir.path(), "probe", 3).unwrap();
        assert_ne!(run, other);
        let mut m = RunManifest::new("probe", &LabConfig::default());
        m.finish(&run).unwrap();
        assert!(!run.join("manifest.txt.tmp").exists());
        let back = RunManifest::load(&run).unwrap();
        assert_eq!(back.version, crate::VERSION);
        assert!(back.finished_unix_ms >= back.started_unix_ms);
    }
}
