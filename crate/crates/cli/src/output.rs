//! Artifact writing. Every file carries the effective config and the build
//! stamp so a run can be reproduced from its own output.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub fn version_stamp() -> String {
    format!(
        "rieszlab {} ({})",
        env!("CARGO_PKG_VERSION"),
        env!("RIESZLAB_GIT_DESCRIBE")
    )
}

pub struct Artifacts {
    dir: PathBuf,
    name: String,
    formats: Vec<String>,
    config_echo: Value,
    /// Paths written so far, echoed on stdout at the end of the run.
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(cfg: &ExperimentConfig, subcommand: &str) -> Result<Self, String> {
        let dir = cfg
            .output
            .dir
            .clone()
            .or_else(|| std::env::var("RIESZLAB_OUT").ok())
            .unwrap_or_else(|| ".".to_string());
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir).map_err(|e| format!("output dir {}: {e}", dir.display()))?;
        let name = cfg
            .output
            .name
            .clone()
            .unwrap_or_else(|| subcommand.to_string());
        let formats = if cfg.output.formats.is_empty() {
            vec!["json".to_string(), "csv".to_string()]
        } else {
            cfg.output.formats.clone()
        };
        let config_echo = serde_json::to_value(cfg).map_err(|e| e.to_string())?;
        Ok(Self { dir, name, formats, config_echo, written: Vec::new() })
    }

    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }

    fn path(&self, suffix: &str, ext: &str) -> PathBuf {
        let base = if suffix.is_empty() {
            self.name.clone()
        } else {
            format!("{}_{suffix}", self.name)
        };
        self.dir.join(format!("{base}.{ext}"))
    }

    /// JSON report: results wrapped with the stamp and the config echo.
    pub fn write_json(&mut self, suffix: &str, results: Value) -> Result<(), String> {
        if !self.wants("json") {
            return Ok(());
        }
        let doc = json!({
            "version": version_stamp(),
            "config": self.config_echo,
            "results": results,
        });
        let path = self.path(suffix, "json");
        let text = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
        fs::write(&path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    /// CSV: comment lines with stamp and config echo, then the body.
    pub fn write_csv(&mut self, suffix: &str, body: &str) -> Result<(), String> {
        if !self.wants("csv") {
            return Ok(());
        }
        let echo = serde_json::to_string(&self.config_echo).map_err(|e| e.to_string())?;
        let path = self.path(suffix, "csv");
        let text = format!("# {}\n# config = {echo}\n{body}", version_stamp());
        fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
        self.written.push(path);
        Ok(())
    }
}

/// Floats in CSV bodies carry 17 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn read_to_string(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}
