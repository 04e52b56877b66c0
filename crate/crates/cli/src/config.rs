//! Experiment configuration: a TOML file with `[model]`, `[task]` and
//! `[output]` blocks plus a top-level seed. Unknown keys are rejected
//! everywhere; command-line flags override file keys before validation.

use serde::{Deserialize, Serialize};

use rieszlab_core::equilibrium::AnalyticPotential;
use rieszlab_core::RieszKernel;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelConfig,
    /// Subcommand-specific keys, validated by the task that runs.
    #[serde(default)]
    pub task: toml::Table,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    #[serde(default)]
    pub s: f64,
    pub n: usize,
    /// Inverse temperature. Exactly one of `beta` and `theta` may be set;
    /// `theta` fixes beta N^{1 - s/d} instead, useful across N sweeps.
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub potential: PotentialConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "family", rename_all = "snake_case")]
pub enum PotentialConfig {
    /// V(x) = a |x|^2 / 2.
    Quadratic { a: f64 },
    /// V(x) = c2 |x|^2 + c4 |x|^4, d = 2 only.
    Quartic { c2: f64, c4: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Defaults to $RIESZLAB_OUT, then the working directory.
    pub dir: Option<String>,
    /// Base name for the artifact files; defaults to the subcommand.
    pub name: Option<String>,
    #[serde(default)]
    pub formats: Vec<String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config: {e}"))
    }

    /// Range checks shared by every subcommand.
    pub fn validate(&self) -> Result<(), String> {
        let m = &self.model;
        RieszKernel::new(m.d, m.s).map_err(|e| e.to_string())?;
        if m.n == 0 {
            return Err("model.n must be positive".into());
        }
        match (m.beta, m.theta) {
            (Some(b), None) if b > 0.0 => {}
            (None, Some(t)) if t > 0.0 => {}
            (None, None) => {}
            (Some(_), Some(_)) => {
                return Err("set model.beta or model.theta, not both".into())
            }
            _ => return Err("model.beta / model.theta must be positive".into()),
        }
        match &m.potential {
            PotentialConfig::Quadratic { a } => {
                if *a <= 0.0 {
                    return Err("potential.a must be positive".into());
                }
            }
            PotentialConfig::Quartic { c2, c4 } => {
                if m.d != 2 {
                    return Err("the quartic family is planar".into());
                }
                if *c2 <= 0.0 || *c4 <= 0.0 {
                    return Err("potential.c2 and potential.c4 must be positive".into());
                }
            }
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(format!("unknown output format {f:?}"));
            }
        }
        Ok(())
    }

    pub fn kernel(&self) -> RieszKernel {
        RieszKernel::new(self.model.d, self.model.s).expect("validated")
    }

    pub fn potential(&self) -> AnalyticPotential {
        match self.model.potential {
            PotentialConfig::Quadratic { a } => AnalyticPotential::quadratic(self.model.d, a),
            PotentialConfig::Quartic { c2, c4 } => AnalyticPotential::RadialQuartic2D { c2, c4 },
        }
    }

    /// beta resolved against N when given as a fixed theta.
    pub fn beta(&self) -> Option<f64> {
        let m = &self.model;
        m.beta.or_else(|| {
            m.theta
                .map(|t| t / (m.n as f64).powf(1.0 - m.s / m.d as f64))
        })
    }

    /// Pull one task key, already knowing its type; a missing key yields the
    /// provided default. Wrong types are config errors.
    pub fn task_f64(&self, key: &str, default: f64) -> Result<f64, String> {
        match self.task.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| format!("task.{key} must be a number")),
        }
    }

    pub fn task_usize(&self, key: &str, default: usize) -> Result<usize, String> {
        match self.task.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_integer()
                .filter(|i| *i >= 0)
                .map(|i| i as usize)
                .ok_or_else(|| format!("task.{key} must be a non-negative integer")),
        }
    }

    pub fn task_str(&self, key: &str, default: &str) -> Result<String, String> {
        match self.task.get(key) {
            None => Ok(default.to_string()),
            Some(v) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("task.{key} must be a string")),
        }
    }

    /// Reject task keys outside the subcommand's documented set.
    pub fn check_task_keys(&self, allowed: &[&str]) -> Result<(), String> {
        for k in self.task.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(format!("unknown task key {k:?}"));
            }
        }
        Ok(())
    }
}

/// A minimal default so flag-only invocations work without a file.
pub fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 0,
        model: ModelConfig {
            d: 2,
            s: 0.0,
            n: 64,
            beta: None,
            theta: None,
            potential: PotentialConfig::Quadratic { a: 1.0 },
        },
        task: toml::Table::new(),
        output: OutputConfig::default(),
    }
}
