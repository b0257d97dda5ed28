//! Experiment configuration: a flat TOML file with one section per
//! pipeline stage. Unknown keys are rejected so stale configs fail
//! loudly. Every field has a default; an empty file is a valid config
//! that runs the synthetic three-moons benchmark.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub dataset: DatasetConfig,
    pub graph: GraphConfig,
    pub kernel: KernelConfig,
    pub constraints: ConstraintConfig,
    pub init: InitConfig,
    pub run: RunConfig,
    pub probe: ProbeConfig,
}

/// Input data: a generator or a file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// `three-moons`, `delimited`, `idx`, or `embedding`.
    pub kind: String,
    /// Feature file for the file-backed kinds.
    pub path: Option<PathBuf>,
    /// Label file for `idx` and `embedding`.
    pub labels_path: Option<PathBuf>,
    /// Field separator for `delimited`; a single space means any
    /// whitespace.
    pub separator: String,
    /// `first`, `last`, or a zero-based column index.
    pub label_column: String,
    /// Points per moon for the generator.
    pub points_per_class: usize,
    /// Noise standard deviation for the generator.
    pub noise_sd: f64,
    /// Ambient dimension for the generator.
    pub ambient_dim: usize,
    /// Draw a fresh synthetic sample for every trial; file-backed
    /// datasets ignore this.
    pub resample_per_trial: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: "three-moons".into(),
            path: None,
            labels_path: None,
            separator: ",".into(),
            label_column: "last".into(),
            points_per_class: 500,
            noise_sd: 0.14,
            ambient_dim: 100,
            resample_per_trial: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Neighbors per point for the similarity graph.
    pub k: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { k: 10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// `rank-k-heat`, `positive-taylor`, `squared-rw`,
    /// `squared-rw-twice`, `shifted-squared-rw`, or
    /// `truncated-exponential`.
    pub kind: String,
    /// Diffusion time for the kinds that take one.
    pub h: f64,
    /// Eigenpair count for `rank-k-heat`.
    pub rank: usize,
    /// Series order for `positive-taylor` and `truncated-exponential`.
    pub order: usize,
    /// Shift for `shifted-squared-rw`.
    pub shift: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kind: "squared-rw".into(),
            h: 1.0,
            rank: 50,
            order: 2,
            shift: 0.1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    /// `exact` or `interval`.
    pub mode: String,
    /// Interval half-width around the true class volumes; 0 makes the
    /// interval mode coincide with exact volumes.
    pub slack: usize,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            mode: "exact".into(),
            slack: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// `diffusion`, `laguerre`, `voronoi`, or `random`.
    pub kind: String,
    /// `neg-log` or `euclidean` edge lengths for the distance-based
    /// initializers.
    pub edge_length: String,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            kind: "diffusion".into(),
            edge_length: "neg-log".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub trials: usize,
    pub labels_per_class: usize,
    /// Base seed; trial t uses seed + t.
    pub seed: u64,
    pub stop_eps: f64,
    pub max_iters: usize,
    /// Noise scale of the score perturbation; 0 disables it.
    pub temperature: f64,
    /// Iteration budget when temperature is active.
    pub temperature_iterations: usize,
    /// `previous` or `center`.
    pub warm_start: String,
    /// Update cached diffusions from sparse indicator changes.
    pub incremental: bool,
    /// Write one trace CSV per trial into the output directory.
    pub save_traces: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trials: 20,
            labels_per_class: 5,
            seed: 0,
            stop_eps: 1e-4,
            max_iters: 300,
            temperature: 0.0,
            temperature_iterations: 50,
            warm_start: "previous".into(),
            incremental: true,
            save_traces: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Time steps for the scaling probe; empty means
    /// `{h/4, h/2, h, 2h}` around the kernel's configured h.
    pub h_grid: Vec<f64>,
}

/// Command-line overrides applied on top of the loaded file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub labels_per_class: Option<usize>,
    pub kernel: Option<String>,
    pub h: Option<f64>,
    pub temperature: Option<f64>,
    pub constraints: Option<String>,
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Config, CliError> {
        let mut cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
            }
        };
        if let Some(v) = overrides.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = overrides.trials {
            cfg.run.trials = v;
        }
        if let Some(v) = overrides.labels_per_class {
            cfg.run.labels_per_class = v;
        }
        if let Some(v) = &overrides.kernel {
            cfg.kernel.kind = v.clone();
        }
        if let Some(v) = overrides.h {
            cfg.kernel.h = v;
        }
        if let Some(v) = overrides.temperature {
            cfg.run.temperature = v;
        }
        if let Some(v) = &overrides.constraints {
            cfg.constraints.mode = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects out-of-vocabulary enum strings and senseless numbers
    /// before any data is touched.
    pub fn validate(&self) -> Result<(), CliError> {
        let choice = |key: &str, got: &str, allowed: &[&str]| {
            if allowed.contains(&got) {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "{key} = `{got}` is not one of {allowed:?}"
                )))
            }
        };
        choice(
            "dataset.kind",
            &self.dataset.kind,
            &["three-moons", "delimited", "idx", "embedding"],
        )?;
        choice(
            "kernel.kind",
            &self.kernel.kind,
            &[
                "rank-k-heat",
                "positive-taylor",
                "squared-rw",
                "squared-rw-twice",
                "shifted-squared-rw",
                "truncated-exponential",
            ],
        )?;
        choice(
            "constraints.mode",
            &self.constraints.mode,
            &["exact", "interval"],
        )?;
        choice(
            "init.kind",
            &self.init.kind,
            &["diffusion", "laguerre", "voronoi", "random"],
        )?;
        choice(
            "init.edge_length",
            &self.init.edge_length,
            &["neg-log", "euclidean"],
        )?;
        choice(
            "run.warm_start",
            &self.run.warm_start,
            &["previous", "center"],
        )?;
        if self.dataset.kind != "three-moons" && self.dataset.path.is_none() {
            return Err(CliError::Config(format!(
                "dataset.kind = `{}` needs dataset.path",
                self.dataset.kind
            )));
        }
        if matches!(self.dataset.kind.as_str(), "idx" | "embedding")
            && self.dataset.labels_path.is_none()
        {
            return Err(CliError::Config(format!(
                "dataset.kind = `{}` needs dataset.labels_path",
                self.dataset.kind
            )));
        }
        if self.dataset.separator.chars().count() != 1 {
            return Err(CliError::Config(
                "dataset.separator must be a single character".into(),
            ));
        }
        if self.dataset.label_column != "first"
            && self.dataset.label_column != "last"
            && self.dataset.label_column.parse::<usize>().is_err()
        {
            return Err(CliError::Config(format!(
                "dataset.label_column = `{}` is not `first`, `last`, or an index",
                self.dataset.label_column
            )));
        }
        if self.graph.k == 0 {
            return Err(CliError::Config("graph.k must be positive".into()));
        }
        if self.run.trials == 0 {
            return Err(CliError::Config("run.trials must be positive".into()));
        }
        if self.run.labels_per_class == 0 {
            return Err(CliError::Config(
                "run.labels_per_class must be positive".into(),
            ));
        }
        if !(self.run.temperature >= 0.0) {
            return Err(CliError::Config("run.temperature must be >= 0".into()));
        }
        if self.probe.h_grid.iter().any(|&h| !(h > 0.0)) {
            return Err(CliError::Config(
                "probe.h_grid entries must be positive".into(),
            ));
        }
        Ok(())
    }
}
