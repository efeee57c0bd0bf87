use std::path::{Path, PathBuf};

use chlorolab_core::eval::NeuralSettings;
use chlorolab_core::nn::NetKind;
use chlorolab_core::synth::SynthSpec;
use chlorolab_core::{FitConfig, ModelTag, TilingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Root of every stage directory.
    pub out: PathBuf,
    /// Defaults to `<out>/synth/captures`.
    pub captures: Option<PathBuf>,
    /// Defaults to `<out>/synth/ground_truth.csv`.
    pub ground_truth: Option<PathBuf>,
    /// Defaults to `<out>/synth/zones.json`.
    pub zones: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("chlorolab-run"),
            captures: None,
            ground_truth: None,
            zones: None,
        }
    }
}

impl Paths {
    pub fn synth_dir(&self) -> PathBuf {
        self.out.join("synth")
    }

    pub fn captures(&self) -> PathBuf {
        self.captures.clone().unwrap_or_else(|| self.synth_dir().join("captures"))
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.ground_truth
            .clone()
            .unwrap_or_else(|| self.synth_dir().join("ground_truth.csv"))
    }

    pub fn zones(&self) -> PathBuf {
        self.zones.clone().unwrap_or_else(|| self.synth_dir().join("zones.json"))
    }
}

/// Everything a run needs. Missing keys in a config file take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    /// Copied into every seeded sub-configuration by [`RunConfig::resolve`].
    pub seed: u64,
    pub synth: SynthSpec,
    pub tiling: TilingConfig,
    pub fit: FitConfig,
    pub labeler: ModelTag,
    pub generative_models: Vec<ModelTag>,
    pub networks: Vec<NetKind>,
    pub sizes: Vec<usize>,
    pub neural: NeuralSettings,
    /// Restricts the leave-one-field-out folds; empty means every field.
    pub test_fields: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            seed: 0,
            synth: SynthSpec::default(),
            tiling: TilingConfig::default(),
            fit: FitConfig::default(),
            labeler: ModelTag::Kde,
            generative_models: ModelTag::ALL.to_vec(),
            networks: NetKind::ALL.to_vec(),
            sizes: vec![32, 128],
            neural: NeuralSettings::default(),
            test_fields: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies flag overrides, propagates the global seed and validates.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.paths.out = o;
        }
        self.synth.seed = self.seed;
        self.fit.seed = self.seed;
        self.neural.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: &str| Err(CliError::config(m.to_string()));
        if self.fit.components.is_empty() {
            return fail("fit.components must not be empty");
        }
        if self.fit.k_max == 0 {
            return fail("fit.k_max must be at least 1");
        }
        if self.fit.bandwidth_grid.candidates().is_empty() {
            return fail("fit.bandwidth_grid yields no candidates");
        }
        if self.generative_models.is_empty() || self.networks.is_empty() || self.sizes.is_empty() {
            return fail("generative_models, networks and sizes must not be empty");
        }
        if let Some(s) = self.sizes.iter().find(|s| **s == 0 || self.tiling.size % **s != 0) {
            return Err(CliError::config(format!(
                "network size {s} must divide the tile size {}",
                self.tiling.size
            )));
        }
        if self.neural.window == 0 {
            return fail("neural.window must be at least 1");
        }
        self.neural.train.validate().map_err(|e| CliError::config(e.to_string()))
    }
}
