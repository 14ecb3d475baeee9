//! Run configuration: one TOML file describing the model, losses,
//! optimizer, training schedule, data source, and evaluation protocol.
//!
//! Every section has complete defaults, so a config file only states
//! what differs from them. Unknown keys are rejected rather than
//! silently ignored; a typo in a hyperparameter name must not produce a
//! quietly different experiment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "optimizer.lr must be positive, got {}",
                self.lr
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!(
                    "optimizer.{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "optimizer.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Total optimization steps the run should reach.
    pub steps: u64,
    /// Window pairs per optimization step.
    pub batch_size: usize,
    /// Seeds everything: parameter init, data generation, the train/val
    /// split, and the batch schedule.
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 saves only the final
    /// one.
    pub checkpoint_every: u64,
    /// Print progress every this many steps; 0 stays quiet until the end.
    pub log_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            seed: 42,
            checkpoint_every: 0,
            log_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("training.steps must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate sequences from `data.synth`.
    Synth,
    /// Load every sequence CSV in `data.dir`.
    Dir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory of sequence CSVs; required when `source = "dir"`.
    pub dir: Option<PathBuf>,
    pub synth: SynthSpec,
    /// Fraction of sequences assigned to the training side.
    pub train_fraction: f64,
    /// Distance between the start frames of consecutive windows.
    pub stride: usize,
    /// Center every frame on this joint before windowing.
    pub root_joint: Option<usize>,
    /// Downsample sequences to this frame rate before windowing.
    pub downsample_to_fps: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            dir: None,
            synth: SynthSpec::default(),
            train_fraction: 0.8,
            stride: 1,
            root_joint: None,
            downsample_to_fps: None,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Dir if self.dir.is_none() => {
                return Err(Error::Config(
                    "data.source = \"dir\" requires data.dir to be set".into(),
                ))
            }
            DataSource::Synth => self.synth.validate()?,
            DataSource::Dir => {}
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config(format!(
                "data.train_fraction must lie in [0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("data.stride must be positive".into()));
        }
        if let Some(fps) = self.downsample_to_fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(Error::Config(format!(
                    "data.downsample_to_fps must be positive, got {fps}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    #[default]
    Val,
    All,
}

impl std::fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalSplit::Train => "train",
            EvalSplit::Val => "val",
            EvalSplit::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: EvalSplit,
    /// Millisecond horizons to report position error at; each must land
    /// on a whole predicted frame for the data's frame rate.
    pub horizons_ms: Vec<u64>,
    /// Explicit jitter windows `(start_ms, end_ms)`; when absent, the
    /// full horizon and its standard tail windows are used.
    pub jitter_windows: Option<Vec<(u64, u64)>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: EvalSplit::Val,
            horizons_ms: vec![80, 160, 320, 400, 560, 720, 880, 1000],
            jitter_windows: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.training.validate()?;
        self.data.validate()?;
        if self.data.source == DataSource::Synth && self.data.synth.n_joints != self.model.n_joints {
            return Err(Error::Config(format!(
                "data.synth.n_joints = {} does not match model.n_joints = {}",
                self.data.synth.n_joints, self.model.n_joints
            )));
        }
        Ok(())
    }

    /// Equality ignoring the target step count, for deciding whether a
    /// checkpoint may be resumed under this config.
    pub fn compatible_for_resume(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.training.steps = 0;
        b.training.steps = 0;
        a == b
    }
}
