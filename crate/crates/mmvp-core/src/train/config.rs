//! Training configuration: a flat TOML key-value document using the model's
//! hyperparameter names verbatim (C_img, T_prime, ...). Unknown keys are
//! rejected; missing keys take the toy defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "C_in")]
    pub c_in: usize,
    #[serde(rename = "T")]
    pub t_obs: usize,
    #[serde(rename = "T_prime")]
    pub t_fut: usize,
    #[serde(rename = "C_img")]
    pub c_img: usize,
    #[serde(rename = "C_motion")]
    pub c_motion: usize,
    #[serde(rename = "S")]
    pub s: usize,
    /// Composition scale denominators (1/d fractions of full resolution).
    pub scales: Vec<usize>,
    pub include_image: bool,
    pub average_composition: bool,
    pub use_filter: bool,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Cosine-restart period in epochs (fixed, non-growing).
    pub restart_period: usize,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            c_in: 1,
            t_obs: 10,
            t_fut: 10,
            c_img: 16,
            c_motion: 32,
            s: 4,
            scales: vec![1, 2, 4, 8],
            include_image: true,
            average_composition: false,
            use_filter: true,
            lr_max: 1e-3,
            lr_min: 1e-6,
            restart_period: 100,
            batch_size: 8,
            total_epochs: 30,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 10,
            data: None,
            val: None,
            out: None,
        }
    }
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            height: self.height,
            width: self.width,
            c_in: self.c_in,
            t_obs: self.t_obs,
            t_fut: self.t_fut,
            c_img: self.c_img,
            c_motion: self.c_motion,
            s: self.s,
            scales: self.scales.clone(),
            include_image: self.include_image,
            average_composition: self.average_composition,
            use_filter: self.use_filter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_min >= self.lr_max {
            return Err(Error::Config(format!(
                "lr_min {} must be < lr_max {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.restart_period < 1 {
            return Err(Error::Config("restart_period must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.total_epochs < 1 {
            return Err(Error::Config("total_epochs must be >= 1".into()));
        }
        self.model().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved-config echo, suitable for logging and the checkpoint.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Loads and validates a config file; missing keys take documented defaults.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    TrainConfig::from_toml(&text)
}
