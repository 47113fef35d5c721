//! Training configuration and its flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPreset {
    /// Reduced widths for CPU-scale runs.
    Desk,
    /// Published widths.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Cosine annealing minimum.
    pub lr_floor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub curriculum: bool,
    pub curriculum_gamma0: f64,
    pub curriculum_end_fraction: f64,
    pub seed: u64,
    /// Checkpoints are written every `checkpoint_every` epochs and after the last.
    pub checkpoint_every: usize,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub standardize: bool,
    /// When false the `wall_s` column is written as 0 so logs are byte-stable.
    pub record_wall_time: bool,
    pub model: ModelPreset,
    /// Hidden width of the desk preset.
    pub width: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            lr_floor: 1e-8,
            epochs: 500,
            batch_size: 20,
            dropout: 0.03,
            curriculum: true,
            curriculum_gamma0: 0.5,
            curriculum_end_fraction: 0.5,
            seed: 0,
            checkpoint_every: 1,
            clip_norm: 1.0,
            standardize: true,
            record_wall_time: true,
            model: ModelPreset::Paper,
            width: 32,
            adam: AdamConfig::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "lr0",
    "lr_floor",
    "epochs",
    "batch_size",
    "dropout",
    "curriculum",
    "curriculum_gamma0",
    "curriculum_end_fraction",
    "seed",
    "checkpoint_every",
    "clip_norm",
    "standardize",
    "record_wall_time",
    "model",
    "width",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key `{key}`")))
}

impl TrainConfig {
    /// Diffusion-reaction schedule: 200 epochs, batch 20.
    pub fn paper_1d() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 20,
            curriculum: false,
            ..Default::default()
        }
    }

    /// Navier-Stokes schedule: 500 epochs, batch 4.
    pub fn paper_2d() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            ..Default::default()
        }
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, samples: usize) -> usize {
        self.epochs * self.steps_per_epoch(samples)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "lr0" => self.lr0 = parse(key, v)?,
            "lr_floor" => self.lr_floor = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "curriculum" => self.curriculum = parse(key, v)?,
            "curriculum_gamma0" => self.curriculum_gamma0 = parse(key, v)?,
            "curriculum_end_fraction" => self.curriculum_end_fraction = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "standardize" => self.standardize = parse(key, v)?,
            "record_wall_time" => self.record_wall_time = parse(key, v)?,
            "model" => {
                self.model = match v {
                    "desk" => ModelPreset::Desk,
                    "paper" => ModelPreset::Paper,
                    _ => {
                        return Err(Error::Config(format!(
                            "invalid value {v:?} for key `model` (desk or paper)"
                        )))
                    }
                }
            }
            "width" => self.width = parse(key, v)?,
            "adam_beta1" => self.adam.beta1 = parse(key, v)?,
            "adam_beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.adam.eps = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    no + 1
                ))
            })?;
            self.set(k.trim(), v)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::default().apply_text(text)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Every key, in the file format accepted by [`TrainConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let value = match *key {
                "lr0" => self.lr0.to_string(),
                "lr_floor" => self.lr_floor.to_string(),
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "dropout" => self.dropout.to_string(),
                "curriculum" => self.curriculum.to_string(),
                "curriculum_gamma0" => self.curriculum_gamma0.to_string(),
                "curriculum_end_fraction" => self.curriculum_end_fraction.to_string(),
                "seed" => self.seed.to_string(),
                "checkpoint_every" => self.checkpoint_every.to_string(),
                "clip_norm" => self.clip_norm.to_string(),
                "standardize" => self.standardize.to_string(),
                "record_wall_time" => self.record_wall_time.to_string(),
                "model" => match self.model {
                    ModelPreset::Desk => "desk".into(),
                    ModelPreset::Paper => "paper".into(),
                },
                "width" => self.width.to_string(),
                "adam_beta1" => self.adam.beta1.to_string(),
                "adam_beta2" => self.adam.beta2.to_string(),
                _ => self.adam.eps.to_string(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 > 0.0) || !(self.lr_floor >= 0.0 && self.lr_floor < self.lr0) {
            return bad("need lr0 > 0 and 0 <= lr_floor < lr0");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("epochs, batch_size and checkpoint_every must be positive");
        }
        if !(self.curriculum_gamma0 > 0.0 && self.curriculum_gamma0 <= 1.0) {
            return bad("curriculum_gamma0 must lie in (0, 1]");
        }
        if !(self.curriculum_end_fraction > 0.0 && self.curriculum_end_fraction <= 1.0) {
            return bad("curriculum_end_fraction must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.clip_norm >= 0.0) {
            return bad("dropout must lie in [0, 1) and clip_norm must be non-negative");
        }
        if self.width < 4 || self.width % 2 != 0 {
            return bad("width must be even and at least 4");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and adam_eps must be positive");
        }
        Ok(())
    }
}
