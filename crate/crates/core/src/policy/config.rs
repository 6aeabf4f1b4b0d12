use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    /// Three stride-2 convolutions.
    Small,
    /// Six convolutions with additive skips.
    Deep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    /// One head per lateral command emitting both controls.
    SingleBranch,
    /// Separate lateral and longitudinal heads, each picked by its command.
    MultiTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LossMode {
    Hard { w_lat: f64, w_lon: f64 },
    Uncertainty,
}

impl LossMode {
    pub const DEFAULT_HARD: LossMode = LossMode::Hard { w_lat: 0.5, w_lon: 0.5 };
}

/// Architecture, loss and training recipe. Read from TOML; missing keys take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Tag used in reports.
    pub name: String,
    pub encoder: EncoderKind,
    pub control_mode: ControlMode,
    pub loss_mode: LossMode,
    pub speed_branch: bool,
    pub augmentation: bool,
    pub dropout_p: f64,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Output channels of the three convolution stages.
    pub channels: [usize; 3],
    pub max_epochs: usize,
    /// Training stops after this many learning-rate cuts.
    pub max_lr_cuts: usize,
    /// Frames drawn (without replacement) per epoch; all when unset.
    pub samples_per_epoch: Option<usize>,
    /// Validation frames scored per epoch, evenly spaced; all when unset.
    pub val_samples: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            name: "mt-uloss".into(),
            encoder: EncoderKind::Small,
            control_mode: ControlMode::MultiTask,
            loss_mode: LossMode::Uncertainty,
            speed_branch: false,
            augmentation: true,
            dropout_p: 0.5,
            batch_size: 120,
            initial_lr: 2e-4,
            channels: [8, 16, 16],
            max_epochs: 100,
            max_lr_cuts: 2,
            samples_per_epoch: None,
            val_samples: None,
        }
    }
}

impl ModelConfig {
    /// Multi-task heads with the uncertainty-weighted loss.
    pub fn mt_uloss() -> Self {
        Self::default()
    }

    /// Multi-task heads with fixed 0.5/0.5 weights.
    pub fn mt_hloss() -> Self {
        Self {
            name: "mt-hloss".into(),
            loss_mode: LossMode::DEFAULT_HARD,
            ..Self::default()
        }
    }

    /// Single-branch baseline without speed prediction.
    pub fn cil() -> Self {
        Self {
            name: "cil".into(),
            control_mode: ControlMode::SingleBranch,
            loss_mode: LossMode::DEFAULT_HARD,
            ..Self::default()
        }
    }

    /// Single-branch baseline with the speed head.
    pub fn cilrs() -> Self {
        Self {
            name: "cilrs".into(),
            speed_branch: true,
            ..Self::cil()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.name.trim().is_empty() {
            return fail("name must not be empty".into());
        }
        if self.loss_mode == LossMode::Uncertainty && self.control_mode != ControlMode::MultiTask {
            return fail("the uncertainty loss needs control_mode = \"MultiTask\"".into());
        }
        if let LossMode::Hard { w_lat, w_lon } = self.loss_mode {
            if !(w_lat >= 0.0 && w_lon >= 0.0 && w_lat.is_finite() && w_lon.is_finite()) {
                return fail(format!("hard loss weights must be finite and non-negative, got ({w_lat}, {w_lon})"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if self.channels.contains(&0) {
            return fail("channels must be positive".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be positive".into());
        }
        if self.samples_per_epoch == Some(0) || self.val_samples == Some(0) {
            return fail("sample caps must be positive when set".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let c = ModelConfig::default();
        assert_eq!((c.batch_size, c.initial_lr, c.dropout_p), (120, 2e-4, 0.5));
        assert!(c.validate().is_ok());
        for c in [ModelConfig::mt_hloss(), ModelConfig::cil(), ModelConfig::cilrs()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ModelConfig::cilrs();
        assert_eq!(ModelConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let c = ModelConfig::from_toml_str(
            "name = \"deep-h\"\nencoder = \"Deep\"\nloss_mode = { kind = \"Hard\", w_lat = 1.0, w_lon = 0.0 }\n",
        )
        .unwrap();
        assert_eq!(c.encoder, EncoderKind::Deep);
        assert_eq!(c.loss_mode, LossMode::Hard { w_lat: 1.0, w_lon: 0.0 });
        assert_eq!(c.batch_size, 120);
        assert!(ModelConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn uncertainty_needs_multitask() {
        let c = ModelConfig {
            control_mode: ControlMode::SingleBranch,
            loss_mode: LossMode::Uncertainty,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig {
            dropout_p: 1.0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
