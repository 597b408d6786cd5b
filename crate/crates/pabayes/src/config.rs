//! Run configuration: one JSON document wiring every stage together.
//!
//! Unknown keys are rejected everywhere — a silently ignored typo in a
//! hyperparameter would invalidate a reproduction run. Missing sections fall
//! back to the desk-scale defaults; `full_scale()` switches the grid,
//! geometry and corpus size to the 512x128 / 128-element / 16,000-image
//! setup.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustics::ArrayGeometry;
use crate::confidence::ConfidenceParams;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::losses::LossKind;
use crate::nn::{NetConfig, TrainConfig};
use crate::phantom::VesselParams;

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::desk_scale()
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry::desk_scale()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Corpus size (split 80/10/10).
    pub count: usize,
    pub params: VesselParams,
    /// Per-image SNR draw range in dB (max signal over noise std).
    pub snr_db: (f64, f64),
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            count: 500,
            params: VesselParams::default(),
            snr_db: (10.0, 35.0),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    /// Monte-Carlo dropout passes.
    pub k: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { k: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Reliability diagram bin count.
    pub bins: usize,
    /// Credible-interval bound as a fraction of the posterior mean.
    pub eps_factor: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            bins: 10,
            eps_factor: 0.2,
        }
    }
}

/// Optional default locations, used when the CLI flags are omitted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub posteriors: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub geometry: ArrayGeometry,
    pub phantom: PhantomConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub loss: LossKind,
    pub predict: PredictConfig,
    pub calibration: CalibrationConfig,
    pub confidence: ConfidenceParams,
    pub paths: PathsConfig,
    /// Master seed of the simulation pipeline.
    pub seed: u64,
}

// The default is a pipeline choice, not a property of the loss itself, so
// it lives here rather than as a derive on the enum.
#[allow(clippy::derivable_impls)]
impl Default for LossKind {
    fn default() -> Self {
        LossKind::HybridLaplace
    }
}

impl RunConfig {
    pub fn desk_scale() -> Self {
        RunConfig::default()
    }

    /// Paper-scale preset: 512x128 grid, 128 elements at 62.5 MHz with 2,048
    /// temporal samples, 16,000 images.
    pub fn full_scale() -> Self {
        RunConfig {
            grid: GridSpec::full_scale(),
            geometry: ArrayGeometry::full_scale(),
            phantom: PhantomConfig {
                count: 16_000,
                ..PhantomConfig::default()
            },
            net: NetConfig {
                depth: 4,
                base_channels: 16,
                ..NetConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.geometry.validate_for_grid(&self.grid)?;
        self.phantom.params.validate(&self.grid)?;
        self.net.validate()?;
        self.train.validate()?;
        self.confidence.validate()?;
        if self.phantom.count < 10 {
            return Err(Error::InvalidConfig(
                "phantom count must be at least 10".into(),
            ));
        }
        if !(self.phantom.snr_db.0 <= self.phantom.snr_db.1) {
            return Err(Error::InvalidConfig("snr_db range must be ordered".into()));
        }
        if self.predict.k == 0 {
            return Err(Error::InvalidConfig("predict.k must be at least 1".into()));
        }
        if self.calibration.bins < 2 {
            return Err(Error::InvalidConfig("calibration.bins must be >= 2".into()));
        }
        if !(self.calibration.eps_factor > 0.0) {
            return Err(Error::InvalidConfig("eps_factor must be > 0".into()));
        }
        if !self.net.head.compatible_with(self.loss) {
            return Err(Error::HeadMismatch(format!(
                "loss {} incompatible with configured head",
                self.loss
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_published_hyperparameters() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.net.dropout_rate, 0.1);
        assert_eq!(cfg.net.l2_factor, 1e-6);
        assert_eq!(cfg.train.learning_rate, 5e-4);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.max_epochs, 1000);
        assert_eq!(cfg.train.patience, 50);
        assert_eq!(cfg.calibration.eps_factor, 0.2);
        assert_eq!(cfg.confidence.seg_round_threshold, 0.5);
        assert_eq!(cfg.confidence.soft_threshold, 0.05);
        assert_eq!(cfg.confidence.seg_rel_threshold, 1.0);
        assert_eq!(cfg.confidence.img_rel_threshold, 0.9);
        assert_eq!(cfg.predict.k, 50);
        assert_eq!(cfg.calibration.bins, 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn full_scale_declares_paper_shapes() {
        let cfg = RunConfig::full_scale();
        assert_eq!(cfg.phantom.count, 16_000);
        assert_eq!(cfg.geometry.n_samples, 2048);
        assert_eq!(cfg.geometry.n_elem, 128);
        assert_eq!((cfg.grid.nz, cfg.grid.nx), (512, 128));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"learning_rte": 0.1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"train": {"learning_rte": 0.1}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn roundtrip_through_json() {
        let dir = std::env::temp_dir().join("pabayes-config-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        let cfg = RunConfig {
            seed: 1234,
            ..RunConfig::default()
        };
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.seed, 1234);
        assert_eq!(back.train.learning_rate, cfg.train.learning_rate);
    }

    #[test]
    fn incompatible_loss_head_pairing_rejected() {
        let cfg = RunConfig {
            loss: LossKind::LaplaceOnly,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
