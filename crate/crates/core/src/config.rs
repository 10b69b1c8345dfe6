//! The single JSON document that configures the whole pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{InferenceConfig, OverlayPalette};
use crate::nn::{LossParams, UNetConfig};
use crate::tiling::{DEFAULT_TARGET_MAG, DEFAULT_TILE_PX, DEFAULT_TISSUE_THRESHOLD};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingConfig {
    pub target_mag: f64,
    pub tile_px: usize,
    /// Minimum mask coverage for a tile to count as tissue.
    pub tissue_threshold: f64,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            target_mag: DEFAULT_TARGET_MAG,
            tile_px: DEFAULT_TILE_PX,
            tissue_threshold: DEFAULT_TISSUE_THRESHOLD,
        }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_mag > 0.0) {
            return Err(Error::Config("target_mag must be positive".into()));
        }
        if self.tile_px == 0 {
            return Err(Error::Config("tile_px must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tissue_threshold) {
            return Err(Error::Config("tissue_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Every random stream in the pipeline derives from this.
    pub seed: u64,
    pub tiling: TilingConfig,
    pub unet: UNetConfig,
    pub loss: LossParams,
    pub train: TrainConfig,
    pub palette: OverlayPalette,
    pub inference: InferenceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tiling: TilingConfig::default(),
            unet: UNetConfig::default(),
            loss: LossParams::default(),
            train: TrainConfig::default(),
            palette: OverlayPalette::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        self.unet.validate()?;
        self.unet.check_input(self.tiling.tile_px, self.tiling.tile_px)?;
        self.loss.validate()?;
        self.train_config().validate()?;
        self.palette.validate()?;
        self.inference.validate()
    }

    /// The training section with the pipeline seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
