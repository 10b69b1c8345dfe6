//! Whole-slide tissue segmentation for immunohistochemistry slides.
//!
//! The pipeline reads pyramidal slides, cuts them into 224 px tiles at 10x,
//! trains a UNet with the Focal Tversky loss and early stopping, predicts
//! whole slides by patch-predict-stitch, and scores them with Dice and
//! TP/FN/FP overlays. [`synth`] generates slides with exact ground truth so
//! every stage can be exercised without clinical data.

pub mod config;
pub mod cli;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod seed;
pub mod slide_io;
pub mod synth;
pub mod tiling;
pub mod training;

pub use error::{Error, Result};
pub use raster::{MaskRaster, RasterRGB};
