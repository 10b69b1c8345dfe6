//! Pyramidal slide access over an open on-disk directory format.
//!
//! A slide directory holds `meta.json`, one lossless image per pyramid level
//! (`level_0.png`, `level_1.png`, ...) and an optional ground-truth
//! `mask.png` at level-0 resolution:
//!
//! ```text
//! slide_007/
//! ├── meta.json     {slide_id, patient_id, stain, objective_power, levels:[{width,height,downsample}]}
//! ├── level_0.png
//! ├── level_1.png
//! └── mask.png      8-bit gray, 0/255
//! ```
//!
//! Opening a slide only parses and validates metadata. Level images are
//! decoded lazily on first access and then shared immutably, so one [`Slide`]
//! can serve concurrent `read_region` calls.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MaskRaster, RasterRGB};

pub const META_FILE: &str = "meta.json";
pub const MASK_FILE: &str = "mask.png";

pub fn level_file_name(level: usize) -> String {
    format!("level_{level}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub width: usize,
    pub height: usize,
    /// Linear downsample relative to level 0.
    pub downsample: f64,
}

/// Parsed and validated `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideMeta {
    pub slide_id: String,
    pub patient_id: String,
    pub stain: String,
    /// Clinical centre / scanner site, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre: Option<String>,
    pub objective_power: f64,
    pub levels: Vec<LevelInfo>,
}

impl SlideMeta {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.objective_power.is_finite() && self.objective_power > 0.0) {
            return Err(Error::Validation(format!(
                "objective_power must be positive, got {}",
                self.objective_power
            )));
        }
        let Some(base) = self.levels.first() else {
            return Err(Error::Validation("slide declares no levels".into()));
        };
        if base.downsample != 1.0 {
            return Err(Error::Validation(format!(
                "level 0 downsample must be 1.0, got {}",
                base.downsample
            )));
        }
        if base.width == 0 || base.height == 0 {
            return Err(Error::Validation("level 0 has zero size".into()));
        }
        for (k, pair) in self.levels.windows(2).enumerate() {
            if !(pair[1].downsample > pair[0].downsample) {
                return Err(Error::Validation(format!(
                    "downsamples must increase strictly (level {} = {}, level {} = {})",
                    k,
                    pair[0].downsample,
                    k + 1,
                    pair[1].downsample
                )));
            }
        }
        for (k, level) in self.levels.iter().enumerate() {
            let ew = base.width as f64 / level.downsample;
            let eh = base.height as f64 / level.downsample;
            if (level.width as f64 - ew).abs() > 1.0 || (level.height as f64 - eh).abs() > 1.0 {
                return Err(Error::Validation(format!(
                    "level {k} is {}x{} but downsample {} implies ~{ew:.1}x{eh:.1}",
                    level.width, level.height, level.downsample
                )));
            }
        }
        Ok(())
    }
}

/// An opened slide: validated metadata plus lazily decoded levels.
pub struct Slide {
    dir: PathBuf,
    meta: SlideMeta,
    levels: Vec<OnceLock<Arc<RasterRGB>>>,
}

impl std::fmt::Debug for Slide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Slide")
            .field("dir", &self.dir)
            .field("meta", &self.meta)
            .finish()
    }
}

/// Opens a slide directory. No pixel data is decoded.
pub fn open_slide(dir: &Path) -> Result<Slide> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Format(format!("{} is missing", meta_path.display()))
        } else {
            Error::io(&meta_path, e)
        }
    })?;
    let meta: SlideMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    meta.validate()?;
    for (k, level) in meta.levels.iter().enumerate() {
        let path = dir.join(level_file_name(k));
        if !path.is_file() {
            return Err(Error::Format(format!(
                "level image {} is missing",
                path.display()
            )));
        }
        let (w, h) = image::image_dimensions(&path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if (w as usize, h as usize) != (level.width, level.height) {
            return Err(Error::Validation(format!(
                "{} is {w}x{h} but meta.json declares {}x{}",
                path.display(),
                level.width,
                level.height
            )));
        }
    }
    let levels = (0..meta.levels.len()).map(|_| OnceLock::new()).collect();
    Ok(Slide {
        dir: dir.to_path_buf(),
        meta,
        levels,
    })
}

/// Pyramid level chosen for a magnification, plus the integer box factor
/// still needed on top of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelChoice {
    pub level: usize,
    pub residual_scale: f64,
}

impl LevelChoice {
    pub fn residual_factor(&self) -> usize {
        self.residual_scale.round() as usize
    }
}

const RATIO_TOLERANCE: f64 = 1e-9;

fn integral(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() <= RATIO_TOLERANCE * x.max(1.0) && r >= 1.0).then_some(r as usize)
}

/// Resolves a working magnification to the coarsest level that does not
/// overshoot it. Upsampling and non-integer residual ratios are refused.
pub fn level_for_magnification(meta: &SlideMeta, target_mag: f64) -> Result<LevelChoice> {
    if !(target_mag.is_finite() && target_mag > 0.0) {
        return Err(Error::UnsupportedMagnification(format!(
            "target magnification {target_mag} is not positive"
        )));
    }
    if target_mag > meta.objective_power * (1.0 + RATIO_TOLERANCE) {
        return Err(Error::UnsupportedMagnification(format!(
            "{}x requested from a {}x scan",
            target_mag, meta.objective_power
        )));
    }
    let needed = meta.objective_power / target_mag;
    let level = meta
        .levels
        .iter()
        .rposition(|l| l.downsample <= needed * (1.0 + RATIO_TOLERANCE))
        .unwrap_or(0);
    let residual_scale = needed / meta.levels[level].downsample;
    let Some(factor) = integral(residual_scale) else {
        return Err(Error::UnsupportedMagnification(format!(
            "residual scale {residual_scale} from level {level} is not an integer"
        )));
    };
    Ok(LevelChoice {
        level,
        residual_scale: factor as f64,
    })
}

/// Slide size in pixels at the given magnification.
pub fn size_at_magnification(meta: &SlideMeta, target_mag: f64) -> Result<(usize, usize)> {
    let choice = level_for_magnification(meta, target_mag)?;
    let level = &meta.levels[choice.level];
    let f = choice.residual_factor();
    Ok((level.width / f, level.height / f))
}

impl Slide {
    pub fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn mask_path(&self) -> PathBuf {
        self.dir.join(MASK_FILE)
    }

    fn level_image(&self, level: usize) -> Result<Arc<RasterRGB>> {
        let cell = self.levels.get(level).ok_or_else(|| {
            Error::Bounds(format!(
                "level {level} requested but slide has {}",
                self.levels.len()
            ))
        })?;
        if let Some(img) = cell.get() {
            return Ok(Arc::clone(img));
        }
        let img = RasterRGB::read_png(&self.dir.join(level_file_name(level)))?;
        let info = &self.meta.levels[level];
        if (img.width(), img.height()) != (info.width, info.height) {
            return Err(Error::Validation(format!(
                "level {level} decoded as {}x{}, expected {}x{}",
                img.width(),
                img.height(),
                info.width,
                info.height
            )));
        }
        Ok(Arc::clone(cell.get_or_init(|| Arc::new(img))))
    }

    /// Copies exactly `w x h` pixels from a stored level.
    pub fn read_region(
        &self,
        level: usize,
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    ) -> Result<RasterRGB> {
        let info = self.meta.levels.get(level).ok_or_else(|| {
            Error::Bounds(format!(
                "level {level} requested but slide has {}",
                self.meta.levels.len()
            ))
        })?;
        if x + w > info.width || y + h > info.height {
            return Err(Error::Bounds(format!(
                "region ({x},{y}) {w}x{h} exceeds level {level} size {}x{}",
                info.width, info.height
            )));
        }
        Ok(self.level_image(level)?.crop(x, y, w, h))
    }

    /// Reads a region given in working-magnification coordinates, box
    /// resampling the stored level by the residual factor.
    pub fn read_region_at(
        &self,
        target_mag: f64,
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    ) -> Result<RasterRGB> {
        let choice = level_for_magnification(&self.meta, target_mag)?;
        let f = choice.residual_factor();
        let (tw, th) = size_at_magnification(&self.meta, target_mag)?;
        if x + w > tw || y + h > th {
            return Err(Error::Bounds(format!(
                "region ({x},{y}) {w}x{h} exceeds {tw}x{th} at {target_mag}x"
            )));
        }
        let region = self.read_region(choice.level, x * f, y * f, w * f, h * f)?;
        Ok(if f == 1 { region } else { region.box_downsample(f) })
    }

    /// The whole slide at a working magnification.
    pub fn read_full_at(&self, target_mag: f64) -> Result<RasterRGB> {
        let (w, h) = size_at_magnification(&self.meta, target_mag)?;
        self.read_region_at(target_mag, 0, 0, w, h)
    }

    /// Loads this slide's `mask.png` at a working magnification.
    pub fn load_mask(&self, target_mag: f64) -> Result<MaskRaster> {
        load_mask(&self.mask_path(), &self.meta, target_mag)
    }
}

/// Loads a level-0 ground-truth mask, binarizes it (`> 127`) and
/// box-downsamples it to the slide's size at `target_mag`, where a cell is
/// tissue when at least half its window is.
pub fn load_mask(path: &Path, meta: &SlideMeta, target_mag: f64) -> Result<MaskRaster> {
    let full = MaskRaster::read_png(path)?;
    let base = &meta.levels[0];
    if (full.width(), full.height()) != (base.width, base.height) {
        return Err(Error::Alignment(format!(
            "mask is {}x{} but slide level 0 is {}x{}",
            full.width(),
            full.height(),
            base.width,
            base.height
        )));
    }
    let choice = level_for_magnification(meta, target_mag)?;
    let total = meta.levels[choice.level].downsample * choice.residual_scale;
    let factor = integral(total).ok_or_else(|| {
        Error::UnsupportedMagnification(format!("mask downsample {total} is not an integer"))
    })?;
    let (tw, th) = size_at_magnification(meta, target_mag)?;
    Ok(full.box_downsample(factor, tw, th))
}

/// Anything that can be written as a lossless 8-bit image.
pub trait WriteImage {
    fn write_image(&self, path: &Path) -> Result<()>;
}

impl WriteImage for RasterRGB {
    fn write_image(&self, path: &Path) -> Result<()> {
        self.write_png(path)
    }
}

impl WriteImage for MaskRaster {
    fn write_image(&self, path: &Path) -> Result<()> {
        self.write_png(path)
    }
}

pub fn write_image(raster: &impl WriteImage, path: &Path) -> Result<()> {
    raster.write_image(path)
}

/// Writes a slide directory from a level-0 image, building the remaining
/// levels with the box resampler. Downsamples must be integers.
pub fn write_slide(
    dir: &Path,
    meta_template: &SlideMeta,
    level0: &RasterRGB,
    downsamples: &[usize],
    mask: Option<&MaskRaster>,
) -> Result<SlideMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut levels = Vec::with_capacity(downsamples.len());
    for (k, &ds) in downsamples.iter().enumerate() {
        let resampled;
        let img = if ds == 1 {
            level0
        } else {
            resampled = level0.box_downsample(ds);
            &resampled
        };
        img.write_png(&dir.join(level_file_name(k)))?;
        levels.push(LevelInfo {
            width: img.width(),
            height: img.height(),
            downsample: ds as f64,
        });
    }
    let meta = SlideMeta {
        levels,
        ..meta_template.clone()
    };
    meta.validate()?;
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    if let Some(mask) = mask {
        mask.write_png(&dir.join(MASK_FILE))?;
    }
    Ok(meta)
}
