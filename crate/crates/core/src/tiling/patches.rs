//! On-disk patch set: `patches/{slide_id}/{name}.png`, `{name}_mask.png` and
//! one `index.json` per slide.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TileLabel, TileRef, TileSample};
use crate::error::{Error, Result};
use crate::raster::{MaskRaster, RasterRGB};
use crate::slide_io::SlideMeta;

pub const INDEX_FILE: &str = "index.json";

/// `{slide_id}_x{x_px}_y{y_px}`, coordinates at working magnification.
pub fn patch_name(slide_id: &str, tile: &TileRef) -> String {
    format!("{slide_id}_x{}_y{}", tile.x_px, tile.y_px)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub name: String,
    pub tile_ref: TileRef,
    pub label: TileLabel,
    pub coverage: f64,
    pub patient_id: String,
    pub stain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchIndex {
    pub slide_id: String,
    pub target_mag: f64,
    pub tile_px: usize,
    pub samples: Vec<PatchEntry>,
}

/// A patch loaded back from disk.
#[derive(Debug, Clone)]
pub struct PatchSample {
    pub slide_id: String,
    pub entry: PatchEntry,
    pub image: RasterRGB,
    pub mask: MaskRaster,
}

pub fn write_patch_dir(
    root: &Path,
    meta: &SlideMeta,
    target_mag: f64,
    tile_px: usize,
    samples: &[TileSample],
) -> Result<PatchIndex> {
    let dir = root.join(&meta.slide_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let name = patch_name(&meta.slide_id, &s.tile);
        s.image.write_png(&dir.join(format!("{name}.png")))?;
        s.mask.write_png(&dir.join(format!("{name}_mask.png")))?;
        entries.push(PatchEntry {
            name,
            tile_ref: s.tile,
            label: s.label,
            coverage: s.coverage,
            patient_id: meta.patient_id.clone(),
            stain: meta.stain.clone(),
        });
    }
    let index = PatchIndex {
        slide_id: meta.slide_id.clone(),
        target_mag,
        tile_px,
        samples: entries,
    };
    let path = dir.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Loads every slide's patches under `root`, slides in name order and
/// patches in index order.
pub fn read_patch_dir(root: &Path) -> Result<Vec<PatchSample>> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(INDEX_FILE).is_file())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: PatchIndex = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        for entry in index.samples {
            let image = RasterRGB::read_png(&dir.join(format!("{}.png", entry.name)))?;
            let mask = MaskRaster::read_png(&dir.join(format!("{}_mask.png", entry.name)))?;
            if (image.width(), image.height()) != (index.tile_px, index.tile_px)
                || (mask.width(), mask.height()) != (index.tile_px, index.tile_px)
            {
                return Err(Error::Validation(format!(
                    "patch {} is not {}px square",
                    entry.name, index.tile_px
                )));
            }
            out.push(PatchSample {
                slide_id: index.slide_id.clone(),
                entry,
                image,
                mask,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySample(format!(
            "no patches found under {}",
            root.display()
        )));
    }
    Ok(out)
}
