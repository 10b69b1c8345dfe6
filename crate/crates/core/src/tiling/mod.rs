//! Non-overlapping tile grids at a working magnification, tissue/background
//! labelling against the ground-truth mask, training-set sampling and the
//! inverse stitching used at inference time.

mod patches;

pub use patches::{
    patch_name, read_patch_dir, write_patch_dir, PatchEntry, PatchIndex, PatchSample,
    INDEX_FILE,
};

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MaskRaster, RasterRGB};
use crate::seed::rng_for;
use crate::slide_io::{size_at_magnification, Slide, SlideMeta};

pub const DEFAULT_TILE_PX: usize = 224;
pub const DEFAULT_TARGET_MAG: f64 = 10.0;
pub const DEFAULT_TISSUE_THRESHOLD: f64 = 0.01;

/// What to do with the remainder strip when the slide is not a multiple of
/// the tile size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgePolicy {
    /// Keep partial tiles and fill them by mirror reflection.
    PadReflect,
    /// Discard partial tiles.
    DropPartial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileRef {
    pub col: usize,
    pub row: usize,
    pub x_px: usize,
    pub y_px: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub slide_id: String,
    pub target_mag: f64,
    pub tile_px: usize,
    pub cols: usize,
    pub rows: usize,
    pub width_px: usize,
    pub height_px: usize,
    pub edge_policy: EdgePolicy,
}

impl TileGrid {
    pub fn new(
        slide_id: impl Into<String>,
        target_mag: f64,
        tile_px: usize,
        width_px: usize,
        height_px: usize,
        edge_policy: EdgePolicy,
    ) -> Result<Self> {
        let slide_id = slide_id.into();
        if tile_px == 0 {
            return Err(Error::Validation("tile size must be positive".into()));
        }
        let (cols, rows) = match edge_policy {
            EdgePolicy::PadReflect => (width_px.div_ceil(tile_px), height_px.div_ceil(tile_px)),
            EdgePolicy::DropPartial => (width_px / tile_px, height_px / tile_px),
        };
        if cols == 0 || rows == 0 {
            return Err(Error::EmptyGrid(format!(
                "{slide_id}: {width_px}x{height_px} holds no {tile_px}px tile under {edge_policy:?}"
            )));
        }
        Ok(Self {
            slide_id,
            target_mag,
            tile_px,
            cols,
            rows,
            width_px,
            height_px,
            edge_policy,
        })
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tile(&self, col: usize, row: usize) -> Option<TileRef> {
        (col < self.cols && row < self.rows).then(|| TileRef {
            col,
            row,
            x_px: col * self.tile_px,
            y_px: row * self.tile_px,
        })
    }

    /// All tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = TileRef> + '_ {
        (0..self.rows).flat_map(move |row| (0..self.cols).map(move |col| self.tile(col, row).unwrap()))
    }

    pub fn contains(&self, t: &TileRef) -> bool {
        self.tile(t.col, t.row).as_ref() == Some(t)
    }

    fn check(&self, t: &TileRef) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "tile {t:?} is not on the {}x{} grid of {}",
                self.cols, self.rows, self.slide_id
            )))
        }
    }

    /// The part of a tile that lies inside the image: (x, y, w, h).
    pub fn visible(&self, t: &TileRef) -> (usize, usize, usize, usize) {
        let w = self.tile_px.min(self.width_px.saturating_sub(t.x_px));
        let h = self.tile_px.min(self.height_px.saturating_sub(t.y_px));
        (t.x_px, t.y_px, w, h)
    }
}

pub fn build_grid(
    meta: &SlideMeta,
    target_mag: f64,
    tile_px: usize,
    edge_policy: EdgePolicy,
) -> Result<TileGrid> {
    let (w, h) = size_at_magnification(meta, target_mag)?;
    TileGrid::new(meta.slide_id.clone(), target_mag, tile_px, w, h, edge_policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileLabel {
    Tissue,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledTile {
    pub tile: TileRef,
    pub coverage: f64,
    pub label: TileLabel,
}

fn check_mask_dims(grid: &TileGrid, mask: &MaskRaster) -> Result<()> {
    if (mask.width(), mask.height()) != (grid.width_px, grid.height_px) {
        return Err(Error::Alignment(format!(
            "mask is {}x{} but grid covers {}x{}",
            mask.width(),
            mask.height(),
            grid.width_px,
            grid.height_px
        )));
    }
    Ok(())
}

/// Labels every tile by its mask coverage. Padding outside the image counts
/// as background; a tile is tissue when coverage reaches `tissue_threshold`.
pub fn classify_tiles(
    grid: &TileGrid,
    mask: &MaskRaster,
    tissue_threshold: f64,
) -> Result<Vec<LabeledTile>> {
    check_mask_dims(grid, mask)?;
    let area = (grid.tile_px * grid.tile_px) as f64;
    Ok(grid
        .tiles()
        .map(|tile| {
            let (x, y, w, h) = grid.visible(&tile);
            let ones: usize = (y..y + h)
                .map(|row| {
                    let start = row * mask.width() + x;
                    mask.pixels()[start..start + w]
                        .iter()
                        .map(|&v| v as usize)
                        .sum::<usize>()
                })
                .sum();
            let coverage = ones as f64 / area;
            let label = if coverage >= tissue_threshold {
                TileLabel::Tissue
            } else {
                TileLabel::Background
            };
            LabeledTile {
                tile,
                coverage,
                label,
            }
        })
        .collect())
}

/// All tissue tiles (input order) followed by an equal number of background
/// tiles, or every background tile when fewer exist, drawn without
/// replacement in draw order.
pub fn sample_training_set(labeled: &[LabeledTile], seed: u64) -> Result<Vec<LabeledTile>> {
    let (tissue, mut background): (Vec<_>, Vec<_>) = labeled
        .iter()
        .copied()
        .partition(|t| t.label == TileLabel::Tissue);
    if tissue.is_empty() {
        return Err(Error::EmptySample(
            "no tissue tiles to build a training set from".into(),
        ));
    }
    let take = background.len().min(tissue.len());
    let mut rng = rng_for(seed, "background-sample", 0);
    for i in 0..take {
        let j = rng.random_range(i..background.len());
        background.swap(i, j);
    }
    background.truncate(take);
    let mut out = tissue;
    out.extend(background);
    Ok(out)
}

/// Maps an out-of-range coordinate back into `0..n` by mirror reflection
/// about the first and last sample (the edge sample is not repeated).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn reflected_axis(start: usize, len: usize, n: usize) -> Vec<usize> {
    (start..start + len)
        .map(|i| reflect_index(i as isize, n))
        .collect()
}

/// A training or inference tile with its paired mask window.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSample {
    pub tile: TileRef,
    pub image: RasterRGB,
    pub mask: MaskRaster,
    pub label: TileLabel,
    /// Mean of the tile's mask pixels.
    pub coverage: f64,
}

/// Reads one tile of the slide at the grid's magnification, reflect-padding
/// tiles that overhang the image edge.
pub fn extract_tile_image(slide: &Slide, grid: &TileGrid, tile: &TileRef) -> Result<RasterRGB> {
    grid.check(tile)?;
    let t = grid.tile_px;
    let (x, y, w, h) = grid.visible(tile);
    if w == t && h == t {
        return slide.read_region_at(grid.target_mag, x, y, t, t);
    }
    let xs = reflected_axis(tile.x_px, t, grid.width_px);
    let ys = reflected_axis(tile.y_px, t, grid.height_px);
    let (x0, x1) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
    let (y0, y1) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
    let src = slide.read_region_at(grid.target_mag, x0, y0, x1 - x0 + 1, y1 - y0 + 1)?;
    let mut out = Vec::with_capacity(t * t * 3);
    for &sy in &ys {
        for &sx in &xs {
            out.extend_from_slice(&src.get(sx - x0, sy - y0));
        }
    }
    RasterRGB::new(t, t, out)
}

/// Cuts a tile's mask window with the same reflect rule as the image.
pub fn extract_mask_tile(grid: &TileGrid, mask: &MaskRaster, tile: &TileRef) -> Result<MaskRaster> {
    grid.check(tile)?;
    check_mask_dims(grid, mask)?;
    let t = grid.tile_px;
    let (x, y, w, h) = grid.visible(tile);
    if w == t && h == t {
        return Ok(mask.crop(x, y, t, t));
    }
    let xs = reflected_axis(tile.x_px, t, grid.width_px);
    let ys = reflected_axis(tile.y_px, t, grid.height_px);
    let mut out = Vec::with_capacity(t * t);
    for &sy in &ys {
        for &sx in &xs {
            out.push(mask.get(sx, sy));
        }
    }
    MaskRaster::new(t, t, out)
}

pub fn extract_tile(
    slide: &Slide,
    grid: &TileGrid,
    mask: &MaskRaster,
    tile: &TileRef,
    tissue_threshold: f64,
) -> Result<TileSample> {
    let image = extract_tile_image(slide, grid, tile)?;
    let mask = extract_mask_tile(grid, mask, tile)?;
    let coverage = mask.count_ones() as f64 / (grid.tile_px * grid.tile_px) as f64;
    let label = if coverage >= tissue_threshold {
        TileLabel::Tissue
    } else {
        TileLabel::Background
    };
    Ok(TileSample {
        tile: *tile,
        image,
        mask,
        label,
        coverage,
    })
}

/// Reassembles per-tile masks into the full image, cropping padding. Every
/// grid cell must be supplied exactly once; arrival order does not matter.
pub fn stitch_tiles(grid: &TileGrid, tiles: &[(TileRef, MaskRaster)]) -> Result<MaskRaster> {
    let mut seen = HashSet::with_capacity(tiles.len());
    let mut out = vec![0u8; grid.width_px * grid.height_px];
    for (tile, m) in tiles {
        if !grid.contains(tile) {
            return Err(Error::Coverage(format!("tile {tile:?} is not on the grid")));
        }
        if (m.width(), m.height()) != (grid.tile_px, grid.tile_px) {
            return Err(Error::Coverage(format!(
                "tile {tile:?} mask is {}x{}, expected {}px square",
                m.width(),
                m.height(),
                grid.tile_px
            )));
        }
        if !seen.insert((tile.col, tile.row)) {
            return Err(Error::Coverage(format!(
                "cell ({}, {}) supplied twice",
                tile.col, tile.row
            )));
        }
        let (x, y, w, h) = grid.visible(tile);
        for r in 0..h {
            let dst = (y + r) * grid.width_px + x;
            out[dst..dst + w].copy_from_slice(&m.pixels()[r * grid.tile_px..r * grid.tile_px + w]);
        }
    }
    if seen.len() != grid.len() {
        return Err(Error::Coverage(format!(
            "{} of {} cells supplied",
            seen.len(),
            grid.len()
        )));
    }
    MaskRaster::new(grid.width_px, grid.height_px, out)
}
