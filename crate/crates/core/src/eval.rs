//! Whole-slide prediction by patch-predict-stitch, confusion counts, Dice,
//! TP/FN/FP overlays and cohort aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{unet_forward, Mode, Tensor, UNetParams};
use crate::raster::{MaskRaster, RasterRGB};
use crate::slide_io::{Slide, SlideMeta};
use crate::tiling::{build_grid, extract_tile_image, stitch_tiles, EdgePolicy, TileGrid, TileRef};
use crate::training::image_to_chw;

pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_BATCH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Probabilities at or above this become tissue.
    pub threshold: f32,
    pub batch: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            batch: DEFAULT_BATCH,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("inference batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-tile probability maps over a reflect-padded grid covering the whole
/// slide, in row-major tile order.
pub fn predict_tile_probs(
    slide: &Slide,
    params: &UNetParams<f32>,
    grid: &TileGrid,
    batch: usize,
) -> Result<Vec<(TileRef, Vec<f32>)>> {
    let t = grid.tile_px;
    params.config().check_input(t, t)?;
    let tiles: Vec<TileRef> = grid.tiles().collect();
    let mut out = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(batch.max(1)) {
        let items = chunk
            .iter()
            .map(|tile| extract_tile_image(slide, grid, tile).map(|img| image_to_chw(&img)))
            .collect::<Result<Vec<_>>>()?;
        let x = Tensor::stack(&[params.config().in_channels, t, t], items)?;
        let probs = unet_forward(params, &x, Mode::Eval)?.probs;
        for (i, tile) in chunk.iter().enumerate() {
            // first output channel is the tissue probability
            out.push((*tile, probs.sample(i)[..t * t].to_vec()));
        }
    }
    Ok(out)
}

pub fn threshold_tile(tile_px: usize, probs: &[f32], threshold: f32) -> MaskRaster {
    let px = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    MaskRaster::new(tile_px, tile_px, px).expect("binary by construction")
}

/// Predicts a binary tissue mask for the entire slide at `target_mag`. No
/// tissue pre-filter is applied: every tile is run through the network.
pub fn predict_slide(
    slide: &Slide,
    params: &UNetParams<f32>,
    target_mag: f64,
    tile_px: usize,
    inference: &InferenceConfig,
) -> Result<MaskRaster> {
    inference.validate()?;
    let grid = build_grid(slide.meta(), target_mag, tile_px, EdgePolicy::PadReflect)?;
    let tiles: Vec<(TileRef, MaskRaster)> = predict_tile_probs(slide, params, &grid, inference.batch)?
        .into_iter()
        .map(|(tile, p)| (tile, threshold_tile(tile_px, &p, inference.threshold)))
        .collect();
    stitch_tiles(&grid, &tiles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Both masks empty: Dice is taken as 1.0 by convention.
    pub fn both_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

fn check_same(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

pub fn confusion(pred: &MaskRaster, gt: &MaskRaster) -> Result<ConfusionCounts> {
    check_same(
        "prediction and ground truth differ in size",
        (pred.width(), pred.height()),
        (gt.width(), gt.height()),
    )?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2tp / (2tp + fp + fn)`, or 1.0 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    if c.both_empty() {
        return 1.0;
    }
    2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayPalette {
    pub tp_color: [u8; 3],
    pub fn_color: [u8; 3],
    pub fp_color: [u8; 3],
}

impl Default for OverlayPalette {
    fn default() -> Self {
        Self {
            tp_color: [255, 255, 0],
            fn_color: [255, 0, 0],
            fp_color: [0, 255, 0],
        }
    }
}

/// Largest channel value a dimmed pixel can take.
pub const DIMMED_MAX: u8 = 102;

/// 40% of the original value, rounded half up.
pub fn dim(v: u8) -> u8 {
    ((4 * u32::from(v) + 5) / 10) as u8
}

impl OverlayPalette {
    /// Colours must be pairwise distinct and each must have a channel above
    /// [`DIMMED_MAX`], so no dimmed background pixel can be mistaken for one.
    pub fn validate(&self) -> Result<()> {
        let c = [self.tp_color, self.fn_color, self.fp_color];
        if c[0] == c[1] || c[0] == c[2] || c[1] == c[2] {
            return Err(Error::Config(format!("palette colours are not distinct: {c:?}")));
        }
        if let Some(bad) = c.iter().find(|col| col.iter().all(|&v| v <= DIMMED_MAX)) {
            return Err(Error::Config(format!(
                "palette colour {bad:?} is too dark to tell apart from dimmed pixels"
            )));
        }
        Ok(())
    }
}

pub fn render_overlay(
    base: &RasterRGB,
    pred: &MaskRaster,
    gt: &MaskRaster,
    palette: &OverlayPalette,
) -> Result<RasterRGB> {
    palette.validate()?;
    let dims = (base.width(), base.height());
    check_same("overlay base and prediction", dims, (pred.width(), pred.height()))?;
    check_same("overlay base and ground truth", dims, (gt.width(), gt.height()))?;
    let mut out = Vec::with_capacity(base.pixels().len());
    for ((px, &p), &g) in base.pixels().chunks_exact(3).zip(pred.pixels()).zip(gt.pixels()) {
        let rgb = match (p, g) {
            (1, 1) => palette.tp_color,
            (0, 1) => palette.fn_color,
            (1, 0) => palette.fp_color,
            _ => [dim(px[0]), dim(px[1]), dim(px[2])],
        };
        out.extend_from_slice(&rgb);
    }
    RasterRGB::new(dims.0, dims.1, out)
}

pub fn overlay_file_name(slide_id: &str) -> String {
    format!("{slide_id}_overlay.png")
}

pub fn prediction_file_name(slide_id: &str) -> String {
    format!("{slide_id}_pred.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideReport {
    pub slide_id: String,
    pub patient_id: String,
    pub stain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre: Option<String>,
    pub counts: ConfusionCounts,
    pub dice: f64,
    /// Set when prediction and ground truth are both empty.
    pub empty_masks: bool,
}

impl SlideReport {
    pub fn new(meta: &SlideMeta, counts: ConfusionCounts) -> Self {
        Self {
            slide_id: meta.slide_id.clone(),
            patient_id: meta.patient_id.clone(),
            stain: meta.stain.clone(),
            centre: meta.centre.clone(),
            counts,
            dice: dice(&counts),
            empty_masks: counts.both_empty(),
        }
    }
}

/// Scores a predicted mask against the slide's ground truth at `target_mag`.
pub fn evaluate_slide(slide: &Slide, pred: &MaskRaster, target_mag: f64) -> Result<SlideReport> {
    let gt = slide.load_mask(target_mag)?;
    Ok(SlideReport::new(slide.meta(), confusion(pred, &gt)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    /// Dice of the summed confusion counts.
    pub pooled_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub dice_mean: f64,
    /// Sample (n - 1) standard deviation; 0 for a single slide.
    pub dice_std: f64,
    pub pooled_dice: f64,
    pub empty_mask_slides: usize,
}

/// The content of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub cohort: CohortSummary,
    pub per_slide: Vec<SlideReport>,
    pub per_stain: BTreeMap<String, GroupSummary>,
    pub per_centre: BTreeMap<String, GroupSummary>,
}

/// Group key for slides with no recorded centre.
pub const UNKNOWN_CENTRE: &str = "unknown";

pub fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn summarize(members: &[&SlideReport]) -> GroupSummary {
    let d: Vec<f64> = members.iter().map(|r| r.dice).collect();
    let (dice_mean, dice_std) = mean_and_sample_std(&d);
    let pooled = members
        .iter()
        .fold(ConfusionCounts::default(), |acc, r| acc + r.counts);
    GroupSummary {
        n: members.len(),
        dice_mean,
        dice_std,
        pooled_dice: dice(&pooled),
    }
}

fn group_by(reports: &[SlideReport], key: impl Fn(&SlideReport) -> String) -> BTreeMap<String, GroupSummary> {
    let mut groups: BTreeMap<String, Vec<&SlideReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(key(r)).or_default().push(r);
    }
    groups.into_iter().map(|(k, v)| (k, summarize(&v))).collect()
}

/// Unweighted per-slide mean and sample std of Dice, plus per-stain and
/// per-centre breakdowns. Slides are ordered by id, so the result does not
/// depend on input order.
pub fn aggregate(reports: &[SlideReport]) -> Result<CohortReport> {
    if reports.is_empty() {
        return Err(Error::Aggregation("no slide reports to aggregate".into()));
    }
    let mut per_slide = reports.to_vec();
    per_slide.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
    let all: Vec<&SlideReport> = per_slide.iter().collect();
    let s = summarize(&all);
    Ok(CohortReport {
        cohort: CohortSummary {
            n: s.n,
            dice_mean: s.dice_mean,
            dice_std: s.dice_std,
            pooled_dice: s.pooled_dice,
            empty_mask_slides: per_slide.iter().filter(|r| r.empty_masks).count(),
        },
        per_stain: group_by(&per_slide, |r| r.stain.clone()),
        per_centre: group_by(&per_slide, |r| {
            r.centre.clone().unwrap_or_else(|| UNKNOWN_CENTRE.to_string())
        }),
        per_slide,
    })
}

pub fn write_report(path: &Path, report: &CohortReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Format(format!("cannot encode report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<CohortReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
