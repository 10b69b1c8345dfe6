//! Stage functions shared by the command line, the examples and the tests:
//! prepare patches, train, predict, evaluate and render overlays.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, confusion, predict_slide, prediction_file_name, render_overlay, CohortReport,
    SlideReport,
};
use crate::nn::{deserialize_params, serialize_params, UNetParams};
use crate::raster::{MaskRaster, RasterRGB};
use crate::seed::derive_seed;
use crate::slide_io::{open_slide, Slide, META_FILE};
use crate::tiling::{
    build_grid, classify_tiles, extract_tile, read_patch_dir, sample_training_set,
    write_patch_dir, EdgePolicy, PatchIndex, PatchSample,
};
use crate::training::{
    fit_with_progress, split_by_patient, Datasets, EpochStats, Example, FitOutcome, Split,
    SplitAssignment,
};

pub const HISTORY_FILE: &str = "history.csv";
pub const SPLIT_FILE: &str = "split.json";

/// Slide directories (those holding a `meta.json`) directly under `root`,
/// sorted by path.
pub fn list_slide_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("no slide directories under {}", root.display())));
    }
    Ok(dirs)
}

/// Tiles one slide without partial edge tiles, keeps every tissue tile plus
/// an equal-sized random draw of background tiles, and writes them under
/// `out/{slide_id}/`.
pub fn prepare_slide(slide: &Slide, out: &Path, cfg: &PipelineConfig) -> Result<PatchIndex> {
    let t = &cfg.tiling;
    let meta = slide.meta();
    let mask = slide.load_mask(t.target_mag)?;
    let grid = build_grid(meta, t.target_mag, t.tile_px, EdgePolicy::DropPartial)?;
    let labeled = classify_tiles(&grid, &mask, t.tissue_threshold)?;
    let seed = derive_seed(cfg.seed, &format!("prepare/{}", meta.slide_id), 0);
    let chosen = sample_training_set(&labeled, seed)?;
    let samples = chosen
        .par_iter()
        .map(|l| extract_tile(slide, &grid, &mask, &l.tile, t.tissue_threshold))
        .collect::<Result<Vec<_>>>()?;
    write_patch_dir(out, meta, t.target_mag, t.tile_px, &samples)
}

pub fn prepare(slides_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Vec<PatchIndex>> {
    cfg.validate()?;
    list_slide_dirs(slides_dir)?
        .par_iter()
        .map(|dir| prepare_slide(&open_slide(dir)?, out, cfg))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub outcome: FitOutcome,
    pub split: SplitAssignment,
}

/// Splits the patches by patient and fits on the train and val shares;
/// test patients' patches are never read into the model.
pub fn train_on_patches(
    patches: Vec<PatchSample>,
    cfg: &PipelineConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let tc = cfg.train_config();
    let patients: Vec<&str> = patches.iter().map(|p| p.entry.patient_id.as_str()).collect();
    let split = split_by_patient(&patients, tc.split_fractions, tc.seed)?;
    let mut data = Datasets::default();
    for p in patches {
        let ex = Example {
            image: p.image,
            mask: p.mask,
        };
        match split.split_of(&p.entry.patient_id) {
            Some(Split::Train) => data.train.push(ex),
            Some(Split::Val) => data.val.push(ex),
            _ => {}
        }
    }
    let outcome = fit_with_progress(&tc, &cfg.unet, &cfg.loss, &data, on_epoch)?;
    Ok(TrainOutput { outcome, split })
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_dice\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch, h.train_loss, h.val_loss, h.val_dice
        ));
    }
    s
}

/// Writes the model file plus `history.csv` and `split.json` beside it.
pub fn save_training(model_path: &Path, out: &TrainOutput, cfg: &PipelineConfig) -> Result<()> {
    let dir = model_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let provenance = json!({
        "selection_metric": "val_dice",
        "best_epoch": out.outcome.best_epoch,
        "stopped_epoch": out.outcome.stopped_epoch,
        "seed": cfg.seed,
        "train": cfg.train,
        "tiling": cfg.tiling,
    });
    serialize_params(&out.outcome.best_params, &cfg.loss, provenance, model_path)?;
    let hist = dir.join(HISTORY_FILE);
    fs::write(&hist, history_csv(&out.outcome.history)).map_err(|e| Error::io(&hist, e))?;
    let split = dir.join(SPLIT_FILE);
    let text = serde_json::to_string_pretty(&out.split).expect("split serializes");
    fs::write(&split, text).map_err(|e| Error::io(&split, e))
}

pub fn train(patches_dir: &Path, model_path: &Path, cfg: &PipelineConfig) -> Result<TrainOutput> {
    let out = train_on_patches(read_patch_dir(patches_dir)?, cfg, |_| {})?;
    save_training(model_path, &out, cfg)?;
    Ok(out)
}

pub fn load_model(path: &Path, cfg: &PipelineConfig) -> Result<UNetParams<f32>> {
    let (params, _) = deserialize_params(path)?;
    params.config().check_input(cfg.tiling.tile_px, cfg.tiling.tile_px)?;
    Ok(params)
}

pub fn predict(slide: &Slide, params: &UNetParams<f32>, cfg: &PipelineConfig) -> Result<MaskRaster> {
    predict_slide(
        slide,
        params,
        cfg.tiling.target_mag,
        cfg.tiling.tile_px,
        &cfg.inference,
    )
}

/// Scores every `{slide_id}_pred.png` in `pred_dir` against the matching
/// slide in `slides_dir`.
pub fn evaluate(pred_dir: &Path, slides_dir: &Path, cfg: &PipelineConfig) -> Result<CohortReport> {
    let mut ids: Vec<String> = fs::read_dir(pred_dir)
        .map_err(|e| Error::io(pred_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_pred.png"))
                .map(str::to_owned)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Aggregation(format!(
            "no *_pred.png files in {}",
            pred_dir.display()
        )));
    }
    let reports = ids
        .par_iter()
        .map(|id| {
            let slide = open_slide(&slides_dir.join(id))?;
            let gt = slide.load_mask(cfg.tiling.target_mag)?;
            let pred = MaskRaster::read_png(&pred_dir.join(prediction_file_name(id)))?;
            Ok(SlideReport::new(slide.meta(), confusion(&pred, &gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&reports)
}

pub fn overlay(slide: &Slide, pred: &MaskRaster, cfg: &PipelineConfig) -> Result<RasterRGB> {
    let base = slide.read_full_at(cfg.tiling.target_mag)?;
    let gt = slide.load_mask(cfg.tiling.target_mag)?;
    render_overlay(&base, pred, &gt, &cfg.palette)
}
