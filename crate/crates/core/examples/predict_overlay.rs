//! Predicts one slide with a saved model, writes the mask and the TP/FN/FP
//! overlay, and prints the slide's Dice.
//!
//! cargo run --release --example predict_overlay -- <slide_dir> <model> <out_dir>

use std::path::PathBuf;

use histoseg::config::PipelineConfig;
use histoseg::eval::{confusion, dice, overlay_file_name, prediction_file_name};
use histoseg::pipeline;
use histoseg::slide_io::open_slide;

fn main() -> histoseg::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let [slide_dir, model, out] = args.as_slice() else {
        panic!("usage: predict_overlay <slide_dir> <model> <out_dir>");
    };
    let cfg = PipelineConfig::default();
    let params = pipeline::load_model(model, &cfg)?;
    let slide = open_slide(slide_dir)?;
    let id = slide.meta().slide_id.clone();
    let pred = pipeline::predict(&slide, &params, &cfg)?;
    std::fs::create_dir_all(out).map_err(|e| histoseg::Error::io(out, e))?;
    pred.write_png(&out.join(prediction_file_name(&id)))?;
    pipeline::overlay(&slide, &pred, &cfg)?.write_png(&out.join(overlay_file_name(&id)))?;
    let c = confusion(&pred, &slide.load_mask(cfg.tiling.target_mag)?)?;
    println!("{id}: tp {} fn {} fp {} tn {}  dice {:.4}", c.tp, c.fn_, c.fp, c.tn, dice(&c));
    Ok(())
}
