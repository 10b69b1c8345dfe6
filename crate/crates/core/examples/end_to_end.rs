//! Synthetic cohort to cohort report: synth, prepare, train, predict,
//! evaluate and overlay, all under one work directory.
//!
//! cargo run --release --example end_to_end -- /tmp/e2e [max_epochs]

use std::path::PathBuf;
use std::time::Instant;

use histoseg::config::PipelineConfig;
use histoseg::eval::{overlay_file_name, prediction_file_name, write_report};
use histoseg::pipeline;
use histoseg::slide_io::open_slide;
use histoseg::synth::{cohort_specs, generate_slide, CohortOptions};

fn main() -> histoseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let work = PathBuf::from(args.next().unwrap_or_else(|| "e2e".into()));
    let max_epochs = args.next().map_or(20, |s| s.parse().expect("max_epochs"));
    let t0 = Instant::now();

    let mut cfg = PipelineConfig::default();
    cfg.seed = 7;
    cfg.train.learning_rate = 5e-4;
    cfg.train.batch_size = 4;
    cfg.train.max_epochs = max_epochs;

    let slides = work.join("slides");
    for spec in cohort_specs(&CohortOptions { seed: cfg.seed, ..CohortOptions::default() }) {
        generate_slide(&spec, &slides.join(&spec.slide_id))?;
    }
    let patches = work.join("patches");
    let n: usize = pipeline::prepare(&slides, &patches, &cfg)?.iter().map(|i| i.samples.len()).sum();
    println!("{n} patches after {:.1?}", t0.elapsed());

    let patches = histoseg::tiling::read_patch_dir(&patches)?;
    let out = pipeline::train_on_patches(patches, &cfg, |s| {
        println!(
            "epoch {:>3}  train {:.4}  val {:.4}  dice {:.4}  [{:.0?}]",
            s.epoch, s.train_loss, s.val_loss, s.val_dice, t0.elapsed()
        )
    })?;
    pipeline::save_training(&work.join("model").join("model.unt"), &out, &cfg)?;
    println!("best epoch {} of {}", out.outcome.best_epoch, out.outcome.stopped_epoch);

    let preds = work.join("preds");
    std::fs::create_dir_all(&preds).map_err(|e| histoseg::Error::io(&preds, e))?;
    for patient in &out.split.test {
        // one slide per patient in the synthetic cohort
        let id = patient.replacen('P', "S", 1);
        let slide = open_slide(&slides.join(&id))?;
        let pred = pipeline::predict(&slide, &out.outcome.best_params, &cfg)?;
        pred.write_png(&preds.join(prediction_file_name(&id)))?;
        pipeline::overlay(&slide, &pred, &cfg)?.write_png(&preds.join(overlay_file_name(&id)))?;
    }
    let report = pipeline::evaluate(&preds, &slides, &cfg)?;
    write_report(&work.join("report.json"), &report)?;
    for r in &report.per_slide {
        println!("{} {:<10} dice {:.4}", r.slide_id, r.stain, r.dice);
    }
    println!(
        "cohort n={} dice {:.4} ± {:.4}  in {:.1?}",
        report.cohort.n, report.cohort.dice_mean, report.cohort.dice_std, t0.elapsed()
    );
    Ok(())
}
