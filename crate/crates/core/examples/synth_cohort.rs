//! Generates a small synthetic cohort and prints what was written.
//!
//! cargo run --release --example synth_cohort -- /tmp/cohort

use std::path::PathBuf;

use histoseg::synth::{cohort_specs, generate_slide, CohortOptions};

fn main() -> histoseg::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_cohort".into()));
    let opts = CohortOptions {
        n_slides: 4,
        ..CohortOptions::default()
    };
    for spec in cohort_specs(&opts) {
        let (meta, slide) = generate_slide(&spec, &out.join(&spec.slide_id))?;
        let tissue = slide.mask.count_ones() as f64 / (spec.width_px * spec.height_px) as f64;
        println!(
            "{} {} {}x at {}x{}  levels {:?}  tissue {:.1}%  artefacts {:?}",
            meta.slide_id,
            meta.stain,
            spec.objective_power,
            spec.width_px,
            spec.height_px,
            meta.levels.iter().map(|l| l.downsample).collect::<Vec<_>>(),
            100.0 * tissue,
            spec.artefacts,
        );
    }
    Ok(())
}
