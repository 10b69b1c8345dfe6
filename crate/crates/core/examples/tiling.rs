//! Tiles one synthetic slide, labels the tiles against its mask, draws the
//! balanced training set, writes the patch directory and stitches the mask
//! back together.
//!
//! cargo run --example tiling -- /tmp/tiles

use std::path::PathBuf;

use histoseg::slide_io::open_slide;
use histoseg::synth::{cohort_specs, generate_slide, CohortOptions};
use histoseg::tiling::{
    build_grid, classify_tiles, extract_mask_tile, extract_tile, sample_training_set,
    stitch_tiles, write_patch_dir, EdgePolicy, TileLabel,
};

fn main() -> histoseg::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "tiles".into()));
    let opts = CohortOptions { n_slides: 1, width_10x: 500, height_10x: 448, seed: 1 };
    let spec = &cohort_specs(&opts)[0];
    generate_slide(spec, &work.join("slide"))?;
    let slide = open_slide(&work.join("slide"))?;
    let mask = slide.load_mask(10.0)?;

    for policy in [EdgePolicy::DropPartial, EdgePolicy::PadReflect] {
        let grid = build_grid(slide.meta(), 10.0, 224, policy)?;
        let labeled = classify_tiles(&grid, &mask, 0.01)?;
        println!("{policy:?}: {}x{} tiles", grid.cols, grid.rows);
        for l in &labeled {
            println!("  ({}, {}) coverage {:.3} {:?}", l.tile.col, l.tile.row, l.coverage, l.label);
        }
        let tiles = grid
            .tiles()
            .map(|t| Ok((t, extract_mask_tile(&grid, &mask, &t)?)))
            .collect::<histoseg::Result<Vec<_>>>()?;
        let back = stitch_tiles(&grid, &tiles)?;
        println!("  stitched {}x{}", back.width(), back.height());
    }

    let grid = build_grid(slide.meta(), 10.0, 224, EdgePolicy::DropPartial)?;
    let chosen = sample_training_set(&classify_tiles(&grid, &mask, 0.01)?, 1)?;
    let tissue = chosen.iter().filter(|l| l.label == TileLabel::Tissue).count();
    let samples = chosen
        .iter()
        .map(|l| extract_tile(&slide, &grid, &mask, &l.tile, 0.01))
        .collect::<histoseg::Result<Vec<_>>>()?;
    let index = write_patch_dir(&work.join("patches"), slide.meta(), 10.0, 224, &samples)?;
    println!(
        "training set: {tissue} tissue + {} background, written to {}",
        index.samples.len() - tissue,
        work.join("patches").join(&index.slide_id).display()
    );
    Ok(())
}
