//! Opens a slide directory and shows how each magnification resolves to a
//! pyramid level plus residual downsample.
//!
//! cargo run --example read_slide -- path/to/slide_dir

use std::path::PathBuf;

use histoseg::slide_io::{level_for_magnification, open_slide, size_at_magnification};

fn main() -> histoseg::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).expect("usage: read_slide <slide_dir>"));
    let slide = open_slide(&dir)?;
    let m = slide.meta();
    println!("{} patient {} stain {} scanned at {}x", m.slide_id, m.patient_id, m.stain, m.objective_power);
    for (k, l) in m.levels.iter().enumerate() {
        println!("  level {k}: {}x{} downsample {}", l.width, l.height, l.downsample);
    }
    for mag in [40.0, 20.0, 10.0, 5.0, 15.0] {
        match level_for_magnification(m, mag) {
            Ok(c) => {
                let (w, h) = size_at_magnification(m, mag)?;
                println!("{mag:>4}x -> level {} residual {} -> {w}x{h}", c.level, c.residual_scale);
            }
            Err(e) => println!("{mag:>4}x -> {e}"),
        }
    }
    let mask = slide.load_mask(10.0)?;
    println!(
        "mask at 10x: {}x{}, {:.1}% tissue",
        mask.width(),
        mask.height(),
        100.0 * mask.count_ones() as f64 / (mask.width() * mask.height()) as f64
    );
    Ok(())
}
