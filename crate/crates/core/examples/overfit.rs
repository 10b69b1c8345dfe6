//! Trains the default network on a single batch of four synthetic tiles
//! and prints the loss curve.
//!
//! cargo run --release --example overfit -- [steps] [learning_rate]

use std::time::Instant;

use histoseg::nn::{focal_tversky_loss, unet_backward, unet_forward, unet_init, LossParams, Mode, Tensor, UNetConfig};
use histoseg::slide_io::open_slide;
use histoseg::synth::{cohort_specs, generate_slide, CohortOptions};
use histoseg::tiling::{build_grid, extract_tile, EdgePolicy};
use histoseg::training::{adam_step, image_to_chw, mask_to_plane, AdamHyper, AdamState};

fn main() -> histoseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(200, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(5e-4, |s| s.parse().expect("learning_rate"));

    let dir = tempfile_dir();
    let spec = cohort_specs(&CohortOptions { n_slides: 1, seed: 7, ..CohortOptions::default() }).remove(0);
    generate_slide(&spec, &dir)?;
    let slide = open_slide(&dir)?;
    let mask = slide.load_mask(10.0)?;
    let grid = build_grid(slide.meta(), 10.0, 224, EdgePolicy::DropPartial)?;
    let tiles = grid
        .tiles()
        .take(4)
        .map(|t| extract_tile(&slide, &grid, &mask, &t, 0.01))
        .collect::<histoseg::Result<Vec<_>>>()?;
    let x = Tensor::stack(&[3, 224, 224], tiles.iter().map(|t| image_to_chw(&t.image)).collect())?;
    let y = Tensor::stack(&[1, 224, 224], tiles.iter().map(|t| mask_to_plane(&t.mask)).collect())?;

    let mut params = unet_init(&UNetConfig::default(), 7)?;
    let mut state = AdamState::new(&params);
    let hp = AdamHyper { learning_rate: lr, ..AdamHyper::default() };
    let lp = LossParams::default();
    let t0 = Instant::now();
    for step in 1..=steps {
        let out = unet_forward(&params, &x, Mode::Train)?;
        let l = focal_tversky_loss(&out.probs, &y, &lp)?;
        let g = unet_backward(&params, out.cache.as_ref(), &l.dloss_dprobs)?;
        drop(out);
        adam_step(&mut params, &g, &mut state, &hp)?;
        if step == 1 || step % 20 == 0 {
            println!("step {step:>4}  loss {:.5}  TI {:.4}  [{:.0?}]", l.loss, l.tversky, t0.elapsed());
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("histoseg-overfit-{}", std::process::id()))
}
