//! Finite-difference check of the analytic gradients over several seeds.
//!
//! cargo run --release --example gradcheck -- [n_seeds]

use std::time::Instant;

use histoseg::nn::{grad_check, UNetConfig};

fn main() -> histoseg::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(10, |s| s.parse().expect("n_seeds"));
    let cfg = UNetConfig::tiny();
    for seed in 0..n {
        let t = Instant::now();
        let r = grad_check(&cfg, seed, 1e-3)?;
        println!(
            "seed {seed:>3}: {} params  max rel {:.2e}  max abs {:.2e}  {}  {:.0?}",
            r.param_count,
            r.max_rel_err,
            r.max_abs_err,
            if r.pass { "pass" } else { "FAIL" },
            t.elapsed()
        );
    }
    Ok(())
}
