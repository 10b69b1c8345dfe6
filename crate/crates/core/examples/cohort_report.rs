//! Builds a cohort report from hand-made confusion counts and prints the
//! per-stain and per-centre summaries.
//!
//! cargo run --example cohort_report

use histoseg::eval::{aggregate, ConfusionCounts, SlideReport};
use histoseg::slide_io::SlideMeta;

fn main() -> histoseg::Result<()> {
    let rows = [
        ("S1", "CD20", Some("C1"), (900, 40, 60, 9000)),
        ("S2", "CD20", Some("C2"), (500, 120, 30, 9350)),
        ("S3", "CD68", Some("C1"), (700, 10, 300, 8990)),
        ("S4", "CD138", None, (0, 0, 0, 10000)),
    ];
    let reports: Vec<SlideReport> = rows
        .iter()
        .map(|&(id, stain, centre, (tp, fp, fn_, tn))| {
            let meta = SlideMeta {
                slide_id: id.into(),
                patient_id: format!("P-{id}"),
                stain: stain.into(),
                centre: centre.map(str::to_owned),
                objective_power: 20.0,
                levels: Vec::new(),
            };
            SlideReport::new(&meta, ConfusionCounts { tp, fp, fn_, tn })
        })
        .collect();
    let r = aggregate(&reports)?;
    for s in &r.per_slide {
        println!("{} {:<6} dice {:.4}{}", s.slide_id, s.stain, s.dice, if s.empty_masks { " (both masks empty)" } else { "" });
    }
    println!(
        "cohort n={} dice {:.4} ± {:.4} pooled {:.4}",
        r.cohort.n, r.cohort.dice_mean, r.cohort.dice_std, r.cohort.pooled_dice
    );
    for (name, group) in [("stain", &r.per_stain), ("centre", &r.per_centre)] {
        for (k, g) in group {
            println!("  {name} {k:<8} n={} dice {:.4} ± {:.4}", g.n, g.dice_mean, g.dice_std);
        }
    }
    println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
    Ok(())
}
