mod common;

use std::collections::BTreeMap;

use histoseg::eval::{
    aggregate, confusion, dice, predict_slide, predict_tile_probs, read_report, render_overlay,
    write_report, ConfusionCounts, InferenceConfig, OverlayPalette, SlideReport, DIMMED_MAX,
};
use histoseg::nn::{unet_init, UNetConfig, UNetParams};
use histoseg::slide_io::open_slide;
use histoseg::tiling::{build_grid, EdgePolicy};
use histoseg::{Error, MaskRaster, RasterRGB};
use proptest::prelude::*;

use common::{confusion_oracle, meta, random_mask, random_rgb, rng, write_random_slide};

fn small_net() -> UNetParams<f32> {
    unet_init(&UNetConfig { depth: 2, base_channels: 2, ..UNetConfig::default() }, 1).unwrap()
}

#[test]
fn zero_model_predicts_all_tissue() {
    let dir = tempfile::tempdir().unwrap();
    write_random_slide(dir.path(), "S1", 100, 60, 1);
    let slide = open_slide(dir.path()).unwrap();
    let p = UNetParams::zeros(UNetConfig { depth: 2, base_channels: 2, ..UNetConfig::default() }).unwrap();
    let pred = predict_slide(&slide, &p, 10.0, 32, &InferenceConfig::default()).unwrap();
    assert_eq!((pred.width(), pred.height()), (100, 60));
    assert_eq!(pred.count_ones(), 6000);
    let grid = build_grid(slide.meta(), 10.0, 32, EdgePolicy::PadReflect).unwrap();
    for (_, probs) in predict_tile_probs(&slide, &p, &grid, 4).unwrap() {
        assert!(probs.iter().all(|&v| v == 0.5));
    }
}

#[test]
fn prediction_ignores_batch_size_and_keeps_slide_size() {
    let dir = tempfile::tempdir().unwrap();
    write_random_slide(dir.path(), "S1", 500, 448, 2);
    let slide = open_slide(dir.path()).unwrap();
    let p = small_net();
    let one = InferenceConfig { batch: 1, ..InferenceConfig::default() };
    let twenty = InferenceConfig { batch: 20, ..InferenceConfig::default() };
    let a = predict_slide(&slide, &p, 10.0, 224, &one).unwrap();
    let b = predict_slide(&slide, &p, 10.0, 224, &twenty).unwrap();
    assert_eq!((a.width(), a.height()), (500, 448));
    assert_eq!(a, b);
}

#[test]
fn higher_threshold_predicts_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    write_random_slide(dir.path(), "S1", 64, 64, 3);
    let slide = open_slide(dir.path()).unwrap();
    let p = small_net();
    let mut prev: Option<MaskRaster> = None;
    for t in [0.0, 0.3, 0.45, 0.5, 0.55, 0.7, 1.0] {
        let cfg = InferenceConfig { threshold: t, ..InferenceConfig::default() };
        let m = predict_slide(&slide, &p, 10.0, 32, &cfg).unwrap();
        if t == 0.0 {
            assert_eq!(m.count_ones(), 64 * 64);
        }
        if let Some(prev) = &prev {
            assert!(m.pixels().iter().zip(prev.pixels()).all(|(&a, &b)| a <= b));
        }
        prev = Some(m);
    }
    let bad = InferenceConfig { threshold: 1.5, ..InferenceConfig::default() };
    assert!(predict_slide(&slide, &p, 10.0, 32, &bad).is_err());
}

#[test]
fn metric_examples() {
    let c = ConfusionCounts { tp: 8, fp: 2, fn_: 2, tn: 0 };
    assert!((dice(&c) - 0.8).abs() < 1e-15);
    let ones = MaskRaster::ones(10, 10);
    let zeros = MaskRaster::zeros(10, 10);
    assert_eq!(confusion(&ones, &zeros).unwrap().fp, 100);
    assert_eq!(dice(&confusion(&ones, &ones).unwrap()), 1.0);
    assert_eq!(dice(&confusion(&zeros, &zeros).unwrap()), 1.0);
    let mut left = MaskRaster::zeros(4, 1);
    left.set(0, 0, true);
    let mut right = MaskRaster::zeros(4, 1);
    right.set(3, 0, true);
    assert_eq!(dice(&confusion(&left, &right).unwrap()), 0.0);
    assert!(matches!(confusion(&ones, &MaskRaster::ones(9, 10)), Err(Error::Shape(_))));
}

#[test]
fn overlay_extremes() {
    let base = random_rgb(&mut rng(4), 12, 9);
    let pal = OverlayPalette::default();
    let ones = MaskRaster::ones(12, 9);
    let all = render_overlay(&base, &ones, &ones, &pal).unwrap();
    assert!(all.pixels().chunks(3).all(|p| p == pal.tp_color));
    let zeros = MaskRaster::zeros(12, 9);
    let dimmed = render_overlay(&base, &zeros, &zeros, &pal).unwrap();
    assert!(dimmed.pixels().iter().all(|&v| v <= DIMMED_MAX));
    let bad = OverlayPalette { fp_color: pal.tp_color, ..pal };
    assert!(render_overlay(&base, &ones, &ones, &bad).is_err());
}

fn palette_histogram(img: &RasterRGB, pal: &OverlayPalette) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for px in img.pixels().chunks(3) {
        if px == pal.tp_color {
            c.tp += 1;
        } else if px == pal.fn_color {
            c.fn_ += 1;
        } else if px == pal.fp_color {
            c.fp += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn counts_dice_and_overlay_agree_with_oracles(
        seed in 0u64..1_000_000, p in 0.0f64..1.0, q in 0.0f64..1.0,
    ) {
        let mut r = rng(seed);
        let pred = random_mask(&mut r, 16, 16, p);
        let gt = random_mask(&mut r, 16, 16, q);
        let c = confusion(&pred, &gt).unwrap();
        prop_assert_eq!(c, confusion_oracle(&pred, &gt));
        prop_assert_eq!(c.total(), 256);
        let d = dice(&c);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(&confusion(&gt, &pred).unwrap()));
        let pal = OverlayPalette::default();
        let base = random_rgb(&mut r, 16, 16);
        let img = render_overlay(&base, &pred, &gt, &pal).unwrap();
        prop_assert_eq!(palette_histogram(&img, &pal), c);
    }
}

fn report(id: &str, stain: &str, centre: Option<&str>, c: ConfusionCounts) -> SlideReport {
    let mut m = meta(id, &format!("P{id}"), 10.0);
    m.stain = stain.into();
    m.centre = centre.map(str::to_owned);
    SlideReport::new(&m, c)
}

#[test]
fn aggregation_examples() {
    let r08 = report("a", "CD20", Some("C0"), ConfusionCounts { tp: 8, fp: 2, fn_: 2, tn: 0 });
    let r10 = report("b", "CD68", None, ConfusionCounts { tp: 5, fp: 0, fn_: 0, tn: 3 });
    let single = aggregate(std::slice::from_ref(&r08)).unwrap();
    assert_eq!(single.cohort.dice_std, 0.0);
    assert!((single.cohort.dice_mean - 0.8).abs() < 1e-12);

    let both = aggregate(&[r10.clone(), r08.clone()]).unwrap();
    assert!((both.cohort.dice_mean - 0.9).abs() < 1e-12);
    assert!((both.cohort.dice_std - 0.1414).abs() < 1e-4);
    assert_eq!(both.per_slide[0].slide_id, "a");
    assert_eq!(both.per_centre.keys().collect::<Vec<_>>(), vec!["C0", "unknown"]);
    assert!(matches!(aggregate(&[]), Err(Error::Aggregation(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn group_means_recompute_from_members(
        counts in prop::collection::vec((1u64..50, 0u64..20, 0u64..20, 0u64..5), 1..20),
    ) {
        let stains = ["CD20", "CD68", "CD138"];
        let reports: Vec<SlideReport> = counts
            .iter()
            .enumerate()
            .map(|(i, &(tp, fp, fn_, s))| {
                let c = ConfusionCounts { tp, fp, fn_, tn: 0 };
                report(&format!("s{i:02}"), stains[s as usize % 3], Some(&format!("C{}", s % 2)), c)
            })
            .collect();
        let agg = aggregate(&reports).unwrap();
        let mut by_stain: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &reports {
            by_stain.entry(r.stain.as_str()).or_default().push(r.dice);
        }
        prop_assert_eq!(agg.per_stain.len(), by_stain.len());
        for (stain, ds) in by_stain {
            let g = &agg.per_stain[stain];
            prop_assert_eq!(g.n, ds.len());
            prop_assert!((g.dice_mean - ds.iter().sum::<f64>() / ds.len() as f64).abs() < 1e-12);
        }
        let n: usize = agg.per_centre.values().map(|g| g.n).sum();
        prop_assert_eq!(n, reports.len());
    }
}

#[test]
fn report_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = aggregate(&[
        report("a", "CD20", Some("C0"), ConfusionCounts { tp: 8, fp: 2, fn_: 2, tn: 0 }),
        report("b", "CD20", Some("C1"), ConfusionCounts { tp: 3, fp: 1, fn_: 0, tn: 9 }),
    ])
    .unwrap();
    let path = dir.path().join("report.json");
    write_report(&path, &r).unwrap();
    assert_eq!(read_report(&path).unwrap(), r);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"fn\""));
}
