mod common;

use std::fs;

use histoseg::slide_io::{level_file_name, open_slide, write_slide, MASK_FILE, META_FILE};
use histoseg::{Error, MaskRaster, RasterRGB};
use proptest::prelude::*;

use common::{meta, random_mask, random_rgb, rng};

#[test]
fn two_level_slide_parses() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_rgb(&mut rng(1), 64, 48);
    write_slide(dir.path(), &meta("S1", "P1", 20.0), &img, &[1, 2], None).unwrap();
    let s = open_slide(dir.path()).unwrap();
    assert_eq!(s.meta().level_count(), 2);
    assert_eq!((s.meta().levels[1].width, s.meta().levels[1].height), (32, 24));
}

#[test]
fn missing_level_file_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_rgb(&mut rng(2), 64, 48);
    write_slide(dir.path(), &meta("S1", "P1", 20.0), &img, &[1, 2], None).unwrap();
    fs::remove_file(dir.path().join(level_file_name(1))).unwrap();
    assert!(matches!(open_slide(dir.path()), Err(Error::Format(_))));
}

#[test]
fn level_size_must_follow_downsample() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_rgb(&mut rng(3), 64, 48);
    write_slide(dir.path(), &meta("S1", "P1", 20.0), &img, &[1, 2], None).unwrap();
    let path = dir.path().join(META_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["levels"][1]["width"] = 64.into();
    fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(open_slide(dir.path()), Err(Error::Validation(_))));
}

#[test]
fn full_read_is_the_stored_level() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_rgb(&mut rng(4), 40, 30);
    write_slide(dir.path(), &meta("S1", "P1", 10.0), &img, &[1], None).unwrap();
    let s = open_slide(dir.path()).unwrap();
    assert_eq!(s.read_region(0, 0, 0, 40, 30).unwrap(), img);
    // independent decode of the stored file
    let decoded = image::open(dir.path().join(level_file_name(0))).unwrap().to_rgb8();
    for (x, y) in [(0, 0), (39, 29), (17, 5)] {
        let px = s.read_region(0, x, y, 1, 1).unwrap();
        assert_eq!(px.get(0, 0), decoded.get_pixel(x as u32, y as u32).0);
    }
}

#[test]
fn overhanging_region_is_bounds_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_rgb(&mut rng(5), 40, 30);
    write_slide(dir.path(), &meta("S1", "P1", 10.0), &img, &[1], None).unwrap();
    let s = open_slide(dir.path()).unwrap();
    assert!(matches!(s.read_region(0, 30, 0, 11, 5), Err(Error::Bounds(_))));
    assert!(matches!(s.read_region(0, 0, 29, 1, 2), Err(Error::Bounds(_))));
    assert!(matches!(s.read_region(1, 0, 0, 1, 1), Err(Error::Bounds(_))));
}

#[test]
fn constant_masks_stay_constant_at_any_magnification() {
    let dir = tempfile::tempdir().unwrap();
    let img = RasterRGB::filled(64, 64, [200, 200, 200]);
    write_slide(dir.path(), &meta("S1", "P1", 40.0), &img, &[1, 4], Some(&MaskRaster::ones(64, 64))).unwrap();
    let s = open_slide(dir.path()).unwrap();
    for mag in [40.0, 20.0, 10.0, 5.0] {
        let m = s.load_mask(mag).unwrap();
        assert_eq!(m.count_ones(), m.width() * m.height(), "{mag}x");
    }
    MaskRaster::zeros(64, 64).write_png(&dir.path().join(MASK_FILE)).unwrap();
    assert_eq!(s.load_mask(10.0).unwrap().count_ones(), 0);
}

#[test]
fn masks_are_stored_as_0_and_255() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.png");
    random_mask(&mut rng(6), 20, 20, 0.5).write_png(&path).unwrap();
    let g = image::open(&path).unwrap().to_luma8();
    assert!(g.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    assert!(g.pixels().any(|p| p.0[0] == 255));
}

#[test]
fn unwritable_path_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = RasterRGB::filled(2, 2, [0, 0, 0])
        .write_png(&blocker.join("a.png"))
        .unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn mask_must_match_level_zero() {
    let dir = tempfile::tempdir().unwrap();
    let img = RasterRGB::filled(32, 32, [200, 200, 200]);
    write_slide(dir.path(), &meta("S1", "P1", 10.0), &img, &[1], Some(&MaskRaster::ones(30, 32))).unwrap();
    let s = open_slide(dir.path()).unwrap();
    assert!(matches!(s.load_mask(10.0), Err(Error::Alignment(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjacent_reads_concatenate(
        seed in 0u64..1000,
        x in 0usize..30, y in 0usize..20,
        w in 2usize..20, h in 1usize..15,
        split_frac in 0.0f64..1.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let img = random_rgb(&mut rng(seed), 50, 36);
        write_slide(dir.path(), &meta("S", "P", 10.0), &img, &[1], None).unwrap();
        let s = open_slide(dir.path()).unwrap();
        let (w, h) = (w.min(50 - x), h.min(36 - y));
        prop_assume!(w >= 2);
        let wl = 1 + ((w - 1) as f64 * split_frac) as usize;
        let whole = s.read_region(0, x, y, w, h).unwrap();
        let left = s.read_region(0, x, y, wl, h).unwrap();
        let right = s.read_region(0, x + wl, y, w - wl, h).unwrap();
        for row in 0..h {
            for col in 0..w {
                let expect = if col < wl { left.get(col, row) } else { right.get(col - wl, row) };
                prop_assert_eq!(whole.get(col, row), expect);
            }
        }
    }

    #[test]
    fn rgb_png_round_trip(seed in 0u64..1000, w in 1usize..40, h in 1usize..40) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = random_rgb(&mut rng(seed), w, h);
        img.write_png(&path).unwrap();
        prop_assert_eq!(RasterRGB::read_png(&path).unwrap(), img);
    }
}
