mod common;

use std::collections::HashSet;

use histoseg::slide_io::open_slide;
use histoseg::tiling::{
    build_grid, classify_tiles, extract_mask_tile, extract_tile, extract_tile_image,
    read_patch_dir, reflect_index, sample_training_set, stitch_tiles, write_patch_dir,
    EdgePolicy, LabeledTile, TileGrid, TileLabel, TileRef,
};
use histoseg::Error;
use proptest::prelude::*;

use common::{random_mask, reflect_walk, rng, write_random_slide};

#[test]
fn reflect_matches_walking_oracle() {
    for n in 1..12 {
        for i in -40isize..60 {
            assert_eq!(reflect_index(i, n), reflect_walk(i, n), "i={i} n={n}");
        }
    }
}

#[test]
fn edge_tile_of_500px_slide_is_reflect_padded() {
    let dir = tempfile::tempdir().unwrap();
    let (meta, img, mask) = write_random_slide(dir.path(), "S1", 500, 448, 11);
    let slide = open_slide(dir.path()).unwrap();
    let grid = build_grid(&meta, 10.0, 224, EdgePolicy::PadReflect).unwrap();
    assert_eq!((grid.cols, grid.rows), (3, 2));
    let tile = grid.tile(2, 1).unwrap();
    let got = extract_tile_image(&slide, &grid, &tile).unwrap();
    let got_mask = extract_mask_tile(&grid, &mask, &tile).unwrap();
    for ty in 0..224 {
        for tx in 0..224 {
            let sx = reflect_walk((448 + tx) as isize, 500);
            let sy = 224 + ty;
            assert_eq!(got.get(tx, ty), img.get(sx, sy), "({tx},{ty})");
            assert_eq!(got_mask.get(tx, ty), mask.get(sx, sy));
        }
    }
    // columns 448..499 are real pixels, 500.. mirror 498, 497, ...
    assert_eq!(got.get(51, 0), img.get(499, 224));
    assert_eq!(got.get(52, 0), img.get(498, 224));
}

#[test]
fn interior_tile_is_a_window() {
    let dir = tempfile::tempdir().unwrap();
    let (meta, img, mask) = write_random_slide(dir.path(), "S1", 500, 448, 12);
    let slide = open_slide(dir.path()).unwrap();
    let grid = build_grid(&meta, 10.0, 224, EdgePolicy::DropPartial).unwrap();
    let tile = grid.tile(1, 0).unwrap();
    let s = extract_tile(&slide, &grid, &mask, &tile, 0.01).unwrap();
    assert_eq!(s.image, img.crop(224, 0, 224, 224));
    assert_eq!(s.mask, mask.crop(224, 0, 224, 224));
    let off = TileRef { col: 2, row: 0, x_px: 448, y_px: 0 };
    assert!(matches!(extract_tile_image(&slide, &grid, &off), Err(Error::Bounds(_))));
}

#[test]
fn missing_tile_is_coverage_error_and_padding_is_cropped() {
    let mask = random_mask(&mut rng(3), 500, 448, 0.3);
    let grid = TileGrid::new("S", 10.0, 224, 500, 448, EdgePolicy::PadReflect).unwrap();
    assert_eq!(grid.len(), 6);
    let mut tiles: Vec<_> = grid
        .tiles()
        .map(|t| (t, extract_mask_tile(&grid, &mask, &t).unwrap()))
        .collect();
    let out = stitch_tiles(&grid, &tiles).unwrap();
    assert_eq!((out.width(), out.height()), (500, 448));
    tiles.pop();
    assert!(matches!(stitch_tiles(&grid, &tiles), Err(Error::Coverage(_))));
}

#[test]
fn sampling_counts() {
    let mk = |n_t: usize, n_b: usize| -> Vec<LabeledTile> {
        (0..n_t + n_b)
            .map(|i| LabeledTile {
                tile: TileRef { col: i, row: 0, x_px: i * 224, y_px: 0 },
                coverage: if i < n_t { 0.5 } else { 0.0 },
                label: if i < n_t { TileLabel::Tissue } else { TileLabel::Background },
            })
            .collect()
    };
    assert_eq!(sample_training_set(&mk(10, 50), 1).unwrap().len(), 20);
    assert_eq!(sample_training_set(&mk(10, 3), 1).unwrap().len(), 13);
    assert_eq!(
        sample_training_set(&mk(10, 50), 9).unwrap(),
        sample_training_set(&mk(10, 50), 9).unwrap()
    );
}

#[test]
fn patch_dir_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (meta, _, mask) = write_random_slide(&dir.path().join("slide"), "S1", 448, 448, 13);
    let slide = open_slide(&dir.path().join("slide")).unwrap();
    let grid = build_grid(&meta, 10.0, 224, EdgePolicy::DropPartial).unwrap();
    let samples: Vec<_> = grid
        .tiles()
        .map(|t| extract_tile(&slide, &grid, &mask, &t, 0.01).unwrap())
        .collect();
    let out = dir.path().join("patches");
    write_patch_dir(&out, &meta, 10.0, 224, &samples).unwrap();
    let back = read_patch_dir(&out).unwrap();
    assert_eq!(back.len(), 4);
    for b in &back {
        let s = samples.iter().find(|s| s.tile == b.entry.tile_ref).unwrap();
        assert_eq!(b.image, s.image);
        assert_eq!(b.mask, s.mask);
        assert_eq!(b.entry.patient_id, "P1");
    }
}

fn policy() -> impl Strategy<Value = EdgePolicy> {
    prop_oneof![Just(EdgePolicy::PadReflect), Just(EdgePolicy::DropPartial)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stitch_inverts_extract(
        seed in 0u64..10_000,
        tile in 4usize..24,
        w in 4usize..90, h in 4usize..90,
        policy in policy(),
    ) {
        let mask = random_mask(&mut rng(seed), w, h, 0.4);
        let grid = TileGrid::new("S", 10.0, tile, w, h, policy);
        prop_assume!(grid.is_ok());
        let grid = grid.unwrap();
        let mut tiles: Vec<_> = grid
            .tiles()
            .map(|t| (t, extract_mask_tile(&grid, &mask, &t).unwrap()))
            .collect();
        tiles.reverse();
        let out = stitch_tiles(&grid, &tiles).unwrap();
        prop_assert_eq!((out.width(), out.height()), (w, h));
        // DropPartial leaves the remainder strip unclaimed, hence background
        let (cw, ch) = (w.min(grid.cols * tile), h.min(grid.rows * tile));
        for y in 0..h {
            for x in 0..w {
                let expect = if x < cw && y < ch { mask.get(x, y) } else { 0 };
                prop_assert_eq!(out.get(x, y), expect);
            }
        }
    }

    #[test]
    fn coverage_matches_pixel_count(
        seed in 0u64..10_000,
        tile in 4usize..20,
        w in 4usize..60, h in 4usize..60,
        p in 0.0f64..1.0,
        policy in policy(),
    ) {
        let mask = random_mask(&mut rng(seed), w, h, p);
        let grid = TileGrid::new("S", 10.0, tile, w, h, policy);
        prop_assume!(grid.is_ok());
        let grid = grid.unwrap();
        let labeled = classify_tiles(&grid, &mask, 0.01).unwrap();
        prop_assert_eq!(labeled.len(), grid.len());
        for l in labeled {
            let mut ones = 0;
            for y in l.tile.y_px..l.tile.y_px + tile {
                for x in l.tile.x_px..l.tile.x_px + tile {
                    if x < w && y < h {
                        ones += mask.get(x, y) as usize;
                    }
                }
            }
            let cov = ones as f64 / (tile * tile) as f64;
            prop_assert!((l.coverage - cov).abs() < 1e-12);
            prop_assert_eq!(l.label == TileLabel::Tissue, cov >= 0.01);
        }
    }

    #[test]
    fn tiles_are_disjoint_and_cover(tile in 1usize..30, w in 1usize..100, h in 1usize..100) {
        let grid = TileGrid::new("S", 10.0, tile, w, h, EdgePolicy::PadReflect).unwrap();
        let mut seen = HashSet::new();
        for t in grid.tiles() {
            let (x, y, vw, vh) = grid.visible(&t);
            for yy in y..y + vh {
                for xx in x..x + vw {
                    prop_assert!(seen.insert((xx, yy)));
                }
            }
        }
        prop_assert_eq!(seen.len(), w * h);
    }

    #[test]
    fn sample_keeps_all_tissue_and_distinct_background(
        mut flags in prop::collection::vec(any::<bool>(), 1..90), seed in 0u64..1000,
    ) {
        flags[0] = true;
        let labeled: Vec<LabeledTile> = flags
            .iter()
            .enumerate()
            .map(|(i, &t)| LabeledTile {
                tile: TileRef { col: i, row: 0, x_px: i, y_px: 0 },
                coverage: 0.0,
                label: if t { TileLabel::Tissue } else { TileLabel::Background },
            })
            .collect();
        let n_tissue = labeled.iter().filter(|l| l.label == TileLabel::Tissue).count();
        let n_back = labeled.len() - n_tissue;
        let out = sample_training_set(&labeled, seed).unwrap();
        let tissue: Vec<_> = out.iter().filter(|l| l.label == TileLabel::Tissue).collect();
        prop_assert_eq!(tissue.len(), n_tissue);
        prop_assert_eq!(out.len() - n_tissue, n_back.min(n_tissue));
        let distinct: HashSet<_> = out.iter().map(|l| l.tile).collect();
        prop_assert_eq!(distinct.len(), out.len());
    }
}
