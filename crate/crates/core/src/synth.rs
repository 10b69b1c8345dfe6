//! Synthetic stained slides with exact ground truth.
//!
//! Tissue is a union of smooth random blobs filled with textured stain
//! colours. Artefacts outside the tissue (pen strokes, water-drop rings,
//! speckle) and perturbations inside it (blur, folds) never change the mask.
//! All geometry is specified at 10x and scaled by `objective_power / 10`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{MaskRaster, RasterRGB};
use crate::seed::{derive_seed, rng_for};
use crate::slide_io::{write_slide, SlideMeta};
use crate::training::augment::hsv_to_rgb;

pub const SPEC_FILE: &str = "synth_spec.json";
pub const MIN_SIDE_PX: usize = 448;
/// Every background pixel has all channels at or above this.
pub const BACKGROUND_MIN: u8 = 230;
/// Every tissue pixel has at least one channel at or below this.
pub const TISSUE_MAX: u8 = 215;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StainProfile {
    BrownDAB,
    PurpleHaem,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Artefact {
    PenMark,
    WaterDrop,
    Speckle,
    Blur,
    Fold,
}

impl Artefact {
    pub const ALL: [Artefact; 5] = [
        Artefact::PenMark,
        Artefact::WaterDrop,
        Artefact::Speckle,
        Artefact::Blur,
        Artefact::Fold,
    ];

    /// Drawn on background only (as opposed to perturbing tissue).
    pub fn is_outside_mask(self) -> bool {
        matches!(self, Artefact::PenMark | Artefact::WaterDrop | Artefact::Speckle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub slide_id: String,
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centre: Option<String>,
    /// Level-0 size.
    pub width_px: usize,
    pub height_px: usize,
    pub objective_power: u32,
    pub n_fragments: usize,
    pub stain_profile: StainProfile,
    pub artefacts: BTreeSet<Artefact>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("{}: {m}", self.slide_id)));
        if self.slide_id.is_empty() || self.patient_id.is_empty() {
            return bad("slide and patient ids must be non-empty".into());
        }
        if self.width_px < MIN_SIDE_PX || self.height_px < MIN_SIDE_PX {
            return bad(format!(
                "{}x{} is smaller than {MIN_SIDE_PX}px",
                self.width_px, self.height_px
            ));
        }
        if self.n_fragments == 0 {
            return bad("at least one tissue fragment is required".into());
        }
        let ds = self.downsamples();
        if ds.is_empty() {
            return bad(format!("objective power {} is not 20 or 40", self.objective_power));
        }
        let f = ds[1];
        if self.width_px % f != 0 || self.height_px % f != 0 {
            return bad(format!(
                "{}x{} is not divisible by the level-1 downsample {f}",
                self.width_px, self.height_px
            ));
        }
        Ok(())
    }

    /// Pyramid downsamples: `[1, 2]` at 20x, `[1, 4]` at 40x.
    pub fn downsamples(&self) -> Vec<usize> {
        match self.objective_power {
            20 => vec![1, 2],
            40 => vec![1, 4],
            _ => vec![],
        }
    }

    fn scale(&self) -> f64 {
        f64::from(self.objective_power) / 10.0
    }

    pub fn stain_name(&self) -> &'static str {
        match self.stain_profile {
            StainProfile::BrownDAB => "BrownDAB",
            StainProfile::PurpleHaem => "PurpleHaem",
            StainProfile::Mixed => "Mixed",
        }
    }

    pub fn meta_template(&self) -> SlideMeta {
        SlideMeta {
            slide_id: self.slide_id.clone(),
            patient_id: self.patient_id.clone(),
            stain: self.stain_name().to_string(),
            centre: self.centre.clone(),
            objective_power: f64::from(self.objective_power),
            levels: Vec::new(),
        }
    }
}

/// A rendered slide before it is written to disk.
#[derive(Debug, Clone)]
pub struct SynthSlide {
    pub level0: RasterRGB,
    pub mask: MaskRaster,
    /// Pixels altered by each artefact present in the spec.
    pub artefact_masks: BTreeMap<Artefact, MaskRaster>,
}

struct Fragment {
    cx: f64,
    cy: f64,
    ex: f64,
    ey: f64,
    radius: f64,
    harmonics: Vec<(f64, f64)>,
    hsv: (f64, f64, f64),
}

impl Fragment {
    fn random(rng: &mut ChaCha8Rng, w: f64, h: f64, profile: StainProfile, intensity: f64) -> Self {
        let side = w.min(h);
        let n_harm = 4;
        let harmonics = (0..n_harm)
            .map(|k| {
                let amp = rng.random_range(0.0..0.12) / (1.0 + 0.5 * k as f64);
                (amp, rng.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let profile = match profile {
            StainProfile::Mixed if rng.random::<bool>() => StainProfile::BrownDAB,
            StainProfile::Mixed => StainProfile::PurpleHaem,
            p => p,
        };
        let (hue, sat) = match profile {
            StainProfile::BrownDAB => (rng.random_range(18.0..40.0), rng.random_range(0.35..0.65)),
            _ => (rng.random_range(265.0..305.0), rng.random_range(0.22..0.5)),
        };
        let value = (rng.random_range(0.55..0.78) * intensity).min(0.84);
        Self {
            cx: rng.random_range(0.2..0.8) * w,
            cy: rng.random_range(0.2..0.8) * h,
            ex: rng.random_range(0.75..1.3),
            ey: rng.random_range(0.75..1.3),
            radius: rng.random_range(0.14..0.26) * side,
            harmonics,
            hsv: (hue, sat, value),
        }
    }

    fn bbox(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let reach = self.radius * 1.5;
        let clamp = |v: f64, n: usize| v.max(0.0).min(n as f64) as usize;
        (
            clamp(self.cx - reach * self.ex, w),
            clamp(self.cy - reach * self.ey, h),
            clamp((self.cx + reach * self.ex).ceil() + 1.0, w),
            clamp((self.cy + reach * self.ey).ceil() + 1.0, h),
        )
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.ex;
        let dy = (y - self.cy) / self.ey;
        let d = (dx * dx + dy * dy).sqrt();
        let theta = dy.atan2(dx);
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, &(a, phi))| a * ((k as f64 + 2.0) * theta + phi).cos())
            .sum();
        d < self.radius * (1.0 + wobble)
    }
}

/// Bilinear interpolation of a coarse grid of uniform values in [-1, 1].
struct ValueNoise {
    cell: f64,
    gw: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64) -> Self {
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let grid = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { cell, gw, grid }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let fx = x as f64 / self.cell;
        let fy = y as f64 / self.cell;
        let (ix, iy) = (fx as usize, fy as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let g = |i: usize, j: usize| self.grid[j * self.gw + i];
        let top = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
        let bot = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[f64; 3]>,
    mask: Vec<u8>,
}

impl Canvas {
    fn idx(&self, x: usize, y: usize) -> usize {
        y * self.w + x
    }

    /// Indices of every pixel within `r` of segment (a, b).
    fn segment(&self, a: (f64, f64), b: (f64, f64), r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r).ceil() as usize + 1).min(self.w);
        let y1 = ((a.1.max(b.1) + r).ceil() as usize + 1).min(self.h);
        let (vx, vy) = (b.0 - a.0, b.1 - a.1);
        let len2 = (vx * vx + vy * vy).max(1e-12);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 - a.0, y as f64 - a.1);
                let t = ((px * vx + py * vy) / len2).clamp(0.0, 1.0);
                let (dx, dy) = (px - t * vx, py - t * vy);
                if dx * dx + dy * dy <= r * r {
                    out.push(y * self.w + x);
                }
            }
        }
        out
    }

    fn disc(&self, c: (f64, f64), r: f64) -> Vec<usize> {
        self.segment(c, c, r)
    }
}

fn random_point(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (f64, f64) {
    (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64))
}

fn paint_tissue(c: &mut Canvas, spec: &SynthSpec, fragments: &[Fragment]) {
    let s = spec.scale();
    let mut rng = rng_for(spec.seed, "synth-texture", 0);
    let coarse = ValueNoise::new(&mut rng, c.w, c.h, 14.0 * s);
    let fine = ValueNoise::new(&mut rng, c.w, c.h, 3.0 * s);
    let hue_noise = ValueNoise::new(&mut rng, c.w, c.h, 6.0 * s);
    for (fi, f) in fragments.iter().enumerate() {
        let (x0, y0, x1, y1) = f.bbox(c.w, c.h);
        for y in y0..y1 {
            for x in x0..x1 {
                // later fragments draw over earlier ones
                if f.contains(x as f64, y as f64) {
                    let i = c.idx(x, y);
                    let n = 0.12 * coarse.at(x, y) + 0.07 * fine.at(x, y);
                    let hue = f.hsv.0 + 6.0 * hue_noise.at(x, y);
                    let (r, g, b) = hsv_to_rgb(hue, f.hsv.1, (f.hsv.2 * (1.0 + n)).clamp(0.0, 1.0));
                    c.px[i] = [r * 255.0, g * 255.0, b * 255.0];
                    c.mask[i] = 1 + fi as u8 % 254;
                }
            }
        }
    }
    // stained cells: small dark dots on tissue
    let tissue = c.mask.iter().filter(|&&m| m > 0).count();
    let n_cells = tissue / (90.0 * s * s) as usize;
    for _ in 0..n_cells {
        let p = random_point(&mut rng, c.w, c.h);
        let r = rng.random_range(1.0..2.2) * s;
        let k = rng.random_range(0.45..0.75);
        for i in c.disc(p, r) {
            if c.mask[i] > 0 {
                c.px[i].iter_mut().for_each(|v| *v *= k);
            }
        }
    }
}

fn paint_background(c: &mut Canvas, spec: &SynthSpec) {
    let mut rng = rng_for(spec.seed, "synth-background", 0);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(240.0..251.0));
    let noise = ValueNoise::new(&mut rng, c.w, c.h, 20.0 * spec.scale());
    for y in 0..c.h {
        for x in 0..c.w {
            let n = 3.0 * noise.at(x, y);
            c.px[y * c.w + x] = tint.map(|t| (t + n).clamp(f64::from(BACKGROUND_MIN) + 2.0, 255.0));
        }
    }
}

/// Darkens a band across the tissue, as where a section folds over itself.
fn fold(c: &mut Canvas, spec: &SynthSpec, mark: &mut [u8]) {
    let mut rng = rng_for(spec.seed, "synth-fold", 0);
    for _ in 0..rng.random_range(1..=2) {
        let a = random_point(&mut rng, c.w, c.h);
        let b = random_point(&mut rng, c.w, c.h);
        let r = rng.random_range(4.0..9.0) * spec.scale();
        let k = rng.random_range(0.55..0.75);
        for i in c.segment(a, b, r) {
            if c.mask[i] > 0 {
                c.px[i].iter_mut().for_each(|v| *v *= k);
                mark[i] = 1;
            }
        }
    }
}

/// Box blur of tissue pixels that only averages over tissue neighbours.
fn blur(c: &mut Canvas, spec: &SynthSpec, mark: &mut [u8]) {
    let r = (1.5 * spec.scale()).round() as usize;
    let (w, h) = (c.w, c.h);
    let stride = w + 1;
    let mut sat = vec![[0f64; 4]; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = [0f64; 4];
        for x in 0..w {
            let i = y * w + x;
            if c.mask[i] > 0 {
                let p = c.px[i];
                row[0] += p[0];
                row[1] += p[1];
                row[2] += p[2];
                row[3] += 1.0;
            }
            let above = sat[y * stride + x + 1];
            sat[(y + 1) * stride + x + 1] = std::array::from_fn(|k| above[k] + row[k]);
        }
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if c.mask[i] == 0 {
                continue;
            }
            let (xa, ya) = (x.saturating_sub(r), y.saturating_sub(r));
            let (xb, yb) = ((x + r + 1).min(w), (y + r + 1).min(h));
            let s: [f64; 4] = std::array::from_fn(|k| {
                sat[yb * stride + xb][k] - sat[ya * stride + xb][k] - sat[yb * stride + xa][k]
                    + sat[ya * stride + xa][k]
            });
            c.px[i] = [s[0] / s[3], s[1] / s[3], s[2] / s[3]];
            mark[i] = 1;
        }
    }
}

fn water_drops(c: &mut Canvas, spec: &SynthSpec, mark: &mut [u8]) {
    let mut rng = rng_for(spec.seed, "synth-water-drop", 0);
    let side = c.w.min(c.h) as f64;
    for _ in 0..rng.random_range(1..=3) {
        let centre = random_point(&mut rng, c.w, c.h);
        let radius = rng.random_range(0.05..0.12) * side;
        let ring = rng.random_range(1.5..3.0) * spec.scale();
        let edge = [
            rng.random_range(120.0..160.0),
            rng.random_range(135.0..170.0),
            rng.random_range(165.0..195.0),
        ];
        let alpha = rng.random_range(0.35..0.55);
        for i in c.disc(centre, radius + ring) {
            let (x, y) = (i % c.w, i / c.w);
            if c.mask[i] > 0 {
                continue;
            }
            let d = ((x as f64 - centre.0).powi(2) + (y as f64 - centre.1).powi(2)).sqrt();
            let (target, a) = if d >= radius - ring {
                (edge, alpha)
            } else {
                ([205.0, 212.0, 228.0], 0.08)
            };
            for k in 0..3 {
                c.px[i][k] = c.px[i][k] * (1.0 - a) + target[k] * a;
            }
            mark[i] = 1;
        }
    }
}

fn speckle(c: &mut Canvas, spec: &SynthSpec, mark: &mut [u8]) {
    let mut rng = rng_for(spec.seed, "synth-speckle", 0);
    let n = (c.w * c.h) as f64 / (2500.0 * spec.scale() * spec.scale());
    for _ in 0..n.max(20.0) as usize {
        let p = random_point(&mut rng, c.w, c.h);
        let r = rng.random_range(0.6..1.8) * spec.scale();
        let g = rng.random_range(50.0..120.0);
        let col = [g, g * rng.random_range(0.8..1.0), g * rng.random_range(0.7..1.0)];
        for i in c.disc(p, r) {
            if c.mask[i] == 0 {
                c.px[i] = col;
                mark[i] = 1;
            }
        }
    }
}

fn pen_marks(c: &mut Canvas, spec: &SynthSpec, mark: &mut [u8]) {
    const INKS: [[f64; 3]; 4] = [
        [25.0, 45.0, 150.0],
        [20.0, 110.0, 55.0],
        [35.0, 35.0, 40.0],
        [30.0, 90.0, 160.0],
    ];
    let mut rng = rng_for(spec.seed, "synth-pen", 0);
    for _ in 0..rng.random_range(1..=3) {
        let ink = INKS[rng.random_range(0..INKS.len())];
        let r = rng.random_range(1.5..4.0) * spec.scale();
        let mut p = random_point(&mut rng, c.w, c.h);
        for _ in 0..rng.random_range(2..=5) {
            let q = (
                (p.0 + rng.random_range(-0.35..0.35) * c.w as f64).clamp(0.0, c.w as f64),
                (p.1 + rng.random_range(-0.35..0.35) * c.h as f64).clamp(0.0, c.h as f64),
            );
            for i in c.segment(p, q, r) {
                if c.mask[i] == 0 {
                    c.px[i] = ink;
                    mark[i] = 1;
                }
            }
            p = q;
        }
    }
}

/// Renders the level-0 image, mask and artefact footprints for a spec.
pub fn render_slide(spec: &SynthSpec) -> Result<SynthSlide> {
    spec.validate()?;
    let (w, h) = (spec.width_px, spec.height_px);
    let mut c = Canvas {
        w,
        h,
        px: vec![[0.0; 3]; w * h],
        mask: vec![0; w * h],
    };
    let mut rng = rng_for(spec.seed, "synth-fragments", 0);
    let intensity = rng.random_range(0.85..1.15);
    let fragments: Vec<Fragment> = (0..spec.n_fragments)
        .map(|_| Fragment::random(&mut rng, w as f64, h as f64, spec.stain_profile, intensity))
        .collect();
    paint_background(&mut c, spec);
    paint_tissue(&mut c, spec, &fragments);
    let mut marks: BTreeMap<Artefact, Vec<u8>> = BTreeMap::new();
    // in-tissue perturbations first, then background artefacts, pen on top
    let order = [
        Artefact::Fold,
        Artefact::Blur,
        Artefact::WaterDrop,
        Artefact::Speckle,
        Artefact::PenMark,
    ];
    for a in order.into_iter().filter(|a| spec.artefacts.contains(a)) {
        let mut m = vec![0u8; w * h];
        match a {
            Artefact::Fold => fold(&mut c, spec, &mut m),
            Artefact::Blur => blur(&mut c, spec, &mut m),
            Artefact::WaterDrop => water_drops(&mut c, spec, &mut m),
            Artefact::Speckle => speckle(&mut c, spec, &mut m),
            Artefact::PenMark => pen_marks(&mut c, spec, &mut m),
        }
        marks.insert(a, m);
    }
    let mut pixels = Vec::with_capacity(3 * w * h);
    for (p, &m) in c.px.iter().zip(&c.mask) {
        let mut rgb = p.map(|v| v.clamp(0.0, 255.0).round());
        let lo = rgb.iter().copied().fold(f64::INFINITY, f64::min);
        if m > 0 && lo > f64::from(TISSUE_MAX) {
            let k = f64::from(TISSUE_MAX) / lo;
            rgb = rgb.map(|v| (v * k).floor());
        }
        pixels.extend(rgb.map(|v| v as u8));
    }
    let binary = c.mask.iter().map(|&m| u8::from(m > 0)).collect();
    Ok(SynthSlide {
        level0: RasterRGB::new(w, h, pixels)?,
        mask: MaskRaster::new(w, h, binary)?,
        artefact_masks: marks
            .into_iter()
            .map(|(a, m)| (a, MaskRaster::new(w, h, m).expect("binary")))
            .collect(),
    })
}

/// Renders a spec and writes a slide directory with `mask.png` and
/// `synth_spec.json`.
pub fn generate_slide(spec: &SynthSpec, dir: &Path) -> Result<(SlideMeta, SynthSlide)> {
    let slide = render_slide(spec)?;
    let meta = write_slide(
        dir,
        &spec.meta_template(),
        &slide.level0,
        &spec.downsamples(),
        Some(&slide.mask),
    )?;
    let path = dir.join(SPEC_FILE);
    let text = serde_json::to_string_pretty(spec).expect("spec serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok((meta, slide))
}

/// Pixel is part of the plain background colour band.
pub fn is_background_pixel(rgb: [u8; 3]) -> bool {
    rgb.iter().all(|&v| v >= BACKGROUND_MIN)
}

/// Options for a generated cohort. Sizes are at 10x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortOptions {
    pub n_slides: usize,
    pub width_10x: usize,
    pub height_10x: usize,
    pub seed: u64,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self {
            n_slides: 12,
            width_10x: 448,
            height_10x: 448,
            seed: 0,
        }
    }
}

/// One slide per patient. Objective alternates 20x/40x, stain profile
/// cycles, every slide carries pen marks and water drops, and the other
/// artefacts rotate through the cohort.
pub fn cohort_specs(opts: &CohortOptions) -> Vec<SynthSpec> {
    (0..opts.n_slides)
        .map(|i| {
            let objective_power = if i % 2 == 0 { 20 } else { 40 };
            let scale = objective_power as usize / 10;
            let mut artefacts: BTreeSet<Artefact> = [Artefact::PenMark, Artefact::WaterDrop].into();
            for (k, a) in [Artefact::Speckle, Artefact::Blur, Artefact::Fold].into_iter().enumerate() {
                if (i + k) % 3 != 0 {
                    artefacts.insert(a);
                }
            }
            let seed = derive_seed(opts.seed, "synth-slide", i as u64);
            SynthSpec {
                seed,
                slide_id: format!("S{i:03}"),
                patient_id: format!("P{i:03}"),
                centre: Some(format!("C{}", i % 3)),
                width_px: opts.width_10x * scale,
                height_px: opts.height_10x * scale,
                objective_power: objective_power as u32,
                n_fragments: 2 + (seed % 3) as usize,
                stain_profile: [StainProfile::BrownDAB, StainProfile::PurpleHaem, StainProfile::Mixed][i % 3],
                artefacts,
            }
        })
        .collect()
}
