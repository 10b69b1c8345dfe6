//! Fixtures and independently coded oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use histoseg::error::Result;
use histoseg::eval::ConfusionCounts;
use histoseg::nn::{ParamLayout, UNetParams};
use histoseg::slide_io::{write_slide, SlideMeta};
use histoseg::training::{EpochRunner, EpochStats};
use histoseg::{MaskRaster, RasterRGB};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(r: &mut impl Rng, w: usize, h: usize, p: f64) -> MaskRaster {
    let px = (0..w * h).map(|_| u8::from(r.random_bool(p))).collect();
    MaskRaster::new(w, h, px).unwrap()
}

pub fn random_rgb(r: &mut impl Rng, w: usize, h: usize) -> RasterRGB {
    let px = (0..w * h * 3).map(|_| r.random::<u8>()).collect();
    RasterRGB::new(w, h, px).unwrap()
}

pub fn meta(slide_id: &str, patient_id: &str, objective_power: f64) -> SlideMeta {
    SlideMeta {
        slide_id: slide_id.into(),
        patient_id: patient_id.into(),
        stain: "CD20".into(),
        centre: None,
        objective_power,
        levels: Vec::new(),
    }
}

/// Writes a single-level 10x slide with random pixels and mask.
pub fn write_random_slide(
    dir: &Path,
    slide_id: &str,
    w: usize,
    h: usize,
    seed: u64,
) -> (SlideMeta, RasterRGB, MaskRaster) {
    let mut r = rng(seed);
    let img = random_rgb(&mut r, w, h);
    let mask = random_mask(&mut r, w, h, 0.5);
    let m = write_slide(dir, &meta(slide_id, "P1", 10.0), &img, &[1], Some(&mask)).unwrap();
    (m, img, mask)
}

/// Brute-force numpy-style "reflect" index (edge sample not repeated),
/// by walking back and forth one step at a time.
pub fn reflect_walk(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let (mut pos, mut dir) = (0isize, 1isize);
    let steps = i.unsigned_abs();
    if i < 0 {
        dir = -1;
    }
    for _ in 0..steps {
        if pos + dir < 0 || pos + dir >= n as isize {
            dir = -dir;
        }
        pos += dir;
    }
    pos as usize
}

pub fn confusion_oracle(pred: &MaskRaster, gt: &MaskRaster) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(x, y) == 1, gt.get(x, y) == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

/// `(1 - TP / (TP + a FN + b FP))^gamma`, written out from the definition.
pub fn focal_tversky_oracle(tp: f64, fn_: f64, fp: f64, a: f64, b: f64, gamma: f64) -> (f64, f64) {
    let ti = tp / (tp + a * fn_ + b * fp);
    (ti, (1.0 - ti).powf(gamma))
}

pub fn soft_dice_oracle(p: &[f64], g: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut total = 0.0;
    for i in 0..p.len() {
        inter += p[i] * g[i];
        total += p[i] + g[i];
    }
    2.0 * inter / total
}

/// Scalar Adam recurrence with bias correction, `steps` constant gradients.
pub fn adam_scalar_oracle(theta0: f64, grads: &[f64], lr: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut m, mut v, mut th) = (0.0, 0.0, theta0);
    for (k, &g) in grads.iter().enumerate() {
        let t = (k + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        th -= lr * mh / (vh.sqrt() + eps);
    }
    th
}

// ---- direct-loop UNet oracle ----

struct Named<'a> {
    by_name: HashMap<String, (&'a [f64], Vec<usize>)>,
}

impl<'a> Named<'a> {
    fn new(p: &'a UNetParams<f64>) -> Self {
        let layout = ParamLayout::new(p.config());
        let by_name = layout
            .entries
            .into_iter()
            .zip(p.tensors())
            .map(|((name, shape), t)| (name, (t.data(), shape)))
            .collect();
        Self { by_name }
    }

    fn get(&self, name: &str) -> (&'a [f64], &[usize]) {
        let (d, s) = &self.by_name[name];
        (d, s)
    }
}

type Fmap = Vec<Vec<Vec<f64>>>; // [channel][row][col]

fn conv(x: &Fmap, w: &[f64], shape: &[usize], b: &[f64]) -> Fmap {
    let (cout, cin, k) = (shape[0], shape[1], shape[2]);
    let (h, wd) = (x[0].len(), x[0][0].len());
    let r = (k / 2) as isize;
    let mut y = vec![vec![vec![0.0; wd]; h]; cout];
    for co in 0..cout {
        for i in 0..h {
            for j in 0..wd {
                let mut s = b[co];
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let yy = i as isize + ky as isize - r;
                            let xx = j as isize + kx as isize - r;
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                continue;
                            }
                            s += w[((co * cin + ci) * k + ky) * k + kx]
                                * x[ci][yy as usize][xx as usize];
                        }
                    }
                }
                y[co][i][j] = s;
            }
        }
    }
    y
}

fn relu(mut x: Fmap) -> Fmap {
    x.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
    x
}

fn pool(x: &Fmap) -> Fmap {
    x.iter()
        .map(|c| {
            (0..c.len() / 2)
                .map(|i| {
                    (0..c[0].len() / 2)
                        .map(|j| {
                            c[2 * i][2 * j]
                                .max(c[2 * i][2 * j + 1])
                                .max(c[2 * i + 1][2 * j])
                                .max(c[2 * i + 1][2 * j + 1])
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Transposed 2x2 stride-2 conv; weight is (cin, cout, 2, 2).
fn upconv(x: &Fmap, w: &[f64], shape: &[usize], b: &[f64]) -> Fmap {
    let (cin, cout) = (shape[0], shape[1]);
    let (h, wd) = (x[0].len(), x[0][0].len());
    let mut y = vec![vec![vec![0.0; 2 * wd]; 2 * h]; cout];
    for co in 0..cout {
        for oy in 0..2 * h {
            for ox in 0..2 * wd {
                let mut s = b[co];
                for ci in 0..cin {
                    s += w[((ci * cout + co) * 2 + oy % 2) * 2 + ox % 2] * x[ci][oy / 2][ox / 2];
                }
                y[co][oy][ox] = s;
            }
        }
    }
    y
}

/// Forward pass of one `(in_channels, h, w)` sample built from nested loops
/// and the parameter names alone.
pub fn unet_forward_oracle(p: &UNetParams<f64>, x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let cfg = *p.config();
    let n = Named::new(p);
    let block = |x: &Fmap, name: &str| -> Fmap {
        let (w1, s1) = n.get(&format!("{name}.conv1.weight"));
        let (b1, _) = n.get(&format!("{name}.conv1.bias"));
        let (w2, s2) = n.get(&format!("{name}.conv2.weight"));
        let (b2, _) = n.get(&format!("{name}.conv2.bias"));
        relu(conv(&relu(conv(x, w1, s1, b1)), w2, s2, b2))
    };
    let input: Fmap = (0..cfg.in_channels)
        .map(|c| (0..h).map(|i| x[(c * h + i) * w..(c * h + i + 1) * w].to_vec()).collect())
        .collect();
    let mut skips = Vec::new();
    let mut cur = input;
    for i in 0..=cfg.depth {
        let a = block(&cur, &format!("enc{i}"));
        if i < cfg.depth {
            cur = pool(&a);
            skips.push(a);
        } else {
            cur = a;
        }
    }
    for i in (0..cfg.depth).rev() {
        let (uw, us) = n.get(&format!("dec{i}.up.weight"));
        let (ub, _) = n.get(&format!("dec{i}.up.bias"));
        let up = upconv(&cur, uw, us, ub);
        let mut cat = skips[i].clone();
        cat.extend(up);
        cur = block(&cat, &format!("dec{i}"));
    }
    let (hw, hs) = n.get("head.weight");
    let (hb, _) = n.get("head.bias");
    conv(&cur, hw, hs, hb)
        .into_iter()
        .flatten()
        .flatten()
        .map(|z| 1.0 / (1.0 + (-z).exp()))
        .collect()
}

// ---- early stopping traces ----

/// Replays a fixed validation series; the snapshot is the epoch number.
pub struct Scripted {
    pub series: Vec<(f64, f64)>,
    pub current: usize,
}

impl EpochRunner for Scripted {
    type Snapshot = usize;

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochStats> {
        self.current = epoch;
        let (val_loss, val_dice) = self.series[epoch - 1];
        Ok(EpochStats {
            epoch,
            train_loss: val_loss,
            val_loss,
            val_dice,
        })
    }

    fn snapshot(&self) -> usize {
        self.current
    }
}

pub struct StopTrace {
    pub name: &'static str,
    /// (val_loss, val_dice) per epoch.
    pub series: Vec<(f64, f64)>,
    pub max_epochs: usize,
    pub patience: usize,
    pub stop_epoch: usize,
    pub best_epoch: usize,
    /// Patience counter after each epoch.
    pub counters: Vec<usize>,
}

pub fn stop_traces() -> Vec<StopTrace> {
    // epoch 2 best on both metrics, epochs 3-7 improve neither
    let mut a = vec![(0.50, 0.60), (0.40, 0.70)];
    a.extend([(0.45, 0.65); 13]);
    // dice improves every epoch, loss flat after epoch 1
    let b: Vec<(f64, f64)> = (0..12).map(|e| (0.5, 0.1 + 0.05 * e as f64)).collect();
    // dice flat, loss improves at epoch 4 only
    let mut c = vec![(0.50, 0.60), (0.55, 0.60), (0.55, 0.60), (0.40, 0.60)];
    c.extend([(0.45, 0.60); 16]);
    vec![
        StopTrace {
            name: "best at 2, flat after",
            series: a,
            max_epochs: 15,
            patience: 5,
            stop_epoch: 7,
            best_epoch: 2,
            counters: vec![0, 0, 1, 2, 3, 4, 5],
        },
        StopTrace {
            name: "dice always improves",
            series: b,
            max_epochs: 12,
            patience: 5,
            stop_epoch: 12,
            best_epoch: 12,
            counters: vec![0; 12],
        },
        StopTrace {
            name: "loss-only improvement resets",
            series: c,
            max_epochs: 20,
            patience: 5,
            stop_epoch: 9,
            best_epoch: 1,
            counters: vec![0, 1, 2, 0, 1, 2, 3, 4, 5],
        },
    ]
}
