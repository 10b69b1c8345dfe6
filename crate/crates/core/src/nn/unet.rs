//! Same-padded UNet: an encoder of conv-conv-pool stages, a bottleneck, and
//! a decoder of upconv-concat-conv-conv stages, ending in a 1x1 conv and a
//! sigmoid. Channels double down the encoder and halve up the decoder.
//!
//! Parameters live in one flat list whose order is fixed by [`ParamLayout`]
//! and is also the on-disk order of the model file:
//!
//! ```text
//! enc{i}.conv1.{weight,bias}, enc{i}.conv2.{weight,bias}   i = 0..=depth (enc{depth} is the bottleneck)
//! dec{i}.up.{weight,bias}, dec{i}.conv1.*, dec{i}.conv2.*  i = depth-1 down to 0
//! head.{weight,bias}
//! ```

use std::sync::atomic::{AtomicU64, Ordering};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvGrads};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of pooling stages.
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            depth: 4,
            base_channels: 16,
        }
    }
}

impl UNetConfig {
    /// Depth 1, two base channels: a few hundred parameters, small enough
    /// for exhaustive finite differences.
    pub fn tiny() -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            depth: 1,
            base_channels: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("UNet channel counts must be positive".into()));
        }
        if self.depth > 8 {
            return Err(Error::Config(format!("UNet depth {} is unreasonable", self.depth)));
        }
        Ok(())
    }

    /// Channels at encoder level `i`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = 1usize << self.depth;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by 2^{} = {m}",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Names and shapes of every parameter tensor, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl ParamLayout {
    pub fn new(cfg: &UNetConfig) -> Self {
        let mut entries = Vec::new();
        let conv = |entries: &mut Vec<(String, Vec<usize>)>, name: String, cin: usize, cout: usize, k: usize| {
            entries.push((format!("{name}.weight"), vec![cout, cin, k, k]));
            entries.push((format!("{name}.bias"), vec![cout]));
        };
        for i in 0..=cfg.depth {
            let cin = if i == 0 { cfg.in_channels } else { cfg.channels(i - 1) };
            conv(&mut entries, format!("enc{i}.conv1"), cin, cfg.channels(i), 3);
            conv(&mut entries, format!("enc{i}.conv2"), cfg.channels(i), cfg.channels(i), 3);
        }
        for i in (0..cfg.depth).rev() {
            let (c, up_in) = (cfg.channels(i), cfg.channels(i + 1));
            entries.push((format!("dec{i}.up.weight"), vec![up_in, c, 2, 2]));
            entries.push((format!("dec{i}.up.bias"), vec![c]));
            conv(&mut entries, format!("dec{i}.conv1"), 2 * c, c, 3);
            conv(&mut entries, format!("dec{i}.conv2"), c, c, 3);
        }
        conv(&mut entries, "head".into(), cfg.channels(0), cfg.out_channels, 1);
        Self { entries }
    }

    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

fn enc_index(level: usize, conv: usize) -> usize {
    4 * level + 2 * conv
}

fn dec_index(cfg: &UNetConfig, level: usize) -> usize {
    4 * (cfg.depth + 1) + 6 * (cfg.depth - 1 - level)
}

fn head_index(cfg: &UNetConfig) -> usize {
    4 * (cfg.depth + 1) + 6 * cfg.depth
}

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// All network weights and biases.
#[derive(Debug, Clone)]
pub struct UNetParams<T: Real = f32> {
    config: UNetConfig,
    tensors: Vec<Tensor<T>>,
    id: u64,
    version: u64,
}

impl<T: Real> PartialEq for UNetParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

/// Gradients, shaped exactly like [`UNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &UNetParams<T>) -> Self {
        Self {
            tensors: params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data_mut()
                .iter_mut()
                .zip(b.data())
                .for_each(|(x, &y)| *x += y);
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

impl<T: Real> UNetParams<T> {
    pub fn from_tensors(config: UNetConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let p = Self {
            config,
            tensors,
            id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        };
        p.audit()?;
        Ok(p)
    }

    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let tensors = ParamLayout::new(&config)
            .entries
            .iter()
            .map(|(_, s)| Tensor::zeros(s))
            .collect();
        Self::from_tensors(config, tensors)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Mutable access; invalidates forward caches taken before the call.
    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        self.version += 1;
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks every tensor shape against the layout implied by the config.
    pub fn audit(&self) -> Result<()> {
        let layout = ParamLayout::new(&self.config);
        if layout.entries.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                layout.entries.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in layout.entries.iter().zip(&self.tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> UNetParams<U> {
        UNetParams {
            config: self.config,
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn w(&self, i: usize) -> &[T] {
        self.tensors[i].data()
    }
}

/// He-normal kernels (std = sqrt(2 / fan_in)) and zero biases, one
/// independent random stream per tensor.
pub fn unet_init(config: &UNetConfig, seed: u64) -> Result<UNetParams<f32>> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let tensors = layout
        .entries
        .iter()
        .enumerate()
        .map(|(idx, (name, shape))| {
            if name.ends_with(".bias") {
                return Tensor::zeros(shape);
            }
            let fan_in = if name.contains(".up.") {
                // (cin, cout, 2, 2): each output tap sees one value per input channel
                shape[0]
            } else {
                shape[1..].iter().product()
            };
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut rng = rng_for(seed, "unet-init", idx as u64);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            Tensor::from_vec(shape, data).expect("layout shape")
        })
        .collect();
    UNetParams::from_tensors(*config, tensors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct EncCache<T> {
    input: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
}

struct DecCache<T> {
    cat: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
}

struct SampleCache<T> {
    enc: Vec<EncCache<T>>,
    /// Indexed by level (0 = full resolution).
    dec: Vec<DecCache<T>>,
    probs: Vec<T>,
}

/// Activations retained by a training-mode forward pass.
pub struct ForwardCache<T: Real = f32> {
    param_id: u64,
    param_version: u64,
    height: usize,
    width: usize,
    samples: Vec<SampleCache<T>>,
}

pub struct ForwardOutput<T: Real = f32> {
    /// `(batch, out_channels, height, width)` probabilities in (0, 1).
    pub probs: Tensor<T>,
    pub cache: Option<ForwardCache<T>>,
}

fn forward_sample<T: Real>(p: &UNetParams<T>, x: &[T], h: usize, w: usize) -> SampleCache<T> {
    let cfg = p.config;
    let mut enc: Vec<EncCache<T>> = Vec::with_capacity(cfg.depth + 1);
    let mut cur = x.to_vec();
    for i in 0..=cfg.depth {
        let (lh, lw) = (h >> i, w >> i);
        let cin = if i == 0 { cfg.in_channels } else { cfg.channels(i - 1) };
        let c = cfg.channels(i);
        let (w1, w2) = (enc_index(i, 0), enc_index(i, 1));
        let mut a1 = layers::conv3x3_forward(&cur, cin, lh, lw, p.w(w1), p.w(w1 + 1), c);
        layers::relu_inplace(&mut a1);
        let mut a2 = layers::conv3x3_forward(&a1, c, lh, lw, p.w(w2), p.w(w2 + 1), c);
        layers::relu_inplace(&mut a2);
        let next = if i < cfg.depth {
            layers::maxpool2_forward(&a2, c, lh, lw)
        } else {
            Vec::new()
        };
        enc.push(EncCache {
            input: std::mem::replace(&mut cur, next),
            a1,
            a2,
        });
    }
    let mut dec: Vec<Option<DecCache<T>>> = (0..cfg.depth).map(|_| None).collect();
    for i in (0..cfg.depth).rev() {
        let (lh, lw) = (h >> i, w >> i);
        let c = cfg.channels(i);
        let base = dec_index(&cfg, i);
        let below: &[T] = if i + 1 == cfg.depth {
            &enc[cfg.depth].a2
        } else {
            &dec[i + 1].as_ref().unwrap().a2
        };
        let up = layers::upconv2x2_forward(
            below,
            cfg.channels(i + 1),
            lh / 2,
            lw / 2,
            p.w(base),
            p.w(base + 1),
            c,
        );
        let mut cat = Vec::with_capacity(2 * c * lh * lw);
        cat.extend_from_slice(&enc[i].a2);
        cat.extend_from_slice(&up);
        let mut a1 = layers::conv3x3_forward(&cat, 2 * c, lh, lw, p.w(base + 2), p.w(base + 3), c);
        layers::relu_inplace(&mut a1);
        let mut a2 = layers::conv3x3_forward(&a1, c, lh, lw, p.w(base + 4), p.w(base + 5), c);
        layers::relu_inplace(&mut a2);
        dec[i] = Some(DecCache { cat, a1, a2 });
    }
    let dec: Vec<DecCache<T>> = dec.into_iter().map(Option::unwrap).collect();
    let top: &[T] = if cfg.depth == 0 { &enc[0].a2 } else { &dec[0].a2 };
    let hi = head_index(&cfg);
    let mut probs = layers::conv1x1_forward(
        top,
        cfg.channels(0),
        h * w,
        p.w(hi),
        p.w(hi + 1),
        cfg.out_channels,
    );
    probs.iter_mut().for_each(|v| *v = layers::sigmoid(*v));
    SampleCache { enc, dec, probs }
}

/// Runs the network on a `(batch, in_channels, h, w)` input. Samples are
/// processed independently, so results do not depend on batch size or on
/// the number of worker threads.
pub fn unet_forward<T: Real>(
    params: &UNetParams<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<ForwardOutput<T>> {
    let cfg = params.config;
    let (b, c, h, w) = input.dims4()?;
    if c != cfg.in_channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, network expects {}",
            cfg.in_channels
        )));
    }
    cfg.check_input(h, w)?;
    let samples: Vec<SampleCache<T>> = (0..b)
        .into_par_iter()
        .map(|i| forward_sample(params, input.sample(i), h, w))
        .collect();
    let probs = Tensor::stack(
        &[cfg.out_channels, h, w],
        samples.iter().map(|s| s.probs.clone()).collect(),
    )?;
    let cache = (mode == Mode::Train).then(|| ForwardCache {
        param_id: params.id,
        param_version: params.version,
        height: h,
        width: w,
        samples,
    });
    Ok(ForwardOutput { probs, cache })
}

fn put<T: Real>(g: &mut [Vec<T>], idx: usize, cg: ConvGrads<T>) -> Option<Vec<T>> {
    g[idx] = cg.dweight;
    g[idx + 1] = cg.dbias;
    cg.dx
}

fn backward_sample<T: Real>(
    p: &UNetParams<T>,
    s: &SampleCache<T>,
    dprobs: &[T],
    h: usize,
    w: usize,
) -> Vec<Vec<T>> {
    let cfg = p.config;
    let mut g: Vec<Vec<T>> = vec![Vec::new(); p.tensors.len()];

    // sigmoid
    let dz: Vec<T> = dprobs
        .iter()
        .zip(&s.probs)
        .map(|(&d, &q)| d * q * (T::one() - q))
        .collect();
    let top: &[T] = if cfg.depth == 0 { &s.enc[0].a2 } else { &s.dec[0].a2 };
    let hi = head_index(&cfg);
    let head = layers::conv1x1_backward(top, cfg.channels(0), h * w, p.w(hi), cfg.out_channels, &dz);
    let mut d = put(&mut g, hi, head).unwrap();

    let mut dskip: Vec<Vec<T>> = vec![Vec::new(); cfg.depth];
    for i in 0..cfg.depth {
        let (lh, lw) = (h >> i, w >> i);
        let c = cfg.channels(i);
        let base = dec_index(&cfg, i);
        let dc = &s.dec[i];
        layers::relu_backward_inplace(&dc.a2, &mut d);
        let g2 = layers::conv3x3_backward(&dc.a1, c, lh, lw, p.w(base + 4), c, &d, true);
        let mut da1 = put(&mut g, base + 4, g2).unwrap();
        layers::relu_backward_inplace(&dc.a1, &mut da1);
        let g1 = layers::conv3x3_backward(&dc.cat, 2 * c, lh, lw, p.w(base + 2), c, &da1, true);
        let mut dcat = put(&mut g, base + 2, g1).unwrap();
        let dup = dcat.split_off(c * lh * lw);
        dskip[i] = dcat;
        let below: &[T] = if i + 1 == cfg.depth {
            &s.enc[cfg.depth].a2
        } else {
            &s.dec[i + 1].a2
        };
        let gu = layers::upconv2x2_backward(
            below,
            cfg.channels(i + 1),
            lh / 2,
            lw / 2,
            p.w(base),
            c,
            &dup,
        );
        d = put(&mut g, base, gu).unwrap();
    }

    // d is now the gradient w.r.t. the bottleneck output
    for i in (0..=cfg.depth).rev() {
        let (lh, lw) = (h >> i, w >> i);
        let cin = if i == 0 { cfg.in_channels } else { cfg.channels(i - 1) };
        let c = cfg.channels(i);
        let e = &s.enc[i];
        layers::relu_backward_inplace(&e.a2, &mut d);
        let (w1, w2) = (enc_index(i, 0), enc_index(i, 1));
        let g2 = layers::conv3x3_backward(&e.a1, c, lh, lw, p.w(w2), c, &d, true);
        let mut da1 = put(&mut g, w2, g2).unwrap();
        layers::relu_backward_inplace(&e.a1, &mut da1);
        let g1 = layers::conv3x3_backward(&e.input, cin, lh, lw, p.w(w1), c, &da1, i > 0);
        if let Some(dinput) = put(&mut g, w1, g1) {
            let below = &s.enc[i - 1];
            let mut next =
                layers::maxpool2_backward(&below.a2, cfg.channels(i - 1), lh * 2, lw * 2, &dinput);
            next.iter_mut()
                .zip(&dskip[i - 1])
                .for_each(|(a, &b)| *a += b);
            d = next;
        }
    }
    g
}

/// Exact gradients of a scalar loss with respect to every parameter, given
/// the loss gradient with respect to the output probabilities. Per-sample
/// gradients are summed in batch order.
pub fn unet_backward<T: Real>(
    params: &UNetParams<T>,
    cache: Option<&ForwardCache<T>>,
    dloss_dprobs: &Tensor<T>,
) -> Result<Gradients<T>> {
    let cache = cache.ok_or_else(|| {
        Error::State("backward needs the cache of a training-mode forward pass".into())
    })?;
    if cache.param_id != params.id || cache.param_version != params.version {
        return Err(Error::State(
            "forward cache was taken on different or since-modified parameters".into(),
        ));
    }
    let cfg = params.config;
    let expect = [cache.samples.len(), cfg.out_channels, cache.height, cache.width];
    if dloss_dprobs.shape() != expect {
        return Err(Error::Shape(format!(
            "upstream gradient shape {:?}, expected {expect:?}",
            dloss_dprobs.shape()
        )));
    }
    let per_sample: Vec<Vec<Vec<T>>> = cache
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| backward_sample(params, s, dloss_dprobs.sample(i), cache.height, cache.width))
        .collect();
    let mut grads = Gradients::zeros_like(params);
    for sample in per_sample {
        for (acc, g) in grads.tensors.iter_mut().zip(sample) {
            acc.data_mut()
                .iter_mut()
                .zip(g)
                .for_each(|(a, v)| *a += v);
        }
    }
    Ok(grads)
}
