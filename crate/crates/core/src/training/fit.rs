use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::augment::{augment, AugmentRanges};
use super::split::validate_fractions;
use crate::error::{Error, Result};
use crate::nn::{
    focal_tversky_loss, soft_dice, unet_backward, unet_forward, unet_init, LossParams, Mode,
    Tensor, UNetConfig, UNetParams,
};
use crate::raster::{MaskRaster, RasterRGB};
use crate::seed::{derive_seed, rng_for};

/// Metrics only count as improved when they beat the best by this much.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub augment: AugmentRanges,
    /// Patient fractions for (train, val, test).
    pub split_fractions: [f64; 3],
    /// Supplied by the pipeline config's single top-level seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            patience_epochs: 5,
            max_epochs: 200,
            augment: AugmentRanges::default(),
            split_fractions: [0.70, 0.10, 0.20],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience_epochs == 0 {
            return Err(Error::Config("patience_epochs must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("adam_epsilon must be positive".into()));
        }
        self.augment.validate()?;
        validate_fractions(self.split_fractions)
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// One image/mask training pair.
#[derive(Debug, Clone)]
pub struct Example {
    pub image: RasterRGB,
    pub mask: MaskRaster,
}

#[derive(Debug, Clone, Default)]
pub struct Datasets {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

/// Mean loss (and, for validation, mean per-batch soft Dice) of one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub mean_dice: f64,
    pub batches: usize,
}

/// Network inputs are `(v / 255 - INPUT_MEAN) / INPUT_STD` per channel.
/// Slides are mostly bright background, so raw `[0, 1]` inputs leave every
/// ReLU feature with a large common offset.
pub const INPUT_MEAN: f32 = 0.8;
pub const INPUT_STD: f32 = 0.2;

/// Planar, standardized channels of an RGB image.
pub fn image_to_chw(image: &RasterRGB) -> Vec<f32> {
    let hw = image.width() * image.height();
    let mut out = vec![0f32; 3 * hw];
    for (i, px) in image.pixels().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * hw + i] = (f32::from(px[c]) / 255.0 - INPUT_MEAN) / INPUT_STD;
        }
    }
    out
}

pub fn mask_to_plane(mask: &MaskRaster) -> Vec<f32> {
    mask.pixels().iter().map(|&v| f32::from(v)).collect()
}

/// Sizes of consecutive batches covering `n` samples; the last may be short.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    (0..n.div_ceil(batch_size))
        .map(|b| batch_size.min(n - b * batch_size))
        .collect()
}

fn assemble(
    data: &[Example],
    indices: &[usize],
    augment_with: Option<(&AugmentRanges, u64, usize)>,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = &data[indices[0]];
    let (h, w) = (first.image.height(), first.image.width());
    let items: Vec<(Vec<f32>, Vec<f32>)> = indices
        .par_iter()
        .map(|&i| {
            let ex = &data[i];
            let img = match augment_with {
                Some((ranges, seed, epoch)) => {
                    // draws keyed by (epoch, sample index), never by worker
                    let mut rng = rng_for(seed, "augment", ((epoch as u64) << 32) | i as u64);
                    let draw: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
                    augment(&ex.image, ranges, draw)
                }
                None => ex.image.clone(),
            };
            (image_to_chw(&img), mask_to_plane(&ex.mask))
        })
        .collect();
    for &i in indices {
        let ex = &data[i];
        if (ex.image.width(), ex.image.height()) != (w, h)
            || (ex.mask.width(), ex.mask.height()) != (w, h)
        {
            return Err(Error::Shape(format!(
                "sample {i} is not {w}x{h} like the rest of its batch"
            )));
        }
    }
    let (xs, ys): (Vec<_>, Vec<_>) = items.into_iter().unzip();
    Ok((Tensor::stack(&[3, h, w], xs)?, Tensor::stack(&[1, h, w], ys)?))
}

/// One pass over `data`. `Train` shuffles by (seed, epoch), augments and
/// applies one Adam step per batch; `Val` only evaluates.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    params: &mut UNetParams<f32>,
    state: &mut AdamState<f32>,
    data: &[Example],
    cfg: &TrainConfig,
    loss: &LossParams,
    mode: Mode,
    epoch: usize,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::Config("cannot run an epoch on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    if mode == Mode::Train {
        order.shuffle(&mut rng_for(cfg.seed, "batch-order", epoch as u64));
    }
    let hp = cfg.adam();
    let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
    let mut start = 0;
    let sizes = batch_sizes(data.len(), cfg.batch_size);
    for &size in &sizes {
        let idx = &order[start..start + size];
        start += size;
        match mode {
            Mode::Train => {
                let (x, y) = assemble(data, idx, Some((&cfg.augment, cfg.seed, epoch)))?;
                let out = unet_forward(params, &x, Mode::Train)?;
                let l = focal_tversky_loss(&out.probs, &y, loss)?;
                let grads = unet_backward(params, out.cache.as_ref(), &l.dloss_dprobs)?;
                drop(out);
                adam_step(params, &grads, state, &hp)?;
                loss_sum += l.loss;
            }
            Mode::Eval => {
                let (x, y) = assemble(data, idx, None)?;
                let out = unet_forward(params, &x, Mode::Eval)?;
                loss_sum += focal_tversky_loss(&out.probs, &y, loss)?.loss;
                dice_sum += soft_dice(&out.probs, &y, loss.epsilon)?;
            }
        }
    }
    let n = sizes.len() as f64;
    Ok(EpochMetrics {
        mean_loss: loss_sum / n,
        mean_dice: dice_sum / n,
        batches: sizes.len(),
    })
}

/// Patience counter over validation loss and Dice. Either metric improving
/// resets the counter; each best is tracked on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_dice: f64,
    pub best_dice_epoch: Option<usize>,
    pub counter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub loss_improved: bool,
    pub dice_improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_dice: f64::NEG_INFINITY,
            best_dice_epoch: None,
            counter: 0,
        }
    }

    pub fn observe(&mut self, stats: &EpochStats) -> Observation {
        let loss_improved = stats.val_loss < self.best_loss - IMPROVEMENT_TOLERANCE;
        let dice_improved = stats.val_dice > self.best_dice + IMPROVEMENT_TOLERANCE;
        if loss_improved {
            self.best_loss = stats.val_loss;
        }
        if dice_improved {
            self.best_dice = stats.val_dice;
            self.best_dice_epoch = Some(stats.epoch);
        }
        if loss_improved || dice_improved {
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        Observation {
            loss_improved,
            dice_improved,
            stop: self.counter >= self.patience,
        }
    }
}

/// Something that can be trained one epoch at a time.
pub trait EpochRunner {
    type Snapshot;
    /// Runs epoch `epoch` (1-based) and reports validation metrics.
    fn run_epoch(&mut self, epoch: usize) -> Result<EpochStats>;
    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Debug, Clone)]
pub struct Schedule<S> {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best: S,
    pub stopped_epoch: usize,
}

/// Epoch loop with early stopping; keeps the snapshot from the epoch with
/// the best validation Dice.
pub fn run_schedule<R: EpochRunner>(
    runner: &mut R,
    max_epochs: usize,
    patience: usize,
) -> Result<Schedule<R::Snapshot>> {
    let mut stopper = EarlyStopping::new(patience);
    let mut history = Vec::new();
    let mut best = None;
    let mut stopped_epoch = 0;
    for epoch in 1..=max_epochs {
        let stats = runner.run_epoch(epoch)?;
        history.push(stats);
        let obs = stopper.observe(&stats);
        if obs.dice_improved {
            best = Some((epoch, runner.snapshot()));
        }
        stopped_epoch = epoch;
        if obs.stop {
            break;
        }
    }
    let (best_epoch, best) = best.ok_or_else(|| {
        Error::State("validation Dice never produced a usable value".into())
    })?;
    Ok(Schedule {
        history,
        best_epoch,
        best,
        stopped_epoch,
    })
}

struct UNetRunner<'a, F: FnMut(&EpochStats)> {
    params: UNetParams<f32>,
    state: AdamState<f32>,
    data: &'a Datasets,
    cfg: &'a TrainConfig,
    loss: &'a LossParams,
    on_epoch: F,
}

impl<F: FnMut(&EpochStats)> EpochRunner for UNetRunner<'_, F> {
    type Snapshot = UNetParams<f32>;

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochStats> {
        let train = run_epoch(
            &mut self.params,
            &mut self.state,
            &self.data.train,
            self.cfg,
            self.loss,
            Mode::Train,
            epoch,
        )?;
        let val = run_epoch(
            &mut self.params,
            &mut self.state,
            &self.data.val,
            self.cfg,
            self.loss,
            Mode::Eval,
            epoch,
        )?;
        let stats = EpochStats {
            epoch,
            train_loss: train.mean_loss,
            val_loss: val.mean_loss,
            val_dice: val.mean_dice,
        };
        if ![stats.train_loss, stats.val_loss, stats.val_dice]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::State(format!("non-finite metrics at epoch {epoch}: {stats:?}")));
        }
        (self.on_epoch)(&stats);
        Ok(stats)
    }

    fn snapshot(&self) -> UNetParams<f32> {
        self.params.clone()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best_params: UNetParams<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

pub fn fit(
    cfg: &TrainConfig,
    unet: &UNetConfig,
    loss: &LossParams,
    data: &Datasets,
) -> Result<FitOutcome> {
    fit_with_progress(cfg, unet, loss, data, |_| {})
}

/// Trains from a seeded initialization until early stopping or
/// `max_epochs`, calling `on_epoch` after every epoch.
pub fn fit_with_progress(
    cfg: &TrainConfig,
    unet: &UNetConfig,
    loss: &LossParams,
    data: &Datasets,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<FitOutcome> {
    cfg.validate()?;
    loss.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Config(format!(
            "train ({}) and val ({}) splits must both be non-empty",
            data.train.len(),
            data.val.len()
        )));
    }
    let params = unet_init(unet, derive_seed(cfg.seed, "unet-weights", 0))?;
    let state = AdamState::new(&params);
    let mut runner = UNetRunner {
        params,
        state,
        data,
        cfg,
        loss,
        on_epoch,
    };
    let schedule = run_schedule(&mut runner, cfg.max_epochs, cfg.patience_epochs)?;
    Ok(FitOutcome {
        best_params: schedule.best,
        history: schedule.history,
        best_epoch: schedule.best_epoch,
        stopped_epoch: schedule.stopped_epoch,
    })
}
