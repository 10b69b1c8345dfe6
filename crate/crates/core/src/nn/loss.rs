//! Focal Tversky loss and soft Dice.
//!
//! With soft counts `TP = Σ p·g`, `FN = Σ (1−p)·g`, `FP = Σ p·(1−g)`:
//!
//! ```text
//! TI   = (TP + ε) / (TP + α·FN + β·FP + ε)
//! loss = (1 − TI)^γ
//! ```
//!
//! α weights false negatives and β false positives. Counts are accumulated
//! in `f64` whatever the tensor type.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_exp: f64,
    pub epsilon: f64,
    pub reduction: LossReduction,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            gamma_exp: 0.75,
            epsilon: 1e-6,
            reduction: LossReduction::Batch,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(self.gamma_exp > 0.0) {
            return Err(Error::Config("gamma_exp must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// How soft counts are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossReduction {
    /// One Tversky index over the whole batch.
    Batch,
    /// Mean of per-image losses.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftCounts {
    pub tp: f64,
    pub fn_: f64,
    pub fp: f64,
}

impl SoftCounts {
    pub fn of<T: Real>(probs: &[T], targets: &[T]) -> Self {
        let mut c = SoftCounts {
            tp: 0.0,
            fn_: 0.0,
            fp: 0.0,
        };
        for (&p, &g) in probs.iter().zip(targets) {
            let (p, g) = (p.as_f64(), g.as_f64());
            c.tp += p * g;
            c.fn_ += (1.0 - p) * g;
            c.fp += p * (1.0 - g);
        }
        c
    }

    pub fn tversky(&self, alpha: f64, beta: f64, eps: f64) -> f64 {
        (self.tp + eps) / (self.tp + alpha * self.fn_ + beta * self.fp + eps)
    }
}

/// Focal Tversky value as a function of the Tversky index.
pub fn focal_tversky_from_index(ti: f64, gamma_exp: f64) -> f64 {
    (1.0 - ti).max(0.0).powf(gamma_exp)
}

pub struct LossOutput<T: Real = f32> {
    pub loss: f64,
    /// Batch Tversky index (mean per-image index under `PerImage`).
    pub tversky: f64,
    pub dloss_dprobs: Tensor<T>,
}

fn check_pair<T: Real>(probs: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if probs.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "probs {:?} vs targets {:?}",
            probs.shape(),
            targets.shape()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Shape("empty loss input".into()));
    }
    if let Some(g) = targets
        .data()
        .iter()
        .find(|&&g| g != T::zero() && g != T::one())
    {
        return Err(Error::Validation(format!("target value {g} is not 0 or 1")));
    }
    Ok(())
}

/// Loss and gradient for one group of pixels, written into `grad`.
fn group<T: Real>(probs: &[T], targets: &[T], lp: &LossParams, scale: f64, grad: &mut [T]) -> (f64, f64) {
    let c = SoftCounts::of(probs, targets);
    let (a, b, eps) = (lp.alpha, lp.beta, lp.epsilon);
    let num = c.tp + eps;
    let den = c.tp + a * c.fn_ + b * c.fp + eps;
    let ti = num / den;
    let loss = focal_tversky_from_index(ti, lp.gamma_exp);
    let one_minus = 1.0 - ti;
    // d loss / d TI = -γ (1 - TI)^(γ - 1); zero at the optimum
    let dl_dti = if one_minus > 0.0 {
        -lp.gamma_exp * one_minus.powf(lp.gamma_exp - 1.0)
    } else {
        0.0
    };
    let k = scale * dl_dti / (den * den);
    for ((d, &_p), &g) in grad.iter_mut().zip(probs).zip(targets) {
        let g = g.as_f64();
        // dN/dp = g, dD/dp = g(1 - α) + β(1 - g)
        let dden = g * (1.0 - a) + b * (1.0 - g);
        *d = T::of(k * (g * den - num * dden));
    }
    (loss, ti)
}

pub fn focal_tversky_loss<T: Real>(
    probs: &Tensor<T>,
    targets: &Tensor<T>,
    lp: &LossParams,
) -> Result<LossOutput<T>> {
    check_pair(probs, targets)?;
    lp.validate()?;
    let mut grad = Tensor::zeros(probs.shape());
    let (loss, tversky) = match lp.reduction {
        LossReduction::Batch => group(probs.data(), targets.data(), lp, 1.0, grad.data_mut()),
        LossReduction::PerImage => {
            let b = probs.shape()[0];
            let per = probs.len() / b;
            let scale = 1.0 / b as f64;
            let (mut l, mut t) = (0.0, 0.0);
            for i in 0..b {
                let r = i * per..(i + 1) * per;
                let (li, ti) = group(
                    &probs.data()[r.clone()],
                    &targets.data()[r.clone()],
                    lp,
                    scale,
                    &mut grad.data_mut()[r],
                );
                l += li * scale;
                t += ti * scale;
            }
            (l, t)
        }
    };
    Ok(LossOutput {
        loss,
        tversky,
        dloss_dprobs: grad,
    })
}

/// `(2·Σpg + ε) / (Σp + Σg + ε)`.
pub fn soft_dice<T: Real>(probs: &Tensor<T>, targets: &Tensor<T>, eps: f64) -> Result<f64> {
    check_pair(probs, targets)?;
    let (mut inter, mut sum) = (0.0f64, 0.0f64);
    for (&p, &g) in probs.data().iter().zip(targets.data()) {
        inter += p.as_f64() * g.as_f64();
        sum += p.as_f64() + g.as_f64();
    }
    Ok((2.0 * inter + eps) / (sum + eps))
}
