//! Finite-difference verification of the analytic backward pass.

use rand::Rng;
use serde::Serialize;

use super::loss::{focal_tversky_loss, LossParams};
use super::tensor::Tensor;
use super::unet::{
    unet_backward, unet_forward, unet_init, ForwardCache, Gradients, Mode, ParamLayout, UNetConfig,
    UNetParams,
};
use crate::error::Result;
use crate::seed::rng_for;

/// Central-difference step. Larger steps straddle ReLU and max-pool kinks
/// on the tiny network often enough to dominate the comparison.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Gradients below this are not resolvable by f64 central differences at
/// [`DEFAULT_STEP`] (round-off is about `1e-16 * loss / step`).
pub const GRADIENT_FLOOR: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error with an absolute floor so that two vanishing gradients
/// compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
    (analytic - numeric).abs() / denom
}

type BackwardFn =
    dyn Fn(&UNetParams<f64>, Option<&ForwardCache<f64>>, &Tensor<f64>) -> Result<Gradients<f64>>;

/// Compares the analytic gradient of `focal_tversky(unet(x))` with central
/// differences over every parameter, in 64-bit arithmetic.
pub fn grad_check(config: &UNetConfig, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(config, seed, tolerance, DEFAULT_STEP, &unet_backward)
}

/// [`grad_check`] with a substitutable backward pass.
pub fn grad_check_with(
    config: &UNetConfig,
    seed: u64,
    tolerance: f64,
    step: f64,
    backward: &BackwardFn,
) -> Result<GradCheckReport> {
    let mut params = unet_init(config, seed)?.cast::<f64>();
    // Zero biases put pre-activations exactly on the ReLU kink wherever a
    // conv window sees only dead inputs; small random biases move them off.
    let layout = ParamLayout::new(config);
    let mut bias_rng = rng_for(seed, "gradcheck-bias", 0);
    for ((name, _), t) in layout.entries.iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            t.data_mut()
                .iter_mut()
                .for_each(|b| *b = bias_rng.random_range(-0.1..0.1));
        }
    }
    let side = (1usize << config.depth) * 4;
    let batch = 2;
    let mut rng = rng_for(seed, "gradcheck-batch", 0);
    let n = batch * side * side;
    let x: Vec<f64> = (0..n * config.in_channels).map(|_| rng.random::<f64>()).collect();
    let g: Vec<f64> = (0..n * config.out_channels)
        .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
        .collect();
    let x = Tensor::from_vec(&[batch, config.in_channels, side, side], x)?;
    let g = Tensor::from_vec(&[batch, config.out_channels, side, side], g)?;
    let lp = LossParams::default();

    let out = unet_forward(&params, &x, Mode::Train)?;
    let loss = focal_tversky_loss(&out.probs, &g, &lp)?;
    let analytic = backward(&params, out.cache.as_ref(), &loss.dloss_dprobs)?.flat();

    let eval = |p: &UNetParams<f64>| -> Result<f64> {
        let probs = unet_forward(p, &x, Mode::Eval)?.probs;
        Ok(focal_tversky_loss(&probs, &g, &lp)?.loss)
    };

    let h = step;
    let mut report = GradCheckReport {
        param_count: analytic.len(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_index: 0,
        tolerance,
        pass: true,
    };
    let mut flat_index = 0;
    for t in 0..params.tensors().len() {
        for j in 0..params.tensors()[t].len() {
            let orig = params.tensors()[t].data()[j];
            params.tensors_mut()[t].data_mut()[j] = orig + h;
            let up = eval(&params)?;
            params.tensors_mut()[t].data_mut()[j] = orig - h;
            let down = eval(&params)?;
            params.tensors_mut()[t].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[flat_index];
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_index = flat_index;
            }
            flat_index += 1;
        }
    }
    report.pass = report.max_rel_err < tolerance;
    Ok(report)
}
