use crate::error::{Error, Result};
use crate::nn::{Gradients, Real, Tensor, UNetParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub step_count: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &UNetParams<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }
}

/// One bias-corrected Adam update of a flat slice. `t` is the 1-based step.
pub fn adam_update_slice<T: Real>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    hp: &AdamHyper,
) {
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i].as_f64();
        let mi = hp.beta1 * m[i].as_f64() + (1.0 - hp.beta1) * g;
        let vi = hp.beta2 * v[i].as_f64() + (1.0 - hp.beta2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        theta[i] = T::of(theta[i].as_f64() - hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon));
    }
}

pub fn adam_step<T: Real>(
    params: &mut UNetParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    hp: &AdamHyper,
) -> Result<()> {
    let n = params.tensors().len();
    if grads.tensors.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(Error::Shape("params, grads and Adam state disagree".into()));
    }
    for i in 0..n {
        let shape = params.tensors()[i].shape();
        if grads.tensors[i].shape() != shape
            || state.first_moment[i].shape() != shape
            || state.second_moment[i].shape() != shape
        {
            return Err(Error::Shape(format!(
                "tensor {i}: params {:?}, grads {:?}",
                shape,
                grads.tensors[i].shape()
            )));
        }
    }
    state.step_count += 1;
    let t = state.step_count;
    let tensors = params.tensors_mut();
    for i in 0..n {
        adam_update_slice(
            tensors[i].data_mut(),
            grads.tensors[i].data(),
            state.first_moment[i].data_mut(),
            state.second_moment[i].data_mut(),
            t,
            hp,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let hp = AdamHyper::default();
        let (mut th, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        adam_update_slice(&mut th, &[1.0], &mut m, &mut v, 1, &hp);
        let want = 1.0 - 1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((th[0] - want).abs() < 1e-15);
        assert!((th[0] - 0.9999).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let hp = AdamHyper::default();
        let (mut th, mut m, mut v) = ([0.3f64, -2.0], [0.0, 0.0], [0.0, 0.0]);
        adam_update_slice(&mut th, &[0.0, 0.0], &mut m, &mut v, 1, &hp);
        assert_eq!(th, [0.3, -2.0]);
        assert_eq!((m, v), ([0.0, 0.0], [0.0, 0.0]));
    }
}
