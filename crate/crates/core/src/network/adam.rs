use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment update of every parameter. Consumes the
/// gradients pulled by [`ParamStore::pull_grads`]; calling it again without a
/// new backward pass is an error.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, cfg: &AdamConfig) -> Result<()> {
    if !params.grads_ready {
        return Err(Error::Autodiff("adam_step called before backward".into()));
    }
    params.step += 1;
    let t = params.step as f64;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let correct1 = T::from_f64(1.0 - cfg.beta1.powf(t));
    let correct2 = T::from_f64(1.0 - cfg.beta2.powf(t));
    let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));

    let tensors = params
        .layers
        .iter_mut()
        .flat_map(|l| [&mut l.kernel, &mut l.bias]);
    for (tensor, state) in tensors.zip(params.moments.iter_mut()) {
        let grad = tensor.grad().expect("parameters carry gradients").to_vec();
        for (((theta, &g), m), v) in tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(state.first.iter_mut())
            .zip(state.second.iter_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.grads_ready = false;
    Ok(())
}
