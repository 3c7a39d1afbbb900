use super::{Element, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<E: Element = f32> {
    pub m: Vec<E>,
    pub v: Vec<E>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<E: Element> AdamState<E> {
    pub fn new(numel: usize, config: AdamConfig) -> Result<Self> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(config.beta1) || !in_unit(config.beta2) {
            return Err(Error::InvalidArgument(format!(
                "Adam betas must lie in (0,1), got {} and {}",
                config.beta1, config.beta2
            )));
        }
        Ok(AdamState {
            m: vec![E::zero(); numel],
            v: vec![E::zero(); numel],
            t: 0,
            config,
        })
    }
}

/// Bias-corrected Adam update of `param` from its accumulated gradient.
pub fn adam_step<E: Element>(
    name: &str,
    param: &mut Tensor<E>,
    state: &mut AdamState<E>,
    lr: f64,
) -> Result<()> {
    let grad = param.grad().ok_or_else(|| Error::MissingGrad(name.to_string()))?;
    if state.m.len() != grad.len() {
        return Err(shape_err!(
            "Adam state for `{name}` has {} entries, parameter has {}",
            state.m.len(),
            grad.len()
        ));
    }
    state.t += 1;
    let cfg = state.config;
    let t = state.t as i32;
    let b1 = E::from_f64_lossy(cfg.beta1);
    let b2 = E::from_f64_lossy(cfg.beta2);
    let one = E::one();
    let bc1 = E::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let bc2 = E::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = E::from_f64_lossy(lr);
    let eps = E::from_f64_lossy(cfg.eps);

    let mut data = param.to_vec();
    for (((p, &g), m), v) in data
        .iter_mut()
        .zip(&grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    param.set_data(data)
}
