use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

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
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        OptimState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam step, in parameter order.
pub fn adam_update(params: &mut ParamSet, grads: &ParamSet, state: &mut OptimState) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::shape(
            "adam_update",
            format!(
                "state tracks {} tensors, params have {}",
                state.first.len(),
                params.len()
            ),
        ));
    }
    // Validate everything before mutating anything.
    for (i, (name, p)) in params.iter().enumerate() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() || state.first[i].shape() != p.shape() {
            return Err(Error::shape(
                "adam_update",
                format!("gradient for `{name}` has shape {:?}", g.shape()),
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { op: "adam_update" });
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, (name, p)) in params.iter_mut().enumerate() {
        let g = grads.get(name)?.data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}
