use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad Adam settings {self:?}")))
        }
    }
}

/// First/second moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.m)?;
    params.check_same_layout(&state.v)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for k in 0..p.data.len() {
            let gk = g.data[k];
            m.data[k] = config.beta1 * m.data[k] + (1.0 - config.beta1) * gk;
            v.data[k] = config.beta2 * v.data[k] + (1.0 - config.beta2) * gk * gk;
            let mhat = m.data[k] / c1;
            let vhat = v.data[k] / c2;
            p.data[k] -= config.lr * mhat / (vhat.sqrt() + config.eps);
        }
    }
    Ok(())
}

/// `target <- mu * target + (1 - mu) * source`.
pub fn ema_update(target: &mut ParamStore, source: &ParamStore, mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("EMA rate {mu} outside [0, 1]")));
    }
    target.check_same_layout(source)?;
    for (t, s) in target.iter_mut().zip(source.iter()) {
        for (a, b) in t.data.iter_mut().zip(&s.data) {
            *a = if mu == 0.0 {
                *b
            } else {
                mu * *a + (1.0 - mu) * b
            };
        }
    }
    Ok(())
}
