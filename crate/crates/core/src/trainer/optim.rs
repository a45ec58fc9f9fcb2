use crate::error::{Error, Result};
use crate::nn::Parameters;

use super::AdamConfig;

/// First and second moments per parameter section.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
pub fn adamw_step(
    params: &mut dyn Parameters,
    grads: &dyn Parameters,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let gs = grads.sections();
    let mut ps = params.sections_mut();
    if ps.len() != gs.len() || ps.iter().zip(&gs).any(|((_, p), (_, g))| p.len() != g.len()) {
        return Err(Error::ShapeMismatch("parameter and gradient layouts differ".into()));
    }
    if state.m.is_empty() {
        state.m = gs.iter().map(|(_, g)| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (k, ((_, p), (_, g))) in ps.iter_mut().zip(&gs).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] = p[i] * decay - lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

pub fn all_finite(p: &dyn Parameters) -> bool {
    p.sections().iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
}
