use serde::{Deserialize, Serialize};

use super::encoder::{EncoderGrads, EncoderParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment accumulators, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { first: zeros.clone(), second: zeros, step: 0 }
    }

    fn matches(&self, params: &EncoderParams) -> bool {
        let tensors = params.tensors();
        tensors.len() == self.first.len()
            && tensors.len() == self.second.len()
            && tensors.iter().zip(self.first.iter().zip(&self.second)).all(|(t, (m, v))| t.len() == m.len() && t.len() == v.len())
    }
}

/// One bias-corrected Adam update, in place.
///
/// A non-finite gradient aborts the step before anything is modified.
pub fn adam_step(params: &mut EncoderParams, grads: &EncoderGrads, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.arch != params.arch || !state.matches(params) {
        return Err(Error::Shape("adam: params, grads and state disagree".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Training { step: state.step + 1, reason: "non-finite gradient".into() });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let step_size = cfg.lr / bc1;
    let bc2_sqrt = bc2.sqrt();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(state.first.iter_mut()).zip(state.second.iter_mut()) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let denom = v[i].sqrt() / bc2_sqrt + cfg.eps;
            p[i] -= step_size * m[i] / denom;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::encoder::{init_params, EncoderArch};

    fn scalar_params(value: f32) -> EncoderParams {
        // 1-1-1 net with depth 0: the first tensor is a single weight.
        let arch = EncoderArch { input_dim: 1, hidden_dim: 1, depth: 0, repr_dim: 1 };
        let mut p = EncoderParams::zeros(arch);
        p.input.weight.set(0, 0, value);
        p
    }

    #[test]
    fn single_step_on_scalar_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps) ≈ lr.
        let mut p = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.input.weight.set(0, 0, 1.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        assert!((p.input.weight.get(0, 0) - 0.9).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_lr_keeps_params_but_updates_moments() {
        let mut p = init_params(EncoderArch::desk(8), 1).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.output.bias[0] = 0.5;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::with_lr(0.0)).unwrap();
        assert_eq!(p, before);
        let last = st.first.len() - 1;
        assert!((st.first[last][0] - 0.05).abs() < 1e-7);
        assert!(st.second[last][0] > 0.0);
    }

    #[test]
    fn zero_grads_from_fresh_state_are_a_no_op() {
        let mut p = init_params(EncoderArch::desk(8), 1).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_aborts_without_side_effects() {
        let mut p = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.input.weight.set(0, 0, f32::NAN);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Training { step: 1, .. }));
        assert_eq!(st.step, 0);
        assert_eq!(p.input.weight.get(0, 0), 1.0);
    }
}
