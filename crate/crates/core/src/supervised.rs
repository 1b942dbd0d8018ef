//! Supervised distance baseline: a classifier over distance bins that reads
//! a concatenated (state, goal) pair.

use serde::{Deserialize, Serialize};

use crate::contrastive::StepStats;
use crate::dataset::{DataSource, SamplerConfig, TrainBatch};
use crate::nn::{adam_step, encode, encode_backward, encode_forward, AdamConfig, AdamState, EncoderArch, EncoderGrads, EncoderParams, Matrix};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinConfig {
    pub n_bins: usize,
}

impl BinConfig {
    /// One bin per step up to the longest trajectory.
    pub fn for_max_len(max_len: usize) -> Result<Self> {
        let cfg = Self { n_bins: max_len };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::Config(format!("n_bins must be >= 2, got {}", self.n_bins)));
        }
        Ok(())
    }
}

pub fn bin_distance(delta_t: usize, cfg: &BinConfig) -> usize {
    delta_t.min(cfg.n_bins - 1)
}

/// Classifier shape: the encoder layout over a doubled input, with one
/// logit per bin.
pub fn classifier_arch(state_dim: usize, hidden_dim: usize, depth: usize, bins: &BinConfig) -> EncoderArch {
    EncoderArch { input_dim: 2 * state_dim, hidden_dim, depth, repr_dim: bins.n_bins }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub lr: f32,
    /// `repetition_factor` is ignored; pairs are always drawn with `R = 1`.
    pub sampler: SamplerConfig,
    pub bins: BinConfig,
    pub steps: u64,
    pub seed: u64,
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        self.bins.validate()?;
        self.pair_sampler().validate()
    }

    pub fn pair_sampler(&self) -> SamplerConfig {
        SamplerConfig { repetition_factor: 1, ..self.sampler }
    }
}

/// Column-wise softmax cross-entropy against integer labels; returns mean
/// loss, argmax accuracy and the logit gradient.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f32, f32, Matrix)> {
    let (k, b) = logits.shape();
    if labels.len() != b || b == 0 {
        return Err(Error::Shape(format!("{} labels for {b} logit columns", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Shape(format!("label {l} out of {k} classes")));
    }
    let mut grad = Matrix::zeros(k, b);
    let mut loss = 0.0f64;
    let mut hits = 0usize;
    for (c, &label) in labels.iter().enumerate() {
        let col = logits.column(c);
        let p = softmax(&col);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        let best = col.iter().enumerate().fold(0, |best, (j, &x)| if x > col[best] { j } else { best });
        hits += (best == label) as usize;
        for (r, pr) in p.iter().enumerate() {
            let g = (pr - (r == label) as u8 as f64) / b as f64;
            grad.set(r, c, g as f32);
        }
    }
    Ok(((loss / b as f64) as f32, hits as f32 / b as f32, grad))
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = logits.iter().map(|&x| (x as f64 - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Stacked `[state; goal]` classifier inputs and bin labels for a batch.
pub fn pair_inputs(batch: &TrainBatch, bins: &BinConfig) -> Result<(Matrix, Vec<usize>)> {
    let input = Matrix::vstack(&batch.anchors, &batch.positives)?;
    let labels = batch.t0.iter().zip(&batch.t1).map(|(&a, &b)| bin_distance(b - a, bins)).collect();
    Ok((input, labels))
}

pub fn batch_gradients(params: &EncoderParams, input: &Matrix, labels: &[usize]) -> Result<(StepStats, EncoderGrads)> {
    let (logits, cache) = encode_forward(params, input)?;
    let (loss, accuracy, g) = cross_entropy(&logits, labels)?;
    let grads = encode_backward(params, &cache, &g)?;
    Ok((StepStats { loss, accuracy }, grads))
}

pub fn supervised_train_step(
    params: &mut EncoderParams,
    adam: &mut AdamState,
    env: &crate::env::Env,
    data: &DataSource,
    cfg: &SupervisedConfig,
    step: u64,
    rng: &mut dyn rand::RngCore,
) -> Result<StepStats> {
    let batch = data.sample(env, &cfg.pair_sampler(), rng)?;
    let (input, labels) = pair_inputs(&batch, &cfg.bins)?;
    let (stats, grads) = batch_gradients(params, &input, &labels)?;
    if !stats.loss.is_finite() {
        return Err(Error::Training { step, reason: format!("loss is {}", stats.loss) });
    }
    adam_step(params, &grads, adam, &AdamConfig::with_lr(cfg.lr)).map_err(|e| match e {
        Error::Training { reason, .. } => Error::Training { step, reason },
        other => other,
    })?;
    Ok(stats)
}

/// Expected bin index under the softmax over one logit column.
pub fn expected_bin(logits: &[f32]) -> f32 {
    softmax(logits).iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>() as f32
}

/// Predicted distance from every column of `states` to `goal` (an encoded
/// goal vector). Lower means closer.
pub fn predicted_distances(params: &EncoderParams, states: &Matrix, goal: &[f32]) -> Result<Vec<f32>> {
    if goal.len() != states.rows() {
        return Err(Error::Shape(format!("goal has {} features, states {}", goal.len(), states.rows())));
    }
    let goals = Matrix::from_fn(goal.len(), states.cols(), |r, _| goal[r]);
    let logits = encode(params, &Matrix::vstack(states, &goals)?)?;
    Ok((0..logits.cols()).map(|c| expected_bin(&logits.column(c))).collect())
}

pub fn predicted_distance(params: &EncoderParams, state: &[f32], goal: &[f32]) -> Result<f32> {
    let s = Matrix::from_vec(state.len(), 1, state.to_vec())?;
    Ok(predicted_distances(params, &s, goal)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_clamp() {
        let cfg = BinConfig { n_bins: 150 };
        assert_eq!(bin_distance(0, &cfg), 0);
        assert_eq!(bin_distance(5, &cfg), 5);
        assert_eq!(bin_distance(149, &cfg), 149);
        assert_eq!(bin_distance(10_000, &cfg), 149);
        assert!(BinConfig::for_max_len(1).is_err());
    }

    #[test]
    fn expected_bin_cases() {
        assert!((expected_bin(&[0.0, 0.0, 0.0]) - 1.0).abs() < 1e-6);
        assert!(expected_bin(&[50.0, 0.0, 0.0, 0.0]) < 1e-6);
        let logits = [0.3f32, -1.2, 2.0, 0.5];
        let z: f64 = logits.iter().map(|&x| (x as f64).exp()).sum();
        let direct: f64 = logits.iter().enumerate().map(|(k, &x)| k as f64 * (x as f64).exp() / z).sum();
        assert!((expected_bin(&logits) as f64 - direct).abs() < 1e-6);
    }

    #[test]
    fn uniform_logits_cost_log_bins() {
        let (loss, _, _) = cross_entropy(&Matrix::zeros(7, 3), &[0, 3, 6]).unwrap();
        assert!((loss - 7f32.ln()).abs() < 1e-6);
        assert!(cross_entropy(&Matrix::zeros(7, 1), &[7]).is_err());
    }
}
