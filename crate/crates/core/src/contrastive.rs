//! Contrastive critic: similarity over encoder embeddings, InfoNCE in three
//! normalizations, and the training step shared by CRL (`R = 1`) and CRTR.

use serde::{Deserialize, Serialize};

use crate::dataset::{DataSource, SamplerConfig, TrainBatch};
use crate::env::{Env, EnvId};
use crate::nn::{adam_step, encode, encode_backward, encode_forward, gemm, AdamConfig, AdamState, EncoderGrads, EncoderParams, Matrix, Op};
use crate::{Error, Result};

/// Higher is more similar; distances enter negated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    Dot,
    NegL2,
    NegL2Squared,
}

impl SimilarityMetric {
    pub fn default_for(env: EnvId) -> Self {
        match env {
            EnvId::RubiksCube | EnvId::FifteenPuzzle | EnvId::DigitJumper => SimilarityMetric::Dot,
            EnvId::LightsOut => SimilarityMetric::NegL2,
            EnvId::Sokoban => SimilarityMetric::NegL2Squared,
        }
    }
}

/// Which axis of the score matrix the softmax normalizes over.
///
/// `Forward` normalizes each anchor's row over goals, `Backward` each goal's
/// column over anchors, `Symmetric` averages the two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Forward,
    #[default]
    Backward,
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub sampler: SamplerConfig,
    pub metric: SimilarityMetric,
    pub variant: LossVariant,
    pub temperature: f32,
    pub steps: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn default_for(env: EnvId, repr_dim: usize) -> Self {
        Self {
            lr: if env == EnvId::LightsOut { 1e-4 } else { 3e-4 },
            sampler: SamplerConfig { batch_size: 512, discount: DEFAULT_DISCOUNT, repetition_factor: 2 },
            metric: SimilarityMetric::default_for(env),
            variant: LossVariant::Backward,
            temperature: (repr_dim as f32).sqrt(),
            steps: 50_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        self.sampler.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }
}

pub const DEFAULT_DISCOUNT: f64 = 0.9;

pub fn similarity(u: &[f32], v: &[f32], metric: SimilarityMetric) -> f32 {
    assert_eq!(u.len(), v.len(), "similarity of vectors with different dims");
    match metric {
        SimilarityMetric::Dot => u.iter().zip(v).map(|(a, b)| a * b).sum(),
        SimilarityMetric::NegL2 => -sq_dist(u, v).sqrt(),
        SimilarityMetric::NegL2Squared => -sq_dist(u, v),
    }
}

fn sq_dist(u: &[f32], v: &[f32]) -> f32 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn column_sq_norms(m: &Matrix) -> Vec<f32> {
    let mut out = vec![0.0f32; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v * v;
        }
    }
    out
}

/// Squared distances `D[i][j] = |u_i - v_j|^2` between columns, clamped at 0.
fn pairwise_sq_dist(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    let mut d = Matrix::zeros(u.cols(), v.cols());
    gemm(-2.0, u, Op::T, v, Op::N, 0.0, &mut d)?;
    let (nu, nv) = (column_sq_norms(u), column_sq_norms(v));
    for (i, a) in nu.iter().enumerate() {
        for (x, b) in d.row_mut(i).iter_mut().zip(&nv) {
            *x = (*x + a + b).max(0.0);
        }
    }
    Ok(d)
}

/// `S[i][j] = similarity(u_i, v_j) / temperature` over embedding columns.
pub fn pairwise_scores(u: &Matrix, v: &Matrix, metric: SimilarityMetric, temperature: f32) -> Result<Matrix> {
    if u.rows() != v.rows() {
        return Err(Error::Shape(format!("embeddings {:?} vs {:?}", u.shape(), v.shape())));
    }
    let inv_t = 1.0 / temperature;
    match metric {
        SimilarityMetric::Dot => {
            let mut s = Matrix::zeros(u.cols(), v.cols());
            gemm(inv_t, u, Op::T, v, Op::N, 0.0, &mut s)?;
            Ok(s)
        }
        SimilarityMetric::NegL2 | SimilarityMetric::NegL2Squared => {
            let mut s = pairwise_sq_dist(u, v)?;
            let root = metric == SimilarityMetric::NegL2;
            s.as_mut_slice().iter_mut().for_each(|x| *x = -(if root { x.sqrt() } else { *x }) * inv_t);
            Ok(s)
        }
    }
}

/// Gradients of `sum(G ∘ S)` with respect to both embedding matrices, where
/// `S = pairwise_scores(u, v, ..)`.
pub fn pairwise_scores_backward(u: &Matrix, v: &Matrix, grad: &Matrix, metric: SimilarityMetric, temperature: f32) -> Result<(Matrix, Matrix)> {
    if grad.shape() != (u.cols(), v.cols()) || u.rows() != v.rows() {
        return Err(Error::Shape(format!("score gradient {:?} for embeddings {:?} and {:?}", grad.shape(), u.shape(), v.shape())));
    }
    let inv_t = 1.0 / temperature;
    let mut du = Matrix::zeros(u.rows(), u.cols());
    let mut dv = Matrix::zeros(v.rows(), v.cols());
    if metric == SimilarityMetric::Dot {
        gemm(inv_t, v, Op::N, grad, Op::T, 0.0, &mut du)?;
        gemm(inv_t, u, Op::N, grad, Op::N, 0.0, &mut dv)?;
        return Ok((du, dv));
    }
    // S_ij = -c * w(|u_i - v_j|^2); dS_ij/du_i = -k_ij (u_i - v_j) with
    // k = 2/t for the squared distance and 1/(t d_ij) for the plain one.
    let mut k = grad.clone();
    let factor = match metric {
        SimilarityMetric::NegL2Squared => 2.0 * inv_t,
        _ => {
            let d = pairwise_sq_dist(u, v)?;
            for (g, d2) in k.as_mut_slice().iter_mut().zip(d.as_slice()) {
                let dist = d2.sqrt();
                *g = if dist > 0.0 { *g / dist } else { 0.0 };
            }
            inv_t
        }
    };
    let row_sums: Vec<f32> = (0..k.rows()).map(|i| k.row(i).iter().sum()).collect();
    let mut col_sums = vec![0.0f32; k.cols()];
    for i in 0..k.rows() {
        for (c, x) in col_sums.iter_mut().zip(k.row(i)) {
            *c += x;
        }
    }
    // du = -f (U diag(rowsum K) - V K^T), dv = -f (V diag(colsum K) - U K)
    gemm(factor, v, Op::N, &k, Op::T, 0.0, &mut du)?;
    gemm(factor, u, Op::N, &k, Op::N, 0.0, &mut dv)?;
    for r in 0..u.rows() {
        for ((d, x), s) in du.row_mut(r).iter_mut().zip(u.row(r)).zip(&row_sums) {
            *d -= factor * x * s;
        }
        for ((d, x), s) in dv.row_mut(r).iter_mut().zip(v.row(r)).zip(&col_sums) {
            *d -= factor * x * s;
        }
    }
    Ok((du, dv))
}

/// Critic scores between every anchor and every positive, `B x B`.
pub fn score_matrix(params: &EncoderParams, anchors: &Matrix, positives: &Matrix, metric: SimilarityMetric, temperature: f32) -> Result<Matrix> {
    if anchors.cols() != positives.cols() {
        return Err(Error::Shape(format!("{} anchors but {} positives", anchors.cols(), positives.cols())));
    }
    let u = encode(params, anchors)?;
    let v = encode(params, positives)?;
    pairwise_scores(&u, &v, metric, temperature)
}

/// Mean cross-entropy of the diagonal under a softmax along rows (`by_row`)
/// or columns, with its gradient scaled by `weight`.
fn softmax_xent(scores: &Matrix, by_row: bool, weight: f64, grad: &mut Matrix) -> f64 {
    let b = scores.rows();
    let at = |i: usize, j: usize| if by_row { scores.get(i, j) } else { scores.get(j, i) };
    let mut loss = 0.0f64;
    let mut p = vec![0.0f64; b];
    for i in 0..b {
        let m = (0..b).map(|j| at(i, j)).fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut z = 0.0f64;
        for (j, pj) in p.iter_mut().enumerate() {
            *pj = (at(i, j) as f64 - m).exp();
            z += *pj;
        }
        loss += z.ln() + m - at(i, i) as f64;
        for (j, pj) in p.iter().enumerate() {
            let g = weight * (pj / z - if i == j { 1.0 } else { 0.0 }) / b as f64;
            let (r, c) = if by_row { (i, j) } else { (j, i) };
            grad.set(r, c, grad.get(r, c) + g as f32);
        }
    }
    weight * loss / b as f64
}

/// InfoNCE loss with positives on the diagonal, and its exact gradient with
/// respect to the scores.
pub fn infonce(scores: &Matrix, variant: LossVariant) -> Result<(f32, Matrix)> {
    let (b, c) = scores.shape();
    if b != c || b == 0 {
        return Err(Error::Shape(format!("infonce needs a square score matrix, got {:?}", scores.shape())));
    }
    let mut grad = Matrix::zeros(b, b);
    let loss = match variant {
        LossVariant::Forward => softmax_xent(scores, true, 1.0, &mut grad),
        LossVariant::Backward => softmax_xent(scores, false, 1.0, &mut grad),
        LossVariant::Symmetric => softmax_xent(scores, true, 0.5, &mut grad) + softmax_xent(scores, false, 0.5, &mut grad),
    };
    Ok((loss as f32, grad))
}

/// Fraction of rows whose first maximum sits on the diagonal.
pub fn in_batch_accuracy(scores: &Matrix) -> f32 {
    let b = scores.rows();
    if b == 0 {
        return 0.0;
    }
    let hits = (0..b)
        .filter(|&i| {
            let row = scores.row(i);
            let best = row.iter().enumerate().fold(0, |best, (j, &x)| if x > row[best] { j } else { best });
            best == i
        })
        .count();
    hits as f32 / b as f32
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f32,
    pub accuracy: f32,
}

/// Loss, accuracy and parameter gradients for one batch. Anchors and
/// positives go through the shared encoder in a single pass.
pub fn batch_gradients(
    params: &EncoderParams,
    batch: &TrainBatch,
    metric: SimilarityMetric,
    variant: LossVariant,
    temperature: f32,
) -> Result<(StepStats, EncoderGrads)> {
    let b = batch.anchors.cols();
    if batch.positives.cols() != b {
        return Err(Error::Shape(format!("{} anchors but {} positives", b, batch.positives.cols())));
    }
    let both = Matrix::hstack(&batch.anchors, &batch.positives)?;
    let (emb, cache) = encode_forward(params, &both)?;
    let (u, v) = (emb.columns(0, b), emb.columns(b, b));
    let scores = pairwise_scores(&u, &v, metric, temperature)?;
    let (loss, g) = infonce(&scores, variant)?;
    let (du, dv) = pairwise_scores_backward(&u, &v, &g, metric, temperature)?;
    let grads = encode_backward(params, &cache, &Matrix::hstack(&du, &dv)?)?;
    let stats = StepStats { loss, accuracy: in_batch_accuracy(&scores) };
    Ok((stats, grads))
}

/// One optimizer step: sample, score, backpropagate through both encoder
/// passes, update. `step` is only used to label errors.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut EncoderParams,
    adam: &mut AdamState,
    env: &Env,
    data: &DataSource,
    cfg: &TrainConfig,
    step: u64,
    rng: &mut dyn rand::RngCore,
) -> Result<StepStats> {
    let batch = data.sample(env, &cfg.sampler, rng)?;
    let (stats, grads) = batch_gradients(params, &batch, cfg.metric, cfg.variant, cfg.temperature)?;
    if !stats.loss.is_finite() {
        return Err(Error::Training { step, reason: format!("loss is {}", stats.loss) });
    }
    adam_step(params, &grads, adam, &cfg.adam()).map_err(|e| match e {
        Error::Training { reason, .. } => Error::Training { step, reason },
        other => other,
    })?;
    Ok(stats)
}
