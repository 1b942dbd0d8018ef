//! Independent f64 reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numeric code: parameters are read
//! as plain tensors (in `EncoderParams::tensors()` order) and every forward
//! pass, similarity and loss is recomputed from scratch in double precision.

#![allow(dead_code)]

use crtr::contrastive::{LossVariant, SimilarityMetric};
use crtr::nn::{EncoderArch, EncoderParams, Matrix};

pub struct RefNet {
    pub arch: EncoderArch,
    pub tensors: Vec<Vec<f64>>,
}

impl RefNet {
    pub fn from_params(p: &EncoderParams) -> Self {
        Self { arch: p.arch, tensors: p.tensors().iter().map(|t| t.iter().map(|&x| x as f64).collect()).collect() }
    }

    fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        b.iter().enumerate().map(|(o, bo)| bo + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>()).collect()
    }

    fn layer_norm(x: &[f64], scale: &[f64], shift: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        x.iter().zip(scale.iter().zip(shift)).map(|(v, (g, b))| g * (v - mean) * inv + b).collect()
    }

    /// Embedding of one input vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let t = &self.tensors;
        let mut h = Self::dense(&t[0], &t[1], x);
        for k in 0..self.arch.depth {
            let o = 2 + 6 * k;
            let z = Self::dense(&t[o], &t[o + 1], &h);
            let a: Vec<f64> = Self::layer_norm(&z, &t[o + 2], &t[o + 3]).into_iter().map(|v| v.max(0.0)).collect();
            let y = Self::dense(&t[o + 4], &t[o + 5], &a);
            h = h.iter().zip(&y).map(|(a, b)| a + b).collect();
        }
        let o = 2 + 6 * self.arch.depth;
        Self::dense(&t[o], &t[o + 1], &h)
    }

    pub fn forward_columns(&self, m: &Matrix) -> Vec<Vec<f64>> {
        (0..m.cols()).map(|c| self.forward(&m.column(c).iter().map(|&v| v as f64).collect::<Vec<_>>())).collect()
    }

    /// Central finite differences of `loss` with respect to every parameter,
    /// in tensor order.
    pub fn finite_differences(&mut self, h: f64, loss: impl Fn(&RefNet) -> f64) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.tensors.len());
        for t in 0..self.tensors.len() {
            let mut g = Vec::with_capacity(self.tensors[t].len());
            for i in 0..self.tensors[t].len() {
                let x0 = self.tensors[t][i];
                self.tensors[t][i] = x0 + h;
                let up = loss(self);
                self.tensors[t][i] = x0 - h;
                let down = loss(self);
                self.tensors[t][i] = x0;
                g.push((up - down) / (2.0 * h));
            }
            out.push(g);
        }
        out
    }
}

pub fn ref_similarity(u: &[f64], v: &[f64], metric: SimilarityMetric) -> f64 {
    let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    match metric {
        SimilarityMetric::Dot => u.iter().zip(v).map(|(a, b)| a * b).sum(),
        SimilarityMetric::NegL2 => -sq.sqrt(),
        SimilarityMetric::NegL2Squared => -sq,
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// InfoNCE on a row-major `b x b` score table.
pub fn ref_infonce(s: &[Vec<f64>], variant: LossVariant) -> f64 {
    let b = s.len();
    let fwd = (0..b).map(|i| logsumexp((0..b).map(|j| s[i][j])) - s[i][i]).sum::<f64>() / b as f64;
    let bwd = (0..b).map(|j| logsumexp((0..b).map(|i| s[i][j])) - s[j][j]).sum::<f64>() / b as f64;
    match variant {
        LossVariant::Forward => fwd,
        LossVariant::Backward => bwd,
        LossVariant::Symmetric => 0.5 * (fwd + bwd),
    }
}

pub fn ref_contrastive_loss(net: &RefNet, anchors: &Matrix, positives: &Matrix, metric: SimilarityMetric, variant: LossVariant, temperature: f64) -> f64 {
    let u = net.forward_columns(anchors);
    let v = net.forward_columns(positives);
    let s: Vec<Vec<f64>> = u.iter().map(|ui| v.iter().map(|vj| ref_similarity(ui, vj, metric) / temperature).collect()).collect();
    ref_infonce(&s, variant)
}

pub fn ref_cross_entropy(net: &RefNet, inputs: &Matrix, labels: &[usize]) -> f64 {
    let logits = net.forward_columns(inputs);
    logits.iter().zip(labels).map(|(l, &y)| logsumexp(l.iter().copied()) - l[y]).sum::<f64>() / labels.len() as f64
}

/// Largest entrywise relative error, with denominators floored at
/// `1e-3 * max|numeric|` so entries that are zero up to rounding do not
/// dominate.
pub fn max_rel_err(analytic: &[&[f32]], numeric: &[Vec<f64>]) -> f64 {
    let scale = numeric.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = 1e-3 * scale + 1e-12;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        for (&x, &y) in a.iter().zip(n) {
            let d = (x as f64 - y).abs() / (x.abs() as f64).max(y.abs()).max(floor);
            worst = worst.max(d);
        }
    }
    worst
}

/// Matrix of independent standard normal draws.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// Toy network with every tensor (biases and norm parameters included)
/// randomized, so no gradient is trivially zero.
pub fn toy_params(input_dim: usize, repr_dim: usize, seed: u64) -> EncoderParams {
    use rand::{Rng, SeedableRng};
    let arch = EncoderArch { input_dim, hidden_dim: 8, depth: 2, repr_dim };
    let mut p = crtr::nn::init_params(arch, seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x += 0.3 * rng.gen_range(-1.0f32..1.0);
        }
    }
    p
}

const FD_STEP: f64 = 1e-6;

/// Encoder backprop against finite differences of `sum(G * encode(X))`.
pub fn check_encoder(seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = toy_params(6, 4, seed);
    let x = gaussian_matrix(6, 4, &mut rng);
    let g = gaussian_matrix(4, 4, &mut rng);
    let (_, cache) = crtr::nn::encode_forward(&p, &x).unwrap();
    let analytic = crtr::nn::encode_backward(&p, &cache, &g).unwrap();
    let mut net = RefNet::from_params(&p);
    let numeric = net.finite_differences(FD_STEP, |n| {
        n.forward_columns(&x).iter().enumerate().map(|(c, e)| e.iter().enumerate().map(|(r, v)| v * g.get(r, c) as f64).sum::<f64>()).sum()
    });
    max_rel_err(&analytic.tensors(), &numeric)
}

/// InfoNCE score gradient against finite differences on a random 5x5 table.
pub fn check_infonce_scores(seed: u64, variant: LossVariant) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let s = gaussian_matrix(5, 5, &mut rng);
    let (_, grad) = crtr::contrastive::infonce(&s, variant).unwrap();
    let mut table: Vec<Vec<f64>> = (0..5).map(|i| s.row(i).iter().map(|&v| v as f64).collect()).collect();
    let mut numeric = vec![vec![0.0; 25]];
    for i in 0..5 {
        for j in 0..5 {
            let x0 = table[i][j];
            table[i][j] = x0 + FD_STEP;
            let up = ref_infonce(&table, variant);
            table[i][j] = x0 - FD_STEP;
            let down = ref_infonce(&table, variant);
            table[i][j] = x0;
            numeric[0][i * 5 + j] = (up - down) / (2.0 * FD_STEP);
        }
    }
    max_rel_err(&[grad.as_slice()], &numeric)
}

/// Full contrastive batch gradient (both encoder passes) against finite
/// differences of the reference loss. Toy net: input 6, batch 4.
pub fn check_contrastive(seed: u64, metric: SimilarityMetric, variant: LossVariant) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = toy_params(6, 4, seed);
    let anchors = gaussian_matrix(6, 4, &mut rng);
    let positives = gaussian_matrix(6, 4, &mut rng);
    let batch = crtr::dataset::TrainBatch { anchors: anchors.clone(), positives: positives.clone(), traj_ids: vec![0; 4], t0: vec![0; 4], t1: vec![1; 4] };
    let tau = 2.0f32;
    let (_, analytic) = crtr::contrastive::batch_gradients(&p, &batch, metric, variant, tau).unwrap();
    let mut net = RefNet::from_params(&p);
    let numeric = net.finite_differences(FD_STEP, |n| ref_contrastive_loss(n, &anchors, &positives, metric, variant, tau as f64));
    max_rel_err(&analytic.tensors(), &numeric)
}

/// Supervised cross-entropy gradient against finite differences. Toy net
/// over a concatenated pair of 6-d states, 5 bins, batch 4.
pub fn check_cross_entropy(seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = toy_params(12, 5, seed);
    let x = gaussian_matrix(12, 4, &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
    let (_, analytic) = crtr::supervised::batch_gradients(&p, &x, &labels).unwrap();
    let mut net = RefNet::from_params(&p);
    let numeric = net.finite_differences(FD_STEP, |n| ref_cross_entropy(n, &x, &labels));
    max_rel_err(&analytic.tensors(), &numeric)
}

pub const METRICS: [SimilarityMetric; 3] = [SimilarityMetric::Dot, SimilarityMetric::NegL2, SimilarityMetric::NegL2Squared];
pub const VARIANTS: [LossVariant; 3] = [LossVariant::Forward, LossVariant::Backward, LossVariant::Symmetric];
