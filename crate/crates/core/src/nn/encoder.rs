//! Residual MLP encoder with hand-derived backpropagation.
//!
//! ```text
//! h0      = W_in x + b_in
//! block:  h' = h + W2 relu(LN(W1 h + b1)) + b2
//! out     = W_out h_depth + b_out
//! ```
//!
//! Layer normalization runs over the hidden features of each column.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, matmul, Matrix, Op};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderArch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of residual blocks.
    pub depth: usize,
    pub repr_dim: usize,
}

impl EncoderArch {
    /// Desk-scale default shape: 4 blocks, 256 hidden, 64-d representation.
    pub fn desk(input_dim: usize) -> Self {
        Self { input_dim, hidden_dim: 256, depth: 4, repr_dim: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.repr_dim == 0 {
            return Err(Error::Config(format!("encoder dims must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Matrix::zeros(output, input), bias: vec![0.0; output] }
    }

    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / input as f32).sqrt();
        let weight = Matrix::from_fn(output, input, |_, _| rng.gen_range(-bound..=bound));
        Self { weight, bias: vec![0.0; output] }
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = Matrix::zeros(self.weight.rows(), x.cols());
        for (r, &b) in self.bias.iter().enumerate() {
            z.row_mut(r).fill(b);
        }
        gemm(1.0, &self.weight, Op::N, x, Op::N, 1.0, &mut z)?;
        Ok(z)
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient
    /// when `need_input` is set.
    fn backward(&self, x: &Matrix, dz: &Matrix, grad: &mut Dense, need_input: bool) -> Result<Option<Matrix>> {
        gemm(1.0, dz, Op::N, x, Op::T, 1.0, &mut grad.weight)?;
        dz.add_row_sums_into(&mut grad.bias);
        if need_input {
            Ok(Some(matmul(&self.weight, Op::T, dz, Op::N)?))
        } else {
            Ok(None)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub dense1: Dense,
    pub norm: LayerNorm,
    pub dense2: Dense,
}

/// All trainable tensors of the encoder.
///
/// The same struct doubles as the gradient record returned by
/// [`encode_backward`], since gradients mirror parameter shapes exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub arch: EncoderArch,
    pub input: Dense,
    pub blocks: Vec<ResidualBlock>,
    pub output: Dense,
}

pub type EncoderGrads = EncoderParams;

/// Scaled-uniform fan-in initialization, deterministic in `seed`.
pub fn init_params(arch: EncoderArch, seed: u64) -> Result<EncoderParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Dense::init(arch.input_dim, arch.hidden_dim, &mut rng);
    let blocks = (0..arch.depth)
        .map(|_| ResidualBlock {
            dense1: Dense::init(arch.hidden_dim, arch.hidden_dim, &mut rng),
            norm: LayerNorm { scale: vec![1.0; arch.hidden_dim], shift: vec![0.0; arch.hidden_dim] },
            dense2: Dense::init(arch.hidden_dim, arch.hidden_dim, &mut rng),
        })
        .collect();
    let output = Dense::init(arch.hidden_dim, arch.repr_dim, &mut rng);
    Ok(EncoderParams { arch, input, blocks, output })
}

impl EncoderParams {
    /// All-zero tensors with the shapes of `arch`.
    pub fn zeros(arch: EncoderArch) -> Self {
        let h = arch.hidden_dim;
        Self {
            arch,
            input: Dense::zeros(arch.input_dim, h),
            blocks: (0..arch.depth)
                .map(|_| ResidualBlock { dense1: Dense::zeros(h, h), norm: LayerNorm { scale: vec![0.0; h], shift: vec![0.0; h] }, dense2: Dense::zeros(h, h) })
                .collect(),
            output: Dense::zeros(h, arch.repr_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    /// Tensors in checkpoint order: input weight, input bias; per block
    /// dense1 weight, dense1 bias, norm scale, norm shift, dense2 weight,
    /// dense2 bias; output weight, output bias.
    pub fn tensors(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![self.input.weight.as_slice(), &self.input.bias];
        for b in &self.blocks {
            out.extend([b.dense1.weight.as_slice(), &b.dense1.bias, &b.norm.scale, &b.norm.shift, b.dense2.weight.as_slice(), &b.dense2.bias]);
        }
        out.extend([self.output.weight.as_slice(), &self.output.bias[..]]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = vec![self.input.weight.as_mut_slice(), &mut self.input.bias];
        for b in &mut self.blocks {
            out.push(b.dense1.weight.as_mut_slice());
            out.push(&mut b.dense1.bias);
            out.push(&mut b.norm.scale);
            out.push(&mut b.norm.shift);
            out.push(b.dense2.weight.as_mut_slice());
            out.push(&mut b.dense2.bias);
        }
        out.push(self.output.weight.as_mut_slice());
        out.push(&mut self.output.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Elementwise `self += other`; shapes must match.
    pub fn accumulate(&mut self, other: &EncoderParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f32) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    input: Matrix,
    xhat: Matrix,
    inv_std: Vec<f32>,
    pre_act: Matrix,
    act: Matrix,
}

/// Activations recorded by [`encode_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    arch: EncoderArch,
    input: Matrix,
    blocks: Vec<BlockCache>,
    last_hidden: Matrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.cols()
    }
}

struct NormOut {
    xhat: Matrix,
    inv_std: Vec<f32>,
    out: Matrix,
}

fn layer_norm_forward(z: &Matrix, norm: &LayerNorm) -> NormOut {
    let (n, b) = z.shape();
    let inv_n = 1.0 / n as f32;
    let mut mean = vec![0.0f32; b];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_n);
    let mut var = vec![0.0f32; b];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let inv_std: Vec<f32> = var.iter().map(|s| 1.0 / (s * inv_n + LAYER_NORM_EPS).sqrt()).collect();
    let mut xhat = Matrix::zeros(n, b);
    let mut out = Matrix::zeros(n, b);
    for r in 0..n {
        let (g, beta) = (norm.scale[r], norm.shift[r]);
        let zr = z.row(r);
        let xr = xhat.row_mut(r);
        let or = out.row_mut(r);
        for j in 0..b {
            xr[j] = (zr[j] - mean[j]) * inv_std[j];
            or[j] = g * xr[j] + beta;
        }
    }
    NormOut { xhat, inv_std, out }
}

fn layer_norm_backward(dy: &Matrix, xhat: &Matrix, inv_std: &[f32], norm: &LayerNorm, grad: &mut LayerNorm) -> Matrix {
    let (n, b) = dy.shape();
    let mut dxhat = Matrix::zeros(n, b);
    let mut s1 = vec![0.0f32; b];
    let mut s2 = vec![0.0f32; b];
    for r in 0..n {
        let dyr = dy.row(r);
        let xr = xhat.row(r);
        let mut ds = 0.0f32;
        let mut dg = 0.0f32;
        for j in 0..b {
            dg += dyr[j] * xr[j];
            ds += dyr[j];
        }
        grad.scale[r] += dg;
        grad.shift[r] += ds;
        let g = norm.scale[r];
        let dr = dxhat.row_mut(r);
        for j in 0..b {
            let d = dyr[j] * g;
            dr[j] = d;
            s1[j] += d;
            s2[j] += d * xr[j];
        }
    }
    let nf = n as f32;
    let mut dz = Matrix::zeros(n, b);
    for r in 0..n {
        let dr = dxhat.row(r);
        let xr = xhat.row(r);
        let out = dz.row_mut(r);
        for j in 0..b {
            out[j] = inv_std[j] / nf * (nf * dr[j] - s1[j] - xr[j] * s2[j]);
        }
    }
    dz
}

fn check_input(params: &EncoderParams, batch: &Matrix) -> Result<()> {
    if batch.rows() != params.arch.input_dim || batch.cols() == 0 {
        return Err(Error::Shape(format!("encoder expects {} x B (B >= 1) input, got {} x {}", params.arch.input_dim, batch.rows(), batch.cols())));
    }
    Ok(())
}

/// Embeds every column of `batch`, returning `repr_dim x B` embeddings and
/// the activation record needed by [`encode_backward`].
pub fn encode_forward(params: &EncoderParams, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
    check_input(params, batch)?;
    let mut h = params.input.forward(batch)?;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let z1 = block.dense1.forward(&h)?;
        let NormOut { xhat, inv_std, out } = layer_norm_forward(&z1, &block.norm);
        let mut act = out.clone();
        act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut next = block.dense2.forward(&act)?;
        next.add_assign(&h);
        blocks.push(BlockCache { input: h, xhat, inv_std, pre_act: out, act });
        h = next;
    }
    let emb = params.output.forward(&h)?;
    let cache = ForwardCache { arch: params.arch, input: batch.clone(), blocks, last_hidden: h };
    Ok((emb, cache))
}

/// Inference-only forward pass; identical values to [`encode_forward`].
pub fn encode(params: &EncoderParams, batch: &Matrix) -> Result<Matrix> {
    check_input(params, batch)?;
    let mut h = params.input.forward(batch)?;
    for block in &params.blocks {
        let z1 = block.dense1.forward(&h)?;
        let mut act = layer_norm_forward(&z1, &block.norm).out;
        act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut next = block.dense2.forward(&act)?;
        next.add_assign(&h);
        h = next;
    }
    params.output.forward(&h)
}

/// Gradients of `sum(grad_embeddings ∘ embeddings)` with respect to every
/// parameter.
pub fn encode_backward(params: &EncoderParams, cache: &ForwardCache, grad_embeddings: &Matrix) -> Result<EncoderGrads> {
    let b = cache.batch_size();
    if cache.arch != params.arch || cache.blocks.len() != params.blocks.len() {
        return Err(Error::Shape(format!("forward cache built for {:?}, params are {:?}", cache.arch, params.arch)));
    }
    if grad_embeddings.shape() != (params.arch.repr_dim, b) {
        return Err(Error::Shape(format!("embedding gradient is {:?}, expected {:?}", grad_embeddings.shape(), (params.arch.repr_dim, b))));
    }
    let mut grads = params.zeros_like();
    let mut dh = params.output.backward(&cache.last_hidden, grad_embeddings, &mut grads.output, true)?.expect("input gradient requested");
    for (i, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let gblock = &mut grads.blocks[i];
        let mut dact = block.dense2.backward(&bc.act, &dh, &mut gblock.dense2, true)?.expect("input gradient requested");
        for (d, pre) in dact.as_mut_slice().iter_mut().zip(bc.pre_act.as_slice()) {
            if *pre <= 0.0 {
                *d = 0.0;
            }
        }
        let dz1 = layer_norm_backward(&dact, &bc.xhat, &bc.inv_std, &block.norm, &mut gblock.norm);
        let dinput = block.dense1.backward(&bc.input, &dz1, &mut gblock.dense1, true)?.expect("input gradient requested");
        // skip connection
        dh.add_assign(&dinput);
    }
    params.input.backward(&cache.input, &dh, &mut grads.input, false)?;
    Ok(grads)
}
