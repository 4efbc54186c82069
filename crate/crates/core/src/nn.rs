//! Small layers built from autodiff primitives.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::matrix::Matrix;
use crate::{math, Result};

/// Xavier-uniform `rows x cols` matrix.
pub fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = math::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// `x W + b` with `W: d_in x d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.w"), xavier(d_in, d_out, rng)),
            b: store.add(format!("{name}.b"), Matrix::zeros(1, d_out)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

/// Layer normalisation with a learned per-channel gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Matrix::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let n = g.layer_norm(x);
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        let scaled = g.mul(n, gain)?;
        g.add(scaled, bias)
    }
}

/// Two-layer perceptron with a GELU between the layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_in, d_hidden, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), d_hidden, d_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

/// Multi-head scaled dot-product attention from `queries` onto
/// `keys`/`values` (already projected, width `heads * head_dim`). Returns the
/// concatenated head outputs and each head's row-stochastic attention map.
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    queries: Var,
    keys: Var,
    values: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let width = g.shape(queries)[1];
    if heads == 0 || width % heads != 0 {
        return Err(crate::Error::Config(format!("width {width} is not divisible by {heads} heads")));
    }
    let head_dim = width / heads;
    let scale = 1.0 / math::sqrt(head_dim as f64);
    let mut outs = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let (q, k, v) = if heads == 1 {
            (queries, keys, values)
        } else {
            (
                g.slice(queries, 1, h * head_dim, head_dim)?,
                g.slice(keys, 1, h * head_dim, head_dim)?,
                g.slice(values, 1, h * head_dim, head_dim)?,
            )
        };
        let kt = g.transpose(k);
        let logits = g.matmul(q, kt)?;
        let logits = g.scale(logits, scale);
        let attn = g.softmax(logits, 1)?;
        outs.push(g.matmul(attn, v)?);
        maps.push(attn);
    }
    let out = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    Ok((out, maps))
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub heads: usize,
}

impl SelfAttentionBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, rng),
            proj: Linear::new(store, &format!("{name}.proj"), width, width, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            mlp: Mlp::new(store, &format!("{name}.mlp"), width, mlp_ratio * width, width, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<(Var, Vec<Var>)> {
        let width = g.shape(x)[1];
        let n = self.norm1.forward(g, x)?;
        let qkv = self.qkv.forward(g, n)?;
        let q = g.slice(qkv, 1, 0, width)?;
        let k = g.slice(qkv, 1, width, width)?;
        let v = g.slice(qkv, 1, 2 * width, width)?;
        let (attn, maps) = multi_head_attention(g, q, k, v, self.heads)?;
        let attn = self.proj.forward(g, attn)?;
        let x = g.add(x, attn)?;
        let n = self.norm2.forward(g, x)?;
        let m = self.mlp.forward(g, n)?;
        Ok((g.add(x, m)?, maps))
    }
}
