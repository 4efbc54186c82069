//! Patch tokenisation and the transformer encoder producing `z`, a
//! `k_t x C` feature matrix with one token per temporal patch column.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::config::ModelConfig;
use crate::dsp::MelSpectrogram;
use crate::matrix::Matrix;
use crate::nn::{gaussian, Linear, SelfAttentionBlock};
use crate::{Error, Result};

/// Shape of the patch grid: `k_f` frequency rows by `k_t` time columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub k_f: usize,
    pub k_t: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.k_f * self.k_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Token index of patch `(f, t)`; tokens are frequency-major.
    pub fn index(&self, f: usize, t: usize) -> usize {
        f * self.k_t + t
    }
}

/// Flattened patches before projection, `k x (patch_f * patch_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Patches {
    pub values: Matrix,
    pub grid: PatchGrid,
}

/// Projected tokens living in a graph.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence {
    pub tokens: Var,
    pub grid: PatchGrid,
}

#[derive(Clone, Debug)]
pub struct EncodedFeatures {
    /// `k_t x C`.
    pub z: Var,
    /// Attention maps of every head of every block.
    pub attention: Vec<Var>,
}

fn valid_sizes(extent: usize) -> alloc::string::String {
    let v: Vec<alloc::string::String> = (1..=extent).filter(|p| extent % p == 0).map(|p| format!("{p}")).collect();
    v.join(", ")
}

/// Cut `spec` into non-overlapping `patch_f x patch_t` patches, each
/// flattened row-major (frequency, then time).
pub fn patchify(spec: &MelSpectrogram, patch_f: usize, patch_t: usize) -> Result<Patches> {
    let [f, t] = spec.values.shape();
    for (axis, extent, p) in [("frequency", f, patch_f), ("time", t, patch_t)] {
        if p == 0 || extent % p != 0 {
            return Err(Error::Config(format!(
                "{axis} extent {extent} is not divisible by patch size {p}; valid sizes: {}",
                valid_sizes(extent)
            )));
        }
    }
    let grid = PatchGrid {
        k_f: f / patch_f,
        k_t: t / patch_t,
    };
    let dim = patch_f * patch_t;
    let mut values = Matrix::zeros(grid.len(), dim);
    for pf in 0..grid.k_f {
        for pt in 0..grid.k_t {
            let row = values.row_mut(grid.index(pf, pt));
            for i in 0..patch_f {
                let src = &spec.values.row(pf * patch_f + i)[pt * patch_t..(pt + 1) * patch_t];
                row[i * patch_t..(i + 1) * patch_t].copy_from_slice(src);
            }
        }
    }
    Ok(Patches { values, grid })
}

/// `token(f, t) += pos_freq[f] + pos_time[t]`.
pub fn add_positional(g: &mut Graph<'_>, tokens: TokenSequence, pos_freq: Var, pos_time: Var) -> Result<TokenSequence> {
    let grid = tokens.grid;
    let (sf, st) = (g.shape(pos_freq), g.shape(pos_time));
    if sf[0] != grid.k_f || st[0] != grid.k_t {
        return Err(Error::ShapeMismatch {
            op: "add_positional",
            lhs: [grid.k_f, grid.k_t],
            rhs: [sf[0], st[0]],
        });
    }
    let f_idx: Vec<usize> = (0..grid.len()).map(|i| i / grid.k_t).collect();
    let t_idx: Vec<usize> = (0..grid.len()).map(|i| i % grid.k_t).collect();
    let pf = g.gather_rows(pos_freq, &f_idx)?;
    let pt = g.gather_rows(pos_time, &t_idx)?;
    let x = g.add(tokens.tokens, pf)?;
    Ok(TokenSequence {
        tokens: g.add(x, pt)?,
        grid,
    })
}

/// Mean over the frequency rows of the grid: `k_t x k` averaging matrix.
pub fn frequency_pool_matrix(grid: PatchGrid) -> Matrix {
    let w = 1.0 / grid.k_f as f64;
    let mut m = Matrix::zeros(grid.k_t, grid.len());
    for f in 0..grid.k_f {
        for t in 0..grid.k_t {
            m.set(t, grid.index(f, t), w);
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub embed: Linear,
    pub pos_freq: ParamId,
    pub pos_time: ParamId,
    pub blocks: Vec<SelfAttentionBlock>,
    pub patch_f: usize,
    pub patch_t: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let (k_f, k_t) = (cfg.freq_patches(), cfg.time_patches());
        let embed = Linear::new(store, "encoder.embed", cfg.patch_f * cfg.patch_t, cfg.width, rng);
        let pos_freq = store.add("encoder.pos_freq", gaussian(k_f, cfg.width, 0.02, rng));
        let pos_time = store.add("encoder.pos_time", gaussian(k_t, cfg.width, 0.02, rng));
        let blocks = (0..cfg.depth)
            .map(|l| SelfAttentionBlock::new(store, &format!("encoder.block{l}"), cfg.width, cfg.heads, cfg.mlp_ratio, rng))
            .collect();
        Self {
            embed,
            pos_freq,
            pos_time,
            blocks,
            patch_f: cfg.patch_f,
            patch_t: cfg.patch_t,
        }
    }

    pub fn project(&self, g: &mut Graph<'_>, patches: &Patches) -> Result<TokenSequence> {
        let x = g.constant(patches.values.clone());
        Ok(TokenSequence {
            tokens: self.embed.forward(g, x)?,
            grid: patches.grid,
        })
    }

    /// Transformer blocks followed by frequency mean pooling.
    pub fn encode(&self, g: &mut Graph<'_>, tokens: TokenSequence) -> Result<EncodedFeatures> {
        let mut x = tokens.tokens;
        let mut attention = Vec::new();
        for (l, block) in self.blocks.iter().enumerate() {
            let (y, maps) = block.forward(g, x)?;
            if !g.value(y).is_finite() {
                return Err(Error::NonFinite(format!("encoder block {l}")));
            }
            attention.extend(maps);
            x = y;
        }
        let pool = g.constant(frequency_pool_matrix(tokens.grid));
        Ok(EncodedFeatures {
            z: g.matmul(pool, x)?,
            attention,
        })
    }

    /// `patchify -> project -> add_positional -> encode`.
    pub fn forward(&self, g: &mut Graph<'_>, spec: &MelSpectrogram) -> Result<EncodedFeatures> {
        let patches = patchify(spec, self.patch_f, self.patch_t)?;
        let tokens = self.project(g, &patches)?;
        let (pf, pt) = (g.param(self.pos_freq), g.param(self.pos_time));
        let tokens = add_positional(g, tokens, pf, pt)?;
        self.encode(g, tokens)
    }
}
