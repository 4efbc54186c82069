//! Recurrent latent decoder and the classification head shared by all
//! passes.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::config::ModelConfig;
use crate::nn::{gaussian, multi_head_attention, LayerNorm, Linear, Mlp, SelfAttentionBlock};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// `L_q x C` latent after this pass.
    pub v: Var,
    pub cross_attention: Vec<Var>,
    pub self_attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    /// Learned `v_1`, `L_q x C`.
    pub latent_init: ParamId,
    /// Temporal patch encodings, `k_t x C`.
    pub pos_time: ParamId,
    /// Per-pass playback embeddings, `max_passes x C`.
    pub playback: ParamId,
    pub norm_latent: LayerNorm,
    pub norm_features: LayerNorm,
    pub to_q: Mlp,
    pub to_k: Mlp,
    pub to_v: Mlp,
    pub self_block: SelfAttentionBlock,
    pub head: Linear,
    pub heads: usize,
    pub max_passes: usize,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.width;
        Self {
            latent_init: store.add("decoder.latent_init", gaussian(cfg.latents, c, 0.02, rng)),
            pos_time: store.add("decoder.pos_time", gaussian(cfg.time_patches(), c, 0.02, rng)),
            playback: store.add("decoder.playback", gaussian(cfg.max_passes, c, 0.02, rng)),
            norm_latent: LayerNorm::new(store, "decoder.norm_latent", c),
            norm_features: LayerNorm::new(store, "decoder.norm_features", c),
            to_q: Mlp::new(store, "decoder.to_q", c, c, c, rng),
            to_k: Mlp::new(store, "decoder.to_k", c, c, c, rng),
            to_v: Mlp::new(store, "decoder.to_v", c, c, c, rng),
            self_block: SelfAttentionBlock::new(store, "decoder.self", c, cfg.decoder_heads, cfg.mlp_ratio, rng),
            head: Linear::new(store, "decoder.head", c, cfg.n_classes, rng),
            heads: cfg.decoder_heads,
            max_passes: cfg.max_passes,
        }
    }

    /// The learned initial latent `v_1`.
    pub fn initial_latent(&self, g: &mut Graph<'_>) -> Var {
        g.param(self.latent_init)
    }

    /// `v_i = D(z_i, v_{i-1})`: cross-attention from the latent onto the
    /// pass features (plus temporal and playback encodings) with a residual,
    /// then one self-attention block over the latent tokens.
    pub fn decode(&self, g: &mut Graph<'_>, z: Var, v_prev: Var, pass_index: usize) -> Result<DecodeOutput> {
        if pass_index == 0 || pass_index > self.max_passes {
            return Err(Error::Config(format!(
                "pass {pass_index} has no playback embedding (table covers 1..={})",
                self.max_passes
            )));
        }
        let pos = g.param(self.pos_time);
        let table = g.param(self.playback);
        let pp = g.slice(table, 0, pass_index - 1, 1)?;
        let zp = g.add(z, pos)?;
        let zp = g.add(zp, pp)?;

        let nv = self.norm_latent.forward(g, v_prev)?;
        let q = self.to_q.forward(g, nv)?;
        let nz = self.norm_features.forward(g, zp)?;
        let k = self.to_k.forward(g, nz)?;
        let vals = self.to_v.forward(g, nz)?;
        let (cross, cross_attention) = multi_head_attention(g, q, k, vals, self.heads)?;
        let v = g.add(v_prev, cross)?;
        let (v, self_attention) = self.self_block.forward(g, v)?;
        if !g.value(v).is_finite() {
            return Err(Error::NonFinite(format!("decoder at pass {pass_index}")));
        }
        Ok(DecodeOutput {
            v,
            cross_attention,
            self_attention,
        })
    }

    /// Mean over latent tokens, then the shared linear head: `1 x classes`.
    pub fn classify(&self, g: &mut Graph<'_>, v: Var) -> Result<Var> {
        let pooled = g.mean_axis(v, 0)?;
        self.head.forward(g, pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ModelConfig, ParamStore, Decoder) {
        let cfg = ModelConfig {
            width: 8,
            decoder_heads: 2,
            mlp_ratio: 2,
            latents: 3,
            input_frames: 40,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let d = Decoder::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        (cfg, store, d)
    }

    fn features(rows: usize) -> Matrix {
        Matrix::from_fn(rows, 8, |r, c| ((r * 5 + c * 3) % 7) as f64 * 0.3 - 0.9)
    }

    #[test]
    fn closed_value_gate_ignores_features() {
        let (_, mut store, d) = tiny();
        for id in [d.to_v.fc2.w, d.to_v.fc2.b] {
            let [r, c] = store.value(id).shape();
            *store.value_mut(id) = Matrix::zeros(r, c);
        }
        let run = |z: Matrix| {
            let mut g = Graph::new(&store);
            let z = g.constant(z);
            let v0 = d.initial_latent(&mut g);
            let out = d.decode(&mut g, z, v0, 1).unwrap();
            let mut h = Graph::new(&store);
            let v0 = d.initial_latent(&mut h);
            let (expected, _) = d.self_block.forward(&mut h, v0).unwrap();
            (g.value(out.v).clone(), h.value(expected).clone())
        };
        let (a, expected) = run(features(4));
        let (b, _) = run(features(4).map(|x| x * -3.0 + 1.0));
        assert_eq!(a, expected);
        assert_eq!(a, b);
    }

    #[test]
    fn pass_identity_is_observable() {
        let (_, store, d) = tiny();
        let mut g = Graph::new(&store);
        let z = g.constant(features(4));
        let v0 = d.initial_latent(&mut g);
        let a = d.decode(&mut g, z, v0, 1).unwrap().v;
        let b = d.decode(&mut g, z, v0, 2).unwrap().v;
        assert_ne!(g.value(a), g.value(b));
    }

    #[test]
    fn missing_playback_row_is_a_config_error() {
        let (cfg, store, d) = tiny();
        let mut g = Graph::new(&store);
        let z = g.constant(features(4));
        let v0 = d.initial_latent(&mut g);
        let err = d.decode(&mut g, z, v0, cfg.max_passes + 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn classify_cases() {
        let (_, mut store, d) = tiny();
        let v = Matrix::from_fn(3, 8, |r, c| (r as f64 - 1.0) * (c as f64 + 0.5));
        let logits = |store: &ParamStore, v: &Matrix| {
            let mut g = Graph::new(store);
            let v = g.constant(v.clone());
            let l = d.classify(&mut g, v).unwrap();
            g.value(l).clone()
        };
        // Token order does not matter.
        let swapped = Matrix::from_fn(3, 8, |r, c| v.get(2 - r, c));
        assert_eq!(logits(&store, &v), logits(&store, &swapped));
        // Linear without bias.
        *store.value_mut(d.head.b) = Matrix::zeros(1, 4);
        let doubled = v.map(|x| 2.0 * x);
        let (a, b) = (logits(&store, &v), logits(&store, &doubled));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
        *store.value_mut(d.head.w) = Matrix::zeros(8, 4);
        assert_eq!(logits(&store, &v), Matrix::zeros(1, 4));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (_, store, d) = tiny();
        let mut g = Graph::new(&store);
        let z = g.constant(features(4));
        let v0 = d.initial_latent(&mut g);
        let out = d.decode(&mut g, z, v0, 2).unwrap();
        for &m in out.cross_attention.iter().chain(&out.self_attention) {
            let m = g.value(m);
            for r in 0..m.rows() {
                assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
