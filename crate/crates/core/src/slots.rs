//! Two-slot attention over encoder features and the saliency-driven segment
//! selection that decides what the next pass replays.
//!
//! Slot 0 is the informative slot `s_1`, slot 1 the uninformative `s_2`.
//! Both slots are held as the rows of one `2 x d` matrix and share every
//! parameter, including the GRU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{gru_cell, Graph, GruParams, ParamId, ParamStore, Var};
use crate::config::{ModelConfig, SelectionConfig};
use crate::dsp::SegmentSet;
use crate::matrix::{interp_1d, Matrix};
use crate::nn::{gaussian, LayerNorm, Mlp};
use crate::{math, Error, Result};

/// Lower clamp applied to the learned log standard deviation.
pub const MIN_LOG_SIGMA: f64 = -20.0;

/// How slots are initialised.
pub enum SlotInit<'a> {
    /// `s = init_mean`.
    Eval,
    /// `s = init_mean + exp(init_log_sigma) * eps`, `eps ~ N(0, I)`.
    Train(&'a mut dyn RngCore),
}

#[derive(Clone, Copy, Debug)]
pub struct SlotState {
    /// `2 x d` slot vectors.
    pub slots: Var,
    /// `2 x d` GRU hidden states.
    pub hidden: Var,
}

/// Keys and values of one pass, shared by all iterations.
#[derive(Clone, Copy, Debug)]
pub struct SlotInputs {
    pub keys: Var,
    pub values: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct IterationTrace {
    /// `T x 2`, each column a softmax over tokens.
    pub attention: Var,
    /// `T x 2` cross-slot weights; rows sum to 1.
    pub weights: Var,
}

#[derive(Clone, Debug)]
pub struct SlotRun {
    pub state: SlotState,
    pub iterations: Vec<IterationTrace>,
}

#[derive(Clone, Debug)]
pub struct SlotAttention {
    pub init_mean: ParamId,
    pub init_log_sigma: ParamId,
    pub norm_input: LayerNorm,
    pub to_k: Mlp,
    pub to_v: Mlp,
    pub norm_slots: LayerNorm,
    pub to_q: Mlp,
    pub gru: GruParams,
    pub norm_update: LayerNorm,
    pub update: Mlp,
    pub dim: usize,
    pub iters: usize,
}

impl SlotAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.slot_dim;
        Self {
            init_mean: store.add("slots.init_mean", gaussian(2, d, 1.0, rng)),
            init_log_sigma: store.add("slots.init_log_sigma", Matrix::filled(2, d, -2.0)),
            norm_input: LayerNorm::new(store, "slots.norm_input", cfg.width),
            to_k: Mlp::new(store, "slots.to_k", cfg.width, d, d, rng),
            to_v: Mlp::new(store, "slots.to_v", cfg.width, d, d, rng),
            norm_slots: LayerNorm::new(store, "slots.norm_slots", d),
            to_q: Mlp::new(store, "slots.to_q", d, d, d, rng),
            gru: GruParams::new(store, "slots.gru", d, rng),
            norm_update: LayerNorm::new(store, "slots.norm_update", d),
            update: Mlp::new(store, "slots.update", d, d, d, rng),
            dim: d,
            iters: cfg.slot_iters,
        }
    }

    /// Initial slots; the hidden state starts equal to the slots.
    pub fn init_slots(&self, g: &mut Graph<'_>, init: SlotInit<'_>) -> Result<SlotState> {
        let mean = g.param(self.init_mean);
        let slots = match init {
            SlotInit::Eval => mean,
            SlotInit::Train(rng) => {
                let log_sigma = g.param(self.init_log_sigma);
                // max(log_sigma, MIN_LOG_SIGMA)
                let shifted = g.add_scalar(log_sigma, -MIN_LOG_SIGMA);
                let clamped = g.relu(shifted);
                let clamped = g.add_scalar(clamped, MIN_LOG_SIGMA);
                let sigma = g.exp(clamped);
                let eps = Matrix::from_fn(2, self.dim, |_, _| StandardNormal.sample(&mut *rng));
                let eps = g.constant(eps);
                let noise = g.mul(sigma, eps)?;
                g.add(mean, noise)?
            }
        };
        Ok(SlotState { slots, hidden: slots })
    }

    /// `K = MLP(LN(z))`, `V = MLP(LN(z))`.
    pub fn inputs(&self, g: &mut Graph<'_>, z: Var) -> Result<SlotInputs> {
        let n = self.norm_input.forward(g, z)?;
        Ok(SlotInputs {
            keys: self.to_k.forward(g, n)?,
            values: self.to_v.forward(g, n)?,
        })
    }

    /// One refinement step; `j` is only used in error messages.
    pub fn slot_iteration(
        &self,
        g: &mut Graph<'_>,
        inputs: &SlotInputs,
        state: SlotState,
        j: usize,
    ) -> Result<(SlotState, IterationTrace)> {
        let n = self.norm_slots.forward(g, state.slots)?;
        let q = self.to_q.forward(g, n)?;
        let qt = g.transpose(q);
        let logits = g.matmul(inputs.keys, qt)?;
        let logits = g.scale(logits, 1.0 / math::sqrt(self.dim as f64));
        let attention = g.softmax(logits, 0)?;
        if !g.value(attention).is_finite() {
            return Err(Error::NonFinite(format!("slot attention at iteration {j}")));
        }
        let per_token = g.sum_axis(attention, 1)?;
        let weights = g.div(attention, per_token)?;
        let wt = g.transpose(weights);
        let updates = g.matmul(wt, inputs.values)?;
        let hidden = gru_cell(g, updates, state.hidden, &self.gru)?;
        let n = self.norm_update.forward(g, hidden)?;
        let delta = self.update.forward(g, n)?;
        let slots = g.add(state.slots, delta)?;
        Ok((SlotState { slots, hidden }, IterationTrace { attention, weights }))
    }

    /// Initialise, then apply `iters` iterations with shared parameters.
    pub fn run(&self, g: &mut Graph<'_>, z: Var, init: SlotInit<'_>) -> Result<SlotRun> {
        let inputs = self.inputs(g, z)?;
        let mut state = self.init_slots(g, init)?;
        let mut iterations = Vec::with_capacity(self.iters);
        for j in 1..=self.iters {
            let (next, trace) = self.slot_iteration(g, &inputs, state, j)?;
            state = next;
            iterations.push(trace);
        }
        Ok(SlotRun { state, iterations })
    }
}

/// Sign-preserving magnitude floor (`0` maps to `+floor`).
pub fn clamp_magnitude(x: f64, floor: f64) -> f64 {
    if x.abs() >= floor {
        x
    } else if x < 0.0 {
        -floor
    } else {
        floor
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Saliency {
    /// `d x d`, row-softmax of `outer(s_1, 1 / s_2)`.
    pub m: Matrix,
    pub diagonal: Vec<f64>,
    /// Min-max normalised diagonal; all ones when the diagonal is constant.
    pub curve: Vec<f64>,
}

/// Saliency of a `2 x d` slot matrix.
pub fn saliency_diagonal(slots: &Matrix, inverse_floor: f64) -> Result<Saliency> {
    if slots.rows() != 2 || slots.cols() == 0 {
        return Err(Error::ShapeMismatch {
            op: "saliency_diagonal",
            lhs: slots.shape(),
            rhs: [2, slots.cols()],
        });
    }
    let d = slots.cols();
    let inv: Vec<f64> = slots.row(1).iter().map(|&x| 1.0 / clamp_magnitude(x, inverse_floor)).collect();
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        let s = slots.get(0, i);
        let row = m.row_mut(i);
        for (r, &v) in row.iter_mut().zip(&inv) {
            *r = s * v;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in row.iter_mut() {
            *r = math::exp(*r - max);
            total += *r;
        }
        for r in row.iter_mut() {
            *r /= total;
        }
    }
    let diagonal: Vec<f64> = (0..d).map(|i| m.get(i, i)).collect();
    if !diagonal.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("saliency diagonal".into()));
    }
    Ok(Saliency {
        curve: normalize_curve(&diagonal),
        m,
        diagonal,
    })
}

/// Min-max normalisation to `[0, 1]`; a constant input maps to all ones.
pub fn normalize_curve(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 1e-12 * hi.abs().max(1.0)) {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Maximal runs of `true`, as inclusive `(first, last)` frame pairs.
fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mask.len() - 1));
    }
    out
}

/// Merge runs separated by fewer than `gap` unselected frames.
fn merge_runs(runs: Vec<(usize, usize)>, gap: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for r in runs {
        match out.last_mut() {
            Some(last) if r.0 - last.1 - 1 < gap => last.1 = r.1,
            _ => out.push(r),
        }
    }
    out
}

/// Frame mask chosen by thresholding, with the top-saliency fallback when
/// the selection is shorter than `min_select_s`.
pub fn selection_mask(curve: &[f64], t_frames: usize, hop_ms: f64, cfg: &SelectionConfig) -> Vec<bool> {
    let values = interp_1d(curve, t_frames);
    let hop_s = hop_ms / 1000.0;
    let mut mask: Vec<bool> = values.iter().map(|&v| v > cfg.threshold).collect();
    let selected = merge_runs(runs(&mask), cfg.merge_gap_frames);
    let total: usize = selected.iter().map(|(a, b)| b - a + 1).sum();
    if (total as f64) * hop_s < cfg.min_select_s || total == 0 {
        let want = (math::ceil(cfg.min_select_s / hop_s - 1e-9) as usize).clamp(1, t_frames);
        let mut order: Vec<usize> = (0..t_frames).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        mask = vec![false; t_frames];
        for &i in &order[..want] {
            mask[i] = true;
        }
    }
    mask
}

/// Threshold the interpolated curve at `cfg.threshold` and turn the selected
/// frames into segments; frame `t` spans `[t * hop, (t + 1) * hop)`.
pub fn select_segments(curve: &[f64], t_frames: usize, hop_ms: f64, cfg: &SelectionConfig) -> Result<SegmentSet> {
    if curve.is_empty() || t_frames == 0 || !(hop_ms > 0.0) {
        return Err(Error::Contract("select_segments needs a curve, frames and a positive hop".into()));
    }
    let mask = selection_mask(curve, t_frames, hop_ms, cfg);
    let hop_s = hop_ms / 1000.0;
    let intervals = merge_runs(runs(&mask), cfg.merge_gap_frames)
        .into_iter()
        .map(|(a, b)| (a as f64 * hop_s, (b + 1) as f64 * hop_s))
        .collect();
    SegmentSet::new(intervals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ParamStore, SlotAttention) {
        let cfg = ModelConfig {
            width: 8,
            slot_dim: 6,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let sa = SlotAttention::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(4));
        (store, sa)
    }

    #[test]
    fn eval_init_is_the_mean() {
        let (store, sa) = tiny();
        let mut g = Graph::new(&store);
        let s = sa.init_slots(&mut g, SlotInit::Eval).unwrap();
        assert_eq!(g.value(s.slots), store.value(sa.init_mean));
    }

    #[test]
    fn tiny_sigma_train_init_matches_eval() {
        let (mut store, sa) = tiny();
        *store.value_mut(sa.init_log_sigma) = Matrix::filled(2, 6, -1e6);
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sa.init_slots(&mut g, SlotInit::Train(&mut rng)).unwrap();
        let (a, b) = (g.value(s.slots), store.value(sa.init_mean));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn seeded_train_init_is_reproducible() {
        let (store, sa) = tiny();
        let draw = || {
            let mut g = Graph::new(&store);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let s = sa.init_slots(&mut g, SlotInit::Train(&mut rng)).unwrap();
            g.value(s.slots).clone()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn identical_slots_split_tokens_evenly() {
        let (mut store, sa) = tiny();
        let row: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 0.7).collect();
        *store.value_mut(sa.init_mean) = Matrix::from_fn(2, 6, |_, c| row[c]);
        let mut g = Graph::new(&store);
        let z = g.constant(Matrix::from_fn(5, 8, |r, c| ((r * 3 + c) % 7) as f64 * 0.2));
        let inputs = sa.inputs(&mut g, z).unwrap();
        let s = sa.init_slots(&mut g, SlotInit::Eval).unwrap();
        let (next, trace) = sa.slot_iteration(&mut g, &inputs, s, 1).unwrap();
        let w = g.value(trace.weights);
        assert!(w.as_slice().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let out = g.value(next.slots);
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn single_token_weights_are_forced() {
        let (store, sa) = tiny();
        let mut g = Graph::new(&store);
        let z = g.constant(Matrix::from_fn(1, 8, |_, c| c as f64 * 0.1));
        let inputs = sa.inputs(&mut g, z).unwrap();
        let s = sa.init_slots(&mut g, SlotInit::Eval).unwrap();
        let (_, trace) = sa.slot_iteration(&mut g, &inputs, s, 1).unwrap();
        assert_eq!(g.value(trace.attention).as_slice(), &[1.0, 1.0]);
        assert_eq!(g.value(trace.weights).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn one_iteration_run_equals_single_step() {
        let (store, mut sa) = tiny();
        sa.iters = 1;
        let zm = Matrix::from_fn(4, 8, |r, c| ((r + 2 * c) % 5) as f64 * 0.1);
        let mut g = Graph::new(&store);
        let z = g.constant(zm.clone());
        let run = sa.run(&mut g, z, SlotInit::Eval).unwrap();
        let mut h = Graph::new(&store);
        let z = h.constant(zm);
        let inputs = sa.inputs(&mut h, z).unwrap();
        let s = sa.init_slots(&mut h, SlotInit::Eval).unwrap();
        let (s, _) = sa.slot_iteration(&mut h, &inputs, s, 1).unwrap();
        assert_eq!(g.value(run.state.slots), h.value(s.slots));
    }

    #[test]
    fn saliency_hand_cases() {
        let ones = Matrix::filled(2, 4, 1.0);
        assert_eq!(saliency_diagonal(&ones, 1e-4).unwrap().curve, vec![1.0; 4]);

        let s = Matrix::from_vec(2, 2, vec![2.0, 0.1, 1.0, 1.0]).unwrap();
        let sal = saliency_diagonal(&s, 1e-4).unwrap();
        assert_eq!(sal.diagonal, vec![0.5, 0.5]);
        assert_eq!(sal.curve, vec![1.0, 1.0]);

        let s = Matrix::from_vec(2, 2, vec![2.0, 0.1, 1.0, 2.0]).unwrap();
        let sal = saliency_diagonal(&s, 1e-4).unwrap();
        let sm = |a: f64, b: f64| a.exp() / (a.exp() + b.exp());
        assert!((sal.diagonal[0] - sm(2.0, 1.0)).abs() < 1e-15);
        assert!((sal.diagonal[1] - sm(0.05, 0.1)).abs() < 1e-15);
        assert!((sal.diagonal[0] - 0.7311).abs() < 1e-4);
        assert!((sal.diagonal[1] - 0.4875).abs() < 1e-4);
        assert_eq!(sal.curve, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_uninformative_entry_is_clamped() {
        let s = Matrix::from_vec(2, 3, vec![0.3, -0.2, 0.1, 0.0, -1e-9, 2.0]).unwrap();
        let sal = saliency_diagonal(&s, 1e-4).unwrap();
        assert!(sal.m.is_finite());
        assert_eq!(clamp_magnitude(-1e-9, 1e-4), -1e-4);
        assert_eq!(clamp_magnitude(0.0, 1e-4), 1e-4);
    }

    #[test]
    fn select_all_and_step() {
        let cfg = SelectionConfig::default();
        let all = select_segments(&[1.0; 64], 200, 10.0, &cfg).unwrap();
        assert_eq!(all.intervals(), &[(0.0, 2.0)]);

        let step: Vec<f64> = (0..1000).map(|t| if (100..200).contains(&t) { 1.0 } else { 0.0 }).collect();
        let segs = select_segments(&step, 1000, 10.0, &cfg).unwrap();
        assert_eq!(segs.len(), 1);
        let (a, b) = segs.intervals()[0];
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12, "{segs:?}");
    }

    #[test]
    fn nearby_plateaus_merge() {
        let cfg = SelectionConfig::default();
        let mut c = vec![0.0; 100];
        c[10..40].iter_mut().for_each(|v| *v = 1.0);
        c[43..70].iter_mut().for_each(|v| *v = 1.0);
        let segs = select_segments(&c, 100, 10.0, &cfg).unwrap();
        assert_eq!(segs.len(), 1);
        let (a, b) = segs.intervals()[0];
        assert!((a - 0.1).abs() < 1e-12 && (b - 0.7).abs() < 1e-12, "{segs:?}");
        c[43..70].iter_mut().for_each(|v| *v = 0.0);
        c[50..70].iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(select_segments(&c, 100, 10.0, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn short_selection_falls_back_to_top_frames() {
        let cfg = SelectionConfig::default();
        let mut c = vec![0.0; 200];
        c[150] = 1.0;
        for (i, v) in c.iter_mut().enumerate().take(40).skip(20) {
            *v = 0.2 + i as f64 * 0.001;
        }
        let segs = select_segments(&c, 200, 10.0, &cfg).unwrap();
        let total = segs.total_duration();
        assert!(total >= 0.25 - 1e-12, "{segs:?}");
        assert!(segs.intervals().iter().any(|&(a, b)| a <= 1.5 && b >= 1.51));
    }
}
