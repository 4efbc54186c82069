//! Finite-difference gradient suite over every differentiable component.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, gru_cell, Coordinate, GradCheckOptions, Graph, GruParams, ParamId, ParamStore, Var};
use crate::config::{FrontendConfig, LossConfig, ModelConfig};
use crate::decoder::Decoder;
use crate::dsp::{AudioClip, SegmentSet};
use crate::loss::{rank_loss, total_loss, Target};
use crate::matrix::Matrix;
use crate::model::{ForwardOptions, ReplayNet, SegmentPolicy};
use crate::nn::gaussian;
use crate::slots::{SlotAttention, SlotInit};
use crate::{math, Result};

/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-5;
/// Tolerance for composite blocks and the whole model.
pub const COMPOSITE_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub worst: Option<Coordinate>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

type Unary = fn(&mut Graph<'_>, Var) -> Result<Var>;
type Binary = fn(&mut Graph<'_>, Var, Var) -> Result<Var>;

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Values with magnitude in `[0.2, 1.5]`, random sign: away from kinks and
/// poles.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let m = rng.random_range(0.2..1.5);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(out * W)` for a fixed random `W`, so every output coordinate matters.
fn weighted_sum(g: &mut Graph<'_>, out: Var, seed: u64) -> Result<Var> {
    let [r, c] = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(uniform(r, c, -1.0, 1.0, &mut rng));
    let y = g.mul(out, w)?;
    Ok(g.sum(y))
}

fn run_check(
    name: impl Into<String>,
    tolerance: f64,
    store: &ParamStore,
    opts: &GradCheckOptions,
    f: impl Fn(&mut Graph<'_>) -> Result<Var>,
) -> Result<CheckResult> {
    let report = grad_check(store, f, opts)?;
    Ok(CheckResult {
        name: name.into(),
        max_rel_err: report.max_rel_err,
        tolerance,
        checked: report.checked,
        worst: report.worst,
    })
}

macro_rules! unary {
    ($name:expr, $positive:expr, |$g:ident, $a:ident| $body:expr) => {
        ($name, (|$g: &mut Graph<'_>, $a: Var| -> Result<Var> { $body }) as Unary, $positive)
    };
}

macro_rules! binary {
    ($name:expr, |$g:ident, $a:ident, $b:ident| $body:expr) => {
        ($name, (|$g: &mut Graph<'_>, $a: Var, $b: Var| -> Result<Var> { $body }) as Binary)
    };
}

/// `(name, op, needs strictly positive input)`.
fn unary_cases() -> Vec<(&'static str, Unary, bool)> {
    alloc::vec![
        unary!("transpose", false, |g, a| Ok(g.transpose(a))),
        unary!("scale", false, |g, a| Ok(g.scale(a, -1.7))),
        unary!("add_scalar", false, |g, a| Ok(g.add_scalar(a, 0.3))),
        unary!("sum", false, |g, a| Ok(g.sum(a))),
        unary!("mean", false, |g, a| Ok(g.mean(a))),
        unary!("sum_axis0", false, |g, a| g.sum_axis(a, 0)),
        unary!("sum_axis1", false, |g, a| g.sum_axis(a, 1)),
        unary!("mean_axis0", false, |g, a| g.mean_axis(a, 0)),
        unary!("mean_axis1", false, |g, a| g.mean_axis(a, 1)),
        unary!("relu", false, |g, a| Ok(g.relu(a))),
        unary!("max_with_zero", false, |g, a| Ok(g.max_with_zero(a))),
        unary!("gelu", false, |g, a| Ok(g.gelu(a))),
        unary!("sigmoid", false, |g, a| Ok(g.sigmoid(a))),
        unary!("tanh", false, |g, a| Ok(g.tanh(a))),
        unary!("exp", false, |g, a| Ok(g.exp(a))),
        unary!("log", true, |g, a| Ok(g.log(a))),
        unary!("recip", false, |g, a| Ok(g.recip(a))),
        unary!("softplus", false, |g, a| Ok(g.softplus(a))),
        unary!("softmax_axis0", false, |g, a| g.softmax(a, 0)),
        unary!("softmax_axis1", false, |g, a| g.softmax(a, 1)),
        unary!("log_softmax_axis1", false, |g, a| g.log_softmax(a, 1)),
        unary!("layer_norm", false, |g, a| Ok(g.layer_norm(a))),
        unary!("interp_1d_stretch", false, |g, a| {
            let n = 2 * g.shape(a)[1] + 1;
            g.interp_1d(a, n)
        }),
        unary!("interp_1d_squeeze", false, |g, a| {
            let n = (g.shape(a)[1] / 2).max(1);
            g.interp_1d(a, n)
        }),
        unary!("gather_rows", false, |g, a| {
            let r = g.shape(a)[0];
            let idx: Vec<usize> = (0..2 * r).map(|i| (i * 7 + 1) % r).collect();
            g.gather_rows(a, &idx)
        }),
        unary!("slice_rows", false, |g, a| {
            let r = g.shape(a)[0];
            g.slice(a, 0, r / 2, r - r / 2)
        }),
        unary!("slice_cols", false, |g, a| {
            let c = g.shape(a)[1];
            g.slice(a, 1, 1, c - 1)
        }),
    ]
}

fn binary_cases() -> Vec<(&'static str, Binary)> {
    alloc::vec![
        binary!("add", |g, a, b| g.add(a, b)),
        binary!("sub", |g, a, b| g.sub(a, b)),
        binary!("mul", |g, a, b| g.mul(a, b)),
        binary!("div", |g, a, b| g.div(a, b)),
        binary!("concat_rows", |g, a, b| g.concat(&[a, b], 0)),
        binary!("concat_cols", |g, a, b| {
            let at = g.transpose(a);
            let bt = g.transpose(b);
            g.concat(&[at, bt], 1)
        }),
    ]
}

/// Every primitive on `trials` random shapes each.
pub fn primitive_checks(trials: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GradCheckOptions::default();
    let mut out = Vec::new();
    let worst = |name: &str, res: CheckResult, out: &mut Vec<CheckResult>| {
        match out.iter_mut().find(|r| r.name == name) {
            Some(prev) => {
                prev.checked += res.checked;
                if res.max_rel_err > prev.max_rel_err {
                    prev.max_rel_err = res.max_rel_err;
                    prev.worst = res.worst;
                }
            }
            None => out.push(res),
        }
    };
    for t in 0..trials {
        let (r, c) = (rng.random_range(1..5), rng.random_range(2..6));
        for (name, op, positive) in unary_cases() {
            let mut store = ParamStore::new();
            let x = if positive {
                uniform(r, c, 0.2, 2.0, &mut rng)
            } else {
                away_from_zero(r, c, &mut rng)
            };
            let a = store.add("a", x);
            let res = run_check(name, PRIMITIVE_TOL, &store, &opts, |g| {
                let v = g.param(a);
                let y = op(g, v)?;
                weighted_sum(g, y, 100 + t as u64)
            })?;
            worst(name, res, &mut out);
        }
        for (name, op) in binary_cases() {
            // Second operand alternates between full shape and broadcast row.
            let (br, bc) = match (name, t % 3) {
                ("concat_rows", _) | ("concat_cols", _) => (r + 1, c),
                (_, 1) => (1, c),
                (_, 2) => (r, 1),
                _ => (r, c),
            };
            let mut store = ParamStore::new();
            let a = store.add("a", away_from_zero(r, c, &mut rng));
            let b = store.add("b", away_from_zero(br, bc, &mut rng));
            let res = run_check(name, PRIMITIVE_TOL, &store, &opts, |g| {
                let (va, vb) = (g.param(a), g.param(b));
                let y = op(g, va, vb)?;
                weighted_sum(g, y, 200 + t as u64)
            })?;
            worst(name, res, &mut out);
        }
        let k = rng.random_range(1..6);
        let mut store = ParamStore::new();
        let a = store.add("a", uniform(r, k, -1.0, 1.0, &mut rng));
        let b = store.add("b", uniform(k, c, -1.0, 1.0, &mut rng));
        let res = run_check("matmul", PRIMITIVE_TOL, &store, &opts, |g| {
            let (va, vb) = (g.param(a), g.param(b));
            let y = g.matmul(va, vb)?;
            weighted_sum(g, y, 300 + t as u64)
        })?;
        worst("matmul", res, &mut out);
    }
    Ok(out)
}

pub fn gru_check(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 5;
    let mut store = ParamStore::new();
    let p = GruParams::new(&mut store, "gru", d, &mut rng);
    for id in [p.b_r, p.b_u, p.b_n] {
        *store.value_mut(id) = gaussian(1, d, 0.5, &mut rng);
    }
    let x = store.add("x", gaussian(2, d, 1.0, &mut rng));
    let h = store.add("h", gaussian(2, d, 1.0, &mut rng));
    run_check("gru_cell", PRIMITIVE_TOL, &store, &GradCheckOptions::default(), |g| {
        let (vx, vh) = (g.param(x), g.param(h));
        let y = gru_cell(g, vx, vh, &p)?;
        weighted_sum(g, y, seed + 1)
    })
}

fn small_model_config() -> ModelConfig {
    ModelConfig {
        frontend: FrontendConfig {
            n_mels: 32,
            ..FrontendConfig::default()
        },
        input_frames: 100,
        patch_f: 16,
        patch_t: 20,
        width: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        slot_dim: 6,
        slot_iters: 2,
        latents: 2,
        decoder_heads: 2,
        n_classes: 3,
        n_playbacks: 1,
        max_passes: 2,
        ..ModelConfig::default()
    }
}

pub fn slot_iteration_check(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model_config();
    let mut store = ParamStore::new();
    let sa = SlotAttention::new(&mut store, &cfg, &mut rng);
    let z = store.add("z", gaussian(5, cfg.width, 1.0, &mut rng));
    run_check("slot_iteration", COMPOSITE_TOL, &store, &GradCheckOptions::default(), |g| {
        let vz = g.param(z);
        let inputs = sa.inputs(g, vz)?;
        let s = sa.init_slots(g, SlotInit::Eval)?;
        let (next, _) = sa.slot_iteration(g, &inputs, s, 1)?;
        let a = weighted_sum(g, next.slots, seed + 1)?;
        let b = weighted_sum(g, next.hidden, seed + 2)?;
        g.add(a, b)
    })
}

pub fn decode_check(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        input_frames: 60,
        patch_t: 20,
        ..small_model_config()
    };
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, &cfg, &mut rng);
    // Widen the tiny default encodings so they matter numerically.
    for id in [dec.latent_init, dec.pos_time, dec.playback] {
        let [r, c] = store.value(id).shape();
        *store.value_mut(id) = gaussian(r, c, 0.5, &mut rng);
    }
    let z = store.add("z", gaussian(cfg.time_patches(), cfg.width, 1.0, &mut rng));
    run_check("decode_block", COMPOSITE_TOL, &store, &GradCheckOptions::default(), |g| {
        let vz = g.param(z);
        let v0 = dec.initial_latent(g);
        let out = dec.decode(g, vz, v0, 2)?;
        let logits = dec.classify(g, out.v)?;
        let a = weighted_sum(g, out.v, seed + 1)?;
        let b = weighted_sum(g, logits, seed + 2)?;
        g.add(a, b)
    })
}

pub fn rank_loss_check(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = 0.05;
    let mut store = ParamStore::new();
    let mut ids: Vec<ParamId> = Vec::new();
    // Draw probabilities whose pairwise hinges stay clear of the kink.
    while ids.len() < 5 {
        let p = rng.random_range(0.05..0.95);
        let clear = ids
            .iter()
            .all(|&id| (store.value(id).as_slice()[0] - p).abs() > 0.01 && ((store.value(id).as_slice()[0] - p).abs() - gamma).abs() > 0.01);
        if clear {
            ids.push(store.add(format!("p{}", ids.len() + 1), Matrix::scalar(p)));
        }
    }
    let mut worst: Option<CheckResult> = None;
    for i in 2..=ids.len() {
        let res = run_check("rank_loss", COMPOSITE_TOL, &store, &GradCheckOptions::default(), |g| {
            let p: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            rank_loss(g, &p, i, gamma)
        })?;
        if worst.as_ref().map_or(true, |w| res.max_rel_err > w.max_rel_err) {
            worst = Some(res);
        }
    }
    Ok(worst.expect("four pass indices"))
}

/// One-second test clip: two tones and a decaying chirp.
pub fn test_clip(sample_rate: u32, seconds: f64) -> Result<AudioClip> {
    let n = math::round(seconds * sample_rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let chirp = math::sin(2.0 * math::PI * (300.0 + 800.0 * t) * t) * math::exp(-3.0 * t);
            0.3 * math::sin(2.0 * math::PI * 440.0 * t) + 0.2 * chirp + 0.1 * math::sin(2.0 * math::PI * 2500.0 * t)
        })
        .collect();
    AudioClip::new(samples, sample_rate)
}

/// Whole model on a 1 s clip with N = 1, segments held at the choice made
/// at the base point.
pub fn end_to_end_check(seed: u64, max_coords_per_param: Option<usize>) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_model_config();
    let mut store = ParamStore::new();
    let net = ReplayNet::new(&cfg, &mut store, &mut rng)?;
    let clip = test_clip(cfg.frontend.sample_rate, 1.0)?;
    let first = net.first_pass_input(&clip)?;
    let segments: Vec<SegmentSet> = {
        let mut g = Graph::new(&store);
        net.forward(
            &mut g,
            &clip,
            ForwardOptions {
                first_pass: Some(&first),
                ..ForwardOptions::default()
            },
        )?
        .into_iter()
        .filter_map(|o| o.selection.map(|s| s.segments))
        .collect()
    };
    let target = Target::one_hot(1, cfg.n_classes);
    let loss_cfg = LossConfig::default();
    let opts = GradCheckOptions {
        max_coords_per_param,
        ..GradCheckOptions::default()
    };
    run_check("end_to_end", COMPOSITE_TOL, &store, &opts, |g| {
        let outputs = net.forward(
            g,
            &clip,
            ForwardOptions {
                first_pass: Some(&first),
                segments: SegmentPolicy::Fixed(&segments),
                ..ForwardOptions::default()
            },
        )?;
        let logits: Vec<Var> = outputs.iter().map(|o| o.logits).collect();
        Ok(total_loss(g, &logits, &target, &loss_cfg)?.total)
    })
}

/// The complete suite. `full` checks more random shapes and every
/// coordinate of the end-to-end model.
pub fn gradient_suite(full: bool) -> Result<Vec<CheckResult>> {
    let mut out = primitive_checks(if full { 10 } else { 3 }, 17)?;
    out.push(gru_check(23)?);
    out.push(slot_iteration_check(29)?);
    out.push(decode_check(31)?);
    out.push(rank_loss_check(37)?);
    out.push(end_to_end_check(41, if full { None } else { Some(4) })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        for r in gradient_suite(false).unwrap() {
            std::println!("{:<20} {:.3e} ({} coords)", r.name, r.max_rel_err, r.checked);
            assert!(r.passed(), "{} {:?}", r.name, r.worst);
        }
    }
}
