//! The full multi-pass model: encode, decode and classify every pass, and
//! between passes pick the segments to replay.

use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::config::{LabelMode, ModelConfig};
use crate::decoder::Decoder;
use crate::dsp::{prepare_playback, resample, AudioClip, MelAnalyzer, PlaybackInput, SegmentSet};
use crate::encoder::Encoder;
use crate::matrix::{interp_1d, Matrix};
use crate::slots::{saliency_diagonal, select_segments, selection_mask, Saliency, SlotAttention, SlotInit};
use crate::{math, Error, Result};

/// Parameter layout of the model; the values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ReplayNet {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub selector: SlotAttention,
    pub decoder: Decoder,
    pub analyzer: MelAnalyzer,
}

/// Where the segments of later passes come from.
#[derive(Clone, Copy, Debug)]
pub enum SegmentPolicy<'a> {
    /// Chosen by the slot selector.
    Select,
    /// Given per later pass (entry `p - 2` feeds pass `p`); used to hold the
    /// discrete choices fixed while probing gradients.
    Fixed(&'a [SegmentSet]),
}

pub struct ForwardOptions<'a> {
    /// Noise source for the slot initialisation; `None` runs in eval mode.
    pub slot_rng: Option<&'a mut dyn RngCore>,
    pub segments: SegmentPolicy<'a>,
    /// Precomputed pass-1 input of this clip.
    pub first_pass: Option<&'a PlaybackInput>,
}

impl Default for ForwardOptions<'_> {
    fn default() -> Self {
        Self {
            slot_rng: None,
            segments: SegmentPolicy::Select,
            first_pass: None,
        }
    }
}

/// Selector output after a pass.
#[derive(Clone, Debug)]
pub struct Selection {
    pub slots: Matrix,
    pub saliency: Saliency,
    /// Normalised saliency interpolated to the pass frames.
    pub frame_curve: Vec<f64>,
    pub mask: Vec<bool>,
    /// Segments on the time axis of this pass's (concatenated) audio.
    pub local: SegmentSet,
    /// The same segments on the original clip's time axis.
    pub segments: SegmentSet,
}

pub struct PassOutput {
    pub pass_index: usize,
    pub input: PlaybackInput,
    pub z: Var,
    pub v: Var,
    pub logits: Var,
    pub selection: Option<Selection>,
}

impl ReplayNet {
    pub fn new<R: rand::Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            encoder: Encoder::new(store, cfg, rng),
            selector: SlotAttention::new(store, cfg, rng),
            decoder: Decoder::new(store, cfg, rng),
            analyzer: MelAnalyzer::from_config(&cfg.frontend)?,
        })
    }

    /// Pass-1 input: the whole clip at the base hop.
    pub fn first_pass_input(&self, clip: &AudioClip) -> Result<PlaybackInput> {
        let clip = resample(clip, self.cfg.frontend.sample_rate)?;
        let full = SegmentSet::full(clip.duration_s());
        prepare_playback(&self.analyzer, &clip, &full, 1, &self.cfg.frontend, self.cfg.input_frames)
    }

    /// Runs all `N + 1` passes, threading the decoder latent through them.
    pub fn forward(&self, g: &mut Graph<'_>, clip: &AudioClip, mut opts: ForwardOptions<'_>) -> Result<Vec<PassOutput>> {
        let cfg = &self.cfg;
        let clip = resample(clip, cfg.frontend.sample_rate)?;
        let passes = cfg.passes();
        let mut segments = SegmentSet::full(clip.duration_s());
        let mut v = self.decoder.initial_latent(g);
        let mut out = Vec::with_capacity(passes);
        for p in 1..=passes {
            let input = match (p, opts.first_pass) {
                (1, Some(cached)) => cached.clone(),
                _ => prepare_playback(&self.analyzer, &clip, &segments, p, &cfg.frontend, cfg.input_frames)?,
            };
            let feats = self.encoder.forward(g, &input.spec)?;
            let dec = self.decoder.decode(g, feats.z, v, p)?;
            v = dec.v;
            let logits = self.decoder.classify(g, v)?;
            let selection = if p < passes {
                let init = match opts.slot_rng.as_deref_mut() {
                    Some(rng) => SlotInit::Train(rng),
                    None => SlotInit::Eval,
                };
                let run = self.selector.run(g, feats.z, init)?;
                let mut sel = self.select(g.value(run.state.slots), &input)?;
                if let SegmentPolicy::Fixed(fixed) = opts.segments {
                    sel.segments = fixed
                        .get(p - 1)
                        .cloned()
                        .ok_or_else(|| Error::Contract(alloc::format!("no fixed segments for pass {}", p + 1)))?;
                }
                segments = sel.segments.clone();
                Some(sel)
            } else {
                None
            };
            out.push(PassOutput {
                pass_index: p,
                input,
                z: feats.z,
                v,
                logits,
                selection,
            });
        }
        Ok(out)
    }

    /// Saliency, thresholding and mapping back to clip time.
    pub fn select(&self, slots: &Matrix, input: &PlaybackInput) -> Result<Selection> {
        let sel_cfg = &self.cfg.selection;
        let saliency = saliency_diagonal(slots, sel_cfg.inverse_floor)?;
        let frames = input.spec.frames();
        let period = input.frame_period_ms();
        let local = select_segments(&saliency.curve, frames, period, sel_cfg)?;
        let segments = input.segments.map_local(&local)?;
        Ok(Selection {
            slots: slots.clone(),
            frame_curve: interp_1d(&saliency.curve, frames),
            mask: selection_mask(&saliency.curve, frames, period, sel_cfg),
            saliency,
            local,
            segments,
        })
    }
}

/// Softmax (single-label) or element-wise sigmoid (multi-label).
pub fn probabilities(logits: &[f64], mode: LabelMode) -> Vec<f64> {
    match mode {
        LabelMode::SingleLabel => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| math::exp(l - max)).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
        LabelMode::MultiLabel => logits.iter().map(|&l| math::sigmoid(l)).collect(),
    }
}

/// Uniform average of per-pass probability vectors.
pub fn average_probabilities(per_pass: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_pass
        .first()
        .ok_or_else(|| Error::Contract("no passes to average".into()))?;
    let mut mean = alloc::vec![0.0; first.len()];
    for p in per_pass {
        if p.len() != mean.len() {
            return Err(Error::Contract("passes disagree on the class count".into()));
        }
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    let n = per_pass.len() as f64;
    Ok(mean.into_iter().map(|m| m / n).collect())
}

/// Serializable record of one pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass_index: usize,
    pub hop_ms: f64,
    /// Frames of this pass before fitting to the model input size.
    pub source_frames: usize,
    /// Segments of the original clip this pass listened to.
    pub segments: SegmentSet,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub z: Matrix,
    pub v: Matrix,
    /// Frame-level saliency and selection mask (absent on the last pass).
    pub saliency: Option<Vec<f64>>,
    pub selected: Option<Vec<bool>>,
    pub next_segments: Option<SegmentSet>,
    /// Fitted model input of this pass.
    #[serde(skip)]
    pub spectrogram: Matrix,
    #[serde(skip)]
    pub frame_period_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaybackTrace {
    pub passes: Vec<PassRecord>,
    /// Mean of the per-pass probabilities.
    pub probabilities: Vec<f64>,
}

/// Configuration plus parameter values.
#[derive(Clone, Debug)]
pub struct ReplayModel {
    net: ReplayNet,
    store: ParamStore,
}

impl ReplayModel {
    /// Freshly initialised model; the seed fixes every initial value.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ReplayNet::new(cfg, &mut store, &mut rng)?;
        Ok(Self { net, store })
    }

    /// Model with the given parameters (names and shapes must match `cfg`).
    pub fn with_params(cfg: &ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        model.store.load_from(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    pub fn net(&self) -> &ReplayNet {
        &self.net
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Eval-mode forward pass with the per-pass bookkeeping.
    pub fn trace(&self, clip: &AudioClip) -> Result<PlaybackTrace> {
        let mut g = Graph::new(&self.store);
        let outputs = self.net.forward(&mut g, clip, ForwardOptions::default())?;
        let mode = self.net.cfg.label_mode;
        let passes: Vec<PassRecord> = outputs
            .into_iter()
            .map(|o| {
                let logits = g.value(o.logits).as_slice().to_vec();
                PassRecord {
                    pass_index: o.pass_index,
                    hop_ms: o.input.hop_ms,
                    source_frames: o.input.source_frames,
                    segments: o.input.segments.clone(),
                    probabilities: probabilities(&logits, mode),
                    logits,
                    z: g.value(o.z).clone(),
                    v: g.value(o.v).clone(),
                    saliency: o.selection.as_ref().map(|s| s.frame_curve.clone()),
                    selected: o.selection.as_ref().map(|s| s.mask.clone()),
                    next_segments: o.selection.map(|s| s.segments),
                    frame_period_ms: o.input.frame_period_ms(),
                    spectrogram: o.input.spec.values,
                }
            })
            .collect();
        let per_pass: Vec<Vec<f64>> = passes.iter().map(|p| p.probabilities.clone()).collect();
        Ok(PlaybackTrace {
            probabilities: average_probabilities(&per_pass)?,
            passes,
        })
    }

    /// Class probabilities averaged uniformly over all passes.
    pub fn infer(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        Ok(self.trace(clip)?.probabilities)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_average() {
        let avg = average_probabilities(&[alloc::vec![0.2, 0.8], alloc::vec![0.6, 0.4]]).unwrap();
        assert!((avg[0] - 0.4).abs() < 1e-15 && (avg[1] - 0.6).abs() < 1e-15);
        let same = average_probabilities(&alloc::vec![alloc::vec![0.3, 0.7]; 3]).unwrap();
        assert!((same[0] - 0.3).abs() < 1e-15 && (same[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn probabilities_by_mode() {
        let p = probabilities(&[0.0, 0.0, 0.0, 0.0], LabelMode::SingleLabel);
        assert_eq!(p, alloc::vec![0.25; 4]);
        let p = probabilities(&[0.0, 100.0], LabelMode::MultiLabel);
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 1.0).abs() < 1e-15);
    }
}
