//! Synthetic micro-gap dataset: class `c` is a pair of tone bursts separated
//! by `gaps_ms[c]`, hidden at a random offset in noise among single
//! distractor bursts of the same tone.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::{math, Error, Result};

const EDGE_MARGIN_S: f64 = 0.02;
const GUARD_S: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub gaps_ms: Vec<f64>,
    pub clip_s: f64,
    pub sample_rate: u32,
    pub tone_hz: f64,
    pub burst_ms: f64,
    /// Raised-cosine on/off ramp of every burst.
    pub ramp_ms: f64,
    pub amplitude: f64,
    /// Burst-to-noise power ratio; `None` means no noise.
    pub snr_db: Option<f64>,
    pub min_distractors: usize,
    pub max_distractors: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    /// Finest analysis hop the data will be seen at, for the resolvability
    /// warning.
    pub finest_hop_ms: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            gaps_ms: vec![2.0, 4.0, 6.0, 8.0],
            clip_s: 2.0,
            sample_rate: 16_000,
            tone_hz: 1000.0,
            burst_ms: 10.0,
            ramp_ms: 1.0,
            amplitude: 0.5,
            snr_db: Some(20.0),
            min_distractors: 1,
            max_distractors: 3,
            n_train: 2000,
            n_val: 500,
            seed: 0,
            finest_hop_ms: 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    fn id(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthExample {
    pub clip: AudioClip,
    pub label: usize,
    /// Onset of the first burst of the labelled pair.
    pub event_start_s: f64,
}

impl SynthSpec {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
        }
    }

    fn event_s(&self, gap_ms: f64) -> f64 {
        (2.0 * self.burst_ms + gap_ms) / 1000.0
    }

    /// Hard errors, then soft warnings (returned).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n_classes == 0 || self.gaps_ms.len() != self.n_classes {
            return Err(Error::Config(format!(
                "need one gap per class: {} classes, {} gaps",
                self.n_classes,
                self.gaps_ms.len()
            )));
        }
        for (i, g) in self.gaps_ms.iter().enumerate() {
            if !(*g > 0.0) || self.gaps_ms[..i].contains(g) {
                return Err(Error::Config(format!("gap {g} ms must be positive and distinct")));
            }
        }
        if self.sample_rate == 0 || !(self.tone_hz > 0.0) || self.tone_hz >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config("tone must lie strictly between 0 Hz and Nyquist".into()));
        }
        if !(self.burst_ms > 0.0) || !(self.ramp_ms >= 0.0) || 2.0 * self.ramp_ms > self.burst_ms {
            return Err(Error::Config("bursts must be longer than their two ramps".into()));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::Config("amplitude must be in (0, 1]".into()));
        }
        if self.min_distractors > self.max_distractors {
            return Err(Error::Config("min_distractors exceeds max_distractors".into()));
        }
        let max_gap = self.gaps_ms.iter().copied().fold(0.0, f64::max);
        let budget = 2.0 * EDGE_MARGIN_S
            + self.event_s(max_gap)
            + self.max_distractors as f64 * (self.burst_ms / 1000.0 + 2.0 * GUARD_S);
        if budget > self.clip_s {
            return Err(Error::Config(format!(
                "{} s clips cannot hold the event and {} distractors (need {budget:.3} s)",
                self.clip_s, self.max_distractors
            )));
        }
        let mut warnings = Vec::new();
        let mut sorted = self.gaps_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let min_diff = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if min_diff < self.finest_hop_ms / 4.0 {
            warnings.push(format!(
                "gaps differ by as little as {min_diff} ms, under a quarter of the finest hop ({} ms); the task may be unlearnable",
                self.finest_hop_ms
            ));
        }
        let sample_ms = 1000.0 / self.sample_rate as f64;
        if min_diff < sample_ms {
            warnings.push(format!("gaps differ by less than one sample ({sample_ms} ms)"));
        }
        Ok(warnings)
    }

    fn burst_envelope(&self, t: f64) -> f64 {
        let len = self.burst_ms / 1000.0;
        if !(0.0..len).contains(&t) {
            return 0.0;
        }
        let ramp = self.ramp_ms / 1000.0;
        if ramp == 0.0 {
            return 1.0;
        }
        let edge = t.min(len - t);
        if edge >= ramp {
            1.0
        } else {
            0.5 - 0.5 * math::cos(math::PI * edge / ramp)
        }
    }

    /// Noise-free pair of bursts separated by `gap_ms`, starting at sample 0
    /// with carrier phase `phase`.
    pub fn pair_template(&self, gap_ms: f64, phase: f64) -> Vec<f64> {
        let n = math::ceil(self.event_s(gap_ms) * self.sample_rate as f64) as usize;
        let mut out = vec![0.0; n];
        self.add_pair(&mut out, 0.0, gap_ms, phase);
        out
    }

    fn add_burst(&self, buf: &mut [f64], start_s: f64, phase: f64) {
        let sr = self.sample_rate as f64;
        let first = math::floor(start_s * sr).max(0.0) as usize;
        let last = (math::ceil((start_s + self.burst_ms / 1000.0) * sr) as usize + 1).min(buf.len());
        for (i, b) in buf.iter_mut().enumerate().take(last).skip(first) {
            let t = i as f64 / sr;
            let env = self.burst_envelope(t - start_s);
            if env > 0.0 {
                *b += self.amplitude * env * math::sin(2.0 * math::PI * self.tone_hz * (t - start_s) + phase);
            }
        }
    }

    fn add_pair(&self, buf: &mut [f64], start_s: f64, gap_ms: f64, phase: f64) {
        self.add_burst(buf, start_s, phase);
        let second = start_s + (self.burst_ms + gap_ms) / 1000.0;
        let phase2 = phase + 2.0 * math::PI * self.tone_hz * (second - start_s);
        self.add_burst(buf, second, phase2);
    }

    /// Example `index` of `split`; independent of every other example.
    pub fn example(&self, split: Split, index: usize) -> Result<SynthExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(math::derive_seed(self.seed, &[split.id(), index as u64]));
        let label = index % self.n_classes;
        let gap = self.gaps_ms[label];
        let sr = self.sample_rate as f64;
        let n = math::round(self.clip_s * sr) as usize;
        let mut buf = vec![0.0; n];

        let event = self.event_s(gap);
        let start = rng.random_range(EDGE_MARGIN_S..=(self.clip_s - EDGE_MARGIN_S - event));
        let phase = rng.random_range(0.0..2.0 * math::PI);
        self.add_pair(&mut buf, start, gap, phase);

        let burst = self.burst_ms / 1000.0;
        let mut occupied = vec![(start, start + event)];
        let k = rng.random_range(self.min_distractors..=self.max_distractors);
        for _ in 0..k {
            for _attempt in 0..100 {
                let s = rng.random_range(EDGE_MARGIN_S..=(self.clip_s - EDGE_MARGIN_S - burst));
                let clear = occupied.iter().all(|&(a, b)| s + burst + GUARD_S <= a || s >= b + GUARD_S);
                if clear {
                    let ph = rng.random_range(0.0..2.0 * math::PI);
                    self.add_burst(&mut buf, s, ph);
                    occupied.push((s, s + burst));
                    break;
                }
            }
        }

        if let Some(snr) = self.snr_db {
            let power = self.amplitude * self.amplitude / 2.0;
            let sigma = math::sqrt(power / math::pow(10.0, snr / 10.0));
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise: {e}")))?;
            for b in &mut buf {
                *b += normal.sample(&mut rng);
            }
        }
        for b in &mut buf {
            *b = quantize_pcm16(*b);
        }
        Ok(SynthExample {
            clip: AudioClip::new(buf, self.sample_rate)?,
            label,
            event_start_s: start,
        })
    }

    pub fn generate(&self, split: Split) -> Result<Vec<SynthExample>> {
        self.validate()?;
        (0..self.count(split)).map(|i| self.example(split, i)).collect()
    }
}

/// Snap to the 16-bit PCM grid so that written and in-memory data agree.
pub fn quantize_pcm16(x: f64) -> f64 {
    math::round(x * 32768.0).clamp(-32768.0, 32767.0) / 32768.0
}
