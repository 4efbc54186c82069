//! Audio clips, log-mel analysis and segment replay.
//!
//! Frames are centred: frame `t` covers the window centred on sample
//! `t * hop`, with reflect padding of half a window at both ends, so a clip of
//! `n` samples yields `ceil(n / hop)` frames. Frame `t` is associated with
//! the time interval `[t * hop, (t + 1) * hop)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::FrontendConfig;
use crate::math;
use crate::matrix::{interp_weights, Matrix};
use crate::{Error, Result};

/// Mono PCM audio with amplitudes in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidClip("clip has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidClip(format!(
                "sample {i} = {} is not a finite value in [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// `n_mels x T` log-mel energies analysed at `hop_ms`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub hop_ms: f64,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }
}

/// Sorted, disjoint `[start, end)` intervals in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSet {
    intervals: Vec<(f64, f64)>,
}

impl SegmentSet {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Contract("segment set is empty".into()));
        }
        let mut prev_end = 0.0;
        for (i, &(s, e)) in intervals.iter().enumerate() {
            if !(s.is_finite() && e.is_finite() && s >= 0.0 && s < e) {
                return Err(Error::Contract(format!("segment {i} = ({s}, {e}) is not a valid interval")));
            }
            if i > 0 && s < prev_end {
                return Err(Error::Contract(format!("segment {i} overlaps or precedes its predecessor")));
            }
            prev_end = e;
        }
        Ok(Self { intervals })
    }

    /// The whole clip.
    pub fn full(duration_s: f64) -> Self {
        Self {
            intervals: vec![(0.0, duration_s)],
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.intervals.iter().map(|(s, e)| e - s).sum()
    }

    pub fn end(&self) -> f64 {
        self.intervals.last().map_or(0.0, |i| i.1)
    }

    /// Map intervals given on the time axis of the concatenation of `self`
    /// back onto the original time axis. Pieces that straddle a boundary
    /// between two segments are split; touching pieces are merged.
    pub fn map_local(&self, local: &SegmentSet) -> Result<SegmentSet> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(a, b) in &local.intervals {
            let mut offset = 0.0;
            for &(s, e) in &self.intervals {
                let len = e - s;
                let lo = a.max(offset);
                let hi = b.min(offset + len);
                if hi - lo > 1e-9 {
                    let piece = (s + (lo - offset), (s + (hi - offset)).min(e));
                    match out.last_mut() {
                        Some(last) if (piece.0 - last.1).abs() <= 1e-9 => last.1 = piece.1,
                        _ => out.push(piece),
                    }
                }
                offset += len;
            }
        }
        if out.is_empty() {
            return Err(Error::Contract("no mapped segment lies inside the source segments".into()));
        }
        SegmentSet::new(out)
    }
}

/// Sample count of a duration, rounding half up.
pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    seconds_to_index(ms / 1000.0, sample_rate)
}

fn seconds_to_index(s: f64, sample_rate: u32) -> usize {
    math::floor(s * sample_rate as f64 + 0.5).max(0.0) as usize
}

/// Linear-interpolation resampling; output length is
/// `round(len * target / source)`.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if target_hz == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if target_hz == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = clip.samples();
    let ratio = clip.sample_rate as f64 / target_hz as f64;
    let out_len = (math::round(src.len() as f64 * target_hz as f64 / clip.sample_rate as f64) as usize).max(1);
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i0 = (math::floor(pos) as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let t = (pos - i0 as f64).clamp(0.0, 1.0);
            if i0 == i1 {
                src[i0]
            } else {
                src[i0] + t * (src[i1] - src[i0])
            }
        })
        .collect();
    AudioClip::new(samples, target_hz)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * math::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (math::pow(10.0, mel / 2595.0) - 1.0)
}

/// HTK triangular filters spanning 0 Hz to Nyquist, unnormalised. Returns
/// the band edges `(lower, centre, upper)` in Hz for each filter.
pub fn mel_band_edges(n_mels: usize, sample_rate: u32) -> Vec<(f64, f64, f64)> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels).map(|m| (points[m], points[m + 1], points[m + 2])).collect()
}

/// Triangle response of a filter at `hz`.
pub fn triangle(edges: (f64, f64, f64), hz: f64) -> f64 {
    let (lo, c, hi) = edges;
    if hz <= lo || hz >= hi {
        0.0
    } else if hz <= c {
        (hz - lo) / (c - lo)
    } else {
        (hi - hz) / (hi - c)
    }
}

#[derive(Clone, Debug)]
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Reusable analyser: caches the window and filterbank for one sample rate.
#[derive(Clone, Debug)]
pub struct MelAnalyzer {
    sample_rate: u32,
    n_fft: usize,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    log_offset: f64,
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

macro_rules! rfft_dispatch {
    ($buf:expr, $out:expr, $($n:literal => $f:ident),*) => {
        match $buf.len() {
            $($n => {
                let arr: &mut [f32; $n] = $buf.try_into().expect("length matched");
                let spec = microfft::real::$f(arr);
                write_power(spec, $out);
            })*
            n => unreachable!("n_fft {n} rejected at construction"),
        }
    };
}

fn write_power(spec: &[microfft::Complex32], out: &mut [f64]) {
    let half = spec.len();
    out[0] = (spec[0].re as f64) * (spec[0].re as f64);
    out[half] = (spec[0].im as f64) * (spec[0].im as f64);
    for k in 1..half {
        let (re, im) = (spec[k].re as f64, spec[k].im as f64);
        out[k] = re * re + im * im;
    }
}

fn power_spectrum(buf: &mut [f32], out: &mut [f64]) {
    rfft_dispatch!(buf, out,
        4 => rfft_4, 8 => rfft_8, 16 => rfft_16, 32 => rfft_32, 64 => rfft_64,
        128 => rfft_128, 256 => rfft_256, 512 => rfft_512, 1024 => rfft_1024,
        2048 => rfft_2048, 4096 => rfft_4096);
}

impl MelAnalyzer {
    pub fn new(sample_rate: u32, n_mels: usize, win_ms: f64, n_fft: usize, log_offset: f64) -> Result<Self> {
        let cfg = FrontendConfig {
            sample_rate,
            n_mels,
            win_ms,
            n_fft,
            log_offset,
            ..FrontendConfig::default()
        };
        cfg.validate(1)?;
        let win = ms_to_samples(win_ms, sample_rate);
        let window = (0..win)
            .map(|j| 0.5 - 0.5 * math::cos(2.0 * math::PI * j as f64 / win as f64))
            .collect();
        let bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let filters = mel_band_edges(n_mels, sample_rate)
            .into_iter()
            .map(|edges| {
                let resp: Vec<f64> = (0..bins).map(|k| triangle(edges, k as f64 * bin_hz)).collect();
                let first = resp.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = resp.iter().rposition(|&w| w > 0.0).map_or(first, |l| l + 1);
                MelFilter {
                    first_bin: first,
                    weights: resp[first..last.max(first)].to_vec(),
                }
            })
            .collect();
        Ok(Self {
            sample_rate,
            n_fft,
            window,
            filters,
            log_offset,
        })
    }

    pub fn from_config(cfg: &FrontendConfig) -> Result<Self> {
        Self::new(cfg.sample_rate, cfg.n_mels, cfg.win_ms, cfg.n_fft, cfg.log_offset)
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    /// Frame count for `len` samples at `hop_ms`.
    pub fn frame_count(&self, len: usize, hop_ms: f64) -> Result<usize> {
        let hop = self.hop_samples(hop_ms)?;
        Ok(len.div_ceil(hop))
    }

    fn hop_samples(&self, hop_ms: f64) -> Result<usize> {
        let exact = hop_ms * self.sample_rate as f64 / 1000.0;
        if !(exact >= 1.0) {
            return Err(Error::Config(format!(
                "hop of {hop_ms} ms is shorter than one sample at {} Hz",
                self.sample_rate
            )));
        }
        Ok(ms_to_samples(hop_ms, self.sample_rate))
    }

    /// `log(mel_energy + offset)` with centred, reflect-padded framing.
    pub fn spectrogram(&self, clip: &AudioClip, hop_ms: f64) -> Result<MelSpectrogram> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::Config(format!(
                "clip is sampled at {} Hz but the analyser expects {} Hz",
                clip.sample_rate(),
                self.sample_rate
            )));
        }
        let hop = self.hop_samples(hop_ms)?;
        let x = clip.samples();
        if x.len() < hop {
            return Err(Error::Config(format!(
                "clip of {} samples is shorter than one hop ({hop} samples)",
                x.len()
            )));
        }
        let frames = x.len().div_ceil(hop);
        let win = self.window.len();
        let half = (win / 2) as isize;
        let mut values = Matrix::zeros(self.filters.len(), frames);
        let mut buf = vec![0f32; self.n_fft];
        let mut power = vec![0f64; self.n_fft / 2 + 1];
        for t in 0..frames {
            let start = (t * hop) as isize - half;
            buf.iter_mut().for_each(|b| *b = 0.0);
            for (j, w) in self.window.iter().enumerate() {
                buf[j] = (x[reflect(start + j as isize, x.len())] * w) as f32;
            }
            power_spectrum(&mut buf, &mut power);
            for (m, f) in self.filters.iter().enumerate() {
                let energy: f64 = f
                    .weights
                    .iter()
                    .zip(&power[f.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                values.set(m, t, math::ln(energy + self.log_offset));
            }
        }
        Ok(MelSpectrogram { values, hop_ms })
    }
}

/// One-shot log-mel analysis (builds a fresh [`MelAnalyzer`]).
pub fn log_mel_spectrogram(clip: &AudioClip, hop_ms: f64, n_mels: usize, win_ms: f64, n_fft: usize) -> Result<MelSpectrogram> {
    MelAnalyzer::new(clip.sample_rate(), n_mels, win_ms, n_fft, 1e-6)?.spectrogram(clip, hop_ms)
}

/// Concatenate the raw sample spans of `segs`, in order.
pub fn extract_segments(clip: &AudioClip, segs: &SegmentSet) -> Result<AudioClip> {
    if segs.is_empty() {
        return Err(Error::Contract("extract_segments needs at least one segment".into()));
    }
    let duration = clip.duration_s();
    if segs.end() > duration + 1e-9 {
        return Err(Error::Contract(format!(
            "segment end {} s exceeds the clip duration {duration} s",
            segs.end()
        )));
    }
    let sr = clip.sample_rate();
    let n = clip.len();
    let mut samples = Vec::with_capacity(seconds_to_index(segs.total_duration(), sr) + segs.len());
    for &(s, e) in segs.intervals() {
        let a = seconds_to_index(s, sr).min(n);
        let b = seconds_to_index(e, sr).min(n);
        samples.extend_from_slice(&clip.samples()[a..b.max(a)]);
    }
    if samples.is_empty() {
        return Err(Error::Contract("segments cover no whole sample".into()));
    }
    AudioClip::new(samples, sr)
}

/// Resample the time axis onto `t_target` columns; identity when the frame
/// count already matches.
pub fn fit_to_frames(spec: &MelSpectrogram, t_target: usize) -> Result<MelSpectrogram> {
    if t_target == 0 {
        return Err(Error::Config("target frame count must be positive".into()));
    }
    if spec.frames() == t_target {
        return Ok(spec.clone());
    }
    let w = interp_weights(spec.frames(), t_target);
    let v = &spec.values;
    let values = Matrix::from_fn(v.rows(), t_target, |r, j| {
        let (i0, i1, t) = w[j];
        if t == 0.0 {
            v.get(r, i0)
        } else {
            v.get(r, i0) + t * (v.get(r, i1) - v.get(r, i0))
        }
    });
    Ok(MelSpectrogram {
        values,
        hop_ms: spec.hop_ms,
    })
}

/// A pass input together with the bookkeeping needed to map its frames back
/// to the original clip.
#[derive(Clone, Debug)]
pub struct PlaybackInput {
    /// Fitted spectrogram fed to the encoder.
    pub spec: MelSpectrogram,
    /// Frame count before fitting.
    pub source_frames: usize,
    /// Analysis hop of this pass.
    pub hop_ms: f64,
    /// The segments of the original clip this pass listens to.
    pub segments: SegmentSet,
    /// Duration of the concatenated audio.
    pub duration_s: f64,
}

impl PlaybackInput {
    /// Seconds of concatenated audio per fitted frame, so that fitted frame
    /// `t` starts at `t * frame_period_s` (frame centres line up with the
    /// unfitted analysis frames).
    pub fn frame_period_ms(&self) -> f64 {
        let fitted = self.spec.frames();
        if fitted <= 1 || self.source_frames <= 1 {
            return self.hop_ms * self.source_frames as f64 / fitted.max(1) as f64;
        }
        self.hop_ms * (self.source_frames - 1) as f64 / (fitted - 1) as f64
    }
}

/// Replay `segs` of `clip` at the hop of `pass_index` and fit the result to
/// `t_target` frames.
pub fn prepare_playback(
    analyzer: &MelAnalyzer,
    clip: &AudioClip,
    segs: &SegmentSet,
    pass_index: usize,
    cfg: &FrontendConfig,
    t_target: usize,
) -> Result<PlaybackInput> {
    if pass_index == 0 {
        return Err(Error::Contract("pass indices are 1-based".into()));
    }
    let hop_ms = cfg.hop_ms(pass_index);
    let audio = if segs.intervals() == [(0.0, clip.duration_s())] {
        clip.clone()
    } else {
        extract_segments(clip, segs)?
    };
    let raw = analyzer.spectrogram(&audio, hop_ms)?;
    let source_frames = raw.frames();
    Ok(PlaybackInput {
        spec: fit_to_frames(&raw, t_target)?,
        source_frames,
        hop_ms,
        segments: segs.clone(),
        duration_s: audio.duration_s(),
    })
}

/// Pass input for `pass_index`: the selected audio analysed at
/// `base_hop - (pass_index - 1) * decrement`, fitted to the frame count of
/// the full clip at the base hop.
pub fn make_playback_input(
    clip: &AudioClip,
    segs: &SegmentSet,
    pass_index: usize,
    cfg: &FrontendConfig,
) -> Result<MelSpectrogram> {
    cfg.validate(pass_index)?;
    let clip = resample(clip, cfg.sample_rate)?;
    let analyzer = MelAnalyzer::from_config(cfg)?;
    let t_target = analyzer.frame_count(clip.len(), cfg.base_hop_ms)?;
    Ok(prepare_playback(&analyzer, &clip, segs, pass_index, cfg, t_target)?.spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, secs: f64, sr: u32) -> AudioClip {
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * core::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        AudioClip::new(s, sr).unwrap()
    }

    #[test]
    fn clip_validation() {
        assert!(AudioClip::new(vec![], 16_000).is_err());
        assert!(AudioClip::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(AudioClip::new(vec![1.5], 16_000).is_err());
        assert!(AudioClip::new(vec![0.1], 0).is_err());
    }

    #[test]
    fn resample_cases() {
        let c = sine(440.0, 0.5, 0.01, 16_000);
        assert_eq!(resample(&c, 16_000).unwrap(), c);
        let ramp = AudioClip::new(vec![0.0, 0.1, 0.2, 0.3], 32_000).unwrap();
        let down = resample(&ramp, 16_000).unwrap();
        assert_eq!(down.samples(), &[0.0, 0.2]);
        let flat = AudioClip::new(vec![0.3; 80], 8_000).unwrap();
        let up = resample(&flat, 16_000).unwrap();
        assert_eq!(up.len(), 160);
        assert!(up.samples().iter().all(|&s| (s - 0.3).abs() < 1e-15));
    }

    #[test]
    fn ten_second_clip_shapes() {
        let clip = AudioClip::new(vec![0.0; 160_000], 16_000).unwrap();
        let s10 = log_mel_spectrogram(&clip, 10.0, 128, 25.0, 512).unwrap();
        assert_eq!(s10.values.shape(), [128, 1000]);
        let s9 = log_mel_spectrogram(&clip, 9.0, 128, 25.0, 512).unwrap();
        assert_eq!(s9.values.shape(), [128, 160_000usize.div_ceil(144)]);
        assert_eq!(s9.frames(), 1112);
        let floor = (1e-6f64).ln();
        assert!(s10.values.as_slice().iter().all(|&v| v == floor));
    }

    #[test]
    fn sub_sample_hop_is_a_configuration_error() {
        let clip = AudioClip::new(vec![0.0; 1600], 16_000).unwrap();
        let err = log_mel_spectrogram(&clip, 0.05, 32, 25.0, 512).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn pure_tone_peaks_in_its_filter() {
        let sr = 16_000;
        let n_mels = 40;
        let edges = mel_band_edges(n_mels, sr);
        let analyzer = MelAnalyzer::new(sr, n_mels, 25.0, 512, 1e-6).unwrap();
        for m in [8usize, 15, 22, 30] {
            let centre = edges[m].1;
            // Brute-force: the filter with the largest response at the tone.
            let expected = (0..n_mels)
                .max_by(|&a, &b| triangle(edges[a], centre).total_cmp(&triangle(edges[b], centre)))
                .unwrap();
            assert_eq!(expected, m);
            let spec = analyzer.spectrogram(&sine(centre, 0.5, 0.2, sr), 10.0).unwrap();
            // Edge frames see reflect padding, which breaks the tone's phase.
            for t in 2..spec.frames() - 2 {
                let col = spec.values.column(t);
                let arg = (0..n_mels).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
                assert_eq!(arg, expected, "tone {centre} Hz frame {t}");
            }
        }
    }

    #[test]
    fn extract_segments_cases() {
        let sr = 16_000;
        let clip = AudioClip::new((0..32_000).map(|i| (i as f64 / 32_000.0) - 0.5).collect(), sr).unwrap();
        let whole = extract_segments(&clip, &SegmentSet::full(2.0)).unwrap();
        assert_eq!(whole, clip);
        let parts = SegmentSet::new(vec![(0.0, 0.5), (1.5, 2.0)]).unwrap();
        let out = extract_segments(&clip, &parts).unwrap();
        assert_eq!(out.len(), 16_000);
        assert_eq!(&out.samples()[..8_000], &clip.samples()[..8_000]);
        assert_eq!(&out.samples()[8_000..], &clip.samples()[24_000..]);
        let adjacent = SegmentSet::new(vec![(0.0, 1.0), (1.0, 2.0)]).unwrap();
        assert_eq!(extract_segments(&clip, &adjacent).unwrap(), clip);
        let beyond = SegmentSet::new(vec![(1.0, 2.5)]).unwrap();
        assert!(extract_segments(&clip, &beyond).is_err());
    }

    #[test]
    fn segment_set_rejects_bad_intervals() {
        assert!(SegmentSet::new(vec![]).is_err());
        assert!(SegmentSet::new(vec![(0.5, 0.5)]).is_err());
        assert!(SegmentSet::new(vec![(0.0, 1.0), (0.5, 2.0)]).is_err());
        assert!(SegmentSet::new(vec![(-0.1, 1.0)]).is_err());
    }

    #[test]
    fn fit_to_frames_cases() {
        let spec = MelSpectrogram {
            values: Matrix::from_fn(4, 2, |r, c| if c == 0 { r as f64 } else { 10.0 + r as f64 }),
            hop_ms: 10.0,
        };
        assert_eq!(fit_to_frames(&spec, 2).unwrap(), spec);
        let out = fit_to_frames(&spec, 3).unwrap();
        for r in 0..4 {
            assert_eq!(out.values.row(r), &[r as f64, 5.0 + r as f64, 10.0 + r as f64]);
        }
    }

    #[test]
    fn map_local_splits_across_boundaries() {
        let src = SegmentSet::new(vec![(1.0, 1.5), (3.0, 4.0)]).unwrap();
        let local = SegmentSet::new(vec![(0.25, 0.75)]).unwrap();
        let mapped = src.map_local(&local).unwrap();
        assert_eq!(mapped.intervals(), &[(1.25, 1.5), (3.0, 3.25)]);
        let whole = src.map_local(&SegmentSet::full(1.5)).unwrap();
        assert_eq!(whole, src);
    }

    #[test]
    fn playback_schedule() {
        let cfg = FrontendConfig {
            n_mels: 32,
            ..FrontendConfig::default()
        };
        let clip = sine(300.0, 0.3, 2.0, 16_000);
        let p1 = make_playback_input(&clip, &SegmentSet::full(2.0), 1, &cfg).unwrap();
        assert_eq!(p1.values.shape(), [32, 200]);
        assert_eq!(p1.hop_ms, 10.0);
        let segs = SegmentSet::new(vec![(0.2, 0.8), (1.0, 1.4)]).unwrap();
        let p2 = make_playback_input(&clip, &segs, 2, &cfg).unwrap();
        assert_eq!(p2.values.shape(), [32, 200]);
        assert_eq!(p2.hop_ms, 9.0);
        let p4 = make_playback_input(&clip, &segs, 4, &cfg).unwrap();
        assert_eq!(p4.hop_ms, 7.0);
    }
}
