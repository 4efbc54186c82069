//! Configuration records. All of them round-trip through JSON in the CLI.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::SgdConfig;
use crate::{Error, Result};

/// Log-mel front-end. Only the hop, the sample rate and the mel count are
/// fixed by the method; window and FFT size are conventional choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    /// Hop of the first (full clip) pass.
    pub base_hop_ms: f64,
    /// Hop reduction applied at every later pass.
    pub hop_decrement_ms: f64,
    pub n_mels: usize,
    pub win_ms: f64,
    pub n_fft: usize,
    pub log_offset: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            base_hop_ms: 10.0,
            hop_decrement_ms: 1.0,
            n_mels: 128,
            win_ms: 25.0,
            n_fft: 512,
            log_offset: 1e-6,
        }
    }
}

impl FrontendConfig {
    /// Hop of 1-based pass `pass_index`.
    pub fn hop_ms(&self, pass_index: usize) -> f64 {
        self.base_hop_ms - (pass_index.saturating_sub(1)) as f64 * self.hop_decrement_ms
    }

    /// Checks that every hop up to `passes` is at least one sample long.
    pub fn validate(&self, passes: usize) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        let win = crate::dsp::ms_to_samples(self.win_ms, self.sample_rate);
        if !self.n_fft.is_power_of_two() || self.n_fft < 4 || self.n_fft > 4096 {
            return Err(Error::Config(format!("n_fft {} must be a power of two in 4..=4096", self.n_fft)));
        }
        if win == 0 || win > self.n_fft {
            return Err(Error::Config(format!(
                "window of {win} samples must be non-empty and fit in n_fft {}",
                self.n_fft
            )));
        }
        let one_sample_ms = 1000.0 / self.sample_rate as f64;
        for p in 1..=passes.max(1) {
            let hop = self.hop_ms(p);
            if !(hop >= one_sample_ms) {
                return Err(Error::Config(format!(
                    "pass {p} would use a hop of {hop} ms, shorter than one sample ({one_sample_ms} ms)"
                )));
            }
        }
        Ok(())
    }
}

/// Turning a saliency curve into replayed segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Frames strictly above this normalised saliency are selected.
    pub threshold: f64,
    /// Runs separated by fewer unselected frames than this are merged.
    pub merge_gap_frames: usize,
    /// Minimum total selected duration; below it the most salient frames are
    /// taken instead.
    pub min_select_s: f64,
    /// Magnitude floor applied to the uninformative slot before inversion.
    pub inverse_floor: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            merge_gap_frames: 5,
            min_select_s: 0.25,
            inverse_floor: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    #[default]
    SingleLabel,
    MultiLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub frontend: FrontendConfig,
    /// Time frames of every pass input after fitting.
    pub input_frames: usize,
    pub patch_f: usize,
    pub patch_t: usize,
    /// Channel width `C` of encoder and decoder.
    pub width: usize,
    /// Encoder depth `L`.
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Common slot dimension `d`.
    pub slot_dim: usize,
    /// Slot iterations `J`.
    pub slot_iters: usize,
    /// Latent tokens `L_q` of the decoder.
    pub latents: usize,
    pub decoder_heads: usize,
    pub n_classes: usize,
    /// Playbacks `N`; the model runs `N + 1` passes.
    pub n_playbacks: usize,
    /// Rows of the playback embedding table; must cover `N + 1` passes.
    pub max_passes: usize,
    pub label_mode: LabelMode,
    pub selection: SelectionConfig,
}

impl Default for ModelConfig {
    /// Desk-scale configuration: 2 s clips, 32 mels, 16x10 patches, C=64,
    /// L=4, L_q=8, N=2.
    fn default() -> Self {
        Self {
            frontend: FrontendConfig {
                n_mels: 32,
                ..FrontendConfig::default()
            },
            input_frames: 200,
            patch_f: 16,
            patch_t: 10,
            width: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            slot_dim: 64,
            slot_iters: 3,
            latents: 8,
            decoder_heads: 4,
            n_classes: 4,
            n_playbacks: 2,
            max_passes: 4,
            label_mode: LabelMode::SingleLabel,
            selection: SelectionConfig::default(),
        }
    }
}

impl ModelConfig {
    /// 10 s clips at 128 mels and 16x20 patches: 50 temporal tokens, 16 latents.
    pub fn full_geometry() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            input_frames: 1000,
            patch_f: 16,
            patch_t: 20,
            latents: 16,
            n_playbacks: 3,
            max_passes: 4,
            ..Self::default()
        }
    }

    pub fn passes(&self) -> usize {
        self.n_playbacks + 1
    }

    pub fn freq_patches(&self) -> usize {
        self.frontend.n_mels / self.patch_f
    }

    pub fn time_patches(&self) -> usize {
        self.input_frames / self.patch_t
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate(self.passes())?;
        check_patch("frequency", self.frontend.n_mels, self.patch_f)?;
        check_patch("time", self.input_frames, self.patch_t)?;
        for (what, heads) in [("encoder", self.heads), ("decoder", self.decoder_heads)] {
            if heads == 0 || self.width % heads != 0 {
                return Err(Error::Config(format!(
                    "{what}: width {} is not divisible by {heads} heads",
                    self.width
                )));
            }
        }
        if self.slot_dim == 0 || self.slot_iters == 0 || self.latents == 0 || self.n_classes == 0 {
            return Err(Error::Config(
                "slot_dim, slot_iters, latents and n_classes must be positive".into(),
            ));
        }
        if self.max_passes < self.passes() {
            return Err(Error::Config(format!(
                "playback embedding table has {} rows but {} passes are configured",
                self.max_passes,
                self.passes()
            )));
        }
        Ok(())
    }
}

fn check_patch(axis: &str, extent: usize, patch: usize) -> Result<()> {
    if patch == 0 || extent == 0 || extent % patch != 0 {
        let valid: Vec<String> = (1..=extent).filter(|p| extent % p == 0).map(|p| format!("{p}")).collect();
        return Err(Error::Config(format!(
            "{axis} extent {extent} is not divisible by patch size {patch}; valid sizes: {}",
            valid.join(", ")
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Ranking margin.
    pub gamma: f64,
    /// Weight of the classification term of every later pass; the ranking
    /// term gets `1 - beta`.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 0.05, beta: 0.7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "need gamma >= 0 and 0 <= beta <= 1, got gamma={} beta={}",
                self.gamma, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub sgd: SgdConfig,
    /// Beta(alpha, alpha) mixup on waveforms; 0 disables it.
    pub mixup_alpha: f64,
    /// Clip the global gradient norm of every step; 0 disables it.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            epochs: 30,
            batch_size: 16,
            base_lr: 0.01,
            warmup_epochs: 2.5,
            sgd: SgdConfig::default(),
            mixup_alpha: 0.3,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.base_lr >= 0.0) || !(self.warmup_epochs >= 0.0) || !(self.mixup_alpha >= 0.0) {
            return Err(Error::Config("base_lr, warmup_epochs and mixup_alpha must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hop_schedule() {
        let f = FrontendConfig::default();
        let hops: Vec<f64> = (1..=4).map(|p| f.hop_ms(p)).collect();
        assert_eq!(hops, [10.0, 9.0, 8.0, 7.0]);
    }

    #[test]
    fn too_many_passes_fail_at_validation() {
        let cfg = ModelConfig {
            n_playbacks: 10,
            max_passes: 11,
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("pass 11")), "{err}");
    }

    #[test]
    fn playback_table_must_cover_passes() {
        let cfg = ModelConfig {
            n_playbacks: 3,
            max_passes: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bad_patch_lists_valid_sizes() {
        let cfg = ModelConfig {
            patch_t: 7,
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        let Error::Config(msg) = err else { panic!() };
        assert!(msg.contains("valid sizes: 1, 2, 4, 5, 8, 10"), "{msg}");
    }

    #[test]
    fn full_geometry_yields_fifty_temporal_tokens() {
        let cfg = ModelConfig::full_geometry();
        cfg.validate().unwrap();
        assert_eq!(cfg.time_patches(), 50);
        assert_eq!(cfg.freq_patches(), 8);
    }
}
