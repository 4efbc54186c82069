//! Mixup on waveforms and targets.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dsp::AudioClip;
use crate::loss::Target;
use crate::{Error, Result};

/// `lambda ~ Beta(alpha, alpha)`; `alpha = 0` disables mixing (`lambda = 1`).
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if alpha == 0.0 {
        return Ok(1.0);
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(alloc::format!("mixup alpha {alpha}: {e}")))?;
    Ok(beta.sample(rng))
}

/// `lambda a + (1 - lambda) b` on samples of equal length and rate.
pub fn mix_clips(a: &AudioClip, b: &AudioClip, lambda: f64) -> Result<AudioClip> {
    if a.len() != b.len() || a.sample_rate() != b.sample_rate() {
        return Err(Error::Contract(alloc::format!(
            "mixup needs clips of equal length and rate ({} @ {} Hz vs {} @ {} Hz)",
            a.len(),
            a.sample_rate(),
            b.len(),
            b.sample_rate()
        )));
    }
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    let samples = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (lambda * x + (1.0 - lambda) * y).clamp(-1.0, 1.0))
        .collect();
    AudioClip::new(samples, a.sample_rate())
}

pub fn mix_targets(a: &Target, b: &Target, lambda: f64) -> Result<Target> {
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect() };
    match (a, b) {
        (Target::Single(x), Target::Single(y)) if x.len() == y.len() => Ok(Target::Single(mix(x, y))),
        (Target::Multi(x), Target::Multi(y)) if x.len() == y.len() => Ok(Target::Multi(mix(x, y))),
        _ => Err(Error::Contract("mixup targets differ in mode or class count".into())),
    }
}

/// Mix every item with `batch[partner[i]]` using one shared `lambda`.
pub fn mixup(batch: &[(AudioClip, Target)], lambda: f64, partner: &[usize]) -> Result<Vec<(AudioClip, Target)>> {
    if partner.len() != batch.len() || partner.iter().any(|&p| p >= batch.len()) {
        return Err(Error::Contract("mixup partner list does not index the batch".into()));
    }
    batch
        .iter()
        .zip(partner)
        .map(|((clip, target), &j)| {
            let (other_clip, other_target) = &batch[j];
            Ok((mix_clips(clip, other_clip, lambda)?, mix_targets(target, other_target, lambda)?))
        })
        .collect()
}
