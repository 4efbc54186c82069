//! The command implementations behind the `replay` binary.

use std::path::Path;

use replay_core::diagnostics::{gradient_suite, CheckResult};
use replay_core::dsp::resample;
use replay_core::metrics::MetricsReport;
use replay_core::model::PlaybackTrace;
use replay_core::synth::SynthSpec;
use replay_core::train::{evaluate, EpochRecord, TrainOutcome, Trainer};
use replay_core::TrainConfig;
use serde::Serialize;

use crate::checkpoint::{load_model, save_model};
use crate::dataset::{generate_dataset, load_split};
use crate::error::{Error, Result};
use crate::formats::{matrix_csv, read_json, saliency_csv, segments_csv, spectrogram_pgm, write_file, write_json};
use crate::wav::read_wav;

pub fn gen_data(spec_path: &Path, out: &Path) -> Result<()> {
    let spec: SynthSpec = read_json(spec_path)?;
    for w in generate_dataset(&spec, out)? {
        log::warn!("{w}");
    }
    log::info!(
        "wrote {} training and {} validation clips to {}",
        spec.n_train,
        spec.n_val,
        out.display()
    );
    Ok(())
}

/// Path of the per-epoch metrics log written next to a checkpoint.
pub fn metrics_log_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".metrics.csv");
    name.into()
}

fn metrics_header(passes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "lr", "train_loss", "val_top1", "val_top5", "val_map", "val_auc", "val_d_prime"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=passes).map(|p| format!("val_pass{p}_top1")));
    h
}

fn metrics_row(r: &EpochRecord, passes: usize) -> Vec<String> {
    let v = &r.val;
    let mut row = vec![
        r.epoch.to_string(),
        r.lr.to_string(),
        r.train_loss.to_string(),
        v.top1.to_string(),
        v.top5.to_string(),
        v.map.to_string(),
        v.auc.to_string(),
        v.d_prime.to_string(),
    ];
    row.extend((0..passes).map(|p| v.per_pass_top1.get(p).map_or_else(String::new, f64::to_string)));
    row
}

/// Trains on `data/train.csv`, validates on `data/val.csv`, and writes the
/// best checkpoint to `out` together with its config sidecar and the
/// metrics log.
pub fn train(cfg_path: &Path, data: &Path, out: &Path) -> Result<TrainOutcome> {
    let cfg: TrainConfig = read_json(cfg_path)?;
    train_with(&cfg, data, out)
}

pub fn train_with(cfg: &TrainConfig, data: &Path, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let m = &cfg.model;
    let sr = m.frontend.sample_rate;
    let train = load_split(data, "train", m.n_classes, m.label_mode, sr)?;
    let val = load_split(data, "val", m.n_classes, m.label_mode, sr)?;
    log::info!("{} training and {} validation clips", train.len(), val.len());

    let log_path = metrics_log_path(out);
    let mut log = csv::Writer::from_path(&log_path).map_err(Error::csv(&log_path))?;
    let passes = m.passes();
    log.write_record(metrics_header(passes)).map_err(Error::csv(&log_path))?;
    let mut log_err = None;
    let outcome = Trainer::new(cfg)?.fit(&train, &val, |r| {
        if log_err.is_none() {
            log_err = log.write_record(metrics_row(r, passes)).and_then(|_| Ok(log.flush()?)).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::Csv { path: log_path, source: e });
    }
    save_model(out, &outcome.best)?;
    log::info!(
        "best validation top-1 {:.2}% at epoch {}; checkpoint {}",
        outcome.log[outcome.best_epoch - 1].val.top1,
        outcome.best_epoch,
        out.display()
    );
    Ok(outcome)
}

pub fn eval(ckpt: &Path, data: &Path, report: &Path) -> Result<MetricsReport> {
    let model = load_model(ckpt)?;
    let m = model.config();
    let val = load_split(data, "val", m.n_classes, m.label_mode, m.frontend.sample_rate)?;
    let metrics = evaluate(&model, &val)?;
    write_json(report, &metrics)?;
    Ok(metrics)
}

#[derive(Serialize)]
struct PassSummary<'a> {
    pass_index: usize,
    hop_ms: f64,
    source_frames: usize,
    segments: &'a replay_core::dsp::SegmentSet,
    logits: &'a [f64],
    probabilities: &'a [f64],
    next_segments: Option<&'a replay_core::dsp::SegmentSet>,
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    passes: Vec<PassSummary<'a>>,
    probabilities: &'a [f64],
}

/// Runs every pass on one WAV file and dumps, per pass, the spectrogram
/// (PGM, and CSV when asked), the saliency table and the logits.
pub fn inspect(ckpt: &Path, wav: &Path, dump: &Path, spectrogram_csv: bool) -> Result<PlaybackTrace> {
    let model = load_model(ckpt)?;
    let clip = resample(&read_wav(wav)?, model.config().frontend.sample_rate)?;
    let trace = model.trace(&clip)?;
    std::fs::create_dir_all(dump).map_err(Error::io(dump))?;
    for p in &trace.passes {
        let k = p.pass_index;
        write_file(dump.join(format!("spectrogram_pass{k}.pgm")), spectrogram_pgm(&p.spectrogram))?;
        if spectrogram_csv {
            write_file(dump.join(format!("spectrogram_pass{k}.csv")), matrix_csv(&p.spectrogram))?;
        }
        if let (Some(curve), Some(selected)) = (&p.saliency, &p.selected) {
            write_file(
                dump.join(format!("saliency_pass{k}.csv")),
                saliency_csv(curve, selected, p.frame_period_ms, &p.segments),
            )?;
        }
    }
    write_file(
        dump.join("segments.csv"),
        segments_csv(trace.passes.iter().map(|p| (p.pass_index, &p.segments))),
    )?;
    let summary = TraceSummary {
        passes: trace
            .passes
            .iter()
            .map(|p| PassSummary {
                pass_index: p.pass_index,
                hop_ms: p.hop_ms,
                source_frames: p.source_frames,
                segments: &p.segments,
                logits: &p.logits,
                probabilities: &p.probabilities,
                next_segments: p.next_segments.as_ref(),
            })
            .collect(),
        probabilities: &trace.probabilities,
    };
    write_json(dump.join("logits.json"), &summary)?;
    Ok(trace)
}

pub fn gradcheck(full: bool) -> Result<Vec<CheckResult>> {
    Ok(gradient_suite(full)?)
}
