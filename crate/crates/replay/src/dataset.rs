//! Dataset directories: `spec.json`, one manifest per split (`train.csv`,
//! `val.csv` with columns `path,label`) and the WAV files they list.
//!
//! Paths in a manifest are relative to the dataset directory. A multi-label
//! row lists its classes separated by `;`.

use std::path::{Path, PathBuf};

use replay_core::dsp::resample;
use replay_core::loss::Target;
use replay_core::synth::{Split, SynthSpec};
use replay_core::train::{Dataset, Example};
use replay_core::LabelMode;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::write_json;
use crate::wav::{read_wav, write_wav};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
}

pub fn manifest_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.csv"))
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    // An empty split still gets its header.
    w.write_record(["path", "label"]).map_err(Error::csv(path))?;
    for row in rows {
        w.write_record([&row.path, &row.label]).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::csv(path))?;
    let headers = r.headers().map_err(Error::csv(path))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
        return Err(Error::Manifest {
            path: path.into(),
            reason: format!("expected header path,label, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::csv(path))).collect()
}

/// Writes the synthetic dataset described by `spec` under `out`; returns the
/// generator's warnings.
pub fn generate_dataset(spec: &SynthSpec, out: &Path) -> Result<Vec<String>> {
    let warnings = spec.validate()?;
    std::fs::create_dir_all(out).map_err(Error::io(out))?;
    write_json(out.join("spec.json"), spec)?;
    for split in [Split::Train, Split::Val] {
        let name = split.name();
        let wav_dir = out.join(name);
        std::fs::create_dir_all(&wav_dir).map_err(Error::io(&wav_dir))?;
        let mut rows = Vec::with_capacity(spec.count(split));
        for i in 0..spec.count(split) {
            let ex = spec.example(split, i)?;
            let rel = format!("{name}/{i:06}.wav");
            write_wav(out.join(&rel), &ex.clip)?;
            rows.push(ManifestRow {
                path: rel,
                label: ex.label.to_string(),
            });
        }
        write_manifest(&manifest_path(out, name), &rows)?;
    }
    Ok(warnings)
}

fn parse_target(row: &ManifestRow, n_classes: usize, mode: LabelMode, path: &Path) -> Result<Target> {
    let bad = |reason: String| Error::Manifest {
        path: path.into(),
        reason: format!("{}: {reason}", row.path),
    };
    let mut classes = Vec::new();
    for part in row.label.split(';') {
        let c: usize = part.trim().parse().map_err(|_| bad(format!("label {:?} is not a class index", row.label)))?;
        if c >= n_classes {
            return Err(bad(format!("label {c} outside {n_classes} classes")));
        }
        classes.push(c);
    }
    match (mode, classes.as_slice()) {
        (LabelMode::SingleLabel, [c]) => Ok(Target::one_hot(*c, n_classes)),
        (LabelMode::SingleLabel, _) => Err(bad("several labels in a single-label dataset".into())),
        (LabelMode::MultiLabel, _) => {
            let mut relevance = vec![0.0; n_classes];
            for c in classes {
                relevance[c] = 1.0;
            }
            Ok(Target::Multi(relevance))
        }
    }
}

/// Loads one split, resampling every clip to `sample_rate`.
pub fn load_split(dir: &Path, split: &str, n_classes: usize, mode: LabelMode, sample_rate: u32) -> Result<Dataset> {
    let path = manifest_path(dir, split);
    let rows = read_manifest(&path)?;
    let examples = rows
        .iter()
        .map(|row| {
            let clip = resample(&read_wav(dir.join(&row.path))?, sample_rate)?;
            Ok(Example {
                clip,
                target: parse_target(row, n_classes, mode, &path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { examples, n_classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str) -> ManifestRow {
        ManifestRow {
            path: "a.wav".into(),
            label: label.into(),
        }
    }

    #[test]
    fn labels() {
        let p = Path::new("m.csv");
        assert_eq!(parse_target(&row("2"), 3, LabelMode::SingleLabel, p).unwrap(), Target::one_hot(2, 3));
        assert!(parse_target(&row("3"), 3, LabelMode::SingleLabel, p).is_err());
        assert!(parse_target(&row("0;1"), 3, LabelMode::SingleLabel, p).is_err());
        assert!(parse_target(&row("x"), 3, LabelMode::SingleLabel, p).is_err());
        assert_eq!(
            parse_target(&row("0;2"), 3, LabelMode::MultiLabel, p).unwrap(),
            Target::Multi(vec![1.0, 0.0, 1.0])
        );
    }
}
