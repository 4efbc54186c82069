//! Plain-text and image dumps: spectrogram CSV/PGM, saliency and segment
//! tables, JSON helpers.

use std::fmt::Write as _;
use std::path::Path;

use replay_core::dsp::SegmentSet;
use replay_core::Matrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// `x` as C's `%.6e`: six mantissa decimals, signed exponent of at least two
/// digits.
pub fn format_e6(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{x:.6e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Row-major CSV, one matrix row per line, entries in `%.6e`.
pub fn matrix_csv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 14);
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format_e6(m.get(r, c)));
        }
        out.push('\n');
    }
    out
}

/// Binary 8-bit PGM of a spectrogram, min-max scaled, lowest mel band at
/// the bottom. A constant matrix maps to black.
pub fn spectrogram_pgm(m: &Matrix) -> Vec<u8> {
    let data = m.as_slice();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    for r in (0..m.rows()).rev() {
        for c in 0..m.cols() {
            let v = if span > 0.0 { (m.get(r, c) - lo) / span } else { 0.0 };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// Source-clip time of a point on the concatenated timeline of `segments`.
pub fn local_to_source_time(segments: &SegmentSet, local_s: f64) -> f64 {
    let mut offset = 0.0;
    for &(a, b) in segments.intervals() {
        let len = b - a;
        if local_s < offset + len {
            return a + (local_s - offset).max(0.0);
        }
        offset += len;
    }
    segments.end()
}

/// `frame_index,time_s,saliency,selected`; `time_s` is the frame start on
/// the source clip.
pub fn saliency_csv(curve: &[f64], selected: &[bool], frame_period_ms: f64, segments: &SegmentSet) -> String {
    let mut out = String::from("frame_index,time_s,saliency,selected\n");
    for (t, (s, sel)) in curve.iter().zip(selected).enumerate() {
        let time = local_to_source_time(segments, t as f64 * frame_period_ms / 1000.0);
        writeln!(out, "{t},{},{},{}", format_e6(time), format_e6(*s), u8::from(*sel)).expect("write to String");
    }
    out
}

/// `pass,start_s,end_s`, one line per interval.
pub fn segments_csv<'a>(rows: impl IntoIterator<Item = (usize, &'a SegmentSet)>) -> String {
    let mut out = String::from("pass,start_s,end_s\n");
    for (pass, segs) in rows {
        for &(a, b) in segs.intervals() {
            writeln!(out, "{pass},{},{}", format_e6(a), format_e6(b)).expect("write to String");
        }
    }
    out
}

pub fn write_file(path: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    write_file(path, text)
}
