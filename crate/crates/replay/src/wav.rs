//! RIFF/WAVE PCM-16 reading and writing.

use std::path::Path;

use replay_core::dsp::AudioClip;

use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn malformed(chunk: &'static str, reason: impl Into<String>) -> Error {
    Error::MalformedWav {
        chunk,
        reason: reason.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    channels: u16,
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(malformed("fmt", format!("{} bytes, need at least 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let block_align = u16_at(body, 12);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 26 {
            return Err(malformed("fmt", "extensible format without a sub-format GUID"));
        }
        tag = u16_at(body, 24);
    }
    if tag != FORMAT_PCM {
        return Err(Error::UnsupportedWav(format!("format tag {tag:#06x}; only integer PCM is read")));
    }
    if bits != 16 {
        return Err(Error::UnsupportedWav(format!("{bits}-bit samples; only 16-bit PCM is read")));
    }
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedWav(format!("{channels} channels; only mono or stereo is read")));
    }
    if sample_rate == 0 {
        return Err(malformed("fmt", "sample rate is zero"));
    }
    if block_align != 2 * channels {
        return Err(malformed(
            "fmt",
            format!("block align {block_align} does not match {channels} channel(s) of 16 bits"),
        ));
    }
    Ok(Format { channels, sample_rate })
}

/// Decodes a WAV byte buffer; stereo is averaged to mono and samples are
/// scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(malformed("RIFF", "file shorter than the 12-byte RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("RIFF", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("RIFF", "form type is not WAVE"));
    }
    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let start = at + 8;
        let end = start.checked_add(size).filter(|&e| e <= bytes.len());
        match id {
            b"fmt " => {
                let end = end.ok_or_else(|| malformed("fmt", "chunk runs past the end of the file"))?;
                format = Some(parse_fmt(&bytes[start..end])?);
            }
            b"data" => {
                let end = end.ok_or_else(|| malformed("data", "chunk runs past the end of the file"))?;
                data = Some(&bytes[start..end]);
            }
            _ => {}
        }
        // Chunks are padded to even length.
        at = start.saturating_add(size).saturating_add(size & 1);
    }
    let format = format.ok_or_else(|| malformed("fmt", "chunk missing"))?;
    let data = data.ok_or_else(|| malformed("data", "chunk missing"))?;
    let frame = 2 * format.channels as usize;
    if data.len() % frame != 0 {
        return Err(malformed(
            "data",
            format!("{} bytes is not a whole number of {frame}-byte frames", data.len()),
        ));
    }
    if data.is_empty() {
        return Err(malformed("data", "no samples"));
    }
    let samples = data
        .chunks_exact(frame)
        .map(|f| {
            let sum: f64 = f
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0)
                .sum();
            sum / format.channels as f64
        })
        .collect();
    Ok(AudioClip::new(samples, format.sample_rate)?)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::MalformedWav { chunk, reason } => Error::MalformedWav {
            chunk,
            reason: format!("{reason} ({})", path.display()),
        },
        Error::UnsupportedWav(m) => Error::UnsupportedWav(format!("{m} ({})", path.display())),
        other => other,
    })
}

/// Nearest PCM-16 code of each sample, saturating at the ends of the range.
pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Mono PCM-16 WAV bytes.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = 2 * clip.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(2 * clip.sample_rate()).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(clip)).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, bits: u16, tag: u16, data: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&tag.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&16_000u32.to_le_bytes());
        b.extend_from_slice(&(16_000 * (bits as u32 / 8) * channels as u32).to_le_bytes());
        b.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn one_second_of_silence() {
        let clip = decode_wav(&header(1, 16, 1, &vec![0u8; 32_000])).unwrap();
        assert_eq!(clip.len(), 16_000);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn opposite_stereo_channels_cancel() {
        let mut data = Vec::new();
        for _ in 0..100 {
            data.extend_from_slice(&16384i16.to_le_bytes());
            data.extend_from_slice(&(-16384i16).to_le_bytes());
        }
        let clip = decode_wav(&header(2, 16, 1, &data)).unwrap();
        assert_eq!(clip.len(), 100);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn scale_is_one_over_32768() {
        let data: Vec<u8> = [-32768i16, 16384, 32767].iter().flat_map(|s| s.to_le_bytes()).collect();
        let clip = decode_wav(&header(1, 16, 1, &data)).unwrap();
        assert_eq!(clip.samples(), &[-1.0, 0.5, 32767.0 / 32768.0]);
    }

    #[test]
    fn errors_name_the_chunk() {
        let good = header(1, 16, 1, &[0, 0, 0, 0]);
        let mut no_riff = good.clone();
        no_riff[0] = b'X';
        assert!(matches!(decode_wav(&no_riff), Err(Error::MalformedWav { chunk: "RIFF", .. })));

        let mut no_fmt = good.clone();
        no_fmt[12..16].copy_from_slice(b"junk");
        assert!(matches!(decode_wav(&no_fmt), Err(Error::MalformedWav { chunk: "fmt", .. })));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(decode_wav(truncated), Err(Error::MalformedWav { chunk: "data", .. })));

        let err = decode_wav(&good[..10]).unwrap_err();
        assert!(err.to_string().contains("RIFF"), "{err}");
    }

    #[test]
    fn unsupported_encodings_are_explicit() {
        let float = header(1, 32, 3, &[0; 8]);
        assert!(matches!(decode_wav(&float), Err(Error::UnsupportedWav(ref m)) if m.contains("0x0003")));
        let pcm8 = header(1, 8, 1, &[0; 8]);
        assert!(matches!(decode_wav(&pcm8), Err(Error::UnsupportedWav(ref m)) if m.contains("8-bit")));
        let surround = header(6, 16, 1, &[0; 24]);
        assert!(matches!(decode_wav(&surround), Err(Error::UnsupportedWav(ref m)) if m.contains("6 channels")));
    }

    #[test]
    fn odd_sized_chunks_are_skipped_with_padding() {
        let mut b = header(1, 16, 1, &[1, 0]);
        // Insert a 3-byte LIST chunk (plus pad byte) before fmt.
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[7, 7, 7, 0]].concat();
        b.splice(12..12, list);
        let clip = decode_wav(&b).unwrap();
        assert_eq!(clip.samples(), &[1.0 / 32768.0]);
    }

    #[test]
    fn round_trip_of_pcm_grid_values() {
        let samples: Vec<f64> = (-50..50).map(|i| i as f64 * 300.0 / 32768.0).collect();
        let clip = AudioClip::new(samples, 22_050).unwrap();
        let back = decode_wav(&encode_wav(&clip)).unwrap();
        assert_eq!(back, clip);
    }
}
