//! RIFF/WAV reading and writing.
//!
//! Reading accepts 16-bit and 24-bit integer PCM and 32-bit float, any
//! channel count; channels are averaged to mono. Integer PCM is scaled by
//! `1 / 2^(bits-1)` so full scale maps to `[-1, 1)`.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::Signal;

/// On-disk sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

const PCM16_SCALE: f64 = 32768.0;

fn wav_err(path: &Path, source: hound::Error) -> Error {
    match source {
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: unsupported WAV encoding", path.display()))
        }
        source => Error::Wav {
            path: path.to_path_buf(),
            source,
        },
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: zero channels",
            path.display()
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) | (SampleFormat::Int, 24) => {
            let scale = 1.0 / (1_i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };

    if interleaved.is_empty() {
        return Err(Error::EmptySignal);
    }
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Signal::new(mono, spec.sample_rate)
}

pub fn write_wav(sig: &Signal, path: impl AsRef<Path>, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if sig.is_empty() {
        return Err(Error::EmptySignal);
    }
    let spec = match format {
        WavFormat::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: sig.sample_rate(),
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavFormat::Float32 => WavSpec {
            channels: 1,
            sample_rate: sig.sample_rate(),
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    match format {
        WavFormat::Pcm16 => {
            for &s in sig.samples() {
                writer
                    .write_sample(quantize_pcm16(s))
                    .map_err(|e| wav_err(path, e))?;
            }
        }
        WavFormat::Float32 => {
            for &s in sig.samples() {
                writer
                    .write_sample(s as f32)
                    .map_err(|e| wav_err(path, e))?;
            }
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

/// Clamps to `[-1, 1 - 2^-15]` and rounds to the nearest 16-bit code.
pub fn quantize_pcm16(s: f64) -> i16 {
    let max = 1.0 - 1.0 / PCM16_SCALE;
    (s.clamp(-1.0, max) * PCM16_SCALE).round() as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_int(path: &Path, channels: u16, bits: u16, data: &[i32]) {
        let spec = WavSpec {
            channels,
            sample_rate: 16_000,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &v in data {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_int(&p, 1, 16, &[16384, 0, -32768, 32767]);
        let s = read_wav(&p).unwrap();
        assert_eq!(s.samples(), &[0.5, 0.0, -1.0, 32767.0 / 32768.0]);
    }

    #[test]
    fn pcm24_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_int(&p, 1, 24, &[1 << 22, -(1 << 23)]);
        let s = read_wav(&p).unwrap();
        assert_eq!(s.samples(), &[0.5, -1.0]);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [0.2_f32, 0.4, -1.0, 0.0] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let s = read_wav(&p).unwrap();
        assert_eq!(s.sample_rate(), 8000);
        assert!((s.samples()[0] - 0.3).abs() < 1e-7);
        assert_eq!(s.samples()[1], -0.5);
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let vals: Vec<f64> = (0..100).map(|k| ((k as f64 * 0.37).sin() as f32) as f64).collect();
        let sig = Signal::new(vals, 16_000).unwrap();
        write_wav(&sig, &p, WavFormat::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), sig);
    }

    #[test]
    fn pcm16_clamps_and_bounds_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.wav");
        let sig = Signal::new(vec![2.0, -3.0, 0.123456, -0.5], 16_000).unwrap();
        write_wav(&sig, &p, WavFormat::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples()[0], 1.0 - 2f64.powi(-15));
        assert_eq!(back.samples()[1], -1.0);
        assert!((back.samples()[2] - 0.123456).abs() <= 2f64.powi(-15));
        assert_eq!(back.samples()[3], -0.5);
    }

    #[test]
    fn refuses_empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        let empty = Signal::new(vec![], 16_000).unwrap();
        assert!(matches!(
            write_wav(&empty, &p, WavFormat::Float32),
            Err(Error::EmptySignal)
        ));
        write_int(&p, 1, 16, &[]);
        assert!(matches!(read_wav(&p), Err(Error::EmptySignal)));
        assert!(matches!(
            read_wav(dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn rejects_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_int(&p, 1, 8, &[1, 2]);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
    }
}
