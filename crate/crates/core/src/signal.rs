//! Mono sample sequences and the canonical sample rate.

use crate::error::{Error, Result};

/// Sample rate every pipeline resamples to on ingest.
pub const CANONICAL_RATE: u32 = 16_000;

/// A finite mono signal at a fixed sample rate.
///
/// Samples are stored at 64-bit precision with nominal full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    /// Builds a signal, rejecting non-finite samples and a zero rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSignal("sample rate must be positive".into()));
        }
        if let Some(k) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidSignal(format!(
                "sample {k} is not finite ({})",
                samples[k]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    /// Used internally when the samples are finite by construction.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
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

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Applies `f` to every sample, validating the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Signal> {
        Signal::new(self.samples.iter().map(|&s| f(s)).collect(), self.sample_rate)
    }

    /// Returns `[start, start + len)`, clamped to the signal end.
    pub fn slice(&self, start: usize, len: usize) -> Signal {
        let start = start.min(self.samples.len());
        let end = (start + len).min(self.samples.len());
        Signal::from_parts(self.samples[start..end].to_vec(), self.sample_rate)
    }

    /// Errors unless `other` has the same length and rate.
    pub fn check_compatible(&self, other: &Signal) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::RateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }
}
