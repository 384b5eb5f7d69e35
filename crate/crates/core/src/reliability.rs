//! Clipping-consistency sets.
//!
//! A [`ReliabilityMask`] splits a clipped observation into samples that can
//! be trusted as-is and samples that sat at the positive or negative clip
//! level. [`project`] maps any candidate onto the set of signals consistent
//! with the observation under that mask.

use crate::error::{Error, Result};
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reliability {
    Reliable,
    ClippedHigh,
    ClippedLow,
}

/// Detection slack for observations that went through 16-bit PCM.
pub const PCM16_SLACK: f64 = 1.0 / 4096.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMask {
    labels: Vec<Reliability>,
    threshold: f64,
}

impl ReliabilityMask {
    pub fn new(labels: Vec<Reliability>, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clip threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self { labels, threshold })
    }

    /// Every sample reliable.
    pub fn all_reliable(len: usize, threshold: f64) -> Result<Self> {
        Self::new(vec![Reliability::Reliable; len], threshold)
    }

    pub fn labels(&self) -> &[Reliability] {
        &self.labels
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clipped_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l != Reliability::Reliable)
            .count()
    }

    pub fn slice(&self, start: usize, len: usize) -> ReliabilityMask {
        ReliabilityMask {
            labels: self.labels[start..start + len].to_vec(),
            threshold: self.threshold,
        }
    }
}

/// Labels samples at or beyond `±theta_c * (1 - slack)` as clipped.
pub fn detect_with_slack(y: &Signal, theta_c: f64, slack: f64) -> Result<ReliabilityMask> {
    if !(theta_c > 0.0 && theta_c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be positive, got {theta_c}"
        )));
    }
    if !(0.0..1.0).contains(&slack) {
        return Err(Error::InvalidArgument(format!("slack {slack} out of [0, 1)")));
    }
    let bound = theta_c * (1.0 - slack);
    let labels = y
        .samples()
        .iter()
        .map(|&v| {
            if v >= bound {
                Reliability::ClippedHigh
            } else if v <= -bound {
                Reliability::ClippedLow
            } else {
                Reliability::Reliable
            }
        })
        .collect();
    ReliabilityMask::new(labels, theta_c)
}

/// Exact detection for floating-point observations.
pub fn detect(y: &Signal, theta_c: f64) -> Result<ReliabilityMask> {
    detect_with_slack(y, theta_c, 0.0)
}

/// Threshold fallback when the true clip level is unknown: the peak
/// magnitude of the observation.
pub fn estimate_threshold(y: &Signal) -> Option<f64> {
    let peak = y.peak();
    (peak > 0.0).then_some(peak)
}

/// Projects `v` onto the consistency set of `y` under `mask`, with per-sample
/// weights `scale` applied to both the observation and the threshold.
pub fn project_scaled(v: &[f64], y: &[f64], mask: &ReliabilityMask, scale: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    project_scaled_in_place(&mut out, y, mask.labels(), mask.threshold(), scale)?;
    Ok(out)
}

pub(crate) fn project_scaled_in_place(
    v: &mut [f64],
    y: &[f64],
    labels: &[Reliability],
    threshold: f64,
    scale: &[f64],
) -> Result<()> {
    for (name, len) in [("observation", y.len()), ("mask", labels.len()), ("scale", scale.len())] {
        if len != v.len() {
            return Err(Error::ShapeMismatch(format!(
                "{name} has {len} samples, candidate has {}",
                v.len()
            )));
        }
    }
    for k in 0..v.len() {
        let s = scale[k];
        v[k] = match labels[k] {
            Reliability::Reliable => s * y[k],
            Reliability::ClippedHigh => v[k].max(s * threshold),
            Reliability::ClippedLow => v[k].min(-s * threshold),
        };
    }
    Ok(())
}

/// Detection when the clip level is unknown. The level is taken as the
/// peak magnitude, and the observation only counts as clipped if that level
/// is held for at least two consecutive samples somewhere; otherwise every
/// sample is reliable.
pub fn detect_auto(y: &Signal) -> Result<ReliabilityMask> {
    let Some(theta) = estimate_threshold(y) else {
        return ReliabilityMask::all_reliable(y.len(), 1.0);
    };
    let mask = detect(y, theta)?;
    let plateau = mask
        .labels()
        .windows(2)
        .any(|w| w[0] != Reliability::Reliable && w[0] == w[1]);
    if plateau {
        Ok(mask)
    } else {
        ReliabilityMask::all_reliable(y.len(), theta)
    }
}

/// Unweighted projection (unit scale everywhere).
pub fn project(v: &[f64], y: &Signal, mask: &ReliabilityMask) -> Result<Vec<f64>> {
    let ones = vec![1.0; v.len()];
    project_scaled(v, y.samples(), mask, &ones)
}
