//! Source-to-distortion ratios.
//!
//! Both ratios are reported in dB with a numerical floor of [`EPS_NUM`] in
//! the denominator and are clamped to `±`[`CAP_DB`]. A residual that
//! vanishes relative to the signal (true ratio at or above the cap) reports
//! exactly `+CAP_DB`.

use serde::{Deserialize, Serialize};

use crate::effects::clip_at_threshold;
use crate::error::{Error, Result};
use crate::signal::Signal;

pub const EPS_NUM: f64 = 1e-12;
pub const CAP_DB: f64 = 200.0;
/// Residual-to-signal energy ratio at which the cap applies, `10^(-CAP_DB/10)`.
pub(crate) const CAP_RATIO: f64 = 1e-20;

/// Acceptance window for threshold search results.
pub const TARGET_SDR_TOL_DB: f64 = 0.05;
/// The search keeps halving past the acceptance window down to this.
const SEARCH_TOL_DB: f64 = 0.01;
const MAX_BISECTIONS: usize = 60;
pub const MAX_TARGET_SDR_DB: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    Sdr,
    SiSdr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub kind: MetricKind,
    /// Set when the value is the floor because the estimate is orthogonal to
    /// the reference.
    pub degenerate: bool,
}

impl MetricValue {
    fn new(value: f64, kind: MetricKind) -> Self {
        Self {
            value,
            kind,
            degenerate: false,
        }
    }

    pub fn is_capped(&self) -> bool {
        self.value >= CAP_DB
    }
}

/// `10 log10(signal / (residual + eps))` clamped to the caps.
pub fn ratio_db(signal_energy: f64, residual_energy: f64) -> f64 {
    if residual_energy <= CAP_RATIO * signal_energy {
        return CAP_DB;
    }
    (10.0 * (signal_energy / (residual_energy + EPS_NUM)).log10()).clamp(-CAP_DB, CAP_DB)
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: estimate.len(),
        });
    }
    let energy: f64 = reference.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(energy)
}

/// Plain SDR over sample slices.
pub fn sdr_samples(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let energy = check_pair(reference, estimate)?;
    let residual: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(x, e)| (x - e) * (x - e))
        .sum();
    Ok(ratio_db(energy, residual))
}

pub fn sdr(reference: &Signal, estimate: &Signal) -> Result<MetricValue> {
    reference.check_compatible(estimate)?;
    Ok(MetricValue::new(
        sdr_samples(reference.samples(), estimate.samples())?,
        MetricKind::Sdr,
    ))
}

/// Scale-invariant SDR over sample slices.
pub fn si_sdr_samples(reference: &[f64], estimate: &[f64]) -> Result<MetricValue> {
    let energy = check_pair(reference, estimate)?;
    let dot: f64 = reference.iter().zip(estimate).map(|(s, e)| s * e).sum();
    if dot == 0.0 {
        return Ok(MetricValue {
            value: -CAP_DB,
            kind: MetricKind::SiSdr,
            degenerate: true,
        });
    }
    let alpha = dot / energy;
    let (target, residual) = reference
        .iter()
        .zip(estimate)
        .fold((0.0, 0.0), |(t, r), (&s, &e)| {
            let st = alpha * s;
            (t + st * st, r + (st - e) * (st - e))
        });
    Ok(MetricValue::new(ratio_db(target, residual), MetricKind::SiSdr))
}

pub fn si_sdr(reference: &Signal, estimate: &Signal) -> Result<MetricValue> {
    reference.check_compatible(estimate)?;
    si_sdr_samples(reference.samples(), estimate.samples())
}

/// Negative mean SDR over a batch of (reference, estimate) pairs.
pub fn batch_sdr_loss<R, E>(refs: &[R], ests: &[E]) -> Result<f64>
where
    R: AsRef<[f64]>,
    E: AsRef<[f64]>,
{
    if refs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if refs.len() != ests.len() {
        return Err(Error::LengthMismatch {
            expected: refs.len(),
            actual: ests.len(),
        });
    }
    let mut total = 0.0;
    for (r, e) in refs.iter().zip(ests) {
        total += sdr_samples(r.as_ref(), e.as_ref())?;
    }
    Ok(-total / refs.len() as f64)
}

/// Result of a threshold search for a target input SDR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSolution {
    pub theta: f64,
    pub achieved_db: f64,
    /// False when the iteration cap was hit before reaching the tolerance.
    pub converged: bool,
    pub iterations: usize,
}

/// Finds a clip threshold `theta` in `(0, max|x|]` such that clipping `x` at
/// `theta` (no gain) yields an SDR within [`TARGET_SDR_TOL_DB`] of `target_db`.
///
/// Targets at or above the cap return `theta = max|x|` (nothing clipped).
pub fn solve_threshold_for_target_sdr(x: &Signal, target_db: f64) -> Result<ThresholdSolution> {
    let peak = x.peak();
    if peak == 0.0 {
        return Err(Error::ZeroReference);
    }
    if target_db >= CAP_DB {
        return Ok(ThresholdSolution {
            theta: peak,
            achieved_db: CAP_DB,
            converged: true,
            iterations: 0,
        });
    }
    if !(target_db > 0.0 && target_db <= MAX_TARGET_SDR_DB) {
        return Err(Error::InvalidArgument(format!(
            "target SDR {target_db} dB outside (0, {MAX_TARGET_SDR_DB}]"
        )));
    }
    let measure = |theta: f64| sdr_samples(x.samples(), clip_at_threshold(x, theta).samples());

    // SDR is nondecreasing in theta: 0 dB at theta -> 0, the cap at the peak.
    let (mut lo, mut hi) = (0.0, peak);
    let mut best = (peak, CAP_DB);
    for it in 1..=MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let achieved = measure(mid)?;
        if (achieved - target_db).abs() < (best.1 - target_db).abs() {
            best = (mid, achieved);
        }
        if (achieved - target_db).abs() <= SEARCH_TOL_DB {
            return Ok(ThresholdSolution {
                theta: mid,
                achieved_db: achieved,
                converged: true,
                iterations: it,
            });
        }
        if achieved < target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdSolution {
        theta: best.0,
        achieved_db: best.1,
        converged: (best.1 - target_db).abs() <= TARGET_SDR_TOL_DB,
        iterations: MAX_BISECTIONS,
    })
}
