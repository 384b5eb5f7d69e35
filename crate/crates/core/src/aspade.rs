//! Analysis-sparsity declipping (A-SPADE).
//!
//! Each windowed frame is restored by an ADMM-style alternation between hard
//! thresholding of its orthonormal DFT coefficients and projection onto the
//! clipping-consistent set, with the number of retained coefficients growing
//! on a fixed schedule until the coefficient residual drops below `epsilon`.
//! Frames are recombined by overlap-add and a final projection restores
//! exact consistency with the observation.

use std::time::Instant;

use rayon::prelude::*;
use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft::{half_spectrum_energy, RealDft};
use crate::error::{Error, Result};
use crate::reliability::{detect, project_scaled_in_place, Reliability, ReliabilityMask};
use crate::signal::Signal;
use crate::stft::Window;

/// Window values below this are treated as reliable samples.
const MIN_WINDOW: f64 = 1e-6;
/// Tolerance used when counting constraint violations in the output.
const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspadeConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
    /// Increment of the number of kept coefficients (conjugate pairs).
    pub sparsity_step: usize,
    /// Iterations between increments.
    pub relax_every: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Leave frames without clipped samples untouched instead of solving
    /// them. The output is the same; only the cost changes.
    #[serde(default)]
    pub skip_reliable_frames: bool,
}

impl Default for AspadeConfig {
    fn default() -> Self {
        Self {
            frame_len: 1024,
            hop: 256,
            window: Window::Hann,
            sparsity_step: 1,
            relax_every: 1,
            epsilon: 0.1,
            max_iter: 1024,
            skip_reliable_frames: false,
        }
    }
}

impl AspadeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return bad(format!("frame length {} must be even", self.frame_len));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return bad(format!("hop {} must lie in [1, frame_len]", self.hop));
        }
        if self.sparsity_step == 0 || self.relax_every == 0 || self.max_iter == 0 {
            return bad("sparsity step, relax interval and max_iter must be positive".into());
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon {} must be nonnegative", self.epsilon));
        }
        Ok(())
    }
}

/// Outcome of restoring one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub samples: Vec<f64>,
    pub iterations: usize,
    /// `||A x - z||_2` of the returned iterate.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspadeReport {
    pub config: AspadeConfig,
    pub threshold: f64,
    pub clipped_samples: usize,
    pub frames_total: usize,
    /// Frames run through the solver; all of them unless reliable frames are skipped.
    pub frames_solved: usize,
    pub frame_iterations: Vec<usize>,
    pub frame_residuals: Vec<f64>,
    pub frame_converged: Vec<bool>,
    /// Clipped samples whose magnitude ends up below the threshold by more
    /// than 1e-6.
    pub constraint_violations: usize,
    pub wall_time_s: f64,
    pub rtf: f64,
}

impl AspadeReport {
    pub fn unconverged_frames(&self) -> usize {
        self.frame_converged.iter().filter(|c| !**c).count()
    }
}

/// Keeps the `k` largest-magnitude half-spectrum bins of `coeffs` (each bin
/// standing for a conjugate pair), zeroing the rest. Ties go to the lower
/// frequency index.
pub fn hard_threshold(coeffs: &mut [Complex64], k: usize, order: &mut Vec<usize>) {
    let n = coeffs.len();
    if k >= n {
        return;
    }
    if k == 0 {
        coeffs.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        return;
    }
    order.clear();
    order.extend(0..n);
    let mags: Vec<f64> = coeffs.iter().map(|c| c.norm_sqr()).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        mags[b].total_cmp(&mags[a]).then(a.cmp(&b))
    });
    for &i in &order[k..] {
        coeffs[i] = Complex64::new(0.0, 0.0);
    }
}

/// Restores one frame.
///
/// `y` is the unwindowed observation, `scale` the analysis window, and
/// `labels`/`threshold` its clipping mask. The returned samples estimate the
/// windowed clean frame and are always consistent with the scaled
/// constraints.
pub fn declip_frame(
    y: &[f64],
    labels: &[Reliability],
    threshold: f64,
    scale: &[f64],
    cfg: &AspadeConfig,
    dft: &RealDft,
) -> Result<FrameOutcome> {
    let n = cfg.frame_len;
    if y.len() != n || labels.len() != n || scale.len() != n || dft.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "frame of {} samples, mask {}, window {}, transform {}; expected {n}",
            y.len(),
            labels.len(),
            scale.len(),
            dft.len()
        )));
    }
    let labels: Vec<Reliability> = labels
        .iter()
        .zip(scale)
        .map(|(&l, &w)| if w < MIN_WINDOW { Reliability::Reliable } else { l })
        .collect();

    let bins = dft.bins();
    let zero = Complex64::new(0.0, 0.0);
    let mut x: Vec<f64> = y.iter().zip(scale).map(|(v, w)| v * w).collect();
    let mut ax = dft.forward(&x);
    let mut u = vec![zero; bins];
    let mut z = vec![zero; bins];
    let mut diff = vec![zero; bins];
    let mut order = Vec::with_capacity(bins);
    let mut k = cfg.sparsity_step;

    let mut best = (x.clone(), f64::INFINITY);
    let mut iterations = 0;
    for i in 1..=cfg.max_iter {
        iterations = i;
        for b in 0..bins {
            z[b] = ax[b] + u[b];
        }
        hard_threshold(&mut z, k, &mut order);
        for b in 0..bins {
            diff[b] = z[b] - u[b];
        }
        dft.inverse_into(&diff, &mut x);
        project_scaled_in_place(&mut x, y, &labels, threshold, scale)?;
        dft.forward_into(&x, &mut ax);
        for b in 0..bins {
            diff[b] = ax[b] - z[b];
        }
        let residual = half_spectrum_energy(&diff, n).sqrt();
        if residual < best.1 {
            best = (x.clone(), residual);
        }
        if residual <= cfg.epsilon {
            return Ok(FrameOutcome {
                samples: x,
                iterations,
                residual,
                converged: true,
            });
        }
        for b in 0..bins {
            u[b] += diff[b];
        }
        if i % cfg.relax_every == 0 {
            k += cfg.sparsity_step;
        }
    }
    Ok(FrameOutcome {
        samples: best.0,
        iterations,
        residual: best.1,
        converged: false,
    })
}

/// Declips `y` at the known clip level `theta_c`.
pub fn declip_signal(y: &Signal, theta_c: f64, cfg: &AspadeConfig) -> Result<(Signal, AspadeReport)> {
    let mask = detect(y, theta_c)?;
    declip_with_mask(y, &mask, cfg)
}

/// Declips `y` under a precomputed reliability mask.
pub fn declip_with_mask(
    y: &Signal,
    mask: &ReliabilityMask,
    cfg: &AspadeConfig,
) -> Result<(Signal, AspadeReport)> {
    cfg.validate()?;
    if y.is_empty() {
        return Err(Error::EmptySignal);
    }
    if mask.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: mask.len(),
        });
    }
    let start_time = Instant::now();
    let n = cfg.frame_len;
    let len = y.len();
    let theta = mask.threshold();
    let window = cfg.window.raw(n);
    let dft = RealDft::new(n);

    // Frame m covers [m*hop - (n - hop), m*hop + hop); every sample is
    // covered by n/hop frames. Out-of-range samples are reliable zeros.
    let lead = (n - cfg.hop) as i64;
    let frames = (len + n - cfg.hop).div_ceil(cfg.hop);
    let samples = y.samples();
    let labels = mask.labels();

    let outcomes: Vec<Option<FrameOutcome>> = (0..frames)
        .into_par_iter()
        .map(|m| {
            let start = (m * cfg.hop) as i64 - lead;
            let mut frame_y = vec![0.0; n];
            let mut frame_l = vec![Reliability::Reliable; n];
            let mut any_clipped = false;
            for j in 0..n {
                let i = start + j as i64;
                if (0..len as i64).contains(&i) {
                    frame_y[j] = samples[i as usize];
                    frame_l[j] = labels[i as usize];
                    any_clipped |= frame_l[j] != Reliability::Reliable && window[j] >= MIN_WINDOW;
                }
            }
            if cfg.skip_reliable_frames && !any_clipped {
                return Ok(None);
            }
            declip_frame(&frame_y, &frame_l, theta, &window, cfg, &dft).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut acc = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    let mut report = AspadeReport {
        config: *cfg,
        threshold: theta,
        clipped_samples: mask.clipped_count(),
        frames_total: frames,
        frames_solved: 0,
        frame_iterations: Vec::with_capacity(frames),
        frame_residuals: Vec::with_capacity(frames),
        frame_converged: Vec::with_capacity(frames),
        constraint_violations: 0,
        wall_time_s: 0.0,
        rtf: 0.0,
    };
    for (m, outcome) in outcomes.iter().enumerate() {
        let start = (m * cfg.hop) as i64 - lead;
        match outcome {
            Some(o) => {
                report.frames_solved += 1;
                report.frame_iterations.push(o.iterations);
                report.frame_residuals.push(o.residual);
                report.frame_converged.push(o.converged);
            }
            None => {
                report.frame_iterations.push(0);
                report.frame_residuals.push(0.0);
                report.frame_converged.push(true);
            }
        }
        for j in 0..n {
            let i = start + j as i64;
            if !(0..len as i64).contains(&i) {
                continue;
            }
            let i = i as usize;
            acc[i] += match outcome {
                Some(o) => o.samples[j],
                None => window[j] * samples[i],
            };
            wsum[i] += window[j];
        }
    }
    let mut out: Vec<f64> = acc
        .iter()
        .zip(&wsum)
        .zip(samples)
        .map(|((a, w), s)| if *w > MIN_WINDOW { a / w } else { *s })
        .collect();
    let ones = vec![1.0; len];
    project_scaled_in_place(&mut out, samples, labels, theta, &ones)?;

    report.constraint_violations = out
        .iter()
        .zip(labels)
        .filter(|(v, l)| match l {
            Reliability::Reliable => false,
            Reliability::ClippedHigh => **v < theta - VIOLATION_TOL,
            Reliability::ClippedLow => **v > -theta + VIOLATION_TOL,
        })
        .count();
    report.wall_time_s = start_time.elapsed().as_secs_f64();
    report.rtf = report.wall_time_s / y.duration();
    Ok((Signal::new(out, y.sample_rate())?, report))
}
