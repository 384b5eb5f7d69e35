//! Orthonormally scaled real DFT on fixed-size frames.

use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

/// Forward and inverse real DFT of one frame length, scaled by `1/sqrt(n)`
/// in both directions so the pair is unitary on the full spectrum.
///
/// Spectra are stored as the `n/2 + 1` non-negative frequency bins; the
/// negative half is implied by conjugate symmetry.
#[derive(Clone)]
pub struct RealDft {
    len: usize,
    scale: f64,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for RealDft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealDft").field("len", &self.len).finish()
    }
}

impl RealDft {
    /// `len` must be even and nonzero.
    pub fn new(len: usize) -> Self {
        assert!(len >= 2 && len % 2 == 0, "frame length must be even");
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            len,
            scale: 1.0 / (len as f64).sqrt(),
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// Analysis: `frame` (length `len`) into `out` (length `bins()`).
    pub fn forward_into(&self, frame: &[f64], out: &mut [Complex64]) {
        let mut buf = frame.to_vec();
        self.forward
            .process(&mut buf, out)
            .expect("buffer sizes match the plan");
        out.iter_mut().for_each(|c| *c *= self.scale);
    }

    pub fn forward(&self, frame: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.bins()];
        self.forward_into(frame, &mut out);
        out
    }

    /// Synthesis, taking the real part of the Hermitian extension of `spec`.
    /// Imaginary parts at DC and Nyquist are discarded.
    pub fn inverse_into(&self, spec: &[Complex64], out: &mut [f64]) {
        let mut buf = spec.to_vec();
        buf[0].im = 0.0;
        let last = buf.len() - 1;
        buf[last].im = 0.0;
        self.inverse
            .process(&mut buf, out)
            .expect("buffer sizes match the plan");
        out.iter_mut().for_each(|v| *v *= self.scale);
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.inverse_into(spec, &mut out);
        out
    }
}

/// Multiplicity of half-spectrum bin `k` in the full spectrum of a real
/// frame of `len` samples: 1 for DC and Nyquist, 2 otherwise.
pub fn bin_multiplicity(k: usize, len: usize) -> f64 {
    if k == 0 || k == len / 2 {
        1.0
    } else {
        2.0
    }
}

/// Full-spectrum energy of a half spectrum.
pub fn half_spectrum_energy(spec: &[Complex64], len: usize) -> f64 {
    spec.iter()
        .enumerate()
        .map(|(k, c)| bin_multiplicity(k, len) * c.norm_sqr())
        .sum()
}
