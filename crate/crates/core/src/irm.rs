//! Ideal ratio mask oracle.
//!
//! The mask is the linear magnitude ratio between the clean and degraded
//! spectrograms, clamped to `[0, clamp_max]`. Applying it scales each
//! degraded bin while keeping its phase.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::stft::{istft, stft, Spectrogram, StftConfig};

pub const DEFAULT_CLAMP_MAX: f64 = 2.0;
const EPS_NUM: f64 = crate::metrics::EPS_NUM;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpectrogram {
    gains: Array2<f64>,
    clamp_max: f64,
}

impl MaskSpectrogram {
    pub fn gains(&self) -> &Array2<f64> {
        &self.gains
    }

    pub fn clamp_max(&self) -> f64 {
        self.clamp_max
    }

    /// Multiplies each bin of `spec` by its gain; phase is unchanged.
    pub fn apply(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        if spec.bins().dim() != self.gains.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs spectrogram {:?}",
                self.gains.dim(),
                spec.bins().dim()
            )));
        }
        let mut bins = spec.bins().clone();
        Zip::from(&mut bins)
            .and(&self.gains)
            .for_each(|c, &g| *c *= g);
        spec.with_bins(bins)
    }
}

pub fn irm_mask_clamped(
    clean: &Spectrogram,
    degraded: &Spectrogram,
    clamp_max: f64,
) -> Result<MaskSpectrogram> {
    if clean.config() != degraded.config() || clean.bins().dim() != degraded.bins().dim() {
        return Err(Error::ShapeMismatch(format!(
            "clean {:?} vs degraded {:?}",
            clean.bins().dim(),
            degraded.bins().dim()
        )));
    }
    if !(clamp_max > 0.0) {
        return Err(Error::InvalidArgument("clamp_max must be positive".into()));
    }
    let gains = Zip::from(clean.bins())
        .and(degraded.bins())
        .map_collect(|x, y| {
            let ym = y.norm();
            if ym == 0.0 {
                if x.norm() > 0.0 {
                    clamp_max
                } else {
                    0.0
                }
            } else {
                (x.norm() / (ym + EPS_NUM)).clamp(0.0, clamp_max)
            }
        });
    Ok(MaskSpectrogram { gains, clamp_max })
}

pub fn irm_mask(clean: &Spectrogram, degraded: &Spectrogram) -> Result<MaskSpectrogram> {
    irm_mask_clamped(clean, degraded, DEFAULT_CLAMP_MAX)
}

/// Restores `degraded` with the oracle mask computed from `clean`.
pub fn apply_oracle(clean: &Signal, degraded: &Signal, cfg: StftConfig) -> Result<Signal> {
    clean.check_compatible(degraded)?;
    let x = stft(clean, cfg);
    let y = stft(degraded, cfg);
    let mask = irm_mask(&x, &y)?;
    istft(&mask.apply(&y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::Window;
    use realfft::num_complex::Complex64;

    fn spec_from(values: &[Complex64]) -> Spectrogram {
        let cfg = StftConfig::new(4, 4, Window::Rectangular).unwrap();
        // one sample -> two frames of three bins
        let mut bins = Array2::zeros((2, 3));
        for (i, v) in values.iter().enumerate() {
            bins[[i / 3, i % 3]] = *v;
        }
        Spectrogram::new(bins, cfg, 1, 16_000).unwrap()
    }

    #[test]
    fn ratio_examples() {
        let c = |re: f64| Complex64::new(re, 0.0);
        let x = spec_from(&[c(0.5), c(1.0), c(0.3), c(0.0), c(0.0), c(0.2)]);
        let y = spec_from(&[c(1.0), c(1.0), c(0.0), c(0.0), c(1e-3), c(0.05)]);
        let m = irm_mask(&x, &y).unwrap();
        let g = m.gains();
        assert!((g[[0, 0]] - 0.5).abs() < 1e-9);
        assert!((g[[0, 1]] - 1.0).abs() < 1e-9);
        assert_eq!(g[[0, 2]], DEFAULT_CLAMP_MAX);
        assert_eq!(g[[1, 0]], 0.0);
        assert_eq!(g[[1, 1]], 0.0);
        assert_eq!(g[[1, 2]], DEFAULT_CLAMP_MAX);
    }

    #[test]
    fn identity_mask_on_equal_spectrograms() {
        let sig = Signal::new((0..300).map(|k| (k as f64 * 0.13).sin()).collect(), 16_000).unwrap();
        let s = stft(&sig, StftConfig::new(64, 16, Window::Hann).unwrap());
        let m = irm_mask(&s, &s).unwrap();
        for (&g, c) in m.gains().iter().zip(s.bins()) {
            if c.norm() > 1e-3 {
                assert!((g - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn phase_is_kept() {
        let x = spec_from(&[Complex64::new(0.0, 2.0); 6]);
        let y = spec_from(&[Complex64::from_polar(1.0, 0.7); 6]);
        let out = irm_mask(&x, &y).unwrap().apply(&y).unwrap();
        for c in out.bins() {
            assert!((c.arg() - 0.7).abs() < 1e-12);
            assert!((c.norm() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch() {
        let cfg = StftConfig::new(8, 2, Window::Hann).unwrap();
        let a = stft(&Signal::zeros(10, 16_000).unwrap(), cfg);
        let b = stft(&Signal::zeros(20, 16_000).unwrap(), cfg);
        assert!(irm_mask(&a, &b).is_err());
    }

    #[test]
    fn zero_clean_gives_zero_output() {
        let y = Signal::new((0..500).map(|k| (k as f64 * 0.2).cos()).collect(), 16_000).unwrap();
        let x = Signal::zeros(500, 16_000).unwrap();
        let out = apply_oracle(&x, &y, StftConfig::default_hann()).unwrap();
        assert!(out.samples().iter().all(|&v| v == 0.0));
    }
}
