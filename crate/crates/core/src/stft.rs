//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! The analysis window is rescaled so that its squared overlap sum equals
//! one at the configured hop. Together with the orthonormal frame DFT this
//! makes the analysis operator a Parseval tight frame on fully covered
//! samples, and synthesis is its adjoint followed by a division by the
//! actual squared-window sum (which is one except near the padded edges).
//!
//! Signals are reflect-padded by `frame_len / 2` on both sides before
//! framing and trimmed after synthesis.

use ndarray::Array2;
use realfft::num_complex::Complex64;

use crate::dft::{half_spectrum_energy, RealDft};
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Tolerance on the squared-window overlap sum for a config to count as
/// invertible.
const COLA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Unscaled window of length `n`. Hann is the periodic variant.
    pub fn raw(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| {
                    0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                })
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    frame_len: usize,
    hop: usize,
    window: Window,
}

impl StftConfig {
    /// `frame_len` must be a power of two (at least 2) and `hop` must divide it.
    pub fn new(frame_len: usize, hop: usize, window: Window) -> Result<Self> {
        if frame_len < 2 || !frame_len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "frame length {frame_len} is not a power of two"
            )));
        }
        if hop == 0 || hop > frame_len || frame_len % hop != 0 {
            return Err(Error::InvalidArgument(format!(
                "hop {hop} must divide frame length {frame_len}"
            )));
        }
        Ok(Self {
            frame_len,
            hop,
            window,
        })
    }

    /// Frame 1024, hop 256, Hann.
    pub fn default_hann() -> Self {
        Self::new(1024, 256, Window::Hann).expect("valid constants")
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Squared-window overlap sum at each of the `hop` phases.
    fn overlap_sums(&self, w: &[f64]) -> Vec<f64> {
        (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum())
            .collect()
    }

    /// Whether the squared window overlap-adds to a constant at this hop.
    pub fn is_cola(&self) -> bool {
        let sums = self.overlap_sums(&self.window.raw(self.frame_len));
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        mean > 0.0 && sums.iter().all(|s| (s - mean).abs() <= COLA_TOL * mean)
    }

    /// Analysis window scaled to unit squared overlap sum.
    pub fn analysis_window(&self) -> Vec<f64> {
        let raw = self.window.raw(self.frame_len);
        let sums = self.overlap_sums(&raw);
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        let g = mean.sqrt().recip();
        raw.into_iter().map(|v| v * g).collect()
    }

    pub fn padding(&self) -> usize {
        self.frame_len / 2
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            len.div_ceil(self.hop) + 1
        }
    }
}

/// Complex half spectra of successive frames (frames x bins).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: Array2<Complex64>,
    config: StftConfig,
    origin_len: usize,
    sample_rate: u32,
}

impl Spectrogram {
    pub fn new(
        bins: Array2<Complex64>,
        config: StftConfig,
        origin_len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let expect = (config.frame_count(origin_len), config.bins());
        if bins.dim() != expect {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram shape {:?}, expected {:?}",
                bins.dim(),
                expect
            )));
        }
        Ok(Self {
            bins,
            config,
            origin_len,
            sample_rate,
        })
    }

    pub fn bins(&self) -> &Array2<Complex64> {
        &self.bins
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn origin_len(&self) -> usize {
        self.origin_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frames(&self) -> usize {
        self.bins.nrows()
    }

    /// Replaces the coefficients, keeping the framing.
    pub fn with_bins(&self, bins: Array2<Complex64>) -> Result<Self> {
        Self::new(bins, self.config, self.origin_len, self.sample_rate)
    }

    /// Full-spectrum energy summed over frames.
    pub fn energy(&self) -> f64 {
        let n = self.config.frame_len;
        self.bins
            .rows()
            .into_iter()
            .map(|row| half_spectrum_energy(row.as_slice().expect("standard layout"), n))
            .sum()
    }
}

/// Index into a signal of length `len` extended by mirror reflection
/// about its first and last samples.
fn reflect_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = i.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub fn stft(sig: &Signal, cfg: StftConfig) -> Spectrogram {
    let n = cfg.frame_len;
    let frames = cfg.frame_count(sig.len());
    let pad = cfg.padding() as i64;
    let x = sig.samples();
    let window = cfg.analysis_window();
    let dft = RealDft::new(n);

    let mut bins = Array2::<Complex64>::zeros((frames, cfg.bins()));
    let mut frame = vec![0.0; n];
    let padded_end = x.len() as i64 + pad;
    for (f, mut row) in bins.rows_mut().into_iter().enumerate() {
        let start = (f * cfg.hop) as i64 - pad;
        for (j, v) in frame.iter_mut().enumerate() {
            let i = start + j as i64;
            *v = if i < padded_end {
                x[reflect_index(i, x.len())] * window[j]
            } else {
                0.0
            };
        }
        dft.forward_into(&frame, row.as_slice_mut().expect("standard layout"));
    }
    Spectrogram {
        bins,
        config: cfg,
        origin_len: sig.len(),
        sample_rate: sig.sample_rate(),
    }
}

pub fn istft(spec: &Spectrogram) -> Result<Signal> {
    let cfg = spec.config;
    if !cfg.is_cola() {
        return Err(Error::NonCola(format!(
            "{:?} window, frame {}, hop {}",
            cfg.window, cfg.frame_len, cfg.hop
        )));
    }
    let n = cfg.frame_len;
    let pad = cfg.padding();
    let window = cfg.analysis_window();
    let dft = RealDft::new(n);
    let total = spec.frames().saturating_sub(1) * cfg.hop + n;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut frame = vec![0.0; n];
    for (f, row) in spec.bins.rows().into_iter().enumerate() {
        dft.inverse_into(row.as_slice().expect("standard layout"), &mut frame);
        let start = f * cfg.hop;
        for j in 0..n {
            acc[start + j] += frame[j] * window[j];
            norm[start + j] += window[j] * window[j];
        }
    }
    let out = (0..spec.origin_len)
        .map(|i| {
            let k = i + pad;
            if norm[k] > 1e-10 {
                acc[k] / norm[k]
            } else {
                0.0
            }
        })
        .collect();
    Signal::new(out, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(1000, 250, Window::Hann).is_err());
        assert!(StftConfig::new(1024, 300, Window::Hann).is_err());
        assert!(StftConfig::new(1024, 0, Window::Hann).is_err());
        assert!(StftConfig::new(1024, 2048, Window::Hann).is_err());
        assert!(StftConfig::new(1024, 256, Window::Hann).unwrap().is_cola());
        assert!(StftConfig::new(1024, 128, Window::Hann).unwrap().is_cola());
        assert!(!StftConfig::new(1024, 512, Window::Hann).unwrap().is_cola());
        assert!(StftConfig::new(64, 64, Window::Rectangular).unwrap().is_cola());
    }

    #[test]
    fn non_cola_inverse_is_refused() {
        let cfg = StftConfig::new(64, 32, Window::Hann).unwrap();
        let sig = Signal::new(vec![0.1; 100], 16_000).unwrap();
        assert!(matches!(istft(&stft(&sig, cfg)), Err(Error::NonCola(_))));
    }

    #[test]
    fn reflect_padding_indices() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let sig = Signal::zeros(500, 16_000).unwrap();
        let spec = stft(&sig, StftConfig::default_hann());
        assert!(spec.bins().iter().all(|c| c.norm() == 0.0));
        let back = istft(&spec).unwrap();
        assert_eq!(back.len(), 500);
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn on_bin_sinusoid_single_rectangular_frame() {
        let n = 64;
        let cfg = StftConfig::new(n, n, Window::Rectangular).unwrap();
        let x: Vec<f64> = (0..n)
            .map(|k| (2.0 * std::f64::consts::PI * 5.0 * k as f64 / n as f64).cos())
            .collect();
        let sig = Signal::new(x, 16_000).unwrap();
        let spec = stft(&sig, cfg);
        // Frame 0 spans [-32, 32); the even cosine reflects onto its own
        // periodic continuation.
        let row = spec.bins().row(0);
        let nonzero: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 1e-9)
            .map(|(k, _)| k)
            .collect();
        assert_eq!(nonzero, vec![5]);
    }

    #[test]
    fn empty_signal_round_trip() {
        let sig = Signal::zeros(0, 16_000).unwrap();
        let spec = stft(&sig, StftConfig::default_hann());
        assert_eq!(spec.frames(), 0);
        assert!(istft(&spec).unwrap().is_empty());
    }

    #[test]
    fn shape_is_checked() {
        let cfg = StftConfig::new(8, 2, Window::Hann).unwrap();
        assert!(Spectrogram::new(Array2::zeros((3, 5)), cfg, 4, 8000).is_ok());
        assert!(Spectrogram::new(Array2::zeros((3, 4)), cfg, 4, 8000).is_err());
    }
}
