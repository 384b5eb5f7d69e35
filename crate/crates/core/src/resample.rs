//! Band-limited sample-rate conversion.
//!
//! Windowed-sinc interpolation with a Kaiser window (beta = 8). The kernel
//! spans 32 periods of the lower of the two rates on each side of the
//! output instant. For rational ratios with a small reduced numerator the
//! kernels are tabulated per phase; otherwise they are evaluated per output
//! sample. Each kernel is normalized to unit DC gain.

use crate::error::{Error, Result};
use crate::signal::Signal;

const KAISER_BETA: f64 = 8.0;
const HALF_TAPS: f64 = 32.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
const MAX_TABLE_PHASES: u64 = 4096;

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// One interpolation kernel: the first input offset relative to the
/// integer part of the output position, followed by normalized weights.
struct Kernel {
    first: i64,
    weights: Vec<f64>,
}

struct KernelDesign {
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl KernelDesign {
    fn new(source: u32, target: u32) -> Self {
        let down = (target as f64 / source as f64).min(1.0);
        Self {
            cutoff: 0.5 * down * ROLLOFF,
            half_width: HALF_TAPS / down,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    /// Kernel for an output instant lying `frac` in `[0, 1)` input samples
    /// past an integer input index.
    fn kernel(&self, frac: f64) -> Kernel {
        let first = (frac - self.half_width).ceil() as i64;
        let last = (frac + self.half_width).floor() as i64;
        let mut weights: Vec<f64> = (first..=last)
            .map(|i| {
                let d = i as f64 - frac;
                let u = d / self.half_width;
                let win = if u.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / self.i0_beta
                };
                2.0 * self.cutoff * sinc(2.0 * self.cutoff * d) * win
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Kernel { first, weights }
    }
}

/// Converts `sig` to `target_rate`.
///
/// The output length is `round(len * target / source)`. Equal rates return
/// an identical copy.
pub fn resample(sig: &Signal, target_rate: u32) -> Result<Signal> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    let source_rate = sig.sample_rate();
    if source_rate == target_rate {
        return Ok(sig.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;
    let out_len = (sig.len() as f64 * target_rate as f64 / source_rate as f64).round() as usize;

    let design = KernelDesign::new(source_rate, target_rate);
    let table: Option<Vec<Kernel>> = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|p| design.kernel(p as f64 / up as f64))
            .collect()
    });

    let x = sig.samples();
    let n_in = x.len() as i64;
    let mut out = Vec::with_capacity(out_len);
    let mut on_the_fly;
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let kernel = match &table {
            Some(t) => &t[phase as usize],
            None => {
                on_the_fly = design.kernel(phase as f64 / up as f64);
                &on_the_fly
            }
        };
        let start = base + kernel.first;
        let acc: f64 = kernel
            .weights
            .iter()
            .enumerate()
            .filter_map(|(j, w)| {
                let i = start + j as i64;
                (0..n_in).contains(&i).then(|| w * x[i as usize])
            })
            .sum();
        out.push(acc);
    }
    Ok(Signal::from_parts(out, target_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(8.0) - 427.564_115_721_804_7).abs() < 1e-9);
    }

    #[test]
    fn identity_at_equal_rates() {
        let s = Signal::new(vec![0.1, -0.2, 0.3], 16_000).unwrap();
        assert_eq!(resample(&s, 16_000).unwrap(), s);
    }

    #[test]
    fn output_length_rounds() {
        let s = Signal::zeros(1001, 44_100).unwrap();
        let r = resample(&s, 16_000).unwrap();
        assert_eq!(r.len(), (1001.0_f64 * 16_000.0 / 44_100.0).round() as usize);
        assert_eq!(r.sample_rate(), 16_000);
        assert!(resample(&s, 0).is_err());
    }

    #[test]
    fn dc_is_preserved_away_from_edges() {
        let s = Signal::new(vec![0.5; 44_100], 44_100).unwrap();
        let r = resample(&s, 16_000).unwrap();
        let margin = 200;
        for &v in &r.samples()[margin..r.len() - margin] {
            assert!((v - 0.5).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn upsampling_keeps_dc_too() {
        let s = Signal::new(vec![-0.25; 8000], 8000).unwrap();
        let r = resample(&s, 16_000).unwrap();
        assert_eq!(r.len(), 16_000);
        for &v in &r.samples()[100..r.len() - 100] {
            assert!((v + 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn large_phase_count_uses_direct_kernels() {
        // 16001 and 16000 are coprime, so the table path is skipped.
        let s = Signal::new(vec![0.3; 4000], 16_001).unwrap();
        let r = resample(&s, 16_000).unwrap();
        for &v in &r.samples()[100..r.len() - 100] {
            assert!((v - 0.3).abs() < 1e-6);
        }
    }
}
