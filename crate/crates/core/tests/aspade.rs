use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unclip::aspade::{declip_frame, declip_signal, declip_with_mask, AspadeConfig};
use unclip::corpus::{ToneKind, ToneSpec};
use unclip::dft::RealDft;
use unclip::effects::clip_at_threshold;
use unclip::metrics::{si_sdr, si_sdr_samples, solve_threshold_for_target_sdr};
use unclip::reliability::{detect, detect_auto, Reliability};
use unclip::Signal;

fn on_bin(n: usize, parts: &[(usize, f64, f64)]) -> Vec<f64> {
    (0..n)
        .map(|t| {
            parts
                .iter()
                .map(|&(k, a, phi)| a * (2.0 * PI * k as f64 * t as f64 / n as f64 + phi).cos())
                .sum()
        })
        .collect()
}

/// Threshold that clips the given fraction of samples.
fn threshold_for_loss(x: &[f64], fraction: f64) -> f64 {
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let keep = ((1.0 - fraction) * x.len() as f64).round() as usize;
    0.5 * (mags[keep - 1] + mags[keep])
}

fn tone(i: usize, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ToneSpec::random(ToneKind::for_index(i), &mut rng).render().unwrap()
}

#[test]
fn sparse_frames_are_recovered() {
    let cfg = AspadeConfig::default();
    let n = cfg.frame_len;
    let dft = RealDft::new(n);
    let frames = [
        on_bin(n, &[(37, 0.8, 0.3)]),
        on_bin(n, &[(12, 0.6, 1.1), (29, 0.3, -0.4)]),
    ];
    for x in frames {
        let theta = threshold_for_loss(&x, 0.10);
        let y: Vec<f64> = x.iter().map(|v| v.clamp(-theta, theta)).collect();
        let labels: Vec<Reliability> = y
            .iter()
            .map(|&v| {
                if v >= theta {
                    Reliability::ClippedHigh
                } else if v <= -theta {
                    Reliability::ClippedLow
                } else {
                    Reliability::Reliable
                }
            })
            .collect();
        let lost = labels.iter().filter(|l| **l != Reliability::Reliable).count();
        assert!((lost as f64 / n as f64 - 0.10).abs() < 0.01);
        let out = declip_frame(&y, &labels, theta, &vec![1.0; n], &cfg, &dft).unwrap();
        let score = si_sdr_samples(&x, &out.samples).unwrap().value;
        assert!(score > 40.0, "frame SI-SDR {score}");
    }
}

#[test]
fn output_is_consistent_with_the_observation() {
    let x = tone(0, 3);
    let theta = solve_threshold_for_target_sdr(&x, 5.0).unwrap().theta;
    let y = clip_at_threshold(&x, theta);
    let (out, report) = declip_signal(&y, theta, &AspadeConfig::default()).unwrap();
    let mask = detect(&y, theta).unwrap();
    assert!(report.clipped_samples > 0);
    assert_eq!(report.constraint_violations, 0);
    for ((&o, &v), l) in out.samples().iter().zip(y.samples()).zip(mask.labels()) {
        match l {
            Reliability::Reliable => assert_eq!(o.to_bits(), v.to_bits()),
            Reliability::ClippedHigh => assert!(o >= theta),
            Reliability::ClippedLow => assert!(o <= -theta),
        }
    }
    let gain = si_sdr(&x, &out).unwrap().value - si_sdr(&x, &y).unwrap().value;
    assert!(gain > 10.0, "improvement {gain} dB");
}

#[test]
fn unclipped_input_passes_through() {
    let x = tone(1, 4);
    let mask = detect_auto(&x).unwrap();
    assert_eq!(mask.clipped_count(), 0);
    let (out, report) = declip_with_mask(&x, &mask, &AspadeConfig::default()).unwrap();
    assert_eq!(report.frames_solved, report.frames_total);
    assert_eq!(out, x);
    let skip = AspadeConfig {
        skip_reliable_frames: true,
        ..AspadeConfig::default()
    };
    let (out, report) = declip_with_mask(&x, &mask, &skip).unwrap();
    assert_eq!(report.frames_solved, 0);
    assert_eq!(out, x);
    let (out, _) = declip_signal(&x, x.peak() * 2.0, &AspadeConfig::default()).unwrap();
    assert_eq!(out, x);
}

#[test]
fn frame_skipping_does_not_change_the_output() {
    // quiet second half leaves whole frames unclipped
    let t = tone(2, 6);
    let half = t.len() / 2;
    let quiet = t.samples().iter().enumerate().map(|(i, &v)| if i < half { v } else { 0.1 * v });
    let x = Signal::new(quiet.collect(), t.sample_rate()).unwrap();
    let theta = solve_threshold_for_target_sdr(&x, 3.0).unwrap().theta;
    let y = clip_at_threshold(&x, theta);
    let skip = AspadeConfig {
        skip_reliable_frames: true,
        ..AspadeConfig::default()
    };
    let (full, a) = declip_signal(&y, theta, &AspadeConfig::default()).unwrap();
    let (fast, b) = declip_signal(&y, theta, &skip).unwrap();
    assert_eq!(full, fast);
    assert!(b.frames_solved < a.frames_solved);
}

#[test]
fn auto_detection_finds_hard_clipping() {
    let x = tone(0, 5);
    let y = clip_at_threshold(&x, 0.5 * x.peak());
    let auto = detect_auto(&y).unwrap();
    let explicit = detect(&y, 0.5 * x.peak()).unwrap();
    assert_eq!(auto.labels(), explicit.labels());
}

#[test]
fn invalid_configuration_is_rejected() {
    let y = Signal::new(vec![0.1; 100], 16_000).unwrap();
    let cfg = AspadeConfig {
        hop: 0,
        ..AspadeConfig::default()
    };
    assert!(declip_signal(&y, 0.05, &cfg).is_err());
    assert!(declip_signal(&y, 0.0, &AspadeConfig::default()).is_err());
}
