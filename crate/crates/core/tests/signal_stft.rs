use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unclip::dft::{half_spectrum_energy, RealDft};
use unclip::resample::resample;
use unclip::stft::{istft, stft, StftConfig, Window};
use unclip::wav::{read_wav, write_wav, WavFormat};
use unclip::Signal;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den).sqrt()
}

#[test]
fn stft_reconstructs_random_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let configs = [
        StftConfig::default_hann(),
        StftConfig::new(512, 128, Window::Hann).unwrap(),
        StftConfig::new(256, 256, Window::Rectangular).unwrap(),
    ];
    for i in 0..100 {
        let len = rng.random_range(300..5000);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sig = Signal::new(x, 16_000).unwrap();
        let cfg = configs[i % configs.len()];
        let back = istft(&stft(&sig, cfg)).unwrap();
        assert_eq!(back.len(), sig.len());
        let e = rel_err(sig.samples(), back.samples());
        assert!(e < 1e-10, "signal {i}: relative error {e}");
    }
}

#[test]
fn dft_preserves_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &n in &[16, 256, 1024] {
        let dft = RealDft::new(n);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spec = dft.forward(&x);
        assert!((half_spectrum_energy(&spec, n) - energy).abs() <= 1e-9 * energy);
        assert!(rel_err(&x, &dft.inverse(&spec)) < 1e-12);
    }
}

#[test]
fn non_cola_configuration_is_rejected() {
    assert!(StftConfig::new(1024, 1000, Window::Hann).is_err());
    assert!(StftConfig::new(1024, 256, Window::Hann).unwrap().is_cola());
}

#[test]
fn float_wav_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let x: Vec<f64> = (0..100).map(|n| ((n as f64 * 0.3).sin() * 0.7) as f32 as f64).collect();
    let sig = Signal::new(x, 22_050).unwrap();
    write_wav(&sig, &path, WavFormat::Float32).unwrap();
    assert_eq!(read_wav(&path).unwrap(), sig);
}

#[test]
fn pcm16_round_trip_within_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let sig = Signal::new((0..100).map(|n| (n as f64 * 0.1).cos() * 0.5).collect(), 16_000).unwrap();
    write_wav(&sig, &path, WavFormat::Pcm16).unwrap();
    let back = read_wav(&path).unwrap();
    for (a, b) in sig.samples().iter().zip(back.samples()) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
}

#[test]
fn resampling_preserves_a_low_tone() {
    let x: Vec<f64> = (0..44_100).map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 44_100.0).sin()).collect();
    let y = resample(&Signal::new(x, 44_100).unwrap(), 16_000).unwrap();
    assert_eq!(y.sample_rate(), 16_000);
    assert!((y.len() as i64 - 16_000).abs() <= 1);
    let reference: Vec<f64> = (0..y.len()).map(|n| (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16_000.0).sin()).collect();
    // ignore filter edges
    let mid = 1000..y.len() - 1000;
    assert!(rel_err(&reference[mid.clone()], &y.samples()[mid]) < 1e-2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_round_trip_property(x in prop::collection::vec(-1.0f64..1.0, 1..3000)) {
        let sig = Signal::new(x, 16_000).unwrap();
        let back = istft(&stft(&sig, StftConfig::new(256, 64, Window::Hann).unwrap())).unwrap();
        prop_assert!(rel_err(sig.samples(), back.samples()) < 1e-10 || sig.energy() == 0.0);
    }
}
