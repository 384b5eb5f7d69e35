use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use unclip::neural::{save_model, ModelParams, ModelSpec};
use unclip::wav::read_wav;

fn unclip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unclip"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a few clean tones and returns the path of the first one.
fn tones(dir: &Path, count: usize) -> PathBuf {
    let out = dir.join("tones");
    let r = unclip(&["--seed", "5", "corpus", "tones", "--out", s(&out), "--count", &count.to_string()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    out.join("clean/tone_000.wav")
}

#[test]
fn fx_dry_blend_is_identity_and_echoes_spec() {
    let dir = tempfile::tempdir().unwrap();
    let input = tones(dir.path(), 1);
    let out = dir.path().join("out.wav");
    let r = unclip(&["fx", "--effect", "hardclip", "--gain-db", "0", "--alpha", "0", s(&input), s(&out)]);
    assert!(r.status.success());
    assert_eq!(read_wav(&out).unwrap(), read_wav(&input).unwrap());
    let spec: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(spec["kind"], "hardclip");
    assert_eq!(spec["wet_weight"], 0.0);
}

#[test]
fn fx_high_gain_hard_clip_peaks_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = tones(dir.path(), 1);
    let out = dir.path().join("out.wav");
    let r = unclip(&["fx", "--effect", "hardclip", "--gain-db", "45", s(&input), s(&out)]);
    assert!(r.status.success());
    assert_eq!(read_wav(&out).unwrap().peak(), 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.wav");
    let missing = dir.path().join("missing.wav");
    let r = unclip(&["fx", "--effect", "tanh", "--gain-db", "6", s(&missing), s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");

    let r = unclip(&["fx", "--effect", "fuzz", "--gain-db", "6", s(&missing), s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = unclip(&["fx", "--effect", "tanh", "--gain-db", "6", "--alpha", "1.5", s(&missing), s(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let input = tones(dir.path(), 1);
    let r = unclip(&["declip", "--method", "irm", s(&input), s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = unclip(&["declip", "--method", "neural", s(&input), s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    let r = unclip(&["corpus", "split", s(&dir.path().join("tones")), "--ratios", "0.5,0.5"]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(unclip(&["--help"]).status.code(), Some(0));
}

#[test]
fn declip_passes_unclipped_audio_through() {
    let dir = tempfile::tempdir().unwrap();
    let input = tones(dir.path(), 1);
    let out = dir.path().join("out.wav");
    let r = unclip(&["declip", "--method", "aspade", s(&input), s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(read_wav(&out).unwrap(), read_wav(&input).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("out.wav.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "aspade");
    assert_eq!(report["solver"]["clipped_samples"], 0);
    assert!(report["rtf"].as_f64().unwrap() > 0.0);
}

#[test]
fn declip_irm_with_own_reference_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let input = tones(dir.path(), 1);
    let out = dir.path().join("out.wav");
    let r = unclip(&["declip", "--method", "irm", "--reference", s(&input), s(&input), s(&out)]);
    assert!(r.status.success());
    let x = read_wav(&input).unwrap();
    let y = read_wav(&out).unwrap();
    let err: f64 = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err <= 1e-6 * x.energy().sqrt());
}

#[test]
fn declip_with_identity_model_returns_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = tones(dir.path(), 1);
    let model = dir.path().join("m.bin");
    save_model(&ModelParams::<f32>::init(&ModelSpec::default(), 1).unwrap(), &model).unwrap();
    let out = dir.path().join("out.wav");
    let report = dir.path().join("r.json");
    let r = unclip(&[
        "declip", "--method", "neural", "--model", s(&model), "--report", s(&report), s(&input), s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(read_wav(&out).unwrap(), read_wav(&input).unwrap());
    assert!(report.is_file());
}

#[test]
fn corpus_and_eval_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    tones(dir.path(), 10);
    let clean = dir.path().join("tones/clean");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let ds = dir.path().join(format!("grid_{run}"));
        let r = unclip(&["--seed", "3", "corpus", "eval-grid", "--clean-dir", s(&clean), "--out", s(&ds), "--grid", "3,7", "--split"]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let ev = dir.path().join(format!("eval_{run}"));
        let r = unclip(&["eval", "--manifest", s(&ds), "--methods", "aspade,irm", "--out-dir", s(&ev)]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let records = fs::read_to_string(ev.join("records.csv")).unwrap();
        let summary = fs::read_to_string(ev.join("summary.csv")).unwrap();
        assert!(ev.join("run_info.json").is_file());
        outputs.push((fs::read(ds.join("manifest.jsonl")).unwrap(), records, summary));
    }
    assert_eq!(outputs[0], outputs[1]);
    let records = &outputs[0].1;
    assert!(records.starts_with("method,effect,condition_db,clip_id,si_sdr_db,sdr_db,rtf,peaq,rnonlin,fad\n"));
    // one test clip, two conditions, three methods
    assert_eq!(records.lines().count(), 1 + 6);
    assert!(outputs[0].2.starts_with("method,condition_db,metric,median,q1,q3,count\n"));
}

#[test]
fn bench_reports_rtf_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let input = tones(dir.path(), 1);
    let r = unclip(&["bench", "rtf", "--method", "irm", "--reference", s(&input), "--repeats", "3", s(&input)]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let rtf = &v["rtf"];
    assert!(rtf["min"].as_f64().unwrap() <= rtf["median"].as_f64().unwrap());
    assert_eq!(rtf["repeats"], 3);
    let r = unclip(&["bench", "rtf", "--method", "aspade", "--repeats", "2", s(&input)]);
    assert_eq!(r.status.code(), Some(2));
}
