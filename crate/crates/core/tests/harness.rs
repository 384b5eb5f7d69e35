use std::collections::BTreeSet;

use proptest::prelude::*;
use unclip::corpus::{split, synth_eval_grid, synth_tones, DatasetManifest, Split, SPLIT_RATIOS};
use unclip::harness::{
    quartiles, records_csv, run_eval, summarize, summary_csv, EvalOptions, EvalRecord, Method, MetricName,
};

/// Sort-based reference: the value at fractional rank p(n-1).
fn brute_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (v.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] + (pos - i as f64) * (v[i + 1] - v[i])
}

fn grid_corpus(dir: &std::path::Path, clips: usize, grid: &[f64]) -> DatasetManifest {
    synth_tones(&dir.join("tones"), clips, 21).unwrap();
    let m = synth_eval_grid(&dir.join("tones/clean"), grid, &dir.join("grid"), 16_000).unwrap();
    let m = split(&m, SPLIT_RATIOS, 4).unwrap();
    m.write().unwrap();
    m
}

#[test]
fn eval_is_reproducible_and_covers_only_the_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let m = grid_corpus(dir.path(), 10, &[3.0, 7.0]);
    let opts = EvalOptions {
        methods: vec![Method::Irm],
        ..EvalOptions::default()
    };
    let a = run_eval(&m, &opts).unwrap();
    let b = run_eval(&DatasetManifest::read(dir.path().join("grid")).unwrap(), &opts).unwrap();
    assert_eq!(records_csv(&a.records, false), records_csv(&b.records, false));
    assert_eq!(summary_csv(&a.summary), summary_csv(&b.summary));

    let test_ids: BTreeSet<&str> = m.entries_in(Split::Test).map(|e| e.clip_id.as_str()).collect();
    let seen: BTreeSet<&str> = a.records.iter().map(|r| r.clip_id.as_str()).collect();
    assert_eq!(seen, test_ids);
    assert_eq!(a.records.len(), 2 * m.entries_in(Split::Test).count());

    for r in &a.records {
        match r.method {
            Method::Input => {
                assert!(r.rtf.is_none());
                let entry = m
                    .entries_in(Split::Test)
                    .find(|e| e.clip_id == r.clip_id && e.params.target_sdr == Some(r.condition_db))
                    .unwrap();
                assert!((r.sdr_db - entry.params.target_sdr.unwrap()).abs() <= 0.05);
                assert_eq!(r.sdr_db, entry.params.achieved_sdr.unwrap());
            }
            _ => assert!(r.rtf.unwrap() > 0.0),
        }
    }
}

#[test]
fn summary_quartiles_match_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let m = grid_corpus(dir.path(), 30, &[5.0]);
    let out = run_eval(
        &m,
        &EvalOptions {
            methods: vec![],
            ..EvalOptions::default()
        },
    )
    .unwrap();
    let row = out
        .summary
        .iter()
        .find(|r| r.method == Method::Input && r.metric == MetricName::SiSdr)
        .unwrap();
    let values: Vec<f64> = out.records.iter().map(|r| r.si_sdr_db).collect();
    assert_eq!(row.count, values.len());
    assert_eq!(row.q1, brute_quantile(&values, 0.25));
    assert_eq!(row.median, brute_quantile(&values, 0.5));
    assert_eq!(row.q3, brute_quantile(&values, 0.75));
}

#[test]
fn neural_without_model_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = grid_corpus(dir.path(), 3, &[5.0]);
    let opts = EvalOptions {
        methods: vec![Method::Neural],
        ..EvalOptions::default()
    };
    assert!(run_eval(&m, &opts).is_err());
}

fn record(method: Method, condition_db: f64, clip: usize, v: f64) -> EvalRecord {
    EvalRecord {
        method,
        effect: None,
        condition_db,
        clip_id: format!("c{clip}"),
        si_sdr_db: v,
        sdr_db: -v,
        rtf: None,
    }
}

proptest! {
    #[test]
    fn quartiles_match_sort_based_reference(values in prop::collection::vec(-50.0f64..50.0, 1..60)) {
        let (q1, median, q3) = quartiles(&values).unwrap();
        prop_assert_eq!(q1, brute_quantile(&values, 0.25));
        prop_assert_eq!(median, brute_quantile(&values, 0.5));
        prop_assert_eq!(q3, brute_quantile(&values, 0.75));
        prop_assert!(q1 <= median && median <= q3);
    }

    #[test]
    fn summary_rows_are_ordered_and_consistent(values in prop::collection::vec((0usize..3, -20.0f64..20.0), 1..40)) {
        let methods = [Method::Input, Method::Aspade, Method::Irm];
        let records: Vec<EvalRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &(m, v))| record(methods[m], (i % 2) as f64, i, v))
            .collect();
        let rows = summarize(&records);
        for w in rows.windows(2) {
            prop_assert!((w[0].method, w[0].condition_db) <= (w[1].method, w[1].condition_db));
        }
        let total: usize = rows.iter().filter(|r| r.metric == MetricName::Sdr).map(|r| r.count).sum();
        prop_assert_eq!(total, records.len());
        for r in &rows {
            prop_assert!(r.count >= 1 && r.q1 <= r.median && r.median <= r.q3);
        }
    }
}
