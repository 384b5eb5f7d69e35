//! Evaluation over manifests, box-plot statistics, real-time factors and
//! the superposition study.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aspade::{declip_with_mask, AspadeConfig};
use crate::corpus::{split, synth_gain_grid, DatasetManifest, ManifestEntry, Split, SPLIT_RATIOS};
use crate::effects::{DistortionSpec, EffectKind};
use crate::error::{Error, Result};
use crate::irm::apply_oracle;
use crate::metrics::{sdr, si_sdr};
use crate::neural::{infer, train_with, EpochLog, ModelParams, ModelSpec, TrainConfig, TrainLog};
use crate::reliability::{detect, detect_auto, ReliabilityMask};
use crate::signal::Signal;
use crate::stft::StftConfig;
use crate::wav::read_wav;

pub const RECORDS_HEADER: &str = "method,effect,condition_db,clip_id,si_sdr_db,sdr_db,rtf,peaq,rnonlin,fad";
pub const SUMMARY_HEADER: &str = "method,condition_db,metric,median,q1,q3,count";
pub const STUDY_HEADER: &str = "alpha,method,metric,median,q1,q3,count";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Input,
    Aspade,
    Irm,
    Neural,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Input => "input",
            Method::Aspade => "aspade",
            Method::Irm => "irm",
            Method::Neural => "neural",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Method::Input),
            "aspade" => Ok(Method::Aspade),
            "irm" => Ok(Method::Irm),
            "neural" => Ok(Method::Neural),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    SiSdr,
    Sdr,
}

impl MetricName {
    pub fn name(self) -> &'static str {
        match self {
            MetricName::SiSdr => "si_sdr",
            MetricName::Sdr => "sdr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: Method,
    pub effect: Option<EffectKind>,
    pub condition_db: f64,
    pub clip_id: String,
    pub si_sdr_db: f64,
    pub sdr_db: f64,
    /// Absent for the unprocessed input.
    pub rtf: Option<f64>,
}

impl EvalRecord {
    pub fn metric(&self, m: MetricName) -> f64 {
        match m {
            MetricName::SiSdr => self.si_sdr_db,
            MetricName::Sdr => self.sdr_db,
        }
    }

    fn sort_key(&self, other: &Self) -> Ordering {
        self.method
            .cmp(&other.method)
            .then(self.condition_db.total_cmp(&other.condition_db))
            .then(self.clip_id.cmp(&other.clip_id))
            .then(self.effect.cmp(&other.effect))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub condition_db: f64,
    pub metric: MetricName,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

/// Quantile by linear interpolation between closest ranks (inclusive):
/// position `p * (n - 1)` in the sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(q1, median, q3)` of a nonempty set.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quartiles of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75)))
}

/// One row per (method, condition, metric), in record order.
pub fn summarize(records: &[EvalRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(Method, f64, Vec<&EvalRecord>)> = Vec::new();
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.sort_key(b));
    for r in sorted {
        match groups.last_mut() {
            Some((m, c, g)) if *m == r.method && c.total_cmp(&r.condition_db).is_eq() => g.push(r),
            _ => groups.push((r.method, r.condition_db, vec![r])),
        }
    }
    let mut rows = Vec::new();
    for (method, condition_db, group) in groups {
        for metric in [MetricName::SiSdr, MetricName::Sdr] {
            let values: Vec<f64> = group.iter().map(|r| r.metric(metric)).collect();
            let (q1, median, q3) = quartiles(&values).expect("groups are nonempty");
            rows.push(SummaryRow {
                method,
                condition_db,
                metric,
                median,
                q1,
                q3,
                count: values.len(),
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Records CSV. The `rtf` column is left empty unless `with_rtf` is set so
/// that results stay byte-identical across runs; the quality columns after
/// it are always empty (not implemented).
pub fn records_csv(records: &[EvalRecord], with_rtf: bool) -> String {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},,,",
            r.method,
            r.effect.map(|e| e.name()).unwrap_or(""),
            r.condition_db,
            r.clip_id,
            r.si_sdr_db,
            r.sdr_db,
            if with_rtf { opt(r.rtf) } else { String::new() }
        )
        .expect("string write");
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            r.condition_db,
            r.metric.name(),
            r.median,
            r.q1,
            r.q3,
            r.count
        )
        .expect("string write");
    }
    out
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub methods: Vec<Method>,
    pub aspade: AspadeConfig,
    pub stft: StftConfig,
    pub model: Option<ModelParams<f32>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Input, Method::Aspade, Method::Irm],
            aspade: AspadeConfig::default(),
            stft: StftConfig::default_hann(),
            model: None,
        }
    }
}

/// Clip mask for an entry: the recorded threshold (as stored in a 32-bit
/// file) for pure hard clipping, otherwise detection from the plateau.
pub fn entry_mask(entry: &ManifestEntry, y: &Signal) -> Result<ReliabilityMask> {
    let pure_hard = entry.effect == Some(EffectKind::HardClip) && entry.params.alpha.is_none_or(|a| a == 1.0);
    match entry.params.theta {
        Some(theta) if pure_hard => detect(y, theta as f32 as f64),
        _ => detect_auto(y),
    }
}

/// Runs one restoration method; returns the estimate and its real-time
/// factor (file I/O excluded).
pub fn restore(
    method: Method,
    entry: &ManifestEntry,
    clean: &Signal,
    degraded: &Signal,
    opts: &EvalOptions,
) -> Result<(Signal, Option<f64>)> {
    let start = Instant::now();
    let out = match method {
        Method::Input => return Ok((degraded.clone(), None)),
        Method::Aspade => declip_with_mask(degraded, &entry_mask(entry, degraded)?, &opts.aspade)?.0,
        Method::Irm => apply_oracle(clean, degraded, opts.stft)?,
        Method::Neural => {
            let model = opts
                .model
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("neural evaluation needs a model".into()))?;
            infer(model, degraded)?.0
        }
    };
    let rtf = start.elapsed().as_secs_f64() / degraded.duration();
    Ok((out, Some(rtf)))
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub records: Vec<EvalRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Scores every requested method on every test entry. The unprocessed
/// input is always included.
pub fn run_eval(manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalOutput> {
    let entries: Vec<&ManifestEntry> = manifest
        .entries_in(Split::Test)
        .filter(|e| e.degraded_path.is_some())
        .collect();
    if entries.is_empty() {
        return Err(Error::Dataset("manifest has no degraded test entries".into()));
    }
    let mut methods = opts.methods.clone();
    methods.push(Method::Input);
    methods.sort();
    methods.dedup();
    let loaded: Vec<(Signal, Signal)> = entries
        .par_iter()
        .map(|e| {
            let clean = read_wav(manifest.resolve(&e.clean_path))?;
            let degraded = read_wav(manifest.resolve(e.degraded_path.as_deref().expect("filtered")))?;
            clean.check_compatible(&degraded)?;
            Ok((clean, degraded))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, Method)> = (0..entries.len())
        .flat_map(|i| methods.iter().map(move |&m| (i, m)))
        .collect();
    let mut records: Vec<EvalRecord> = jobs
        .par_iter()
        .map(|&(i, method)| {
            let entry = entries[i];
            let (clean, degraded) = &loaded[i];
            let (est, rtf) = restore(method, entry, clean, degraded, opts)?;
            Ok(EvalRecord {
                method,
                effect: entry.effect,
                condition_db: entry.condition_db().unwrap_or(f64::NAN),
                clip_id: entry.clip_id.clone(),
                si_sdr_db: si_sdr(clean, &est)?.value,
                sdr_db: sdr(clean, &est)?.value,
                rtf,
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.sort_key(b));
    let summary = summarize(&records);
    Ok(EvalOutput { records, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtfStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub repeats: usize,
    pub audio_s: f64,
}

/// Times `process` on `clip` `repeats` times (at least 3); RTF is wall time
/// over audio duration.
pub fn measure_rtf<F>(mut process: F, clip: &Signal, repeats: usize) -> Result<RtfStats>
where
    F: FnMut(&Signal) -> Result<Signal>,
{
    if repeats < 3 {
        return Err(Error::InvalidArgument("at least 3 repeats required".into()));
    }
    if clip.is_empty() {
        return Err(Error::EmptySignal);
    }
    let audio_s = clip.duration();
    let mut rtfs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        process(clip)?;
        rtfs.push(start.elapsed().as_secs_f64() / audio_s);
    }
    rtf_stats(&rtfs, audio_s)
}

/// Summary of already measured real-time factors.
pub fn rtf_stats(rtfs: &[f64], audio_s: f64) -> Result<RtfStats> {
    let (_, median, _) = quartiles(rtfs)?;
    Ok(RtfStats {
        min: rtfs.iter().copied().fold(f64::INFINITY, f64::min),
        median,
        max: rtfs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        repeats: rtfs.len(),
        audio_s,
    })
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub alphas: Vec<f64>,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub seed: u64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub alpha: f64,
    pub method: Method,
    pub metric: MetricName,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub rows: Vec<StudyRow>,
    pub logs: Vec<(f64, TrainLog)>,
    pub manifests: Vec<PathBuf>,
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = format!("{STUDY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.alpha,
            r.method,
            r.metric.name(),
            r.median,
            r.q1,
            r.q3,
            r.count
        )
        .expect("string write");
    }
    out
}

/// For each blend weight: builds a five-gain hard-clip corpus blended with
/// the clean signal, splits it by clip, trains the model with identical
/// seeds and budget, and scores the test split. Runs sequentially.
pub fn superposition_study(
    clean_dir: &Path,
    work_dir: &Path,
    cfg: &StudyConfig,
    mut on_epoch: impl FnMut(f64, &EpochLog),
) -> Result<StudyOutput> {
    if !cfg.alphas.contains(&1.0) || !cfg.alphas.iter().any(|&a| a < 1.0) {
        return Err(Error::InvalidArgument(
            "blend weights must include 1.0 and at least one value below 1".into(),
        ));
    }
    let mut out = StudyOutput {
        rows: Vec::new(),
        logs: Vec::new(),
        manifests: Vec::new(),
    };
    for &alpha in &cfg.alphas {
        let dir = work_dir.join(format!("alpha_{alpha}"));
        let template = DistortionSpec::hard_clip(0.0).with_wet_weight(alpha);
        let grid = synth_gain_grid(clean_dir, &template, &dir, cfg.seed, cfg.sample_rate)?;
        let manifest = split(&grid, SPLIT_RATIOS, cfg.seed)?;
        out.manifests.push(manifest.write()?);
        let (model, log) = train_with(&manifest, &cfg.spec, &cfg.train, |e| on_epoch(alpha, e))?;
        let opts = EvalOptions {
            methods: vec![Method::Neural],
            model: Some(model),
            ..EvalOptions::default()
        };
        let eval = run_eval(&manifest, &opts)?;
        for method in [Method::Input, Method::Neural] {
            for metric in [MetricName::SiSdr, MetricName::Sdr] {
                let values: Vec<f64> = eval
                    .records
                    .iter()
                    .filter(|r| r.method == method)
                    .map(|r| r.metric(metric))
                    .collect();
                let (q1, median, q3) = quartiles(&values)?;
                out.rows.push(StudyRow {
                    alpha,
                    method,
                    metric,
                    median,
                    q1,
                    q3,
                    count: values.len(),
                });
            }
        }
        out.logs.push((alpha, log));
    }
    Ok(out)
}
