//! Dataset synthesis and manifests.
//!
//! Every synthesized dataset lives in one output directory holding
//! `manifest.jsonl`, a `clean/` folder with 32-bit float copies of the
//! sources, and (for degraded sets) a `degraded/` folder. Paths inside the
//! manifest are relative to that directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{apply, clip_at_threshold, DistortionSpec, EffectKind};
use crate::error::{Error, Result};
use crate::metrics::{sdr, solve_threshold_for_target_sdr, MAX_TARGET_SDR_DB};
use crate::resample::resample;
use crate::signal::{Signal, CANONICAL_RATE};
use crate::wav::{read_wav, write_wav, WavFormat};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CLEAN_SUBDIR: &str = "clean";
pub const DEGRADED_SUBDIR: &str = "degraded";

/// Number of gains drawn for a gain-grid dataset.
pub const GAIN_GRID_SIZE: usize = 5;
pub const GAIN_RANGE_DB: (f64, f64) = (20.0, 50.0);
pub const TARGET_SDR_RANGE_DB: (f64, f64) = (1.0, 20.0);
pub const EVAL_GRID_DB: [f64; 7] = [1.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0];
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

pub const TONE_SECONDS: f64 = 2.0;
pub const TONE_PEAK: f64 = 0.9;
/// Tone partials sit on multiples of this frequency, which is a DFT bin
/// for every power-of-two frame of at least 256 samples at 16 kHz and for
/// the full 2 s clip.
pub const TONE_GRID_HZ: f64 = 62.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Degradation parameters of one entry. Fields that do not apply are absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EntryParams {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gain_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub colour: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_sdr: Option<f64>,
    /// Input SDR of the stored pair as measured after writing.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub achieved_sdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub clean_path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub degraded_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub effect: Option<EffectKind>,
    pub params: EntryParams,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub split: Option<Split>,
    pub duration_s: f64,
    pub sample_rate: u32,
}

impl ManifestEntry {
    /// Severity axis used for grouping results: target SDR when present,
    /// otherwise the gain.
    pub fn condition_db(&self) -> Option<f64> {
        self.params.target_sdr.or(self.params.gain_db)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    schema_version: u32,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    split_seed: Option<u64>,
    #[serde(flatten)]
    entry: ManifestEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub seed: u64,
    pub split_seed: Option<u64>,
    pub schema_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, seed: u64, entries: Vec<ManifestEntry>) -> Self {
        Self {
            root: root.into(),
            seed,
            split_seed: None,
            schema_version: SCHEMA_VERSION,
            entries,
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for entry in &self.entries {
            let line = ManifestLine {
                schema_version: self.schema_version,
                seed: self.seed,
                split_seed: self.split_seed,
                entry: entry.clone(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut manifest = Self::new(root, 0, Vec::new());
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(line)
                .map_err(|e| Error::Dataset(format!("manifest line {}: {e}", i + 1)))?;
            if parsed.schema_version != SCHEMA_VERSION {
                return Err(Error::Dataset(format!(
                    "manifest line {}: schema version {} unsupported",
                    i + 1,
                    parsed.schema_version
                )));
            }
            if manifest.entries.is_empty() {
                manifest.seed = parsed.seed;
                manifest.split_seed = parsed.split_seed;
            }
            manifest.entries.push(parsed.entry);
        }
        Ok(manifest)
    }

    /// Writes `<root>/manifest.jsonl` and returns its path.
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        self.write_to(&path)?;
        Ok(path)
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest file, or `<dir>/manifest.jsonl` when given a directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path = path.join(MANIFEST_FILE);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_jsonl(&text, root)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    /// Distinct clean paths in first-appearance order.
    pub fn clean_paths(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .map(|e| e.clean_path.as_str())
            .filter(|p| seen.insert(*p))
            .collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.entries.iter().map(|e| e.duration_s).sum()
    }

    /// Checks that files exist, that splits (if any) tag every entry and
    /// never share a clean clip, and that target-based entries hit their
    /// target within `sdr_tol` dB.
    pub fn validate(&self, sdr_tol: f64) -> Result<()> {
        let mut owner: BTreeMap<&str, Option<Split>> = BTreeMap::new();
        let tagged = self.entries.iter().any(|e| e.split.is_some());
        for e in &self.entries {
            let mut files = vec![e.clean_path.as_str()];
            files.extend(e.degraded_path.as_deref());
            for f in files {
                if !self.resolve(f).is_file() {
                    return Err(Error::Dataset(format!("missing file {f}")));
                }
            }
            if tagged && e.split.is_none() {
                return Err(Error::Dataset(format!("entry {} has no split", e.clip_id)));
            }
            if let Some(prev) = owner.insert(&e.clean_path, e.split) {
                if prev != e.split {
                    return Err(Error::Dataset(format!(
                        "clean clip {} appears in two splits",
                        e.clean_path
                    )));
                }
            }
            if let (Some(t), Some(a)) = (e.params.target_sdr, e.params.achieved_sdr) {
                if (t - a).abs() > sdr_tol {
                    return Err(Error::Dataset(format!(
                        "entry {}: achieved {a} dB vs target {t} dB",
                        e.clip_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A clean source clip loaded for synthesis.
#[derive(Debug, Clone)]
pub struct CleanClip {
    pub id: String,
    pub signal: Signal,
}

/// Loads every `.wav` file in `dir` (sorted by name), resampled to `rate`.
pub fn load_clean_dir(dir: &Path, rate: u32) -> Result<Vec<CleanClip>> {
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for item in listing {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| x.eq_ignore_ascii_case("wav"));
        if is_wav && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no WAV files in {}", dir.display())));
    }
    let clips: Vec<CleanClip> = paths
        .par_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Dataset(format!("bad file name {}", p.display())))?
                .to_string();
            let signal = resample(&read_wav(p)?, rate)?;
            if signal.is_empty() {
                return Err(Error::EmptySignal);
            }
            Ok(CleanClip { id, signal })
        })
        .collect::<Result<_>>()?;
    let mut ids = BTreeSet::new();
    for c in &clips {
        if !ids.insert(c.id.as_str()) {
            return Err(Error::Dataset(format!("duplicate clip id {}", c.id)));
        }
    }
    Ok(clips)
}

/// Rounds to what a 32-bit float WAV stores.
fn as_stored(sig: &Signal) -> Signal {
    Signal::from_parts(
        sig.samples().iter().map(|&v| v as f32 as f64).collect(),
        sig.sample_rate(),
    )
}

fn prepare_out_dir(out_dir: &Path, degraded: bool) -> Result<()> {
    let mut dirs = vec![out_dir.join(CLEAN_SUBDIR)];
    if degraded {
        dirs.push(out_dir.join(DEGRADED_SUBDIR));
    }
    for d in dirs {
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    Ok(())
}

fn clean_rel(id: &str) -> String {
    format!("{CLEAN_SUBDIR}/{id}.wav")
}

/// Writes the stored form of each clip under `clean/` and returns it.
fn store_clean(clips: &[CleanClip], out_dir: &Path) -> Result<Vec<Signal>> {
    clips
        .par_iter()
        .map(|c| {
            write_wav(&c.signal, out_dir.join(clean_rel(&c.id)), WavFormat::Float32)?;
            Ok(as_stored(&c.signal))
        })
        .collect()
}

struct Degradation {
    suffix: String,
    effect: EffectKind,
    params: EntryParams,
    signal: Signal,
}

/// Writes degraded files and assembles entries ordered by clip then
/// parameter.
fn emit_entries(
    clips: &[CleanClip],
    clean: &[Signal],
    out_dir: &Path,
    per_clip: impl Fn(usize, &Signal) -> Result<Vec<Degradation>> + Sync,
) -> Result<Vec<ManifestEntry>> {
    let nested: Vec<Vec<ManifestEntry>> = clips
        .par_iter()
        .zip(clean.par_iter())
        .enumerate()
        .map(|(i, (clip, x))| {
            let mut out = Vec::new();
            for d in per_clip(i, x)? {
                let rel = format!("{DEGRADED_SUBDIR}/{}_{}.wav", clip.id, d.suffix);
                write_wav(&d.signal, out_dir.join(&rel), WavFormat::Float32)?;
                let stored = as_stored(&d.signal);
                let mut params = d.params;
                params.achieved_sdr = Some(sdr(x, &stored)?.value);
                out.push(ManifestEntry {
                    clip_id: clip.id.clone(),
                    clean_path: clean_rel(&clip.id),
                    degraded_path: Some(rel),
                    effect: Some(d.effect),
                    params,
                    split: None,
                    duration_s: stored.duration(),
                    sample_rate: stored.sample_rate(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Draws the dataset-wide gain grid, returned in ascending order.
pub fn draw_gain_grid(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gains: Vec<f64> = (0..GAIN_GRID_SIZE)
        .map(|_| rng.random_range(GAIN_RANGE_DB.0..=GAIN_RANGE_DB.1))
        .collect();
    gains.sort_by(f64::total_cmp);
    gains
}

/// Applies every gain of one seeded five-gain grid to every clean clip.
pub fn synth_gain_grid(
    clean_dir: &Path,
    template: &DistortionSpec,
    out_dir: &Path,
    seed: u64,
    rate: u32,
) -> Result<DatasetManifest> {
    template.validate()?;
    let clips = load_clean_dir(clean_dir, rate)?;
    prepare_out_dir(out_dir, true)?;
    let clean = store_clean(&clips, out_dir)?;
    let gains = draw_gain_grid(seed);
    let entries = emit_entries(&clips, &clean, out_dir, |_, x| {
        gains
            .iter()
            .enumerate()
            .map(|(g, &gain_db)| {
                let spec = DistortionSpec { gain_db, ..*template };
                Ok(Degradation {
                    suffix: format!("{}_g{g}", spec.kind),
                    effect: spec.kind,
                    params: EntryParams {
                        gain_db: Some(gain_db),
                        theta: Some(spec.clip_threshold),
                        alpha: (spec.kind != EffectKind::SoxOverdrive).then_some(spec.wet_weight),
                        colour: (spec.kind == EffectKind::SoxOverdrive).then_some(spec.colour),
                        ..Default::default()
                    },
                    signal: apply(x, &spec)?,
                })
            })
            .collect()
    })?;
    let manifest = DatasetManifest::new(out_dir, seed, entries);
    manifest.write()?;
    Ok(manifest)
}

fn clip_to_target(x: &Signal, target_db: f64) -> Result<Degradation> {
    let sol = solve_threshold_for_target_sdr(x, target_db)?;
    Ok(Degradation {
        suffix: format!("sdr{target_db}"),
        effect: EffectKind::HardClip,
        params: EntryParams {
            gain_db: Some(0.0),
            theta: Some(sol.theta),
            target_sdr: Some(target_db),
            ..Default::default()
        },
        signal: clip_at_threshold(x, sol.theta),
    })
}

fn check_sdr_range(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi <= MAX_TARGET_SDR_DB) {
        return Err(Error::InvalidArgument(format!(
            "SDR range [{lo}, {hi}] must satisfy 0 < lo <= hi <= {MAX_TARGET_SDR_DB}"
        )));
    }
    Ok(())
}

/// Draws one target input SDR per clip in `[lo, hi]`, in clip order.
pub fn draw_targets(count: usize, sdr_range: (f64, f64), seed: u64) -> Vec<f64> {
    let (lo, hi) = sdr_range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect()
}

/// Clips each clean clip (no gain) at the threshold giving a randomly drawn
/// input SDR.
pub fn synth_target_sdr(
    clean_dir: &Path,
    sdr_range: (f64, f64),
    out_dir: &Path,
    seed: u64,
    rate: u32,
) -> Result<DatasetManifest> {
    check_sdr_range(sdr_range.0, sdr_range.1)?;
    let clips = load_clean_dir(clean_dir, rate)?;
    prepare_out_dir(out_dir, true)?;
    let clean = store_clean(&clips, out_dir)?;
    let targets = draw_targets(clips.len(), sdr_range, seed);
    let entries = emit_entries(&clips, &clean, out_dir, |i, x| {
        Ok(vec![clip_to_target(x, targets[i])?])
    })?;
    let manifest = DatasetManifest::new(out_dir, seed, entries);
    manifest.write()?;
    Ok(manifest)
}

/// Clips every clean clip at every target in `grid`. No randomness.
pub fn synth_eval_grid(clean_dir: &Path, grid: &[f64], out_dir: &Path, rate: u32) -> Result<DatasetManifest> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty SDR grid".into()));
    }
    for &t in grid {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!("grid value {t} dB must be positive")));
        }
    }
    let clips = load_clean_dir(clean_dir, rate)?;
    prepare_out_dir(out_dir, true)?;
    let clean = store_clean(&clips, out_dir)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let entries = emit_entries(&clips, &clean, out_dir, |_, x| {
        sorted.iter().map(|&t| clip_to_target(x, t)).collect()
    })?;
    let manifest = DatasetManifest::new(out_dir, 0, entries);
    manifest.write()?;
    Ok(manifest)
}

/// Clip counts per split: largest-remainder rounding, then every class is
/// made nonempty by taking clips from the largest one.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3]> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| !(*v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    if n < 3 {
        return Err(Error::Dataset(format!(
            "{n} clean clips cannot fill three splits"
        )));
    }
    let exact: Vec<f64> = r.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], 3 - j)).expect("three classes");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok([counts[0], counts[1], counts[2]])
}

/// Tags entries train/valid/test by clean clip after a seeded shuffle.
pub fn split(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetManifest> {
    let mut clips: Vec<&str> = manifest.clean_paths();
    clips.sort_unstable();
    let counts = split_counts(clips.len(), ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clips.shuffle(&mut rng);
    let mut assign: BTreeMap<String, Split> = BTreeMap::new();
    let mut it = clips.into_iter();
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for path in it.by_ref().take(count) {
            assign.insert(path.to_string(), split);
        }
    }
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = Some(assign[&e.clean_path]);
    }
    out.split_seed = Some(seed);
    Ok(out)
}

/// Amplitude envelope of a synthetic tone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    Steady,
    /// Re-struck every `period_s` seconds with exponential decay.
    Pluck { period_s: f64, decay_s: f64 },
}

/// Band-limited noise burst added on top of the partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseBurst {
    pub start_s: f64,
    pub length_s: f64,
    pub cutoff_hz: f64,
    /// Peak level relative to the partials before normalization.
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToneSpec {
    /// (frequency in Hz, amplitude, phase in radians)
    pub partials: Vec<(f64, f64, f64)>,
    pub envelope: Envelope,
    pub bursts: Vec<NoiseBurst>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToneKind {
    Steady,
    Pluck,
    Burst,
}

impl ToneKind {
    /// Kinds rotate with the clip index.
    pub fn for_index(i: usize) -> Self {
        [ToneKind::Steady, ToneKind::Pluck, ToneKind::Burst][i % 3]
    }
}

impl ToneSpec {
    pub fn random(kind: ToneKind, rng: &mut impl Rng) -> Self {
        let count = rng.random_range(1..=5);
        let mut bins = BTreeSet::new();
        while bins.len() < count {
            bins.insert(rng.random_range(2..=64u32));
        }
        let partials = bins
            .into_iter()
            .map(|b| {
                (
                    b as f64 * TONE_GRID_HZ,
                    rng.random_range(0.2..=1.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let envelope = match kind {
            ToneKind::Pluck => Envelope::Pluck {
                period_s: [0.25, 0.5, 1.0][rng.random_range(0..3)],
                decay_s: rng.random_range(0.1..=0.4),
            },
            _ => Envelope::Steady,
        };
        let bursts = match kind {
            ToneKind::Burst => (0..2)
                .map(|b| NoiseBurst {
                    start_s: b as f64 + rng.random_range(0.1..=0.6),
                    length_s: rng.random_range(0.1..=0.3),
                    cutoff_hz: rng.random_range(1000.0..=4000.0),
                    level: 0.15,
                })
                .collect(),
            _ => Vec::new(),
        };
        Self {
            partials,
            envelope,
            bursts,
            noise_seed: rng.random(),
        }
    }

    /// Renders `TONE_SECONDS` at the canonical rate, peak-normalized to
    /// `TONE_PEAK`.
    pub fn render(&self) -> Result<Signal> {
        let fs = CANONICAL_RATE as f64;
        let len = (TONE_SECONDS * fs) as usize;
        let mut x: Vec<f64> = (0..len)
            .map(|n| {
                let t = n as f64 / fs;
                let env = match self.envelope {
                    Envelope::Steady => 1.0,
                    Envelope::Pluck { period_s, decay_s } => {
                        let local = t % period_s;
                        // 5 ms linear attack avoids a click at each strike
                        (local / 0.005).min(1.0) * (-local / decay_s).exp()
                    }
                };
                env * self
                    .partials
                    .iter()
                    .map(|&(f, a, p)| a * (std::f64::consts::TAU * f * t + p).cos())
                    .sum::<f64>()
            })
            .collect();
        let tonal_peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        for b in &self.bursts {
            let start = (b.start_s * fs) as usize;
            let blen = ((b.length_s * fs) as usize).min(len.saturating_sub(start));
            let noise = lowpass_noise(blen, b.cutoff_hz / fs, &mut rng);
            let npeak = noise.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
            for (k, v) in noise.iter().enumerate() {
                let w = 0.5 * (1.0 - (std::f64::consts::TAU * k as f64 / blen as f64).cos());
                x[start + k] += b.level * tonal_peak.max(1e-3) * w * v / npeak;
            }
        }
        let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Err(Error::Dataset("silent tone".into()));
        }
        let g = TONE_PEAK / peak;
        Signal::new(x.into_iter().map(|v| v * g).collect(), CANONICAL_RATE)
    }
}

/// Uniform noise through a Hann-windowed sinc low-pass at `cutoff`
/// (cycles per sample).
fn lowpass_noise(len: usize, cutoff: f64, rng: &mut impl Rng) -> Vec<f64> {
    const HALF: usize = 32;
    let taps: Vec<f64> = (0..=2 * HALF)
        .map(|k| {
            let m = k as f64 - HALF as f64;
            let sinc = if m == 0.0 {
                2.0 * cutoff
            } else {
                (std::f64::consts::TAU * cutoff * m).sin() / (std::f64::consts::PI * m)
            };
            let w = 0.5 * (1.0 - (std::f64::consts::TAU * k as f64 / (2 * HALF) as f64).cos());
            sinc * w
        })
        .collect();
    let white: Vec<f64> = (0..len + 2 * HALF)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    (0..len)
        .map(|n| taps.iter().enumerate().map(|(k, t)| t * white[n + k]).sum())
        .collect()
}

/// Generates `count` clean tones under `out_dir/clean/` and a clean-only
/// manifest.
pub fn synth_tones(out_dir: &Path, count: usize, seed: u64) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::InvalidArgument("tone count must be at least 1".into()));
    }
    prepare_out_dir(out_dir, false)?;
    let entries = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let tone = ToneSpec::random(ToneKind::for_index(i), &mut rng).render()?;
            let id = format!("tone_{i:03}");
            let rel = clean_rel(&id);
            write_wav(&tone, out_dir.join(&rel), WavFormat::Float32)?;
            Ok(ManifestEntry {
                clip_id: id,
                clean_path: rel,
                degraded_path: None,
                effect: None,
                params: EntryParams::default(),
                split: None,
                duration_s: tone.duration(),
                sample_rate: tone.sample_rate(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(out_dir, seed, entries);
    manifest.write()?;
    Ok(manifest)
}
