//! SDR loss, Adam, the plateau schedule and the epoch loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec, Real};
use crate::corpus::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{batch_sdr_loss, ratio_db, CAP_DB, CAP_RATIO, EPS_NUM};
use crate::wav::read_wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub segment_len: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    /// Epochs without a new validation minimum before the rate is divided
    /// by `lr_factor`.
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            segment_len: 32_000,
            batch_size: 16,
            lr_init: 1e-3,
            plateau_patience: 20,
            lr_factor: 10.0,
            max_epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule: patience 150, 1000 epochs.
    pub fn paper() -> Self {
        Self {
            plateau_patience: 150,
            max_epochs: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("train config: {m}")));
        let m = spec.length_multiple();
        if self.segment_len == 0 || self.segment_len % m != 0 {
            return bad(format!("segment length {} must be a multiple of {m}", self.segment_len));
        }
        if self.segment_len < spec.receptive_field() {
            return bad(format!(
                "segment length {} is shorter than the receptive field {}",
                self.segment_len,
                spec.receptive_field()
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_factor > 1.0) {
            return bad("learning rate must be positive and the factor above 1".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps be positive".into());
        }
        Ok(())
    }
}

/// SDR of `estimate` and its gradient with respect to the estimate; zero
/// where the metric is clamped.
fn sdr_and_grad(reference: &[f64], estimate: &[f64]) -> (f64, Vec<f64>) {
    let s: f64 = reference.iter().map(|v| v * v).sum();
    let r: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(x, e)| (x - e) * (x - e))
        .sum();
    let value = ratio_db(s, r);
    let raw = 10.0 * (s / (r + EPS_NUM)).log10();
    if r <= CAP_RATIO * s || raw < -CAP_DB {
        return (value, vec![0.0; estimate.len()]);
    }
    let k = 20.0 / std::f64::consts::LN_10 / (r + EPS_NUM);
    let grad = reference.iter().zip(estimate).map(|(x, e)| k * (x - e)).collect();
    (value, grad)
}

fn to_real<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x)).collect()
}

/// Model estimate at 64-bit: the residual path is added outside the
/// network precision.
fn estimate<T: Real>(params: &ModelParams<T>, degraded: &[f64], head: &[T]) -> Vec<f64> {
    if params.spec().residual_output {
        degraded.iter().zip(head).map(|(y, h)| y + h.to_f64()).collect()
    } else {
        head.iter().map(|h| h.to_f64()).collect()
    }
}

fn check_batch<R: AsRef<[f64]>, D: AsRef<[f64]>>(clean: &[R], degraded: &[D]) -> Result<()> {
    if clean.is_empty() || clean.len() != degraded.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} clean vs {} degraded items",
            clean.len(),
            degraded.len()
        )));
    }
    for (c, d) in clean.iter().zip(degraded) {
        if c.as_ref().len() != d.as_ref().len() {
            return Err(Error::LengthMismatch {
                expected: c.as_ref().len(),
                actual: d.as_ref().len(),
            });
        }
    }
    Ok(())
}

/// Negative mean SDR of the model on a batch, without gradients.
pub fn batch_loss<T: Real, R, D>(params: &ModelParams<T>, clean: &[R], degraded: &[D]) -> Result<f64>
where
    R: AsRef<[f64]> + Sync,
    D: AsRef<[f64]> + Sync,
{
    check_batch(clean, degraded)?;
    let estimates: Vec<Vec<f64>> = degraded
        .par_iter()
        .map(|d| {
            let d = d.as_ref();
            let head = params.head_output(&to_real::<T>(d))?;
            Ok(estimate(params, d, &head))
        })
        .collect::<Result<_>>()?;
    batch_sdr_loss(clean, &estimates)
}

/// Negative mean batch SDR and its gradient with respect to every
/// parameter. Items run in parallel; their gradients are summed in batch
/// order.
pub fn loss_and_grad<T: Real, R, D>(
    params: &ModelParams<T>,
    clean: &[R],
    degraded: &[D],
) -> Result<(f64, Vec<T>)>
where
    R: AsRef<[f64]> + Sync,
    D: AsRef<[f64]> + Sync,
{
    check_batch(clean, degraded)?;
    let scale = -1.0 / clean.len() as f64;
    let items: Vec<(f64, Vec<T>)> = clean
        .par_iter()
        .zip(degraded.par_iter())
        .map(|(c, d)| {
            let (c, d) = (c.as_ref(), d.as_ref());
            let tape = params.forward_tape(&to_real::<T>(d))?;
            let head: Vec<T> = tape.head_output().iter().copied().collect();
            let est = estimate(params, d, &head);
            let (value, g) = sdr_and_grad(c, &est);
            let g: Vec<T> = g.iter().map(|v| T::from_f64(v * scale)).collect();
            Ok((value, params.backward(&tape, &g)?))
        })
        .collect::<Result<_>>()?;
    let mut total = vec![T::zero(); params.len()];
    let mut sdr_sum = 0.0;
    for (value, g) in &items {
        sdr_sum += value;
        for (t, &v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    Ok((-sdr_sum / clean.len() as f64, total))
}

/// Adam moments kept at 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_config(n: usize, cfg: &TrainConfig) -> Self {
        Self::new(n, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for k in 0..params.len() {
        let g = grads[k].to_f64();
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        let step = lr * m_hat / (v_hat.sqrt() + state.eps);
        if step != 0.0 {
            params[k] = T::from_f64(params[k].to_f64() - step);
        }
    }
    Ok(())
}

/// Divides the learning rate by `factor` after `patience` consecutive
/// observations without a new minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    lr: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self {
            patience,
            factor,
            lr,
            best: None,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one validation loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(b) if !(loss < b) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.lr /= self.factor;
                    self.stale = 0;
                }
            }
            _ => {
                self.best = Some(loss);
                self.stale = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Rate used during the epoch. Epoch 0 evaluates the initial model.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    /// Epoch whose parameters were returned (lowest validation loss).
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss,lr\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.valid_loss, e.lr).expect("string write");
        }
        out
    }

    pub fn best_valid_loss(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.valid_loss).reduce(f64::min)
    }
}

struct Pair {
    clean: Vec<f64>,
    degraded: Vec<f64>,
}

fn load_pairs(manifest: &DatasetManifest, split: Split) -> Result<Vec<Pair>> {
    let entries: Vec<_> = manifest
        .entries_in(split)
        .filter(|e| e.degraded_path.is_some())
        .collect();
    if entries.is_empty() {
        return Err(Error::Dataset(format!("no degraded {} entries", split.name())));
    }
    entries
        .par_iter()
        .map(|e| {
            let clean = read_wav(manifest.resolve(&e.clean_path))?;
            let degraded = read_wav(manifest.resolve(e.degraded_path.as_deref().expect("filtered")))?;
            clean.check_compatible(&degraded)?;
            Ok(Pair {
                clean: clean.into_samples(),
                degraded: degraded.into_samples(),
            })
        })
        .collect()
}

/// Centered segment of at most `seg` samples, trimmed to a multiple of `m`.
fn fixed_window(len: usize, seg: usize, m: usize) -> Result<(usize, usize)> {
    let n = len.min(seg) / m * m;
    if n == 0 {
        return Err(Error::Dataset(format!("clip of {len} samples is too short")));
    }
    Ok(((len - n) / 2, n))
}

fn fixed_segments(pairs: &[Pair], seg: usize, m: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut clean = Vec::with_capacity(pairs.len());
    let mut degraded = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (o, n) = fixed_window(p.clean.len(), seg, m)?;
        clean.push(p.clean[o..o + n].to_vec());
        degraded.push(p.degraded[o..o + n].to_vec());
    }
    Ok((clean, degraded))
}

pub fn train(manifest: &DatasetManifest, spec: &ModelSpec, cfg: &TrainConfig) -> Result<(ModelParams<f32>, TrainLog)> {
    train_with(manifest, spec, cfg, |_| {})
}

/// Trains from the identity initialization, calling `on_epoch` after each
/// epoch (including the initial evaluation at epoch 0).
pub fn train_with(
    manifest: &DatasetManifest,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ModelParams<f32>, TrainLog)> {
    cfg.validate(spec)?;
    let train_pairs = load_pairs(manifest, Split::Train)?;
    let valid_pairs = load_pairs(manifest, Split::Valid)?;
    let m = spec.length_multiple();
    let (valid_clean, valid_degraded) = fixed_segments(&valid_pairs, cfg.segment_len, m)?;
    let (fixed_clean, fixed_degraded) = fixed_segments(&train_pairs, cfg.segment_len, m)?;

    let mut params = ModelParams::<f32>::init(spec, cfg.seed)?;
    let mut adam = AdamState::for_config(params.len(), cfg);
    let mut sched = PlateauScheduler::new(cfg.lr_init, cfg.plateau_patience, cfg.lr_factor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = TrainLog {
        epochs: Vec::with_capacity(cfg.max_epochs + 1),
        steps: 0,
        best_epoch: 0,
    };

    let initial = EpochLog {
        epoch: 0,
        train_loss: batch_loss(&params, &fixed_clean, &fixed_degraded)?,
        valid_loss: batch_loss(&params, &valid_clean, &valid_degraded)?,
        lr: sched.lr(),
    };
    sched.observe(initial.valid_loss);
    let mut best = (initial.valid_loss, params.clone());
    on_epoch(&initial);
    log.epochs.push(initial);

    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut clean = Vec::with_capacity(chunk.len());
            let mut degraded = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = &train_pairs[i];
                let (_, n) = fixed_window(p.clean.len(), cfg.segment_len, m)?;
                let o = rng.random_range(0..=p.clean.len() - n);
                clean.push(&p.clean[o..o + n]);
                degraded.push(&p.degraded[o..o + n]);
            }
            let (loss, grads) = loss_and_grad(&params, &clean, &degraded)?;
            adam_step(params.as_mut_slice(), &grads, &mut adam, lr)?;
            log.steps += 1;
            weighted += loss * chunk.len() as f64;
        }
        if !params.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "parameters became non-finite in epoch {epoch}"
            )));
        }
        let entry = EpochLog {
            epoch,
            train_loss: weighted / order.len() as f64,
            valid_loss: batch_loss(&params, &valid_clean, &valid_degraded)?,
            lr,
        };
        sched.observe(entry.valid_loss);
        if entry.valid_loss < best.0 {
            best = (entry.valid_loss, params.clone());
            log.best_epoch = epoch;
        }
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok((best.1, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheduler_drops_after_patience() {
        let mut s = PlateauScheduler::new(1e-3, 3, 10.0);
        let mut lrs = vec![s.lr()];
        for _ in 0..8 {
            lrs.push(s.observe(5.0));
        }
        // lrs[e] is the rate used in epoch e; epoch 0 only sets the best
        assert_eq!(&lrs[..4], &[1e-3; 4]);
        assert_eq!(lrs[4], 1e-3 / 10.0);
        assert_eq!(lrs[7], 1e-3 / 100.0);
    }

    #[test]
    fn scheduler_resets_on_improvement() {
        let mut s = PlateauScheduler::new(1.0, 2, 10.0);
        s.observe(5.0);
        s.observe(5.0);
        s.observe(4.0);
        s.observe(4.0);
        assert_eq!(s.lr(), 1.0);
        s.observe(4.5);
        assert_eq!(s.lr(), 0.1);
    }

    #[test]
    fn adam_first_step_is_normalized() {
        let mut p = vec![1.0_f64, -2.0, 0.5];
        let g = vec![0.3, -4.0, 0.0];
        let mut st = AdamState::new(3, 0.9, 0.999, 1e-8);
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        for (k, (&p1, &p0)) in p.iter().zip(&[1.0, -2.0, 0.5]).enumerate() {
            let expect = p0 - 0.01 * g[k] / (g[k].abs() + 1e-8);
            assert!((p1 - expect).abs() < 1e-9);
        }
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.25_f32, -3.0, 7.5];
        let mut st = AdamState::new(3, 0.9, 0.999, 1e-8);
        for _ in 0..3 {
            adam_step(&mut p, &[0.0; 3], &mut st, 1e-3).unwrap();
        }
        assert_eq!(p, vec![0.25, -3.0, 7.5]);
        assert_eq!(st.t, 3);
        // existing moments decay geometrically under zero gradients
        st.m = vec![1.0; 3];
        st.v = vec![1.0; 3];
        adam_step(&mut p, &[0.0; 3], &mut st, 1e-3).unwrap();
        assert!(st.m.iter().all(|&m| (m - 0.9).abs() < 1e-15));
        assert!(st.v.iter().all(|&v| (v - 0.999).abs() < 1e-15));
    }

    #[test]
    fn sdr_gradient_matches_difference_quotient() {
        let x = [0.3, -0.8, 0.5, 0.1];
        let e = [0.2, -0.7, 0.55, 0.0];
        let (v, g) = sdr_and_grad(&x, &e);
        for k in 0..4 {
            let mut ep = e;
            let mut em = e;
            ep[k] += 1e-6;
            em[k] -= 1e-6;
            let fd = (sdr_and_grad(&x, &ep).0 - sdr_and_grad(&x, &em).0) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-5 * g[k].abs().max(1.0));
        }
        assert!(v > 0.0);
        let (cap, g) = sdr_and_grad(&x, &x);
        assert_eq!(cap, CAP_DB);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_window_rules() {
        assert_eq!(fixed_window(100, 64, 8).unwrap(), (18, 64));
        assert_eq!(fixed_window(30, 64, 8).unwrap(), (3, 24));
        assert!(fixed_window(5, 64, 8).is_err());
    }
}
