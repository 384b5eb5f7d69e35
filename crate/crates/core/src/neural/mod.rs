//! A small time-domain encoder/decoder declipper.
//!
//! The network is a one-dimensional U-Net: per level a same-length
//! convolution followed by a stride-2 convolution, a bottleneck, and a
//! decoder that upsamples by repetition, concatenates the matching encoder
//! output and convolves back down to the level width. A pointwise head maps
//! to one channel; with `residual_output` the head is added to the input
//! and initialized to zero, so a fresh model is the identity.
//!
//! Gradients are written out by hand; [`train`] optimizes the negative
//! batch SDR with Adam and a plateau learning-rate schedule.

mod conv;
mod io;
mod train;

use std::fmt::Debug;
use std::ops::Range;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;
use conv::ConvShape;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    adam_step, batch_loss, loss_and_grad, train, train_with, AdamState, EpochLog, PlateauScheduler,
    TrainConfig, TrainLog,
};

/// Floating-point types the network runs in.
pub trait Real:
    LinalgScalar + PartialOrd + Send + Sync + Debug + std::ops::AddAssign + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub levels: usize,
    pub channels: Vec<usize>,
    pub kernel_len: usize,
    pub leaky_slope: f64,
    pub residual_output: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            levels: 3,
            channels: vec![16, 32, 64],
            kernel_len: 15,
            leaky_slope: 0.2,
            residual_output: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerRole {
    Encoder(usize),
    Down(usize),
    Bottleneck,
    Decoder(usize),
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub role: LayerRole,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Flat index range of the weights, laid out `[out][in][tap]`.
    pub weights: Range<usize>,
    pub biases: Range<usize>,
}

impl LayerInfo {
    fn shape(&self) -> ConvShape {
        ConvShape {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel,
            stride: self.stride,
        }
    }

    fn activated(&self) -> bool {
        self.role != LayerRole::Head
    }
}

fn conv_back(iv: (i64, i64), kernel: usize, stride: usize) -> (i64, i64) {
    let pad = (kernel / 2) as i64;
    let s = stride as i64;
    (iv.0 * s - pad, iv.1 * s + kernel as i64 - 1 - pad)
}

fn hull(a: (i64, i64), b: (i64, i64)) -> (i64, i64) {
    (a.0.min(b.0), a.1.max(b.1))
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model spec: {m}")));
        if self.levels == 0 || self.levels > 16 {
            return bad("levels must lie in 1..=16");
        }
        if self.channels.len() != self.levels || self.channels.contains(&0) {
            return bad("one positive channel count per level required");
        }
        if self.kernel_len == 0 || self.kernel_len % 2 == 0 {
            return bad("kernel length must be odd");
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad("leaky slope must lie in [0, 1)");
        }
        Ok(())
    }

    /// Input lengths must be multiples of this.
    pub fn length_multiple(&self) -> usize {
        1 << self.levels
    }

    fn enc(&self, l: usize) -> usize {
        2 * l
    }
    fn down(&self, l: usize) -> usize {
        2 * l + 1
    }
    fn bottleneck(&self) -> usize {
        2 * self.levels
    }
    fn dec(&self, l: usize) -> usize {
        2 * self.levels + self.levels - l
    }
    fn head(&self) -> usize {
        3 * self.levels + 1
    }

    /// Layers in declaration order.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let k = self.kernel_len;
        let c = &self.channels;
        let mut shapes = Vec::new();
        for l in 0..self.levels {
            let in_ch = if l == 0 { 1 } else { c[l - 1] };
            shapes.push((LayerRole::Encoder(l), in_ch, c[l], k, 1));
            shapes.push((LayerRole::Down(l), c[l], c[l], k, 2));
        }
        let deep = c[self.levels - 1];
        shapes.push((LayerRole::Bottleneck, deep, deep, k, 1));
        for l in (0..self.levels).rev() {
            let below = if l + 1 == self.levels { deep } else { c[l + 1] };
            shapes.push((LayerRole::Decoder(l), below + c[l], c[l], k, 1));
        }
        shapes.push((LayerRole::Head, c[0], 1, 1, 1));
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(role, in_ch, out_ch, kernel, stride)| {
                let w = offset..offset + out_ch * in_ch * kernel;
                let b = w.end..w.end + out_ch;
                offset = b.end;
                LayerInfo {
                    role,
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    weights: w,
                    biases: b,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, |l| l.biases.end)
    }

    /// Input sample interval `[a, b]` that output sample `t` depends on,
    /// ignoring the signal edges.
    pub fn dependency_interval(&self, t: i64) -> (i64, i64) {
        self.dec_dep(0, (t, t))
    }

    fn enc_dep(&self, l: usize, iv: (i64, i64)) -> (i64, i64) {
        let iv_in = conv_back(iv, self.kernel_len, 1);
        if l == 0 {
            iv_in
        } else {
            self.down_dep(l - 1, iv_in)
        }
    }

    fn down_dep(&self, l: usize, iv: (i64, i64)) -> (i64, i64) {
        self.enc_dep(l, conv_back(iv, self.kernel_len, 2))
    }

    fn dec_dep(&self, l: usize, iv: (i64, i64)) -> (i64, i64) {
        let k = self.kernel_len;
        let cat = conv_back(iv, k, 1);
        let coarse = (cat.0.div_euclid(2), cat.1.div_euclid(2));
        let below = if l + 1 < self.levels {
            self.dec_dep(l + 1, coarse)
        } else {
            self.down_dep(self.levels - 1, conv_back(coarse, k, 1))
        };
        hull(self.enc_dep(l, cat), below)
    }

    /// Largest number of input samples any output sample depends on.
    pub fn receptive_field(&self) -> usize {
        let base = 1 << 20;
        (base..base + self.length_multiple() as i64)
            .map(|t| {
                let (a, b) = self.dependency_interval(t);
                (b - a + 1) as usize
            })
            .max()
            .unwrap_or(1)
    }
}

/// Parameters in one flat buffer, laid out by [`ModelSpec::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    spec: ModelSpec,
    layers: Vec<LayerInfo>,
    data: Vec<T>,
}

/// Per-layer conv inputs and outputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    inputs: Vec<Array2<T>>,
    outputs: Vec<Array2<T>>,
}

impl<T> Tape<T> {
    /// Output of layer `i` (after the activation, if any), channels x time.
    pub fn layer_output(&self, i: usize) -> &Array2<T> {
        &self.outputs[i]
    }

    /// Network branch output (before any residual addition).
    pub fn head_output(&self) -> &Array2<T> {
        self.outputs.last().expect("non-empty tape")
    }
}

fn upsample<T: Real>(h: &Array2<T>) -> Array2<T> {
    let (c, t) = h.dim();
    Array2::from_shape_fn((c, 2 * t), |(i, j)| h[[i, j / 2]])
}

fn fold_pairs<T: Real>(d: ArrayView2<T>) -> Array2<T> {
    let (c, t) = d.dim();
    Array2::from_shape_fn((c, t / 2), |(i, j)| d[[i, 2 * j]] + d[[i, 2 * j + 1]])
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        let n = spec.param_count();
        Ok(Self {
            spec: spec.clone(),
            layers,
            data: vec![T::zero(); n],
        })
    }

    /// Kaiming-uniform weights for the leaky rectifier, zero biases, and a
    /// zero head when the output is residual.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = (2.0 / (1.0 + spec.leaky_slope * spec.leaky_slope)).sqrt();
        for layer in p.layers.clone() {
            if layer.role == LayerRole::Head && spec.residual_output {
                continue;
            }
            let fan_in = (layer.in_ch * layer.kernel) as f64;
            let g = if layer.activated() { gain } else { 1.0 };
            let bound = g * (3.0 / fan_in).sqrt();
            for v in &mut p.data[layer.weights.clone()] {
                *v = T::from_f64(rng.random_range(-bound..=bound));
            }
        }
        Ok(p)
    }

    pub(crate) fn from_raw(spec: &ModelSpec, data: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        if data.len() != p.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a spec needing {}",
                data.len(),
                p.data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    fn weight(&self, layer: &LayerInfo) -> ArrayView2<'_, T> {
        ArrayView2::from_shape(
            (layer.out_ch, layer.in_ch * layer.kernel),
            &self.data[layer.weights.clone()],
        )
        .expect("layout matches spec")
    }

    fn bias(&self, layer: &LayerInfo) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.data[layer.biases.clone()])
    }

    fn check_len(&self, n: usize) -> Result<()> {
        let m = self.spec.length_multiple();
        if n == 0 || n % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "input length {n} must be a positive multiple of {m}"
            )));
        }
        Ok(())
    }

    fn layer(&self, i: usize, input: Array2<T>, tape: &mut Option<&mut Tape<T>>) -> Array2<T> {
        let info = &self.layers[i];
        let mut out = conv::forward(&info.shape(), self.weight(info), self.bias(info), input.view());
        if info.activated() {
            let slope = T::from_f64(self.spec.leaky_slope);
            out.mapv_inplace(|v| if v > T::zero() { v } else { v * slope });
        }
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.push(input);
            t.outputs.push(out.clone());
        }
        out
    }

    fn run(&self, x: &[T], mut tape: Option<&mut Tape<T>>) -> Result<Array2<T>> {
        self.check_len(x.len())?;
        let spec = &self.spec;
        let mut h = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("one row");
        let mut skips = Vec::with_capacity(spec.levels);
        for l in 0..spec.levels {
            let e = self.layer(spec.enc(l), h, &mut tape);
            skips.push(e.clone());
            h = self.layer(spec.down(l), e, &mut tape);
        }
        h = self.layer(spec.bottleneck(), h, &mut tape);
        for l in (0..spec.levels).rev() {
            let up = upsample(&h);
            let cat = concatenate(Axis(0), &[up.view(), skips[l].view()]).expect("equal lengths");
            h = self.layer(spec.dec(l), cat, &mut tape);
        }
        Ok(self.layer(spec.head(), h, &mut tape))
    }

    /// Network branch only: the head output before any residual addition.
    pub fn head_output(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.run(x, None)?.into_raw_vec_and_offset().0)
    }

    /// Model output: `x + head` with residual output, otherwise the head.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        let mut head = self.head_output(x)?;
        if self.spec.residual_output {
            for (h, &v) in head.iter_mut().zip(x) {
                *h = v + *h;
            }
        }
        Ok(head)
    }

    pub fn forward_tape(&self, x: &[T]) -> Result<Tape<T>> {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        self.run(x, Some(&mut tape))?;
        Ok(tape)
    }

    fn layer_back(
        &self,
        i: usize,
        tape: &Tape<T>,
        mut dy: Array2<T>,
        grads: &mut [T],
        need_dx: bool,
    ) -> Option<Array2<T>> {
        let info = &self.layers[i];
        if info.activated() {
            let slope = T::from_f64(self.spec.leaky_slope);
            dy.zip_mut_with(&tape.outputs[i], |d, &o| {
                if !(o > T::zero()) {
                    *d = *d * slope;
                }
            });
        }
        let (before, rest) = grads.split_at_mut(info.biases.start);
        let dw = ndarray::ArrayViewMut2::from_shape(
            (info.out_ch, info.in_ch * info.kernel),
            &mut before[info.weights.clone()],
        )
        .expect("layout matches spec");
        let db = ndarray::ArrayViewMut1::from(&mut rest[..info.out_ch]);
        conv::backward(
            &info.shape(),
            self.weight(info),
            tape.inputs[i].view(),
            dy.view(),
            dw,
            db,
            need_dx,
        )
    }

    /// Gradient of a scalar loss with respect to every parameter, given
    /// the loss gradient `grad_out` with respect to the model output.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &[T]) -> Result<Vec<T>> {
        let n = tape.head_output().ncols();
        if grad_out.len() != n || tape.outputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient of {} samples for a {n}-sample pass",
                grad_out.len()
            )));
        }
        let spec = &self.spec;
        let mut grads = vec![T::zero(); self.data.len()];
        let dout = Array2::from_shape_vec((1, n), grad_out.to_vec()).expect("one row");
        let mut dh = self
            .layer_back(spec.head(), tape, dout, &mut grads, true)
            .expect("input gradient requested");
        let mut dskips = Vec::with_capacity(spec.levels);
        for l in 0..spec.levels {
            let dcat = self
                .layer_back(spec.dec(l), tape, dh, &mut grads, true)
                .expect("input gradient requested");
            let below = self.layers[spec.dec(l)].in_ch - spec.channels[l];
            dskips.push(dcat.slice(s![below.., ..]).to_owned());
            dh = fold_pairs(dcat.slice(s![..below, ..]));
        }
        dh = self
            .layer_back(spec.bottleneck(), tape, dh, &mut grads, true)
            .expect("input gradient requested");
        for l in (0..spec.levels).rev() {
            let mut da = self
                .layer_back(spec.down(l), tape, dh, &mut grads, true)
                .expect("input gradient requested");
            da += &dskips[l];
            match self.layer_back(spec.enc(l), tape, da, &mut grads, l > 0) {
                Some(d) => dh = d,
                None => break,
            }
        }
        Ok(grads)
    }
}

/// Timing of one inference call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub wall_time_s: f64,
    pub audio_s: f64,
    pub rtf: f64,
    pub padded_len: usize,
}

/// Mirror index for right-padding without repeating the edge sample.
fn mirror(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

/// Restores `y`: reflect-pads to a valid length, runs the network, trims.
/// The residual path is added at 64-bit precision.
pub fn infer<T: Real>(params: &ModelParams<T>, y: &Signal) -> Result<(Signal, InferReport)> {
    if y.is_empty() {
        return Err(Error::EmptySignal);
    }
    let start = Instant::now();
    let len = y.len();
    let m = params.spec.length_multiple();
    let padded_len = len.div_ceil(m) * m;
    let x: Vec<T> = (0..padded_len)
        .map(|i| T::from_f64(y.samples()[mirror(i, len)]))
        .collect();
    let head = params.head_output(&x)?;
    let out: Vec<f64> = y
        .samples()
        .iter()
        .zip(&head)
        .map(|(&v, h)| {
            if params.spec.residual_output {
                v + h.to_f64()
            } else {
                h.to_f64()
            }
        })
        .collect();
    let wall = start.elapsed().as_secs_f64();
    let out = Signal::new(out, y.sample_rate())?;
    let audio_s = y.duration();
    Ok((
        out,
        InferReport {
            wall_time_s: wall,
            audio_s,
            rtf: wall / audio_s,
            padded_len,
        },
    ))
}
