//! Distortion synthesis: gain, wave-shaping, and wet/dry blending.
//!
//! Every effect amplifies the input by `10^(gain_db/20)` and maps it through
//! a shaper bounded by the clipping threshold. The result is then blended
//! with the unprocessed input: `y = a * f(x) + (1 - a) * x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EffectKind {
    #[serde(rename = "hardclip")]
    HardClip,
    #[serde(rename = "tanh")]
    TanhClip,
    #[serde(rename = "overdrive")]
    SoxOverdrive,
}

impl EffectKind {
    pub fn name(self) -> &'static str {
        match self {
            EffectKind::HardClip => "hardclip",
            EffectKind::TanhClip => "tanh",
            EffectKind::SoxOverdrive => "overdrive",
        }
    }
}

impl std::fmt::Display for EffectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EffectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hardclip" => Ok(EffectKind::HardClip),
            "tanh" => Ok(EffectKind::TanhClip),
            "overdrive" => Ok(EffectKind::SoxOverdrive),
            other => Err(Error::InvalidArgument(format!("unknown effect '{other}'"))),
        }
    }
}

/// Full parameterization of one distortion effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: EffectKind,
    pub gain_db: f64,
    pub clip_threshold: f64,
    /// Weight of the shaped signal in the output; ignored by the overdrive,
    /// which mixes internally.
    pub wet_weight: f64,
    /// Pre-shaper bias, overdrive only.
    pub colour: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 1.0;
pub const DEFAULT_COLOUR: f64 = 20.0;

impl DistortionSpec {
    pub fn new(kind: EffectKind, gain_db: f64) -> Self {
        Self {
            kind,
            gain_db,
            clip_threshold: DEFAULT_THRESHOLD,
            wet_weight: 1.0,
            colour: DEFAULT_COLOUR,
        }
    }

    pub fn hard_clip(gain_db: f64) -> Self {
        Self::new(EffectKind::HardClip, gain_db)
    }

    pub fn tanh_clip(gain_db: f64) -> Self {
        Self::new(EffectKind::TanhClip, gain_db)
    }

    pub fn overdrive(gain_db: f64, colour: f64) -> Self {
        Self {
            colour,
            ..Self::new(EffectKind::SoxOverdrive, gain_db)
        }
    }

    pub fn with_threshold(mut self, clip_threshold: f64) -> Self {
        self.clip_threshold = clip_threshold;
        self
    }

    pub fn with_wet_weight(mut self, wet_weight: f64) -> Self {
        self.wet_weight = wet_weight;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain_db.is_finite() {
            return Err(Error::InvalidArgument("gain must be finite".into()));
        }
        if !(self.clip_threshold > 0.0 && self.clip_threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "clip threshold must be positive, got {}",
                self.clip_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.wet_weight) {
            return Err(Error::InvalidArgument(format!(
                "wet weight must lie in [0, 1], got {}",
                self.wet_weight
            )));
        }
        if self.kind == EffectKind::SoxOverdrive && !(self.colour >= 0.0 && self.colour.is_finite()) {
            return Err(Error::InvalidArgument("colour must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn linear_gain(&self) -> f64 {
        db_to_gain(self.gain_db)
    }
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn expect_kind(spec: &DistortionSpec, kind: EffectKind) -> Result<()> {
    spec.validate()?;
    if spec.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "expected a {kind} spec, got {}",
            spec.kind
        )));
    }
    Ok(())
}

pub fn amplify(x: &Signal, gain_db: f64) -> Signal {
    let g = db_to_gain(gain_db);
    Signal::from_parts(x.samples().iter().map(|s| s * g).collect(), x.sample_rate())
}

/// Hard clipping of a single (already amplified) value.
#[inline]
pub fn hard_clip_value(v: f64, threshold: f64) -> f64 {
    if v.abs() <= threshold {
        v
    } else {
        threshold.copysign(v)
    }
}

/// Normalized tanh: unit slope at zero, ceiling `threshold`.
#[inline]
pub fn tanh_clip_value(v: f64, threshold: f64) -> f64 {
    threshold * (v / threshold).tanh()
}

pub fn hard_clip(x: &Signal, spec: &DistortionSpec) -> Result<Signal> {
    expect_kind(spec, EffectKind::HardClip)?;
    let g = spec.linear_gain();
    let t = spec.clip_threshold;
    Ok(Signal::from_parts(
        x.samples().iter().map(|&s| hard_clip_value(s * g, t)).collect(),
        x.sample_rate(),
    ))
}

/// Clips `x` at `threshold` with no gain stage.
pub fn clip_at_threshold(x: &Signal, threshold: f64) -> Signal {
    Signal::from_parts(
        x.samples()
            .iter()
            .map(|&s| hard_clip_value(s, threshold))
            .collect(),
        x.sample_rate(),
    )
}

pub fn tanh_clip(x: &Signal, spec: &DistortionSpec) -> Result<Signal> {
    expect_kind(spec, EffectKind::TanhClip)?;
    let g = spec.linear_gain();
    let t = spec.clip_threshold;
    Ok(Signal::from_parts(
        x.samples().iter().map(|&s| tanh_clip_value(s * g, t)).collect(),
        x.sample_rate(),
    ))
}

/// Constants of the overdrive emulation, transcribed from SoX's
/// `overdrive` effect.
pub mod overdrive {
    /// Colour parameter is divided by this before being added as bias.
    pub const COLOUR_DIVISOR: f64 = 200.0;
    /// Pole of the one-pole DC blocker.
    pub const DC_POLE: f64 = 0.995;
    pub const DRY_MIX: f64 = 0.5;
    pub const WET_MIX: f64 = 0.75;

    /// Saturation level, the cubic evaluated at 1 so the curve stays
    /// monotone in floating point.
    pub const SATURATION: f64 = 1.0 - 1.0 / 3.0;

    /// Cubic soft clipper `v - v^3/3`, saturating at `±2/3` outside `[-1, 1]`.
    #[inline]
    pub fn cubic_shaper(v: f64) -> f64 {
        if v < -1.0 {
            -SATURATION
        } else if v > 1.0 {
            SATURATION
        } else {
            v - v * v * v / 3.0
        }
    }
}

/// Overdrive with explicit mix weights; the public effect uses
/// [`overdrive::DRY_MIX`] and [`overdrive::WET_MIX`].
pub(crate) fn sox_overdrive_mixed(x: &Signal, spec: &DistortionSpec, dry: f64, wet: f64) -> Signal {
    let g = spec.linear_gain();
    let bias = spec.colour / overdrive::COLOUR_DIVISOR;
    let mut last_in = 0.0;
    let mut last_out = 0.0;
    let out = x
        .samples()
        .iter()
        .map(|&d0| {
            let d = overdrive::cubic_shaper(d0 * g + bias);
            last_out = d - last_in + overdrive::DC_POLE * last_out;
            last_in = d;
            d0 * dry + last_out * wet
        })
        .collect();
    Signal::from_parts(out, x.sample_rate())
}

/// Overdrive emulation: gain, colour bias, cubic soft clipper, DC blocker,
/// and a fixed internal dry/wet mix.
pub fn sox_overdrive(x: &Signal, spec: &DistortionSpec) -> Result<Signal> {
    expect_kind(spec, EffectKind::SoxOverdrive)?;
    Ok(sox_overdrive_mixed(
        x,
        spec,
        overdrive::DRY_MIX,
        overdrive::WET_MIX,
    ))
}

/// `alpha * wet + (1 - alpha) * dry`, exact at both endpoints.
pub fn blend(dry: &Signal, wet: &Signal, alpha: f64) -> Result<Signal> {
    dry.check_compatible(wet)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "blend weight must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(dry.clone());
    }
    if alpha == 1.0 {
        return Ok(wet.clone());
    }
    let out = dry
        .samples()
        .iter()
        .zip(wet.samples())
        .map(|(&d, &w)| alpha * w + (1.0 - alpha) * d)
        .collect();
    Ok(Signal::from_parts(out, dry.sample_rate()))
}

/// Applies the effect described by `spec`.
pub fn apply(x: &Signal, spec: &DistortionSpec) -> Result<Signal> {
    spec.validate()?;
    match spec.kind {
        EffectKind::SoxOverdrive => sox_overdrive(x, spec),
        EffectKind::HardClip => blend(x, &hard_clip(x, spec)?, spec.wet_weight),
        EffectKind::TanhClip => blend(x, &tanh_clip(x, spec)?, spec.wet_weight),
    }
}
