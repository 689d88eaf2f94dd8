//! Synthesizer parameter space.
//!
//! Every parameter has a physical range and a scale. The optimizer works in
//! normalized coordinates (`[0, 1]` per parameter), the synthesizer works in
//! physical units. A [`Tier`] selects which parameters are free; parameters
//! outside the tier stay at their defaults.

mod preset;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use preset::{
    load_preset, parse_preset, save_preset, Preset, PresetMetadata, PRESET_FORMAT_VERSION,
};

/// Parameter tiers of increasing expressiveness.
///
/// Labels follow the ablation table (15, 18, 24, 28, 29 parameters). The
/// largest tier actually carries 31 free parameters: it adds distortion drive,
/// delay feedback and vibrato depth on top of the 28-parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    T15,
    T18,
    T24,
    T28,
    T29,
}

impl Tier {
    pub const ALL: [Tier; 5] = [Tier::T15, Tier::T18, Tier::T24, Tier::T28, Tier::T29];

    pub fn label(self) -> &'static str {
        match self {
            Tier::T15 => "t15",
            Tier::T18 => "t18",
            Tier::T24 => "t24",
            Tier::T28 => "t28",
            Tier::T29 => "t29",
        }
    }

    pub fn from_label(label: &str) -> Result<Tier> {
        let l = label.trim().to_ascii_lowercase();
        Tier::ALL
            .into_iter()
            .find(|t| t.label() == l)
            .ok_or_else(|| Error::UnknownTier(label.to_string()))
    }

    /// Free parameters of the tier, in canonical order.
    pub fn params(self) -> &'static [ParamId] {
        match self {
            Tier::T15 => &T15_PARAMS,
            Tier::T18 => &T18_PARAMS,
            Tier::T24 => &T24_PARAMS,
            Tier::T28 => &T28_PARAMS,
            Tier::T29 => &T29_PARAMS,
        }
    }

    pub fn dimension(self) -> usize {
        self.params().len()
    }

    pub fn from_dimension(dim: usize) -> Result<Tier> {
        Tier::ALL
            .into_iter()
            .find(|t| t.dimension() == dim)
            .ok_or(Error::UnknownDimension(dim))
    }

    pub fn contains(self, id: ParamId) -> bool {
        self.index_of(id).is_some()
    }

    pub fn index_of(self, id: ParamId) -> Option<usize> {
        self.params().iter().position(|&p| p == id)
    }

    /// Range specification of `id` within this tier.
    ///
    /// The ranges are identical across tiers except detune, which the
    /// unconstrained top tier opens to two octaves either way.
    pub fn spec(self, id: ParamId) -> ParamSpec {
        let mut spec = id.base_spec();
        if self == Tier::T29 && id == ParamId::Detune {
            spec.min = -24.0;
            spec.max = 24.0;
        }
        spec
    }

    pub fn specs(self) -> Vec<ParamSpec> {
        self.params().iter().map(|&id| self.spec(id)).collect()
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tier::from_label(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    OscSaw,
    OscPulse,
    OscSine,
    OscNoise,
    Detune,
    Cutoff,
    Resonance,
    Slope,
    FilterAttack,
    FilterDecay,
    FilterSustain,
    FilterRelease,
    AmpAttack,
    AmpDecay,
    AmpSustain,
    AmpRelease,
    Eq1Freq,
    Eq1Gain,
    Eq2Freq,
    Eq2Gain,
    PulseWidth,
    UnisonVoices,
    UnisonSpread,
    NoiseFloor,
    ReverbSize,
    ReverbMix,
    FilterEnvAmount,
    OutputGain,
    Drive,
    DelayFeedback,
    VibratoDepth,
}

use ParamId::*;

const T15_PARAMS: [ParamId; 15] = [
    OscSaw,
    OscPulse,
    OscSine,
    OscNoise,
    Detune,
    Cutoff,
    Resonance,
    AmpAttack,
    AmpDecay,
    AmpSustain,
    AmpRelease,
    ReverbSize,
    ReverbMix,
    FilterEnvAmount,
    OutputGain,
];

const T18_PARAMS: [ParamId; 18] = [
    OscSaw,
    OscPulse,
    OscSine,
    OscNoise,
    Detune,
    Cutoff,
    Resonance,
    AmpAttack,
    AmpDecay,
    AmpSustain,
    AmpRelease,
    UnisonVoices,
    UnisonSpread,
    NoiseFloor,
    ReverbSize,
    ReverbMix,
    FilterEnvAmount,
    OutputGain,
];

const T24_PARAMS: [ParamId; 24] = [
    OscSaw,
    OscPulse,
    OscSine,
    OscNoise,
    Detune,
    Cutoff,
    Resonance,
    Slope,
    FilterAttack,
    FilterDecay,
    FilterSustain,
    FilterRelease,
    AmpAttack,
    AmpDecay,
    AmpSustain,
    AmpRelease,
    PulseWidth,
    UnisonVoices,
    UnisonSpread,
    NoiseFloor,
    ReverbSize,
    ReverbMix,
    FilterEnvAmount,
    OutputGain,
];

const T28_PARAMS: [ParamId; 28] = [
    OscSaw,
    OscPulse,
    OscSine,
    OscNoise,
    Detune,
    Cutoff,
    Resonance,
    Slope,
    FilterAttack,
    FilterDecay,
    FilterSustain,
    FilterRelease,
    AmpAttack,
    AmpDecay,
    AmpSustain,
    AmpRelease,
    Eq1Freq,
    Eq1Gain,
    Eq2Freq,
    Eq2Gain,
    PulseWidth,
    UnisonVoices,
    UnisonSpread,
    NoiseFloor,
    ReverbSize,
    ReverbMix,
    FilterEnvAmount,
    OutputGain,
];

const T29_PARAMS: [ParamId; 31] = [
    OscSaw,
    OscPulse,
    OscSine,
    OscNoise,
    Detune,
    Cutoff,
    Resonance,
    Slope,
    FilterAttack,
    FilterDecay,
    FilterSustain,
    FilterRelease,
    AmpAttack,
    AmpDecay,
    AmpSustain,
    AmpRelease,
    Eq1Freq,
    Eq1Gain,
    Eq2Freq,
    Eq2Gain,
    PulseWidth,
    UnisonVoices,
    UnisonSpread,
    NoiseFloor,
    ReverbSize,
    ReverbMix,
    FilterEnvAmount,
    OutputGain,
    Drive,
    DelayFeedback,
    VibratoDepth,
];

impl ParamId {
    pub const ALL: [ParamId; 31] = T29_PARAMS;

    pub fn name(self) -> &'static str {
        match self {
            OscSaw => "osc_mix_saw",
            OscPulse => "osc_mix_pulse",
            OscSine => "osc_mix_sine",
            OscNoise => "osc_mix_noise",
            Detune => "detune",
            Cutoff => "cutoff",
            Resonance => "resonance",
            Slope => "slope",
            FilterAttack => "filter_attack",
            FilterDecay => "filter_decay",
            FilterSustain => "filter_sustain",
            FilterRelease => "filter_release",
            AmpAttack => "amp_attack",
            AmpDecay => "amp_decay",
            AmpSustain => "amp_sustain",
            AmpRelease => "amp_release",
            Eq1Freq => "eq1_freq",
            Eq1Gain => "eq1_gain",
            Eq2Freq => "eq2_freq",
            Eq2Gain => "eq2_gain",
            PulseWidth => "pulse_width",
            UnisonVoices => "unison_voices",
            UnisonSpread => "unison_spread",
            NoiseFloor => "noise_floor",
            ReverbSize => "reverb_size",
            ReverbMix => "reverb_mix",
            FilterEnvAmount => "filter_env_amount",
            OutputGain => "output_gain",
            Drive => "drive",
            DelayFeedback => "delay_feedback",
            VibratoDepth => "vibrato_depth",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Value used when the parameter is not free in the active tier.
    pub fn default_value(self) -> f64 {
        match self {
            OscSaw => 1.0,
            OscPulse | OscSine | OscNoise => 0.0,
            Detune => 0.0,
            Cutoff => 4000.0,
            Resonance => 0.0,
            Slope => 12.0,
            FilterAttack => 0.005,
            FilterDecay => 0.1,
            FilterSustain => 0.5,
            FilterRelease => 0.1,
            AmpAttack => 0.005,
            AmpDecay => 0.1,
            AmpSustain => 0.7,
            AmpRelease => 0.05,
            Eq1Freq => 1000.0,
            Eq1Gain => 0.0,
            Eq2Freq => 5000.0,
            Eq2Gain => 0.0,
            PulseWidth => 0.5,
            UnisonVoices => 1.0,
            UnisonSpread => 0.0,
            NoiseFloor => 0.0,
            ReverbSize => 0.0,
            ReverbMix => 0.0,
            FilterEnvAmount => 0.0,
            OutputGain => 0.5,
            Drive => 1.0,
            DelayFeedback => 0.0,
            VibratoDepth => 0.0,
        }
    }

    fn base_spec(self) -> ParamSpec {
        let (min, max, scale, unit) = match self {
            OscSaw | OscPulse | OscSine | OscNoise => (0.0, 1.0, Scale::Linear, ""),
            Detune => (-2.0, 2.0, Scale::Linear, "st"),
            Cutoff => (20.0, 16_000.0, Scale::Log, "Hz"),
            Resonance => (0.0, 1.0, Scale::Linear, ""),
            Slope => (4.0, 48.0, Scale::Linear, ""),
            FilterAttack | FilterDecay | FilterRelease | AmpAttack | AmpDecay | AmpRelease => {
                (0.001, 2.0, Scale::Log, "s")
            }
            FilterSustain | AmpSustain => (0.0, 1.0, Scale::Linear, ""),
            Eq1Freq | Eq2Freq => (200.0, 10_000.0, Scale::Log, "Hz"),
            Eq1Gain | Eq2Gain => (-6.0, 6.0, Scale::Linear, "dB"),
            PulseWidth => (0.05, 0.95, Scale::Linear, ""),
            UnisonVoices => (1.0, 7.0, Scale::Linear, "voices"),
            UnisonSpread => (0.0, 0.5, Scale::Linear, "st"),
            NoiseFloor => (0.0, 0.2, Scale::Linear, ""),
            ReverbSize => (0.0, 1.0, Scale::Linear, ""),
            ReverbMix => (0.0, 0.5, Scale::Linear, ""),
            FilterEnvAmount => (0.0, 2.0, Scale::Linear, ""),
            OutputGain => (0.0, 1.0, Scale::Linear, ""),
            Drive => (1.0, 20.0, Scale::Linear, ""),
            DelayFeedback => (0.0, 0.95, Scale::Linear, ""),
            VibratoDepth => (0.0, 1.0, Scale::Linear, "st"),
        };
        ParamSpec {
            id: self,
            min,
            max,
            scale,
            unit,
            integer: self == UnisonVoices,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub id: ParamId,
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
    pub unit: &'static str,
    /// Rounded to the nearest integer after denormalization.
    pub integer: bool,
}

impl ParamSpec {
    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    /// Maps a unit coordinate to physical units.
    pub fn to_physical(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let v = match self.scale {
            Scale::Linear => self.min + x * (self.max - self.min),
            Scale::Log => self.min * (self.max / self.min).powf(x),
        };
        let v = if self.integer { v.round() } else { v };
        v.clamp(self.min, self.max)
    }

    /// Maps a physical value to its unit coordinate. The flag reports whether
    /// the value had to be clamped into range.
    pub fn to_unit(&self, v: f64) -> (f64, bool) {
        if !v.is_finite() {
            return (0.0, true);
        }
        let clamped = v < self.min || v > self.max;
        let v = v.clamp(self.min, self.max);
        let x = match self.scale {
            Scale::Linear => (v - self.min) / (self.max - self.min),
            Scale::Log => (v / self.min).ln() / (self.max / self.min).ln(),
        };
        (x.clamp(0.0, 1.0), clamped)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// A point of the optimizer's search space: one coordinate in `[0, 1]` per
/// free parameter of a tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfUnitRange { index, value });
        }
        Ok(ParamVector(values))
    }

    /// Builds a vector, clamping every entry into `[0, 1]` (NaN maps to 0).
    pub fn clamped(values: Vec<f64>) -> Self {
        ParamVector(
            values
                .into_iter()
                .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
                .collect(),
        )
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        ParamVector(vec![value.clamp(0.0, 1.0); dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn tier(&self) -> Result<Tier> {
        Tier::from_dimension(self.0.len())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Physical parameter values for one tier, stored in the tier's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    tier: Tier,
    values: Vec<f64>,
}

impl Patch {
    /// A patch with every free parameter at its default value.
    pub fn defaults(tier: Tier) -> Self {
        let values = tier.params().iter().map(|p| p.default_value()).collect();
        Patch { tier, values }
    }

    /// Builds a patch from physical values in canonical order, validating ranges.
    pub fn from_values(tier: Tier, values: Vec<f64>) -> Result<Self> {
        if values.len() != tier.dimension() {
            return Err(Error::DimensionMismatch {
                tier: tier.label(),
                expected: tier.dimension(),
                got: values.len(),
            });
        }
        for (spec, &v) in tier.specs().iter().zip(&values) {
            if !spec.contains(v) {
                return Err(Error::InvalidArgument(format!(
                    "{} = {v} outside [{}, {}]",
                    spec.name(),
                    spec.min,
                    spec.max
                )));
            }
        }
        Ok(Patch { tier, values })
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of `id` if it is free in this patch's tier.
    pub fn get(&self, id: ParamId) -> Option<f64> {
        self.tier.index_of(id).map(|i| self.values[i])
    }

    /// Value of `id`, falling back to its default when the tier fixes it.
    pub fn value(&self, id: ParamId) -> f64 {
        self.get(id).unwrap_or_else(|| id.default_value())
    }

    pub fn set(&mut self, id: ParamId, value: f64) -> Result<()> {
        let i = self
            .tier
            .index_of(id)
            .ok_or(Error::ParamNotInTier(id.name(), self.tier.label()))?;
        let spec = self.tier.spec(id);
        if !spec.contains(value) {
            return Err(Error::InvalidArgument(format!(
                "{id} = {value} outside [{}, {}]",
                spec.min, spec.max
            )));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn with(mut self, id: ParamId, value: f64) -> Result<Self> {
        self.set(id, value)?;
        Ok(self)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, f64)> + '_ {
        self.tier.params().iter().copied().zip(self.values.iter().copied())
    }

    /// Re-expresses the patch in another tier: shared parameters are copied,
    /// parameters new to `tier` take their defaults.
    pub fn to_tier(&self, tier: Tier) -> Patch {
        let values = tier
            .params()
            .iter()
            .map(|&id| {
                let spec = tier.spec(id);
                self.value(id).clamp(spec.min, spec.max)
            })
            .collect();
        Patch { tier, values }
    }
}

/// Serialized as `{"tier": "t24", "params": {"osc_saw": 1.0, ...}}`.
impl Serialize for Patch {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        struct Params<'a>(&'a Patch);
        impl Serialize for Params<'_> {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                serializer.collect_map(self.0.iter().map(|(id, v)| (id.name(), v)))
            }
        }
        let mut s = serializer.serialize_struct("Patch", 2)?;
        s.serialize_field("tier", &self.tier)?;
        s.serialize_field("params", &Params(self))?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for Patch {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            tier: Tier,
            params: std::collections::HashMap<String, f64>,
        }
        let repr = Repr::deserialize(deserializer)?;
        for name in repr.params.keys() {
            match ParamId::from_name(name) {
                Some(id) if repr.tier.contains(id) => {}
                _ => return Err(D::Error::custom(format!("unknown parameter `{name}`"))),
            }
        }
        let values = repr
            .tier
            .params()
            .iter()
            .map(|id| {
                repr.params
                    .get(id.name())
                    .copied()
                    .ok_or_else(|| D::Error::custom(format!("missing parameter `{}`", id.name())))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Patch::from_values(repr.tier, values).map_err(D::Error::custom)
    }
}

/// Result of [`normalize`]: the coordinates plus the parameters that were
/// clamped into range on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub vector: ParamVector,
    pub clamped: Vec<ParamId>,
}

impl Normalized {
    pub fn was_clamped(&self) -> bool {
        !self.clamped.is_empty()
    }
}

/// Maps unit coordinates to physical values for `tier`.
pub fn denormalize(v: &ParamVector, tier: Tier) -> Result<Patch> {
    if v.len() != tier.dimension() {
        return Err(Error::DimensionMismatch {
            tier: tier.label(),
            expected: tier.dimension(),
            got: v.len(),
        });
    }
    let values = tier
        .params()
        .iter()
        .zip(v.as_slice())
        .map(|(&id, &x)| tier.spec(id).to_physical(x))
        .collect();
    Ok(Patch { tier, values })
}

pub fn normalize(p: &Patch) -> Normalized {
    let mut clamped = Vec::new();
    let coords = p
        .iter()
        .map(|(id, v)| {
            let (x, c) = p.tier.spec(id).to_unit(v);
            if c {
                clamped.push(id);
            }
            x
        })
        .collect();
    Normalized {
        vector: ParamVector(coords),
        clamped,
    }
}

/// Builds a patch without range validation, for callers that clamp later via
/// [`normalize`].
pub fn patch_unchecked(tier: Tier, values: Vec<f64>) -> Result<Patch> {
    if values.len() != tier.dimension() {
        return Err(Error::DimensionMismatch {
            tier: tier.label(),
            expected: tier.dimension(),
            got: values.len(),
        });
    }
    Ok(Patch { tier, values })
}
