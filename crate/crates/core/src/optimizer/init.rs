//! Starting point derived from target features.

use crate::dsp::features::FeatureSummary;
use crate::params::{ParamId, ParamVector, Tier};

/// Even/odd ratio separating saw-like from pulse-like targets.
pub const OSC_THRESHOLD: f64 = 0.15;
/// Softness of the saw/pulse blend around the threshold.
const OSC_BLEND_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub x: ParamVector,
    /// Set when the target had no pitch and the neutral vector was used.
    pub fallback: bool,
}

pub fn spectral_init(features: &FeatureSummary, tier: Tier) -> InitResult {
    let dim = tier.dimension();
    let mut x = vec![0.5; dim];
    if features.f0.is_none() {
        return InitResult {
            x: ParamVector::filled(dim, 0.5),
            fallback: true,
        };
    }
    let mut put = |id: ParamId, v: f64| {
        if let Some(i) = tier.index_of(id) {
            x[i] = v.clamp(0.0, 1.0);
        }
    };
    let t = 1.0 / (1.0 + (-(features.even_odd_ratio - OSC_THRESHOLD) / OSC_BLEND_WIDTH).exp());
    put(ParamId::OscSaw, 0.2 + 0.6 * t);
    put(ParamId::OscPulse, 0.2 + 0.6 * (1.0 - t));
    put(ParamId::OscNoise, 2.0 * features.flatness);
    put(ParamId::OutputGain, 1.5 * features.rms);
    let cutoff = tier.spec(ParamId::Cutoff);
    let rolloff = features.rolloff_95.clamp(cutoff.min, cutoff.max);
    put(ParamId::Cutoff, cutoff.to_unit(rolloff).0);
    InitResult {
        x: ParamVector::clamped(x),
        fallback: false,
    }
}
