//! Monophonic pitch estimation (YIN difference function with parabolic
//! refinement).

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

pub const MIN_SEGMENT_SECONDS: f64 = 0.05;
pub const MIN_F0: f64 = 50.0;
/// Absolute threshold on the cumulative-mean-normalized difference.
const YIN_THRESHOLD: f64 = 0.1;
/// Results below this confidence are reported unvoiced.
pub const VOICED_CONFIDENCE: f64 = 0.5;
/// Longest stretch of samples analysed; longer segments use their center.
const MAX_ANALYSIS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchEstimate {
    pub f0: f64,
    /// `1 - d'(τ)` at the chosen lag, clamped to `[0, 1]`.
    pub confidence: f64,
    pub voiced: bool,
}

pub fn detect_pitch(segment: &AudioBuffer) -> Result<PitchEstimate> {
    let sr = segment.sample_rate;
    let min_len = (MIN_SEGMENT_SECONDS * sr).floor() as usize;
    if segment.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "pitch detection needs at least {min_len} samples, got {}",
            segment.len()
        )));
    }
    let samples = if segment.len() > MAX_ANALYSIS {
        let start = (segment.len() - MAX_ANALYSIS) / 2;
        &segment.samples[start..start + MAX_ANALYSIS]
    } else {
        &segment.samples[..]
    };

    let tau_min = 2usize;
    let tau_max = ((sr / MIN_F0).ceil() as usize).min(samples.len() / 2);
    let width = samples.len() - tau_max;

    // Difference function d(τ) over a fixed window of `width` samples.
    let mut diff = vec![0.0; tau_max + 1];
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        *d = samples[..width]
            .iter()
            .zip(&samples[tau..tau + width])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }

    // Cumulative mean normalized difference d'(τ).
    let mut cmnd = vec![1.0; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    let unvoiced = PitchEstimate {
        f0: 0.0,
        confidence: 0.0,
        voiced: false,
    };
    if diff.iter().all(|&d| d == 0.0) {
        return Ok(unvoiced);
    }

    let mut best = None;
    let mut tau = tau_min;
    while tau < tau_max {
        if cmnd[tau] < YIN_THRESHOLD {
            while tau + 1 < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            best = Some(tau);
            break;
        }
        tau += 1;
    }
    let tau = match best {
        Some(t) => t,
        None => (tau_min..tau_max)
            .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
            .unwrap_or(tau_min),
    };

    let confidence = (1.0 - cmnd[tau]).clamp(0.0, 1.0);
    let refined = if tau > 1 && tau < tau_max {
        let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            tau as f64 + (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
        } else {
            tau as f64
        }
    } else {
        tau as f64
    };

    if confidence < VOICED_CONFIDENCE {
        return Ok(PitchEstimate {
            confidence,
            ..unvoiced
        });
    }
    Ok(PitchEstimate {
        f0: sr / refined,
        confidence,
        voiced: true,
    })
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

pub fn hz_to_midi(f: f64) -> f64 {
    69.0 + 12.0 * (f / 440.0).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const SR: f64 = 44_100.0;

    fn saw(f: f64, seconds: f64) -> AudioBuffer {
        let n = (seconds * SR) as usize;
        AudioBuffer::new(
            (0..n).map(|i| 2.0 * (f * i as f64 / SR).fract() - 1.0).collect(),
            SR,
        )
    }

    #[test]
    fn saw_pitches() {
        for f in [221.0, 278.0, 295.0, 110.0, 880.0] {
            let p = detect_pitch(&saw(f, 0.15)).unwrap();
            assert!(p.voiced);
            assert!((p.f0 - f).abs() / f < 0.01, "{f}: {}", p.f0);
            assert!(p.confidence > 0.9);
        }
    }

    #[test]
    fn sine_pitch() {
        let b = AudioBuffer::new(
            (0..4410).map(|i| (2.0 * PI * 440.0 * i as f64 / SR).sin()).collect(),
            SR,
        );
        let p = detect_pitch(&b).unwrap();
        assert!((p.f0 - 440.0).abs() < 2.0, "{}", p.f0);
    }

    #[test]
    fn noise_is_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = AudioBuffer::new((0..6615).map(|_| rng.random_range(-1.0..1.0)).collect(), SR);
        let p = detect_pitch(&b).unwrap();
        assert!(!p.voiced, "{p:?}");
    }

    #[test]
    fn silence_is_unvoiced() {
        assert!(!detect_pitch(&AudioBuffer::silence(4410, SR)).unwrap().voiced);
    }

    #[test]
    fn short_segment_is_rejected() {
        assert!(detect_pitch(&saw(221.0, 0.02)).is_err());
    }

    #[test]
    fn midi_conversions() {
        assert!((midi_to_hz(57.0) - 220.0).abs() < 1e-9);
        assert!((hz_to_midi(261.625_565) - 60.0).abs() < 1e-6);
    }
}
