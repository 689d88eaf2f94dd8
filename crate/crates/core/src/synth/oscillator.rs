use std::f64::consts::TAU;

/// Detune layout of the unison voices.
#[derive(Debug, Clone, PartialEq)]
pub struct UnisonLayout {
    /// Symmetric offsets in `[-1, 1]`, summing to zero.
    pub offsets: Vec<f64>,
    /// Frequency ratio of each voice, `2^((detune + spread·offset) / 12)`.
    pub ratios: Vec<f64>,
}

impl UnisonLayout {
    pub fn new(voices: usize, detune: f64, spread: f64) -> Self {
        let voices = voices.max(1);
        let offsets: Vec<f64> = if voices == 1 {
            vec![0.0]
        } else {
            (0..voices)
                .map(|i| -1.0 + 2.0 * i as f64 / (voices - 1) as f64)
                .collect()
        };
        let ratios = offsets
            .iter()
            .map(|o| 2f64.powf((detune + spread * o) / 12.0))
            .collect();
        UnisonLayout { offsets, ratios }
    }
}

/// Rational (Padé 7/6) approximation of `tanh`, exact to about 1e-4 and
/// saturating at ±1.
#[inline]
pub fn fast_tanh(x: f64) -> f64 {
    if x > 4.97 {
        return 1.0;
    }
    if x < -4.97 {
        return -1.0;
    }
    let x2 = x * x;
    let num = x * (135_135.0 + x2 * (17_325.0 + x2 * (378.0 + x2)));
    let den = 135_135.0 + x2 * (62_370.0 + x2 * (3150.0 + 28.0 * x2));
    (num / den).clamp(-1.0, 1.0)
}

/// Counter-based uniform noise in `[-1, 1)`: a pure function of
/// `(seed, stream, index)`, so any rendering order yields the same samples.
#[inline]
pub fn noise_sample(seed: u64, stream: u64, index: u64) -> f64 {
    let mut z = seed
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 * (2.0 / (1u64 << 53) as f64) - 1.0
}

pub(crate) const NOISE_OSC_STREAM: u64 = 1;
pub(crate) const NOISE_FLOOR_STREAM: u64 = 2;
pub(crate) const REVERB_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscMix {
    pub saw: f64,
    pub pulse: f64,
    pub sine: f64,
    pub noise: f64,
}

/// Vibrato rate in Hz.
pub const VIBRATO_RATE: f64 = 5.0;

/// Sums the unison stack of saw, pulse and sine voices plus the noise
/// oscillator into `out`. All voices start at phase 0.
#[allow(clippy::too_many_arguments)]
pub fn oscillators(
    out: &mut [f64],
    f0: f64,
    layout: &UnisonLayout,
    mix: OscMix,
    pulse_width: f64,
    vibrato_depth: f64,
    sample_rate: f64,
    seed: u64,
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let pulse_threshold = (pulse_width * TAU).sin();
    let voice_scale = 1.0 / layout.ratios.len() as f64;
    let tonal = mix.saw != 0.0 || mix.pulse != 0.0 || mix.sine != 0.0;

    if tonal {
        for &ratio in &layout.ratios {
            let freq = f0 * ratio;
            if vibrato_depth == 0.0 {
                // Constant frequency: rotate (cos, sin) instead of calling sin().
                let inc = TAU * freq / sample_rate;
                let (rot_s, rot_c) = inc.sin_cos();
                let (mut s, mut c) = (0.0f64, 1.0f64);
                let mut phase = 0.0;
                for o in out.iter_mut() {
                    let saw = phase / std::f64::consts::PI - 1.0;
                    let mut v = mix.saw * saw + mix.sine * s;
                    if mix.pulse != 0.0 {
                        v += mix.pulse * fast_tanh(20.0 * (s - pulse_threshold));
                    }
                    *o += v * voice_scale;
                    phase += inc;
                    if phase >= TAU {
                        phase -= TAU;
                    }
                    let ns = s * rot_c + c * rot_s;
                    c = c * rot_c - s * rot_s;
                    s = ns;
                }
            } else {
                let mut phase = 0.0f64;
                for (i, o) in out.iter_mut().enumerate() {
                    let t = i as f64 / sample_rate;
                    let s = phase.sin();
                    let saw = phase / std::f64::consts::PI - 1.0;
                    let mut v = mix.saw * saw + mix.sine * s;
                    if mix.pulse != 0.0 {
                        v += mix.pulse * fast_tanh(20.0 * (s - pulse_threshold));
                    }
                    *o += v * voice_scale;
                    let bend = 2f64.powf(vibrato_depth * (TAU * VIBRATO_RATE * t).sin() / 12.0);
                    phase += TAU * freq * bend / sample_rate;
                    phase = phase.rem_euclid(TAU);
                }
            }
        }
    }

    if mix.noise != 0.0 {
        for (i, o) in out.iter_mut().enumerate() {
            *o += mix.noise * noise_sample(seed, NOISE_OSC_STREAM, i as u64);
        }
    }
}
