use std::f64::consts::TAU;

use realfft::num_complex::Complex;

use super::oscillator::{noise_sample, REVERB_STREAM};
use crate::audio::AudioBuffer;
use crate::dsp::spectrum::Fft;

/// Reverb tail length in seconds for a given size.
pub fn reverb_length(size: f64) -> f64 {
    0.05 + 0.45 * size.clamp(0.0, 1.0)
}

/// Seeded white noise with an exponential decay reaching -60 dB at the end,
/// scaled to unit energy.
pub fn reverb_impulse(size: f64, seed: u64, sample_rate: f64) -> Vec<f64> {
    let len = ((reverb_length(size) * sample_rate).round() as usize).max(1);
    let rate = 60.0 / 20.0 * std::f64::consts::LN_10 / len as f64;
    let step = (-rate).exp();
    let mut decay = 1.0;
    let mut ir: Vec<f64> = (0..len)
        .map(|i| {
            let v = noise_sample(seed, REVERB_STREAM, i as u64) * decay;
            decay *= step;
            v
        })
        .collect();
    let energy = ir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if energy > 0.0 {
        ir.iter_mut().for_each(|v| *v /= energy);
    }
    ir
}

/// Buffers reused across reverb calls.
#[derive(Default)]
pub struct ConvScratch {
    a: Vec<f64>,
    b: Vec<f64>,
    fa: Vec<Complex<f64>>,
    fb: Vec<Complex<f64>>,
    /// (size, seed, sample rate, transform size) of the impulse held in `fb`.
    cached: Option<(u64, u64, u64, usize)>,
}

/// Mixes `signal` with its convolution by the reverb impulse, in place.
pub fn reverb_into(
    fft: &mut Fft,
    scratch: &mut ConvScratch,
    signal: &mut [f64],
    size: f64,
    mix: f64,
    seed: u64,
    sample_rate: f64,
) {
    if mix == 0.0 || signal.is_empty() {
        return;
    }
    let n = signal.len();
    // Only the first `n` output samples are kept, so only the first `n`
    // impulse samples can reach them.
    let ir_len = ((reverb_length(size) * sample_rate).round() as usize).clamp(1, n);
    let m = (n + ir_len - 1).next_power_of_two();
    let key = (size.to_bits(), seed, sample_rate.to_bits(), m);
    if scratch.cached != Some(key) {
        let ir = reverb_impulse(size, seed, sample_rate);
        scratch.b.clear();
        scratch.b.extend_from_slice(&ir[..ir_len]);
        scratch.b.resize(m, 0.0);
        scratch.fb.resize(m / 2 + 1, Complex::default());
        fft.forward(&mut scratch.b, &mut scratch.fb);
        scratch.cached = Some(key);
    }
    scratch.a.clear();
    scratch.a.extend_from_slice(signal);
    scratch.a.resize(m, 0.0);
    scratch.fa.resize(m / 2 + 1, Complex::default());
    fft.forward(&mut scratch.a, &mut scratch.fa);
    for (x, h) in scratch.fa.iter_mut().zip(&scratch.fb) {
        *x *= *h;
    }
    fft.inverse(&mut scratch.fa, &mut scratch.a);
    let scale = 1.0 / m as f64;
    for (s, w) in signal.iter_mut().zip(&scratch.a) {
        *s = (1.0 - mix) * *s + mix * w * scale;
    }
}

pub fn reverb(buf: &AudioBuffer, size: f64, mix: f64, seed: u64) -> AudioBuffer {
    let mut out = buf.samples.clone();
    reverb_into(
        &mut Fft::new(),
        &mut ConvScratch::default(),
        &mut out,
        size,
        mix,
        seed,
        buf.sample_rate,
    );
    AudioBuffer::new(out, buf.sample_rate)
}

pub fn distortion_into(signal: &mut [f64], drive: f64) {
    signal.iter_mut().for_each(|x| *x = (drive * *x).tanh());
}

/// Feedback delay time: an eighth note at 100 BPM.
pub const DELAY_SECONDS: f64 = 0.3;

/// Single feedback tap: `y[i] = x[i] + feedback * y[i - D]`.
pub fn delay_into(signal: &mut [f64], feedback: f64, sample_rate: f64) {
    if feedback == 0.0 {
        return;
    }
    let d = (DELAY_SECONDS * sample_rate).round() as usize;
    for i in d..signal.len() {
        signal[i] += feedback * signal[i - d];
    }
}

/// `Σ c_k T_k(x)` for k = 1..5 with the input clamped to `[-1, 1]`.
pub fn chebyshev_waveshape(buf: &AudioBuffer, coeffs: [f64; 5]) -> AudioBuffer {
    let samples = buf
        .samples
        .iter()
        .map(|&x| {
            let x = x.clamp(-1.0, 1.0);
            let (mut t_prev, mut t) = (1.0, x);
            let mut y = coeffs[0] * t;
            for c in &coeffs[1..] {
                let next = 2.0 * x * t - t_prev;
                t_prev = t;
                t = next;
                y += c * t;
            }
            y
        })
        .collect();
    AudioBuffer::new(samples, buf.sample_rate)
}

/// Two-operator FM: `sin(2π f0 t + index · sin(2π ratio f0 t))`.
pub fn fm_operator(f0: f64, ratio: f64, index: f64, n: usize, sample_rate: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            (TAU * f0 * t + index * (TAU * ratio * f0 * t).sin()).sin()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::features::HarmonicSpectrum;

    const SR: f64 = 44_100.0;

    fn sine(f: f64, n: usize) -> AudioBuffer {
        AudioBuffer::new((0..n).map(|i| (TAU * f * i as f64 / SR).sin()).collect(), SR)
    }

    #[test]
    fn reverb_mix_zero_is_identity() {
        let dry = sine(440.0, 4410);
        let wet = reverb(&dry, 0.7, 0.0, 9);
        assert_eq!(dry.samples, wet.samples);
    }

    #[test]
    fn reverb_fills_the_tail() {
        let mut samples = sine(440.0, 22_050).samples;
        samples[11_025..].iter_mut().for_each(|v| *v = 0.0);
        let dry = AudioBuffer::new(samples, SR);
        let wet = reverb(&dry, 1.0, 0.5, 3);
        let tail = |b: &AudioBuffer| crate::audio::rms(&b.samples[11_025 + 441..]);
        assert!(tail(&wet) > tail(&dry) + 1e-3, "{}", tail(&wet));
        assert_eq!(wet.samples, reverb(&dry, 1.0, 0.5, 3).samples);
        assert_ne!(wet.samples, reverb(&dry, 1.0, 0.5, 4).samples);
    }

    #[test]
    fn impulse_shape() {
        let ir = reverb_impulse(1.0, 1, SR);
        assert_eq!(ir.len(), (0.5 * SR) as usize);
        assert!((ir.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        let head = crate::audio::rms(&ir[..2000]);
        let tail = crate::audio::rms(&ir[ir.len() - 2000..]);
        assert!(20.0 * (tail / head).log10() < -50.0);
        assert_eq!(reverb_impulse(0.0, 1, SR).len(), (0.05 * SR).round() as usize);
    }

    #[test]
    fn delay_adds_echo() {
        let mut x = vec![0.0; 30_000];
        x[0] = 1.0;
        delay_into(&mut x, 0.5, SR);
        let d = (0.3 * SR) as usize;
        assert_eq!(x[d], 0.5);
        assert_eq!(x[2 * d], 0.25);
    }

    #[test]
    fn chebyshev_identity() {
        let xs: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 / 100.0).collect();
        let b = AudioBuffer::new(xs.clone(), SR);
        let y = chebyshev_waveshape(&b, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(y.samples, xs);
    }

    #[test]
    fn chebyshev_polynomials() {
        let b = AudioBuffer::new(vec![0.3], SR);
        let x: f64 = 0.3;
        let oracle = [
            x,
            2.0 * x * x - 1.0,
            4.0 * x.powi(3) - 3.0 * x,
            8.0 * x.powi(4) - 8.0 * x * x + 1.0,
            16.0 * x.powi(5) - 20.0 * x.powi(3) + 5.0 * x,
        ];
        for k in 0..5 {
            let mut c = [0.0; 5];
            c[k] = 1.0;
            let y = chebyshev_waveshape(&b, c).samples[0];
            assert!((y - oracle[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn chebyshev_selects_harmonic() {
        let f = 221.0;
        let x = sine(f, 16_384);
        for (k, c) in [(2usize, [0.0, 1.0, 0.0, 0.0, 0.0]), (3, [0.0, 0.0, 1.0, 0.0, 0.0])] {
            let y = chebyshev_waveshape(&x, c);
            let spec = HarmonicSpectrum::new(&y);
            let peaks: Vec<f64> = (1..=5).map(|h| spec.peak(h as f64 * f).unwrap()).collect();
            let strongest = (1..=5).max_by(|a, b| peaks[a - 1].total_cmp(&peaks[b - 1])).unwrap();
            assert_eq!(strongest, k);
        }
    }

    /// Bessel function of the first kind by its power series.
    fn bessel_j(k: i32, x: f64) -> f64 {
        if k < 0 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            return sign * bessel_j(-k, x);
        }
        let mut sum = 0.0;
        let mut fact_m = 1.0;
        for m in 0..30 {
            if m > 0 {
                fact_m *= m as f64;
            }
            let fact_mk: f64 = (1..=(m + k)).map(|v| v as f64).product();
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign / (fact_m * fact_mk) * (x / 2.0).powi(2 * m + k);
        }
        sum
    }

    #[test]
    fn fm_index_zero_is_sine() {
        let y = fm_operator(440.0, 2.0, 0.0, 1000, SR);
        let s = sine(440.0, 1000).samples;
        assert!(y.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn fm_sidebands_follow_bessel() {
        // With ratio 1 the sidebands at (1 + k)·f0 fold onto harmonic h:
        // sum of J_k(1) over k = h - 1, with negative frequencies reflected
        // and sign-flipped.
        let f0 = 441.0;
        let n = 44_100;
        let y = AudioBuffer::new(fm_operator(f0, 1.0, 1.0, n, SR), SR);
        let spec = HarmonicSpectrum::new(&y);
        let amp = |h: i32| {
            let mut a = bessel_j(h - 1, 1.0);
            if h > 0 {
                // Frequency -h·f0 reflects to +h·f0 with a sign flip.
                a -= bessel_j(-h - 1, 1.0);
            }
            a.abs()
        };
        let fund = spec.peak(f0).unwrap();
        let ratio0 = amp(1);
        for h in 2..=4 {
            let measured = spec.peak(h as f64 * f0).unwrap() / fund;
            let expected = amp(h) / ratio0;
            assert!(
                (measured - expected).abs() <= 0.02 * expected.max(0.05),
                "h{h}: {measured} vs {expected}"
            );
        }
    }

    #[test]
    fn fm_ratio_three_energy_lines() {
        let f0 = 441.0;
        let y = AudioBuffer::new(fm_operator(f0, 3.0, 2.0, 44_100, SR), SR);
        let spec = HarmonicSpectrum::new(&y);
        let total: f64 = (1..=20).map(|h| spec.peak(h as f64 * f0).unwrap().powi(2)).sum();
        let on: f64 = (1..=20)
            .filter(|h| (h - 1) % 3 == 0 || (h + 1) % 3 == 0)
            .map(|h| spec.peak(h as f64 * f0).unwrap().powi(2))
            .sum();
        assert!(on / total > 0.999, "{}", on / total);
    }
}
