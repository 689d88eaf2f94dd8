//! Spectral statistics used by the loss, the initializer and reports.

use serde::{Deserialize, Serialize};

use super::spectrum::{average_power, stft_with, Fft, Spectrogram, Window};
use crate::audio::{rms, AudioBuffer};
use crate::error::{Error, Result};

pub const ANALYSIS_FFT_SIZE: usize = 2048;
pub const ANALYSIS_HOP: usize = 512;

/// Frames whose time-domain RMS is at or below this are treated as silent.
pub const SILENCE_RMS: f64 = 1e-4;

/// Harmonic peaks are searched within ±3% of `k · f0`.
pub const HARMONIC_TOLERANCE: f64 = 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTrack {
    /// Per-frame centroid in Hz; `None` for silent frames.
    pub frames: Vec<Option<f64>>,
    /// Mean over non-silent frames, 0 when every frame is silent.
    pub mean: f64,
    pub silent: bool,
}

pub fn spectral_centroid(buf: &AudioBuffer) -> CentroidTrack {
    let mut fft = Fft::new();
    let spec = stft_with(&mut fft, buf, ANALYSIS_FFT_SIZE, ANALYSIS_HOP, Window::Hann)
        .expect("fixed power-of-two size");
    centroid_from_spectrogram(&spec, &buf.samples)
}

/// Centroid track of a spectrogram computed from `samples`, which are used to
/// classify frames as silent.
pub fn centroid_from_spectrogram(spec: &Spectrogram, samples: &[f64]) -> CentroidTrack {
    let frames: Vec<Option<f64>> = (0..spec.frames)
        .map(|f| {
            let start = (f * spec.hop).min(samples.len());
            let end = (start + spec.fft_size).min(samples.len());
            // Zero padding counts toward the frame length.
            let energy: f64 = samples[start..end].iter().map(|s| s * s).sum();
            let frame_rms = (energy / spec.fft_size as f64).sqrt();
            if frame_rms <= SILENCE_RMS {
                return None;
            }
            let mags = spec.frame(f);
            let (mut num, mut den) = (0.0, 0.0);
            for (k, &m) in mags.iter().enumerate() {
                num += spec.bin_hz(k) * m;
                den += m;
            }
            (den > 0.0).then(|| num / den)
        })
        .collect();
    let voiced: Vec<f64> = frames.iter().flatten().copied().collect();
    let silent = voiced.is_empty();
    let mean = if silent {
        0.0
    } else {
        voiced.iter().sum::<f64>() / voiced.len() as f64
    };
    CentroidTrack {
        frames,
        mean,
        silent,
    }
}

fn welch(buf: &AudioBuffer) -> (Vec<f64>, f64) {
    let mut fft = Fft::new();
    let spec = stft_with(&mut fft, buf, ANALYSIS_FFT_SIZE, ANALYSIS_HOP, Window::Hann)
        .expect("fixed power-of-two size");
    (
        average_power(&spec),
        buf.sample_rate / ANALYSIS_FFT_SIZE as f64,
    )
}

/// Lowest frequency below which `fraction` of the spectral energy lies.
pub fn spectral_rolloff(buf: &AudioBuffer, fraction: f64) -> f64 {
    let (power, bin_hz) = welch(buf);
    let total: f64 = power.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (k, p) in power.iter().enumerate() {
        acc += p;
        if acc >= fraction * total {
            return k as f64 * bin_hz;
        }
    }
    (power.len() - 1) as f64 * bin_hz
}

/// Geometric over arithmetic mean of the averaged power spectrum
/// (DC and Nyquist excluded). Silence reads 0.
pub fn spectral_flatness(buf: &AudioBuffer) -> f64 {
    let (power, _) = welch(buf);
    let interior = &power[1..power.len() - 1];
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let log_mean = interior.iter().map(|p| (p + 1e-30).ln()).sum::<f64>() / interior.len() as f64;
    (log_mean.exp() / mean).clamp(0.0, 1.0)
}

/// A single long Hann-windowed transform used for harmonic measurements.
pub struct HarmonicSpectrum {
    magnitudes: Vec<f64>,
    bin_hz: f64,
    nyquist: f64,
}

impl HarmonicSpectrum {
    pub fn new(buf: &AudioBuffer) -> Self {
        let n = buf.len().max(1);
        let size = (4 * n).next_power_of_two().max(16_384);
        let mut fft = Fft::new();
        let win = super::spectrum::hann_window(n);
        let mut input = vec![0.0; size];
        for (i, (s, w)) in buf.samples.iter().zip(&win).enumerate() {
            input[i] = s * w;
        }
        let mut out = vec![realfft::num_complex::Complex::default(); size / 2 + 1];
        fft.forward(&mut input, &mut out);
        let scale = 2.0 / win.iter().sum::<f64>().max(1e-300);
        HarmonicSpectrum {
            magnitudes: out.iter().map(|c| c.norm() * scale).collect(),
            bin_hz: buf.sample_rate / size as f64,
            nyquist: buf.sample_rate / 2.0,
        }
    }

    fn window(&self, freq: f64) -> Option<(usize, usize)> {
        let hi_f = freq * (1.0 + HARMONIC_TOLERANCE);
        if hi_f >= self.nyquist {
            return None;
        }
        let lo = (freq * (1.0 - HARMONIC_TOLERANCE) / self.bin_hz).ceil() as usize;
        let hi = (hi_f / self.bin_hz).floor() as usize;
        Some((lo.max(1), hi.min(self.magnitudes.len() - 2)))
    }

    /// Peak magnitude near `freq`, refined by quadratic interpolation.
    pub fn peak(&self, freq: f64) -> Option<f64> {
        let (lo, hi) = self.window(freq)?;
        let m = &self.magnitudes;
        let k = (lo..=hi).max_by(|&a, &b| m[a].total_cmp(&m[b]))?;
        let (a, b, c) = (m[k - 1], m[k], m[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() < 1e-300 {
            return Some(b);
        }
        let p = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        Some(b - 0.25 * (a - c) * p)
    }

    /// Energy (sum of squared magnitudes) within the tolerance window.
    pub fn band_energy(&self, freq: f64) -> Option<f64> {
        let (lo, hi) = self.window(freq)?;
        Some(self.magnitudes[lo..=hi].iter().map(|m| m * m).sum())
    }
}

/// Relative amplitudes of harmonics 1..=n, normalized so H1 = 1. Harmonics
/// whose search window reaches Nyquist are dropped.
pub fn harmonic_amplitudes(buf: &AudioBuffer, f0: f64, n: usize) -> Result<Vec<f64>> {
    if !(f0 > 0.0) {
        return Err(Error::InvalidArgument(format!("f0 = {f0}")));
    }
    let spec = HarmonicSpectrum::new(buf);
    Ok(harmonics_from(&spec, f0, n))
}

fn harmonics_from(spec: &HarmonicSpectrum, f0: f64, n: usize) -> Vec<f64> {
    let peaks: Vec<f64> = (1..=n).map_while(|k| spec.peak(k as f64 * f0)).collect();
    match peaks.first() {
        Some(&h1) if h1 > 0.0 => peaks.iter().map(|p| p / h1).collect(),
        _ => vec![0.0; peaks.len()],
    }
}

/// Highest harmonic considered by [`even_odd_ratio`].
pub const EVEN_ODD_MAX_HARMONIC: usize = 12;

/// Energy at even harmonics over energy at odd harmonics (fundamental
/// included), harmonics 1 through 12.
pub fn even_odd_ratio(buf: &AudioBuffer, f0: f64) -> Result<f64> {
    if !(f0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "even/odd ratio needs a positive f0, got {f0}"
        )));
    }
    let spec = HarmonicSpectrum::new(buf);
    Ok(even_odd_from(&spec, f0))
}

fn even_odd_from(spec: &HarmonicSpectrum, f0: f64) -> f64 {
    let (mut even, mut odd) = (0.0, 0.0);
    for k in 1..=EVEN_ODD_MAX_HARMONIC {
        let Some(e) = spec.band_energy(k as f64 * f0) else {
            break;
        };
        if k % 2 == 0 {
            even += e;
        } else {
            odd += e;
        }
    }
    if odd <= 0.0 {
        0.0
    } else {
        even / odd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub rolloff_95: f64,
    pub flatness: f64,
    pub even_odd_ratio: f64,
    pub rms: f64,
    pub centroid_mean: f64,
    pub harmonic_amps: Vec<f64>,
    /// Fundamental used for the harmonic measurements; `None` if unvoiced.
    pub f0: Option<f64>,
}

/// Features of a (voiced or unvoiced) target segment.
pub fn summarize(buf: &AudioBuffer, f0: Option<f64>) -> FeatureSummary {
    let f0 = f0.filter(|f| *f > 0.0);
    let (even_odd_ratio, harmonic_amps) = match f0 {
        Some(f) => {
            let spec = HarmonicSpectrum::new(buf);
            (even_odd_from(&spec, f), harmonics_from(&spec, f, 8))
        }
        None => (0.0, Vec::new()),
    };
    FeatureSummary {
        rolloff_95: spectral_rolloff(buf, 0.95),
        flatness: spectral_flatness(buf),
        even_odd_ratio,
        rms: rms(&buf.samples),
        centroid_mean: spectral_centroid(buf).mean,
        harmonic_amps,
        f0,
    }
}
