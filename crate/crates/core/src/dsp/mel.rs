//! HTK-scale mel filterbanks, A-weighting and MFCCs.

use std::f64::consts::PI;

use super::spectrum::{stft_with, Fft, Spectrogram, Window};
use crate::audio::AudioBuffer;

/// Floor applied before every logarithm of a magnitude or energy.
pub const LOG_FLOOR: f64 = 1e-7;

pub const MFCC_FFT_SIZE: usize = 2048;
pub const MFCC_HOP: usize = 512;
pub const MFCC_MELS: usize = 40;
pub const MFCC_COEFFS: usize = 13;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// IEC 61672 A-weighting as a linear amplitude gain, 1.0 at 1 kHz.
pub fn a_weighting_gain(f: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let f2 = f * f;
    let c1 = 20.598_997f64.powi(2);
    let c2 = 107.652_65f64.powi(2);
    let c3 = 737.862_23f64.powi(2);
    let c4 = 12_194.217f64.powi(2);
    let ra = c4 * f2 * f2 / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4));
    // +2.00 dB normalizes the curve to 0 dB at 1 kHz.
    ra * 10f64.powf(2.0 / 20.0)
}

/// Triangular filters stored sparsely as (first bin, weights).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    rows: Vec<(usize, Vec<f64>)>,
    bins: usize,
}

impl MelFilterbank {
    /// `n_mels` HTK triangles spanning 0 Hz to Nyquist over `fft_size / 2 + 1`
    /// bins. A triangle too narrow to contain any bin center collapses onto
    /// the bin nearest its center, so every row has positive weight.
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: f64) -> Self {
        let bins = fft_size / 2 + 1;
        let bin_hz = sample_rate / fft_size as f64;
        let mel_max = hz_to_mel(sample_rate / 2.0);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let rows = (0..n_mels)
            .map(|m| {
                let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let first = ((lo / bin_hz).floor() as usize).min(bins - 1);
                let last = ((hi / bin_hz).ceil() as usize).min(bins - 1);
                let weights: Vec<f64> = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= center {
                            (f - lo) / (center - lo)
                        } else {
                            (hi - f) / (hi - center)
                        }
                    })
                    .collect();
                if weights.iter().any(|&w| w > 0.0) {
                    (first, weights)
                } else {
                    let nearest = ((center / bin_hz).round() as usize).min(bins - 1);
                    (nearest, vec![1.0])
                }
            })
            .collect();
        MelFilterbank { rows, bins }
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|(_, w)| w.iter().sum()).collect()
    }

    /// Applies the filterbank to one spectrum frame.
    pub fn apply_into(&self, frame: &[f64], out: &mut [f64]) {
        for ((start, weights), o) in self.rows.iter().zip(out.iter_mut()) {
            *o = weights
                .iter()
                .zip(&frame[*start..*start + weights.len()])
                .map(|(w, x)| w * x)
                .sum();
        }
    }
}

/// Frames × mels matrix, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub frames: usize,
    pub n_mels: usize,
}

impl MelSpectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_mels..(i + 1) * self.n_mels]
    }
}

/// Per-bin A-weighting gains for a spectrum of `bins` bins.
pub fn a_weighting_curve(bins: usize, fft_size: usize, sample_rate: f64) -> Vec<f64> {
    (0..bins)
        .map(|k| a_weighting_gain(k as f64 * sample_rate / fft_size as f64))
        .collect()
}

pub fn mel_spectrogram(spec: &Spectrogram, n_mels: usize, a_weighting: bool) -> MelSpectrogram {
    let bank = MelFilterbank::new(n_mels, spec.fft_size, spec.sample_rate);
    let weights = a_weighting.then(|| a_weighting_curve(spec.bins, spec.fft_size, spec.sample_rate));
    mel_spectrogram_with(spec, &bank, weights.as_deref())
}

pub fn mel_spectrogram_with(
    spec: &Spectrogram,
    bank: &MelFilterbank,
    weights: Option<&[f64]>,
) -> MelSpectrogram {
    let n_mels = bank.n_mels();
    let mut values = vec![0.0; spec.frames * n_mels];
    let mut weighted = vec![0.0; spec.bins];
    for f in 0..spec.frames {
        let frame = spec.frame(f);
        let input: &[f64] = match weights {
            Some(w) => {
                for ((o, x), g) in weighted.iter_mut().zip(frame).zip(w) {
                    *o = x * g;
                }
                &weighted
            }
            None => frame,
        };
        bank.apply_into(input, &mut values[f * n_mels..(f + 1) * n_mels]);
    }
    MelSpectrogram {
        values,
        frames: spec.frames,
        n_mels,
    }
}

/// Orthonormal DCT-II basis, `n_out` rows of length `n_in`.
#[derive(Debug, Clone)]
pub struct Dct {
    basis: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

impl Dct {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        let mut basis = Vec::with_capacity(n_in * n_out);
        for k in 0..n_out {
            let norm = if k == 0 {
                (1.0 / n_in as f64).sqrt()
            } else {
                (2.0 / n_in as f64).sqrt()
            };
            for n in 0..n_in {
                basis.push(norm * (PI * k as f64 * (2 * n + 1) as f64 / (2 * n_in) as f64).cos());
            }
        }
        Dct { basis, n_in, n_out }
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.n_out) {
            let row = &self.basis[k * self.n_in..(k + 1) * self.n_in];
            *o = row.iter().zip(input).map(|(b, x)| b * x).sum();
        }
    }
}

/// Reusable MFCC pipeline: power spectrogram → 40 mel bands → log → DCT-II.
#[derive(Debug, Clone)]
pub struct MfccExtractor {
    bank: MelFilterbank,
    dct: Dct,
    n_coeffs: usize,
}

impl MfccExtractor {
    pub fn new(sample_rate: f64, n_coeffs: usize) -> Self {
        let n_coeffs = n_coeffs.min(MFCC_MELS);
        MfccExtractor {
            bank: MelFilterbank::new(MFCC_MELS, MFCC_FFT_SIZE, sample_rate),
            dct: Dct::new(MFCC_MELS, n_coeffs),
            n_coeffs,
        }
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    /// Coefficients for every frame of a spectrogram computed with
    /// [`MFCC_FFT_SIZE`]. Returned frame-major.
    pub fn from_spectrogram(&self, spec: &Spectrogram) -> Vec<Vec<f64>> {
        debug_assert_eq!(spec.fft_size, MFCC_FFT_SIZE);
        let mut power = vec![0.0; spec.bins];
        let mut mel = vec![0.0; MFCC_MELS];
        (0..spec.frames)
            .map(|f| {
                for (p, m) in power.iter_mut().zip(spec.frame(f)) {
                    *p = m * m;
                }
                self.bank.apply_into(&power, &mut mel);
                mel.iter_mut().for_each(|e| *e = e.max(LOG_FLOOR).ln());
                let mut c = vec![0.0; self.n_coeffs];
                self.dct.apply_into(&mel, &mut c);
                c
            })
            .collect()
    }
}

/// MFCCs of a buffer (2048-point Hann frames, hop 512, 40 mels).
pub fn mfcc(buf: &AudioBuffer, n_coeffs: usize) -> Vec<Vec<f64>> {
    let mut fft = Fft::new();
    let spec = stft_with(&mut fft, buf, MFCC_FFT_SIZE, MFCC_HOP, Window::Hann)
        .expect("fixed power-of-two size");
    MfccExtractor::new(buf.sample_rate, n_coeffs).from_spectrogram(&spec)
}

/// Mean over frames of each coefficient.
pub fn time_average(coeffs: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = coeffs.first() else {
        return Vec::new();
    };
    let mut mean = vec![0.0; first.len()];
    for c in coeffs {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= coeffs.len() as f64);
    mean
}
