use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Cached real FFT plans, windows and scratch space.
///
/// Not `Sync`; batch code keeps one per worker.
pub struct Fft {
    planner: RealFftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn RealToComplex<f64>>>,
    inverse: HashMap<usize, Arc<dyn ComplexToReal<f64>>>,
    windows: HashMap<usize, Arc<[f64]>>,
    scratch: Vec<Complex<f64>>,
}

impl Default for Fft {
    fn default() -> Self {
        Fft::new()
    }
}

impl Fft {
    pub fn new() -> Self {
        Fft {
            planner: RealFftPlanner::new(),
            forward: HashMap::new(),
            inverse: HashMap::new(),
            windows: HashMap::new(),
            scratch: Vec::new(),
        }
    }

    /// Real-to-complex transform of `input` (length `n`, clobbered) into
    /// `output` (length `n / 2 + 1`). Unnormalized.
    pub fn forward(&mut self, input: &mut [f64], output: &mut [Complex<f64>]) {
        let n = input.len();
        let plan = self
            .forward
            .entry(n)
            .or_insert_with(|| self.planner.plan_fft_forward(n))
            .clone();
        let len = plan.get_scratch_len();
        if self.scratch.len() < len {
            self.scratch.resize(len, Complex::default());
        }
        plan.process_with_scratch(input, output, &mut self.scratch[..len])
            .expect("fft buffer sizes");
    }

    /// Complex-to-real inverse transform; `output.len()` selects the size.
    /// Unnormalized: a forward/inverse pair scales by `n`.
    pub fn inverse(&mut self, input: &mut [Complex<f64>], output: &mut [f64]) {
        let n = output.len();
        let plan = self
            .inverse
            .entry(n)
            .or_insert_with(|| self.planner.plan_fft_inverse(n))
            .clone();
        let len = plan.get_scratch_len();
        if self.scratch.len() < len {
            self.scratch.resize(len, Complex::default());
        }
        // Imaginary parts of DC and Nyquist must be zero for a real signal.
        input[0].im = 0.0;
        if n % 2 == 0 {
            input[n / 2].im = 0.0;
        }
        plan.process_with_scratch(input, output, &mut self.scratch[..len])
            .expect("ifft buffer sizes");
    }

    /// Periodic Hann window of length `n`.
    pub fn hann(&mut self, n: usize) -> Arc<[f64]> {
        self.windows
            .entry(n)
            .or_insert_with(|| hann_window(n).into())
            .clone()
    }
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

/// Magnitude spectrogram, stored frame-major.
///
/// Magnitudes are amplitude-normalized (`2 |X| / Σw`): a full-scale sinusoid
/// centered on a bin reads close to its amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: f64,
    /// Sum of the analysis window, for undoing the normalization.
    pub window_sum: f64,
}

impl Spectrogram {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.magnitudes[i * self.bins..(i + 1) * self.bins]
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.fft_size as f64
    }
}

/// Number of frames covering `len` samples: the tail is zero-padded so every
/// sample lands in at least one frame, and a buffer shorter than one frame
/// gives a single zero-padded frame.
pub fn frame_count(len: usize, fft_size: usize, hop: usize) -> usize {
    if len <= fft_size {
        1
    } else {
        1 + (len - fft_size).div_ceil(hop)
    }
}

pub fn stft(buf: &AudioBuffer, fft_size: usize, hop: usize, window: Window) -> Result<Spectrogram> {
    let mut fft = Fft::new();
    stft_with(&mut fft, buf, fft_size, hop, window)
}

pub fn stft_with(
    fft: &mut Fft,
    buf: &AudioBuffer,
    fft_size: usize,
    hop: usize,
    window: Window,
) -> Result<Spectrogram> {
    if !fft_size.is_power_of_two() || fft_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "fft size {fft_size} is not a power of two"
        )));
    }
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be positive".into()));
    }
    let win: Arc<[f64]> = match window {
        Window::Hann => fft.hann(fft_size),
        Window::Rectangular => vec![1.0; fft_size].into(),
    };
    let window_sum: f64 = win.iter().sum();
    let scale = 2.0 / window_sum;
    let bins = fft_size / 2 + 1;
    let frames = frame_count(buf.len(), fft_size, hop);
    let mut magnitudes = Vec::with_capacity(frames * bins);
    let mut frame = vec![0.0; fft_size];
    let mut spectrum = vec![Complex::default(); bins];
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = buf.samples.get(start + i).copied().unwrap_or(0.0) * win[i];
        }
        fft.forward(&mut frame, &mut spectrum);
        magnitudes.extend(spectrum.iter().map(|c| c.norm_sqr().sqrt() * scale));
    }
    Ok(Spectrogram {
        magnitudes,
        frames,
        bins,
        fft_size,
        hop,
        sample_rate: buf.sample_rate,
        window_sum,
    })
}

/// Welch-averaged power spectrum (mean of squared magnitudes over frames).
pub fn average_power(spec: &Spectrogram) -> Vec<f64> {
    let mut acc = vec![0.0; spec.bins];
    for f in 0..spec.frames {
        for (a, m) in acc.iter_mut().zip(spec.frame(f)) {
            *a += m * m;
        }
    }
    let n = spec.frames.max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}
