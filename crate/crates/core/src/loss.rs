//! Composite perceptual loss between a target and a candidate render.
//!
//! `composite = mel + 0.1 · centroid + 0.05 · mfcc`, where
//!
//! * `mel` averages, over FFT sizes 1024, 2048 and 8192 (hop = size / 4),
//!   the spectral convergence `‖M_x − M_y‖_F / ‖M_x‖_F` plus the mean
//!   absolute log difference of A-weighted 128-band mel magnitude
//!   spectrograms;
//! * `centroid` is the difference of mean spectral centroids divided by the
//!   Nyquist frequency;
//! * `mfcc` is the mean squared error of time-averaged 13-coefficient MFCCs.
//!
//! The target is always the first argument. Features of a buffer are
//! computed once into [`Features`], so targets can be reused across an
//! optimization run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::dsp::features::{centroid_from_spectrogram, ANALYSIS_FFT_SIZE, ANALYSIS_HOP};
use crate::dsp::mel::{
    a_weighting_curve, mel_spectrogram_with, time_average, MelFilterbank, MfccExtractor,
    MFCC_COEFFS,
};
use crate::dsp::spectrum::{stft_with, Fft, Window};
use crate::error::{Error, Result};

pub const MEL_WEIGHT: f64 = 1.0;
pub const CENTROID_WEIGHT: f64 = 0.1;
pub const MFCC_WEIGHT: f64 = 0.05;
pub const FFT_SIZES: [usize; 3] = [1024, 2048, 8192];
pub const N_MELS: usize = 128;
/// Floor for the log-mel term, -80 dB re full scale.
const MEL_LOG_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel: f64,
    pub centroid: f64,
    pub mfcc: f64,
    pub composite: f64,
    /// Both operands were silent at every resolution.
    pub silent: bool,
}

impl LossBreakdown {
    pub fn new(mel: f64, centroid: f64, mfcc: f64, silent: bool) -> Self {
        LossBreakdown {
            mel,
            centroid,
            mfcc,
            composite: mel + CENTROID_WEIGHT * centroid + MFCC_WEIGHT * mfcc,
            silent,
        }
    }
}

#[derive(Debug, Clone)]
struct MelResolution {
    values: Vec<f64>,
    log: Vec<f64>,
    norm: f64,
}

/// Everything the loss needs from one buffer.
#[derive(Debug, Clone)]
pub struct Features {
    pub sample_rate: f64,
    pub len: usize,
    mels: Vec<MelResolution>,
    pub centroid: f64,
    pub centroid_silent: bool,
    pub mfcc: Vec<f64>,
}

struct Resources {
    sample_rate: f64,
    banks: Vec<MelFilterbank>,
    weights: Vec<Vec<f64>>,
    mfcc: MfccExtractor,
}

impl Resources {
    fn new(sample_rate: f64) -> Self {
        Resources {
            sample_rate,
            banks: FFT_SIZES
                .iter()
                .map(|&n| MelFilterbank::new(N_MELS, n, sample_rate))
                .collect(),
            weights: FFT_SIZES
                .iter()
                .map(|&n| a_weighting_curve(n / 2 + 1, n, sample_rate))
                .collect(),
            mfcc: MfccExtractor::new(sample_rate, MFCC_COEFFS),
        }
    }
}

/// Per-thread transform plans, filterbanks and weighting curves.
#[derive(Default)]
pub struct LossContext {
    fft: Fft,
    resources: Option<Resources>,
}

impl LossContext {
    pub fn new() -> Self {
        LossContext::default()
    }

    pub fn features(&mut self, buf: &AudioBuffer) -> Features {
        if self.resources.as_ref().map(|r| r.sample_rate) != Some(buf.sample_rate) {
            self.resources = Some(Resources::new(buf.sample_rate));
        }
        let res = self.resources.as_ref().expect("just built");
        let mut mels = Vec::with_capacity(FFT_SIZES.len());
        let mut centroid = None;
        let mut mfcc = Vec::new();
        for (i, &size) in FFT_SIZES.iter().enumerate() {
            let spec = stft_with(&mut self.fft, buf, size, size / 4, Window::Hann)
                .expect("fixed power-of-two size");
            let mel = mel_spectrogram_with(&spec, &res.banks[i], Some(&res.weights[i]));
            let norm = mel.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let log = mel.values.iter().map(|v| v.max(MEL_LOG_FLOOR).ln()).collect();
            mels.push(MelResolution {
                values: mel.values,
                log,
                norm,
            });
            if size == ANALYSIS_FFT_SIZE {
                debug_assert_eq!(size / 4, ANALYSIS_HOP);
                centroid = Some(centroid_from_spectrogram(&spec, &buf.samples));
                mfcc = time_average(&res.mfcc.from_spectrogram(&spec));
            }
        }
        let centroid = centroid.expect("analysis size is one of the resolutions");
        Features {
            sample_rate: buf.sample_rate,
            len: buf.len(),
            mels,
            centroid: centroid.mean,
            centroid_silent: centroid.silent,
            mfcc,
        }
    }

    /// Loss of `candidate` against precomputed target features. The
    /// candidate is zero-padded (or the target recomputed padded) when the
    /// lengths differ.
    pub fn loss_against(&mut self, target: &Features, target_buf: Option<&AudioBuffer>, candidate: &AudioBuffer) -> Result<LossBreakdown> {
        check_rates(target.sample_rate, candidate.sample_rate)?;
        if candidate.len() == target.len {
            let c = self.features(candidate);
            return Ok(compare(target, &c));
        }
        if candidate.len() < target.len {
            let c = self.features(&padded(candidate, target.len));
            return Ok(compare(target, &c));
        }
        let t = target_buf.ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "candidate has {} samples, target {}",
                candidate.len(),
                target.len
            ))
        })?;
        let t = self.features(&padded(t, candidate.len()));
        let c = self.features(candidate);
        Ok(compare(&t, &c))
    }

    pub fn composite(&mut self, x: &AudioBuffer, y: &AudioBuffer) -> Result<LossBreakdown> {
        check_rates(x.sample_rate, y.sample_rate)?;
        let n = x.len().max(y.len());
        let fx = self.features(&padded(x, n));
        let fy = self.features(&padded(y, n));
        Ok(compare(&fx, &fy))
    }
}

fn check_rates(a: f64, b: f64) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("sample rates differ: {a} vs {b}")));
    }
    Ok(())
}

fn padded(buf: &AudioBuffer, n: usize) -> AudioBuffer {
    if buf.len() == n {
        return buf.clone();
    }
    let mut samples = buf.samples.clone();
    samples.resize(n, 0.0);
    AudioBuffer::new(samples, buf.sample_rate)
}

/// Loss between two feature sets of equal length, target first.
pub fn compare(x: &Features, y: &Features) -> LossBreakdown {
    let mut mel = 0.0;
    let mut silent = true;
    for (a, b) in x.mels.iter().zip(&y.mels) {
        let diff = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let sc = if a.norm > 0.0 {
            silent = false;
            diff / a.norm
        } else if b.norm > 0.0 {
            silent = false;
            1.0
        } else {
            0.0
        };
        let log_l1 = a
            .log
            .iter()
            .zip(&b.log)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
            / a.log.len().max(1) as f64;
        mel += sc + log_l1;
    }
    mel /= x.mels.len() as f64;
    let centroid = ((x.centroid - y.centroid).abs() / (x.sample_rate / 2.0)).min(1.0);
    let mfcc = mfcc_distance(&x.mfcc, &y.mfcc);
    LossBreakdown::new(mel, centroid, mfcc, silent)
}

fn mfcc_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len().max(1) as f64
}

pub fn composite_loss(x: &AudioBuffer, y: &AudioBuffer) -> Result<LossBreakdown> {
    LossContext::new().composite(x, y)
}

pub fn mel_multires_loss(x: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    Ok(composite_loss(x, y)?.mel)
}

pub fn centroid_loss(x: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    Ok(composite_loss(x, y)?.centroid)
}

pub fn mfcc_loss(x: &AudioBuffer, y: &AudioBuffer) -> Result<f64> {
    Ok(composite_loss(x, y)?.mfcc)
}

/// Precomputed target notes for the multi-pitch objective.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub buffers: Vec<AudioBuffer>,
    pub features: Vec<Features>,
}

impl TargetSet {
    pub fn new(buffers: Vec<AudioBuffer>) -> Self {
        let mut ctx = LossContext::new();
        let features = buffers.iter().map(|b| ctx.features(b)).collect();
        TargetSet { buffers, features }
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    /// Per-pitch losses of one candidate's renders.
    pub fn breakdowns(&self, ctx: &mut LossContext, renders: &[AudioBuffer]) -> Result<Vec<LossBreakdown>> {
        if renders.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} renders for {} targets",
                renders.len(),
                self.len()
            )));
        }
        renders
            .iter()
            .zip(self.features.iter().zip(&self.buffers))
            .map(|(r, (f, b))| ctx.loss_against(f, Some(b), r))
            .collect()
    }

    /// Mean composite loss over pitches.
    pub fn mean_loss(&self, ctx: &mut LossContext, renders: &[AudioBuffer]) -> Result<f64> {
        let per_pitch = self.breakdowns(ctx, renders)?;
        Ok(per_pitch.iter().map(|b| b.composite).sum::<f64>() / per_pitch.len() as f64)
    }
}

/// Entry `b` is the mean over pitches of `composite(targets[k], renders[b][k])`.
pub fn composite_loss_batch(renders: &[Vec<AudioBuffer>], targets: &[AudioBuffer]) -> Result<Vec<f64>> {
    composite_loss_batch_with(renders, &TargetSet::new(targets.to_vec()))
}

pub fn composite_loss_batch_with(renders: &[Vec<AudioBuffer>], targets: &TargetSet) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::ShapeMismatch("no targets".into()));
    }
    renders
        .par_iter()
        .map_init(LossContext::new, |ctx, row| targets.mean_loss(ctx, row))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    const SR: f64 = 44_100.0;

    fn tone(n: usize, f: impl Fn(f64) -> f64) -> AudioBuffer {
        AudioBuffer::new((0..n).map(|i| f(i as f64 / SR)).collect(), SR)
    }

    fn sine(freq: f64) -> AudioBuffer {
        tone(6615, |t| 0.5 * (TAU * freq * t).sin())
    }

    fn saw(freq: f64) -> AudioBuffer {
        tone(6615, |t| 0.5 * (2.0 * (freq * t).fract() - 1.0))
    }

    #[test]
    fn self_loss_is_zero() {
        for x in [sine(221.0), saw(278.0), AudioBuffer::silence(6615, SR)] {
            let l = composite_loss(&x, &x).unwrap();
            assert_eq!(l.composite, 0.0);
            assert_eq!(l.mel, 0.0);
        }
        assert!(composite_loss(&AudioBuffer::silence(100, SR), &AudioBuffer::silence(100, SR))
            .unwrap()
            .silent);
    }

    #[test]
    fn timbre_outweighs_detune() {
        let target = saw(221.0);
        let detuned = saw(221.0 * 2f64.powf(5.0 / 1200.0));
        let far = mel_multires_loss(&target, &sine(221.0)).unwrap();
        let near = mel_multires_loss(&target, &detuned).unwrap();
        assert!(far > near, "{far} vs {near}");
    }

    #[test]
    fn target_anchors_normalization() {
        let a = saw(221.0);
        let b = tone(6615, |t| 0.1 * (2.0 * (221.0 * t).fract() - 1.0));
        assert_ne!(mel_multires_loss(&a, &b).unwrap(), mel_multires_loss(&b, &a).unwrap());
    }

    #[test]
    fn centroid_of_two_sines() {
        let l = centroid_loss(&sine(1000.0), &sine(3000.0)).unwrap();
        assert!((l - 2000.0 / 22_050.0).abs() < 2e-3, "{l}");
        assert_eq!(centroid_loss(&sine(1000.0), &sine(1000.0)).unwrap(), 0.0);
        let silent = centroid_loss(&AudioBuffer::silence(6615, SR), &sine(20_000.0)).unwrap();
        assert!((0.0..=1.0).contains(&silent));
    }

    #[test]
    fn mfcc_symmetric_and_positive() {
        let (a, b) = (saw(221.0), sine(221.0));
        let ab = mfcc_loss(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, mfcc_loss(&b, &a).unwrap());
        assert_eq!(mfcc_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn weighting_identity() {
        let l = composite_loss(&saw(221.0), &sine(300.0)).unwrap();
        assert_eq!(l.composite, l.mel + 0.1 * l.centroid + 0.05 * l.mfcc);
        assert!(l.mel > 0.0 && l.centroid > 0.0 && l.mfcc > 0.0);
    }

    #[test]
    fn lengths_may_differ() {
        let a = saw(221.0);
        let short = a.slice(0, 5000);
        let l1 = composite_loss(&a, &short).unwrap();
        let mut ctx = LossContext::new();
        let fa = ctx.features(&a);
        let l2 = ctx.loss_against(&fa, Some(&a), &short).unwrap();
        assert_eq!(l1, l2);
        assert!(l1.composite > 0.0);
        let long = AudioBuffer::new([a.samples.clone(), vec![0.0; 100]].concat(), SR);
        let l3 = ctx.loss_against(&fa, Some(&a), &long).unwrap();
        assert!(l3.composite < 1e-9, "{l3:?}");
        let other_rate = AudioBuffer::new(a.samples.clone(), 48_000.0);
        assert!(composite_loss(&a, &other_rate).is_err());
    }

    #[test]
    fn batch_is_mean_over_pitches() {
        let targets = vec![saw(221.0), saw(278.0), saw(295.0)];
        let row = vec![sine(221.0), saw(280.0), sine(295.0)];
        let batch = composite_loss_batch(&[row.clone()], &targets).unwrap();
        let mean = (0..3)
            .map(|k| composite_loss(&targets[k], &row[k]).unwrap().composite)
            .sum::<f64>()
            / 3.0;
        assert_eq!(batch, vec![mean]);
        assert!(composite_loss_batch(&[row[..2].to_vec()], &targets).is_err());
    }
}
