//! Spectral-flux onset detection.
//!
//! Novelty is the half-wave-rectified frame-to-frame increase of a log-power
//! mel spectrogram (80 dB dynamic range), averaged over bands and min-max
//! normalized to `[0, 1]`. Peaks are picked where the novelty is a local
//! maximum over ±30 ms, exceeds the median over ±100 ms by `delta`, and lies
//! at least 50 ms after the previous onset. Reported positions are shifted
//! later by 3/8 of a frame to offset the early response of a windowed
//! log-power difference.

use super::mel::MelFilterbank;
use super::spectrum::Fft;
use crate::audio::AudioBuffer;

pub const DEFAULT_DELTA: f64 = 0.015;

const FFT_SIZE: usize = 2048;
const HOP: usize = 256;
const N_MELS: usize = 40;
const TOP_DB: f64 = 80.0;
/// The log-power rise peaks while an event is still in the leading quarter
/// of the window; onsets are reported this many samples after the frame center.
pub const LEAD_COMPENSATION: usize = 3 * FFT_SIZE / 8;
const LOCAL_MAX_SECONDS: f64 = 0.03;
const LOCAL_MEDIAN_SECONDS: f64 = 0.1;
const MIN_GAP_SECONDS: f64 = 0.05;

/// Onset novelty curve, one value per hop, each frame centered on `i * hop`.
pub fn onset_strength(buf: &AudioBuffer) -> (Vec<f64>, usize) {
    let n = buf.len();
    let frames = n / HOP + 1;
    let mut fft = Fft::new();
    let window = fft.hann(FFT_SIZE);
    let bank = MelFilterbank::new(N_MELS, FFT_SIZE, buf.sample_rate);
    let mut frame = vec![0.0; FFT_SIZE];
    let mut spectrum = vec![realfft::num_complex::Complex::default(); FFT_SIZE / 2 + 1];
    let mut power = vec![0.0; FFT_SIZE / 2 + 1];
    let mut db = vec![0.0; frames * N_MELS];
    let half = (FFT_SIZE / 2) as isize;
    for f in 0..frames {
        let center = (f * HOP) as isize;
        for (i, slot) in frame.iter_mut().enumerate() {
            let t = center - half + i as isize;
            let s = if t >= 0 && (t as usize) < n {
                buf.samples[t as usize]
            } else {
                0.0
            };
            *slot = s * window[i];
        }
        fft.forward(&mut frame, &mut spectrum);
        for (p, c) in power.iter_mut().zip(&spectrum) {
            *p = c.norm_sqr();
        }
        let row = &mut db[f * N_MELS..(f + 1) * N_MELS];
        bank.apply_into(&power, row);
        row.iter_mut()
            .for_each(|e| *e = 10.0 * e.max(1e-10).log10());
    }
    let max_db = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    db.iter_mut().for_each(|e| *e = e.max(max_db - TOP_DB));

    let mut novelty = vec![0.0; frames];
    for f in 1..frames {
        let (prev, cur) = (&db[(f - 1) * N_MELS..f * N_MELS], &db[f * N_MELS..(f + 1) * N_MELS]);
        novelty[f] = cur
            .iter()
            .zip(prev)
            .map(|(c, p)| (c - p).max(0.0))
            .sum::<f64>()
            / N_MELS as f64;
    }
    (novelty, HOP)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Onset positions in samples.
pub fn detect_onsets(buf: &AudioBuffer, delta: f64) -> Vec<usize> {
    if buf.is_empty() {
        return Vec::new();
    }
    let (mut novelty, hop) = onset_strength(buf);
    let lo = novelty.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = novelty.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-9) {
        return Vec::new();
    }
    novelty.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));

    let frames_per_sec = buf.sample_rate / hop as f64;
    let max_w = (LOCAL_MAX_SECONDS * frames_per_sec).round() as usize;
    let med_w = (LOCAL_MEDIAN_SECONDS * frames_per_sec).round() as usize;
    let gap = (MIN_GAP_SECONDS * frames_per_sec).round() as usize;

    let mut onsets = Vec::new();
    let mut last: Option<usize> = None;
    let mut scratch = Vec::with_capacity(2 * med_w + 1);
    for i in 0..novelty.len() {
        let v = novelty[i];
        if v <= 0.0 {
            continue;
        }
        let a = i.saturating_sub(max_w);
        let b = (i + max_w + 1).min(novelty.len());
        // First index attaining the window maximum wins ties.
        let is_max = novelty[a..b].iter().all(|&x| x <= v)
            && novelty[a..i].iter().all(|&x| x < v);
        if !is_max {
            continue;
        }
        scratch.clear();
        scratch.extend_from_slice(
            &novelty[i.saturating_sub(med_w)..(i + med_w + 1).min(novelty.len())],
        );
        if v < median(&mut scratch) + delta {
            continue;
        }
        if last.is_some_and(|l| i - l < gap) {
            continue;
        }
        last = Some(i);
        onsets.push((i * hop + LEAD_COMPENSATION).min(buf.len() - 1));
    }
    onsets
}
