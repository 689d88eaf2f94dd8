//! Frequency-domain low-pass filter and parametric EQ.

use realfft::num_complex::Complex;

use crate::dsp::spectrum::Fft;

/// Width of the resonance bump, relative to the cutoff.
const RESONANCE_WIDTH: f64 = 0.15;
/// Standard deviation of an EQ band in octaves.
pub const EQ_WIDTH_OCTAVES: f64 = 0.5;
/// Cutoff floor for the envelope-modulated filter.
pub const MIN_CUTOFF: f64 = 10.0;

/// Hop between cutoff updates, in samples.
pub const FILTER_HOP: usize = 64;
const FILTER_WINDOW: usize = 2 * FILTER_HOP;
const FILTER_FFT: usize = 2 * FILTER_WINDOW;

/// Sigmoid low-pass magnitude with a Gaussian resonance peak at the cutoff.
#[inline]
pub fn filter_gain(f: f64, cutoff: f64, slope: f64, resonance: f64) -> f64 {
    let u = f / cutoff - 1.0;
    let lp = 1.0 / (1.0 + (slope * u).exp());
    if resonance == 0.0 {
        lp
    } else {
        let z = u / RESONANCE_WIDTH;
        lp + resonance * 2.0 * (-0.5 * z * z).exp()
    }
}

pub fn filter_magnitude(freqs: &[f64], cutoff: f64, slope: f64, resonance: f64) -> Vec<f64> {
    freqs
        .iter()
        .map(|&f| filter_gain(f, cutoff, slope, resonance))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqBand {
    pub center: f64,
    pub gain_db: f64,
}

/// Product of Gaussian bumps in log-frequency; each reaches its full gain at
/// its center and tends to unity away from it.
#[inline]
pub fn eq_gain(f: f64, bands: &[EqBand]) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    let db: f64 = bands
        .iter()
        .filter(|b| b.gain_db != 0.0)
        .map(|b| {
            let z = (f / b.center).log2() / EQ_WIDTH_OCTAVES;
            b.gain_db * (-0.5 * z * z).exp()
        })
        .sum();
    if db == 0.0 {
        1.0
    } else {
        10f64.powf(db / 20.0)
    }
}

pub fn eq_magnitude(freqs: &[f64], bands: &[EqBand]) -> Vec<f64> {
    freqs.iter().map(|&f| eq_gain(f, bands)).collect()
}

/// Time-varying filtering by short-time transform: every `FILTER_HOP`
/// samples a Hann-windowed frame is transformed, multiplied by the
/// magnitude response for that hop's cutoff, and overlap-added back.
pub struct FilterBank<'a> {
    pub slope: f64,
    pub resonance: f64,
    /// Static per-bin gain (EQ), `FILTER_FFT / 2 + 1` entries.
    pub eq: &'a [f64],
}

pub fn filter_bins() -> usize {
    FILTER_FFT / 2 + 1
}

pub fn filter_bin_freqs(sample_rate: f64) -> Vec<f64> {
    (0..filter_bins())
        .map(|k| k as f64 * sample_rate / FILTER_FFT as f64)
        .collect()
}

/// Magnitude response for every hop, with runs of equal cutoffs sharing
/// one table.
#[derive(Debug, Clone, Default)]
pub struct FilterPlan {
    responses: Vec<f64>,
    index: Vec<usize>,
}

impl FilterPlan {
    pub fn new(cutoffs: &[f64], bank: &FilterBank<'_>, sample_rate: f64) -> Self {
        let mut plan = FilterPlan::default();
        plan.rebuild(cutoffs, bank, sample_rate);
        plan
    }

    pub fn rebuild(&mut self, cutoffs: &[f64], bank: &FilterBank<'_>, sample_rate: f64) {
        let bins = filter_bins();
        let bin_hz = sample_rate / FILTER_FFT as f64;
        self.responses.clear();
        self.index.clear();
        let mut previous = f64::NAN;
        for &cutoff in cutoffs {
            if cutoff != previous {
                previous = cutoff;
                self.responses.extend((0..bins).map(|k| {
                    filter_gain(k as f64 * bin_hz, cutoff, bank.slope, bank.resonance) * bank.eq[k]
                }));
            }
            self.index.push(self.responses.len() / bins - 1);
        }
    }

    fn response(&self, hop: isize) -> &[f64] {
        let bins = filter_bins();
        let i = self.index[hop.clamp(0, self.index.len() as isize - 1) as usize];
        &self.responses[i * bins..(i + 1) * bins]
    }
}

/// Scratch buffers for [`apply_time_varying`].
pub struct FilterScratch {
    frame: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    out: Vec<f64>,
}

impl Default for FilterScratch {
    fn default() -> Self {
        FilterScratch {
            frame: vec![0.0; FILTER_FFT],
            spectrum: vec![Complex::default(); FILTER_FFT / 2 + 1],
            out: Vec::new(),
        }
    }
}

/// Filters `signal` in place. `cutoffs[j]` applies to samples
/// `[j * FILTER_HOP, (j + 1) * FILTER_HOP)`.
pub fn apply_time_varying(
    fft: &mut Fft,
    scratch: &mut FilterScratch,
    signal: &mut [f64],
    cutoffs: &[f64],
    bank: &FilterBank<'_>,
    sample_rate: f64,
) {
    let plan = FilterPlan::new(cutoffs, bank, sample_rate);
    apply_plan(fft, scratch, signal, &plan);
}

pub fn apply_plan(fft: &mut Fft, scratch: &mut FilterScratch, signal: &mut [f64], plan: &FilterPlan) {
    let n = signal.len();
    if n == 0 || plan.index.is_empty() {
        return;
    }
    let window = fft.hann(FILTER_WINDOW);
    let pad = (FILTER_FFT - FILTER_WINDOW) / 2;
    // Frame j is centered on hop j; frames before 0 and past the end keep
    // the overlap-add sum constant at the edges.
    let first = -((FILTER_WINDOW / FILTER_HOP) as isize);
    let last = n.div_ceil(FILTER_HOP) as isize + (FILTER_WINDOW / FILTER_HOP) as isize;
    // Out buffer has room for the spill on both sides.
    let offset = FILTER_FFT + FILTER_WINDOW;
    scratch.out.clear();
    scratch.out.resize(n + 2 * offset, 0.0);
    // Overlapping periodic Hann windows sum to window / (2 · hop); the
    // inverse transform scales by the FFT size.
    let overlap = FILTER_WINDOW as f64 / (2.0 * FILTER_HOP as f64);
    let norm = 1.0 / (overlap * FILTER_FFT as f64);

    for j in first..last {
        let start = j * FILTER_HOP as isize + (FILTER_HOP / 2) as isize - (FILTER_WINDOW / 2) as isize;
        if start + FILTER_WINDOW as isize <= 0 || start >= n as isize {
            continue;
        }
        scratch.frame[..pad].iter_mut().for_each(|x| *x = 0.0);
        scratch.frame[pad + FILTER_WINDOW..].iter_mut().for_each(|x| *x = 0.0);
        for i in 0..FILTER_WINDOW {
            let t = start + i as isize;
            scratch.frame[pad + i] = if t >= 0 && (t as usize) < n {
                signal[t as usize] * window[i]
            } else {
                0.0
            };
        }
        fft.forward(&mut scratch.frame, &mut scratch.spectrum);
        for (c, r) in scratch.spectrum.iter_mut().zip(plan.response(j)) {
            *c *= *r;
        }
        fft.inverse(&mut scratch.spectrum, &mut scratch.frame);
        let base = (start - pad as isize + offset as isize) as usize;
        for (o, y) in scratch.out[base..base + FILTER_FFT].iter_mut().zip(&scratch.frame) {
            *o += y * norm;
        }
    }
    signal.copy_from_slice(&scratch.out[offset..offset + n]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gain_at_cutoff() {
        for q in [0.0, 0.3, 1.0] {
            for slope in [4.0, 20.0, 48.0] {
                let h = filter_gain(1000.0, 1000.0, slope, q);
                assert!((h - (0.5 + 2.0 * q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_limits() {
        let low = filter_gain(0.0, 1000.0, 4.0, 0.0);
        let oracle = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((low - oracle).abs() < 1e-12);
        assert!(low > 0.98);
        let high = filter_gain(20_000.0, 1000.0, 4.0, 0.0);
        assert!(high > 0.0 && high < 1e-30);
    }

    #[test]
    fn steeper_slope_cuts_harder() {
        let f = 1.2 * 1000.0;
        let steep = filter_gain(f, 1000.0, 48.0, 0.0);
        let gentle = filter_gain(f, 1000.0, 4.0, 0.0);
        // Scalar oracle: σ(-α·0.2).
        let sigma = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((steep - sigma(-48.0 * 0.2)).abs() < 1e-12);
        assert!((gentle - sigma(-4.0 * 0.2)).abs() < 1e-12);
        assert!(steep < gentle);
        let v = filter_magnitude(&[0.0, 1000.0, 1200.0], 1000.0, 48.0, 0.0);
        assert_eq!(v.len(), 3);
        assert!((v[2] - steep).abs() < 1e-15);
    }

    #[test]
    fn eq_flat_when_gains_zero() {
        let bands = [
            EqBand { center: 1000.0, gain_db: 0.0 },
            EqBand { center: 5000.0, gain_db: 0.0 },
        ];
        let freqs: Vec<f64> = (0..100).map(|i| i as f64 * 200.0).collect();
        assert!(eq_magnitude(&freqs, &bands).iter().all(|&g| g == 1.0));
    }

    #[test]
    fn eq_peak_values() {
        let boost = [EqBand { center: 5800.0, gain_db: 1.0 }];
        assert!((eq_gain(5800.0, &boost) - 10f64.powf(0.05)).abs() < 1e-12);
        assert!((eq_gain(5800.0, &boost) - 1.122).abs() < 1e-3);
        let cut = [EqBand { center: 2000.0, gain_db: -6.0 }];
        assert!((eq_gain(2000.0, &cut) - 0.501).abs() < 1e-3);
        // Far from the center the band is transparent.
        assert!((eq_gain(20.0, &cut) - 1.0).abs() < 1e-6);
    }

    fn tone(freq: f64, n: usize, sr: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr).sin()).collect()
    }

    fn run(signal: &mut [f64], cutoffs: &[f64], slope: f64, sr: f64) {
        let eq = vec![1.0; filter_bins()];
        let mut fft = Fft::new();
        let mut scratch = FilterScratch::default();
        let bank = FilterBank { slope, resonance: 0.0, eq: &eq };
        apply_time_varying(&mut fft, &mut scratch, signal, cutoffs, &bank, sr);
    }

    #[test]
    fn open_filter_is_transparent() {
        let sr = 44_100.0;
        let x = tone(440.0, 4000, sr);
        let mut y = x.clone();
        let hops = 4000usize.div_ceil(FILTER_HOP);
        run(&mut y, &vec![16_000.0; hops], 48.0, sr);
        // Edges are excluded: the step into the zero padding is genuinely
        // low-passed.
        let err = x[256..3744].iter().zip(&y[256..3744]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn closed_filter_attenuates() {
        let sr = 44_100.0;
        let mut y = tone(5000.0, 4000, sr);
        let hops = 4000usize.div_ceil(FILTER_HOP);
        run(&mut y, &vec![500.0; hops], 24.0, sr);
        let rms = crate::audio::rms(&y[256..3744]);
        assert!(rms < 1e-3, "{rms}");
    }
}
