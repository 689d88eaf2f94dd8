//! Deterministic subtractive synthesizer.
//!
//! Signal chain: oscillators, mixer, low-pass filter, EQ, amplitude envelope,
//! reverb, then output gain with a `tanh` soft clip. The 31-parameter tier
//! inserts distortion and a feedback delay before the reverb and adds
//! vibrato to the oscillators.
//!
//! Rendering is a pure function of the request, so batches can be spread over
//! threads without changing a single sample.

pub mod effects;
pub mod envelope;
pub mod filter;
pub mod oscillator;

use rayon::prelude::*;

use crate::audio::{AudioBuffer, DEFAULT_SAMPLE_RATE};
use crate::dsp::spectrum::Fft;
use crate::error::{Error, Result};
use crate::params::{denormalize, ParamId, ParamVector, Patch, Tier};

pub use effects::{chebyshev_waveshape, fm_operator, reverb};
pub use envelope::{adsr, Adsr};
pub use filter::{eq_magnitude, filter_magnitude, EqBand};
pub use oscillator::{OscMix, UnisonLayout};

use effects::ConvScratch;
use filter::{FilterBank, FilterPlan, FilterScratch, FILTER_HOP, MIN_CUTOFF};
use oscillator::{noise_sample, NOISE_FLOOR_STREAM};

/// Fraction of the rendered duration for which the note is held.
pub const GATE_FRACTION: f64 = 0.75;
pub const MAX_DURATION: f64 = 10.0;
pub const MIN_F0: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderRequest {
    pub patch: Patch,
    pub f0: f64,
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl RenderRequest {
    pub fn new(patch: Patch, f0: f64, duration: f64) -> Self {
        RenderRequest {
            patch,
            f0,
            duration,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sample_rate(mut self, sample_rate: f64) -> Self {
        self.sample_rate = sample_rate;
        self
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        check_timing(self.f0, self.duration, self.sample_rate)
    }
}

fn check_timing(f0: f64, duration: f64, sample_rate: f64) -> Result<()> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::InvalidRequest(format!("sample rate {sample_rate} is not positive")));
    }
    if !(f0 > MIN_F0 && f0 < sample_rate / 4.0) {
        return Err(Error::InvalidRequest(format!(
            "f0 {f0} Hz outside ({MIN_F0}, {}) Hz",
            sample_rate / 4.0
        )));
    }
    if !(duration > 0.0 && duration <= MAX_DURATION) {
        return Err(Error::InvalidRequest(format!(
            "duration {duration} s outside (0, {MAX_DURATION}] s"
        )));
    }
    Ok(())
}

/// Pitch-independent state of one patch at one length: envelopes, filter
/// responses. Reused while consecutive renders share the patch.
#[derive(Default)]
struct Prepared {
    key: Option<(Patch, usize, u64)>,
    amp_env: Vec<f64>,
    filter: FilterPlan,
}

impl Prepared {
    fn update(&mut self, patch: &Patch, n: usize, sr: f64) {
        if let Some((p, len, rate)) = &self.key {
            if p == patch && *len == n && *rate == sr.to_bits() {
                return;
            }
        }
        use ParamId::*;
        let v = |id| patch.value(id);
        let note_len = GATE_FRACTION * n as f64 / sr;

        // Filter cutoff per hop from the mean filter-envelope level.
        let filt_env = Adsr {
            attack: v(FilterAttack),
            decay: v(FilterDecay),
            sustain: v(FilterSustain),
            release: v(FilterRelease),
        };
        self.amp_env.resize(n, 0.0);
        filt_env.render_into(note_len, sr, &mut self.amp_env);
        let (cutoff, amount) = (v(Cutoff), v(FilterEnvAmount));
        let cutoffs: Vec<f64> = self
            .amp_env
            .chunks(FILTER_HOP)
            .map(|c| {
                let mean = c.iter().sum::<f64>() / c.len() as f64;
                (cutoff * (1.0 + amount * (mean - 0.5))).max(MIN_CUTOFF)
            })
            .collect();
        let bands = [
            EqBand { center: v(Eq1Freq), gain_db: v(Eq1Gain) },
            EqBand { center: v(Eq2Freq), gain_db: v(Eq2Gain) },
        ];
        let eq = eq_magnitude(&filter::filter_bin_freqs(sr), &bands);
        let bank = FilterBank {
            slope: v(Slope),
            resonance: v(Resonance),
            eq: &eq,
        };
        self.filter.rebuild(&cutoffs, &bank, sr);

        let amp_env = Adsr {
            attack: v(AmpAttack),
            decay: v(AmpDecay),
            sustain: v(AmpSustain),
            release: v(AmpRelease),
        };
        amp_env.render_into(note_len, sr, &mut self.amp_env);
        self.key = Some((patch.clone(), n, sr.to_bits()));
    }
}

/// Reusable transform plans and buffers. One per thread.
#[derive(Default)]
pub struct Renderer {
    fft: Fft,
    filter: FilterScratch,
    conv: ConvScratch,
    prepared: Prepared,
}

impl Renderer {
    pub fn new() -> Self {
        Renderer::default()
    }

    pub fn render(&mut self, req: &RenderRequest) -> Result<AudioBuffer> {
        req.validate()?;
        let mut out = vec![0.0; req.samples()];
        self.render_into(&req.patch, req.f0, req.sample_rate, req.seed, &mut out);
        Ok(AudioBuffer::new(out, req.sample_rate))
    }

    /// Renders an already validated note into `out`, whose length sets the
    /// duration.
    pub fn render_into(&mut self, patch: &Patch, f0: f64, sr: f64, seed: u64, out: &mut [f64]) {
        use ParamId::*;
        let tier = patch.tier();
        let v = |id| patch.value(id);
        self.prepared.update(patch, out.len(), sr);

        oscillator_stage(patch, f0, sr, seed, out);
        filter::apply_plan(&mut self.fft, &mut self.filter, out, &self.prepared.filter);
        for (o, e) in out.iter_mut().zip(&self.prepared.amp_env) {
            *o *= e;
        }

        let floor = v(NoiseFloor);
        if floor != 0.0 {
            for (i, o) in out.iter_mut().enumerate() {
                *o += floor * noise_sample(seed, NOISE_FLOOR_STREAM, i as u64);
            }
        }

        if tier.contains(Drive) {
            effects::distortion_into(out, v(Drive));
        }
        if tier.contains(DelayFeedback) {
            effects::delay_into(out, v(DelayFeedback), sr);
        }

        effects::reverb_into(
            &mut self.fft,
            &mut self.conv,
            out,
            v(ReverbSize),
            v(ReverbMix),
            seed,
            sr,
        );

        let gain = v(OutputGain);
        if gain == 0.0 {
            out.iter_mut().for_each(|x| *x = 0.0);
        } else {
            out.iter_mut().for_each(|x| *x = (gain * *x).tanh());
        }
    }
}

/// Mixed oscillator output before the filter.
pub fn oscillator_stage(patch: &Patch, f0: f64, sr: f64, seed: u64, out: &mut [f64]) {
    use ParamId::*;
    let v = |id| patch.value(id);
    let layout = UnisonLayout::new(
        v(UnisonVoices).round() as usize,
        v(Detune),
        v(UnisonSpread),
    );
    let mix = OscMix {
        saw: v(OscSaw),
        pulse: v(OscPulse),
        sine: v(OscSine),
        noise: v(OscNoise),
    };
    let vibrato = if patch.tier().contains(VibratoDepth) {
        v(VibratoDepth)
    } else {
        0.0
    };
    oscillator::oscillators(out, f0, &layout, mix, v(PulseWidth), vibrato, sr, seed);
}

pub fn render(req: &RenderRequest) -> Result<AudioBuffer> {
    Renderer::new().render(req)
}

/// Renders every candidate at every pitch: entry `[b][k]` is
/// `population[b]` at `pitches[k]`. Candidates are spread over the rayon
/// pool; each worker keeps its own [`Renderer`].
pub fn render_batch(
    population: &[ParamVector],
    pitches: &[f64],
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<Vec<AudioBuffer>>> {
    let patches = batch_patches(population)?;
    for &f0 in pitches {
        check_timing(f0, duration, sample_rate)?;
    }
    let n = (duration * sample_rate).round() as usize;
    Ok(patches
        .par_iter()
        .map_init(Renderer::new, |r, patch| {
            pitches
                .iter()
                .map(|&f0| {
                    let mut out = vec![0.0; n];
                    r.render_into(patch, f0, sample_rate, seed, &mut out);
                    AudioBuffer::new(out, sample_rate)
                })
                .collect()
        })
        .collect())
}

/// Denormalizes a population, requiring a single tier.
pub fn batch_patches(population: &[ParamVector]) -> Result<Vec<Patch>> {
    let first = population
        .first()
        .ok_or_else(|| Error::InvalidRequest("empty population".into()))?;
    let tier: Tier = first.tier()?;
    population
        .iter()
        .map(|p| {
            if p.len() != tier.dimension() {
                return Err(Error::MixedTiers);
            }
            denormalize(p, tier)
        })
        .collect()
}
