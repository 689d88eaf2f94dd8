//! End-to-end matching: WAV in, note segmentation, representative pitches,
//! optimization, and preset / trace / report / audio out.

mod ablate;
mod bench;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, resample, write_wav, AudioBuffer, WavFormat, DEFAULT_SAMPLE_RATE};
use crate::dsp::features::{harmonic_amplitudes, summarize, FeatureSummary};
use crate::dsp::onset::{detect_onsets, DEFAULT_DELTA, LEAD_COMPENSATION};
use crate::dsp::pitch::{detect_pitch, MIN_SEGMENT_SECONDS};
use crate::error::{Error, Result};
use crate::optimizer::{
    optimize, spectral_init, CmaConfig, ConvergenceTrace, Objective, PitchTarget, Progress,
    SynthObjective, MAX_PITCHES,
};
use crate::params::{normalize, ParamId, Patch, Preset, Tier};
use crate::synth::Renderer;

pub use ablate::{ablate, ablate_targets, AblationRow};
pub use bench::{bench, BenchConfig, BenchReport, PAPER_EVALS_PER_SECOND};

/// Segments are trimmed where the signal stays below this fraction of the
/// segment peak (-60 dB).
const TRIM_THRESHOLD: f64 = 1e-3;
/// Cluster radius for grouping segments by pitch.
pub const PITCH_CLUSTER_CENTS: f64 = 50.0;
/// Harmonics compared in a [`MatchReport`].
pub const REPORT_HARMONICS: usize = 8;
/// Normalized distance from a bound at which a parameter counts as pinned.
const BOUND_MARGIN: f64 = 0.01;

/// One detected note.
#[derive(Debug, Clone)]
pub struct NoteSegment {
    pub audio: AudioBuffer,
    /// Sample range in the source recording.
    pub onset: usize,
    pub offset: usize,
    pub f0: f64,
    pub confidence: f64,
}

impl NoteSegment {
    pub fn duration(&self) -> f64 {
        self.audio.duration()
    }

    pub fn rms(&self) -> f64 {
        self.audio.rms()
    }

    pub fn target(&self) -> PitchTarget {
        PitchTarget {
            f0: self.f0,
            audio: self.audio.clone(),
        }
    }

    /// The segment cut to at most `seconds`.
    pub fn truncated(&self, seconds: f64) -> NoteSegment {
        let n = ((seconds * self.audio.sample_rate).round() as usize).min(self.audio.len());
        NoteSegment {
            audio: self.audio.slice(0, n),
            offset: self.onset + n,
            ..self.clone()
        }
    }
}

/// Mono at the working sample rate.
pub fn prepare(audio: &AudioBuffer) -> AudioBuffer {
    resample(audio, DEFAULT_SAMPLE_RATE)
}

/// Range of `samples` outside which the signal stays below
/// `TRIM_THRESHOLD` of the peak.
fn trim(samples: &[f64]) -> (usize, usize) {
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let loud = |s: &f64| s.abs() > peak * TRIM_THRESHOLD;
    match (samples.iter().position(loud), samples.iter().rposition(loud)) {
        (Some(a), Some(b)) if peak > 0.0 => (a, b + 1),
        _ => (0, 0),
    }
}

/// Splits `audio` at detected onsets, trims silence at both ends of each
/// region and keeps the voiced ones.
pub fn segment(audio: &AudioBuffer) -> Result<Vec<NoteSegment>> {
    let sr = audio.sample_rate;
    let min_len = (MIN_SEGMENT_SECONDS * sr).ceil() as usize;
    // Reported onsets sit inside the attack; regions start a little earlier
    // and leading silence is trimmed afterwards.
    let mut bounds = vec![0];
    for onset in detect_onsets(audio, DEFAULT_DELTA) {
        let start = onset.saturating_sub(LEAD_COMPENSATION);
        if start >= bounds.last().expect("non-empty") + min_len {
            bounds.push(start);
        }
    }
    bounds.push(audio.len());
    let mut out = Vec::new();
    for w in bounds.windows(2) {
        let (a, b) = trim(&audio.samples[w[0]..w[1]]);
        let (onset, offset) = (w[0] + a, w[0] + b);
        if offset - onset < min_len {
            continue;
        }
        let seg = audio.slice(onset, offset);
        let Ok(pitch) = detect_pitch(&seg) else {
            continue;
        };
        if !pitch.voiced || !(pitch.f0 > crate::synth::MIN_F0 && pitch.f0 < sr / 4.0) {
            continue;
        }
        out.push(NoteSegment {
            audio: seg,
            onset,
            offset,
            f0: pitch.f0,
            confidence: pitch.confidence,
        });
    }
    if out.is_empty() {
        return Err(Error::NoVoicedSegments);
    }
    Ok(out)
}

fn cents(a: f64, b: f64) -> f64 {
    1200.0 * (a / b).log2()
}

/// Groups segments whose pitches lie within 50 cents of a cluster's first
/// (lowest) member, keeps the `k` most populated clusters and returns the
/// loudest segment of each, ordered by pitch.
pub fn select_pitches(segments: &[NoteSegment], k: usize) -> Vec<NoteSegment> {
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| segments[a].f0.total_cmp(&segments[b].f0).then(a.cmp(&b)));
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match clusters.last_mut() {
            Some(c) if cents(segments[i].f0, segments[c[0]].f0).abs() <= PITCH_CLUSTER_CENTS => c.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    let loudest = |c: &Vec<usize>| {
        *c.iter()
            .max_by(|&&a, &&b| segments[a].rms().total_cmp(&segments[b].rms()).then(b.cmp(&a)))
            .expect("clusters are non-empty")
    };
    let mut ranked: Vec<(usize, usize)> = clusters.iter().map(|c| (c.len(), loudest(c))).collect();
    // Most members first; ties go to the louder representative.
    ranked.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(segments[b.1].rms().total_cmp(&segments[a.1].rms()))
            .then(a.1.cmp(&b.1))
    });
    let mut picked: Vec<NoteSegment> = ranked.iter().take(k).map(|&(_, i)| segments[i].clone()).collect();
    picked.sort_by(|a, b| a.f0.total_cmp(&b.f0));
    picked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub tier: Tier,
    pub cma: CmaConfig,
    /// Number of representative pitches.
    pub pitches: usize,
    /// Targets are cut to this length.
    pub max_note_seconds: f64,
    /// Noise seed of candidate renders.
    pub render_seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            tier: Tier::T28,
            cma: CmaConfig::fast(),
            pitches: MAX_PITCHES,
            max_note_seconds: 1.0,
            render_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicComparison {
    pub f0: f64,
    /// Harmonic amplitudes relative to the fundamental.
    pub original: Vec<f64>,
    pub matched: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub patch: Patch,
    pub tier: Tier,
    pub pitches: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub per_pitch_losses: Vec<f64>,
    pub evaluations: usize,
    /// The initializer found no pitch and started from the neutral point.
    pub init_fallback: bool,
    /// Parameters that ended within 1% of a bound.
    pub at_bound: Vec<String>,
    pub feature_summary: FeatureSummary,
    pub harmonic_comparison: Vec<HarmonicComparison>,
    pub trace: ConvergenceTrace,
}

impl MatchReport {
    pub fn detune_at_bound(&self) -> bool {
        self.at_bound.iter().any(|n| n == ParamId::Detune.name())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A finished match with the audio needed for exports.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub report: MatchReport,
    pub targets: Vec<NoteSegment>,
    pub renders: Vec<AudioBuffer>,
}

impl MatchOutcome {
    /// Original targets followed by the matched renders.
    pub fn side_by_side(&self) -> AudioBuffer {
        let sr = self.renders.first().map_or(DEFAULT_SAMPLE_RATE, |r| r.sample_rate);
        let samples = self
            .targets
            .iter()
            .map(|t| &t.audio.samples)
            .chain(self.renders.iter().map(|r| &r.samples))
            .flatten()
            .copied()
            .collect();
        AudioBuffer::new(samples, sr)
    }

    /// Writes `preset.toml`, `trace.csv`, `report.json` and
    /// `side_by_side.wav` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<OutputPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = OutputPaths::in_dir(dir);
        Preset::new(self.report.patch.clone())
            .with_loss(self.report.final_loss)
            .save(&paths.preset)?;
        self.report.trace.write_csv(&paths.trace)?;
        std::fs::write(&paths.report, self.report.to_json()?).map_err(|e| Error::io(&paths.report, e))?;
        write_wav(&paths.audio, &self.side_by_side(), WavFormat::Pcm16)?;
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub preset: PathBuf,
    pub trace: PathBuf,
    pub report: PathBuf,
    pub audio: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            preset: dir.join("preset.toml"),
            trace: dir.join("trace.csv"),
            report: dir.join("report.json"),
            audio: dir.join("side_by_side.wav"),
        }
    }
}

/// Parameters whose normalized coordinate ended near 0 or 1.
pub fn params_at_bound(patch: &Patch) -> Vec<String> {
    let x = normalize(patch).vector;
    patch
        .tier()
        .params()
        .iter()
        .zip(x.as_slice())
        .filter(|(id, &v)| **id != ParamId::UnisonVoices && !(BOUND_MARGIN..=1.0 - BOUND_MARGIN).contains(&v))
        .map(|(id, _)| id.name().to_string())
        .collect()
}

/// Fits a patch to already-selected target notes.
pub fn match_targets(
    targets: &[NoteSegment],
    config: &MatchConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<MatchOutcome> {
    if targets.is_empty() {
        return Err(Error::NoVoicedSegments);
    }
    let targets: Vec<NoteSegment> = targets.iter().map(|t| t.truncated(config.max_note_seconds)).collect();
    let pitch_targets: Vec<PitchTarget> = targets.iter().map(NoteSegment::target).collect();
    let objective = SynthObjective::new(config.tier, &pitch_targets, config.render_seed)?;
    let loudest = targets
        .iter()
        .max_by(|a, b| a.rms().total_cmp(&b.rms()))
        .expect("non-empty");
    let features = summarize(&loudest.audio, Some(loudest.f0));
    let init = spectral_init(&features, config.tier);
    let result = optimize(&objective, &init.x, &config.cma, progress)?;
    let patch = result.patch(config.tier)?;

    let renders = objective.render_patch(&mut Renderer::new(), &patch);
    let per_pitch_losses = objective
        .targets
        .breakdowns(&mut crate::loss::LossContext::new(), &renders)?
        .iter()
        .map(|b| b.composite)
        .collect();
    let harmonic_comparison = targets
        .iter()
        .zip(&renders)
        .map(|(t, r)| {
            Ok(HarmonicComparison {
                f0: t.f0,
                original: harmonic_amplitudes(&t.audio, t.f0, REPORT_HARMONICS)?,
                matched: harmonic_amplitudes(r, t.f0, REPORT_HARMONICS)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(objective.evaluate(&result.best), result.best_loss);
    let report = MatchReport {
        at_bound: params_at_bound(&patch),
        patch,
        tier: config.tier,
        pitches: objective.pitches.clone(),
        initial_loss: result.initial_loss,
        final_loss: result.best_loss,
        per_pitch_losses,
        evaluations: result.evaluations,
        init_fallback: init.fallback,
        feature_summary: features,
        harmonic_comparison,
        trace: result.trace,
    };
    Ok(MatchOutcome {
        report,
        targets,
        renders,
    })
}

/// Segments `audio`, picks representative pitches and fits a patch.
pub fn match_audio(
    audio: &AudioBuffer,
    config: &MatchConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<MatchOutcome> {
    let audio = prepare(audio);
    let segments = segment(&audio)?;
    let picked = select_pitches(&segments, config.pitches);
    match_targets(&picked, config, progress)
}

/// [`match_audio`] on a WAV file, writing all outputs into `out_dir`.
pub fn match_file(
    path: impl AsRef<Path>,
    config: &MatchConfig,
    out_dir: impl AsRef<Path>,
    progress: &mut dyn FnMut(&Progress),
) -> Result<MatchOutcome> {
    let audio = read_wav(path)?;
    let outcome = match_audio(&audio, config, progress)?;
    outcome.write(out_dir)?;
    Ok(outcome)
}
