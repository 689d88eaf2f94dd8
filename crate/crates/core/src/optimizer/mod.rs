//! Patch search: CMA-ES over the normalized parameter space, seeded by a
//! spectral initializer, with multi-start and SPSA variants.

pub mod cma;
pub mod init;
pub mod spsa;

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossContext, TargetSet};
use crate::params::{denormalize, ParamVector, Patch, Tier};
use crate::synth::Renderer;

pub use cma::{reflect, CmaConfig, CmaState};
pub use init::{spectral_init, InitResult};
pub use spsa::{spsa_finetune, spsa_gradient, SpsaResult};

/// Largest number of target pitches fitted at once.
pub const MAX_PITCHES: usize = 3;

/// Something to minimize over `[0, 1]^D`.
pub trait Objective: Sync {
    fn dimension(&self) -> usize;

    fn evaluate(&self, x: &ParamVector) -> f64;

    /// Losses of a population, in order. Implementations must return the
    /// same values as calling `evaluate` on each vector.
    fn evaluate_batch(&self, xs: &[ParamVector]) -> Vec<f64> {
        xs.iter().map(|x| self.evaluate(x)).collect()
    }
}

/// Adapts a closure to [`Objective`].
pub struct FnObjective<F> {
    pub dimension: usize,
    pub f: F,
}

impl<F: Fn(&ParamVector) -> f64 + Sync> Objective for FnObjective<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn evaluate(&self, x: &ParamVector) -> f64 {
        (self.f)(x)
    }
}

/// One target note: its fundamental and audio.
#[derive(Debug, Clone)]
pub struct PitchTarget {
    pub f0: f64,
    pub audio: AudioBuffer,
}

/// Mean composite loss of a patch rendered at every target pitch.
pub struct SynthObjective {
    pub tier: Tier,
    pub pitches: Vec<f64>,
    pub targets: TargetSet,
    pub seed: u64,
}

impl SynthObjective {
    pub fn new(tier: Tier, targets: &[PitchTarget], seed: u64) -> Result<Self> {
        if targets.is_empty() || targets.len() > MAX_PITCHES {
            return Err(Error::InvalidArgument(format!(
                "expected 1 to {MAX_PITCHES} targets, got {}",
                targets.len()
            )));
        }
        let sr = targets[0].audio.sample_rate;
        for t in targets {
            if t.audio.sample_rate != sr {
                return Err(Error::ShapeMismatch("targets differ in sample rate".into()));
            }
            crate::synth::RenderRequest::new(Patch::defaults(tier), t.f0, t.audio.duration())
                .with_sample_rate(sr)
                .validate()?;
        }
        Ok(SynthObjective {
            tier,
            pitches: targets.iter().map(|t| t.f0).collect(),
            targets: TargetSet::new(targets.iter().map(|t| t.audio.clone()).collect()),
            seed,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.targets.buffers[0].sample_rate
    }

    /// Renders `x` at every target pitch, each as long as its target.
    pub fn render(&self, renderer: &mut Renderer, x: &ParamVector) -> Result<Vec<AudioBuffer>> {
        let patch = denormalize(x, self.tier)?;
        Ok(self.render_patch(renderer, &patch))
    }

    pub fn render_patch(&self, renderer: &mut Renderer, patch: &Patch) -> Vec<AudioBuffer> {
        let sr = self.sample_rate();
        self.pitches
            .iter()
            .zip(&self.targets.buffers)
            .map(|(&f0, target)| {
                let mut out = vec![0.0; target.len()];
                renderer.render_into(patch, f0, sr, self.seed, &mut out);
                AudioBuffer::new(out, sr)
            })
            .collect()
    }

    pub fn breakdowns(&self, x: &ParamVector) -> Result<Vec<LossBreakdown>> {
        let renders = self.render(&mut Renderer::new(), x)?;
        self.targets.breakdowns(&mut LossContext::new(), &renders)
    }

    fn evaluate_with(&self, renderer: &mut Renderer, ctx: &mut LossContext, x: &ParamVector) -> f64 {
        self.render(renderer, x)
            .and_then(|r| self.targets.mean_loss(ctx, &r))
            .unwrap_or(f64::NAN)
    }
}

impl Objective for SynthObjective {
    fn dimension(&self) -> usize {
        self.tier.dimension()
    }

    fn evaluate(&self, x: &ParamVector) -> f64 {
        self.evaluate_with(&mut Renderer::new(), &mut LossContext::new(), x)
    }

    fn evaluate_batch(&self, xs: &[ParamVector]) -> Vec<f64> {
        xs.par_iter()
            .map_init(
                || (Renderer::new(), LossContext::new()),
                |(r, ctx), x| self.evaluate_with(r, ctx, x),
            )
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub evaluations: usize,
    pub best_loss: f64,
    /// Left out of serialized traces so reports are reproducible.
    #[serde(skip, default)]
    pub wall_ms: u64,
}

/// Best-so-far loss after each generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub samples: Vec<TraceSample>,
}

impl ConvergenceTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.samples.last().map(|s| s.best_loss)
    }

    /// Best loss after at most `evaluations` evaluations.
    pub fn loss_at(&self, evaluations: usize) -> Option<f64> {
        self.samples
            .iter()
            .take_while(|s| s.evaluations <= evaluations)
            .last()
            .map(|s| s.best_loss)
    }

    /// Share of the reduction from `initial` to the final loss achieved after
    /// `evaluations` evaluations. 1 when there was no reduction.
    pub fn improvement_fraction(&self, initial: f64, evaluations: usize) -> f64 {
        let Some(last) = self.final_loss() else {
            return 0.0;
        };
        let total = initial - last;
        if total <= 0.0 {
            return 1.0;
        }
        let at = self.loss_at(evaluations).unwrap_or(initial).min(initial);
        (initial - at) / total
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("evaluations,best_loss,wall_ms\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", s.evaluations, s.best_loss, s.wall_ms));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Emitted once per generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub generation: usize,
    pub generations: usize,
    pub evaluations: usize,
    pub best_loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub best: ParamVector,
    pub best_loss: f64,
    /// Loss of the starting point (not counted in the budget).
    pub initial_loss: f64,
    pub trace: ConvergenceTrace,
    pub evaluations: usize,
}

impl OptimizeResult {
    pub fn patch(&self, tier: Tier) -> Result<Patch> {
        denormalize(&self.best, tier)
    }
}

/// Runs CMA-ES from `init` for `config.budget / config.lambda` generations.
/// The starting point is evaluated first and competes for best-so-far.
pub fn optimize(
    objective: &dyn Objective,
    init: &ParamVector,
    config: &CmaConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<OptimizeResult> {
    config.validate()?;
    if init.len() != objective.dimension() {
        return Err(Error::ShapeMismatch(format!(
            "initial point has {} coordinates, objective {}",
            init.len(),
            objective.dimension()
        )));
    }
    let start = Instant::now();
    let initial_loss = objective.evaluate(init);
    let mut best = (init.clone(), if initial_loss.is_nan() { f64::INFINITY } else { initial_loss });
    let mut state = CmaState::new(init, config)?;
    let mut trace = ConvergenceTrace::default();
    let generations = config.generations();
    for generation in 1..=generations {
        let xs = state.ask();
        let losses = objective.evaluate_batch(&xs);
        state.tell(&xs, &losses)?;
        if let Some((x, l)) = &state.best {
            if *l < best.1 {
                best = (x.clone(), *l);
            }
        }
        let sample = TraceSample {
            evaluations: state.evaluations,
            best_loss: best.1,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        trace.samples.push(sample);
        progress(&Progress {
            generation,
            generations,
            evaluations: sample.evaluations,
            best_loss: sample.best_loss,
            wall_ms: sample.wall_ms,
        });
    }
    Ok(OptimizeResult {
        best: best.0,
        best_loss: best.1,
        initial_loss,
        trace,
        evaluations: state.evaluations,
    })
}

#[derive(Debug, Clone)]
pub struct MultiStartResult {
    pub best: OptimizeResult,
    pub runs: Vec<OptimizeResult>,
}

pub const MULTI_START_RUNS: usize = 8;
pub const MULTI_START_SIGMA: f64 = 0.1;

/// `n` independent runs sharing `config.budget`. Run 0 starts from `init`
/// with `config.seed`; run `i` starts from `init` plus Gaussian noise
/// (σ = 0.1, clamped) and uses seed `config.seed + i`.
pub fn multi_start(
    objective: &dyn Objective,
    init: &ParamVector,
    config: &CmaConfig,
    n: usize,
    progress: &mut dyn FnMut(&Progress),
) -> Result<MultiStartResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("multi-start needs at least one run".into()));
    }
    let per_run = CmaConfig {
        budget: config.budget / n,
        ..*config
    };
    per_run.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6D75_6C74_6973_7461);
    let noise = Normal::new(0.0, MULTI_START_SIGMA).expect("positive sigma");
    let mut runs = Vec::with_capacity(n);
    for i in 0..n {
        let start = if i == 0 {
            init.clone()
        } else {
            ParamVector::clamped(init.as_slice().iter().map(|v| v + noise.sample(&mut rng)).collect())
        };
        let cfg = per_run.with_seed(config.seed.wrapping_add(i as u64));
        runs.push(optimize(objective, &start, &cfg, progress)?);
    }
    let best = runs
        .iter()
        .min_by(|a, b| a.best_loss.total_cmp(&b.best_loss))
        .expect("at least one run")
        .clone();
    Ok(MultiStartResult { best, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(dim: usize) -> FnObjective<impl Fn(&ParamVector) -> f64 + Sync> {
        FnObjective {
            dimension: dim,
            f: |x: &ParamVector| x.as_slice().iter().map(|v| (v - 0.3) * (v - 0.3)).sum(),
        }
    }

    #[test]
    fn trace_is_monotone_with_one_sample_per_generation() {
        let obj = sphere(6);
        let mut events = Vec::new();
        let r = optimize(&obj, &ParamVector::filled(6, 0.9), &CmaConfig::fast().with_budget(2000), &mut |p| {
            events.push(*p)
        })
        .unwrap();
        assert_eq!(events.len(), 50);
        assert_eq!(r.trace.samples.len(), 50);
        assert!(r.trace.samples.windows(2).all(|w| w[1].best_loss <= w[0].best_loss
            && w[1].evaluations > w[0].evaluations));
        assert_eq!(r.evaluations, 2000);
        assert!(r.best_loss < r.initial_loss);
        assert_eq!(r.best_loss, obj.evaluate(&r.best));
    }

    #[test]
    fn budget_below_lambda_is_rejected() {
        let obj = sphere(3);
        assert!(optimize(&obj, &ParamVector::filled(3, 0.5), &CmaConfig::default().with_budget(10), &mut |_| {}).is_err());
    }

    #[test]
    fn csv_export() {
        let trace = ConvergenceTrace {
            samples: vec![
                TraceSample { evaluations: 40, best_loss: 2.5, wall_ms: 3 },
                TraceSample { evaluations: 80, best_loss: 1.25, wall_ms: 7 },
            ],
        };
        assert_eq!(trace.to_csv(), "evaluations,best_loss,wall_ms\n40,2.5,3\n80,1.25,7\n");
        assert_eq!(trace.loss_at(79), Some(2.5));
        assert_eq!(trace.loss_at(10), None);
        assert!((trace.improvement_fraction(3.0, 40) - 0.5 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn multi_start_returns_minimum() {
        let obj = sphere(4);
        let cfg = CmaConfig::default().with_budget(1600).with_seed(2);
        let r = multi_start(&obj, &ParamVector::filled(4, 0.8), &cfg, 4, &mut |_| {}).unwrap();
        assert_eq!(r.runs.len(), 4);
        assert!(r.runs.iter().all(|run| r.best.best_loss <= run.best_loss));
        assert!(r.runs.iter().all(|run| run.evaluations == 400));
    }

    #[test]
    fn multi_start_of_one_is_optimize() {
        let obj = sphere(4);
        let cfg = CmaConfig::default().with_budget(800).with_seed(9);
        let init = ParamVector::filled(4, 0.8);
        let single = optimize(&obj, &init, &cfg, &mut |_| {}).unwrap();
        let multi = multi_start(&obj, &init, &cfg, 1, &mut |_| {}).unwrap();
        assert_eq!(single.best, multi.best.best);
        assert_eq!(single.best_loss, multi.best.best_loss);
    }
}
