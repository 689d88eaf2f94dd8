use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::DEFAULT_SAMPLE_RATE;
use crate::error::Result;
use crate::loss::composite_loss;
use crate::optimizer::{Objective, PitchTarget, SynthObjective};
use crate::params::{denormalize, ParamVector, Tier};
use crate::synth::{render, RenderRequest};

/// Reference throughput quoted for the original implementation.
pub const PAPER_EVALS_PER_SECOND: f64 = 553.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub population: usize,
    pub pitches: Vec<f64>,
    pub duration: f64,
    pub tier: Tier,
    /// Each path is timed for at least this long.
    pub min_seconds: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            population: 40,
            pitches: vec![221.0, 278.0, 295.0],
            duration: 0.15,
            tier: Tier::T28,
            min_seconds: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub generations: usize,
    /// Equals `generations * population`.
    pub evaluations: usize,
    pub batched_seconds: f64,
    pub batched_evals_per_second: f64,
    pub serial_evaluations: usize,
    pub serial_seconds: f64,
    pub serial_evals_per_second: f64,
    pub speedup: f64,
    /// Batched and serial losses were bit-identical on the shared candidates.
    pub identical: bool,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        format!(
            "batched: {} evaluations in {:.2} s = {:.1} evals/s\n\
             serial:  {} evaluations in {:.2} s = {:.1} evals/s\n\
             speedup: {:.2}x (B = {}, K = {}, {} ms notes)\n\
             reference: {PAPER_EVALS_PER_SECOND} evals/s reported for the original implementation",
            self.evaluations,
            self.batched_seconds,
            self.batched_evals_per_second,
            self.serial_evaluations,
            self.serial_seconds,
            self.serial_evals_per_second,
            self.speedup,
            self.config.population,
            self.config.pitches.len(),
            (self.config.duration * 1000.0).round(),
        )
    }
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> ParamVector {
    ParamVector::clamped((0..dim).map(|_| rng.random::<f64>()).collect())
}

/// Throughput of the batched objective against rendering and scoring every
/// (candidate, pitch) pair from scratch.
pub fn bench(config: &BenchConfig) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.tier.dimension();
    let target_patch = denormalize(&random_vector(&mut rng, dim), config.tier)?;
    let targets: Vec<PitchTarget> = config
        .pitches
        .iter()
        .map(|&f0| {
            Ok(PitchTarget {
                f0,
                audio: render(&RenderRequest::new(target_patch.clone(), f0, config.duration))?,
            })
        })
        .collect::<Result<_>>()?;
    let objective = SynthObjective::new(config.tier, &targets, 0)?;

    let serial_loss = |x: &ParamVector| -> Result<f64> {
        let patch = denormalize(x, config.tier)?;
        let mut total = 0.0;
        for t in &targets {
            let req = RenderRequest::new(patch.clone(), t.f0, config.duration).with_sample_rate(DEFAULT_SAMPLE_RATE);
            total += composite_loss(&t.audio, &render(&req)?)?.composite;
        }
        Ok(total / targets.len() as f64)
    };

    let first: Vec<ParamVector> = (0..config.population).map(|_| random_vector(&mut rng, dim)).collect();
    let start = Instant::now();
    let first_losses = objective.evaluate_batch(&first);
    let mut generations = 1;
    while start.elapsed().as_secs_f64() < config.min_seconds {
        let pop: Vec<ParamVector> = (0..config.population).map(|_| random_vector(&mut rng, dim)).collect();
        std::hint::black_box(objective.evaluate_batch(&pop));
        generations += 1;
    }
    let batched_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut identical = true;
    let mut serial_evaluations = 0;
    while serial_evaluations < first.len() || start.elapsed().as_secs_f64() < config.min_seconds {
        let i = serial_evaluations % first.len();
        let l = serial_loss(&first[i])?;
        identical &= l.to_bits() == first_losses[i].to_bits();
        serial_evaluations += 1;
    }
    let serial_seconds = start.elapsed().as_secs_f64();

    let evaluations = generations * config.population;
    let batched_evals_per_second = evaluations as f64 / batched_seconds;
    let serial_evals_per_second = serial_evaluations as f64 / serial_seconds;
    Ok(BenchReport {
        config: config.clone(),
        generations,
        evaluations,
        batched_seconds,
        batched_evals_per_second,
        serial_evaluations,
        serial_seconds,
        serial_evals_per_second,
        speedup: batched_evals_per_second / serial_evals_per_second,
        identical,
    })
}
