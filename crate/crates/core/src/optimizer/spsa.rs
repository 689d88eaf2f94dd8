//! Simultaneous-perturbation stochastic approximation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Objective;
use crate::params::ParamVector;

const ALPHA: f64 = 0.602;
const GAMMA: f64 = 0.101;

pub const DEFAULT_A: f64 = 0.01;
pub const DEFAULT_C: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct SpsaResult {
    pub x: ParamVector,
    pub loss: f64,
    pub initial_loss: f64,
    /// Objective evaluations spent, including the two endpoint checks.
    pub evaluations: usize,
}

/// Two-sided gradient estimate along a Rademacher direction `delta`.
pub fn spsa_gradient(objective: &dyn Objective, x: &[f64], delta: &[f64], c: f64) -> Vec<f64> {
    let plus = ParamVector::clamped(x.iter().zip(delta).map(|(v, d)| v + c * d).collect());
    let minus = ParamVector::clamped(x.iter().zip(delta).map(|(v, d)| v - c * d).collect());
    let losses = objective.evaluate_batch(&[plus, minus]);
    let diff = losses[0] - losses[1];
    let diff = if diff.is_finite() { diff } else { 0.0 };
    delta.iter().map(|d| diff / (2.0 * c * d)).collect()
}

pub fn rademacher(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Runs `iterations` SPSA steps from `x`, clamping every iterate, and
/// returns the better of the input and the final iterate.
pub fn spsa_finetune(
    objective: &dyn Objective,
    x: &ParamVector,
    iterations: usize,
    a: f64,
    c: f64,
    seed: u64,
) -> SpsaResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = x.as_slice().to_vec();
    for k in 0..iterations {
        let ak = a / (k as f64 + 1.0).powf(ALPHA);
        let ck = c / (k as f64 + 1.0).powf(GAMMA);
        let delta = rademacher(&mut rng, theta.len());
        let g = spsa_gradient(objective, &theta, &delta, ck);
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t = (*t - ak * gi).clamp(0.0, 1.0);
        }
    }
    let last = ParamVector::clamped(theta);
    let initial_loss = objective.evaluate(x);
    let final_loss = objective.evaluate(&last);
    let evaluations = 2 * iterations + 2;
    if final_loss < initial_loss {
        SpsaResult { x: last, loss: final_loss, initial_loss, evaluations }
    } else {
        SpsaResult { x: x.clone(), loss: initial_loss, initial_loss, evaluations }
    }
}
