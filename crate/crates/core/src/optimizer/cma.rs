//! (μ/μ_w, λ)-CMA-ES with default strategy parameters, box-constrained to
//! `[0, 1]^D` by reflection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

pub const DEFAULT_LAMBDA: usize = 40;
pub const DEFAULT_SIGMA0: f64 = 0.15;
pub const DEFAULT_BUDGET: usize = 100_000;
pub const FAST_BUDGET: usize = 10_000;

/// Smallest eigenvalue kept after repair, relative to the largest.
const MIN_EIGEN_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmaConfig {
    pub lambda: usize,
    pub sigma0: f64,
    pub budget: usize,
    pub seed: u64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig {
            lambda: DEFAULT_LAMBDA,
            sigma0: DEFAULT_SIGMA0,
            budget: DEFAULT_BUDGET,
            seed: 0,
        }
    }
}

impl CmaConfig {
    pub fn fast() -> Self {
        CmaConfig {
            budget: FAST_BUDGET,
            ..CmaConfig::default()
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 4 {
            return Err(Error::InvalidArgument(format!("lambda {} < 4", self.lambda)));
        }
        if !(self.sigma0 > 0.0 && self.sigma0 <= 0.5) {
            return Err(Error::InvalidArgument(format!("sigma0 {} outside (0, 0.5]", self.sigma0)));
        }
        if self.budget < self.lambda {
            return Err(Error::InvalidArgument(format!(
                "budget {} is smaller than one generation ({})",
                self.budget, self.lambda
            )));
        }
        Ok(())
    }

    /// Whole generations that fit in the budget.
    pub fn generations(&self) -> usize {
        self.budget / self.lambda
    }
}

/// Folds `x` into `[0, 1]` by mirroring at both bounds.
pub fn reflect(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        return x;
    }
    if !x.is_finite() {
        return 0.5;
    }
    let r = x.rem_euclid(2.0);
    if r > 1.0 {
        2.0 - r
    } else {
        r
    }
}

#[derive(Debug, Clone)]
struct Strategy {
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Strategy {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Complete optimizer state. `ask` and `tell` alternate.
#[derive(Debug, Clone)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub covariance: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    pub evaluations: usize,
    pub best: Option<(ParamVector, f64)>,
    lambda: usize,
    strategy: Strategy,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    rng: ChaCha8Rng,
    pending: Option<Vec<ParamVector>>,
}

impl CmaState {
    pub fn new(mean: &ParamVector, config: &CmaConfig) -> Result<Self> {
        if config.lambda < 4 {
            return Err(Error::InvalidArgument(format!("lambda {} < 4", config.lambda)));
        }
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty search space".into()));
        }
        Ok(CmaState {
            mean: DVector::from_column_slice(mean.as_slice()),
            sigma: config.sigma0,
            covariance: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            evaluations: 0,
            best: None,
            lambda: config.lambda,
            strategy: Strategy::new(n, config.lambda),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            pending: None,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// Samples `λ` candidates from `N(m, σ²C)`, reflected into the box.
    pub fn ask(&mut self) -> Vec<ParamVector> {
        let n = self.dimension();
        let candidates: Vec<ParamVector> = (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
                let y = &self.basis * z.component_mul(&self.scales);
                let x = &self.mean + self.sigma * y;
                ParamVector::clamped(x.iter().map(|&v| reflect(v)).collect())
            })
            .collect();
        self.pending = Some(candidates.clone());
        candidates
    }

    /// Updates the distribution from the losses of the last `ask`. NaN losses
    /// rank last.
    pub fn tell(&mut self, candidates: &[ParamVector], losses: &[f64]) -> Result<()> {
        match &self.pending {
            Some(p) if p.as_slice() == candidates => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "tell must receive the candidates of the preceding ask".into(),
                ))
            }
        }
        if losses.len() != candidates.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} losses for {} candidates",
                losses.len(),
                candidates.len()
            )));
        }
        self.pending = None;
        self.evaluations += candidates.len();
        let key = |l: f64| if l.is_nan() { f64::INFINITY } else { l };
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| key(losses[a]).total_cmp(&key(losses[b])).then(a.cmp(&b)));

        let best = order[0];
        if !losses[best].is_nan()
            && self.best.as_ref().is_none_or(|(_, l)| losses[best] < *l)
        {
            self.best = Some((candidates[best].clone(), losses[best]));
        }

        let n = self.dimension();
        let s = &self.strategy;
        // Steps of the evaluated (reflected) points, in units of σ.
        let steps: Vec<DVector<f64>> = order[..s.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(candidates[i].as_slice()) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in s.weights.iter().zip(&steps) {
            y_w += *w * y;
        }
        self.mean += self.sigma * &y_w;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt = &self.basis * (self.basis.transpose() * &y_w).component_div(&self.scales);
        self.p_sigma = (1.0 - s.c_sigma) * &self.p_sigma
            + (s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff).sqrt() * inv_sqrt;
        let g = (self.generation + 1) as f64;
        let norm_ps = self.p_sigma.norm();
        let h_sigma = norm_ps / (1.0 - (1.0 - s.c_sigma).powf(2.0 * g)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * s.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - s.c_c) * &self.p_c + h * (s.c_c * (2.0 - s.c_c) * s.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in s.weights.iter().zip(&steps) {
            rank_mu += *w * y * y.transpose();
        }
        let decay = 1.0 - s.c_1 - s.c_mu + (1.0 - h) * s.c_1 * s.c_c * (2.0 - s.c_c);
        self.covariance = decay * &self.covariance
            + s.c_1 * &self.p_c * self.p_c.transpose()
            + s.c_mu * rank_mu;
        self.sigma *= ((s.c_sigma / s.d_sigma) * (norm_ps / s.chi_n - 1.0)).exp();
        self.generation += 1;
        self.decompose();
        Ok(())
    }

    /// Symmetrizes `C`, floors its spectrum and refreshes `B` and `D`.
    fn decompose(&mut self) {
        let c = (&self.covariance + self.covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let floor = (max * MIN_EIGEN_RATIO).max(f64::MIN_POSITIVE);
        let values = eig.eigenvalues.map(|v| if v.is_finite() { v.max(floor) } else { floor });
        self.covariance = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.scales.iter().map(|s| s * s).fold(f64::INFINITY, f64::min)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, l)| *l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(center: &[f64]) -> impl Fn(&ParamVector) -> f64 + '_ {
        move |x| x.as_slice().iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn run_sphere(seed: u64, budget: usize) -> f64 {
        let center: Vec<f64> = (0..28).map(|i| 0.2 + 0.6 * i as f64 / 27.0).collect();
        let f = sphere(&center);
        let config = CmaConfig::default().with_seed(seed).with_budget(budget);
        let mut state = CmaState::new(&ParamVector::filled(28, 0.5), &config).unwrap();
        for _ in 0..config.generations() {
            let xs = state.ask();
            let ls: Vec<f64> = xs.iter().map(&f).collect();
            state.tell(&xs, &ls).unwrap();
        }
        state.best_loss().unwrap()
    }

    #[test]
    fn sphere_converges_within_5000() {
        let mut finals: Vec<f64> = (0..5).map(|s| run_sphere(s, 5000)).collect();
        finals.sort_by(f64::total_cmp);
        assert!(finals[2] < 1e-4, "{finals:?}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        assert_eq!(run_sphere(3, 800), run_sphere(3, 800));
        assert_ne!(run_sphere(3, 800), run_sphere(4, 800));
    }

    #[test]
    fn candidates_stay_in_bounds() {
        let config = CmaConfig {
            sigma0: 0.5,
            ..CmaConfig::default()
        };
        let mut state = CmaState::new(&ParamVector::filled(5, 0.99), &config).unwrap();
        for _ in 0..20 {
            let xs = state.ask();
            assert!(xs.iter().all(|x| x.as_slice().iter().all(|v| (0.0..=1.0).contains(v))));
            let ls: Vec<f64> = xs.iter().map(|x| x.as_slice().iter().sum()).collect();
            state.tell(&xs, &ls).unwrap();
            assert!(state.min_eigenvalue() > 0.0);
            let c = &state.covariance;
            assert!((c - c.transpose()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn nan_losses_rank_last_and_count() {
        let config = CmaConfig::default();
        let mut state = CmaState::new(&ParamVector::filled(4, 0.5), &config).unwrap();
        let xs = state.ask();
        let mut ls: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        ls[0] = f64::NAN;
        state.tell(&xs, &ls).unwrap();
        assert_eq!(state.evaluations, 40);
        let best = state.best.clone().unwrap();
        assert_ne!(best.0, xs[0]);
        assert!(best.1.is_finite());
    }

    #[test]
    fn tell_requires_matching_ask() {
        let mut state = CmaState::new(&ParamVector::filled(3, 0.5), &CmaConfig::default()).unwrap();
        let xs = state.ask();
        let ls = vec![0.0; xs.len()];
        assert!(state.tell(&xs[..5], &ls[..5]).is_err());
        state.tell(&xs, &ls).unwrap();
        assert!(state.tell(&xs, &ls).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CmaConfig::default().validate().is_ok());
        assert!(CmaConfig::default().with_budget(39).validate().is_err());
        assert!(CmaConfig { lambda: 3, ..CmaConfig::default() }.validate().is_err());
        assert!(CmaConfig { sigma0: 0.6, ..CmaConfig::default() }.validate().is_err());
        assert_eq!(CmaConfig::fast().generations(), 250);
    }

    proptest! {
        #[test]
        fn reflection_maps_into_unit_interval(x in -1e6f64..1e6) {
            let r = reflect(x);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(reflect(r), r);
        }
    }
}
