//! Adaptive random-walk Metropolis over unconstrained coordinates.
//!
//! During burn-in the per-coordinate proposal scales track the running
//! standard deviation of the chain and a global multiplier is tuned toward
//! the target acceptance rate. Adaptation stops at the end of burn-in, so the
//! retained draws come from a fixed Metropolis kernel.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveMetropolis {
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
    pub initial_step: f64,
}

impl Default for AdaptiveMetropolis {
    fn default() -> Self {
        AdaptiveMetropolis {
            burn_in: 500,
            thin: 5,
            target_acceptance: 0.234,
            initial_step: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    pub samples: Vec<Vec<f64>>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub step_scales: Vec<f64>,
}

impl AdaptiveMetropolis {
    pub fn run<F>(&self, mut log_density: F, init: Vec<f64>, n_samples: usize, rng: &mut Rng) -> ChainOutput
    where
        F: FnMut(&[f64]) -> f64,
    {
        let d = init.len();
        let mut x = init;
        let mut lp = log_density(&x);
        let mut diag = vec![self.initial_step; d];
        let mut log_global = 0.0f64;

        // Welford accumulators over burn-in states.
        let mut count = 0.0;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];

        let mut proposal = vec![0.0; d];
        for t in 0..self.burn_in {
            let scale = log_global.exp();
            for i in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                proposal[i] = x[i] + scale * diag[i] * z;
            }
            let lp_new = log_density(&proposal);
            let accept_prob = if lp_new.is_nan() { 0.0 } else { (lp_new - lp).exp().min(1.0) };
            if rng.random::<f64>() < accept_prob {
                x.copy_from_slice(&proposal);
                lp = lp_new;
            }
            let gain = 1.0 / ((t + 1) as f64).powf(0.6);
            log_global += gain * (accept_prob - self.target_acceptance);

            count += 1.0;
            for i in 0..d {
                let delta = x[i] - mean[i];
                mean[i] += delta / count;
                m2[i] += delta * (x[i] - mean[i]);
            }
            if t >= 100 && t % 50 == 0 {
                for i in 0..d {
                    let sd = (m2[i] / (count - 1.0)).sqrt();
                    if sd.is_finite() && sd > 1e-6 {
                        diag[i] = sd;
                    }
                }
            }
        }

        let scale = log_global.exp();
        let steps: Vec<f64> = diag.iter().map(|s| s * scale).collect();
        let thin = self.thin.max(1);
        let mut samples = Vec::with_capacity(n_samples);
        let mut accepted = 0usize;
        let total = n_samples * thin;
        for t in 0..total {
            for i in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                proposal[i] = x[i] + steps[i] * z;
            }
            let lp_new = log_density(&proposal);
            if !lp_new.is_nan() && rng.random::<f64>().ln() < lp_new - lp {
                x.copy_from_slice(&proposal);
                lp = lp_new;
                accepted += 1;
            }
            if (t + 1) % thin == 0 {
                samples.push(x.clone());
            }
        }
        ChainOutput {
            samples,
            acceptance_rate: accepted as f64 / total.max(1) as f64,
            step_scales: steps,
        }
    }
}
