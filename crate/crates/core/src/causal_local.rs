//! Local approximation of `E(Y | do(X = x))` by backdoor adjustment on the
//! parents of `X`.
//!
//! `Y` is regressed on `X` and its adjustment set with an additive GP,
//! `y = f(x) + Σ_Z g_Z(z) + ε`. Posterior draws of `f` over the grid, shifted
//! by the sample mean of `Y`, are draws of the intervention expectation.
//! Without a known DAG the curves are mixed over the sampled parent sets of
//! `X` in proportion to their posterior probability.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{CurveMeta, InterventionCurve, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::kernel::{
    draw_gaussian, sample_hyperparameters, GpFactor, GpPosterior, HyperPrior, HyperSamplerConfig, Hyperparams,
};
use crate::rng::{self, tag};
use crate::structure::{parent_set_posterior, WeightedDagSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalConfig {
    pub prior: HyperPrior,
    pub hyper_samples: usize,
    pub sampler: HyperSamplerConfig,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            prior: HyperPrior::default(),
            hyper_samples: 50,
            sampler: HyperSamplerConfig::default(),
        }
    }
}

/// Additive GP regression of `Y` on `X` and an adjustment set, with
/// hyperparameter posterior samples. Lengthscale 0 belongs to `X`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFit {
    pub x: usize,
    pub y: usize,
    pub adjustment: NodeSet,
    pub samples: Vec<Hyperparams>,
    pub acceptance_rate: f64,
    pub y_mean: f64,
    x_mean: f64,
    x_sd: f64,
    inputs: DMatrix<f64>,
    y_centered: DVector<f64>,
}

pub fn fit_local(data: &Dataset, x: usize, y: usize, adjustment: &NodeSet, cfg: &LocalConfig, seed: u64) -> Result<LocalFit> {
    let n = data.n_vars();
    if x >= n || y >= n || adjustment.iter().any(|z| z >= n) {
        return Err(Error::Domain("unknown node in local fit".into()));
    }
    if x == y {
        return Err(Error::Domain("intervention and outcome nodes coincide".into()));
    }
    if adjustment.contains(x) || adjustment.contains(y) {
        return Err(Error::Domain("adjustment set contains the intervention or outcome node".into()));
    }
    if cfg.hyper_samples == 0 {
        return Err(Error::Domain("need at least one hyperparameter sample".into()));
    }
    let mut cols = vec![x];
    cols.extend(adjustment.iter());
    let inputs = data.columns(&cols);
    let yv = data.column(y);
    let y_mean = yv.mean();
    let y_centered = yv.add_scalar(-y_mean);
    let chain_seed = rng::keyed_seed(seed, &[tag::LOCAL, x as u64, y as u64, adjustment.mask()]);
    let chain = sample_hyperparameters(&y_centered, &inputs, &cfg.prior, cfg.hyper_samples, chain_seed, &cfg.sampler)?;
    let xc = data.column(x);
    let x_mean = xc.mean();
    let x_sd = (xc.iter().map(|v| (v - x_mean).powi(2)).sum::<f64>() / (xc.len().max(2) - 1) as f64).sqrt();
    Ok(LocalFit {
        x,
        y,
        adjustment: adjustment.clone(),
        samples: chain.samples,
        acceptance_rate: chain.acceptance_rate,
        y_mean,
        x_mean,
        x_sd,
        inputs,
        y_centered,
    })
}

impl LocalFit {
    /// Posterior of the intervention component `f` over the grid under
    /// hyperparameter sample `k`, before re-centering.
    pub fn posterior(&self, k: usize, grid: &[f64]) -> Result<GpPosterior> {
        let test = DMatrix::from_column_slice(grid.len(), 1, grid);
        GpFactor::new(&self.y_centered, &self.inputs, &self.samples[k])?.component_posterior(&[0], &test)
    }

    /// Grid values more than three standard deviations from the mean of `X`.
    pub fn extrapolated(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().copied().filter(|v| (v - self.x_mean).abs() > 3.0 * self.x_sd).collect()
    }
}

/// `n_draws` joint draws of `f` over the grid, cycling through the
/// hyperparameter samples, re-centered at the sample mean of `Y`.
pub fn local_curve(fit: &LocalFit, grid: &[f64], n_draws: usize, seed: u64) -> Result<InterventionCurve> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("grid must be nonempty and finite".into()));
    }
    let draws = local_draws(fit, grid, n_draws, seed)?;
    Ok(from_draws(fit.x, fit.y, grid, vec![(draws, 0)], seed, 1))
}

fn local_draws(fit: &LocalFit, grid: &[f64], n_draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let used = n_draws.min(fit.samples.len());
    let posteriors = (0..used)
        .into_par_iter()
        .map(|k| fit.posterior(k, grid))
        .collect::<Result<Vec<_>>>()?;
    (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut rng = rng::keyed_rng(
                seed,
                &[tag::LOCAL, fit.x as u64, fit.y as u64, fit.adjustment.mask(), d as u64],
            );
            let f = draw_gaussian(&posteriors[d % used], 1, &mut rng)?;
            Ok(f.row(0).iter().map(|v| v + fit.y_mean).collect())
        })
        .collect()
}

fn from_draws(
    x: usize,
    y: usize,
    grid: &[f64],
    parts: Vec<(Vec<Vec<f64>>, usize)>,
    seed: u64,
    n_components: usize,
) -> InterventionCurve {
    let total: usize = parts.iter().map(|p| p.0.len()).sum();
    let mut samples = vec![Vec::with_capacity(total); grid.len()];
    let mut dag_index = Vec::with_capacity(total);
    for (draws, component) in parts {
        for d in draws {
            for (row, v) in samples.iter_mut().zip(d) {
                row.push(v);
            }
            dag_index.push(component);
        }
    }
    InterventionCurve {
        method: Method::Local,
        intervened: NodeSet::new(vec![x]),
        target: y,
        grid: grid.iter().map(|&v| vec![v]).collect(),
        samples,
        weights: vec![1.0 / total as f64; total],
        dag_index,
        meta: CurveMeta {
            seed,
            n_components,
            expectation_only: true,
        },
    }
}

/// Integer counts summing to `total`, proportional to `probabilities`, with
/// leftovers going to the largest fractional parts (ties to the earlier index).
pub fn largest_remainder(probabilities: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = probabilities.iter().sum();
    let exact: Vec<f64> = probabilities.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub parent_set: NodeSet,
    pub probability: f64,
    pub draws: usize,
    /// False when the outcome is among the parents (constant marginal-mean
    /// curve) or the set received no draws.
    pub fitted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalMixture {
    pub curve: InterventionCurve,
    pub components: Vec<MixtureComponent>,
}

/// Mixture of local curves over the weighted parent sets of `X`.
///
/// Each distinct parent set that receives draws is fitted once. A parent set
/// containing `Y` contributes constant curves at the sample mean of `Y`.
#[allow(clippy::too_many_arguments)]
pub fn local_mixture(
    data: &Dataset,
    archive: &[WeightedDagSample],
    x: usize,
    y: usize,
    grid: &[f64],
    n_draws: usize,
    cfg: &LocalConfig,
    seed: u64,
) -> Result<LocalMixture> {
    if x == y || x >= data.n_vars() || y >= data.n_vars() {
        return Err(Error::Domain("invalid intervention/outcome pair".into()));
    }
    if n_draws == 0 {
        return Err(Error::Domain("need at least one draw".into()));
    }
    let posterior = parent_set_posterior(archive, x)?;
    let sets: Vec<(&NodeSet, f64)> = posterior.iter().map(|(s, p)| (s, *p)).collect();
    let counts = largest_remainder(&sets.iter().map(|s| s.1).collect::<Vec<_>>(), n_draws);
    let parts = sets
        .par_iter()
        .zip(counts.par_iter())
        .enumerate()
        .map(|(j, ((set, _), &count))| {
            if set.contains(y) {
                let y_mean = data.column(y).mean();
                return Ok((vec![vec![y_mean; grid.len()]; count], j));
            }
            if count == 0 {
                return Ok((Vec::new(), j));
            }
            let fit = fit_local(data, x, y, set, cfg, seed)?;
            Ok((local_draws(&fit, grid, count, seed)?, j))
        })
        .collect::<Result<Vec<_>>>()?;
    let components = sets
        .iter()
        .zip(&counts)
        .map(|((set, p), &draws)| MixtureComponent {
            parent_set: (*set).clone(),
            probability: *p,
            draws,
            fitted: draws > 0 && !set.contains(y),
        })
        .collect();
    Ok(LocalMixture {
        curve: from_draws(x, y, grid, parts, seed, sets.len()),
        components,
    })
}
