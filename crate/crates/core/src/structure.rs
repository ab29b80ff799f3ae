//! Posterior over DAG structures.
//!
//! A Metropolis–Hastings chain over single-edge moves targets an approximate
//! posterior built from MAP family scores. Each retained DAG carries an
//! importance weight `Σ_v [ln p̂(x_v | Pa_v) − q_v]`, where `p̂` is a Monte
//! Carlo estimate of the family marginal likelihood with the hyperparameters
//! integrated against their prior. For up to four nodes the exact posterior
//! is available by enumeration using the same family marginals.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{enumerate_dags, Dag, NodeSet, MAX_ENUMERATION_NODES};
use crate::kernel::{
    log_marginal_likelihood, map_hyperparameters, sample_hyperparameters, HyperPrior, HyperSamplerConfig,
    Hyperparams, MapConfig,
};
use crate::linear::{fit_linear_family, root_log_evidence};
use crate::rng::{self, tag};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const DEFAULT_MAX_PARENTS: usize = 3;
/// Above this many candidate families the chain scores them lazily.
const PRECOMPUTE_LIMIT: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate {
    pub log_marginal: f64,
    pub mc_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub node: usize,
    pub parent_set: NodeSet,
    pub q_score: f64,
    pub log_marginal: f64,
    pub mc_variance: f64,
}

/// Gaussian log-likelihood at the sample mean and maximum-likelihood variance.
fn plug_in_gaussian(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    -0.5 * n * (LN_2PI + var.ln() + 1.0)
}

/// MAP family score `ln p(x | Pa, Θ̂) + ln p(Θ̂) − (|Θ|/2) ln N`.
///
/// Roots use the plug-in Gaussian log-likelihood. When the optimizer stops
/// short of the gradient tolerance the best point found is scored.
pub fn family_q_score(data: &Dataset, node: usize, parents: &NodeSet, prior: &HyperPrior, map: &MapConfig) -> Result<f64> {
    let y = data.column(node);
    if parents.is_empty() {
        return Ok(plug_in_gaussian(y.as_slice()));
    }
    let x = data.columns(parents.as_slice());
    let log_post = match map_hyperparameters(&y, &x, prior, map) {
        Ok(est) => est.log_posterior,
        Err(Error::Optimization { best_objective, .. }) => best_objective,
        Err(e) => return Err(e),
    };
    let dim = (parents.len() + 1) as f64;
    Ok(log_post - 0.5 * dim * (y.len() as f64).ln())
}

/// `ln (1/S) Σ_s p(x | Pa, Θ_s)` with `Θ_s` drawn from the prior, and the
/// delta-method variance of that log estimate.
///
/// Roots use the closed-form normal-inverse-gamma marginal.
pub fn family_log_marginal_mc(
    data: &Dataset,
    node: usize,
    parents: &NodeSet,
    prior: &HyperPrior,
    samples: usize,
    seed: u64,
) -> Result<MarginalEstimate> {
    let y = data.column(node);
    if parents.is_empty() {
        return Ok(MarginalEstimate {
            log_marginal: root_log_evidence(&y),
            mc_variance: 0.0,
        });
    }
    if samples < 100 {
        return Err(Error::Domain(format!("need at least 100 prior draws, got {samples}")));
    }
    let x = data.columns(parents.as_slice());
    let p = parents.len();
    let lls: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::keyed_rng(seed, &[tag::MARGINAL, s as u64]);
            let h = prior.sample(p, &mut rng);
            log_marginal_likelihood(&y, &h, &x).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    log_mean_exp(&lls)
}

fn log_mean_exp(lls: &[f64]) -> Result<MarginalEstimate> {
    let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    let s = lls.len() as f64;
    let w: Vec<f64> = lls.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / s;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0);
    Ok(MarginalEstimate {
        log_marginal: max + mean.ln(),
        mc_variance: var / (s * mean * mean),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpScoreConfig {
    pub prior: HyperPrior,
    pub map: MapConfig,
    /// Prior draws per family marginal estimate.
    pub marginal_samples: usize,
    /// Retained hyperparameter posterior draws per family.
    pub hyper_samples: usize,
    pub sampler: HyperSamplerConfig,
}

impl Default for GpScoreConfig {
    fn default() -> Self {
        GpScoreConfig {
            prior: HyperPrior::default(),
            map: MapConfig::default(),
            marginal_samples: 2000,
            hyper_samples: 50,
            sampler: HyperSamplerConfig::default(),
        }
    }
}

/// Family model used for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreKind {
    Gp(GpScoreConfig),
    /// Conjugate linear-Gaussian families; the closed-form evidence serves as
    /// both score and marginal, so importance weights are uniform.
    Linear,
}

type FamilyKey = (usize, u64);
type Memo<T> = crate::memo::Memo<FamilyKey, Result<T>>;

/// Shared, thread-safe store of family scores, marginals and hyperparameter
/// posterior samples for one dataset.
///
/// Every entry is seeded from the cache seed and its family key, so results
/// do not depend on evaluation order.
pub struct FamilyCache {
    data: Arc<Dataset>,
    kind: ScoreKind,
    seed: u64,
    max_parents: usize,
    q: Memo<f64>,
    marginal: Memo<MarginalEstimate>,
    conditionals: Memo<Arc<Vec<Hyperparams>>>,
    marginal_evals: AtomicUsize,
    conditional_evals: AtomicUsize,
}

impl FamilyCache {
    pub fn new(data: Arc<Dataset>, kind: ScoreKind, seed: u64) -> Self {
        FamilyCache {
            data,
            kind,
            seed,
            max_parents: DEFAULT_MAX_PARENTS,
            q: Memo::new(),
            marginal: Memo::new(),
            conditionals: Memo::new(),
            marginal_evals: AtomicUsize::new(0),
            conditional_evals: AtomicUsize::new(0),
        }
    }

    pub fn with_max_parents(mut self, max_parents: usize) -> Self {
        self.max_parents = max_parents;
        self
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn kind(&self) -> &ScoreKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_parents(&self) -> usize {
        self.max_parents
    }

    /// Number of distinct family marginals computed so far.
    pub fn marginal_evaluations(&self) -> usize {
        self.marginal_evals.load(Ordering::Relaxed)
    }

    pub fn conditional_evaluations(&self) -> usize {
        self.conditional_evals.load(Ordering::Relaxed)
    }

    fn check(&self, node: usize, parents: &NodeSet) -> Result<()> {
        let n = self.data.n_vars();
        if node >= n || parents.iter().any(|p| p >= n || p == node) {
            return Err(Error::Domain(format!("invalid family {node} <- {parents}")));
        }
        if parents.len() > self.max_parents {
            return Err(Error::Capacity(format!(
                "{} parents exceeds the limit of {}",
                parents.len(),
                self.max_parents
            )));
        }
        Ok(())
    }

    fn family_seed(&self, node: usize, parents: &NodeSet) -> u64 {
        rng::keyed_seed(self.seed, &[node as u64, parents.mask()])
    }

    pub fn q_score(&self, node: usize, parents: &NodeSet) -> Result<f64> {
        self.check(node, parents)?;
        self.q.get((node, parents.mask()), || match &self.kind {
            ScoreKind::Gp(cfg) => {
                let map = MapConfig {
                    seed: self.family_seed(node, parents),
                    ..cfg.map
                };
                family_q_score(&self.data, node, parents, &cfg.prior, &map)
            }
            ScoreKind::Linear => Ok(fit_linear_family(&self.data, node, parents)?.log_evidence),
        })
    }

    pub fn log_marginal(&self, node: usize, parents: &NodeSet) -> Result<MarginalEstimate> {
        self.check(node, parents)?;
        self.marginal.get((node, parents.mask()), || {
            self.marginal_evals.fetch_add(1, Ordering::Relaxed);
            match &self.kind {
                ScoreKind::Gp(cfg) => family_log_marginal_mc(
                    &self.data,
                    node,
                    parents,
                    &cfg.prior,
                    cfg.marginal_samples,
                    self.family_seed(node, parents),
                ),
                ScoreKind::Linear => Ok(MarginalEstimate {
                    log_marginal: fit_linear_family(&self.data, node, parents)?.log_evidence,
                    mc_variance: 0.0,
                }),
            }
        })
    }

    pub fn family_score(&self, node: usize, parents: &NodeSet) -> Result<FamilyScore> {
        let m = self.log_marginal(node, parents)?;
        Ok(FamilyScore {
            node,
            parent_set: parents.clone(),
            q_score: self.q_score(node, parents)?,
            log_marginal: m.log_marginal,
            mc_variance: m.mc_variance,
        })
    }

    /// Hyperparameter posterior draws for a GP family; empty for roots and
    /// for linear scoring, whose conditionals are closed-form.
    pub fn conditionals(&self, node: usize, parents: &NodeSet) -> Result<Arc<Vec<Hyperparams>>> {
        self.check(node, parents)?;
        let ScoreKind::Gp(cfg) = &self.kind else {
            return Ok(Arc::new(Vec::new()));
        };
        if parents.is_empty() {
            return Ok(Arc::new(Vec::new()));
        }
        self.conditionals.get((node, parents.mask()), || {
            self.conditional_evals.fetch_add(1, Ordering::Relaxed);
            let y = self.data.column(node);
            let x = self.data.columns(parents.as_slice());
            let chain = sample_hyperparameters(
                &y,
                &x,
                &cfg.prior,
                cfg.hyper_samples,
                self.family_seed(node, parents),
                &cfg.sampler,
            )?;
            Ok(Arc::new(chain.samples))
        })
    }

    /// Every family with at most `max_parents` parents.
    fn all_families(&self) -> Vec<FamilyKey> {
        let n = self.data.n_vars();
        let mut out = Vec::new();
        for v in 0..n {
            let others = ((1u64 << n) - 1) & !(1 << v);
            let mut sub = 0u64;
            loop {
                if (sub.count_ones() as usize) <= self.max_parents {
                    out.push((v, sub));
                }
                if sub == others {
                    break;
                }
                sub = sub.wrapping_sub(others) & others;
            }
        }
        out.sort_unstable();
        out
    }

    fn candidate_family_count(&self) -> usize {
        let n = self.data.n_vars();
        if n == 0 {
            return 0;
        }
        let binom = |k: usize| -> usize { (0..k).fold(1usize, |acc, i| acc * (n - 1 - i) / (i + 1)) };
        n * (0..=self.max_parents.min(n - 1)).map(binom).sum::<usize>()
    }
}

/// A sampled DAG, its log importance weight and, optionally, the
/// hyperparameter posterior samples of each of its families.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDagSample {
    pub dag: Dag,
    pub log_weight: f64,
    /// One entry per node; empty for roots.
    pub conditionals: Option<Vec<Arc<Vec<Hyperparams>>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DagSamplerConfig {
    /// Number of retained DAGs.
    pub m: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub cache_conditionals: bool,
}

impl Default for DagSamplerConfig {
    fn default() -> Self {
        DagSamplerConfig {
            m: 200,
            burn_in: 1000,
            thin: 10,
            cache_conditionals: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DagSampleSet {
    pub samples: Vec<WeightedDagSample>,
    pub acceptance_rate: f64,
    pub unique_dags: usize,
}

impl DagSampleSet {
    pub fn weights(&self) -> Vec<f64> {
        normalized_weights(&self.samples)
    }

    /// `Σw / max w` for normalized weights.
    pub fn ess(&self) -> f64 {
        let w = self.weights();
        1.0 / w.iter().copied().fold(0.0, f64::max)
    }

    pub fn kish_ess(&self) -> f64 {
        let w = self.weights();
        1.0 / w.iter().map(|x| x * x).sum::<f64>()
    }
}

pub fn normalized_weights(samples: &[WeightedDagSample]) -> Vec<f64> {
    let max = samples.iter().map(|s| s.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = samples.iter().map(|s| (s.log_weight - max).exp()).collect();
    let mut sorted = w.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

fn reachable(masks: &[u64], from: usize, to: usize) -> bool {
    let n = masks.len();
    let mut seen = 1u64 << from;
    let mut stack = vec![from];
    while let Some(u) = stack.pop() {
        if u == to {
            return true;
        }
        for (c, &m) in masks.iter().enumerate().take(n) {
            if m >> u & 1 == 1 && seen >> c & 1 == 0 {
                seen |= 1 << c;
                stack.push(c);
            }
        }
    }
    false
}

fn neighbours(masks: &[u64], max_parents: usize) -> Vec<Move> {
    let n = masks.len();
    let mut out = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            if masks[v] >> u & 1 == 1 {
                out.push(Move::Delete(u, v));
                if (masks[u].count_ones() as usize) < max_parents {
                    let mut without = masks.to_vec();
                    without[v] &= !(1 << u);
                    if !reachable(&without, u, v) {
                        out.push(Move::Reverse(u, v));
                    }
                }
            } else if masks[u] >> v & 1 == 0 && (masks[v].count_ones() as usize) < max_parents && !reachable(masks, v, u)
            {
                out.push(Move::Add(u, v));
            }
        }
    }
    out
}

fn apply(masks: &[u64], mv: Move) -> (Vec<u64>, Vec<usize>) {
    let mut out = masks.to_vec();
    let changed = match mv {
        Move::Add(u, v) => {
            out[v] |= 1 << u;
            vec![v]
        }
        Move::Delete(u, v) => {
            out[v] &= !(1 << u);
            vec![v]
        }
        Move::Reverse(u, v) => {
            out[v] &= !(1 << u);
            out[u] |= 1 << v;
            vec![u, v]
        }
    };
    (out, changed)
}

fn labelled_dag(masks: Vec<u64>, labels: &[String]) -> Result<Dag> {
    let mut dag = Dag::from_parent_masks(masks)?;
    dag.set_labels(labels.to_vec())?;
    Ok(dag)
}

fn dag_log_weight(cache: &FamilyCache, dag: &Dag) -> Result<f64> {
    (0..dag.n())
        .map(|v| {
            let pa = dag.parents(v);
            Ok(cache.log_marginal(v, &pa)?.log_marginal - cache.q_score(v, &pa)?)
        })
        .sum()
}

fn distinct_families(dags: &[&Dag]) -> Vec<(usize, NodeSet)> {
    let mut keys: Vec<FamilyKey> = dags
        .iter()
        .flat_map(|d| (0..d.n()).map(move |v| (v, d.parent_mask(v))))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    keys.sort_unstable();
    keys.into_iter().map(|(v, m)| (v, NodeSet::from_mask(m))).collect()
}

/// Attaches cached hyperparameter samples to every family of every sample.
pub fn fill_conditionals(samples: &mut [WeightedDagSample], cache: &FamilyCache) -> Result<()> {
    let dags: Vec<&Dag> = samples.iter().map(|s| &s.dag).collect();
    distinct_families(&dags)
        .par_iter()
        .map(|(v, pa)| cache.conditionals(*v, pa).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    for s in samples.iter_mut() {
        let per_node = (0..s.dag.n())
            .map(|v| cache.conditionals(v, &s.dag.parents(v)))
            .collect::<Result<Vec<_>>>()?;
        s.conditionals = Some(per_node);
    }
    Ok(())
}

/// Structure MCMC over add, delete and reverse moves targeting
/// `exp(Σ q_score)`, starting from the empty graph.
pub fn sample_dags(cache: &FamilyCache, cfg: &DagSamplerConfig, seed: u64) -> Result<DagSampleSet> {
    if cfg.m == 0 {
        return Err(Error::Domain("need at least one DAG sample".into()));
    }
    let data = cache.data();
    let n = data.n_vars();
    let labels = data.labels().to_vec();
    let max_parents = cache.max_parents();

    if cache.candidate_family_count() <= PRECOMPUTE_LIMIT {
        cache
            .all_families()
            .par_iter()
            .map(|&(v, m)| cache.q_score(v, &NodeSet::from_mask(m)).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
    }

    let q = |v: usize, m: u64| cache.q_score(v, &NodeSet::from_mask(m));
    let mut masks = vec![0u64; n];
    let mut rng = rng::keyed_rng(seed, &[tag::CHAIN]);
    let mut moves = neighbours(&masks, max_parents);
    let thin = cfg.thin.max(1);
    let total = cfg.burn_in + cfg.m * thin;
    let mut accepted = 0usize;
    let mut retained: Vec<Vec<u64>> = Vec::with_capacity(cfg.m);
    for step in 0..total {
        if !moves.is_empty() {
            let mv = moves[rng.random_range(0..moves.len())];
            let (proposal, changed) = apply(&masks, mv);
            let mut delta = 0.0;
            for &v in &changed {
                delta += q(v, proposal[v])? - q(v, masks[v])?;
            }
            let back = neighbours(&proposal, max_parents);
            let log_alpha = delta + (moves.len() as f64).ln() - (back.len() as f64).ln();
            if rng.random::<f64>().ln() < log_alpha {
                masks = proposal;
                moves = back;
                accepted += 1;
            }
        }
        if step >= cfg.burn_in && (step - cfg.burn_in + 1).is_multiple_of(thin) {
            retained.push(masks.clone());
        }
    }

    let unique: HashSet<&Vec<u64>> = retained.iter().collect();
    let unique_dags = unique.len();
    let dags = retained
        .into_iter()
        .map(|m| labelled_dag(m, &labels))
        .collect::<Result<Vec<Dag>>>()?;
    let refs: Vec<&Dag> = dags.iter().collect();
    distinct_families(&refs)
        .par_iter()
        .map(|(v, pa)| cache.log_marginal(*v, pa).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    let mut samples = dags
        .into_iter()
        .map(|dag| {
            Ok(WeightedDagSample {
                log_weight: dag_log_weight(cache, &dag)?,
                dag,
                conditionals: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if cfg.cache_conditionals {
        fill_conditionals(&mut samples, cache)?;
    }
    Ok(DagSampleSet {
        samples,
        acceptance_rate: accepted as f64 / total.max(1) as f64,
        unique_dags,
    })
}

/// Exact posterior over all DAGs respecting the parent limit, with a uniform
/// structure prior.
pub fn enumerate_posterior(cache: &FamilyCache) -> Result<Vec<(Dag, f64)>> {
    let n = cache.data().n_vars();
    if n > MAX_ENUMERATION_NODES {
        return Err(Error::Capacity(format!(
            "enumeration supports at most {MAX_ENUMERATION_NODES} nodes, got {n}"
        )));
    }
    cache
        .all_families()
        .par_iter()
        .map(|&(v, m)| cache.log_marginal(v, &NodeSet::from_mask(m)).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    let labels = cache.data().labels().to_vec();
    let mut scored = Vec::new();
    for dag in enumerate_dags(n)? {
        if dag.parent_masks().iter().any(|m| m.count_ones() as usize > cache.max_parents()) {
            continue;
        }
        let mut lp = 0.0;
        for v in 0..n {
            lp += cache.log_marginal(v, &dag.parents(v))?.log_marginal;
        }
        let mut dag = dag;
        dag.set_labels(labels.clone())?;
        scored.push((dag, lp));
    }
    let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scored.iter().map(|s| (s.1 - max).exp()).sum();
    Ok(scored.into_iter().map(|(d, lp)| (d, (lp - max).exp() / total)).collect())
}

/// `p(Pa_node = S | D)` from weighted DAG samples.
pub fn parent_set_posterior(samples: &[WeightedDagSample], node: usize) -> Result<BTreeMap<NodeSet, f64>> {
    if samples.is_empty() {
        return Err(Error::Domain("no DAG samples".into()));
    }
    if samples.iter().any(|s| node >= s.dag.n()) {
        return Err(Error::Domain(format!("unknown node {node}")));
    }
    let w = normalized_weights(samples);
    let mut out: BTreeMap<NodeSet, f64> = BTreeMap::new();
    for (s, wi) in samples.iter().zip(w) {
        *out.entry(s.dag.parents(node)).or_insert(0.0) += wi;
    }
    Ok(out)
}

/// Weighted edge-inclusion probabilities; entry `(u, v)` is `P(u → v)`.
pub fn edge_probabilities(samples: &[WeightedDagSample]) -> DMatrix<f64> {
    let pairs: Vec<(&Dag, f64)> = samples.iter().map(|s| &s.dag).zip(normalized_weights(samples)).collect();
    edge_matrix(&pairs)
}

pub fn enumerated_edge_probabilities(posterior: &[(Dag, f64)]) -> DMatrix<f64> {
    let pairs: Vec<(&Dag, f64)> = posterior.iter().map(|(d, p)| (d, *p)).collect();
    edge_matrix(&pairs)
}

fn edge_matrix(pairs: &[(&Dag, f64)]) -> DMatrix<f64> {
    let n = pairs.first().map_or(0, |p| p.0.n());
    let mut out = DMatrix::zeros(n, n);
    for (dag, w) in pairs {
        for (u, v) in dag.edges() {
            out[(u, v)] += w;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ArchiveRecord {
    dag: Dag,
    log_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conditionals: Option<Vec<Vec<Hyperparams>>>,
}

/// One JSON object per line: `{"dag", "log_weight", "conditionals"}`.
pub fn write_archive<W: Write>(samples: &[WeightedDagSample], mut out: W) -> Result<()> {
    for s in samples {
        let rec = ArchiveRecord {
            dag: s.dag.clone(),
            log_weight: s.log_weight,
            conditionals: s
                .conditionals
                .as_ref()
                .map(|c| c.iter().map(|h| h.as_ref().clone()).collect()),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_archive<R: BufRead>(input: R) -> Result<Vec<WeightedDagSample>> {
    let mut out = Vec::new();
    // Identical conditional sets share one allocation.
    let mut shared: HashMap<String, Arc<Vec<Hyperparams>>> = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ArchiveRecord =
            serde_json::from_str(&line).map_err(|e| Error::Archive(format!("line {}: {e}", i + 1)))?;
        let conditionals = match rec.conditionals {
            None => None,
            Some(c) => {
                if c.len() != rec.dag.n() {
                    return Err(Error::Archive(format!("line {}: conditionals do not cover every node", i + 1)));
                }
                Some(
                    c.into_iter()
                        .map(|h| {
                            let key = serde_json::to_string(&h).expect("hyperparameters serialize");
                            shared.entry(key).or_insert_with(|| Arc::new(h)).clone()
                        })
                        .collect(),
                )
            }
        };
        out.push(WeightedDagSample {
            dag: rec.dag,
            log_weight: rec.log_weight,
            conditionals,
        });
    }
    if out.is_empty() {
        return Err(Error::Archive("archive is empty".into()));
    }
    Ok(out)
}
