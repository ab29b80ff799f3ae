//! Intervention distributions by forward propagation through the mutilated
//! network, for a known DAG or a weighted archive of sampled DAGs.
//!
//! A particle is one sampled curve over the whole grid. At each node the
//! mean function is drawn jointly at every distinct parent configuration the
//! grid produces, and one noise draw is shared across grid points, so each
//! grid point sees an exact posterior-predictive draw.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal_local::largest_remainder;
use crate::curve::{linspace, CurveMeta, InterventionCurve, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Dag, NodeSet};
use crate::kernel::{draw_gaussian, GpFactor, Hyperparams};
use crate::linear::{fit_linear_family, LinearFamily};
use crate::memo::Memo;
use crate::rng::{self, tag, Rng};
use crate::structure::{normalized_weights, FamilyCache, WeightedDagSample};

pub const DEFAULT_N_MC: usize = 100;
pub const DEFAULT_GRID_POINTS: usize = 30;

/// `do(intervened = grid[g])` for every grid point, observing `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionQuery {
    pub intervened: NodeSet,
    /// `grid[g][k]` is the value of the `k`-th intervened node (ascending order).
    pub grid: Vec<Vec<f64>>,
    pub target: usize,
    /// Particles per DAG.
    pub n_mc: usize,
    /// Omit the target's own noise, giving draws of `E(target | do(...))`.
    pub expectation_only: bool,
}

impl InterventionQuery {
    pub fn new(intervened: NodeSet, grid: Vec<Vec<f64>>, target: usize) -> Self {
        InterventionQuery {
            intervened,
            grid,
            target,
            n_mc: DEFAULT_N_MC,
            expectation_only: false,
        }
    }

    /// Single-node intervention over a list of values.
    pub fn single(node: usize, values: &[f64], target: usize) -> Self {
        InterventionQuery::new(NodeSet::new(vec![node]), values.iter().map(|&v| vec![v]).collect(), target)
    }

    pub fn with_n_mc(mut self, n_mc: usize) -> Self {
        self.n_mc = n_mc;
        self
    }

    pub fn with_expectation_only(mut self, flag: bool) -> Self {
        self.expectation_only = flag;
        self
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if self.target >= n_nodes {
            return Err(Error::Domain(format!("unknown target node {}", self.target)));
        }
        if let Some(v) = self.intervened.iter().find(|&v| v >= n_nodes) {
            return Err(Error::Domain(format!("unknown intervened node {v}")));
        }
        if self.intervened.is_empty() {
            return Err(Error::Domain("no intervened nodes".into()));
        }
        if self.intervened.contains(self.target) {
            return Err(Error::Domain("the target cannot be intervened on".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Domain("empty intervention grid".into()));
        }
        if self.grid.iter().any(|g| g.len() != self.intervened.len() || g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain("grid points must be finite and match the intervened set".into()));
        }
        if self.n_mc == 0 {
            return Err(Error::Domain("n_mc must be positive".into()));
        }
        Ok(())
    }
}

/// Evenly spaced grid over the observed range of a column.
pub fn default_grid(data: &Dataset, node: usize, points: usize) -> Vec<f64> {
    let col = data.column(node);
    linspace(col.min(), col.max(), points)
}

/// Nodes reachable from any intervened node, excluding the intervened nodes.
pub fn downstream_targets(dag: &Dag, intervened: &NodeSet) -> NodeSet {
    NodeSet::from_mask(dag.descendants_mask(intervened.mask()) & !intervened.mask())
}

/// A DAG with hyperparameter posterior samples for each non-root family.
#[derive(Clone, Debug)]
pub struct FittedGpn {
    dag: Dag,
    data: Arc<Dataset>,
    conditionals: Vec<Arc<Vec<Hyperparams>>>,
}

fn check_conditionals(dag: &Dag, conditionals: &[Arc<Vec<Hyperparams>>]) -> Result<()> {
    if conditionals.len() != dag.n() {
        return Err(Error::Archive(format!(
            "{} conditional sets for {} nodes",
            conditionals.len(),
            dag.n()
        )));
    }
    for v in 0..dag.n() {
        let p = dag.parents(v).len();
        if p > 0 && conditionals[v].is_empty() {
            return Err(Error::Archive(format!("no hyperparameter samples for node {v}")));
        }
        if conditionals[v].iter().any(|h| h.dim() != p) {
            return Err(Error::Archive(format!("hyperparameter samples for node {v} do not match its parents")));
        }
    }
    Ok(())
}

impl FittedGpn {
    pub fn new(dag: Dag, data: Arc<Dataset>, conditionals: Vec<Arc<Vec<Hyperparams>>>) -> Result<Self> {
        if dag.n() != data.n_vars() {
            return Err(Error::Shape(format!("{}-node DAG for {} columns", dag.n(), data.n_vars())));
        }
        check_conditionals(&dag, &conditionals)?;
        Ok(FittedGpn { dag, data, conditionals })
    }

    /// Hyperparameter posterior samples drawn (or reused) from a family cache.
    pub fn from_cache(dag: Dag, cache: &FamilyCache) -> Result<Self> {
        let conditionals = (0..dag.n())
            .into_par_iter()
            .map(|v| cache.conditionals(v, &dag.parents(v)))
            .collect::<Result<Vec<_>>>()?;
        FittedGpn::new(dag, cache.data().clone(), conditionals)
    }

    /// Fixed hyperparameters per non-root node.
    pub fn with_hyperparameters(dag: Dag, data: Arc<Dataset>, hypers: Vec<Option<Hyperparams>>) -> Result<Self> {
        let conditionals = hypers.into_iter().map(|h| Arc::new(h.into_iter().collect())).collect();
        FittedGpn::new(dag, data, conditionals)
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn conditionals(&self) -> &[Arc<Vec<Hyperparams>>] {
        &self.conditionals
    }
}

/// Posterior draws of one node's conditional.
pub(crate) trait NodeSampler: Sync {
    /// Draws the mean function at the rows of `inputs` (parent values in
    /// ascending parent order) and the noise standard deviation.
    fn draw(&self, node: usize, parents: &NodeSet, inputs: &DMatrix<f64>, rng: &mut Rng) -> Result<(DVector<f64>, f64)>;
}

/// Conjugate families shared across DAGs; roots use these under every method.
pub(crate) struct LinearFamilies<'a> {
    data: &'a Dataset,
    fits: Memo<(usize, u64), Result<Arc<LinearFamily>>>,
}

impl<'a> LinearFamilies<'a> {
    pub(crate) fn new(data: &'a Dataset) -> Self {
        LinearFamilies { data, fits: Memo::new() }
    }

    fn get(&self, node: usize, parents: &NodeSet) -> Result<Arc<LinearFamily>> {
        self.fits.get((node, parents.mask()), || {
            fit_linear_family(self.data, node, parents).map(Arc::new)
        })
    }

    pub(crate) fn draw(&self, node: usize, parents: &NodeSet, inputs: &DMatrix<f64>, rng: &mut Rng) -> Result<(DVector<f64>, f64)> {
        let fam = self.get(node, parents)?;
        let (b, s2) = fam.draw(rng);
        let f = DVector::from_fn(inputs.nrows(), |i, _| {
            b[0] + (0..inputs.ncols()).map(|j| b[j + 1] * inputs[(i, j)]).sum::<f64>()
        });
        Ok((f, s2.sqrt()))
    }
}

type FactorKey = (usize, u64, Vec<u64>);

/// GP factorizations shared across particles and DAGs.
struct GpFactors<'a> {
    data: &'a Dataset,
    roots: LinearFamilies<'a>,
    factors: Memo<FactorKey, Result<Arc<GpFactor>>>,
}

impl<'a> GpFactors<'a> {
    fn new(data: &'a Dataset) -> Self {
        GpFactors {
            data,
            roots: LinearFamilies::new(data),
            factors: Memo::new(),
        }
    }

    fn factor(&self, node: usize, parents: &NodeSet, h: &Hyperparams) -> Result<Arc<GpFactor>> {
        let mut bits: Vec<u64> = h.lengthscales.iter().map(|v| v.to_bits()).collect();
        bits.push(h.noise_var.to_bits());
        self.factors.get((node, parents.mask(), bits), || {
            let y = self.data.column(node);
            let x = self.data.columns(parents.as_slice());
            GpFactor::new(&y, &x, h).map(Arc::new)
        })
    }
}

struct GpSampler<'a> {
    shared: &'a GpFactors<'a>,
    conditionals: &'a [Arc<Vec<Hyperparams>>],
}

impl NodeSampler for GpSampler<'_> {
    fn draw(&self, node: usize, parents: &NodeSet, inputs: &DMatrix<f64>, rng: &mut Rng) -> Result<(DVector<f64>, f64)> {
        if parents.is_empty() {
            return self.shared.roots.draw(node, parents, inputs, rng);
        }
        let samples = &self.conditionals[node];
        let h = &samples[rng.random_range(0..samples.len())];
        let post = self.shared.factor(node, parents, h)?.posterior(inputs)?;
        let f = draw_gaussian(&post, 1, rng)?.row(0).transpose();
        Ok((f, h.noise_sd()))
    }
}

impl NodeSampler for LinearFamilies<'_> {
    fn draw(&self, node: usize, parents: &NodeSet, inputs: &DMatrix<f64>, rng: &mut Rng) -> Result<(DVector<f64>, f64)> {
        LinearFamilies::draw(self, node, parents, inputs, rng)
    }
}

/// `n_mc` sampled curves of the target, `[particle][grid]`.
pub(crate) fn propagate<S: NodeSampler>(
    sampler: &S,
    dag: &Dag,
    query: &InterventionQuery,
    seed: u64,
    occurrence: u64,
) -> Result<Vec<Vec<f64>>> {
    query.validate(dag.n())?;
    let h = dag.mutilate(&query.intervened)?;
    let needed = h.ancestors_mask(1 << query.target) | 1 << query.target;
    let order: Vec<usize> = h.topological_order()?.into_iter().filter(|v| needed >> v & 1 == 1).collect();
    let key = dag.key();
    (0..query.n_mc as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::keyed_rng(seed, &[tag::PARTICLE, key, occurrence, p]);
            particle(sampler, &h, &order, query, &mut rng)
        })
        .collect()
}

fn particle<S: NodeSampler>(
    sampler: &S,
    h: &Dag,
    order: &[usize],
    query: &InterventionQuery,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); h.n()];
    for (k, v) in query.intervened.iter().enumerate() {
        values[v] = query.grid.iter().map(|g| g[k]).collect();
    }
    for &v in order {
        if query.intervened.contains(v) {
            continue;
        }
        let parents = h.parents(v);
        // Distinct parent configurations across the grid.
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let map: Vec<usize> = (0..query.grid.len())
            .map(|g| {
                let row: Vec<f64> = parents.iter().map(|p| values[p][g]).collect();
                let bits = row.iter().map(|x| x.to_bits()).collect();
                *index.entry(bits).or_insert_with(|| {
                    rows.push(row);
                    rows.len() - 1
                })
            })
            .collect();
        let inputs = DMatrix::from_fn(rows.len(), parents.len(), |i, j| rows[i][j]);
        let (f, sd) = sampler.draw(v, &parents, &inputs, rng)?;
        let z: f64 = StandardNormal.sample(rng);
        let eps = if v == query.target && query.expectation_only { 0.0 } else { sd * z };
        values[v] = map.iter().map(|&i| f[i] + eps).collect();
    }
    Ok(std::mem::take(&mut values[query.target]))
}

/// One archive entry prepared for propagation.
pub(crate) struct Component<'a> {
    pub dag: &'a Dag,
    pub conditionals: Option<&'a [Arc<Vec<Hyperparams>>]>,
    pub weight: f64,
    pub source_index: usize,
}

/// Canonical order (by DAG key, then weight) with per-DAG occurrence counters,
/// so results do not depend on archive order.
pub(crate) fn canonical_components(archive: &[WeightedDagSample]) -> Vec<(Component<'_>, u64)> {
    let w = normalized_weights(archive);
    let mut idx: Vec<usize> = (0..archive.len()).collect();
    idx.sort_by(|&a, &b| {
        (archive[a].dag.key(), archive[a].log_weight.to_bits()).cmp(&(archive[b].dag.key(), archive[b].log_weight.to_bits()))
    });
    let mut out: Vec<(Component<'_>, u64)> = Vec::with_capacity(idx.len());
    for i in idx {
        let key = archive[i].dag.key();
        let occurrence = match out.last() {
            Some((c, k)) if c.dag.key() == key => k + 1,
            _ => 0,
        };
        out.push((
            Component {
                dag: &archive[i].dag,
                conditionals: archive[i].conditionals.as_deref(),
                weight: w[i],
                source_index: i,
            },
            occurrence,
        ));
    }
    out
}

pub(crate) fn assemble(
    method: Method,
    query: &InterventionQuery,
    seed: u64,
    parts: Vec<(Vec<Vec<f64>>, f64, usize)>,
    n_components: usize,
) -> InterventionCurve {
    let g = query.grid.len();
    let mut samples = vec![Vec::new(); g];
    let mut weights = Vec::new();
    let mut dag_index = Vec::new();
    for (curves, weight, source) in parts {
        let per = weight / curves.len() as f64;
        for c in curves {
            for (row, v) in samples.iter_mut().zip(c) {
                row.push(v);
            }
            weights.push(per);
            dag_index.push(source);
        }
    }
    InterventionCurve {
        method,
        intervened: query.intervened.clone(),
        target: query.target,
        grid: query.grid.clone(),
        samples,
        weights,
        dag_index,
        meta: CurveMeta {
            seed,
            n_components,
            expectation_only: query.expectation_only,
        },
    }
}

/// Intervention distribution for a known DAG.
pub fn intervene_known_dag(model: &FittedGpn, query: &InterventionQuery, seed: u64) -> Result<InterventionCurve> {
    query.validate(model.dag.n())?;
    let shared = GpFactors::new(&model.data);
    let sampler = GpSampler {
        shared: &shared,
        conditionals: &model.conditionals,
    };
    let curves = propagate(&sampler, &model.dag, query, seed, 0)?;
    Ok(assemble(Method::Mc, query, seed, vec![(curves, 1.0, 0)], 1))
}

/// Intervention distribution averaged over a weighted archive of DAGs, each
/// propagated with its cached hyperparameter samples.
pub fn intervene_unknown_dag(
    archive: &[WeightedDagSample],
    data: &Dataset,
    query: &InterventionQuery,
    seed: u64,
) -> Result<InterventionCurve> {
    if archive.is_empty() {
        return Err(Error::Archive("archive is empty".into()));
    }
    query.validate(data.n_vars())?;
    let components = canonical_components(archive);
    for (c, _) in &components {
        if c.dag.n() != data.n_vars() {
            return Err(Error::Archive(format!("{}-node DAG for {} columns", c.dag.n(), data.n_vars())));
        }
        let cond = c
            .conditionals
            .ok_or_else(|| Error::Archive(format!("sample {} has no cached conditionals", c.source_index)))?;
        check_conditionals(c.dag, cond)?;
    }
    let shared = GpFactors::new(data);
    let parts = components
        .par_iter()
        .map(|(c, occurrence)| {
            let sampler = GpSampler {
                shared: &shared,
                conditionals: c.conditionals.expect("checked above"),
            };
            Ok((propagate(&sampler, c.dag, query, seed, *occurrence)?, c.weight, c.source_index))
        })
        .collect::<Result<Vec<_>>>()?;
    let unique = components.iter().filter(|(_, occ)| *occ == 0).count();
    Ok(assemble(Method::Mc, query, seed, parts, unique))
}

/// Reference intervention distribution under an exact DAG posterior: `total`
/// particles are split across DAGs by largest remainder on their posterior
/// probabilities, and `query.n_mc` is ignored.
pub fn intervene_enumerated(
    posterior: &[(Dag, f64)],
    cache: &FamilyCache,
    query: &InterventionQuery,
    total: usize,
    seed: u64,
) -> Result<InterventionCurve> {
    if posterior.is_empty() || total == 0 {
        return Err(Error::Domain("need a nonempty posterior and at least one particle".into()));
    }
    query.validate(cache.data().n_vars())?;
    let probs: Vec<f64> = posterior.iter().map(|(_, p)| *p).collect();
    let counts = largest_remainder(&probs, total);
    let shared = GpFactors::new(cache.data());
    let parts = posterior
        .par_iter()
        .zip(counts.par_iter())
        .enumerate()
        .filter(|(_, (_, &count))| count > 0)
        .map(|(i, ((dag, p), &count))| {
            let conditionals = (0..dag.n())
                .map(|v| cache.conditionals(v, &dag.parents(v)))
                .collect::<Result<Vec<_>>>()?;
            let sampler = GpSampler {
                shared: &shared,
                conditionals: &conditionals,
            };
            let q = query.clone().with_n_mc(count);
            Ok((propagate(&sampler, dag, &q, seed, 0)?, *p, i))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_components = parts.len();
    Ok(assemble(Method::Truth, query, seed, parts, n_components))
}
