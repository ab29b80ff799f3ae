//! Conjugate Bayesian linear regression for one network family.
//!
//! `y = b₀ + Σ_j b_j x_j + ε`, `ε ~ N(0, σ²)`, with `b | σ² ~ N(0, σ² I)` and
//! `σ² ~ IG(1, 1)`. The same model with no parents is the root-node marginal
//! used throughout the crate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::causal_mc::{assemble, canonical_components, propagate, InterventionQuery, LinearFamilies};
use crate::curve::{InterventionCurve, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Dag, NodeSet};
use crate::structure::WeightedDagSample;
use crate::kernel::{jittered_cholesky, InvGamma};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const PRIOR_SHAPE: f64 = 1.0;
pub const PRIOR_SCALE: f64 = 1.0;

/// Posterior `b | σ², y ~ N(mean, σ² Λ⁻¹)`, `σ² | y ~ IG(shape, scale)`.
/// Coefficient 0 is the intercept.
#[derive(Clone, Debug)]
pub struct LinearFamily {
    pub node: usize,
    pub parents: NodeSet,
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub shape: f64,
    pub scale: f64,
    pub log_evidence: f64,
    chol: Cholesky<f64, Dyn>,
}

fn design(data: &Dataset, parents: &NodeSet) -> DMatrix<f64> {
    let n = data.n_obs();
    let mut x = DMatrix::from_element(n, parents.len() + 1, 1.0);
    for (c, p) in parents.iter().enumerate() {
        x.set_column(c + 1, &data.values().column(p));
    }
    x
}

struct ConjugateFit {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    shape: f64,
    scale: f64,
    log_evidence: f64,
    chol: Cholesky<f64, Dyn>,
}

/// Conjugate update from the unit-information prior, including the
/// closed-form evidence `ln p(y | X)`.
fn fit_regression(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<ConjugateFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::Shape(format!("{} targets for {} design rows", n, x.nrows())));
    }
    let k = x.ncols();
    let precision = DMatrix::identity(k, k) + x.transpose() * x;
    let chol = jittered_cholesky(&precision)?;
    let mean = chol.solve(&(x.transpose() * y));
    let shape = PRIOR_SHAPE + 0.5 * n as f64;
    let quad = y.dot(y) - mean.dot(&(&precision * &mean));
    let scale = PRIOR_SCALE + 0.5 * quad.max(0.0);
    // ln|Λ₀| = 0 for the identity prior precision.
    let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_evidence = -0.5 * n as f64 * LN_2PI - 0.5 * ln_det + PRIOR_SHAPE * PRIOR_SCALE.ln() - shape * scale.ln()
        + ln_gamma(shape)
        - ln_gamma(PRIOR_SHAPE);
    Ok(ConjugateFit {
        mean,
        precision,
        shape,
        scale,
        log_evidence,
        chol,
    })
}

pub fn fit_linear_family(data: &Dataset, node: usize, parents: &NodeSet) -> Result<LinearFamily> {
    if node >= data.n_vars() || parents.iter().any(|p| p >= data.n_vars() || p == node) {
        return Err(Error::Domain(format!("invalid family {node} <- {parents}")));
    }
    if data.n_obs() <= parents.len() + 1 {
        return Err(Error::Domain(format!(
            "{} observations cannot fit {} coefficients",
            data.n_obs(),
            parents.len() + 1
        )));
    }
    let f = fit_regression(&data.column(node), &design(data, parents))?;
    Ok(LinearFamily {
        node,
        parents: parents.clone(),
        mean: f.mean,
        precision: f.precision,
        shape: f.shape,
        scale: f.scale,
        log_evidence: f.log_evidence,
        chol: f.chol,
    })
}

/// `ln p(y)` under the intercept-only model.
pub fn root_log_evidence(y: &DVector<f64>) -> f64 {
    let x = DMatrix::from_element(y.len(), 1, 1.0);
    fit_regression(y, &x)
        .expect("identity-plus-Gram precision is positive definite")
        .log_evidence
}

impl LinearFamily {
    pub fn noise_posterior(&self) -> InvGamma {
        InvGamma {
            shape: self.shape,
            scale: self.scale,
        }
    }

    /// Marginal posterior standard deviation of coefficient `j`.
    pub fn coefficient_sd(&self, j: usize) -> f64 {
        let mut e = DVector::zeros(self.mean.len());
        e[j] = 1.0;
        let inv_jj = self.chol.solve(&e)[j];
        (self.scale / (self.shape - 1.0) * inv_jj).sqrt()
    }

    /// Joint posterior draw of `(coefficients, σ²)`.
    pub fn draw(&self, rng: &mut Rng) -> (DVector<f64>, f64) {
        let sigma2 = self.noise_posterior().sample(rng);
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        // Λ = LLᵀ, so L⁻ᵀ z has covariance Λ⁻¹.
        let w = self
            .chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("cholesky factor is nonsingular");
        (&self.mean + w * sigma2.sqrt(), sigma2)
    }
}

/// Intervention distribution for a known DAG with linear-Gaussian
/// conditionals; coefficients and noise are redrawn per particle.
pub fn intervene_linear_known(dag: &Dag, data: &Dataset, query: &InterventionQuery, seed: u64) -> Result<InterventionCurve> {
    if dag.n() != data.n_vars() {
        return Err(Error::Shape(format!("{}-node DAG for {} columns", dag.n(), data.n_vars())));
    }
    let families = LinearFamilies::new(data);
    let curves = propagate(&families, dag, query, seed, 0)?;
    Ok(assemble(Method::Linear, query, seed, vec![(curves, 1.0, 0)], 1))
}

/// Linear-Gaussian intervention distribution averaged over a weighted DAG
/// archive. Cached GP conditionals, if any, are ignored.
pub fn intervene_linear(
    archive: &[WeightedDagSample],
    data: &Dataset,
    query: &InterventionQuery,
    seed: u64,
) -> Result<InterventionCurve> {
    if archive.is_empty() {
        return Err(Error::Archive("archive is empty".into()));
    }
    query.validate(data.n_vars())?;
    if let Some(s) = archive.iter().find(|s| s.dag.n() != data.n_vars()) {
        return Err(Error::Archive(format!("{}-node DAG for {} columns", s.dag.n(), data.n_vars())));
    }
    let families = LinearFamilies::new(data);
    let components = canonical_components(archive);
    let parts = components
        .par_iter()
        .map(|(c, occurrence)| Ok((propagate(&families, c.dag, query, seed, *occurrence)?, c.weight, c.source_index)))
        .collect::<Result<Vec<_>>>()?;
    let unique = components.iter().filter(|(_, occ)| *occ == 0).count();
    Ok(assemble(Method::Linear, query, seed, parts, unique))
}
