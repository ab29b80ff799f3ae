//! Additive squared-exponential GP regression.
//!
//! The kernel is a sum of unit-amplitude squared-exponential terms, one per
//! input column, each with its own lengthscale. All positive-definite solves
//! go through [`jittered_cholesky`], so operations that should agree (a full
//! posterior and an additive-component posterior with no extra components)
//! agree bit-for-bit.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mcmc::AdaptiveMetropolis;
use crate::rng::{self, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Per-dimension lengthscales plus the noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
}

impl Hyperparams {
    pub fn new(lengthscales: Vec<f64>, noise_var: f64) -> Result<Self> {
        let h = Hyperparams {
            lengthscales,
            noise_var,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if self.lengthscales.iter().all(|&v| ok(v)) && ok(self.noise_var) {
            Ok(())
        } else {
            Err(Error::Domain(format!("hyperparameters must be positive and finite: {self:?}")))
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_var.sqrt()
    }

    /// Log-space coordinates `(ln θ_1, .., ln θ_p, ln σ)`.
    pub fn to_log(&self) -> Vec<f64> {
        let mut u: Vec<f64> = self.lengthscales.iter().map(|t| t.ln()).collect();
        u.push(0.5 * self.noise_var.ln());
        u
    }

    pub fn from_log(u: &[f64]) -> Self {
        let (ls, sd) = u.split_at(u.len() - 1);
        Hyperparams {
            lengthscales: ls.iter().map(|v| v.exp()).collect(),
            noise_var: (2.0 * sd[0]).exp(),
        }
    }

    /// Restricts to a subset of input dimensions, keeping the noise.
    pub fn select(&self, dims: &[usize]) -> Hyperparams {
        Hyperparams {
            lengthscales: dims.iter().map(|&d| self.lengthscales[d]).collect(),
            noise_var: self.noise_var,
        }
    }
}

/// Inverse-gamma distribution with the shape/scale parameterisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite() {
            Ok(InvGamma { shape, scale })
        } else {
            Err(Error::Domain(format!("inverse gamma needs positive shape/scale, got ({shape}, {scale})")))
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln() - self.scale / x
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        statrs::function::gamma::gamma_ur(self.shape, self.scale / x)
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("validated parameters");
        1.0 / g.sample(rng)
    }
}

/// Independent inverse-gamma priors on every lengthscale and on the noise
/// standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub lengthscale: InvGamma,
    pub noise_sd: InvGamma,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            lengthscale: InvGamma { shape: 2.0, scale: 2.0 },
            noise_sd: InvGamma { shape: 1.0, scale: 1.0 },
        }
    }
}

impl HyperPrior {
    /// Prior density of `h` in its natural coordinates.
    pub fn ln_density(&self, h: &Hyperparams) -> f64 {
        h.lengthscales.iter().map(|&t| self.lengthscale.ln_pdf(t)).sum::<f64>()
            + self.noise_sd.ln_pdf(h.noise_sd())
    }

    /// Prior density of the log coordinates (includes the Jacobian).
    pub fn ln_density_log(&self, u: &[f64]) -> f64 {
        let h = Hyperparams::from_log(u);
        self.ln_density(&h) + u.iter().sum::<f64>()
    }

    pub fn sample(&self, dim: usize, rng: &mut Rng) -> Hyperparams {
        let lengthscales = (0..dim).map(|_| self.lengthscale.sample(rng)).collect();
        let sd = self.noise_sd.sample(rng);
        Hyperparams {
            lengthscales,
            noise_var: sd * sd,
        }
    }
}

/// Gaussian over a set of test points.
#[derive(Clone, Debug, PartialEq)]
pub struct GpPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn check_dims(h: &Hyperparams, x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.ncols() != h.dim() {
        return Err(Error::Shape(format!(
            "{what} has {} columns but {} lengthscales were given",
            x.ncols(),
            h.dim()
        )));
    }
    Ok(())
}

/// Additive squared-exponential Gram matrix between the rows of `a` and `b`.
pub fn gram(h: &Hyperparams, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dims(h, a, "left input")?;
    check_dims(h, b, "right input")?;
    Ok(gram_unchecked(&h.lengthscales, a, b))
}

fn gram_unchecked(lengthscales: &[f64], a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(a.nrows(), b.nrows());
    for (d, &theta) in lengthscales.iter().enumerate() {
        let c = -0.5 / (theta * theta);
        for j in 0..b.nrows() {
            let bj = b[(j, d)];
            for i in 0..a.nrows() {
                let r = a[(i, d)] - bj;
                k[(i, j)] += (c * r * r).exp();
            }
        }
    }
    k
}

/// Cholesky factor of `m + jitter·I`, with jitter starting at 1e-10 times
/// the mean diagonal and escalating by ×10 up to 1e-6.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let mean_diag = if n == 0 { 1.0 } else { m.trace() / n as f64 };
    let base = if mean_diag > 0.0 && mean_diag.is_finite() { mean_diag } else { 1.0 };
    let mut factor = JITTER_START;
    while factor <= JITTER_MAX * 1.000_001 {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += factor * base;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok(c);
        }
        factor *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

fn noisy_gram(h: &Hyperparams, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut k = gram_unchecked(&h.lengthscales, x, x);
    for i in 0..x.nrows() {
        k[(i, i)] += h.noise_var;
    }
    k
}

/// `ln N(y; 0, K + σ²I)`.
pub fn log_marginal_likelihood(y: &DVector<f64>, h: &Hyperparams, x: &DMatrix<f64>) -> Result<f64> {
    check_dims(h, x, "inputs")?;
    if y.len() != x.nrows() {
        return Err(Error::Shape(format!("{} targets for {} input rows", y.len(), x.nrows())));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let chol = jittered_cholesky(&noisy_gram(h, x))?;
    Ok(lml_from_chol(y, &chol))
}

fn lml_from_chol(y: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(&alpha) - log_det - 0.5 * y.len() as f64 * LN_2PI
}

/// Log marginal likelihood and its gradient in log-space coordinates.
pub(crate) fn lml_with_gradient(y: &DVector<f64>, h: &Hyperparams, x: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let p = h.dim();
    if y.is_empty() {
        return Ok((0.0, vec![0.0; p + 1]));
    }
    let chol = jittered_cholesky(&noisy_gram(h, x))?;
    let value = lml_from_chol(y, &chol);
    let alpha = chol.solve(y);
    let inv = chol.inverse();
    let n = y.len();
    let mut grad = vec![0.0; p + 1];
    for (d, &theta) in h.lengthscales.iter().enumerate() {
        let c = -0.5 / (theta * theta);
        let mut acc = 0.0;
        for j in 0..n {
            for i in 0..n {
                let r = x[(i, d)] - x[(j, d)];
                let r2 = r * r;
                let dk = (c * r2).exp() * r2 / (theta * theta);
                acc += (alpha[i] * alpha[j] - inv[(i, j)]) * dk;
            }
        }
        grad[d] = 0.5 * acc;
    }
    let trace_w: f64 = (0..n).map(|i| alpha[i] * alpha[i] - inv[(i, i)]).sum();
    grad[p] = trace_w * h.noise_var;
    Ok((value, grad))
}

/// A factorised training set: reusable for many posterior queries.
#[derive(Clone, Debug)]
pub struct GpFactor {
    hyper: Hyperparams,
    x_train: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpFactor {
    pub fn new(y: &DVector<f64>, x_train: &DMatrix<f64>, hyper: &Hyperparams) -> Result<Self> {
        check_dims(hyper, x_train, "training inputs")?;
        if y.len() != x_train.nrows() {
            return Err(Error::Shape(format!("{} targets for {} input rows", y.len(), x_train.nrows())));
        }
        let chol = jittered_cholesky(&noisy_gram(hyper, x_train))?;
        let alpha = chol.solve(y);
        Ok(GpFactor {
            hyper: hyper.clone(),
            x_train: x_train.clone(),
            chol,
            alpha,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    /// Posterior of the additive component built from input columns `dims`,
    /// evaluated at `x_test` (whose columns correspond to `dims`).
    pub fn component_posterior(&self, dims: &[usize], x_test: &DMatrix<f64>) -> Result<GpPosterior> {
        if x_test.ncols() != dims.len() {
            return Err(Error::Shape(format!(
                "test inputs have {} columns for {} component dimensions",
                x_test.ncols(),
                dims.len()
            )));
        }
        let ls: Vec<f64> = dims.iter().map(|&d| self.hyper.lengthscales[d]).collect();
        let train = self.x_train.select_columns(dims);
        let cross = gram_unchecked(&ls, &train, x_test);
        let mut cov = gram_unchecked(&ls, x_test, x_test);
        let mean = cross.transpose() * &self.alpha;
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&cross)
            .ok_or(Error::NotPositiveDefinite)?;
        cov -= v.transpose() * &v;
        symmetrize(&mut cov);
        Ok(GpPosterior { mean, cov })
    }

    /// Full posterior over all input columns.
    pub fn posterior(&self, x_test: &DMatrix<f64>) -> Result<GpPosterior> {
        let dims: Vec<usize> = (0..self.hyper.dim()).collect();
        self.component_posterior(&dims, x_test)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Posterior of `f*` at `x_test` for a zero-mean GP with additive SE kernel.
pub fn gp_posterior(
    y: &DVector<f64>,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    hyper: &Hyperparams,
) -> Result<GpPosterior> {
    check_dims(hyper, x_test, "test inputs")?;
    GpFactor::new(y, x_train, hyper)?.posterior(x_test)
}

/// Posterior of the component `f(X)` in `y = f(X) + Σ g_Z(Z) + ε`.
///
/// `hyper` holds one lengthscale for the intervention column followed by one
/// per adjustment column.
pub fn additive_component_posterior(
    y: &DVector<f64>,
    x_intv: &DVector<f64>,
    z_cols: &DMatrix<f64>,
    x_test: &DVector<f64>,
    hyper: &Hyperparams,
) -> Result<GpPosterior> {
    if z_cols.nrows() != x_intv.len() && z_cols.ncols() > 0 {
        return Err(Error::Shape("adjustment columns have the wrong length".into()));
    }
    let mut inputs = DMatrix::zeros(x_intv.len(), 1 + z_cols.ncols());
    inputs.set_column(0, x_intv);
    for c in 0..z_cols.ncols() {
        inputs.set_column(c + 1, &z_cols.column(c));
    }
    let test = DMatrix::from_column_slice(x_test.len(), 1, x_test.as_slice());
    GpFactor::new(y, &inputs, hyper)?.component_posterior(&[0], &test)
}

/// Joint draws from `N(mean, cov)`, one draw per row.
pub fn sample_gaussian(post: &GpPosterior, n_draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = rng::keyed_rng(seed, &[]);
    draw_gaussian(post, n_draws, &mut rng)
}

pub(crate) fn draw_gaussian(post: &GpPosterior, n_draws: usize, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let m = post.mean.len();
    let mut out = DMatrix::zeros(n_draws, m);
    if post.cov.iter().all(|&v| v == 0.0) {
        for r in 0..n_draws {
            out.row_mut(r).copy_from(&post.mean.transpose());
        }
        return Ok(out);
    }
    let chol = jittered_cholesky(&post.cov)?;
    let l = chol.l();
    for r in 0..n_draws {
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let draw = &post.mean + &l * z;
        out.row_mut(r).copy_from(&draw.transpose());
    }
    Ok(out)
}

/// Settings for the multi-start MAP search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub restarts: usize,
    pub max_iters: u64,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            restarts: 5,
            max_iters: 200,
            grad_tol: 1e-5,
            seed: 0,
        }
    }
}

/// Result of a MAP search.
#[derive(Clone, Debug, PartialEq)]
pub struct MapEstimate {
    pub hyper: Hyperparams,
    /// `ln p(y | X, Θ) + ln p(Θ)` at the optimum.
    pub log_posterior: f64,
    pub log_likelihood: f64,
    pub grad_norm: f64,
}

struct MapProblem<'a> {
    y: &'a DVector<f64>,
    x: &'a DMatrix<f64>,
    prior: &'a HyperPrior,
}

const LOG_BOUND: f64 = 12.0;

impl MapProblem<'_> {
    /// Negative log posterior (natural-coordinate prior, no Jacobian) and its
    /// gradient with respect to the log coordinates.
    fn evaluate(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let excess: f64 = u.iter().map(|v| (v.abs() - LOG_BOUND).max(0.0)).sum();
        let clamped: Vec<f64> = u.iter().map(|v| v.clamp(-LOG_BOUND, LOG_BOUND)).collect();
        let h = Hyperparams::from_log(&clamped);
        match lml_with_gradient(self.y, &h, self.x) {
            Ok((lml, g)) => {
                let p = h.dim();
                let mut grad: Vec<f64> = g.iter().map(|v| -v).collect();
                for (d, &t) in h.lengthscales.iter().enumerate() {
                    grad[d] -= -(self.prior.lengthscale.shape + 1.0) + self.prior.lengthscale.scale / t;
                }
                let sd = h.noise_sd();
                grad[p] -= -(self.prior.noise_sd.shape + 1.0) + self.prior.noise_sd.scale / sd;
                for (gi, ui) in grad.iter_mut().zip(u) {
                    if ui.abs() > LOG_BOUND {
                        *gi = 1e3 * ui.signum();
                    }
                }
                (-(lml + self.prior.ln_density(&h)) + 1e3 * excess, grad)
            }
            Err(_) => (1e300, vec![0.0; u.len()]),
        }
    }
}

impl argmin::core::CostFunction for MapProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.evaluate(u).0)
    }
}

impl argmin::core::Gradient for MapProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.evaluate(u).1)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn lbfgs(problem: MapProblem<'_>, init: Vec<f64>, cfg: &MapConfig) -> Option<Vec<f64>> {
    use argmin::core::{Executor, State};
    use argmin::solver::linesearch::MoreThuenteLineSearch;
    use argmin::solver::quasinewton::LBFGS;

    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7)
        .with_tolerance_grad(cfg.grad_tol * 0.1)
        .ok()?
        .with_tolerance_cost(0.0)
        .ok()?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.param(init).max_iters(cfg.max_iters))
        .run()
        .ok()?;
    res.state().get_best_param().cloned()
}

/// Multi-start MAP estimate of the hyperparameters.
///
/// Starts are drawn from the prior. If no start reaches the gradient
/// tolerance the error carries the best point found.
pub fn map_hyperparameters(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    prior: &HyperPrior,
    cfg: &MapConfig,
) -> Result<MapEstimate> {
    if y.len() < 2 {
        return Err(Error::Domain("MAP estimation needs at least two observations".into()));
    }
    if y.len() != x.nrows() || x.ncols() == 0 {
        return Err(Error::Shape(format!("{} targets, inputs {}x{}", y.len(), x.nrows(), x.ncols())));
    }
    let p = x.ncols();
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for r in 0..cfg.restarts.max(1) {
        let init = if r == 0 {
            // Prior means for the first start.
            let mut u = vec![(prior.lengthscale.scale / (prior.lengthscale.shape - 1.0).max(0.5)).ln(); p];
            u.push((prior.noise_sd.scale / (prior.noise_sd.shape + 1.0)).ln());
            u
        } else {
            let mut rng = rng::keyed_rng(cfg.seed, &[rng::tag::MAP, r as u64]);
            prior.sample(p, &mut rng).to_log()
        };
        let problem = MapProblem { y, x, prior };
        let Some(u) = lbfgs(problem, init, cfg) else { continue };
        let (cost, grad) = MapProblem { y, x, prior }.evaluate(&u);
        let g = norm(&grad);
        if !cost.is_finite() || cost >= 1e299 {
            continue;
        }
        if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
            best = Some((cost, u, g));
        }
    }
    let (cost, u, g) = best.ok_or(Error::NotPositiveDefinite)?;
    let hyper = Hyperparams::from_log(&u);
    if g >= cfg.grad_tol {
        return Err(Error::Optimization {
            best_objective: -cost,
            best: hyper,
        });
    }
    let log_likelihood = log_marginal_likelihood(y, &hyper, x)?;
    Ok(MapEstimate {
        hyper,
        log_posterior: -cost,
        log_likelihood,
        grad_norm: g,
    })
}

/// Settings for the hyperparameter posterior sampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSamplerConfig {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for HyperSamplerConfig {
    fn default() -> Self {
        HyperSamplerConfig { burn_in: 500, thin: 5 }
    }
}

/// Posterior draws of the hyperparameters with chain diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperChain {
    pub samples: Vec<Hyperparams>,
    pub acceptance_rate: f64,
}

/// Adaptive random-walk Metropolis on `(ln θ, ln σ)` targeting
/// `p(Θ | y, X) ∝ N(y; 0, K + σ²I) p(Θ)`.
pub fn sample_hyperparameters(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    prior: &HyperPrior,
    n_samples: usize,
    seed: u64,
    cfg: &HyperSamplerConfig,
) -> Result<HyperChain> {
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be at least 1".into()));
    }
    if x.ncols() == 0 {
        return Err(Error::Shape("kernel operations need at least one input column".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::Shape(format!("{} targets for {} input rows", y.len(), x.nrows())));
    }
    let p = x.ncols();
    let mut init = vec![0.0; p];
    init.push((prior.noise_sd.scale / (prior.noise_sd.shape + 1.0)).ln());
    let log_target = |u: &[f64]| -> f64 {
        let h = Hyperparams::from_log(u);
        if h.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        match log_marginal_likelihood(y, &h, x) {
            Ok(l) => l + prior.ln_density_log(u),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let sampler = AdaptiveMetropolis {
        burn_in: cfg.burn_in,
        thin: cfg.thin.max(1),
        ..AdaptiveMetropolis::default()
    };
    let mut rng = rng::keyed_rng(seed, &[rng::tag::HYPER]);
    let out = sampler.run(log_target, init, n_samples, &mut rng);
    Ok(HyperChain {
        samples: out.samples.iter().map(|u| Hyperparams::from_log(u)).collect(),
        acceptance_rate: out.acceptance_rate,
    })
}
