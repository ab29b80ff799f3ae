//! Synthetic Gaussian process networks with Fourier mean functions: random
//! model generation, forward simulation and ground-truth intervention curves.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{Dag, NodeSet};
use crate::rng::{self, tag, Rng};

pub const HARMONICS: usize = 6;
pub const FOURIER_NOISE_VAR: f64 = 0.5;

/// Contribution of one parent:
/// `β (u₀ x + Σ_k v_k sin(kx) + u_k cos(kx))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub parent: usize,
    pub beta: f64,
    /// `u[0]` multiplies the linear term, `u[k]` the cosine of harmonic `k`.
    pub u: [f64; HARMONICS + 1],
    /// `v[k-1]` multiplies the sine of harmonic `k`.
    pub v: [f64; HARMONICS],
}

impl FourierTerm {
    pub fn eval(&self, x: f64) -> f64 {
        let mut s = self.u[0] * x;
        for k in 1..=HARMONICS {
            let kx = k as f64 * x;
            s += self.v[k - 1] * kx.sin() + self.u[k] * kx.cos();
        }
        self.beta * s
    }

    pub fn weight_sum(&self) -> f64 {
        self.u.iter().sum::<f64>() + self.v.iter().sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierFamily {
    pub terms: Vec<FourierTerm>,
    pub noise_var: f64,
}

impl FourierFamily {
    /// Noise-free mean given the full node-value vector.
    pub fn mean(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(values[t.parent])).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeFamily {
    Root { mean: f64, var: f64 },
    Fourier(FourierFamily),
}

impl NodeFamily {
    fn mean(&self, values: &[f64]) -> f64 {
        match self {
            NodeFamily::Root { mean, .. } => *mean,
            NodeFamily::Fourier(f) => f.mean(values),
        }
    }

    fn noise_sd(&self) -> f64 {
        match self {
            NodeFamily::Root { var, .. } => var.sqrt(),
            NodeFamily::Fourier(f) => f.noise_var.sqrt(),
        }
    }
}

/// A structural model with explicit mean functions for every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpnModel {
    pub dag: Dag,
    pub families: Vec<NodeFamily>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub root_mean: f64,
    pub root_var: f64,
    pub noise_var: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            root_mean: 0.0,
            root_var: 1.0,
            noise_var: FOURIER_NOISE_VAR,
        }
    }
}

/// Dirichlet concentrations in the order `u₀, (u₁, v₁), …, (u₆, v₆)`.
fn dirichlet_alpha() -> [f64; 2 * HARMONICS + 1] {
    let mut a = [1.0; 2 * HARMONICS + 1];
    for k in 1..=HARMONICS {
        let e = (-(k as f64)).exp();
        a[2 * k - 1] = e;
        a[2 * k] = e;
    }
    a
}

fn draw_beta(rng: &mut Rng) -> f64 {
    let mag = rng.random_range(0.5..2.0);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

fn draw_term(parent: usize, rng: &mut Rng) -> FourierTerm {
    let dir = Dirichlet::new(dirichlet_alpha()).expect("positive concentrations");
    let w: [f64; 2 * HARMONICS + 1] = dir.sample(rng);
    let mut u = [0.0; HARMONICS + 1];
    let mut v = [0.0; HARMONICS];
    u[0] = w[0];
    for k in 1..=HARMONICS {
        u[k] = w[2 * k - 1];
        v[k - 1] = w[2 * k];
    }
    FourierTerm {
        parent,
        beta: draw_beta(rng),
        u,
        v,
    }
}

pub fn generate_fourier_gpn(dag: &Dag, seed: u64) -> GpnModel {
    generate_fourier_gpn_with(dag, seed, &GeneratorConfig::default())
}

pub fn generate_fourier_gpn_with(dag: &Dag, seed: u64, cfg: &GeneratorConfig) -> GpnModel {
    let families = (0..dag.n())
        .map(|v| {
            let parents = dag.parents(v);
            if parents.is_empty() {
                NodeFamily::Root {
                    mean: cfg.root_mean,
                    var: cfg.root_var,
                }
            } else {
                let mut rng = rng::keyed_rng(seed, &[tag::GENERATE, v as u64]);
                NodeFamily::Fourier(FourierFamily {
                    terms: parents.iter().map(|p| draw_term(p, &mut rng)).collect(),
                    noise_var: cfg.noise_var,
                })
            }
        })
        .collect();
    GpnModel {
        dag: dag.clone(),
        families,
        seed,
    }
}

impl GpnModel {
    pub fn validate(&self) -> Result<()> {
        if self.families.len() != self.dag.n() {
            return Err(Error::Shape(format!(
                "{} families for {} nodes",
                self.families.len(),
                self.dag.n()
            )));
        }
        for (v, fam) in self.families.iter().enumerate() {
            match fam {
                NodeFamily::Root { var, .. } => {
                    if !self.dag.parents(v).is_empty() || !(*var > 0.0) {
                        return Err(Error::Domain(format!("node {v}: invalid root family")));
                    }
                }
                NodeFamily::Fourier(f) => {
                    let inputs: NodeSet = f.terms.iter().map(|t| t.parent).collect();
                    if inputs != self.dag.parents(v) || inputs.len() != f.terms.len() || !(f.noise_var > 0.0) {
                        return Err(Error::Domain(format!("node {v}: family does not match parent set")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<GpnModel> {
        let m: GpnModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    /// One joint draw given standard-normal noise for every node. Nodes in
    /// `fixed` take the supplied value and ignore their noise.
    fn propagate(&self, order: &[usize], noise: &[f64], fixed: &[(usize, f64)], values: &mut [f64]) {
        for &v in order {
            values[v] = match fixed.iter().find(|(f, _)| *f == v) {
                Some(&(_, x)) => x,
                None => {
                    let fam = &self.families[v];
                    fam.mean(values) + fam.noise_sd() * noise[v]
                }
            };
        }
    }
}

/// `n_obs` i.i.d. joint draws, one row per observation, in raw units.
pub fn simulate(model: &GpnModel, n_obs: usize, seed: u64) -> Result<Dataset> {
    model.validate()?;
    let n = model.dag.n();
    let order = model.dag.topological_order()?;
    let rows: Vec<Vec<f64>> = (0..n_obs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::keyed_rng(seed, &[tag::SIMULATE, i as u64]);
            let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut values = vec![0.0; n];
            model.propagate(&order, &noise, &[], &mut values);
            values
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Dataset::new(model.dag.labels().to_vec(), DMatrix::from_row_slice(n_obs, n, &flat))
}

/// Ground-truth expectation curve with Monte Carlo standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthCurve {
    pub target: usize,
    pub intervened: NodeSet,
    pub grid: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub replicates: usize,
}

/// `E(target | do(intervened = values[g]))` by forward simulation through the
/// mutilated model.
///
/// The same `replicates` noise vectors are reused at every grid point, so a
/// target with no path from the intervened nodes gets an exactly flat curve.
/// The target's own noise is left out since it is zero-mean and additive.
pub fn true_intervention_expectation(
    model: &GpnModel,
    target: usize,
    intervened: &NodeSet,
    values: &[Vec<f64>],
    replicates: usize,
    seed: u64,
) -> Result<TruthCurve> {
    let n = model.dag.n();
    if target >= n {
        return Err(Error::Domain(format!("unknown target node {target}")));
    }
    if intervened.contains(target) {
        return Err(Error::Domain(format!("target {target} is also intervened")));
    }
    if replicates < 2 {
        return Err(Error::Domain("need at least two replicates".into()));
    }
    let mut rng = rng::keyed_rng(seed, &[tag::TRUTH]);
    let noise = DMatrix::from_fn(replicates, n, |_, _| StandardNormal.sample(&mut rng));
    expectation_with_noise(model, target, intervened, values, &noise)
}

fn expectation_with_noise(
    model: &GpnModel,
    target: usize,
    intervened: &NodeSet,
    values: &[Vec<f64>],
    noise: &DMatrix<f64>,
) -> Result<TruthCurve> {
    model.validate()?;
    let n = model.dag.n();
    if values.iter().any(|g| g.len() != intervened.len()) {
        return Err(Error::Shape("grid point width differs from intervened set".into()));
    }
    let h = model.dag.mutilate(intervened)?;
    let needed = h.ancestors_mask(1 << target) | (1 << target);
    let order: Vec<usize> = h
        .topological_order()?
        .into_iter()
        .filter(|v| needed >> v & 1 == 1)
        .collect();
    let r = noise.nrows();
    let rows: Vec<Vec<f64>> = (0..r).map(|i| noise.row(i).iter().copied().collect()).collect();
    let (mean, standard_error): (Vec<f64>, Vec<f64>) = values
        .par_iter()
        .map(|point| {
            let fixed: Vec<(usize, f64)> = intervened.iter().zip(point.iter().copied()).collect();
            let mut vals = vec![0.0; n];
            // Welford accumulation keeps the variance exact for constant draws.
            let mut m = 0.0;
            let mut m2 = 0.0;
            for (i, z) in rows.iter().enumerate() {
                let mut z = z.clone();
                z[target] = 0.0;
                model.propagate(&order, &z, &fixed, &mut vals);
                let delta = vals[target] - m;
                m += delta / (i + 1) as f64;
                m2 += delta * (vals[target] - m);
            }
            let var = m2 / (r - 1) as f64;
            (m, (var / r as f64).sqrt())
        })
        .unzip();
    Ok(TruthCurve {
        target,
        intervened: intervened.clone(),
        grid: values.to_vec(),
        mean,
        standard_error,
        replicates: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::five_node_benchmark;

    fn grid(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    fn fourier(model: &GpnModel, v: usize) -> &FourierFamily {
        match &model.families[v] {
            NodeFamily::Fourier(f) => f,
            NodeFamily::Root { .. } => panic!("node {v} is a root"),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let d = five_node_benchmark();
        assert_eq!(generate_fourier_gpn(&d, 3), generate_fourier_gpn(&d, 3));
        assert_ne!(generate_fourier_gpn(&d, 3), generate_fourier_gpn(&d, 4));
    }

    #[test]
    fn weights_on_simplex_and_beta_range() {
        let d = five_node_benchmark();
        let mut edges = 0;
        for seed in 0..200 {
            let m = generate_fourier_gpn(&d, seed);
            m.validate().unwrap();
            for v in 1..5 {
                for t in &fourier(&m, v).terms {
                    assert!((t.weight_sum() - 1.0).abs() < 1e-12);
                    assert!(t.u.iter().chain(&t.v).all(|w| *w >= 0.0));
                    assert!(t.beta.abs() >= 0.5 && t.beta.abs() <= 2.0);
                    edges += 1;
                }
            }
        }
        assert!(edges >= 1000);
    }

    #[test]
    fn beta_signs_balanced() {
        let mut rng = rng::keyed_rng(0, &[]);
        let pos = (0..10_000).filter(|_| draw_beta(&mut rng) > 0.0).count();
        assert!((pos as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn dirichlet_means_follow_concentrations() {
        let alpha = dirichlet_alpha();
        let total: f64 = alpha.iter().sum();
        let mut rng = rng::keyed_rng(1, &[]);
        let mut acc = [0.0; 2 * HARMONICS + 1];
        let n = 20_000;
        for _ in 0..n {
            let t = draw_term(0, &mut rng);
            acc[0] += t.u[0];
            for k in 1..=HARMONICS {
                acc[2 * k - 1] += t.u[k];
                acc[2 * k] += t.v[k - 1];
            }
        }
        for (a, s) in alpha.iter().zip(acc) {
            assert!((s / n as f64 - a / total).abs() < 0.01);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = generate_fourier_gpn(&five_node_benchmark(), 9);
        assert_eq!(GpnModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn root_marginal_moments() {
        let m = generate_fourier_gpn(&Dag::empty(1), 0);
        let d = simulate(&m, 100_000, 5).unwrap();
        let c = d.column(0);
        let mean = c.mean();
        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c.len() - 1) as f64;
        let se_mean = (1.0f64 / 1e5).sqrt();
        let se_var = (2.0f64 / 1e5).sqrt();
        assert!(mean.abs() < 4.0 * se_mean);
        assert!((var - 1.0).abs() < 4.0 * se_var);
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn linear_family_correlation_sign() {
        for beta in [1.3, -0.8] {
            let mut m = generate_fourier_gpn(&Dag::new(2, &[(0, 1)]).unwrap(), 0);
            let NodeFamily::Fourier(f) = &mut m.families[1] else { unreachable!() };
            f.terms[0].beta = beta;
            f.terms[0].u = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            f.terms[0].v = [0.0; HARMONICS];
            let d = simulate(&m, 20_000, 1).unwrap();
            let r = corr(d.column(0).as_slice(), d.column(1).as_slice());
            assert_eq!(r.signum(), beta.signum());
        }
    }

    #[test]
    fn independent_nodes_uncorrelated() {
        let m = generate_fourier_gpn(&Dag::new(4, &[(0, 1), (2, 3)]).unwrap(), 2);
        let n = 100_000;
        let d = simulate(&m, n, 8).unwrap();
        let bound = 4.0 / (n as f64).sqrt();
        for (a, b) in [(0, 2), (1, 3), (0, 3)] {
            assert!(corr(d.column(a).as_slice(), d.column(b).as_slice()).abs() < bound);
        }
    }

    #[test]
    fn benchmark_sample_shape() {
        let m = generate_fourier_gpn(&five_node_benchmark(), 0);
        let d = simulate(&m, 50, 0).unwrap();
        assert_eq!((d.n_obs(), d.n_vars()), (50, 5));
        assert!(d.values().iter().all(|v| v.is_finite()));
        assert_eq!(simulate(&m, 50, 0).unwrap(), d);
    }

    #[test]
    fn no_path_gives_flat_curve_at_marginal_mean() {
        // Node 2 shares a parent with node 1 but does not descend from it.
        let m = generate_fourier_gpn(&Dag::new(3, &[(0, 1), (0, 2)]).unwrap(), 4);
        let xs = grid(&[-2.0, 0.0, 1.0, 2.5]);
        let t = true_intervention_expectation(&m, 2, &NodeSet::new(vec![1]), &xs, 50_000, 1).unwrap();
        assert!(t.mean.windows(2).all(|w| w[0] == w[1]));

        let n = 200_000;
        let obs = simulate(&m, n, 3).unwrap().column(2);
        let mean = obs.mean();
        let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let combined = ((sd * sd / n as f64) + t.standard_error[0].powi(2)).sqrt();
        assert!((t.mean[0] - mean).abs() < 4.0 * combined);
    }

    #[test]
    fn direct_edge_is_exact() {
        let m = generate_fourier_gpn(&Dag::new(2, &[(0, 1)]).unwrap(), 6);
        let xs = [-2.0, -0.3, 0.0, 1.7];
        let t = true_intervention_expectation(&m, 1, &NodeSet::new(vec![0]), &grid(&xs), 100, 0).unwrap();
        let f = fourier(&m, 1);
        for (k, x) in xs.iter().enumerate() {
            assert!((t.mean[k] - f.terms[0].eval(*x)).abs() < 1e-12);
            assert!(t.standard_error[k] < 1e-9);
        }
    }

    #[test]
    fn chain_matches_nested_monte_carlo() {
        let m = generate_fourier_gpn(&Dag::new(3, &[(0, 1), (1, 2)]).unwrap(), 11);
        let xs = [-1.5, 0.0, 0.8, 2.0];
        let t = true_intervention_expectation(&m, 2, &NodeSet::new(vec![0]), &grid(&xs), 100_000, 0).unwrap();
        let (fz, fy) = (fourier(&m, 1), fourier(&m, 2));
        let sd_z = fz.noise_var.sqrt();
        let mut rng = rng::keyed_rng(1234, &[]);
        let r = 1_000_000;
        for (k, x) in xs.iter().enumerate() {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..r {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = fz.terms[0].eval(*x) + sd_z * e;
                let y = fy.terms[0].eval(z);
                sum += y;
                sq += y * y;
            }
            let mean = sum / r as f64;
            let se = ((sq / r as f64 - mean * mean) / r as f64).sqrt();
            let combined = (se * se + t.standard_error[k].powi(2)).sqrt();
            assert!((mean - t.mean[k]).abs() < 3.0 * combined, "x={x}: {mean} vs {}", t.mean[k]);
        }
    }

    #[test]
    fn intervened_noise_is_ignored() {
        let m = generate_fourier_gpn(&five_node_benchmark(), 1);
        let xs = grid(&[-1.0, 0.5]);
        let targets = NodeSet::new(vec![1]);
        let mut rng = rng::keyed_rng(0, &[]);
        let noise = DMatrix::from_fn(2_000, 5, |_, _| StandardNormal.sample(&mut rng));
        let mut altered = noise.clone();
        for i in 0..altered.nrows() {
            altered[(i, 1)] = 7.0 * altered[(i, 1)] + 1.0;
        }
        let a = expectation_with_noise(&m, 3, &targets, &xs, &noise).unwrap();
        let b = expectation_with_noise(&m, 3, &targets, &xs, &altered).unwrap();
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn target_cannot_be_intervened() {
        let m = generate_fourier_gpn(&five_node_benchmark(), 1);
        let r = true_intervention_expectation(&m, 2, &NodeSet::new(vec![2]), &grid(&[0.0]), 10, 0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
