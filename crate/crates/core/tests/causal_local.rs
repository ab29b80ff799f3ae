use std::sync::Arc;

use gpn_core::causal_local::{fit_local, local_curve, local_mixture, LocalConfig};
use gpn_core::causal_mc::{default_grid, intervene_known_dag, FittedGpn, InterventionQuery};
use gpn_core::curve::linspace;
use gpn_core::graph::{five_node_benchmark, Dag, NodeSet};
use gpn_core::gpn::{generate_fourier_gpn, simulate};
use gpn_core::kernel::gp_posterior;
use gpn_core::stats::credible_band;
use gpn_core::structure::{FamilyCache, GpScoreConfig, ScoreKind, WeightedDagSample};
use gpn_core::{Dataset, Error};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn z(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn dataset(cols: Vec<Vec<f64>>) -> Dataset {
    let n = cols[0].len();
    let labels = (0..cols.len()).map(|i| format!("V{i}")).collect();
    Dataset::new(labels, DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])).unwrap()
}

fn sin_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| 1.5 * z(&mut rng)).collect();
    let w: Vec<f64> = (0..n).map(|_| z(&mut rng)).collect();
    let y: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a.sin() + b + 0.2 * z(&mut rng)).collect();
    dataset(vec![x, w, y])
}

fn cfg() -> LocalConfig {
    LocalConfig::default()
}

fn bare(edges: &[(usize, usize)], n: usize, log_weight: f64) -> WeightedDagSample {
    WeightedDagSample {
        dag: Dag::new(n, edges).unwrap(),
        log_weight,
        conditionals: None,
    }
}

#[test]
fn empty_adjustment_is_plain_regression() {
    let data = sin_data(40, 1);
    let fit = fit_local(&data, 0, 2, &NodeSet::empty(), &cfg(), 3).unwrap();
    let grid = linspace(-2.0, 2.0, 9);
    let y = data.column(2);
    let yc = y.add_scalar(-y.mean());
    let test = DMatrix::from_column_slice(grid.len(), 1, &grid);
    for k in [0, 17, 49] {
        let direct = gp_posterior(&yc, &data.columns(&[0]), &test, &fit.samples[k]).unwrap();
        assert_eq!(fit.posterior(k, &grid).unwrap(), direct);
    }
}

#[test]
fn fits_are_deterministic() {
    let data = sin_data(30, 2);
    let a = fit_local(&data, 0, 2, &NodeSet::new(vec![1]), &cfg(), 5).unwrap();
    let b = fit_local(&data, 0, 2, &NodeSet::new(vec![1]), &cfg(), 5).unwrap();
    assert_eq!(a, b);
    let grid = [0.0, 1.0];
    assert_eq!(local_curve(&a, &grid, 20, 1).unwrap(), local_curve(&b, &grid, 20, 1).unwrap());
}

#[test]
fn invalid_fits_rejected() {
    let data = sin_data(10, 3);
    assert!(matches!(fit_local(&data, 0, 0, &NodeSet::empty(), &cfg(), 0), Err(Error::Domain(_))));
    assert!(matches!(fit_local(&data, 0, 2, &NodeSet::new(vec![2]), &cfg(), 0), Err(Error::Domain(_))));
    assert!(matches!(fit_local(&data, 0, 5, &NodeSet::empty(), &cfg(), 0), Err(Error::Domain(_))));
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn additive_fit_recovers_sine_component() {
    let data = sin_data(300, 4);
    let fit = fit_local(&data, 0, 2, &NodeSet::new(vec![1]), &cfg(), 6).unwrap();
    let grid = linspace(-2.5, 2.5, 41);
    let mean = local_curve(&fit, &grid, 200, 7).unwrap().mean();
    let truth: Vec<f64> = grid.iter().map(|x| x.sin()).collect();
    let r = pearson(&mean, &truth);
    assert!(r > 0.9, "r = {r}");
}

#[test]
fn root_cause_agrees_with_propagation() {
    let dag = Dag::new(2, &[(0, 1)]).unwrap();
    let truth = generate_fourier_gpn(&dag, 8);
    let data = Arc::new(simulate(&truth, 80, 8).unwrap().standardized().unwrap());
    let grid = default_grid(&data, 0, 15);
    let n = 400;
    let fit = fit_local(&data, 0, 1, &NodeSet::empty(), &cfg(), 9).unwrap();
    let local = local_curve(&fit, &grid, n, 10).unwrap();
    // Same hyperparameter samples on both routes, so only Monte Carlo noise separates them.
    let conditionals = vec![Arc::new(Vec::new()), Arc::new(fit.samples.clone())];
    let model = FittedGpn::new(dag, data.clone(), conditionals).unwrap();
    let q = InterventionQuery::single(0, &grid, 1).with_n_mc(n).with_expectation_only(true);
    let mc = intervene_known_dag(&model, &q, 12).unwrap();
    let (lm, ls) = (local.mean(), local.standard_error());
    let (mm, ms) = (mc.mean(), mc.standard_error());
    let mut outside = 0;
    for g in 0..grid.len() {
        let se = (ls[g].powi(2) + ms[g].powi(2)).sqrt();
        if (lm[g] - mm[g]).abs() > 3.0 * se {
            outside += 1;
        }
    }
    assert!(outside <= 1, "{outside} grid points beyond 3 SE");
}

#[test]
fn outcome_among_parents_gives_constant_curve() {
    let data = sin_data(30, 5);
    // Y → X in every sampled DAG.
    let archive = vec![bare(&[(2, 0)], 3, 0.0), bare(&[(2, 0), (1, 0)], 3, 0.0)];
    let m = local_mixture(&data, &archive, 0, 2, &[-1.0, 0.0, 1.0], 10, &cfg(), 1).unwrap();
    let y_mean = data.column(2).mean();
    assert!(m.curve.samples.iter().flatten().all(|&v| v == y_mean));
    assert!(m.components.iter().all(|c| !c.fitted));
}

#[test]
fn point_mass_mixture_is_the_local_curve() {
    let data = sin_data(40, 6);
    let archive = vec![bare(&[(1, 0), (0, 2)], 3, 0.2), bare(&[(1, 0), (0, 2), (1, 2)], 3, -1.0)];
    let grid = [-1.0, 0.5, 2.0];
    let m = local_mixture(&data, &archive, 0, 2, &grid, 60, &cfg(), 4).unwrap();
    let fit = fit_local(&data, 0, 2, &NodeSet::new(vec![1]), &cfg(), 4).unwrap();
    assert_eq!(m.curve, local_curve(&fit, &grid, 60, 4).unwrap());
}

#[test]
fn draws_follow_parent_set_probabilities() {
    let data = sin_data(40, 7);
    let archive = vec![bare(&[(1, 0)], 3, 3f64.ln()), bare(&[], 3, 0.0), bare(&[(1, 0)], 3, 3f64.ln())];
    let m = local_mixture(&data, &archive, 0, 2, &[0.0, 1.0], 1000, &cfg(), 2).unwrap();
    // Parent sets in ascending order: {} then {1}.
    let draws: Vec<usize> = m.components.iter().map(|c| c.draws).collect();
    assert_eq!(draws, vec![143, 857]);
    assert_eq!(m.components.len(), 2);
    assert!(m.components.iter().all(|c| c.fitted));
    for (j, c) in m.components.iter().enumerate() {
        assert_eq!(m.curve.dag_index.iter().filter(|&&d| d == j).count(), c.draws);
    }

    let two = vec![bare(&[(1, 0)], 3, 3f64.ln()), bare(&[], 3, 0.0)];
    let m = local_mixture(&data, &two, 0, 2, &[0.0], 1000, &cfg(), 2).unwrap();
    assert_eq!(m.components.iter().map(|c| c.draws).collect::<Vec<_>>(), vec![250, 750]);
}

#[test]
fn recentred_at_outcome_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..100).map(|_| 3.0 + z(&mut rng)).collect();
    let y: Vec<f64> = x.iter().map(|v| 10.0 + 0.7 * (v - 3.0) + 0.4 * z(&mut rng)).collect();
    let data = dataset(vec![x.clone(), y.clone()]);
    let fit = fit_local(&data, 0, 1, &NodeSet::empty(), &cfg(), 1).unwrap();
    let x_mean = DVector::from_vec(x).mean();
    let curve = local_curve(&fit, &[x_mean], 400, 2).unwrap();
    let (m, se) = (curve.mean()[0], curve.standard_error()[0]);
    let expected = (0..400)
        .map(|d| fit.posterior(d % fit.samples.len(), &[x_mean]).unwrap().mean[0])
        .sum::<f64>()
        / 400.0
        + fit.y_mean;
    assert!((m - expected).abs() < 4.0 * se, "{m} vs {expected} (se {se})");
    let spread = se * 400f64.sqrt();
    assert!((m - fit.y_mean).abs() < 2.0 * spread, "{m} vs {} (sd {spread})", fit.y_mean);
}

#[test]
fn local_mean_sits_in_propagation_band_on_benchmark() {
    let dag = five_node_benchmark();
    let truth = generate_fourier_gpn(&dag, 13);
    let data = Arc::new(simulate(&truth, 50, 13).unwrap().standardized().unwrap());
    let (x, y) = dag.edges()[0];
    let grid = default_grid(&data, x, 30);
    let fit = fit_local(&data, x, y, &dag.parents(x), &cfg(), 14).unwrap();
    let local = local_curve(&fit, &grid, 200, 15).unwrap().mean();
    let cache = FamilyCache::new(data.clone(), ScoreKind::Gp(GpScoreConfig::default()), 16);
    let model = FittedGpn::from_cache(dag, &cache).unwrap();
    let q = InterventionQuery::single(x, &grid, y).with_n_mc(200).with_expectation_only(true);
    let band = credible_band(&intervene_known_dag(&model, &q, 17).unwrap(), 0.8);
    let inside = local.iter().zip(&band).filter(|(&m, &(lo, hi))| lo <= m && m <= hi).count();
    assert!(inside >= 21, "{inside}/30");
}

#[test]
fn invalid_mixture_inputs_rejected() {
    let data = sin_data(10, 10);
    assert!(local_mixture(&data, &[bare(&[], 3, 0.0)], 0, 0, &[0.0], 5, &cfg(), 0).is_err());
    assert!(local_mixture(&data, &[], 0, 2, &[0.0], 5, &cfg(), 0).is_err());
}
