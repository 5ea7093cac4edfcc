#![allow(dead_code)]

pub mod conjugate;
pub mod geweke;
pub mod structural;

use fpca_mediation::basis::BasisConfig;
use fpca_mediation::fpca::{FpcaData, Model, Process};
use fpca_mediation::rng::substream;
use fpca_mediation::simulate::{scenario_preset, simulate_dataset};
use fpca_mediation::{FpcaState, LongitudinalDataset, Priors, SplineBasis};
use nalgebra::DMatrix;
use rand::Rng;

pub struct Problem {
    pub dataset: LongitudinalDataset,
    pub basis: SplineBasis,
    pub data: FpcaData,
}

/// Scenario-1 mediator design with `n` subjects and a small basis.
pub fn small_problem(n: usize, seed: u64) -> Problem {
    let cfg = fpca_mediation::ScenarioConfig { n_subjects: n, seed, ..scenario_preset(1).unwrap() };
    let (dataset, _) = simulate_dataset(&cfg).unwrap();
    let basis = SplineBasis::from_times(
        &dataset.mediator_times(),
        &BasisConfig { n_knots: 5, grid_size: 50, ..Default::default() },
    )
    .unwrap();
    let data = FpcaData::from_dataset(&dataset, &basis, Process::Mediator);
    Problem { dataset, basis, data }
}

pub fn proper_priors() -> Priors {
    Priors { beta_var: 2.0, noise_shape: 2.0, noise_rate: 1.0, adapt: false, ..Priors::default() }
}

/// An initialized state with its variance ladder and local scales moved
/// away from their starting values.
pub fn scrambled_state(p: &Problem, priors: &Priors, components: usize, seed: u64) -> FpcaState {
    let model = Model::new(&p.data, &p.basis, priors);
    let mut rng = substream(seed, 0);
    let mut s = model.init_state(components, &p.data.responses(), &mut rng).unwrap();
    for v in s.local_scales.iter_mut() {
        *v = rng.random_range(0.3..2.5);
    }
    for d in s.score_increments.iter_mut().chain(s.mean_increments.iter_mut()) {
        *d *= rng.random_range(0.5..2.0);
    }
    s.noise_var *= 1.3;
    s
}

pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

pub fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Moments { mean, var }
}

/// Sample mean and variance within three Monte Carlo standard errors of
/// the target (normal-theory error for the variance).
pub fn check_moments(label: &str, draws: &[f64], mean: f64, var: f64) -> Result<(), String> {
    let n = draws.len() as f64;
    let m = moments(draws);
    let se_mean = (var / n).sqrt();
    let se_var = var * (2.0 / (n - 1.0)).sqrt();
    if (m.mean - mean).abs() >= 3.0 * se_mean {
        return Err(format!("{label}: mean {} vs {} (se {se_mean:.2e})", m.mean, mean));
    }
    if (m.var - var).abs() >= 3.0 * se_var {
        return Err(format!("{label}: variance {} vs {} (se {se_var:.2e})", m.var, var));
    }
    Ok(())
}

/// Posterior of `θ` for `y = A θ + e`, `e ~ N(0, D)`, `θ ~ N(0, S)`, in
/// covariance form: mean `S A' K⁻¹ y`, covariance `S − S A' K⁻¹ A S` with
/// `K = A S A' + D`.
pub fn gaussian_posterior(
    a: &DMatrix<f64>,
    y: &nalgebra::DVector<f64>,
    noise_cov: &DMatrix<f64>,
    prior_cov: &DMatrix<f64>,
) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
    let k = a * prior_cov * a.transpose() + noise_cov;
    let lu = k.lu();
    let sa = prior_cov * a.transpose();
    let mean = &sa * lu.solve(y).unwrap();
    let cov = prior_cov - &sa * lu.solve(&sa.transpose()).unwrap();
    (mean, cov)
}

pub struct Fit {
    pub dataset: LongitudinalDataset,
    pub truth: fpca_mediation::SimulatedTruth,
    pub mediator: fpca_mediation::MediatorPosterior,
    pub outcome: fpca_mediation::OutcomePosterior,
}

pub fn chain_config(iterations: usize, burn_in: usize, seed: u64) -> fpca_mediation::ChainConfig {
    fpca_mediation::ChainConfig { components: 3, iterations, burn_in, thin: 1, seed, ..Default::default() }
}

/// Simulates a scenario and fits both stages with default bases.
pub fn fit_scenario(scenario: u8, n: usize, seed: u64, iterations: usize, burn_in: usize) -> Fit {
    let cfg = fpca_mediation::ScenarioConfig { n_subjects: n, seed, ..scenario_preset(scenario).unwrap() };
    let (dataset, truth) = simulate_dataset(&cfg).unwrap();
    let med_basis = SplineBasis::from_times(&dataset.mediator_times(), &BasisConfig::default()).unwrap();
    let out_basis = SplineBasis::from_times(&dataset.outcome_times(), &BasisConfig::default()).unwrap();
    let chain = chain_config(iterations, burn_in, seed);
    let mediator = fpca_mediation::mediator::run_chain(&dataset, &med_basis, &chain).unwrap();
    let out_cfg = fpca_mediation::OutcomeConfig { chain, ..Default::default() };
    let outcome = fpca_mediation::outcome::run_outcome_chain(&dataset, &mediator, &out_basis, &out_cfg).unwrap();
    Fit { dataset, truth, mediator, outcome }
}
