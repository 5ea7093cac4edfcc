//! Outcome FPCA chain with a concurrent mediator term `γ · M_i(t)`.
//!
//! Each sweep takes one mediator posterior draw, imputes the latent mediator
//! process at the outcome times, runs the FPCA sweep on `Y − γ M̂`, and then
//! updates `γ`. The mediator posterior is only read.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::fpca::{ChainConfig, FpcaData, FpcaState, Model, MhTuner, Process};
use crate::linalg;
use crate::mediator::MediatorPosterior;
use crate::rng::{outcome_chain_stream, SamplerRng};

/// How mediator draws are paired with outcome sweeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Sweep `k` uses mediator draw `k mod D`.
    #[default]
    Cycle,
    /// A uniformly random mediator draw each sweep.
    Random,
}

/// What supplies the mediator values used as the outcome regressor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Imputation {
    /// The paired mediator draw of each sweep. The draw-to-draw noise acts
    /// as measurement error in the regressor and attenuates `γ`.
    Draw,
    /// The posterior mean of the latent mediator process. Mediator
    /// uncertainty still reaches the effect curves through the draw pairing.
    #[default]
    PosteriorMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutcomeConfig {
    pub chain: ChainConfig,
    pub pairing: Pairing,
    pub imputation: Imputation,
    /// Hold `γ` at this value instead of sampling it.
    pub fixed_gamma: Option<f64>,
    pub gamma_prior_var: f64,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            pairing: Pairing::Cycle,
            imputation: Imputation::PosteriorMean,
            fixed_gamma: None,
            gamma_prior_var: 1e4,
        }
    }
}

/// Live state of the outcome chain.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeState {
    pub fpca: FpcaState,
    pub gamma: f64,
    /// Index of the mediator draw that supplied `imputed`.
    pub mediator_draw: usize,
    /// Imputed mediator values at each subject's outcome times.
    pub imputed: Vec<DVector<f64>>,
}

/// Retained outcome draw; the imputed mediator values are not kept.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeDraw {
    pub fpca: FpcaState,
    pub gamma: f64,
    pub mediator_draw: usize,
}

#[derive(Clone, Debug)]
pub struct OutcomePosterior {
    pub draws: Vec<OutcomeDraw>,
    pub basis: SplineBasis,
    pub config: OutcomeConfig,
    pub covariate_names: Vec<String>,
    pub time_scale: f64,
    /// Fingerprint of the mediator posterior used for imputation.
    pub mediator_fingerprint: String,
    pub fev: Vec<Vec<f64>>,
    pub acceptance: [f64; 4],
    pub max_orthonormality_error: f64,
}

impl OutcomePosterior {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn gamma_draws(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.gamma).collect()
    }
}

/// Precomputed mediator design at the outcome times, so imputation is two
/// matrix products per subject.
pub struct Imputer {
    basis_rows: Vec<DMatrix<f64>>,
    covariates: Vec<DMatrix<f64>>,
}

impl Imputer {
    pub fn new(outcome: &FpcaData, mediator_basis: &SplineBasis) -> Self {
        Self {
            basis_rows: outcome.blocks.iter().map(|b| mediator_basis.matrix(&b.times)).collect(),
            covariates: outcome.blocks.iter().map(|b| b.covariates.clone()).collect(),
        }
    }

    /// Average of the imputations over all draws.
    pub fn impute_mean(&self, draws: &[FpcaState]) -> Vec<DVector<f64>> {
        let mut acc: Vec<DVector<f64>> = self.basis_rows.iter().map(|b| DVector::zeros(b.nrows())).collect();
        for d in draws {
            for (a, v) in acc.iter_mut().zip(self.impute(d)) {
                *a += v;
            }
        }
        let n = draws.len().max(1) as f64;
        acc.into_iter().map(|a| a / n).collect()
    }

    pub fn impute(&self, draw: &FpcaState) -> Vec<DVector<f64>> {
        (0..self.basis_rows.len())
            .map(|i| {
                let curve = draw.subject_curve(i, &self.basis_rows[i]);
                if self.covariates[i].ncols() == 0 {
                    curve
                } else {
                    curve + &self.covariates[i] * &draw.beta
                }
            })
            .collect()
    }
}

/// Mean and variance of the full conditional of `γ` given the outcome
/// residuals `e = Y − Xβ − Σ θη` and the imputed mediator values.
pub fn gamma_conditional(
    imputed: &[DVector<f64>],
    residuals: &[DVector<f64>],
    noise_var: f64,
    prior_var: f64,
) -> (f64, f64) {
    let mut mm = 0.0;
    let mut me = 0.0;
    for (m, e) in imputed.iter().zip(residuals) {
        mm += m.norm_squared();
        me += m.dot(e);
    }
    let prec = mm / noise_var + 1.0 / prior_var;
    (me / noise_var / prec, 1.0 / prec)
}

/// One draw of `γ` from its full conditional.
pub fn sample_gamma<R: Rng + ?Sized>(
    imputed: &[DVector<f64>],
    residuals: &[DVector<f64>],
    noise_var: f64,
    prior_var: f64,
    rng: &mut R,
) -> f64 {
    let (mean, var) = gamma_conditional(imputed, residuals, noise_var, prior_var);
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

fn select_draw<R: Rng + ?Sized>(pairing: Pairing, sweep: usize, n: usize, rng: &mut R) -> usize {
    match pairing {
        Pairing::Cycle => sweep % n,
        Pairing::Random => rng.random_range(0..n),
    }
}

fn offset_targets(data: &FpcaData, imputed: &[DVector<f64>], gamma: f64) -> Vec<DVector<f64>> {
    data.blocks.iter().zip(imputed).map(|(b, m)| &b.response - m * gamma).collect()
}

/// Pooled least-squares `γ` from regressing Y on `[X, M̂]`.
fn initial_gamma(data: &FpcaData, imputed: &[DVector<f64>]) -> f64 {
    let p = data.covariate_dim();
    let mut gram = DMatrix::zeros(p + 1, p + 1);
    let mut rhs = DVector::zeros(p + 1);
    for (b, m) in data.blocks.iter().zip(imputed) {
        let mut z = DMatrix::zeros(b.times.len(), p + 1);
        z.view_mut((0, 0), (b.times.len(), p)).copy_from(&b.covariates);
        z.set_column(p, m);
        gram += z.transpose() * &z;
        rhs += z.transpose() * &b.response;
    }
    match linalg::cholesky_jittered(&gram, "initial mediator coefficient") {
        Ok(c) => c.solve(&rhs)[p],
        Err(_) => 0.0,
    }
}

/// Runs the outcome chain with a caller-supplied RNG. Returns the retained
/// draws, the MH tuner and the worst orthonormality error.
pub fn run_outcome_chain_with<R: Rng + ?Sized>(
    data: &FpcaData,
    basis: &SplineBasis,
    imputer: &Imputer,
    mediator_draws: &[FpcaState],
    config: &OutcomeConfig,
    rng: &mut R,
) -> Result<(Vec<OutcomeDraw>, MhTuner, f64)> {
    let chain = &config.chain;
    chain.validate()?;
    if mediator_draws.is_empty() {
        return Err(Error::Config("mediator posterior has no draws".into()));
    }
    let model = Model::new(data, basis, &chain.priors);
    let n_med = mediator_draws.len();

    let fixed_imputation = match config.imputation {
        Imputation::PosteriorMean => Some(imputer.impute_mean(mediator_draws)),
        Imputation::Draw => None,
    };
    let impute = |k: usize| match &fixed_imputation {
        Some(m) => m.clone(),
        None => imputer.impute(&mediator_draws[k]),
    };
    let first = select_draw(config.pairing, 0, n_med, rng);
    let imputed = impute(first);
    let gamma = config.fixed_gamma.unwrap_or_else(|| initial_gamma(data, &imputed));
    let targets = offset_targets(data, &imputed, gamma);
    let fpca = model.init_state(chain.components, &targets, rng)?;
    let mut state = OutcomeState { fpca, gamma, mediator_draw: first, imputed };

    let mut tuner = MhTuner::new(chain.priors.mh_step);
    let mut draws = Vec::with_capacity(chain.retained());
    let mut worst: f64 = 0.0;
    for it in 0..chain.iterations {
        if it == chain.burn_in {
            tuner.reset_counts();
        }
        if it > 0 {
            state.mediator_draw = select_draw(config.pairing, it, n_med, rng);
            if fixed_imputation.is_none() {
                state.imputed = impute(state.mediator_draw);
            }
        }
        let targets = offset_targets(data, &state.imputed, state.gamma);
        let adapt = chain.priors.adapt && it < chain.burn_in;
        model
            .sweep(&mut state.fpca, &targets, &mut tuner, adapt, rng)
            .map_err(|e| Error::Numerical(format!("outcome sweep {it}: {e}")))?;
        if config.fixed_gamma.is_none() {
            let residuals: Vec<DVector<f64>> =
                (0..data.n_subjects()).map(|i| model.residual(&state.fpca, &data.blocks[i].response, i)).collect();
            state.gamma =
                sample_gamma(&state.imputed, &residuals, state.fpca.noise_var, config.gamma_prior_var, rng);
        }
        worst = worst.max(state.fpca.orthonormality_error(basis));
        if chain.keeps(it) {
            draws.push(OutcomeDraw { fpca: state.fpca.clone(), gamma: state.gamma, mediator_draw: state.mediator_draw });
        }
        if (it + 1) % 1000 == 0 {
            log::info!("outcome sweep {}/{} (gamma {:.4})", it + 1, chain.iterations, state.gamma);
        }
    }
    Ok((draws, tuner, worst))
}

/// Fits the outcome model against a mediator posterior, seeding from the
/// outcome substream of `seed.chain`.
pub fn run_outcome_chain(
    d: &LongitudinalDataset,
    mediator: &MediatorPosterior,
    basis: &SplineBasis,
    config: &OutcomeConfig,
) -> Result<OutcomePosterior> {
    d.require_both_arms()?;
    if mediator.is_empty() {
        return Err(Error::Config("mediator posterior has no draws".into()));
    }
    if mediator.draws[0].scores.nrows() != d.len() {
        return Err(Error::Provenance(format!(
            "mediator posterior covers {} subjects but the dataset has {}",
            mediator.draws[0].scores.nrows(),
            d.len()
        )));
    }
    let data = FpcaData::from_dataset(d, basis, Process::Outcome);
    let imputer = Imputer::new(&data, &mediator.basis);
    let mut rng: SamplerRng = outcome_chain_stream(config.chain.seed, config.chain.chain);
    let (draws, tuner, worst) = run_outcome_chain_with(&data, basis, &imputer, &mediator.draws, config, &mut rng)?;
    let fev = draws.iter().map(|s| s.fpca.explained_variance()).collect();
    let acceptance = tuner.acceptance_rates();
    log::info!("outcome chain {} done; MH acceptance {:?}", config.chain.chain, acceptance);
    Ok(OutcomePosterior {
        draws,
        basis: basis.clone(),
        config: config.clone(),
        covariate_names: d.covariate_names().to_vec(),
        time_scale: d.time_scale(),
        mediator_fingerprint: mediator.fingerprint(),
        fev,
        acceptance,
        max_orthonormality_error: worst,
    })
}

pub fn run_outcome_chains(
    d: &LongitudinalDataset,
    mediator: &MediatorPosterior,
    basis: &SplineBasis,
    config: &OutcomeConfig,
    n_chains: usize,
) -> Result<Vec<OutcomePosterior>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut cfg = config.clone();
            cfg.chain.chain += c;
            run_outcome_chain(d, mediator, basis, &cfg)
        })
        .collect()
}

pub fn merge(chains: Vec<OutcomePosterior>) -> OutcomePosterior {
    let mut iter = chains.into_iter();
    let mut first = iter.next().expect("at least one chain");
    let mut n = 1.0;
    for c in iter {
        first.draws.extend(c.draws);
        first.fev.extend(c.fev);
        for k in 0..4 {
            first.acceptance[k] += c.acceptance[k];
        }
        first.max_orthonormality_error = first.max_orthonormality_error.max(c.max_orthonormality_error);
        n += 1.0;
    }
    first.acceptance = first.acceptance.map(|a| a / n);
    first
}
