//! Mediator FPCA chain and its posterior container.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::basis::SplineBasis;
use crate::data::{LongitudinalDataset, Subject};
use crate::error::Result;
use crate::fpca::{run_fixed_targets, ChainConfig, FpcaData, FpcaState, Model, MhTuner, Process};
use crate::rng::{chain_stream, SamplerRng};

/// Parameter state of the mediator model.
pub type MediatorState = FpcaState;

#[derive(Clone, Debug)]
pub struct MediatorPosterior {
    pub draws: Vec<MediatorState>,
    pub basis: SplineBasis,
    pub config: ChainConfig,
    pub covariate_names: Vec<String>,
    pub time_scale: f64,
    /// Explained-variance fractions per draw, sorted in decreasing order.
    pub fev: Vec<Vec<f64>>,
    /// Post burn-in MH acceptance rates for `(a₁, a₂, a_τ1, a_τ2)`.
    pub acceptance: [f64; 4],
    /// Worst eigenfunction orthonormality error over all sweeps.
    pub max_orthonormality_error: f64,
}

impl MediatorPosterior {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Posterior-mean cumulative FEV of all retained components.
    pub fn mean_cumulative_fev(&self) -> Vec<f64> {
        let r = self.config.components;
        let mut out = vec![0.0; r];
        for f in &self.fev {
            let mut acc = 0.0;
            for (k, v) in f.iter().enumerate() {
                acc += v;
                out[k] += acc;
            }
        }
        out.iter().map(|v| v / self.fev.len().max(1) as f64).collect()
    }

    /// Fingerprint of the serialized draws, used to pair outcome fits with
    /// the mediator fit they consumed.
    pub fn fingerprint(&self) -> String {
        crate::posterior_io::fingerprint_mediator(self)
    }
}

/// Latent (noise-free) mediator process `X(t)'β + Σ_r ζ_ir ψ_r(t)` of
/// subject `index` at the requested times.
pub fn impute_process(
    draw: &MediatorState,
    basis: &SplineBasis,
    index: usize,
    subject: &Subject,
    times: &[f64],
) -> Vec<f64> {
    let b = basis.matrix(times);
    let curve = draw.subject_curve(index, &b);
    times
        .iter()
        .zip(curve.iter())
        .map(|(&t, c)| {
            let x = subject.covariates_at(t);
            let fixed: f64 = x.iter().zip(draw.beta.iter()).map(|(a, b)| a * b).sum();
            fixed + c
        })
        .collect()
}

/// Runs one chain on the given design with a caller-supplied RNG.
pub fn run_chain_with<R: Rng + ?Sized>(
    data: &FpcaData,
    basis: &SplineBasis,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<(Vec<MediatorState>, MhTuner, f64)> {
    config.validate()?;
    let model = Model::new(data, basis, &config.priors);
    let targets: Vec<DVector<f64>> = data.responses();
    let init = model.init_state(config.components, &targets, rng)?;
    let run = run_fixed_targets(&model, init, &targets, config, rng)?;
    Ok((run.draws, run.tuner, run.max_orthonormality_error))
}

/// Fits the mediator model, seeding from substream `seed.chain`.
pub fn run_chain(d: &LongitudinalDataset, basis: &SplineBasis, config: &ChainConfig) -> Result<MediatorPosterior> {
    d.require_both_arms()?;
    config.validate()?;
    let data = FpcaData::from_dataset(d, basis, Process::Mediator);
    let mut rng: SamplerRng = chain_stream(config.seed, config.chain);
    let (draws, tuner, worst) = run_chain_with(&data, basis, config, &mut rng)?;
    let fev = draws.iter().map(|s| s.explained_variance()).collect();
    let acceptance = tuner.acceptance_rates();
    log::info!("mediator chain {} done; MH acceptance {:?}", config.chain, acceptance);
    Ok(MediatorPosterior {
        draws,
        basis: basis.clone(),
        config: config.clone(),
        covariate_names: d.covariate_names().to_vec(),
        time_scale: d.time_scale(),
        fev,
        acceptance,
        max_orthonormality_error: worst,
    })
}

/// Runs `n_chains` chains on substreams `seed.chain .. seed.chain+n-1`.
pub fn run_chains(
    d: &LongitudinalDataset,
    basis: &SplineBasis,
    config: &ChainConfig,
    n_chains: usize,
) -> Result<Vec<MediatorPosterior>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| run_chain(d, basis, &ChainConfig { chain: config.chain + c, ..config.clone() }))
        .collect()
}

/// Concatenates the draws of several chains fitted with the same basis.
pub fn merge(chains: Vec<MediatorPosterior>) -> MediatorPosterior {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisConfig;
    use crate::data::{CovariateRow, Observation};

    fn subject(id: &str, treated: bool, offset: f64) -> Subject {
        let times = [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95];
        let m = times.iter().map(|&t| Observation { time: t, value: offset + t }).collect();
        Subject::new(
            id,
            treated,
            vec![CovariateRow { time: 0.0, values: vec![offset * 0.5] }],
            m,
            vec![Observation { time: 0.5, value: 0.0 }],
        )
        .unwrap()
    }

    #[test]
    fn impute_with_zero_scores_is_covariate_mean() {
        let s = subject("a", false, 2.0);
        let basis = SplineBasis::new(vec![0.3, 0.6], 50, Default::default()).unwrap();
        let d = LongitudinalDataset::new(vec![s.clone()], vec!["x".into()], 1.0).unwrap();
        let data = FpcaData::from_dataset(&d, &basis, Process::Mediator);
        let priors = Default::default();
        let model = Model::new(&data, &basis, &priors);
        let mut state = model.init_state(1, &data.responses(), &mut chain_stream(1, 0)).unwrap();
        state.scores.fill(0.0);
        state.beta = DVector::from_vec(vec![3.0]);
        let v = impute_process(&state, &basis, 0, &s, &[0.1, 0.7]);
        assert_eq!(v, vec![3.0, 3.0]);
    }

    #[test]
    fn two_iterations_keep_one_draw() {
        let subjects: Vec<Subject> =
            (0..6).map(|i| subject(&format!("s{i}"), i % 2 == 0, i as f64 * 0.3)).collect();
        let d = LongitudinalDataset::new(subjects, vec!["x".into()], 1.0).unwrap();
        let basis = SplineBasis::from_times(&d.mediator_times(), &BasisConfig { n_knots: 3, ..Default::default() }).unwrap();
        let cfg = ChainConfig { components: 2, iterations: 2, burn_in: 1, thin: 1, ..Default::default() };
        let post = run_chain(&d, &basis, &cfg).unwrap();
        assert_eq!(post.len(), 1);
        assert_eq!(post.fev[0].len(), 2);
        let again = run_chain(&d, &basis, &cfg).unwrap();
        assert_eq!(post.draws, again.draws);
    }
}
