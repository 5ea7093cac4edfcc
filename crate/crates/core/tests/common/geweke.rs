//! Joint-distribution test of the sampler on a five-subject, one-component
//! model with the eigenfunction held fixed. Draws from the prior followed
//! by data ("marginal-conditional") must match the output of alternating
//! Gibbs sweeps and fresh data ("successive-conditional").

use fpca_mediation::fpca::{FpcaData, Hyper, MhTuner, Model, SubjectBlock};
use fpca_mediation::linalg::gamma_rate;
use fpca_mediation::rng::substream;
use fpca_mediation::{FpcaState, PenaltyFlavor, Priors, SplineBasis};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub const SAMPLES: usize = 4000;
pub const THIN: usize = 100;

struct Setup {
    basis: SplineBasis,
    data: FpcaData,
    priors: Priors,
    phi: DVector<f64>,
}

fn setup() -> Setup {
    let basis = SplineBasis::new(vec![0.3, 0.7], 50, PenaltyFlavor::Quadratic).unwrap();
    let times = [
        vec![0.05, 0.4, 0.8],
        vec![0.1, 0.5, 0.6, 0.95],
        vec![0.2, 0.7],
        vec![0.0, 0.3, 0.55, 0.9],
        vec![0.15, 0.45, 1.0],
    ];
    let blocks = times
        .iter()
        .map(|t| {
            let b = basis.matrix(t);
            SubjectBlock {
                times: t.clone(),
                gram: b.transpose() * &b,
                basis: b,
                covariates: DMatrix::zeros(t.len(), 0),
                response: DVector::zeros(t.len()),
            }
        })
        .collect();
    let data = FpcaData::new(blocks, vec![false, true, false, true, true], vec![]);
    // Concentrated hyperpriors keep the group means away from the extreme
    // tails the successive-conditional chain only leaves very slowly.
    let hyper = (10.0, 5.0);
    let priors = Priors {
        noise_shape: 2.0,
        noise_rate: 1.0,
        a1: hyper,
        a2: hyper,
        a_tau1: hyper,
        a_tau2: hyper,
        mh_step: 0.5,
        adapt: false,
        ..Priors::default()
    };
    let mut phi = DVector::from_vec(vec![0.5, 1.0, 0.8, -0.6]);
    phi /= basis.norm(&phi);
    Setup { basis, data, priors, phi }
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Parameters drawn from the prior.
fn prior_draw<R: Rng>(s: &Setup, rng: &mut R) -> FpcaState {
    let p = &s.priors;
    let hyper = Hyper {
        a1: gamma_rate(p.a1.0, p.a1.1, rng),
        a2: gamma_rate(p.a2.0, p.a2.1, rng),
        a_tau1: gamma_rate(p.a_tau1.0, p.a_tau1.1, rng),
        a_tau2: gamma_rate(p.a_tau2.0, p.a_tau2.1, rng),
    };
    let score_inc = gamma_rate(hyper.a1, 1.0, rng);
    let mean_inc = gamma_rate(hyper.a_tau1, 1.0, rng);
    let mean_sd = (1.0 / mean_inc).sqrt();
    let mean_control = mean_sd * normal(rng);
    let mean_treated = mean_sd * normal(rng);
    let n = s.data.n_subjects();
    let mut scores = DMatrix::zeros(n, 1);
    let mut local = DMatrix::zeros(n, 1);
    for i in 0..n {
        let xi = gamma_rate(p.t_dof / 2.0, p.t_dof / 2.0, rng);
        let mu = if s.data.treated[i] { mean_treated } else { mean_control };
        local[(i, 0)] = xi;
        scores[(i, 0)] = mu + (1.0 / (score_inc * xi)).sqrt() * normal(rng);
    }
    FpcaState {
        phi: vec![s.phi.clone()],
        smoothness: vec![1.0],
        scores,
        mean_control: DVector::from_element(1, mean_control),
        mean_treated: DVector::from_element(1, mean_treated),
        beta: DVector::zeros(0),
        noise_var: 1.0 / gamma_rate(p.noise_shape, p.noise_rate, rng),
        score_increments: vec![score_inc],
        mean_increments: vec![mean_inc],
        local_scales: local,
        hyper,
    }
}

fn data_draw<R: Rng>(s: &Setup, state: &FpcaState, rng: &mut R) -> Vec<DVector<f64>> {
    let sd = state.noise_var.sqrt();
    s.data
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| state.subject_curve(i, &b.basis).map(|m| m + sd * normal(rng)))
        .collect()
}

/// Two-sample Kolmogorov–Smirnov p-value (asymptotic distribution).
pub fn ks_p_value(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let q: f64 = (1..=100).map(|k| {
        let k = k as f64;
        2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
    }).sum();
    q.clamp(0.0, 1.0)
}

/// KS p-values for the treated group mean and the noise variance.
pub fn p_values() -> (f64, f64) {
    let s = setup();
    let model = Model::new(&s.data, &s.basis, &s.priors);

    let mut rng = substream(2024, 0);
    let mut marginal_mean = Vec::with_capacity(SAMPLES);
    let mut marginal_noise = Vec::with_capacity(SAMPLES);
    for _ in 0..SAMPLES {
        let st = prior_draw(&s, &mut rng);
        marginal_mean.push(st.mean_treated[0]);
        marginal_noise.push(st.noise_var);
    }

    let mut rng = substream(2024, 1);
    let mut state = prior_draw(&s, &mut rng);
    let mut targets = data_draw(&s, &state, &mut rng);
    let mut tuner = MhTuner::new(s.priors.mh_step);
    let mut chain_mean = Vec::with_capacity(SAMPLES);
    let mut chain_noise = Vec::with_capacity(SAMPLES);
    for it in 0..SAMPLES * THIN {
        model.sample_scores(&mut state, &targets, &mut rng);
        model.sample_group_means(&mut state, &mut rng);
        model.sample_variances(&mut state, &targets, &mut tuner, false, &mut rng);
        targets = data_draw(&s, &state, &mut rng);
        if it % THIN == THIN - 1 {
            chain_mean.push(state.mean_treated[0]);
            chain_noise.push(state.noise_var);
        }
    }

    let p_mean = ks_p_value(&marginal_mean, &chain_mean);
    let p_noise = ks_p_value(&marginal_noise, &chain_noise);
    (p_mean, p_noise)
}

