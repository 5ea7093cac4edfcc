//! Frozen-parameter checks: every conjugate update, repeated 10,000 times
//! from the same state, matches the moments of its full conditional. The
//! reference moments are computed in covariance form from the raw
//! observations, independently of the samplers' precision-form algebra.

use super::{check_moments, gaussian_posterior, proper_priors, scrambled_state, small_problem, Problem};
use fpca_mediation::fpca::{FpcaState, Model};
use fpca_mediation::outcome::sample_gamma;
use fpca_mediation::rng::substream;
use nalgebra::{DMatrix, DVector};

pub const DRAWS: usize = 10_000;

/// Eigenfunction `r` evaluated at subject `i`'s observation times, from
/// the basis directly.
fn eigen_at(p: &Problem, s: &FpcaState, i: usize, r: usize) -> DVector<f64> {
    let times = &p.data.blocks[i].times;
    DVector::from_iterator(times.len(), times.iter().map(|&t| p.basis.evaluate(&s.phi[r], t)))
}

fn fixed_effect(p: &Problem, s: &FpcaState, i: usize) -> DVector<f64> {
    let subj = &p.dataset.subjects()[i];
    let times = &p.data.blocks[i].times;
    DVector::from_iterator(
        times.len(),
        times.iter().map(|&t| subj.covariates_at(t).iter().zip(s.beta.iter()).map(|(x, b)| x * b).sum::<f64>()),
    )
}

pub fn scores() -> Result<(), String> {
    let p = small_problem(40, 11);
    let priors = proper_priors();
    let state = scrambled_state(&p, &priors, 2, 1);
    let model = Model::new(&p.data, &p.basis, &priors);
    let targets = p.data.responses();
    let mut rng = substream(101, 0);

    let subjects = [0usize, 7, 23];
    let mut draws = vec![Vec::with_capacity(DRAWS); subjects.len()];
    for _ in 0..DRAWS {
        let mut s = state.clone();
        model.sample_scores(&mut s, &targets, &mut rng);
        for (k, &i) in subjects.iter().enumerate() {
            draws[k].push(s.scores[(i, 0)]);
        }
    }

    let lambda = state.score_variances()[0];
    for (k, &i) in subjects.iter().enumerate() {
        let psi0 = eigen_at(&p, &state, i, 0);
        let psi1 = eigen_at(&p, &state, i, 1);
        let prior_mean = state.group_mean(0, p.data.treated[i]);
        let prior_var = lambda / state.local_scales[(i, 0)];
        let y = &targets[i] - fixed_effect(&p, &state, i) - &psi1 * state.scores[(i, 1)] - &psi0 * prior_mean;
        let a = DMatrix::from_column_slice(psi0.len(), 1, psi0.as_slice());
        let noise = DMatrix::identity(psi0.len(), psi0.len()) * state.noise_var;
        let (m, c) = gaussian_posterior(&a, &y, &noise, &DMatrix::from_element(1, 1, prior_var));
        check_moments(&format!("score {i}"), &draws[k], prior_mean + m[0], c[(0, 0)])?;
    }
    Ok(())
}

pub fn group_means() -> Result<(), String> {
    let p = small_problem(40, 12);
    let priors = proper_priors();
    let state = scrambled_state(&p, &priors, 2, 2);
    let model = Model::new(&p.data, &p.basis, &priors);
    let mut rng = substream(102, 0);

    let mut draws = vec![Vec::with_capacity(DRAWS); 4];
    for _ in 0..DRAWS {
        let mut s = state.clone();
        model.sample_group_means(&mut s, &mut rng);
        draws[0].push(s.mean_control[0]);
        draws[1].push(s.mean_treated[0]);
        draws[2].push(s.mean_control[1]);
        draws[3].push(s.mean_treated[1]);
    }

    let lambda = state.score_variances();
    let prior = state.mean_prior_variances();
    for (k, (r, treated)) in [(0, false), (0, true), (1, false), (1, true)].into_iter().enumerate() {
        let members: Vec<usize> = (0..p.data.n_subjects()).filter(|&i| p.data.treated[i] == treated).collect();
        let y = DVector::from_iterator(members.len(), members.iter().map(|&i| state.scores[(i, r)]));
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            members.len(),
            members.iter().map(|&i| lambda[r] / state.local_scales[(i, r)]),
        ));
        let a = DMatrix::from_element(members.len(), 1, 1.0);
        let (m, c) = gaussian_posterior(&a, &y, &d, &DMatrix::from_element(1, 1, prior[r]));
        check_moments(&format!("group mean r={r} treated={treated}"), &draws[k], m[0], c[(0, 0)])?;
    }
    Ok(())
}

pub fn coefficients() -> Result<(), String> {
    let p = small_problem(30, 13);
    let priors = proper_priors();
    let state = scrambled_state(&p, &priors, 2, 3);
    let model = Model::new(&p.data, &p.basis, &priors);
    let targets = p.data.responses();
    let mut rng = substream(103, 0);

    let dim = p.data.covariate_dim();
    let mut draws = vec![Vec::with_capacity(DRAWS); dim];
    for _ in 0..DRAWS {
        let mut s = state.clone();
        model.sample_beta(&mut s, &targets, &mut rng).unwrap();
        for j in 0..dim {
            draws[j].push(s.beta[j]);
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for (i, subj) in p.dataset.subjects().iter().enumerate() {
        let curve = eigen_at(&p, &state, i, 0) * state.scores[(i, 0)] + eigen_at(&p, &state, i, 1) * state.scores[(i, 1)];
        for (j, &t) in p.data.blocks[i].times.iter().enumerate() {
            rows.push(subj.covariates_at(t).to_vec());
            y.push(targets[i][j] - curve[j]);
        }
    }
    let n = y.len();
    let a = DMatrix::from_fn(n, dim, |r, c| rows[r][c]);
    let noise = DMatrix::identity(n, n) * state.noise_var;
    let prior = DMatrix::identity(dim, dim) * priors.beta_var;
    let (m, c) = gaussian_posterior(&a, &DVector::from_vec(y), &noise, &prior);
    for j in 0..dim {
        check_moments(&format!("beta {j}"), &draws[j], m[j], c[(j, j)])?;
    }
    Ok(())
}

pub fn noise() -> Result<(), String> {
    let p = small_problem(40, 14);
    let priors = proper_priors();
    let state = scrambled_state(&p, &priors, 2, 4);
    let model = Model::new(&p.data, &p.basis, &priors);
    let targets = p.data.responses();
    let mut rng = substream(104, 0);

    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            let mut s = state.clone();
            model.sample_noise(&mut s, &targets, &mut rng);
            1.0 / s.noise_var
        })
        .collect();

    let mut ssr = 0.0;
    let mut n_obs = 0.0;
    for i in 0..p.data.n_subjects() {
        let fit = fixed_effect(&p, &state, i)
            + eigen_at(&p, &state, i, 0) * state.scores[(i, 0)]
            + eigen_at(&p, &state, i, 1) * state.scores[(i, 1)];
        ssr += (&targets[i] - fit).norm_squared();
        n_obs += targets[i].len() as f64;
    }
    let shape = priors.noise_shape + n_obs / 2.0;
    let rate = priors.noise_rate + ssr / 2.0;
    check_moments("noise precision", &draws, shape / rate, shape / (rate * rate))?;
    Ok(())
}

pub fn mediator_coefficient() -> Result<(), String> {
    let p = small_problem(30, 15);
    let mut rng = substream(105, 0);
    use rand::Rng;
    let imputed: Vec<DVector<f64>> =
        p.data.blocks.iter().map(|b| DVector::from_fn(b.times.len(), |_, _| rng.random_range(-2.0..2.0))).collect();
    let residuals: Vec<DVector<f64>> =
        imputed.iter().map(|m| m * 0.7 + DVector::from_fn(m.len(), |_, _| rng.random_range(-1.0..1.0))).collect();
    let (noise_var, prior_var) = (0.4, 3.0);

    let draws: Vec<f64> = (0..DRAWS).map(|_| sample_gamma(&imputed, &residuals, noise_var, prior_var, &mut rng)).collect();

    let m: Vec<f64> = imputed.iter().flat_map(|v| v.iter().copied()).collect();
    let e: Vec<f64> = residuals.iter().flat_map(|v| v.iter().copied()).collect();
    let n = m.len();
    let a = DMatrix::from_column_slice(n, 1, &m);
    let (mean, cov) = gaussian_posterior(
        &a,
        &DVector::from_vec(e),
        &(DMatrix::identity(n, n) * noise_var),
        &DMatrix::from_element(1, 1, prior_var),
    );
    check_moments("gamma", &draws, mean[0], cov[(0, 0)])?;
    Ok(())
}

/// Every conjugate check, labelled.
pub fn all() -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("scores", scores()),
        ("group means", group_means()),
        ("coefficients", coefficients()),
        ("noise precision", noise()),
        ("mediator coefficient", mediator_coefficient()),
    ]
}
