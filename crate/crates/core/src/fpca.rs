//! Gibbs sampler for a Bayesian functional principal component model on
//! sparse, irregular observations:
//!
//! ```text
//! y_ij = x_ij' β + Σ_r ζ_ir ψ_r(t_ij) + ε_ij,        ε_ij ~ N(0, σ²)
//! ψ_r(t) = b(t)' φ_r,                                 ⟨ψ_r, ψ_s⟩ = 1{r = s}
//! ζ_ir = τ_{0r} (1 − Z_i) + τ_{1r} Z_i + ω_ir,        ω_ir ~ N(0, λ_r² / ξ_ir)
//! ```
//!
//! with multiplicative gamma shrinkage on `λ_r²` and on the prior variance
//! of the group means `τ_{zr}`, Student-t local scales `ξ_ir`, and a
//! smoothness prior `φ_r ~ N(0, (h_r Ω)⁻¹)` on the eigenfunctions.
//!
//! One sweep runs, in order: eigenfunctions (with grid-orthogonality
//! constraints), scores, group means, regression coefficients, and the
//! variance ladder. The same machinery drives the mediator model and, with
//! an offset for the imputed mediator, the outcome model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::SplineBasis;
use crate::data::{LongitudinalDataset, Subject};
use crate::error::{Error, Result};
use crate::linalg;

/// Smallest variance allowed anywhere in the state.
const VAR_FLOOR: f64 = 1e-10;
const VAR_CEIL: f64 = 1e10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Prior variance of each regression coefficient.
    pub beta_var: f64,
    /// Gamma(shape, rate) prior on the noise precision. `(0, 0)` is the
    /// scale-invariant prior.
    pub noise_shape: f64,
    pub noise_rate: f64,
    /// Degrees of freedom of the score t-mixture; `inf` gives Gaussian scores.
    #[serde(with = "dof_serde")]
    pub t_dof: f64,
    /// Gamma(shape, rate) priors for the shrinkage hyperparameters.
    pub a1: (f64, f64),
    pub a2: (f64, f64),
    pub a_tau1: (f64, f64),
    pub a_tau2: (f64, f64),
    /// Upper truncation of the smoothness precision `h_r`.
    pub smoothness_upper: f64,
    /// Initial log-scale random-walk sd for the hyperparameter updates.
    pub mh_step: f64,
    /// Adapt the random-walk sd during burn-in.
    pub adapt: bool,
}

/// JSON has no infinity; write it as the string `"inf"`.
mod dof_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Dof {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Dof::deserialize(d)? {
            Dof::Num(v) => Ok(v),
            Dof::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            Dof::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            beta_var: 100.0 * 100.0,
            noise_shape: 0.0,
            noise_rate: 0.0,
            t_dof: 5.0,
            a1: (2.0, 1.0),
            a2: (3.0, 1.0),
            a_tau1: (2.0, 1.0),
            a_tau2: (3.0, 1.0),
            smoothness_upper: 1e4,
            mh_step: 0.2,
            adapt: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Number of retained components `R`.
    pub components: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Chain index; selects the RNG substream `seed.chain`.
    pub chain: u64,
    pub priors: Priors,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { components: 5, iterations: 4000, burn_in: 2000, thin: 2, seed: 0, chain: 0, priors: Priors::default() }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("at least one component required".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.priors.t_dof > 0.0) {
            return Err(Error::Config("t degrees of freedom must be positive".into()));
        }
        Ok(())
    }

    /// Number of draws retained by a chain with this configuration.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub(crate) fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration + 1 - self.burn_in) % self.thin == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub a1: f64,
    pub a2: f64,
    pub a_tau1: f64,
    pub a_tau2: f64,
}

impl Hyper {
    fn get(&self, k: usize) -> f64 {
        [self.a1, self.a2, self.a_tau1, self.a_tau2][k]
    }

    fn set(&mut self, k: usize, v: f64) {
        match k {
            0 => self.a1 = v,
            1 => self.a2 = v,
            2 => self.a_tau1 = v,
            _ => self.a_tau2 = v,
        }
    }
}

/// Full parameter state of one FPCA block.
#[derive(Clone, Debug, PartialEq)]
pub struct FpcaState {
    /// Basis coefficients `φ_r` of the eigenfunctions.
    pub phi: Vec<DVector<f64>>,
    /// Smoothness precisions `h_r`.
    pub smoothness: Vec<f64>,
    /// Principal scores, `N × R`.
    pub scores: DMatrix<f64>,
    /// Group means `τ_{0r}` (control) and `τ_{1r}` (treated).
    pub mean_control: DVector<f64>,
    pub mean_treated: DVector<f64>,
    pub beta: DVector<f64>,
    pub noise_var: f64,
    /// Multiplicative gamma increments `δ_r` with `λ_r⁻² = Π_{l≤r} δ_l`.
    pub score_increments: Vec<f64>,
    /// Increments `δ_{τ r}` with `σ_{τ r}⁻² = Π_{l≤r} δ_{τ l}`.
    pub mean_increments: Vec<f64>,
    /// Local scales `ξ_ir`, `N × R`.
    pub local_scales: DMatrix<f64>,
    pub hyper: Hyper,
}

fn cumulative_inverse(increments: &[f64]) -> Vec<f64> {
    let mut prod = 1.0;
    increments
        .iter()
        .map(|d| {
            prod *= d;
            (1.0 / prod).clamp(VAR_FLOOR, VAR_CEIL)
        })
        .collect()
}

fn increments_from_variances(vars: &[f64]) -> Vec<f64> {
    let mut prev = 1.0;
    vars.iter()
        .map(|&v| {
            let d = prev / v;
            prev = v;
            d
        })
        .collect()
}

impl FpcaState {
    pub fn components(&self) -> usize {
        self.phi.len()
    }

    /// Score variances `λ_r²`.
    pub fn score_variances(&self) -> Vec<f64> {
        cumulative_inverse(&self.score_increments)
    }

    /// Prior variances `σ_{τ r}²` of the group means.
    pub fn mean_prior_variances(&self) -> Vec<f64> {
        cumulative_inverse(&self.mean_increments)
    }

    pub fn group_mean(&self, r: usize, treated: bool) -> f64 {
        if treated {
            self.mean_treated[r]
        } else {
            self.mean_control[r]
        }
    }

    /// `τ_{1r} − τ_{0r}` for every component.
    pub fn mean_differences(&self) -> DVector<f64> {
        &self.mean_treated - &self.mean_control
    }

    /// Fraction of score variance per component, sorted in decreasing order.
    pub fn explained_variance(&self) -> Vec<f64> {
        let mut lambda = self.score_variances();
        let total: f64 = lambda.iter().sum();
        lambda.sort_by(|a, b| b.total_cmp(a));
        lambda.iter().map(|l| l / total).collect()
    }

    /// `Σ_r ζ_ir ψ_r(t)` on the given basis matrix rows.
    pub fn subject_curve(&self, i: usize, basis_rows: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(basis_rows.nrows());
        for (r, phi) in self.phi.iter().enumerate() {
            out += basis_rows * phi * self.scores[(i, r)];
        }
        out
    }

    /// Largest deviation of the eigenfunction Gram matrix from the identity.
    pub fn orthonormality_error(&self, basis: &SplineBasis) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.components() {
            for s in r..self.components() {
                let ip = basis.inner_product(&self.phi[r], &self.phi[s]);
                let target = if r == s { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    /// Flips `(φ_r, ζ_{·r}, τ_{·r})` jointly.
    pub fn flip_component(&mut self, r: usize) {
        self.phi[r].neg_mut();
        self.scores.column_mut(r).neg_mut();
        self.mean_control[r] = -self.mean_control[r];
        self.mean_treated[r] = -self.mean_treated[r];
    }

    /// Enforces a non-negative grid mean for every eigenfunction.
    pub fn apply_sign_convention(&mut self, basis: &SplineBasis) {
        for r in 0..self.components() {
            if basis.grid_mean_functional().dot(&self.phi[r]) < 0.0 {
                self.flip_component(r);
            }
        }
    }

    /// Rescales `φ_r` to unit grid norm and multiplies the scores of
    /// component `r` by the old norm, leaving every fitted value unchanged.
    /// Returns the old norm.
    pub fn normalize_component(&mut self, basis: &SplineBasis, r: usize) -> f64 {
        let norm = basis.norm(&self.phi[r]);
        self.phi[r] /= norm;
        self.scores.column_mut(r).scale_mut(norm);
        norm
    }

    fn check_finite(&self) -> bool {
        self.noise_var.is_finite()
            && self.scores.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
            && self.phi.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.mean_control.iter().chain(self.mean_treated.iter()).all(|v| v.is_finite())
    }
}

/// Observations of one subject prepared for sampling.
#[derive(Clone, Debug)]
pub struct SubjectBlock {
    pub times: Vec<f64>,
    /// `B_i`, `n_i × (L+2)`.
    pub basis: DMatrix<f64>,
    /// `B_i' B_i`.
    pub gram: DMatrix<f64>,
    /// `X_i`, `n_i × p`.
    pub covariates: DMatrix<f64>,
    pub response: DVector<f64>,
}

/// Design of one FPCA block: per-subject basis and covariate matrices.
#[derive(Clone, Debug)]
pub struct FpcaData {
    pub blocks: Vec<SubjectBlock>,
    pub treated: Vec<bool>,
    pub covariate_names: Vec<String>,
    xtx: DMatrix<f64>,
    n_obs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Process {
    Mediator,
    Outcome,
}

impl FpcaData {
    pub fn new(
        blocks: Vec<SubjectBlock>,
        treated: Vec<bool>,
        covariate_names: Vec<String>,
    ) -> Self {
        let p = covariate_names.len();
        let mut xtx = DMatrix::zeros(p, p);
        let mut n_obs = 0;
        for b in &blocks {
            xtx += b.covariates.transpose() * &b.covariates;
            n_obs += b.response.len();
        }
        Self { blocks, treated, covariate_names, xtx, n_obs }
    }

    pub fn block(basis: &SplineBasis, subject: &Subject, process: Process) -> SubjectBlock {
        let obs = match process {
            Process::Mediator => &subject.mediator,
            Process::Outcome => &subject.outcome,
        };
        let times: Vec<f64> = obs.iter().map(|o| o.time).collect();
        let b = basis.matrix(&times);
        let p = subject.covariate_rows[0].values.len();
        let mut x = DMatrix::zeros(times.len(), p);
        for (j, &t) in times.iter().enumerate() {
            for (k, v) in subject.covariates_at(t).iter().enumerate() {
                x[(j, k)] = *v;
            }
        }
        SubjectBlock {
            gram: b.transpose() * &b,
            basis: b,
            covariates: x,
            response: DVector::from_iterator(times.len(), obs.iter().map(|o| o.value)),
            times,
        }
    }

    pub fn from_dataset(d: &LongitudinalDataset, basis: &SplineBasis, process: Process) -> Self {
        let blocks = d.subjects().iter().map(|s| Self::block(basis, s, process)).collect();
        let treated = d.subjects().iter().map(|s| s.treated).collect();
        Self::new(blocks, treated, d.covariate_names().to_vec())
    }

    pub fn n_subjects(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn responses(&self) -> Vec<DVector<f64>> {
        self.blocks.iter().map(|b| b.response.clone()).collect()
    }
}

/// Random-walk Metropolis–Hastings bookkeeping for `(a₁, a₂, a_τ1, a_τ2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhTuner {
    pub log_sd: [f64; 4],
    window_accepted: [u32; 4],
    window_len: u32,
    pub accepted: [u64; 4],
    pub proposed: u64,
}

const ADAPT_WINDOW: u32 = 50;

impl MhTuner {
    pub fn new(step: f64) -> Self {
        Self { log_sd: [step; 4], window_accepted: [0; 4], window_len: 0, accepted: [0; 4], proposed: 0 }
    }

    pub fn acceptance_rates(&self) -> [f64; 4] {
        let n = self.proposed.max(1) as f64;
        self.accepted.map(|a| a as f64 / n)
    }

    /// Clears the running totals, typically at the end of burn-in.
    pub fn reset_counts(&mut self) {
        self.accepted = [0; 4];
        self.proposed = 0;
    }

    fn record(&mut self, k: usize, accepted: bool) {
        if accepted {
            self.accepted[k] += 1;
            self.window_accepted[k] += 1;
        }
    }

    fn end_sweep(&mut self, adapt: bool) {
        self.proposed += 1;
        self.window_len += 1;
        if self.window_len == ADAPT_WINDOW {
            if adapt {
                for k in 0..4 {
                    let rate = self.window_accepted[k] as f64 / ADAPT_WINDOW as f64;
                    if rate < 0.2 {
                        self.log_sd[k] *= 0.8;
                    } else if rate > 0.4 {
                        self.log_sd[k] *= 1.25;
                    }
                }
            }
            self.window_accepted = [0; 4];
            self.window_len = 0;
        }
    }
}

/// Read-only model context for one FPCA block.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub data: &'a FpcaData,
    pub basis: &'a SplineBasis,
    pub priors: &'a Priors,
}

impl<'a> Model<'a> {
    pub fn new(data: &'a FpcaData, basis: &'a SplineBasis, priors: &'a Priors) -> Self {
        Self { data, basis, priors }
    }

    fn n(&self) -> usize {
        self.data.n_subjects()
    }

    /// `y_i − X_i β` for subject `i`.
    fn covariate_residual(&self, state: &FpcaState, target: &DVector<f64>, i: usize) -> DVector<f64> {
        let block = &self.data.blocks[i];
        if block.covariates.ncols() == 0 {
            target.clone()
        } else {
            target - &block.covariates * &state.beta
        }
    }

    /// `y_i − X_i β − Σ_r ζ_ir ψ_r(t_i)`.
    pub fn residual(&self, state: &FpcaState, target: &DVector<f64>, i: usize) -> DVector<f64> {
        self.covariate_residual(state, target, i) - state.subject_curve(i, &self.data.blocks[i].basis)
    }

    // ---- step 1: eigenfunctions -------------------------------------------

    /// Precision `Q` and linear term `l` of the unconstrained full
    /// conditional of `φ_r`.
    pub fn eigen_conditional(
        &self,
        state: &FpcaState,
        targets: &[DVector<f64>],
        r: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.basis.dim();
        let mut q = DMatrix::zeros(k, k);
        let mut l = DVector::zeros(k);
        for (i, block) in self.data.blocks.iter().enumerate() {
            let z = state.scores[(i, r)];
            if block.times.is_empty() {
                continue;
            }
            q += &block.gram * (z * z);
            let mut partial = self.covariate_residual(state, &targets[i], i);
            for s in (0..state.components()).filter(|&s| s != r) {
                partial -= &block.basis * &state.phi[s] * state.scores[(i, s)];
            }
            l += block.basis.transpose() * partial * z;
        }
        q /= state.noise_var;
        l /= state.noise_var;
        q += self.basis.penalty() * state.smoothness[r];
        (q, l)
    }

    pub fn sample_eigenfunction<R: Rng + ?Sized>(
        &self,
        state: &mut FpcaState,
        targets: &[DVector<f64>],
        r: usize,
        rng: &mut R,
    ) -> Result<()> {
        let (q, l) = self.eigen_conditional(state, targets, r);
        let chol = linalg::cholesky_jittered(&q, &format!("eigenfunction {r} precision"))?;
        let (_, mut draw) = linalg::sample_canonical(&chol, &l, rng);

        // condition on ⟨ψ_r, ψ_s⟩ = 0 for s ≠ r
        let others: Vec<usize> = (0..state.components()).filter(|&s| s != r).collect();
        if !others.is_empty() {
            let k = self.basis.dim();
            let mut c = DMatrix::zeros(others.len(), k);
            for (row, &s) in others.iter().enumerate() {
                c.row_mut(row).copy_from(&(self.basis.inner_gram() * &state.phi[s]).transpose());
            }
            let q_inv_ct = chol.solve(&c.transpose());
            let s_mat = &c * &q_inv_ct;
            let s_chol = linalg::cholesky_jittered(&s_mat, "eigenfunction constraint")?;
            let correction = &q_inv_ct * s_chol.solve(&(&c * &draw));
            draw -= correction;
        }
        if !(self.basis.norm(&draw) > 1e-12) {
            return Err(Error::Numerical(format!("eigenfunction {r} collapsed to zero norm")));
        }
        state.phi[r] = draw;
        state.normalize_component(self.basis, r);
        if self.basis.grid_mean_functional().dot(&state.phi[r]) < 0.0 {
            state.flip_component(r);
        }

        // smoothness precision, truncated to [λ_r², upper]
        let lambda = state.score_variances()[r];
        let upper = self.priors.smoothness_upper;
        let quad = (state.phi[r].transpose() * self.basis.penalty() * &state.phi[r])[(0, 0)].max(0.0);
        let shape = (self.basis.knots().len() as f64 + 1.0) / 2.0;
        state.smoothness[r] = if lambda >= upper {
            upper
        } else {
            linalg::truncated_gamma(shape, quad / 2.0, lambda, upper, rng)
        };
        Ok(())
    }

    // ---- step 2: scores ---------------------------------------------------

    /// Mean and variance of the full conditional of `ζ_ir`, given the
    /// partial residual `e` (all other components removed).
    pub fn score_conditional(&self, state: &FpcaState, i: usize, r: usize, partial: &DVector<f64>) -> (f64, f64) {
        let block = &self.data.blocks[i];
        let lambda = state.score_variances()[r];
        let xi = state.local_scales[(i, r)];
        let psi = &block.basis * &state.phi[r];
        let prec = psi.norm_squared() / state.noise_var + xi / lambda;
        let lin = partial.dot(&psi) / state.noise_var + state.group_mean(r, self.data.treated[i]) * xi / lambda;
        (lin / prec, 1.0 / prec)
    }

    pub fn sample_scores<R: Rng + ?Sized>(&self, state: &mut FpcaState, targets: &[DVector<f64>], rng: &mut R) {
        for i in 0..self.n() {
            let block = &self.data.blocks[i];
            let mut resid = self.residual(state, &targets[i], i);
            for r in 0..state.components() {
                let psi = &block.basis * &state.phi[r];
                let partial = &resid + &psi * state.scores[(i, r)];
                let (mean, var) = self.score_conditional(state, i, r, &partial);
                let z: f64 = StandardNormal.sample(rng);
                let new = mean + var.sqrt() * z;
                state.scores[(i, r)] = new;
                resid = partial - psi * new;
            }
        }
    }

    // ---- step 3: group means ----------------------------------------------

    pub fn group_mean_conditional(&self, state: &FpcaState, r: usize, treated: bool) -> (f64, f64) {
        let lambda = state.score_variances()[r];
        let prior_var = state.mean_prior_variances()[r];
        let mut prec = 1.0 / prior_var;
        let mut lin = 0.0;
        for i in (0..self.n()).filter(|&i| self.data.treated[i] == treated) {
            let xi = state.local_scales[(i, r)];
            prec += xi / lambda;
            lin += state.scores[(i, r)] * xi / lambda;
        }
        (lin / prec, 1.0 / prec)
    }

    pub fn sample_group_means<R: Rng + ?Sized>(&self, state: &mut FpcaState, rng: &mut R) {
        for r in 0..state.components() {
            for treated in [false, true] {
                let (mean, var) = self.group_mean_conditional(state, r, treated);
                let z: f64 = StandardNormal.sample(rng);
                let v = mean + var.sqrt() * z;
                if treated {
                    state.mean_treated[r] = v;
                } else {
                    state.mean_control[r] = v;
                }
            }
        }
    }

    // ---- step 4: regression coefficients ---------------------------------

    /// Precision and linear term of the full conditional of `β`.
    pub fn beta_conditional(&self, state: &FpcaState, targets: &[DVector<f64>]) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.data.covariate_dim();
        let mut lin = DVector::zeros(p);
        for (i, block) in self.data.blocks.iter().enumerate() {
            let r = &targets[i] - state.subject_curve(i, &block.basis);
            lin += block.covariates.transpose() * r;
        }
        let prec = &self.data.xtx / state.noise_var + DMatrix::identity(p, p) / self.priors.beta_var;
        (prec, lin / state.noise_var)
    }

    pub fn sample_beta<R: Rng + ?Sized>(
        &self,
        state: &mut FpcaState,
        targets: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<()> {
        if self.data.covariate_dim() == 0 {
            return Ok(());
        }
        let (prec, lin) = self.beta_conditional(state, targets);
        let chol = linalg::cholesky_jittered(&prec, "regression coefficient precision")?;
        state.beta = linalg::sample_canonical(&chol, &lin, rng).1;
        Ok(())
    }

    // ---- step 5: variances -------------------------------------------------

    /// Shape and rate of the full conditional of the noise precision.
    pub fn noise_conditional(&self, state: &FpcaState, targets: &[DVector<f64>]) -> (f64, f64) {
        let ssr: f64 = (0..self.n()).map(|i| self.residual(state, &targets[i], i).norm_squared()).sum();
        (self.priors.noise_shape + self.data.n_obs() as f64 / 2.0, self.priors.noise_rate + ssr / 2.0)
    }

    /// Shape and rate of the full conditional of `δ_{τ l}` (0-based `l`).
    pub fn mean_increment_conditional(&self, state: &FpcaState, l: usize) -> (f64, f64) {
        let big_r = state.components();
        let a = if l == 0 { state.hyper.a_tau1 } else { state.hyper.a_tau2 };
        let mut rate = 1.0;
        for r in l..big_r {
            let prod: f64 = (0..=r).filter(|&m| m != l).map(|m| state.mean_increments[m]).product();
            rate += 0.5 * prod * (state.mean_control[r].powi(2) + state.mean_treated[r].powi(2));
        }
        (a + (big_r - l) as f64, rate)
    }

    /// Shape and rate of the full conditional of `δ_l` (0-based `l`).
    pub fn score_increment_conditional(&self, state: &FpcaState, l: usize) -> (f64, f64) {
        let big_r = state.components();
        let n = self.n();
        let a = if l == 0 { state.hyper.a1 } else { state.hyper.a2 };
        let mut rate = 1.0;
        for r in l..big_r {
            let prod: f64 = (0..=r).filter(|&m| m != l).map(|m| state.score_increments[m]).product();
            let ss: f64 = (0..n)
                .map(|i| {
                    let w = state.scores[(i, r)] - state.group_mean(r, self.data.treated[i]);
                    state.local_scales[(i, r)] * w * w
                })
                .sum();
            rate += 0.5 * prod * ss;
        }
        (a + ((big_r - l) * n) as f64 / 2.0, rate)
    }

    /// Shape and rate of the full conditional of `ξ_ir`.
    pub fn local_scale_conditional(&self, state: &FpcaState, i: usize, r: usize) -> (f64, f64) {
        let v = self.priors.t_dof;
        let lambda = state.score_variances()[r];
        let w = state.scores[(i, r)] - state.group_mean(r, self.data.treated[i]);
        ((v + 1.0) / 2.0, (v + w * w / lambda) / 2.0)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, state: &mut FpcaState, targets: &[DVector<f64>], rng: &mut R) {
        let (shape, rate) = self.noise_conditional(state, targets);
        let precision = linalg::gamma_rate(shape, rate.max(1e-300), rng);
        state.noise_var = (1.0 / precision).clamp(VAR_FLOOR, VAR_CEIL);
    }

    pub fn sample_increments<R: Rng + ?Sized>(&self, state: &mut FpcaState, rng: &mut R) {
        for l in 0..state.components() {
            let (shape, rate) = self.mean_increment_conditional(state, l);
            state.mean_increments[l] = linalg::gamma_rate(shape, rate, rng).max(1e-300);
        }
        for l in 0..state.components() {
            let (shape, rate) = self.score_increment_conditional(state, l);
            state.score_increments[l] = linalg::gamma_rate(shape, rate, rng).max(1e-300);
        }
    }

    pub fn sample_local_scales<R: Rng + ?Sized>(&self, state: &mut FpcaState, rng: &mut R) {
        if self.priors.t_dof.is_infinite() {
            state.local_scales.fill(1.0);
            return;
        }
        for r in 0..state.components() {
            for i in 0..self.n() {
                let (shape, rate) = self.local_scale_conditional(state, i, r);
                state.local_scales[(i, r)] = linalg::gamma_rate(shape, rate, rng).max(1e-300);
            }
        }
    }

    /// Log full conditional (up to a constant) of hyperparameter `k` on the
    /// log scale, including the Jacobian of `a = exp(u)`.
    fn hyper_log_target(&self, state: &FpcaState, k: usize, a: f64) -> f64 {
        let (increments, first) = match k {
            0 => (&state.score_increments[..1], true),
            1 => (&state.score_increments[1..], false),
            2 => (&state.mean_increments[..1], true),
            _ => (&state.mean_increments[1..], false),
        };
        let _ = first;
        let (shape0, rate0) = [self.priors.a1, self.priors.a2, self.priors.a_tau1, self.priors.a_tau2][k];
        let lik: f64 = increments.iter().map(|d| (a - 1.0) * d.ln() - ln_gamma(a)).sum();
        lik + (shape0 - 1.0) * a.ln() - rate0 * a + a.ln()
    }

    pub fn sample_hyper<R: Rng + ?Sized>(&self, state: &mut FpcaState, tuner: &mut MhTuner, adapt: bool, rng: &mut R) {
        for k in 0..4 {
            let current = state.hyper.get(k);
            let z: f64 = StandardNormal.sample(rng);
            let proposal = current * (tuner.log_sd[k] * z).exp();
            let log_ratio = self.hyper_log_target(state, k, proposal) - self.hyper_log_target(state, k, current);
            let u: f64 = rng.random();
            let accept = if log_ratio.is_finite() {
                u.ln() < log_ratio
            } else {
                log::debug!("non-finite acceptance ratio for hyperparameter {k}; rejecting");
                false
            };
            if accept {
                state.hyper.set(k, proposal);
            }
            tuner.record(k, accept);
        }
        tuner.end_sweep(adapt);
    }

    pub fn sample_variances<R: Rng + ?Sized>(
        &self,
        state: &mut FpcaState,
        targets: &[DVector<f64>],
        tuner: &mut MhTuner,
        adapt: bool,
        rng: &mut R,
    ) {
        self.sample_noise(state, targets, rng);
        self.sample_increments(state, rng);
        self.sample_local_scales(state, rng);
        self.sample_hyper(state, tuner, adapt, rng);
    }

    /// One full Gibbs sweep.
    pub fn sweep<R: Rng + ?Sized>(
        &self,
        state: &mut FpcaState,
        targets: &[DVector<f64>],
        tuner: &mut MhTuner,
        adapt: bool,
        rng: &mut R,
    ) -> Result<()> {
        for r in 0..state.components() {
            self.sample_eigenfunction(state, targets, r, rng)?;
        }
        self.sample_scores(state, targets, rng);
        self.sample_group_means(state, rng);
        self.sample_beta(state, targets, rng)?;
        self.sample_variances(state, targets, tuner, adapt, rng);
        if !state.check_finite() {
            return Err(Error::Numerical("non-finite value in sampler state".into()));
        }
        Ok(())
    }

    // ---- initialization ---------------------------------------------------

    /// Pooled least squares of the targets on the covariates. Collinear
    /// columns are reported by name.
    pub fn least_squares_beta(&self, targets: &[DVector<f64>]) -> Result<DVector<f64>> {
        let p = self.data.covariate_dim();
        if p == 0 {
            return Ok(DVector::zeros(0));
        }
        let n = self.data.n_obs();
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        let mut row = 0;
        for (i, block) in self.data.blocks.iter().enumerate() {
            for j in 0..block.times.len() {
                x.row_mut(row).copy_from(&block.covariates.row(j));
                y[row] = targets[i][j];
                row += 1;
            }
        }
        // Gram–Schmidt pass to name columns lying in the span of earlier ones
        let mut kept: Vec<DVector<f64>> = Vec::new();
        let mut offending = Vec::new();
        for c in 0..p {
            let col = x.column(c).into_owned();
            let mut res = col.clone();
            for q in &kept {
                res -= q * q.dot(&col);
            }
            if res.norm() <= 1e-10 * col.norm().max(1e-300) {
                offending.push(self.data.covariate_names[c].clone());
            } else {
                kept.push(res.normalize());
            }
        }
        if !offending.is_empty() {
            return Err(Error::Validation(format!(
                "singular design: covariate columns {offending:?} are collinear with earlier columns"
            )));
        }
        let xtx = x.transpose() * &x;
        let chol = linalg::cholesky_jittered(&xtx, "covariate cross-product")?;
        Ok(chol.solve(&(x.transpose() * y)))
    }

    /// Deterministic starting state (up to a small seeded jitter on the
    /// scores): least-squares coefficients, eigenfunctions from the leading
    /// right singular vectors of the gridded residuals, projected scores, and
    /// moment-based variances.
    pub fn init_state<R: Rng + ?Sized>(
        &self,
        components: usize,
        targets: &[DVector<f64>],
        rng: &mut R,
    ) -> Result<FpcaState> {
        let k = self.basis.dim();
        if components == 0 || components > k {
            return Err(Error::Config(format!(
                "number of components must lie in 1..={k} (basis dimension), got {components}"
            )));
        }
        let n = self.n();
        let beta = self.least_squares_beta(targets)?;
        let grid = self.basis.grid();
        let g = grid.len();

        let mut resid_grid = DMatrix::zeros(n, g);
        let mut resid: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let block = &self.data.blocks[i];
            let r = if block.covariates.ncols() == 0 {
                targets[i].clone()
            } else {
                &targets[i] - &block.covariates * &beta
            };
            for (col, &t) in grid.iter().enumerate() {
                resid_grid[(i, col)] = interpolate(&block.times, r.as_slice(), t);
            }
            resid.push(r);
        }

        let svd = resid_grid.svd(false, true);
        let v_t = svd.v_t.expect("requested V");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let fit = self.basis.grid_basis().clone().svd(true, true);
        let mut candidates: Vec<DVector<f64>> = order
            .iter()
            .map(|&idx| {
                let v = v_t.row(idx).transpose();
                fit.solve(&v, 1e-12).expect("SVD solve with computed U and V")
            })
            .collect();
        candidates.extend((0..k).map(|c| DVector::from_fn(k, |j, _| if j == c { 1.0 } else { 0.0 })));

        let mut phi: Vec<DVector<f64>> = Vec::with_capacity(components);
        for cand in candidates {
            if phi.len() == components {
                break;
            }
            let mut v = cand;
            for q in &phi {
                let ip = self.basis.inner_product(q, &v);
                v -= q * ip;
            }
            let norm = self.basis.norm(&v);
            if norm > 1e-6 {
                phi.push(v / norm);
            }
        }
        if phi.len() < components {
            return Err(Error::Numerical("could not initialize orthonormal eigenfunctions".into()));
        }

        let mut scores = DMatrix::zeros(n, components);
        let mut sse = 0.0;
        for i in 0..n {
            let block = &self.data.blocks[i];
            if block.times.is_empty() {
                continue;
            }
            let mut psi = DMatrix::zeros(block.times.len(), components);
            for r in 0..components {
                psi.set_column(r, &(&block.basis * &phi[r]));
            }
            let gram = psi.transpose() * &psi + DMatrix::identity(components, components) * 1e-2;
            let s = linalg::cholesky_jittered(&gram, "initial score projection")?.solve(&(psi.transpose() * &resid[i]));
            sse += (&resid[i] - &psi * &s).norm_squared();
            scores.set_row(i, &s.transpose());
        }

        let mut mean_control = DVector::zeros(components);
        let mut mean_treated = DVector::zeros(components);
        let (mut n0, mut n1) = (0.0, 0.0);
        for i in 0..n {
            if self.data.treated[i] {
                mean_treated += scores.row(i).transpose();
                n1 += 1.0;
            } else {
                mean_control += scores.row(i).transpose();
                n0 += 1.0;
            }
        }
        if n0 > 0.0 {
            mean_control /= n0;
        }
        if n1 > 0.0 {
            mean_treated /= n1;
        }
        let mut lambda = vec![0.0; components];
        for r in 0..components {
            let ss: f64 = (0..n)
                .map(|i| {
                    let m = if self.data.treated[i] { mean_treated[r] } else { mean_control[r] };
                    (scores[(i, r)] - m).powi(2)
                })
                .sum();
            lambda[r] = (ss / n.max(1) as f64).max(1e-6);
        }
        for r in 0..components {
            let sd = lambda[r].sqrt() * 0.1;
            for i in 0..n {
                let z: f64 = StandardNormal.sample(rng);
                scores[(i, r)] += sd * z;
            }
        }
        let mean_var: Vec<f64> = (0..components)
            .map(|r| ((mean_control[r].powi(2) + mean_treated[r].powi(2)) / 2.0).max(1e-2))
            .collect();
        let upper = self.priors.smoothness_upper;
        let mut state = FpcaState {
            smoothness: lambda.iter().map(|&l| l.max(1.0).min(upper)).collect(),
            phi,
            scores,
            mean_control,
            mean_treated,
            beta,
            noise_var: (sse / self.data.n_obs().max(1) as f64).max(1e-6),
            score_increments: increments_from_variances(&lambda),
            mean_increments: increments_from_variances(&mean_var),
            local_scales: DMatrix::from_element(n, components, 1.0),
            hyper: Hyper {
                a1: self.priors.a1.0 / self.priors.a1.1,
                a2: self.priors.a2.0 / self.priors.a2.1,
                a_tau1: self.priors.a_tau1.0 / self.priors.a_tau1.1,
                a_tau2: self.priors.a_tau2.0 / self.priors.a_tau2.1,
            },
        };
        state.apply_sign_convention(self.basis);
        Ok(state)
    }
}

/// Piecewise-linear interpolation with flat extrapolation; zero when there
/// are no points.
fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    match times.len() {
        0 => 0.0,
        1 => values[0],
        _ => {
            if t <= times[0] {
                return values[0];
            }
            let last = times.len() - 1;
            if t >= times[last] {
                return values[last];
            }
            let j = times.partition_point(|&s| s <= t);
            let (t0, t1) = (times[j - 1], times[j]);
            let w = (t - t0) / (t1 - t0);
            values[j - 1] * (1.0 - w) + values[j] * w
        }
    }
}

/// Runs a chain on fixed targets and returns the retained states together
/// with the tuner and the worst orthonormality error seen after any sweep.
pub(crate) struct ChainRun {
    pub draws: Vec<FpcaState>,
    pub tuner: MhTuner,
    pub max_orthonormality_error: f64,
}

pub(crate) fn run_fixed_targets<R: Rng + ?Sized>(
    model: &Model<'_>,
    mut state: FpcaState,
    targets: &[DVector<f64>],
    config: &ChainConfig,
    rng: &mut R,
) -> Result<ChainRun> {
    let mut tuner = MhTuner::new(config.priors.mh_step);
    let mut draws = Vec::with_capacity(config.retained());
    let mut worst: f64 = 0.0;
    for it in 0..config.iterations {
        if it == config.burn_in {
            tuner.reset_counts();
        }
        let adapt = config.priors.adapt && it < config.burn_in;
        model
            .sweep(&mut state, targets, &mut tuner, adapt, rng)
            .map_err(|e| Error::Numerical(format!("sweep {it}: {e}")))?;
        worst = worst.max(state.orthonormality_error(model.basis));
        if config.keeps(it) {
            draws.push(state.clone());
        }
        if (it + 1) % 1000 == 0 {
            log::info!("sweep {}/{} (noise variance {:.4})", it + 1, config.iterations, state.noise_var);
        }
    }
    Ok(ChainRun { draws, tuner, max_orthonormality_error: worst })
}
