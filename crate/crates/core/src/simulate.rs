//! Simulation design with confounded treatment, mediator and outcome.
//!
//! Per subject:
//!
//! ```text
//! (c1, c2, c3) ~ N(0, Σ_c)            Z = 1{c1 ≤ Φ⁻¹(p_treat)}
//! n_m ~ Poisson(N_m) + 1              n_y ~ Poisson(N_y) + 1
//! pooled times ~ U[0,1], split at random into mediator and outcome grids
//! X(t) ~ N(0, σ_X² I₃) at every pooled time
//! M(t) = 2t + sin 2πt + Z (0.2 + 2t + sin 2πt) − X₁ + 0.5 X₂ + g_m(t) + σ_m c2
//! Y(t) = M(t) + cos 2πt + 0.1t² + 2t + Z (cos 2πt + 0.2t² + 3t) − 0.5 X₂ + X₃ + g_y(t) + σ_y c3
//! ```
//!
//! with `g_m, g_y` Gaussian processes with kernel `σ² exp(−8 (s − t)²)` and
//! independent `N(0, σ_noise²)` measurement error on every observation.
//! `Σ_c` has off-diagonals `(ρ_tm, ρ_ty, ρ_my)`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::data::{CovariateRow, LongitudinalDataset, Observation, Subject};
use crate::error::{Error, Result};
use crate::rng::subject_stream;

const GP_JITTER: f64 = 1e-10;
pub const COVARIATE_NAMES: [&str; 3] = ["x1", "x2", "x3"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Preset this configuration started from, if any.
    pub scenario: Option<u8>,
    pub rho_tm: f64,
    pub rho_ty: f64,
    pub rho_my: f64,
    pub sigma_m: f64,
    pub sigma_y: f64,
    pub sigma_x: f64,
    pub sigma_noise: f64,
    pub p_treat: f64,
    pub n_subjects: usize,
    /// Poisson means of the per-subject observation counts (before the +1
    /// shift).
    pub mean_mediator_obs: f64,
    pub mean_outcome_obs: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            rho_tm: 0.0,
            rho_ty: 0.0,
            rho_my: 0.0,
            sigma_m: 1.0,
            sigma_y: 1.0,
            sigma_x: 1.0,
            sigma_noise: 0.5,
            p_treat: 0.5,
            n_subjects: 200,
            mean_mediator_obs: 10.0,
            mean_outcome_obs: 10.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn confounder_correlation(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0, self.rho_tm, self.rho_ty,
            self.rho_tm, 1.0, self.rho_my,
            self.rho_ty, self.rho_my, 1.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("rho_tm", self.rho_tm), ("rho_ty", self.rho_ty), ("rho_my", self.rho_my)] {
            if !(r > -1.0 && r < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (-1, 1), got {r}")));
            }
        }
        if self.confounder_correlation().cholesky().is_none() {
            return Err(Error::Config("confounder correlation matrix is not positive definite".into()));
        }
        for (name, s) in [
            ("sigma_m", self.sigma_m),
            ("sigma_y", self.sigma_y),
            ("sigma_x", self.sigma_x),
            ("sigma_noise", self.sigma_noise),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {s}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_treat) {
            return Err(Error::Config(format!("p_treat must lie in [0, 1], got {}", self.p_treat)));
        }
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be positive".into()));
        }
        if !(self.mean_mediator_obs >= 1.0 && self.mean_outcome_obs >= 1.0) {
            return Err(Error::Config("Poisson means must be at least 1".into()));
        }
        Ok(())
    }

    /// Pooled correlation between the mediator and outcome deviations that
    /// are not explained by treatment and covariates, for a model whose
    /// subject-level variation is the GP plus the confounder shift.
    pub fn residual_correlation(&self) -> f64 {
        let vm = 2.0 * self.sigma_m * self.sigma_m;
        let vy = 2.0 * self.sigma_y * self.sigma_y;
        if vm == 0.0 || vy == 0.0 {
            return 0.0;
        }
        self.rho_my * self.sigma_m * self.sigma_y / (vm * vy).sqrt()
    }
}

/// Presets 1–4: no confounding, then treatment–mediator, treatment–outcome
/// and mediator–outcome confounding of strength 0.5.
pub fn scenario_preset(k: u8) -> Result<ScenarioConfig> {
    let base = ScenarioConfig { scenario: Some(k), ..Default::default() };
    match k {
        1 => Ok(base),
        2 => Ok(ScenarioConfig { rho_tm: 0.5, ..base }),
        3 => Ok(ScenarioConfig { rho_ty: 0.5, ..base }),
        4 => Ok(ScenarioConfig { rho_my: 0.5, ..base }),
        _ => Err(Error::Config(format!("scenario must be 1, 2, 3 or 4, got {k}"))),
    }
}

/// Squared-exponential kernel `σ² exp(−8 (s − t)²)`.
pub fn gp_kernel(s: f64, t: f64, sigma: f64) -> f64 {
    sigma * sigma * (-8.0 * (s - t).powi(2)).exp()
}

/// One draw of the Gaussian process at `times`.
pub fn sample_gp<R: Rng + ?Sized>(times: &[f64], sigma: f64, rng: &mut R) -> Result<DVector<f64>> {
    let n = times.len();
    if n == 0 || sigma == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let k = DMatrix::from_fn(n, n, |i, j| gp_kernel(times[i], times[j], sigma))
        + DMatrix::identity(n, n) * (GP_JITTER * sigma * sigma);
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("GP covariance on {n} times not positive definite after jitter")))?;
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    Ok(chol.l() * z)
}

/// Population mean of the mediator under treatment `z` (covariates and
/// deviations at zero).
pub fn mediator_mean(t: f64, z: f64) -> f64 {
    let base = 2.0 * t + (2.0 * PI * t).sin();
    base + (0.2 + base) * z
}

/// Outcome mean given treatment `z` and mediator value `m`.
pub fn outcome_mean(t: f64, z: f64, m: f64) -> f64 {
    m + (2.0 * PI * t).cos() + 0.1 * t * t + 2.0 * t + ((2.0 * PI * t).cos() + 0.2 * t * t + 3.0 * t) * z
}

/// Potential mediator value `M_i^t(z)`.
pub fn potential_mediator(cfg: &ScenarioConfig, t: f64, z: f64, x: &[f64; 3], gp: f64, c2: f64) -> f64 {
    mediator_mean(t, z) - x[0] + 0.5 * x[1] + gp + cfg.sigma_m * c2
}

/// Potential outcome value `Y_i^t(z, m)`.
pub fn potential_outcome(cfg: &ScenarioConfig, t: f64, z: f64, m: f64, x: &[f64; 3], gp: f64, c3: f64) -> f64 {
    outcome_mean(t, z, m) - 0.5 * x[1] + x[2] + gp + cfg.sigma_y * c3
}

/// Effect of treatment on the mediator, `0.2 + 2t + sin 2πt`.
pub fn true_mediator_effect(t: f64) -> f64 {
    mediator_mean(t, 1.0) - mediator_mean(t, 0.0)
}

/// Mediation effect; equals the mediator effect because the outcome loads
/// on the mediator with coefficient 1.
pub fn true_acme(t: f64) -> f64 {
    outcome_mean(t, 0.0, mediator_mean(t, 1.0)) - outcome_mean(t, 0.0, mediator_mean(t, 0.0))
}

pub fn true_direct(t: f64) -> f64 {
    outcome_mean(t, 1.0, mediator_mean(t, 1.0)) - outcome_mean(t, 0.0, mediator_mean(t, 1.0))
}

pub fn true_total(t: f64) -> f64 {
    true_acme(t) + true_direct(t)
}

/// Analytic effect curves on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthCurves {
    pub grid: Vec<f64>,
    pub mediator: Vec<f64>,
    pub acme: Vec<f64>,
    pub direct: Vec<f64>,
    pub total: Vec<f64>,
}

impl TruthCurves {
    pub fn on_grid(grid: &[f64]) -> Self {
        let acme: Vec<f64> = grid.iter().map(|&t| true_acme(t)).collect();
        let direct: Vec<f64> = grid.iter().map(|&t| true_direct(t)).collect();
        Self {
            grid: grid.to_vec(),
            mediator: grid.iter().map(|&t| true_mediator_effect(t)).collect(),
            total: acme.iter().zip(&direct).map(|(a, d)| a + d).collect(),
            acme,
            direct,
        }
    }
}

/// Latent (noise-free) processes of one subject at all its sampled times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    pub subject: String,
    pub times: Vec<f64>,
    pub mediator: Vec<f64>,
    pub outcome: Vec<f64>,
    pub confounders: [f64; 3],
}

impl LatentPath {
    /// Latent mediator value at one of the subject's sampled times.
    pub fn mediator_at(&self, t: f64) -> Option<f64> {
        self.times.iter().position(|&s| s == t).map(|j| self.mediator[j])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedTruth {
    pub config: ScenarioConfig,
    pub paths: Vec<LatentPath>,
    pub curves: TruthCurves,
}

fn simulate_subject(cfg: &ScenarioConfig, index: usize, threshold: f64) -> Result<(Subject, LatentPath)> {
    let mut rng = subject_stream(cfg.seed, index as u64);
    let chol = cfg.confounder_correlation().cholesky().expect("validated");
    let e = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let c = chol.l() * e;
    let z = if c[0] <= threshold { 1.0 } else { 0.0 };

    let n_m = Poisson::new(cfg.mean_mediator_obs).expect("validated").sample(&mut rng) as usize + 1;
    let n_y = Poisson::new(cfg.mean_outcome_obs).expect("validated").sample(&mut rng) as usize + 1;
    let total = n_m + n_y;
    let mut times: Vec<f64> = (0..total).map(|_| rng.random::<f64>()).collect();
    times.sort_by(|a, b| a.total_cmp(b));
    let mut is_mediator = vec![false; total];
    for j in sample(&mut rng, total, n_m) {
        is_mediator[j] = true;
    }

    let x_dist = Normal::new(0.0, cfg.sigma_x).map_err(|e| Error::Config(e.to_string()))?;
    let xs: Vec<[f64; 3]> = (0..total)
        .map(|_| [x_dist.sample(&mut rng), x_dist.sample(&mut rng), x_dist.sample(&mut rng)])
        .collect();
    let gp_m = sample_gp(&times, cfg.sigma_m, &mut rng)?;
    let gp_y = sample_gp(&times, cfg.sigma_y, &mut rng)?;
    let noise = Normal::new(0.0, cfg.sigma_noise).map_err(|e| Error::Config(e.to_string()))?;

    let mut latent_m = Vec::with_capacity(total);
    let mut latent_y = Vec::with_capacity(total);
    let mut mediator = Vec::with_capacity(n_m);
    let mut outcome = Vec::with_capacity(n_y);
    for j in 0..total {
        let t = times[j];
        let m = potential_mediator(cfg, t, z, &xs[j], gp_m[j], c[1]);
        let y = potential_outcome(cfg, t, z, m, &xs[j], gp_y[j], c[2]);
        latent_m.push(m);
        latent_y.push(y);
        let eps = noise.sample(&mut rng);
        if is_mediator[j] {
            mediator.push(Observation { time: t, value: m + eps });
        } else {
            outcome.push(Observation { time: t, value: y + eps });
        }
    }
    let id = format!("s{:04}", index + 1);
    let covariate_rows = times.iter().zip(&xs).map(|(&t, x)| CovariateRow { time: t, values: x.to_vec() }).collect();
    let subject = Subject::new(id.clone(), z == 1.0, covariate_rows, mediator, outcome)?;
    let path = LatentPath { subject: id, times, mediator: latent_m, outcome: latent_y, confounders: [c[0], c[1], c[2]] };
    Ok((subject, path))
}

/// Simulates one dataset with its ground truth. Each subject uses its own
/// RNG substream, so the dataset does not depend on generation order.
pub fn simulate_dataset(cfg: &ScenarioConfig) -> Result<(LongitudinalDataset, SimulatedTruth)> {
    cfg.validate()?;
    let threshold = match cfg.p_treat {
        p if p >= 1.0 => f64::INFINITY,
        p if p <= 0.0 => f64::NEG_INFINITY,
        p => NormalDist::standard().inverse_cdf(p),
    };
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut paths = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let (s, p) = simulate_subject(cfg, i, threshold)?;
        subjects.push(s);
        paths.push(p);
    }
    let names = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let dataset = LongitudinalDataset::new(subjects, names, 1.0)?;
    let grid = crate::estimands::reporting_grid(crate::estimands::DEFAULT_REPORT_POINTS);
    Ok((dataset, SimulatedTruth { config: cfg.clone(), paths, curves: TruthCurves::on_grid(&grid) }))
}

/// Writes `subject_id, time, latent_m, latent_y`.
pub fn write_latent_paths<W: Write>(writer: W, truth: &SimulatedTruth) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "time", "latent_m", "latent_y"])?;
    for p in &truth.paths {
        for j in 0..p.times.len() {
            w.write_record([
                p.subject.as_str(),
                &p.times[j].to_string(),
                &p.mediator[j].to_string(),
                &p.outcome[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `time, mediator, acme, direct, total`.
pub fn write_truth_curves<W: Write>(writer: W, curves: &TruthCurves) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "mediator", "acme", "direct", "total"])?;
    for k in 0..curves.grid.len() {
        w.write_record(
            [curves.grid[k], curves.mediator[k], curves.acme[k], curves.direct[k], curves.total[k]]
                .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth_files(dir: impl AsRef<Path>, truth: &SimulatedTruth) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let latent = dir.as_ref().join("truth_latent.csv");
    let curves = dir.as_ref().join("truth_curves.csv");
    write_latent_paths(std::io::BufWriter::new(std::fs::File::create(&latent)?), truth)?;
    write_truth_curves(std::io::BufWriter::new(std::fs::File::create(&curves)?), &truth.curves)?;
    Ok((latent, curves))
}
