//! Acceptance run: simulation study over seeds 1..=10 and scenarios 1..=4
//! with the default chain settings, followed by the property checks. Prints
//! one PASS/FAIL line per criterion and exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::{conjugate, geweke, structural};
use fpca_mediation::basis::BasisConfig;
use fpca_mediation::data::write_dataset_to;
use fpca_mediation::estimands::{acme_curve, reporting_grid, write_rows, EffectCurves};
use fpca_mediation::linalg::correlation;
use fpca_mediation::mediator::{impute_process, run_chain};
use fpca_mediation::outcome::run_outcome_chain;
use fpca_mediation::posterior_io::{mediator_csv_bytes, outcome_csv_bytes};
use fpca_mediation::sensitivity::{adjusted_acme, draw_moments, estimate_moments, gamma_given_rho};
use fpca_mediation::simulate::{scenario_preset, simulate_dataset, true_acme, TruthCurves};
use fpca_mediation::{
    ChainConfig, LongitudinalDataset, MediatorPosterior, OutcomeConfig, OutcomePosterior, ScenarioConfig, SplineBasis,
};
use rand::{Rng, SeedableRng};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const N_SUBJECTS: usize = 200;
const GRID_POINTS: usize = 101;

const MAE_LIMIT: f64 = 0.25;
const COVERAGE_FLOOR: f64 = 0.80;
const RUNTIME_BUDGET: Duration = Duration::from_secs(600);
const VIOLATION_RATIO: f64 = 2.0;
const LATENT_CORRELATION_FLOOR: f64 = 0.9;
const ZERO_RHO_TOLERANCE: f64 = 1e-10;
const SENSITIVITY_WINS_NEEDED: usize = 8;

/// Summary of one scenario fit; posteriors are dropped after each fit.
#[derive(Clone, Debug, Default)]
struct FitMetrics {
    mae: [f64; 3],
    coverage: [f64; 3],
    latent_correlation: f64,
    decomposition_error: f64,
    orthonormality_error: f64,
    structural: Vec<String>,
    zero_rho_error: f64,
    midpoint_bias: Option<(f64, f64)>,
}

const MEDIATOR: usize = 0;
const ACME: usize = 1;
const TOTAL: usize = 2;

fn chain(seed: u64) -> ChainConfig {
    ChainConfig { seed, ..ChainConfig::default() }
}

fn mediator_basis(d: &LongitudinalDataset) -> SplineBasis {
    SplineBasis::from_times(&d.mediator_times(), &BasisConfig::default()).unwrap()
}

fn fit_mediator(d: &LongitudinalDataset, seed: u64) -> MediatorPosterior {
    run_chain(d, &mediator_basis(d), &chain(seed)).unwrap()
}

fn fit_outcome(d: &LongitudinalDataset, med: &MediatorPosterior, seed: u64) -> OutcomePosterior {
    let basis = SplineBasis::from_times(&d.outcome_times(), &BasisConfig::default()).unwrap();
    let cfg = OutcomeConfig { chain: chain(seed), ..OutcomeConfig::default() };
    run_outcome_chain(d, med, &basis, &cfg).unwrap()
}

/// Everything the mediator stage sees, so fits can be shared across
/// scenarios that only differ in the outcome.
fn mediator_key(d: &LongitudinalDataset) -> String {
    let mut key = String::new();
    for s in d.subjects() {
        key.push_str(&format!("{}|{:?}|{:?};", s.treated, s.covariate_rows, s.mediator));
    }
    key
}

/// Pooled correlation between posterior-mean latent mediator values and
/// the simulated ones at every observed mediator time.
fn latent_correlation(d: &LongitudinalDataset, truth: &fpca_mediation::SimulatedTruth, med: &MediatorPosterior) -> f64 {
    let (mut fitted, mut actual) = (Vec::new(), Vec::new());
    for (i, (s, path)) in d.subjects().iter().zip(&truth.paths).enumerate() {
        let times = s.mediator_times();
        let mut mean = vec![0.0; times.len()];
        for draw in &med.draws {
            for (m, v) in mean.iter_mut().zip(impute_process(draw, &med.basis, i, s, &times)) {
                *m += v / med.len() as f64;
            }
        }
        for (t, m) in times.iter().zip(mean) {
            fitted.push(m);
            actual.push(path.mediator_at(*t).expect("sampled time"));
        }
    }
    correlation(&fitted, &actual)
}

fn evaluate(
    scenario: u8,
    cfg: &ScenarioConfig,
    d: &LongitudinalDataset,
    truth: &fpca_mediation::SimulatedTruth,
    med: &MediatorPosterior,
    out: &OutcomePosterior,
) -> FitMetrics {
    let grid = reporting_grid(GRID_POINTS);
    let target = TruthCurves::on_grid(&grid);
    let curves = EffectCurves::compute(med, out, &grid).unwrap();
    let pairs = [(&curves.mediator, &target.mediator), (&curves.acme, &target.acme), (&curves.total, &target.total)];
    let mut m = FitMetrics::default();
    for (k, (c, t)) in pairs.iter().enumerate() {
        m.mae[k] = c.mean_absolute_error(t);
        m.coverage[k] = c.coverage(t);
    }
    if scenario == 1 {
        m.latent_correlation = latent_correlation(d, truth, med);
    }

    m.decomposition_error = structural::decomposition_error(&curves);
    let checks = [
        structural::check_decomposition(&curves).map(|_| ()),
        structural::check_eigenfunctions(med, out).map(|_| ()),
        structural::check_sign_flips(med, out, &grid),
    ];
    m.structural = checks.into_iter().filter_map(Result::err).collect();
    m.orthonormality_error = med.max_orthonormality_error.max(out.max_orthonormality_error);

    if scenario == 4 {
        // the zero-correlation branch must give back the plain coefficient,
        // both for the averaged moments and draw by draw
        let u = 0.5;
        let moments = estimate_moments(med, out, u, false).unwrap();
        let mut worst = (gamma_given_rho(0.0, &moments).unwrap() - moments.cov / moments.var_m).abs();
        let (mrow, orow) = (med.basis.eval(u), out.basis.eval(u));
        for d in &out.draws {
            let dm = draw_moments(&med.draws[d.mediator_draw], &d.fpca, d.gamma, &mrow, &orow, false);
            worst = worst.max((gamma_given_rho(0.0, &dm).unwrap() - d.gamma).abs());
        }
        m.zero_rho_error = worst;

        let oracle = cfg.residual_correlation();
        let plain = acme_curve(med, out, &[u]).unwrap().mean[0];
        let adjusted = adjusted_acme(med, out, &[u], &[oracle], false).unwrap().mean[0];
        m.midpoint_bias = Some(((plain - true_acme(u)).abs(), (adjusted - true_acme(u)).abs()));
    }
    m
}

/// Bytes of everything a seed-1 scenario-1 run writes: dataset, both
/// posteriors and the effect curves.
fn run_bytes(d: &LongitudinalDataset, med: &MediatorPosterior, out: &OutcomePosterior) -> Vec<Vec<u8>> {
    let mut data = Vec::new();
    write_dataset_to(&mut data, d).unwrap();
    let curves = EffectCurves::compute(med, out, &reporting_grid(GRID_POINTS)).unwrap();
    let mut rows = Vec::new();
    write_rows(&mut rows, curves.rows().iter()).unwrap();
    vec![data, mediator_csv_bytes(med).unwrap(), outcome_csv_bytes(out).unwrap(), rows]
}

fn simulate(scenario: u8, seed: u64) -> (ScenarioConfig, LongitudinalDataset, fpca_mediation::SimulatedTruth) {
    let cfg = ScenarioConfig { n_subjects: N_SUBJECTS, seed, ..scenario_preset(scenario).unwrap() };
    let (d, truth) = simulate_dataset(&cfg).unwrap();
    (cfg, d, truth)
}

struct Study {
    /// `metrics[scenario - 1][seed index]`
    metrics: Vec<Vec<FitMetrics>>,
    /// Wall time of the scenario-1 pipeline per seed.
    seed_seconds: Vec<f64>,
    determinism: Result<String, String>,
}

fn run_study() -> Study {
    let mut metrics = vec![Vec::new(); 4];
    let mut seed_seconds = Vec::new();
    let mut determinism = Err("not run".to_string());
    for seed in SEEDS {
        let mut cached: Option<(String, MediatorPosterior, f64)> = None;
        for scenario in 1..=4u8 {
            let (cfg, d, truth) = simulate(scenario, seed);
            let key = mediator_key(&d);
            let clock = Instant::now();
            let reuse = matches!(&cached, Some((k, _, _)) if *k == key);
            if !reuse {
                let med = fit_mediator(&d, seed);
                cached = Some((key, med, clock.elapsed().as_secs_f64()));
            }
            let (_, med, med_seconds) = cached.as_ref().unwrap();
            let clock = Instant::now();
            let out = fit_outcome(&d, med, seed);
            let seconds = med_seconds + clock.elapsed().as_secs_f64();
            let m = evaluate(scenario, &cfg, &d, &truth, med, &out);
            eprintln!(
                "seed {seed:2} scenario {scenario}: MAE {:.3}/{:.3}/{:.3} coverage {:.2}/{:.2}/{:.2} ({seconds:.1}s)",
                m.mae[0], m.mae[1], m.mae[2], m.coverage[0], m.coverage[1], m.coverage[2]
            );
            if scenario == 1 {
                seed_seconds.push(seconds);
            }
            if scenario == 1 && seed == *SEEDS.start() {
                let first = run_bytes(&d, med, &out);
                let (_, d2, _) = simulate(1, seed);
                let med2 = fit_mediator(&d2, seed);
                let out2 = fit_outcome(&d2, &med2, seed);
                let second = run_bytes(&d2, &med2, &out2);
                let names = ["dataset", "mediator posterior", "outcome posterior", "effect curves"];
                determinism = match first.iter().zip(&second).position(|(a, b)| a != b) {
                    Some(k) => Err(format!("{} differs between identical runs", names[k])),
                    None => Ok(format!("{} files byte-identical", names.len())),
                };
            }
            metrics[scenario as usize - 1].push(m);
        }
    }
    Study { metrics, seed_seconds, determinism }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_mae(fits: &[FitMetrics], k: usize) -> f64 {
    mean(fits.iter().map(|m| m.mae[k]))
}

fn report(results: &mut Vec<bool>, n: usize, name: &str, outcome: Result<String, String>) {
    let (tag, detail) = match &outcome {
        Ok(s) => ("PASS", s),
        Err(s) => ("FAIL", s),
    };
    println!("{tag} criterion {n} ({name}): {detail}");
    results.push(outcome.is_ok());
}

fn recovery(study: &Study) -> Result<String, String> {
    let fits = &study.metrics[0];
    let names = ["mediator effect", "mediated effect", "total effect"];
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let mae = mean_mae(fits, k);
        let cov = mean(fits.iter().map(|m| m.coverage[k]));
        parts.push(format!("{name} MAE {mae:.3} coverage {cov:.2}"));
        if !(mae < MAE_LIMIT) {
            failures.push(format!("{name} MAE {mae:.3} >= {MAE_LIMIT}"));
        }
        if !(cov >= COVERAGE_FLOOR) {
            failures.push(format!("{name} coverage {cov:.2} < {COVERAGE_FLOOR}"));
        }
    }
    let slowest = study.seed_seconds.iter().cloned().fold(0.0, f64::max);
    parts.push(format!("slowest seed {slowest:.1}s"));
    if !(slowest < RUNTIME_BUDGET.as_secs_f64()) {
        failures.push(format!("seed took {slowest:.1}s"));
    }
    let text = parts.join("; ");
    if failures.is_empty() {
        Ok(text)
    } else {
        Err(format!("{}; {text}", failures.join(", ")))
    }
}

fn violations(study: &Study) -> Result<String, String> {
    let targets = [(2usize, MEDIATOR, "mediator effect"), (3, TOTAL, "total effect"), (4, ACME, "mediated effect")];
    let mut parts = Vec::new();
    let mut ok = true;
    for (scenario, k, name) in targets {
        let base = mean_mae(&study.metrics[0], k);
        let shifted = mean_mae(&study.metrics[scenario - 1], k);
        let ratio = shifted / base;
        ok &= ratio >= VIOLATION_RATIO;
        parts.push(format!("scenario {scenario} {name} MAE {shifted:.3} vs {base:.3} (x{ratio:.2})"));
    }
    let text = parts.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(format!("ratio below {VIOLATION_RATIO}: {text}"))
    }
}

fn latent(study: &Study) -> Result<String, String> {
    let worst = study.metrics[0].iter().map(|m| m.latent_correlation).fold(f64::INFINITY, f64::min);
    let text = format!("lowest correlation over seeds {worst:.3}");
    if worst > LATENT_CORRELATION_FLOOR {
        Ok(text)
    } else {
        Err(text)
    }
}

fn sampler() -> Result<String, String> {
    let mut failures = Vec::new();
    let checks = conjugate::all();
    for (name, r) in &checks {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    }
    let (p_mean, p_noise) = geweke::p_values();
    if !(p_mean > 0.01) {
        failures.push(format!("Geweke treated-mean KS p = {p_mean:.4}"));
    }
    if !(p_noise > 0.01) {
        failures.push(format!("Geweke noise-variance KS p = {p_noise:.4}"));
    }
    let text = format!(
        "{} conjugate updates at {} draws; Geweke KS p = {p_mean:.3} (treated mean), {p_noise:.3} (noise variance)",
        checks.len(),
        conjugate::DRAWS
    );
    if failures.is_empty() {
        Ok(text)
    } else {
        Err(format!("{}; {text}", failures.join("; ")))
    }
}

fn identities(study: &Study) -> Result<String, String> {
    let all: Vec<&FitMetrics> = study.metrics.iter().flatten().collect();
    let mut failures: Vec<String> = all.iter().flat_map(|m| m.structural.iter().cloned()).collect();
    let decomposition = all.iter().map(|m| m.decomposition_error).fold(0.0, f64::max);
    let orthonormality = all.iter().map(|m| m.orthonormality_error).fold(0.0, f64::max);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
    let mut rescale: f64 = 0.0;
    for _ in 0..48 {
        let scale = rng.random_range(0.05..20.0);
        let r = rng.random_range(0..2);
        let seed = rng.random_range(0..1000);
        match structural::normalize_rescale_case(scale, r, seed) {
            Ok(v) => rescale = rescale.max(v),
            Err(e) => failures.push(e),
        }
    }
    let text = format!(
        "{} fits; decomposition {decomposition:.1e}, orthonormality {orthonormality:.1e}, rescale {rescale:.1e}, sign flips exact",
        all.len()
    );
    if failures.is_empty() {
        Ok(text)
    } else {
        failures.dedup();
        Err(format!("{}; {text}", failures.join("; ")))
    }
}

fn sensitivity(study: &Study) -> Result<String, String> {
    let fits = &study.metrics[3];
    let zero = fits.iter().map(|m| m.zero_rho_error).fold(0.0, f64::max);
    let biases: Vec<(f64, f64)> = fits.iter().filter_map(|m| m.midpoint_bias).collect();
    let wins = biases.iter().filter(|(plain, adjusted)| adjusted < plain).count();
    let listed: Vec<String> = biases.iter().map(|(p, a)| format!("{p:.3}->{a:.3}")).collect();
    let text = format!(
        "zero-correlation error {zero:.1e}; adjusted midpoint bias smaller in {wins}/{} seeds [{}]",
        biases.len(),
        listed.join(", ")
    );
    if zero <= ZERO_RHO_TOLERANCE && wins >= SENSITIVITY_WINS_NEEDED {
        Ok(text)
    } else {
        Err(text)
    }
}

/// Short CLI pipeline run twice in separate directories.
fn cli_determinism() -> Result<String, String> {
    use fpca_mediation::cli::main_with_args;
    let run = |dir: &std::path::Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let d = dir.to_str().unwrap();
        let data = format!("{d}/dataset.csv");
        let (med, out) = (format!("{d}/mediator.csv"), format!("{d}/outcome.csv"));
        let short = ["--iters", "200", "--burn", "100", "--time-scale", "1", "--seed", "1"];
        let steps: Vec<Vec<&str>> = vec![
            vec!["simulate", "--out", d, "--scenario", "1", "--n", "60", "--seed", "1"],
            [vec!["fit-mediator", "--out", d, "--data", &data], short.to_vec()].concat(),
            [vec!["fit-outcome", "--out", d, "--data", &data, "--mediator-posterior", &med], short.to_vec()].concat(),
            vec!["estimate", "--out", d, "--mediator-posterior", &med, "--outcome-posterior", &out],
        ];
        for step in steps {
            let code = main_with_args([vec!["fpca-med"], step.clone()].concat());
            if code != 0 {
                return Err(format!("{} exited with {code}", step[0]));
            }
        }
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| !p.file_name().unwrap().to_str().unwrap().starts_with("manifest_"))
            .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        Ok(files)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (run(a.path())?, run(b.path())?);
    if fa.len() != fb.len() {
        return Err(format!("{} vs {} output files", fa.len(), fb.len()));
    }
    for ((na, ba), (_, bb)) in fa.iter().zip(&fb) {
        if ba != bb {
            return Err(format!("CLI output {na} differs"));
        }
    }
    Ok(format!("{} CLI outputs byte-identical", fa.len()))
}

fn main() {
    let clock = Instant::now();
    let mut results = Vec::new();

    let study = run_study();
    report(&mut results, 1, "scenario-1 recovery", recovery(&study));
    report(&mut results, 2, "violation detection", violations(&study));
    report(&mut results, 3, "latent mediator recovery", latent(&study));
    report(&mut results, 4, "sampler correctness", sampler());
    report(&mut results, 5, "structural identities", identities(&study));
    report(&mut results, 6, "sensitivity consistency", sensitivity(&study));
    let determinism = match (study.determinism.clone(), cli_determinism()) {
        (Ok(a), Ok(b)) => Ok(format!("{a}; {b}")),
        (Err(e), _) | (_, Err(e)) => Err(e),
    };
    report(&mut results, 7, "determinism", determinism);

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed in {:.0}s", results.len(), clock.elapsed().as_secs_f64());
    if passed != results.len() {
        std::process::exit(1);
    }
}
