//! Command-line front end: `simulate`, `validate`, `fit-mediator`,
//! `fit-outcome`, `estimate` and `sensitivity`.
//!
//! Settings resolve as flag, then the `--config` JSON file, then the
//! built-in default. Every command writes a `manifest_<command>.json` next
//! to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, PenaltyFlavor, SplineBasis, DEFAULT_GRID_SIZE, DEFAULT_KNOTS};
use crate::data::{load_dataset, validate_dataset, write_dataset, LongitudinalDataset, Schema};
use crate::diagnostics::{summarize_chains, ParameterSummary};
use crate::error::{Error, Result};
use crate::estimands::{reporting_grid, summary_table, EffectCurves, DEFAULT_REPORT_POINTS};
use crate::fpca::{ChainConfig, Priors};
use crate::manifest::RunManifest;
use crate::mediator::{self, MediatorPosterior};
use crate::outcome::{self, Imputation, OutcomeConfig, OutcomePosterior, Pairing};
use crate::posterior_io::{meta_path, read_mediator, read_outcome, write_mediator, write_outcome};
use crate::sensitivity::{estimate_moments, gamma_given_rho, gamma_given_rho_printed, parse_rho_grid, sensitivity_curve};
use crate::simulate::{scenario_preset, simulate_dataset, write_truth_files};

/// Cumulative FEV below which the fit is flagged as possibly truncated.
pub const FEV_THRESHOLD: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "fpca-med", version, about = "Bayesian causal mediation for sparse longitudinal data")]
pub struct Cli {
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset with stored ground truth.
    Simulate(SimulateArgs),
    /// Check a dataset and report per-subject counts.
    Validate(DataArgs),
    /// Fit the mediator model.
    FitMediator(FitArgs),
    /// Fit the outcome model against a mediator posterior.
    FitOutcome(FitArgs),
    /// Effect curves and a summary table.
    Estimate(EstimateArgs),
    /// Mediation effect under residual mediator-outcome correlation.
    Sensitivity(SensitivityArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma_noise: Option<f64>,
    #[arg(long)]
    pub p_treat: Option<f64>,
    /// Poisson mean of the mediator observation count.
    #[arg(long)]
    pub mediator_obs: Option<f64>,
    #[arg(long)]
    pub outcome_obs: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Divide times by this instead of the largest observed time.
    #[arg(long)]
    pub time_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of components.
    #[arg(long = "R")]
    pub components: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub knots: Option<usize>,
    /// Required by `fit-outcome`.
    #[arg(long)]
    pub mediator_posterior: Option<PathBuf>,
    /// `cycle` or `random`.
    #[arg(long)]
    pub pairing: Option<String>,
    /// `posterior-mean` or `draw`.
    #[arg(long)]
    pub imputation: Option<String>,
}

#[derive(Debug, Args)]
pub struct PosteriorArgs {
    #[arg(long)]
    pub mediator_posterior: PathBuf,
    #[arg(long)]
    pub outcome_posterior: PathBuf,
    /// Number of points of the reporting grid on the normalized time axis.
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub posteriors: PosteriorArgs,
    /// Comma-separated report times in original units.
    #[arg(long)]
    pub times: Option<String>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub posteriors: PosteriorArgs,
    /// Comma-separated values or `start:stop:step`, each in (-1, 1).
    #[arg(long)]
    pub rho_grid: Option<String>,
    /// Include observation noise in the moments.
    #[arg(long)]
    pub include_noise: bool,
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub scenario: Option<u8>,
    pub n: Option<usize>,
    pub sigma_noise: Option<f64>,
    pub p_treat: Option<f64>,
    pub mediator_obs: Option<f64>,
    pub outcome_obs: Option<f64>,
    #[serde(rename = "R")]
    pub components: Option<usize>,
    pub iters: Option<usize>,
    pub burn: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
    pub knots: Option<usize>,
    pub grid_size: Option<usize>,
    pub penalty: Option<PenaltyFlavor>,
    pub time_scale: Option<f64>,
    pub pairing: Option<Pairing>,
    pub imputation: Option<Imputation>,
    pub gamma_prior_var: Option<f64>,
    pub priors: Option<Priors>,
    pub grid_points: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub rho_grid: Option<Vec<f64>>,
    pub include_noise: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = std::fs::read(p)
                    .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", p.display())))?;
                serde_json::from_slice(&bytes)
                    .map_err(|e| Error::Config(format!("invalid config file {}: {e}", p.display())))
            }
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let echo = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, echo) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line; `args` is echoed into the manifest.
pub fn run(cli: &Cli, args: Vec<String>) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &file, &cli.out, args),
        Command::Validate(a) => cmd_validate(a, &file, &cli.out, args),
        Command::FitMediator(a) => cmd_fit_mediator(a, &file, &cli.out, args),
        Command::FitOutcome(a) => cmd_fit_outcome(a, &file, &cli.out, args),
        Command::Estimate(a) => cmd_estimate(a, &file, &cli.out, args),
        Command::Sensitivity(a) => cmd_sensitivity(a, &file, &cli.out, args),
    }
}

/// A missing or unreadable input path is a usage error.
fn reading(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", path.display())),
        e => e,
    }
}

fn load_data(a: &DataArgs, file: &FileConfig) -> Result<LongitudinalDataset> {
    if !a.data.exists() {
        return Err(Error::Config(format!("data file {} does not exist", a.data.display())));
    }
    let schema = Schema { time_scale: a.time_scale.or(file.time_scale), ..Schema::default() };
    let (d, report) = load_dataset(&a.data, &schema)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(d)
}

pub fn cmd_simulate(a: &SimulateArgs, file: &FileConfig, out: &Path, args: Vec<String>) -> Result<()> {
    let scenario = pick(a.scenario, file.scenario, 1);
    let base = scenario_preset(scenario)?;
    let cfg = crate::ScenarioConfig {
        seed: pick(a.seed, file.seed, base.seed),
        n_subjects: pick(a.n, file.n, base.n_subjects),
        sigma_noise: pick(a.sigma_noise, file.sigma_noise, base.sigma_noise),
        p_treat: pick(a.p_treat, file.p_treat, base.p_treat),
        mean_mediator_obs: pick(a.mediator_obs, file.mediator_obs, base.mean_mediator_obs),
        mean_outcome_obs: pick(a.outcome_obs, file.outcome_obs, base.mean_outcome_obs),
        ..base
    };
    let mut manifest = RunManifest::new("simulate", args);
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::to_value(&cfg)?;
    let (data, truth) = manifest.time("simulate", || simulate_dataset(&cfg))?;
    let dataset = out.join("dataset.csv");
    write_dataset(&dataset, &data)?;
    let (latent, curves) = write_truth_files(out, &truth)?;
    for p in [&dataset, &latent, &curves] {
        manifest.add_output(p)?;
    }
    manifest.notes.push(
        "scenario 3 confounds treatment and outcome (rho_ty), scenario 4 confounds mediator and outcome (rho_my)".into(),
    );
    manifest.notes.push(
        "sample size, observation counts, noise levels and treatment probability are invented defaults".into(),
    );
    manifest.notes.push("times are already on [0, 1]; fit with --time-scale 1 to keep them there".into());
    manifest.write(out.join("manifest_simulate.json"))?;
    println!("simulated scenario {scenario}, {} subjects -> {}", data.len(), dataset.display());
    Ok(())
}

pub fn cmd_validate(a: &DataArgs, file: &FileConfig, out: &Path, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("validate", args);
    let d = load_data(a, file)?;
    manifest.add_input(&a.data)?;
    let report = validate_dataset(&d);
    println!("subjects: {} ({} control, {} treated)", d.len(), report.n_control, report.n_treated);
    println!("covariate completeness: {:.3}", report.covariate_completeness);
    println!("{:<12} {:>6} {:>9} {:>8}", "subject", "arm", "mediator", "outcome");
    for s in &report.subjects {
        println!("{:<12} {:>6} {:>9} {:>8}", s.id, u8::from(s.treated), s.mediator, s.outcome);
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    manifest.diagnostics = serde_json::json!({
        "n_control": report.n_control,
        "n_treated": report.n_treated,
        "covariate_completeness": report.covariate_completeness,
        "warnings": report.warnings,
        "fatal": report.fatal,
    });
    manifest.write(out.join("manifest_validate.json"))?;
    if !report.is_fit_ready() {
        return Err(Error::Validation(report.fatal.join("; ")));
    }
    Ok(())
}

fn chain_config(a: &FitArgs, file: &FileConfig) -> Result<ChainConfig> {
    let d = ChainConfig::default();
    let cfg = ChainConfig {
        components: pick(a.components, file.components, d.components),
        iterations: pick(a.iters, file.iters, d.iterations),
        burn_in: pick(a.burn, file.burn, d.burn_in),
        thin: pick(a.thin, file.thin, d.thin),
        seed: pick(a.seed, file.seed, d.seed),
        chain: 0,
        priors: file.priors.clone().unwrap_or_default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn basis_config(a: &FitArgs, file: &FileConfig) -> BasisConfig {
    BasisConfig {
        n_knots: pick(a.knots, file.knots, DEFAULT_KNOTS),
        grid_size: file.grid_size.unwrap_or(DEFAULT_GRID_SIZE),
        flavor: file.penalty.unwrap_or_default(),
    }
}

fn n_chains(a: &FitArgs, file: &FileConfig) -> Result<usize> {
    let n = pick(a.chains, file.chains, 1);
    if n == 0 {
        return Err(Error::Config("--chains must be at least 1".into()));
    }
    Ok(n)
}

fn write_diagnostics(path: &Path, rows: &[ParameterSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Smallest number of components reaching the FEV threshold, if any
/// fewer than all do.
pub fn components_for_fev(cumulative: &[f64], threshold: f64) -> usize {
    cumulative.iter().position(|&c| c >= threshold).map_or(cumulative.len(), |k| k + 1)
}

fn report_fev(what: &str, cumulative: &[f64]) {
    let r = cumulative.len();
    let needed = components_for_fev(cumulative, FEV_THRESHOLD);
    println!("{what} cumulative FEV: {}", cumulative.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
    // The last component always completes the sum, so the check is
    // whether the first R − 1 already explain 90%.
    let before_last = if r >= 2 { cumulative[r - 2] } else { 0.0 };
    if r >= 2 && before_last < FEV_THRESHOLD {
        let msg = format!(
            "{what}: the first {} of {r} components explain only {:.1}% of score variance; consider a larger --R",
            r - 1,
            100.0 * before_last
        );
        log::warn!("{msg}");
        eprintln!("warning: {msg}");
    } else {
        println!("{what}: {needed} component(s) reach {:.0}% FEV", 100.0 * FEV_THRESHOLD);
    }
}

fn pairing_from(s: Option<&str>, file: Option<Pairing>) -> Result<Pairing> {
    match s {
        None => Ok(file.unwrap_or_default()),
        Some("cycle") => Ok(Pairing::Cycle),
        Some("random") => Ok(Pairing::Random),
        Some(o) => Err(Error::Config(format!("unknown pairing `{o}` (cycle, random)"))),
    }
}

fn imputation_from(s: Option<&str>, file: Option<Imputation>) -> Result<Imputation> {
    match s {
        None => Ok(file.unwrap_or_default()),
        Some("posterior-mean") => Ok(Imputation::PosteriorMean),
        Some("draw") => Ok(Imputation::Draw),
        Some(o) => Err(Error::Config(format!("unknown imputation `{o}` (posterior-mean, draw)"))),
    }
}

pub fn cmd_fit_mediator(a: &FitArgs, file: &FileConfig, out: &Path, args: Vec<String>) -> Result<()> {
    let config = chain_config(a, file)?;
    let chains = n_chains(a, file)?;
    let bcfg = basis_config(a, file);
    let mut manifest = RunManifest::new("fit-mediator", args);
    manifest.seed = Some(config.seed);
    manifest.config = serde_json::json!({ "chain": config, "chains": chains, "basis": bcfg });
    let d = load_data(&a.data, file)?;
    manifest.add_input(&a.data.data)?;
    let basis = SplineBasis::from_times(&d.mediator_times(), &bcfg)?;
    let fits = manifest.time("sample", || mediator::run_chains(&d, &basis, &config, chains))?;

    if chains > 1 {
        for (c, f) in fits.iter().enumerate() {
            let p = out.join(format!("mediator_chain{c}.csv"));
            write_mediator(&p, f)?;
            manifest.add_output(&p)?;
            manifest.add_output(meta_path(&p))?;
        }
    }
    let draws: Vec<_> = fits.iter().map(|f| f.draws.clone()).collect();
    let summary = summarize_chains(&draws, &[]);
    let merged = mediator::merge(fits);
    let path = out.join("mediator.csv");
    write_mediator(&path, &merged)?;
    let diag = out.join("mediator_diagnostics.csv");
    write_diagnostics(&diag, &summary)?;
    for p in [path.clone(), meta_path(&path), diag] {
        manifest.add_output(p)?;
    }
    let fev = merged.mean_cumulative_fev();
    report_fev("mediator", &fev);
    manifest.diagnostics = serde_json::json!({
        "acceptance": merged.acceptance,
        "mean_cumulative_fev": fev,
        "max_orthonormality_error": merged.max_orthonormality_error,
        "parameters": summary,
    });
    manifest.write(out.join("manifest_fit-mediator.json"))?;
    println!("{} draws -> {}", merged.len(), path.display());
    Ok(())
}

pub fn cmd_fit_outcome(a: &FitArgs, file: &FileConfig, out: &Path, args: Vec<String>) -> Result<()> {
    let Some(med_path) = &a.mediator_posterior else {
        return Err(Error::Config("fit-outcome requires --mediator-posterior".into()));
    };
    let chain = chain_config(a, file)?;
    let chains = n_chains(a, file)?;
    let bcfg = basis_config(a, file);
    let config = OutcomeConfig {
        chain,
        pairing: pairing_from(a.pairing.as_deref(), file.pairing)?,
        imputation: imputation_from(a.imputation.as_deref(), file.imputation)?,
        fixed_gamma: None,
        gamma_prior_var: file.gamma_prior_var.unwrap_or(OutcomeConfig::default().gamma_prior_var),
    };
    let mut manifest = RunManifest::new("fit-outcome", args);
    manifest.seed = Some(config.chain.seed);
    manifest.config = serde_json::json!({ "outcome": config, "chains": chains, "basis": bcfg });
    let d = load_data(&a.data, file)?;
    manifest.add_input(&a.data.data)?;
    let (med, _) = read_mediator(med_path).map_err(|e| reading(med_path, e))?;
    manifest.add_input(med_path)?;
    let basis = SplineBasis::from_times(&d.outcome_times(), &bcfg)?;
    let fits = manifest.time("sample", || outcome::run_outcome_chains(&d, &med, &basis, &config, chains))?;

    if chains > 1 {
        for (c, f) in fits.iter().enumerate() {
            let p = out.join(format!("outcome_chain{c}.csv"));
            write_outcome(&p, f)?;
            manifest.add_output(&p)?;
            manifest.add_output(meta_path(&p))?;
        }
    }
    let draws: Vec<_> = fits.iter().map(|f| f.draws.iter().map(|d| d.fpca.clone()).collect()).collect();
    let gammas: Vec<Vec<f64>> = fits.iter().map(|f| f.gamma_draws()).collect();
    let summary = summarize_chains(&draws, &[("gamma", gammas)]);
    let merged = outcome::merge(fits);
    let path = out.join("outcome.csv");
    write_outcome(&path, &merged)?;
    let diag = out.join("outcome_diagnostics.csv");
    write_diagnostics(&diag, &summary)?;
    for p in [path.clone(), meta_path(&path), diag] {
        manifest.add_output(p)?;
    }
    let fev = cumulative_mean(&merged.fev);
    report_fev("outcome", &fev);
    let g = merged.gamma_draws();
    println!("gamma posterior mean {:.4}", g.iter().sum::<f64>() / g.len().max(1) as f64);
    manifest.diagnostics = serde_json::json!({
        "mediator_fingerprint": merged.mediator_fingerprint,
        "acceptance": merged.acceptance,
        "mean_cumulative_fev": fev,
        "max_orthonormality_error": merged.max_orthonormality_error,
        "parameters": summary,
    });
    manifest.write(out.join("manifest_fit-outcome.json"))?;
    println!("{} draws -> {}", merged.len(), path.display());
    Ok(())
}

fn cumulative_mean(fev: &[Vec<f64>]) -> Vec<f64> {
    let r = fev.first().map_or(0, Vec::len);
    let mut out = vec![0.0; r];
    for f in fev {
        let mut acc = 0.0;
        for (k, v) in f.iter().enumerate() {
            acc += v;
            out[k] += acc / fev.len() as f64;
        }
    }
    out
}

fn read_pair(a: &PosteriorArgs, manifest: &mut RunManifest) -> Result<(MediatorPosterior, OutcomePosterior)> {
    let (med, _) = read_mediator(&a.mediator_posterior).map_err(|e| reading(&a.mediator_posterior, e))?;
    let (out, _) = read_outcome(&a.outcome_posterior).map_err(|e| reading(&a.outcome_posterior, e))?;
    crate::estimands::check_pairing(&med, &out)?;
    manifest.add_input(&a.mediator_posterior)?;
    manifest.add_input(&a.outcome_posterior)?;
    Ok((med, out))
}

fn parse_times(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad time `{p}`"))))
        .collect()
}

pub fn cmd_estimate(a: &EstimateArgs, file: &FileConfig, out: &Path, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("estimate", args);
    let (med, post) = read_pair(&a.posteriors, &mut manifest)?;
    let points = pick(a.posteriors.grid_points, file.grid_points, DEFAULT_REPORT_POINTS);
    if points < 2 {
        return Err(Error::Config("--grid-points must be at least 2".into()));
    }
    let times = match &a.times {
        Some(s) => parse_times(s)?,
        None => file.times.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75]),
    };
    let scaled: Vec<f64> = times.iter().map(|t| t / med.time_scale).collect();
    manifest.config = serde_json::json!({ "grid_points": points, "times": times });
    let curves = manifest.time("curves", || EffectCurves::compute(&med, &post, &reporting_grid(points)))?;
    for p in curves.write_csv(out)? {
        manifest.add_output(p)?;
    }
    let at_times = EffectCurves::compute(&med, &post, &scaled)?;
    let table = summary_table(&at_times);
    let summary = out.join("summary.txt");
    std::fs::write(&summary, &table)?;
    manifest.add_output(&summary)?;
    manifest.write(out.join("manifest_estimate.json"))?;
    print!("{table}");
    Ok(())
}

pub fn cmd_sensitivity(a: &SensitivityArgs, file: &FileConfig, out: &Path, args: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new("sensitivity", args);
    let (med, post) = read_pair(&a.posteriors, &mut manifest)?;
    let points = pick(a.posteriors.grid_points, file.grid_points, DEFAULT_REPORT_POINTS);
    if points < 2 {
        return Err(Error::Config("--grid-points must be at least 2".into()));
    }
    let rhos = match &a.rho_grid {
        Some(s) => parse_rho_grid(s)?,
        None => file.rho_grid.clone().unwrap_or_else(|| vec![-0.4, -0.2, 0.0, 0.2, 0.4]),
    };
    let include_noise = a.include_noise || file.include_noise.unwrap_or(false);
    manifest.config = serde_json::json!({ "grid_points": points, "rho_grid": rhos, "include_noise": include_noise });
    let grid = reporting_grid(points);
    let family = manifest.time("curves", || sensitivity_curve(&med, &post, &rhos, &grid, include_noise))?;
    let path = out.join("sensitivity.csv");
    family.write_csv(&path)?;
    manifest.add_output(&path)?;

    // Record both closed forms at the midpoint moments.
    let m = estimate_moments(&med, &post, 0.5, include_noise)?;
    manifest.diagnostics = serde_json::json!({
        "breakeven_rho": family.breakeven,
        "midpoint_moments": m,
        "gamma_at_zero": gamma_given_rho(0.0, &m)?,
        "gamma_at_zero_printed_form": gamma_given_rho_printed(0.0, &m).ok(),
    });
    manifest.notes.push(
        "gamma(rho) = Cov/Var_M - rho*sqrt((Var_Y - Cov^2/Var_M)/(Var_M(1-rho^2))), re-derived from the variance \
         identities; the printed form c - sqrt((Var_Y - rho^2 c)/(Var_M(1-rho^2)) + c^2) does not reduce to Cov/Var_M \
         at rho = 0 and is reported for comparison only"
            .into(),
    );
    manifest.write(out.join("manifest_sensitivity.json"))?;
    match family.breakeven {
        Some(r) => println!("band for the mediation effect at the midpoint first covers 0 at rho = {r}"),
        None => println!("band for the mediation effect at the midpoint excludes 0 for every rho on the grid"),
    }
    println!("{} curves -> {}", family.curves.len(), path.display());
    Ok(())
}
