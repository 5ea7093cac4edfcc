//! Simulate a scenario, fit mediator and outcome models, and compare the
//! effect curves with the known truth.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [scenario] [seed] [iterations]
//! ```

use std::time::Instant;

use fpca_mediation::basis::BasisConfig;
use fpca_mediation::estimands::{reporting_grid, EffectCurves};
use fpca_mediation::outcome::{run_outcome_chain, Imputation, OutcomeConfig};
use fpca_mediation::simulate::{scenario_preset, simulate_dataset};
use fpca_mediation::{mediator, ChainConfig, SplineBasis};

fn main() -> fpca_mediation::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario: u8 = args.first().map_or(1, |s| s.parse().expect("scenario"));
    let seed: u64 = args.get(1).map_or(1, |s| s.parse().expect("seed"));
    let iterations: usize = args.get(2).map_or(4000, |s| s.parse().expect("iterations"));
    let imputation = match args.get(3).map(String::as_str) {
        Some("draw") => Imputation::Draw,
        _ => Imputation::PosteriorMean,
    };

    let cfg = scenario_preset(scenario)?;
    let (data, truth) = simulate_dataset(&fpca_mediation::ScenarioConfig { seed, ..cfg })?;
    let chain = ChainConfig { seed, iterations, burn_in: iterations / 2, ..Default::default() };

    let start = Instant::now();
    let med_basis = SplineBasis::from_times(&data.mediator_times(), &BasisConfig::default())?;
    let med = mediator::run_chain(&data, &med_basis, &chain)?;
    let out_basis = SplineBasis::from_times(&data.outcome_times(), &BasisConfig::default())?;
    let out = run_outcome_chain(&data, &med, &out_basis, &OutcomeConfig { chain, imputation, ..Default::default() })?;
    let curves = EffectCurves::compute(&med, &out, &reporting_grid(101))?;
    println!("scenario {scenario}, seed {seed}: fitted in {:.1?}", start.elapsed());

    let gamma = out.gamma_draws();
    println!("gamma posterior mean {:.3}", gamma.iter().sum::<f64>() / gamma.len() as f64);
    println!("mediator cumulative FEV {:?}", med.mean_cumulative_fev());
    for (curve, target) in [
        (&curves.mediator, &truth.curves.mediator),
        (&curves.acme, &truth.curves.acme),
        (&curves.total, &truth.curves.total),
    ] {
        println!(
            "{:<9} MAE {:.3}  band coverage {:.2}",
            curve.name,
            curve.mean_absolute_error(target),
            curve.coverage(target)
        );
    }
    Ok(())
}
