//! Fit the mediator model on simulated data, check how well the latent
//! trajectories are recovered and summarize convergence over two chains.
//!
//! ```text
//! cargo run --release --example fit_mediator -- [seed] [iterations]
//! ```

use fpca_mediation::basis::BasisConfig;
use fpca_mediation::diagnostics::summarize_chains;
use fpca_mediation::estimands::{mediator_effect_curve, reporting_grid};
use fpca_mediation::linalg::correlation;
use fpca_mediation::mediator::{impute_process, merge, run_chains};
use fpca_mediation::simulate::{scenario_preset, simulate_dataset};
use fpca_mediation::{ChainConfig, ScenarioConfig, SplineBasis};

fn main() -> fpca_mediation::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(1, |s| s.parse().expect("seed"));
    let iterations: usize = args.get(1).map_or(2000, |s| s.parse().expect("iterations"));

    let (data, truth) = simulate_dataset(&ScenarioConfig { seed, ..scenario_preset(1)? })?;
    let basis = SplineBasis::from_times(&data.mediator_times(), &BasisConfig::default())?;
    let config = ChainConfig { seed, iterations, burn_in: iterations / 2, ..Default::default() };
    let chains = run_chains(&data, &basis, &config, 2)?;

    let draws: Vec<_> = chains.iter().map(|c| c.draws.clone()).collect();
    println!("{:<14} {:>8} {:>8} {:>7} {:>7}", "parameter", "mean", "sd", "rhat", "ess");
    for s in summarize_chains(&draws, &[]) {
        println!("{:<14} {:>8.3} {:>8.3} {:>7.3} {:>7.0}", s.name, s.mean, s.sd, s.rhat, s.ess);
    }
    let post = merge(chains);
    println!("cumulative FEV {:?}", post.mean_cumulative_fev().iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());

    // Posterior-mean latent trajectories against the simulated truth.
    let (mut imputed, mut latent) = (Vec::new(), Vec::new());
    for (i, (s, path)) in data.subjects().iter().zip(&truth.paths).enumerate() {
        let times = s.mediator_times();
        let mut mean = vec![0.0; times.len()];
        for d in &post.draws {
            for (m, v) in mean.iter_mut().zip(impute_process(d, &post.basis, i, s, &times)) {
                *m += v / post.len() as f64;
            }
        }
        imputed.extend(mean);
        latent.extend(times.iter().map(|&t| path.mediator_at(t).expect("sampled time")));
    }
    println!("correlation of imputed and latent mediator values: {:.3}", correlation(&imputed, &latent));

    let curve = mediator_effect_curve(&post, &reporting_grid(101))?;
    println!(
        "treatment effect on the mediator: MAE {:.3}, band coverage {:.2}",
        curve.mean_absolute_error(&truth.curves.mediator),
        curve.coverage(&truth.curves.mediator)
    );
    Ok(())
}
