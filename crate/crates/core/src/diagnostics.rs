//! Convergence summaries for scalar parameter traces: split-chain R̂ and
//! effective sample size.

use serde::Serialize;

use crate::fpca::FpcaState;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Splits every chain in half and returns the halves.
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h >= 2 {
            out.push(&c[..h]);
            out.push(&c[c.len() - h..]);
        }
    }
    out
}

/// Potential scale reduction on split chains. `NaN` when fewer than four
/// draws per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    if parts.len() < 2 {
        return f64::NAN;
    }
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| variance(p)).sum::<f64>() / parts.len() as f64;
    let b = n * variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size pooled over chains, using Geyer's initial
/// positive sequence on the averaged autocorrelations.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let chains: Vec<&Vec<f64>> = chains.iter().filter(|c| c.len() >= 4).collect();
    if chains.is_empty() {
        return f64::NAN;
    }
    let n = chains.iter().map(|c| c.len()).min().expect("nonempty");
    let total = (n * chains.len()) as f64;
    let var0: f64 = chains.iter().map(|c| autocovariance(&c[..n], 0)).sum::<f64>() / chains.len() as f64;
    if var0 == 0.0 {
        return total;
    }
    let rho = |lag: usize| chains.iter().map(|c| autocovariance(&c[..n], lag)).sum::<f64>() / chains.len() as f64 / var0;
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    (total / (1.0 + 2.0 * sum)).min(total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl ParameterSummary {
    pub fn from_chains(name: &str, chains: &[Vec<f64>]) -> Self {
        let all: Vec<f64> = chains.iter().flatten().copied().collect();
        let sd = if all.len() > 1 { variance(&all).sqrt() } else { f64::NAN };
        Self {
            name: name.to_string(),
            mean: if all.is_empty() { f64::NAN } else { mean(&all) },
            sd,
            rhat: split_rhat(chains),
            ess: effective_sample_size(chains),
        }
    }
}

/// Sign- and label-invariant scalar traces of an FPCA chain: noise
/// variance, each score variance and each group-mean difference paired
/// with its eigenfunction's grid mean.
pub fn fpca_traces(draws: &[FpcaState]) -> Vec<(String, Vec<f64>)> {
    let Some(first) = draws.first() else { return vec![] };
    let mut out = vec![("noise_var".to_string(), draws.iter().map(|d| d.noise_var).collect())];
    for r in 0..first.components() {
        out.push((format!("score_var.{}", r + 1), draws.iter().map(|d| d.score_variances()[r]).collect()));
        out.push((format!("mean_diff.{}", r + 1), draws.iter().map(|d| d.mean_differences()[r]).collect()));
    }
    out
}

/// Summaries for every trace across chains.
pub fn summarize_chains(chains: &[Vec<FpcaState>], extra: &[(&str, Vec<Vec<f64>>)]) -> Vec<ParameterSummary> {
    let per_chain: Vec<Vec<(String, Vec<f64>)>> = chains.iter().map(|c| fpca_traces(c)).collect();
    let mut out = Vec::new();
    if let Some(first) = per_chain.first() {
        for (k, (name, _)) in first.iter().enumerate() {
            let traces: Vec<Vec<f64>> = per_chain.iter().map(|c| c[k].1.clone()).collect();
            out.push(ParameterSummary::from_chains(name, &traces));
        }
    }
    for (name, traces) in extra {
        out.push(ParameterSummary::from_chains(name, traces));
    }
    out
}
