//! Posterior files: a CSV with one row per draw and parameter block
//! (`draw, block, v1, v2, …`) next to a JSON file holding the basis, the
//! configuration and the diagnostics.
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a
//! file back gives bit-identical draws. A posterior's fingerprint is the
//! SHA-256 of its CSV bytes.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{BasisSpec, SplineBasis};
use crate::error::{Error, Result};
use crate::fpca::{ChainConfig, FpcaState, Hyper};
use crate::mediator::MediatorPosterior;
use crate::outcome::{OutcomeConfig, OutcomeDraw, OutcomePosterior};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MediatorMeta {
    pub kind: String,
    pub basis: BasisSpec,
    pub config: ChainConfig,
    pub covariate_names: Vec<String>,
    pub time_scale: f64,
    pub n_subjects: usize,
    pub acceptance: [f64; 4],
    pub max_orthonormality_error: f64,
    pub mean_cumulative_fev: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutcomeMeta {
    pub kind: String,
    pub basis: BasisSpec,
    pub config: OutcomeConfig,
    pub covariate_names: Vec<String>,
    pub time_scale: f64,
    pub n_subjects: usize,
    pub mediator_fingerprint: String,
    pub acceptance: [f64; 4],
    pub max_orthonormality_error: f64,
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn push_row(w: &mut csv::Writer<Vec<u8>>, draw: usize, block: &str, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut rec = vec![draw.to_string(), block.to_string()];
    rec.extend(values.map(fmt));
    w.write_record(&rec)?;
    Ok(())
}

fn write_state(w: &mut csv::Writer<Vec<u8>>, k: usize, s: &FpcaState) -> Result<()> {
    for (r, phi) in s.phi.iter().enumerate() {
        push_row(w, k, &format!("phi.{r}"), phi.iter().copied())?;
    }
    push_row(w, k, "smoothness", s.smoothness.iter().copied())?;
    push_row(w, k, "scores", s.scores.iter().copied())?;
    push_row(w, k, "mean_control", s.mean_control.iter().copied())?;
    push_row(w, k, "mean_treated", s.mean_treated.iter().copied())?;
    push_row(w, k, "beta", s.beta.iter().copied())?;
    push_row(w, k, "noise_var", std::iter::once(s.noise_var))?;
    push_row(w, k, "score_increments", s.score_increments.iter().copied())?;
    push_row(w, k, "mean_increments", s.mean_increments.iter().copied())?;
    push_row(w, k, "local_scales", s.local_scales.iter().copied())?;
    let h = s.hyper;
    push_row(w, k, "hyper", [h.a1, h.a2, h.a_tau1, h.a_tau2].into_iter())?;
    Ok(())
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().flexible(true).has_headers(false).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn mediator_csv_bytes(post: &MediatorPosterior) -> Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(["draw", "block", "values"])?;
    for (k, s) in post.draws.iter().enumerate() {
        write_state(&mut w, k, s)?;
        push_row(&mut w, k, "fev", post.fev[k].iter().copied())?;
    }
    finish(w)
}

pub fn outcome_csv_bytes(post: &OutcomePosterior) -> Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(["draw", "block", "values"])?;
    for (k, d) in post.draws.iter().enumerate() {
        write_state(&mut w, k, &d.fpca)?;
        push_row(&mut w, k, "fev", post.fev[k].iter().copied())?;
        push_row(&mut w, k, "gamma", std::iter::once(d.gamma))?;
        push_row(&mut w, k, "mediator_draw", std::iter::once(d.mediator_draw as f64))?;
    }
    finish(w)
}

pub fn fingerprint_mediator(post: &MediatorPosterior) -> String {
    sha256_hex(&mediator_csv_bytes(post).expect("in-memory CSV serialization"))
}

/// Path of the metadata file belonging to a posterior CSV.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV and its metadata; returns the CSV fingerprint.
pub fn write_mediator(path: impl AsRef<Path>, post: &MediatorPosterior) -> Result<String> {
    let bytes = mediator_csv_bytes(post)?;
    std::fs::write(path.as_ref(), &bytes)?;
    let meta = MediatorMeta {
        kind: "mediator".into(),
        basis: post.basis.spec(),
        config: post.config.clone(),
        covariate_names: post.covariate_names.clone(),
        time_scale: post.time_scale,
        n_subjects: post.draws.first().map_or(0, |d| d.scores.nrows()),
        acceptance: post.acceptance,
        max_orthonormality_error: post.max_orthonormality_error,
        mean_cumulative_fev: post.mean_cumulative_fev(),
    };
    std::fs::write(meta_path(path.as_ref()), serde_json::to_string_pretty(&meta)?)?;
    Ok(sha256_hex(&bytes))
}

pub fn write_outcome(path: impl AsRef<Path>, post: &OutcomePosterior) -> Result<String> {
    let bytes = outcome_csv_bytes(post)?;
    std::fs::write(path.as_ref(), &bytes)?;
    let meta = OutcomeMeta {
        kind: "outcome".into(),
        basis: post.basis.spec(),
        config: post.config.clone(),
        covariate_names: post.covariate_names.clone(),
        time_scale: post.time_scale,
        n_subjects: post.draws.first().map_or(0, |d| d.fpca.scores.nrows()),
        mediator_fingerprint: post.mediator_fingerprint.clone(),
        acceptance: post.acceptance,
        max_orthonormality_error: post.max_orthonormality_error,
    };
    std::fs::write(meta_path(path.as_ref()), serde_json::to_string_pretty(&meta)?)?;
    Ok(sha256_hex(&bytes))
}

/// Parsed rows grouped by draw.
struct Blocks {
    draws: Vec<Vec<(String, Vec<f64>)>>,
}

fn read_blocks(bytes: &[u8]) -> Result<Blocks> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(bytes);
    let mut draws: Vec<Vec<(String, Vec<f64>)>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |m: String| Error::Parse { row, message: m };
        let k: usize = rec.get(0).unwrap_or("").parse().map_err(|_| perr("bad draw index".into()))?;
        let block = rec.get(1).ok_or_else(|| perr("missing block name".into()))?.to_string();
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| perr(format!("bad number {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if k == draws.len() {
            draws.push(Vec::new());
        } else if k + 1 != draws.len() {
            return Err(perr(format!("draw {k} out of order")));
        }
        draws[k].push((block, values));
    }
    Ok(Blocks { draws })
}

fn take<'a>(rows: &'a [(String, Vec<f64>)], name: &str) -> Result<&'a [f64]> {
    rows.iter()
        .find(|(b, _)| b == name)
        .map(|(_, v)| v.as_slice())
        .ok_or_else(|| Error::Validation(format!("posterior draw lacks block {name:?}")))
}

fn read_state(rows: &[(String, Vec<f64>)], components: usize, n: usize) -> Result<FpcaState> {
    let phi = (0..components)
        .map(|r| take(rows, &format!("phi.{r}")).map(DVector::from_column_slice))
        .collect::<Result<Vec<_>>>()?;
    let scores = take(rows, "scores")?;
    let scales = take(rows, "local_scales")?;
    if scores.len() != n * components || scales.len() != n * components {
        return Err(Error::Validation("score block has the wrong size".into()));
    }
    let h = take(rows, "hyper")?;
    if h.len() != 4 {
        return Err(Error::Validation("hyper block must have 4 entries".into()));
    }
    Ok(FpcaState {
        phi,
        smoothness: take(rows, "smoothness")?.to_vec(),
        scores: DMatrix::from_column_slice(n, components, scores),
        mean_control: DVector::from_column_slice(take(rows, "mean_control")?),
        mean_treated: DVector::from_column_slice(take(rows, "mean_treated")?),
        beta: DVector::from_column_slice(take(rows, "beta")?),
        noise_var: take(rows, "noise_var")?[0],
        score_increments: take(rows, "score_increments")?.to_vec(),
        mean_increments: take(rows, "mean_increments")?.to_vec(),
        local_scales: DMatrix::from_column_slice(n, components, scales),
        hyper: Hyper { a1: h[0], a2: h[1], a_tau1: h[2], a_tau2: h[3] },
    })
}

/// Reads a mediator posterior; also returns the file fingerprint.
pub fn read_mediator(path: impl AsRef<Path>) -> Result<(MediatorPosterior, String)> {
    let bytes = std::fs::read(path.as_ref())?;
    let meta: MediatorMeta = serde_json::from_slice(&std::fs::read(meta_path(path.as_ref()))?)?;
    if meta.kind != "mediator" {
        return Err(Error::Validation(format!("{} is not a mediator posterior", path.as_ref().display())));
    }
    let blocks = read_blocks(&bytes)?;
    let r = meta.config.components;
    let mut draws = Vec::with_capacity(blocks.draws.len());
    let mut fev = Vec::with_capacity(blocks.draws.len());
    for rows in &blocks.draws {
        draws.push(read_state(rows, r, meta.n_subjects)?);
        fev.push(take(rows, "fev")?.to_vec());
    }
    let post = MediatorPosterior {
        draws,
        basis: SplineBasis::from_spec(&meta.basis)?,
        config: meta.config,
        covariate_names: meta.covariate_names,
        time_scale: meta.time_scale,
        fev,
        acceptance: meta.acceptance,
        max_orthonormality_error: meta.max_orthonormality_error,
    };
    Ok((post, sha256_hex(&bytes)))
}

pub fn read_outcome(path: impl AsRef<Path>) -> Result<(OutcomePosterior, String)> {
    let bytes = std::fs::read(path.as_ref())?;
    let meta: OutcomeMeta = serde_json::from_slice(&std::fs::read(meta_path(path.as_ref()))?)?;
    if meta.kind != "outcome" {
        return Err(Error::Validation(format!("{} is not an outcome posterior", path.as_ref().display())));
    }
    let blocks = read_blocks(&bytes)?;
    let r = meta.config.chain.components;
    let mut draws = Vec::with_capacity(blocks.draws.len());
    let mut fev = Vec::with_capacity(blocks.draws.len());
    for rows in &blocks.draws {
        draws.push(OutcomeDraw {
            fpca: read_state(rows, r, meta.n_subjects)?,
            gamma: take(rows, "gamma")?[0],
            mediator_draw: take(rows, "mediator_draw")?[0] as usize,
        });
        fev.push(take(rows, "fev")?.to_vec());
    }
    let post = OutcomePosterior {
        draws,
        basis: SplineBasis::from_spec(&meta.basis)?,
        config: meta.config,
        covariate_names: meta.covariate_names,
        time_scale: meta.time_scale,
        mediator_fingerprint: meta.mediator_fingerprint,
        fev,
        acceptance: meta.acceptance,
        max_orthonormality_error: meta.max_orthonormality_error,
    };
    Ok((post, sha256_hex(&bytes)))
}
