//! Domain types and ingestion for sparse, irregular longitudinal data.
//!
//! Data arrive in long format, one measurement per row. Times are rescaled
//! to `[0, 1]` on load by dividing by the largest observed time; the scale
//! factor is kept so results can be reported in original units.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subjects with fewer mediator observations than this are flagged by
/// [`validate_dataset`].
pub const SPARSE_SUBJECT_THRESHOLD: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }
}

/// Covariate vector in force from `time` until the next row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub treated: bool,
    pub covariate_rows: Vec<CovariateRow>,
    pub mediator: Vec<Observation>,
    pub outcome: Vec<Observation>,
}

impl Subject {
    /// Builds a subject and checks its invariants: finite values, strictly
    /// increasing observation times, and a covariate row in force at every
    /// observation time.
    pub fn new(
        id: impl Into<String>,
        treated: bool,
        covariate_rows: Vec<CovariateRow>,
        mediator: Vec<Observation>,
        outcome: Vec<Observation>,
    ) -> Result<Self> {
        let id = id.into();
        if covariate_rows.is_empty() {
            return Err(Error::Validation(format!("subject {id}: no covariate rows")));
        }
        check_increasing(&id, "covariate", covariate_rows.iter().map(|r| r.time))?;
        for row in &covariate_rows {
            if row.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "subject {id}: non-finite covariate at time {}",
                    row.time
                )));
            }
        }
        for (role, obs) in [("mediator", &mediator), ("outcome", &outcome)] {
            check_increasing(&id, role, obs.iter().map(|o| o.time))?;
            if let Some(o) = obs.iter().find(|o| !o.value.is_finite()) {
                return Err(Error::Validation(format!(
                    "subject {id}: non-finite {role} value at time {}",
                    o.time
                )));
            }
            if let Some(first) = obs.first() {
                if first.time < covariate_rows[0].time {
                    return Err(Error::Validation(format!(
                        "subject {id}: {role} observation at time {} precedes the first covariate row ({})",
                        first.time, covariate_rows[0].time
                    )));
                }
            }
        }
        Ok(Self { id, treated, covariate_rows, mediator, outcome })
    }

    pub fn treatment(&self) -> u8 {
        u8::from(self.treated)
    }

    /// Covariates in force at `t`: the latest row at or before `t`.
    pub fn covariates_at(&self, t: f64) -> &[f64] {
        let idx = self.covariate_rows.partition_point(|r| r.time <= t);
        &self.covariate_rows[idx.saturating_sub(1)].values
    }

    pub fn mediator_times(&self) -> Vec<f64> {
        self.mediator.iter().map(|o| o.time).collect()
    }

    pub fn outcome_times(&self) -> Vec<f64> {
        self.outcome.iter().map(|o| o.time).collect()
    }
}

fn check_increasing(id: &str, role: &str, times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for t in times {
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(Error::Validation(format!(
                "subject {id}: {role} time {t} outside the normalized range [0, 1]"
            )));
        }
        if t <= prev {
            return Err(Error::Validation(format!(
                "subject {id}: {role} times not strictly increasing at {t}"
            )));
        }
        prev = t;
    }
    Ok(())
}

/// Immutable collection of subjects on the normalized time axis `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalDataset {
    subjects: Vec<Subject>,
    covariate_names: Vec<String>,
    time_scale: f64,
}

impl LongitudinalDataset {
    pub fn new(subjects: Vec<Subject>, covariate_names: Vec<String>, time_scale: f64) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Validation("dataset has no subjects".into()));
        }
        if !(time_scale.is_finite() && time_scale > 0.0) {
            return Err(Error::Validation(format!("invalid time scale {time_scale}")));
        }
        let p = covariate_names.len();
        for s in &subjects {
            if let Some(row) = s.covariate_rows.iter().find(|r| r.values.len() != p) {
                return Err(Error::Validation(format!(
                    "subject {}: covariate row at {} has {} values, expected {p}",
                    s.id,
                    row.time,
                    row.values.len()
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate subject id {}", s.id)));
            }
        }
        Ok(Self { subjects, covariate_names, time_scale })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Original-units length of the normalized horizon.
    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    /// Normalized study horizon.
    pub fn horizon(&self) -> f64 {
        1.0
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        let treated = self.subjects.iter().filter(|s| s.treated).count();
        (self.subjects.len() - treated, treated)
    }

    /// Errors unless both arms hold at least two subjects.
    pub fn require_both_arms(&self) -> Result<()> {
        let (control, treated) = self.arm_sizes();
        if treated < 2 || control < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 subjects per arm, found {control} control and {treated} treated"
            )));
        }
        Ok(())
    }

    pub fn mediator_times(&self) -> Vec<f64> {
        self.subjects.iter().flat_map(|s| s.mediator.iter().map(|o| o.time)).collect()
    }

    pub fn outcome_times(&self) -> Vec<f64> {
        self.subjects.iter().flat_map(|s| s.outcome.iter().map(|o| o.time)).collect()
    }
}

/// Column names of the long-format input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub subject_id: String,
    pub treatment: String,
    pub role: String,
    pub time: String,
    pub name: String,
    pub value: String,
    /// Divide times by this instead of the largest observed time. Must be
    /// at least the largest time.
    #[serde(default)]
    pub time_scale: Option<f64>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            subject_id: "subject_id".into(),
            treatment: "treatment".into(),
            role: "role".into(),
            time: "time".into(),
            name: "name".into(),
            value: "value".into(),
            time_scale: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Role {
    Mediator,
    Outcome,
    Covariate,
}

/// Side information produced while loading.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows merged into another row with the same subject, role, time and name.
    pub collapsed_rows: usize,
    pub warnings: Vec<String>,
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<(LongitudinalDataset, LoadReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_dataset(file, schema)
}

#[derive(Default)]
struct SubjectRows {
    treatment: Option<bool>,
    // (role, time bits, name) -> values; BTreeMap keeps time order for f64 >= 0
    cells: std::collections::BTreeMap<(Role, u64, String), Vec<f64>>,
}

pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<(LongitudinalDataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_id = column(&schema.subject_id)?;
    let c_treat = column(&schema.treatment)?;
    let c_role = column(&schema.role)?;
    let c_time = column(&schema.time)?;
    let c_name = column(&schema.name)?;
    let c_value = column(&schema.value)?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, SubjectRows> = HashMap::new();
    let mut report = LoadReport::default();
    let mut max_time = 0.0_f64;

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse_err = |message: String| Error::Parse { row: line, message };

        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(parse_err("empty subject id".into()));
        }
        let treated = match field(c_treat) {
            "1" | "1.0" => true,
            "0" | "0.0" => false,
            other => return Err(parse_err(format!("treatment must be 0 or 1, got `{other}`"))),
        };
        let role = match field(c_role) {
            "mediator" => Role::Mediator,
            "outcome" => Role::Outcome,
            "covariate" => Role::Covariate,
            other => return Err(parse_err(format!("unknown role `{other}`"))),
        };
        let time: f64 = field(c_time)
            .parse()
            .map_err(|_| parse_err(format!("cannot parse time `{}`", field(c_time))))?;
        if !time.is_finite() {
            return Err(parse_err(format!("non-finite time `{}`", field(c_time))));
        }
        if time < 0.0 {
            return Err(parse_err(format!("negative time {time}")));
        }
        let value: f64 = field(c_value)
            .parse()
            .map_err(|_| parse_err(format!("cannot parse value `{}`", field(c_value))))?;
        if !value.is_finite() {
            return Err(parse_err(format!("non-finite value `{}`", field(c_value))));
        }
        let name = if role == Role::Covariate {
            let n = field(c_name);
            if n.is_empty() {
                return Err(parse_err("covariate row without a name".into()));
            }
            n.to_string()
        } else {
            String::new()
        };

        report.rows_read += 1;
        max_time = max_time.max(time);
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            SubjectRows::default()
        });
        match entry.treatment {
            Some(t) if t != treated => {
                return Err(Error::Validation(format!("subject {id}: inconsistent treatment at line {line}")))
            }
            _ => entry.treatment = Some(treated),
        }
        // +0.0 normalizes -0.0 so the bit pattern orders like the value
        entry.cells.entry((role, (time + 0.0).to_bits(), name)).or_default().push(value);
    }

    if order.is_empty() {
        return Err(Error::Validation("input contains no data rows".into()));
    }
    if max_time <= 0.0 {
        return Err(Error::Validation("all observation times are zero; cannot normalize".into()));
    }
    if let Some(scale) = schema.time_scale {
        if !(scale >= max_time) {
            return Err(Error::Validation(format!(
                "time scale {scale} is smaller than the largest observed time {max_time}"
            )));
        }
        max_time = scale;
    }

    let covariate_names: Vec<String> = rows
        .values()
        .flat_map(|r| r.cells.keys().filter(|k| k.0 == Role::Covariate).map(|k| k.2.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let sr = rows.remove(&id).expect("subject recorded");
        let mut mediator = Vec::new();
        let mut outcome = Vec::new();
        let mut cov_by_time: std::collections::BTreeMap<u64, Vec<Option<f64>>> = Default::default();
        for ((role, bits, name), values) in sr.cells {
            if values.len() > 1 {
                report.collapsed_rows += values.len() - 1;
                let msg = format!(
                    "subject {id}: {} duplicated rows at time {} averaged",
                    values.len(),
                    f64::from_bits(bits)
                );
                log::warn!("{msg}");
                report.warnings.push(msg);
            }
            let value = values.iter().sum::<f64>() / values.len() as f64;
            let t = f64::from_bits(bits) / max_time;
            match role {
                Role::Mediator => mediator.push(Observation::new(t, value)),
                Role::Outcome => outcome.push(Observation::new(t, value)),
                Role::Covariate => {
                    let slot = covariate_names.iter().position(|n| *n == name).expect("name collected");
                    cov_by_time.entry(bits).or_insert_with(|| vec![None; covariate_names.len()])[slot] = Some(value);
                }
            }
        }
        if mediator.is_empty() {
            return Err(Error::Validation(format!("subject {id}: no mediator observations")));
        }
        let covariate_rows = if covariate_names.is_empty() {
            vec![CovariateRow { time: 0.0, values: Vec::new() }]
        } else {
            let mut out = Vec::with_capacity(cov_by_time.len());
            for (bits, values) in cov_by_time {
                let t = f64::from_bits(bits);
                let values = values
                    .into_iter()
                    .enumerate()
                    .map(|(k, v)| {
                        v.ok_or_else(|| {
                            Error::Validation(format!(
                                "subject {id}: covariate `{}` missing at time {t}",
                                covariate_names[k]
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(CovariateRow { time: t / max_time, values });
            }
            out
        };
        subjects.push(Subject::new(id, sr.treatment.unwrap_or(false), covariate_rows, mediator, outcome)?);
    }

    Ok((LongitudinalDataset::new(subjects, covariate_names, max_time)?, report))
}

/// Writes the dataset back in long format, with times in original units.
pub fn write_dataset(path: impl AsRef<Path>, dataset: &LongitudinalDataset) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_dataset_to(std::io::BufWriter::new(file), dataset)
}

pub fn write_dataset_to<W: Write>(writer: W, dataset: &LongitudinalDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "treatment", "role", "time", "name", "value"])?;
    let scale = dataset.time_scale();
    for s in dataset.subjects() {
        let treat = s.treatment().to_string();
        if !dataset.covariate_names().is_empty() {
            for row in &s.covariate_rows {
                let t = (row.time * scale).to_string();
                for (name, v) in dataset.covariate_names().iter().zip(&row.values) {
                    w.write_record([s.id.as_str(), &treat, "covariate", &t, name, &v.to_string()])?;
                }
            }
        }
        for (role, obs) in [("mediator", &s.mediator), ("outcome", &s.outcome)] {
            for o in obs {
                w.write_record([s.id.as_str(), &treat, role, &(o.time * scale).to_string(), "", &o.value.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubjectCounts {
    pub id: String,
    pub treated: bool,
    pub mediator: usize,
    pub outcome: usize,
    pub covariate_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub subjects: Vec<SubjectCounts>,
    pub n_control: usize,
    pub n_treated: usize,
    /// Fraction of observation times with a covariate row at exactly that
    /// time (the rest are carried forward).
    pub covariate_completeness: f64,
    pub warnings: Vec<String>,
    pub fatal: Vec<String>,
}

impl ValidationReport {
    pub fn is_fit_ready(&self) -> bool {
        self.fatal.is_empty()
    }
}

pub fn validate_dataset(d: &LongitudinalDataset) -> ValidationReport {
    let mut warnings = Vec::new();
    let mut fatal = Vec::new();
    let mut exact = 0usize;
    let mut total = 0usize;
    let subjects = d
        .subjects()
        .iter()
        .map(|s| {
            if s.mediator.len() < SPARSE_SUBJECT_THRESHOLD {
                warnings.push(format!(
                    "subject {}: only {} mediator observations (< {SPARSE_SUBJECT_THRESHOLD})",
                    s.id,
                    s.mediator.len()
                ));
            }
            for o in s.mediator.iter().chain(&s.outcome) {
                total += 1;
                if d.covariate_dim() == 0 || s.covariate_rows.iter().any(|r| r.time == o.time) {
                    exact += 1;
                }
            }
            SubjectCounts {
                id: s.id.clone(),
                treated: s.treated,
                mediator: s.mediator.len(),
                outcome: s.outcome.len(),
                covariate_rows: s.covariate_rows.len(),
            }
        })
        .collect();
    let (n_control, n_treated) = d.arm_sizes();
    if n_treated == 0 {
        fatal.push("no treated subjects".to_string());
    } else if n_treated < 2 {
        fatal.push(format!("only {n_treated} treated subject"));
    }
    if n_control == 0 {
        fatal.push("no control subjects".to_string());
    } else if n_control < 2 {
        fatal.push(format!("only {n_control} control subject"));
    }
    ValidationReport {
        subjects,
        n_control,
        n_treated,
        covariate_completeness: if total == 0 { 1.0 } else { exact as f64 / total as f64 },
        warnings,
        fatal,
    }
}
