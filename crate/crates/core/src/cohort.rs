//! Cohort loading, validation and stratification.
//!
//! A cohort is a flat table of patients. Each patient carries a protected
//! group label, an optional stratum (used to pick per-stratum abnormality
//! thresholds), a bag of named measurements, and optionally an allocation
//! score produced by the model under audit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stratum used for records without a stratum label, and the threshold key
/// consulted when a stratum has no dedicated threshold.
pub const DEFAULT_STRATUM: &str = "default";

/// Name under which the age-normalised multimorbidity count is stored.
pub const NORMALISED_MM: &str = "normalised_mm";

/// Reference age for multimorbidity normalisation.
const MM_REFERENCE_AGE: f64 = 65.0;

const RESERVED_COLUMNS: [&str; 6] = ["id", "group", "stratum", "allocation_score", "age", "mm_count"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[serde(alias = "HigherIsWorse", alias = "higher")]
    HigherIsWorse,
    #[serde(alias = "LowerIsWorse", alias = "lower")]
    LowerIsWorse,
}

/// A prognosis marker with its legitimate range and abnormality thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    #[serde(default, skip_serializing)]
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub lb: f64,
    pub ub: f64,
    pub thresholds: BTreeMap<String, f64>,
    pub direction: Direction,
    #[serde(default)]
    pub discrete: bool,
}

impl MeasurementSpec {
    pub fn new(
        name: impl Into<String>,
        unit: impl Into<String>,
        lb: f64,
        ub: f64,
        thresholds: impl IntoIterator<Item = (String, f64)>,
        direction: Direction,
        discrete: bool,
    ) -> Result<Self> {
        let spec = MeasurementSpec {
            name: name.into(),
            unit: unit.into(),
            lb,
            ub,
            thresholds: thresholds.into_iter().collect(),
            direction,
            discrete,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-threshold spec keyed under [`DEFAULT_STRATUM`].
    pub fn with_threshold(
        name: impl Into<String>,
        lb: f64,
        ub: f64,
        threshold: f64,
        direction: Direction,
        discrete: bool,
    ) -> Result<Self> {
        Self::new(
            name,
            "",
            lb,
            ub,
            [(DEFAULT_STRATUM.to_string(), threshold)],
            direction,
            discrete,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lb.is_finite() && self.ub.is_finite() && self.lb < self.ub) {
            return Err(Error::validation(format!(
                "measurement '{}': bounds must satisfy lb < ub (got [{}, {}])",
                self.name, self.lb, self.ub
            )));
        }
        if self.thresholds.is_empty() {
            return Err(Error::validation(format!(
                "measurement '{}': no thresholds declared",
                self.name
            )));
        }
        for (stratum, &t) in &self.thresholds {
            if !(t > self.lb && t < self.ub) {
                return Err(Error::validation(format!(
                    "measurement '{}': threshold {t} for stratum '{stratum}' outside ({}, {})",
                    self.name, self.lb, self.ub
                )));
            }
        }
        Ok(())
    }

    /// Abnormality cutoff for `stratum`.
    ///
    /// With `None`, the default threshold is used, or the only threshold when
    /// exactly one is declared.
    pub fn threshold(&self, stratum: Option<&str>) -> Result<f64> {
        let found = match stratum {
            Some(s) => self.thresholds.get(s).or_else(|| self.thresholds.get(DEFAULT_STRATUM)),
            None => self.thresholds.get(DEFAULT_STRATUM).or_else(|| {
                if self.thresholds.len() == 1 {
                    self.thresholds.values().next()
                } else {
                    None
                }
            }),
        };
        found.copied().ok_or_else(|| {
            Error::validation(format!(
                "measurement '{}': no threshold for stratum '{}'",
                self.name,
                stratum.unwrap_or(DEFAULT_STRATUM)
            ))
        })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lb && v <= self.ub
    }
}

/// Parse a measurement spec file: a JSON object keyed by measurement name.
pub fn parse_specs(json: &str) -> Result<Vec<MeasurementSpec>> {
    let raw: BTreeMap<String, MeasurementSpec> = serde_json::from_str(json)?;
    raw.into_iter()
        .map(|(name, mut spec)| {
            spec.name = name;
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

pub fn load_specs(path: impl AsRef<Path>) -> Result<Vec<MeasurementSpec>> {
    parse_specs(&std::fs::read_to_string(path)?)
}

pub fn specs_to_json(specs: &[MeasurementSpec]) -> Result<String> {
    let map: BTreeMap<&str, &MeasurementSpec> = specs.iter().map(|s| (s.name.as_str(), s)).collect();
    Ok(serde_json::to_string_pretty(&map)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub group_label: String,
    pub stratum_label: Option<String>,
    pub measurements: BTreeMap<String, f64>,
    pub allocation_score: Option<f64>,
    pub age: Option<f64>,
    pub mm_count: Option<u32>,
}

impl PatientRecord {
    pub fn new(id: impl Into<String>, group: impl Into<String>) -> Self {
        PatientRecord {
            patient_id: id.into(),
            group_label: group.into(),
            stratum_label: None,
            measurements: BTreeMap::new(),
            allocation_score: None,
            age: None,
            mm_count: None,
        }
    }

    pub fn with_measurement(mut self, name: impl Into<String>, value: f64) -> Self {
        self.measurements.insert(name.into(), value);
        self
    }

    pub fn with_stratum(mut self, stratum: impl Into<String>) -> Self {
        self.stratum_label = Some(stratum.into());
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.allocation_score = Some(score);
        self
    }

    pub fn effective_stratum(&self) -> &str {
        self.stratum_label.as_deref().unwrap_or(DEFAULT_STRATUM)
    }

    pub fn measurement(&self, name: &str) -> Option<f64> {
        self.measurements.get(name).copied()
    }
}

/// `#MM × 65 / age`.
pub fn derive_normalised_mm(record: &PatientRecord) -> Result<f64> {
    match (record.mm_count, record.age) {
        (Some(mm), Some(age)) if age > 0.0 => Ok(mm as f64 * MM_REFERENCE_AGE / age),
        (Some(_), Some(age)) => Err(Error::validation(format!(
            "record '{}': age must be positive, got {age}",
            record.patient_id
        ))),
        _ => Err(Error::validation(format!(
            "record '{}': normalised MM needs both age and mm_count",
            record.patient_id
        ))),
    }
}

/// An immutable, validated set of patient records.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    records: Vec<PatientRecord>,
    specs: BTreeMap<String, MeasurementSpec>,
    groups: BTreeSet<String>,
    label: Option<String>,
}

impl Cohort {
    /// Build and validate a cohort. When `groups` is `None` the declared
    /// label set is the set of labels observed in `records`.
    pub fn new(
        records: Vec<PatientRecord>,
        specs: impl IntoIterator<Item = MeasurementSpec>,
        groups: Option<BTreeSet<String>>,
    ) -> Result<Self> {
        let specs: BTreeMap<String, MeasurementSpec> = specs.into_iter().map(|s| (s.name.clone(), s)).collect();
        for spec in specs.values() {
            spec.validate()?;
        }
        let groups = groups.unwrap_or_else(|| records.iter().map(|r| r.group_label.clone()).collect());
        let cohort = Cohort {
            records,
            specs,
            groups,
            label: None,
        };
        for record in &cohort.records {
            cohort.validate_record(record)?;
        }
        Ok(cohort)
    }

    fn validate_record(&self, r: &PatientRecord) -> Result<()> {
        let id = &r.patient_id;
        if !self.groups.contains(&r.group_label) {
            return Err(Error::validation(format!(
                "record '{id}': unknown group label '{}'",
                r.group_label
            )));
        }
        if let Some(a) = r.allocation_score {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::validation(format!(
                    "record '{id}': allocation_score {a} outside [0, 1]"
                )));
            }
        }
        if let Some(age) = r.age {
            if !(age > 0.0 && age.is_finite()) {
                return Err(Error::validation(format!("record '{id}': age {age} must be positive")));
            }
        }
        for (name, &v) in &r.measurements {
            let spec = self
                .specs
                .get(name)
                .ok_or_else(|| Error::validation(format!("record '{id}': no spec for measurement '{name}'")))?;
            if !spec.contains(v) {
                return Err(Error::validation(format!(
                    "record '{id}': measurement '{name}' = {v} outside [{}, {}]",
                    spec.lb, spec.ub
                )));
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn specs(&self) -> &BTreeMap<String, MeasurementSpec> {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Result<&MeasurementSpec> {
        self.specs
            .get(name)
            .ok_or_else(|| Error::validation(format!("unknown measurement '{name}'")))
    }

    pub fn groups(&self) -> &BTreeSet<String> {
        &self.groups
    }

    /// A cohort with the same specs and declared groups over other records.
    /// Records are assumed to already satisfy this cohort's invariants.
    pub(crate) fn with_records(&self, records: Vec<PatientRecord>) -> Cohort {
        Cohort {
            records,
            specs: self.specs.clone(),
            groups: self.groups.clone(),
            label: self.label.clone(),
        }
    }

    /// Name used in reports and error messages: the group label after a
    /// split, otherwise the single label shared by all records, otherwise
    /// `"cohort"`.
    pub fn label(&self) -> &str {
        if let Some(l) = &self.label {
            return l;
        }
        match self.records.first() {
            Some(first) if self.records.iter().all(|r| r.group_label == first.group_label) => &first.group_label,
            _ => "cohort",
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Replace records, re-running validation.
    pub fn replace_records(&self, records: Vec<PatientRecord>) -> Result<Cohort> {
        let mut c = Cohort::new(records, self.specs.values().cloned(), Some(self.groups.clone()))?;
        c.label = self.label.clone();
        Ok(c)
    }

    /// Values of `measurement` for records in `stratum` (all records when
    /// `None`), plus the number of matching records lacking the value.
    pub fn measurement_values(&self, measurement: &str, stratum: Option<&str>) -> (Vec<f64>, usize) {
        let mut values = Vec::new();
        let mut missing = 0;
        for r in &self.records {
            if let Some(s) = stratum {
                if r.effective_stratum() != s {
                    continue;
                }
            }
            match r.measurement(measurement) {
                Some(v) => values.push(v),
                None => missing += 1,
            }
        }
        (values, missing)
    }

    /// Strata present among the records, in sorted order.
    pub fn strata(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.effective_stratum()).collect()
    }

    pub fn restrict_to_stratum(&self, stratum: &str) -> Cohort {
        self.with_records(
            self.records
                .iter()
                .filter(|r| r.effective_stratum() == stratum)
                .cloned()
                .collect(),
        )
    }

    /// Partition into the records labelled `group_a` and `group_b`. Records
    /// with any other label are dropped. Either side may be empty as long as
    /// its label is declared.
    pub fn split_by_group(&self, group_a: &str, group_b: &str) -> Result<(Cohort, Cohort)> {
        for label in [group_a, group_b] {
            if !self.groups.contains(label) {
                return Err(Error::validation(format!(
                    "group label '{label}' is not present in the cohort"
                )));
            }
        }
        let pick = |label: &str| {
            self.records
                .iter()
                .filter(|r| r.group_label == label)
                .cloned()
                .collect::<Vec<_>>()
        };
        Ok((
            self.with_records(pick(group_a)).with_label(group_a),
            self.with_records(pick(group_b)).with_label(group_b),
        ))
    }

    /// Store `normalised_mm` on every record that has both age and mm_count.
    /// Needs a spec named [`NORMALISED_MM`]. Returns the new cohort and the
    /// number of records skipped for missing inputs.
    pub fn with_normalised_mm(&self) -> Result<(Cohort, usize)> {
        self.spec(NORMALISED_MM)?;
        let mut skipped = 0;
        let mut records = self.records.clone();
        for r in &mut records {
            match derive_normalised_mm(r) {
                Ok(v) => {
                    r.measurements.insert(NORMALISED_MM.to_string(), v);
                }
                Err(_) => skipped += 1,
            }
        }
        Ok((self.replace_records(records)?, skipped))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let names: Vec<&str> = self.specs.keys().map(String::as_str).collect();
        let mut header: Vec<&str> = RESERVED_COLUMNS.to_vec();
        header.extend(&names);
        w.write_record(&header).map_err(csv_io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![
                r.patient_id.clone(),
                r.group_label.clone(),
                r.stratum_label.clone().unwrap_or_default(),
                opt(r.allocation_score),
                opt(r.age),
                r.mm_count.map(|m| m.to_string()).unwrap_or_default(),
            ];
            row.extend(names.iter().map(|n| opt(r.measurement(n))));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Load a cohort CSV. Group labels are taken from the data.
pub fn load_cohort(path: impl AsRef<Path>, specs: &[MeasurementSpec]) -> Result<Cohort> {
    read_cohort(std::fs::File::open(path)?, specs, None)
}

/// Read a cohort CSV from any reader.
///
/// Required columns are `id` and `group`; `stratum`, `allocation_score`,
/// `age` and `mm_count` are optional; every other column must name a
/// measurement in `specs`. Empty cells are missing values.
pub fn read_cohort<R: Read>(
    reader: R,
    specs: &[MeasurementSpec],
    declared_groups: Option<&BTreeSet<String>>,
) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("id").ok_or_else(|| Error::Parse {
        row: 1,
        message: "missing required column 'id'".into(),
    })?;
    let group_col = col("group").ok_or_else(|| Error::Parse {
        row: 1,
        message: "missing required column 'group'".into(),
    })?;
    let stratum_col = col("stratum");
    let score_col = col("allocation_score");
    let age_col = col("age");
    let mm_col = col("mm_count");

    let spec_names: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    let mut measurement_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if RESERVED_COLUMNS.contains(&h) {
            continue;
        }
        if !spec_names.contains(h) {
            return Err(Error::validation(format!("no spec for measurement column '{h}'")));
        }
        measurement_cols.push((i, h.to_string()));
    }

    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row_no = idx + 2;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        let cell = |i: Option<usize>| i.and_then(|i| row.get(i)).filter(|s| !s.is_empty());
        let num = |i: Option<usize>, what: &str| -> Result<Option<f64>> {
            cell(i)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            row: row_no,
                            message: format!("column '{what}': cannot parse '{s}' as a number"),
                        })
                })
                .transpose()
        };

        let id = cell(Some(id_col)).ok_or_else(|| Error::Parse {
            row: row_no,
            message: "empty id".into(),
        })?;
        let group = cell(Some(group_col)).ok_or_else(|| Error::Parse {
            row: row_no,
            message: "empty group".into(),
        })?;
        let mut record = PatientRecord::new(id, group);
        record.stratum_label = cell(stratum_col).map(str::to_string);
        record.allocation_score = num(score_col, "allocation_score")?;
        record.age = num(age_col, "age")?;
        record.mm_count = cell(mm_col)
            .map(|s| {
                s.parse::<u32>().map_err(|_| Error::Parse {
                    row: row_no,
                    message: format!("column 'mm_count': cannot parse '{s}' as a count"),
                })
            })
            .transpose()?;
        for (i, name) in &measurement_cols {
            if let Some(v) = num(Some(*i), name)? {
                record.measurements.insert(name.clone(), v);
            }
        }
        records.push(record);
    }
    Cohort::new(records, specs.iter().cloned(), declared_groups.cloned())
}
