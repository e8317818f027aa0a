//! Synthetic validation: null-inequality datasets and controlled
//! improvement sweeps.
//!
//! A null dataset samples a fraction of a base cohort, keeps one group, and
//! relabels a random half of it as the other group. Both halves come from the
//! same population, so any measured inequality is noise. An improvement
//! sweep then pulls one half's readings toward a healthy reference with
//! increasing strength and checks that the measured inequality falls.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Direction, MeasurementSpec, PatientRecord, NORMALISED_MM};
use crate::density::linspace;
use crate::deterioration::{k_step_index, DeteriorationConfig};
use crate::error::{Error, Result};
use crate::inequality::{ratio_minus_one, spearman, summarize_runs, CiMethod, MultiRunSummary};

pub const CREATININE_MAX: &str = "creatinine_max";
pub const CREATININE_MIN: &str = "creatinine_min";
pub const ALT_MAX: &str = "alt_max";
pub const MULTIMORBIDITY: &str = "multimorbidity";

/// Smallest number of source-group records a null dataset may hold.
pub const MIN_NULL_SOURCE: usize = 50;

/// Independent seed for run `run` of an experiment seeded with `master`.
/// Each run reads its own ChaCha stream, so adding runs leaves earlier runs
/// unchanged.
pub fn run_seed(master: u64, run: usize) -> u64 {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    rng.set_stream(run as u64);
    rng.next_u64()
}

/// Measurement specs for the internal generator. Creatinine is in µmol/L
/// with sex-specific normal ranges; ALT in U/L.
pub fn synthetic_specs() -> Vec<MeasurementSpec> {
    let sexed = |male: f64, female: f64| [("male".to_string(), male), ("female".to_string(), female)];
    vec![
        MeasurementSpec::new(
            CREATININE_MAX,
            "umol/L",
            0.0,
            1000.0,
            sexed(91.9, 119.3),
            Direction::HigherIsWorse,
            false,
        ),
        MeasurementSpec::new(
            CREATININE_MIN,
            "umol/L",
            0.0,
            1000.0,
            sexed(52.2, 65.4),
            Direction::LowerIsWorse,
            false,
        ),
        MeasurementSpec::new(
            ALT_MAX,
            "U/L",
            0.0,
            1000.0,
            sexed(30.0, 19.0),
            Direction::HigherIsWorse,
            false,
        ),
        MeasurementSpec::with_threshold(MULTIMORBIDITY, 0.0, 17.0, 2.0, Direction::HigherIsWorse, true),
        MeasurementSpec::with_threshold(NORMALISED_MM, 0.0, 100.0, 2.0, Direction::HigherIsWorse, false),
    ]
    .into_iter()
    .collect::<Result<Vec<_>>>()
    .expect("built-in specs are valid")
}

/// Normal-range midpoints used as improvement targets.
pub fn default_healthy_refs() -> BTreeMap<String, f64> {
    [
        (CREATININE_MAX, (52.2 + 91.9) / 2.0),
        (CREATININE_MIN, (52.2 + 91.9) / 2.0),
        (ALT_MAX, 15.0),
        (MULTIMORBIDITY, 0.0),
        (NORMALISED_MM, 0.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseCohortConfig {
    pub n: usize,
    pub male_fraction: f64,
    /// Mean multimorbidity count.
    pub mm_rate: f64,
    pub seed: u64,
}

impl Default for BaseCohortConfig {
    fn default() -> Self {
        BaseCohortConfig {
            n: 60_000,
            male_fraction: 0.5,
            mm_rate: 6.0,
            seed: 2022,
        }
    }
}

/// Generate an ICU-like base cohort: lognormal creatinine and ALT readings,
/// Poisson multimorbidity counts and an allocation score that rises with
/// creatinine.
pub fn generate_base_cohort(config: &BaseCohortConfig) -> Result<Cohort> {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mm = Poisson::new(config.mm_rate).map_err(|e| Error::validation(e.to_string()))?;
    let lognormal = |median: f64, sigma: f64| LogNormal::new(median.ln(), sigma).expect("valid lognormal");
    let (cmax_m, cmax_f) = (lognormal(95.0, 0.45), lognormal(78.0, 0.45));
    let (alt_m, alt_f) = (lognormal(28.0, 0.7), lognormal(22.0, 0.7));

    let records = (0..config.n)
        .map(|i| {
            let male = rng.gen_bool(config.male_fraction);
            let sex = if male { "male" } else { "female" };
            let age: f64 = rng.gen_range(18.0..90.0);
            let cmax = if male {
                cmax_m.sample(&mut rng)
            } else {
                cmax_f.sample(&mut rng)
            }
            .clamp(0.0, 1000.0);
            let cmin = cmax * rng.gen_range(0.55..0.95);
            let alt = if male {
                alt_m.sample(&mut rng)
            } else {
                alt_f.sample(&mut rng)
            }
            .clamp(0.0, 1000.0);
            let count = (mm.sample(&mut rng) as u32).min(17);
            let z = (cmax / 95.0).ln() / 0.45;
            let score = 1.0 / (1.0 + (-(1.2 * z + 0.8 * noise.sample(&mut rng))).exp());

            let mut r = PatientRecord::new(format!("p{i:06}"), sex)
                .with_stratum(sex)
                .with_score(score)
                .with_measurement(CREATININE_MAX, cmax)
                .with_measurement(CREATININE_MIN, cmin)
                .with_measurement(ALT_MAX, alt)
                .with_measurement(MULTIMORBIDITY, count as f64);
            r.age = Some(age);
            r.mm_count = Some(count);
            r
        })
        .collect();
    let groups: BTreeSet<String> = ["male".to_string(), "female".to_string()].into();
    Cohort::new(records, synthetic_specs(), Some(groups))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub sample_fraction: f64,
    pub relabel_fraction: f64,
    pub source_group: String,
    pub target_group: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            sample_fraction: 0.10,
            relabel_fraction: 0.50,
            source_group: "male".into(),
            target_group: "female".into(),
        }
    }
}

impl SynthSpec {
    pub fn with_seed(&self, seed: u64) -> SynthSpec {
        SynthSpec { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        for (what, f) in [
            ("sample_fraction", self.sample_fraction),
            ("relabel_fraction", self.relabel_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::validation(format!("{what} must be in (0, 1], got {f}")));
            }
        }
        if self.source_group == self.target_group {
            return Err(Error::validation("source and target groups must differ"));
        }
        Ok(())
    }
}

/// Subsample `base`, keep the source group, and relabel a random share of it
/// as the target group. Measurements are untouched.
pub fn generate_null_dataset(base: &Cohort, spec: &SynthSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let n = base.len();
    let take = (spec.sample_fraction * n as f64).floor() as usize;
    let mut picked: Vec<usize> = sample_indices(&mut rng, n, take).into_vec();
    picked.sort_unstable();
    let mut records: Vec<PatientRecord> = picked
        .into_iter()
        .map(|i| &base.records()[i])
        .filter(|r| r.group_label == spec.source_group)
        .cloned()
        .collect();
    if records.len() < MIN_NULL_SOURCE {
        return Err(Error::InsufficientData {
            what: format!("null dataset source group '{}'", spec.source_group),
            n: records.len(),
            need: MIN_NULL_SOURCE,
        });
    }
    let relabel = (spec.relabel_fraction * records.len() as f64).round() as usize;
    for i in sample_indices(&mut rng, records.len(), relabel) {
        records[i].group_label = spec.target_group.clone();
    }
    let groups: BTreeSet<String> = [spec.source_group.clone(), spec.target_group.clone()].into();
    Cohort::new(records, base.specs().values().cloned(), Some(groups))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSpec {
    pub strengths: Vec<f64>,
    pub target_group: String,
    pub healthy_ref: BTreeMap<String, f64>,
}

impl Default for ImprovementSpec {
    fn default() -> Self {
        ImprovementSpec {
            strengths: linspace(0.0, 0.5, 10),
            target_group: "female".into(),
            healthy_ref: default_healthy_refs(),
        }
    }
}

impl ImprovementSpec {
    fn validate(&self) -> Result<()> {
        if self.strengths.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::validation("improvement strengths must lie in [0, 1)"));
        }
        if self.strengths.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::validation("improvement strengths must be sorted ascending"));
        }
        Ok(())
    }

    fn reference(&self, spec: &MeasurementSpec) -> Result<f64> {
        let r = *self
            .healthy_ref
            .get(&spec.name)
            .ok_or_else(|| Error::validation(format!("no healthy reference for measurement '{}'", spec.name)))?;
        if !spec.contains(r) {
            return Err(Error::validation(format!(
                "healthy reference {r} for '{}' outside [{}, {}]",
                spec.name, spec.lb, spec.ub
            )));
        }
        Ok(r)
    }
}

/// Pull the target group's readings of `measurement` toward the healthy
/// reference: `v' = v - strength · (v - ref)`, clamped to the bounds.
pub fn apply_improvement(cohort: &Cohort, spec: &ImprovementSpec, strength: f64, measurement: &str) -> Result<Cohort> {
    if !(0.0..1.0).contains(&strength) {
        return Err(Error::validation(format!("strength must be in [0, 1), got {strength}")));
    }
    let m = cohort.spec(measurement)?;
    let reference = spec.reference(m)?;
    if strength == 0.0 {
        return Ok(cohort.clone());
    }
    let records = cohort
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.group_label == spec.target_group {
                if let Some(v) = r.measurements.get_mut(measurement) {
                    *v = (*v - strength * (*v - reference)).clamp(m.lb, m.ub);
                }
            }
            r
        })
        .collect();
    cohort.replace_records(records)
}

/// One null experiment: `runs` null datasets, each scored as target vs
/// source.
pub fn null_experiment(
    base: &Cohort,
    synth: &SynthSpec,
    spec: &MeasurementSpec,
    stratum: Option<&str>,
    config: &DeteriorationConfig,
    runs: usize,
    ci: CiMethod,
) -> Result<MultiRunSummary> {
    if runs < 2 {
        return Err(Error::InsufficientData {
            what: "null experiment runs".into(),
            n: runs,
            need: 2,
        });
    }
    let values = (0..runs)
        .into_par_iter()
        .map(|run| {
            let data = generate_null_dataset(base, &synth.with_seed(run_seed(synth.seed, run)))?;
            let (target, source) = data.split_by_group(&synth.target_group, &synth.source_group)?;
            let da = k_step_index(&target, spec, stratum, config)?.value;
            let db = k_step_index(&source, spec, stratum, config)?.value;
            ratio_minus_one(da, db, "deterioration index")
        })
        .collect::<Result<Vec<f64>>>()?;
    summarize_runs(&values, ci)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strength: f64,
    pub summary: MultiRunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub measurement: String,
    pub rows: Vec<SweepRow>,
    /// Spearman correlation between strength and mean inequality.
    pub rho: f64,
}

/// Sweep rows as `measurement,strength,mean,q25,q75`, one header for all
/// results.
pub fn write_sweep_csv<W: std::io::Write>(results: &[SweepResult], mut w: W) -> Result<()> {
    writeln!(w, "measurement,strength,mean,q25,q75")?;
    for r in results {
        for row in &r.rows {
            let s = &row.summary;
            writeln!(w, "{},{},{},{},{}", r.measurement, row.strength, s.mean, s.q25, s.q75)?;
        }
    }
    Ok(())
}

/// For each run, build a null dataset, then score it at every improvement
/// strength. Rows summarise the runs per strength.
pub fn run_improvement_sweep(
    base: &Cohort,
    synth: &SynthSpec,
    improve: &ImprovementSpec,
    config: &DeteriorationConfig,
    spec: &MeasurementSpec,
    stratum: Option<&str>,
    runs: usize,
) -> Result<SweepResult> {
    improve.validate()?;
    let strengths = &improve.strengths;
    if strengths.len() < 3 {
        return Err(Error::InsufficientData {
            what: "improvement strengths".into(),
            n: strengths.len(),
            need: 3,
        });
    }
    if strengths.iter().all(|&s| s == strengths[0]) {
        return Err(Error::degenerate(
            "improvement strengths are all equal; correlation is undefined",
        ));
    }
    if runs < 2 {
        return Err(Error::InsufficientData {
            what: "sweep runs".into(),
            n: runs,
            need: 2,
        });
    }
    improve.reference(spec)?;

    // per_run[run][strength]
    let per_run: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let data = generate_null_dataset(base, &synth.with_seed(run_seed(synth.seed, run)))?;
            let (_, source) = data.split_by_group(&improve.target_group, &synth.source_group)?;
            let db = k_step_index(&source, spec, stratum, config)?.value;
            strengths
                .iter()
                .map(|&s| {
                    let improved = apply_improvement(&data, improve, s, &spec.name)?;
                    let (target, _) = improved.split_by_group(&improve.target_group, &synth.source_group)?;
                    let da = k_step_index(&target, spec, stratum, config)?.value;
                    ratio_minus_one(da, db, "deterioration index")
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let rows = strengths
        .iter()
        .enumerate()
        .map(|(i, &strength)| {
            let values: Vec<f64> = per_run.iter().map(|r| r[i]).collect();
            Ok(SweepRow {
                strength,
                summary: summarize_runs(&values, CiMethod::Percentile)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = rows.iter().map(|r| r.summary.mean).collect();
    let rho = spearman(strengths, &means)?;
    Ok(SweepResult {
        measurement: spec.name.clone(),
        rows,
        rho,
    })
}
