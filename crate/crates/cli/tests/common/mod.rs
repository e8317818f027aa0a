#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use daindex_core::cohort::{specs_to_json, Cohort, Direction, MeasurementSpec, PatientRecord};
use daindex_core::synthetic::{generate_base_cohort, BaseCohortConfig};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_daindex"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn daindex")
}

pub fn write_cohort(dir: &Path, cohort: &Cohort) -> (PathBuf, PathBuf) {
    let csv = dir.join("cohort.csv");
    let specs = dir.join("specs.json");
    cohort.write_csv_file(&csv).unwrap();
    let list: Vec<MeasurementSpec> = cohort.specs().values().cloned().collect();
    fs::write(&specs, specs_to_json(&list).unwrap()).unwrap();
    (csv, specs)
}

/// Small generated cohort with male/female groups and allocation scores.
pub fn generated(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let c = generate_base_cohort(&BaseCohortConfig {
        n,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    write_cohort(dir, &c)
}

/// Group `a` holds the same normal readings as `b` but 1.2 times as many
/// readings spread over the same tail range.
pub fn scaled_tail(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = MeasurementSpec::with_threshold("m", 0.0, 100.0, 20.0, Direction::HigherIsWorse, false).unwrap();
    let mut records = Vec::new();
    let mut push = |group: &str, values: Vec<f64>| {
        for (i, v) in values.into_iter().enumerate() {
            records.push(PatientRecord::new(format!("{group}{i}"), group).with_measurement("m", v));
        }
    };
    let spread = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
    };
    push("a", [spread(760, 5.0, 12.0), spread(240, 30.0, 70.0)].concat());
    push("b", [spread(800, 5.0, 12.0), spread(200, 30.0, 70.0)].concat());
    let c = Cohort::new(records, [spec], None).unwrap();
    write_cohort(dir, &c)
}

/// All files under `dir`, keyed by file name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let Ok(entries) = fs::read_dir(dir) else {
        return BTreeMap::new();
    };
    entries
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}
