use std::collections::BTreeSet;

use daindex_core::cohort::{derive_normalised_mm, read_cohort, Cohort, Direction, MeasurementSpec, PatientRecord};
use daindex_core::curve::{auc, simpson, ADCurve, CurveParams, CurvePoint};
use daindex_core::deterioration::{empirical_index, index_from_values, DeteriorationConfig, WeightScheme};
use daindex_core::inequality::{
    dataset_inequality, pooled_dataset_inequality, ratio_minus_one, spearman, summarize_runs, CiMethod,
};
use daindex_core::synthetic::{apply_improvement, ImprovementSpec};
use proptest::prelude::*;

fn spec(dir: Direction) -> MeasurementSpec {
    MeasurementSpec::with_threshold("m", 0.0, 100.0, 40.0, dir, false).unwrap()
}

fn cohort_from(rows: &[(bool, f64, Option<f64>)]) -> Cohort {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, &(a, v, score))| {
            let mut r = PatientRecord::new(format!("p{i}"), if a { "a" } else { "b" }).with_measurement("m", v);
            r.allocation_score = score;
            r
        })
        .collect();
    let groups: BTreeSet<String> = ["a".to_string(), "b".to_string()].into();
    Cohort::new(records, [spec(Direction::HigherIsWorse)], Some(groups)).unwrap()
}

fn rows() -> impl Strategy<Value = Vec<(bool, f64, Option<f64>)>> {
    prop::collection::vec((any::<bool>(), 0.0..100.0f64, prop::option::of(0.0..=1.0f64)), 1..60)
}

proptest! {
    #[test]
    fn split_partitions_records(rows in rows()) {
        let c = cohort_from(&rows);
        let (a, b) = c.split_by_group("a", "b").unwrap();
        prop_assert_eq!(a.len() + b.len(), c.len());
        prop_assert!(a.records().iter().all(|r| r.group_label == "a"));
        prop_assert!(b.records().iter().all(|r| r.group_label == "b"));
    }

    #[test]
    fn csv_round_trip(rows in rows()) {
        let c = cohort_from(&rows);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let specs: Vec<MeasurementSpec> = c.specs().values().cloned().collect();
        let back = read_cohort(buf.as_slice(), &specs, Some(c.groups())).unwrap();
        prop_assert_eq!(back.records(), c.records());
    }

    #[test]
    fn normalised_mm_is_homogeneous(mm in 0u32..17, age in 18.0..100.0f64, c in 1u32..4) {
        let rec = |mm: u32, age: f64| {
            let mut r = PatientRecord::new("p", "g");
            r.mm_count = Some(mm);
            r.age = Some(age);
            r
        };
        let base = derive_normalised_mm(&rec(mm, age)).unwrap();
        let scaled = derive_normalised_mm(&rec(mm * c, age)).unwrap();
        prop_assert!((scaled - c as f64 * base).abs() <= 1e-9 * scaled.abs().max(1.0));
        let older = derive_normalised_mm(&rec(mm, age * c as f64)).unwrap();
        prop_assert!((older * c as f64 - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn improvement_contracts_toward_reference(
        values in prop::collection::vec(0.0..100.0f64, 1..30),
        reference in 0.0..100.0f64,
        s1 in 0.0..0.99f64,
        ds in 0.0..0.5f64,
    ) {
        let s2 = (s1 + ds).min(0.99);
        let records = values
            .iter()
            .enumerate()
            .map(|(i, &v)| PatientRecord::new(format!("p{i}"), "a").with_measurement("m", v))
            .collect();
        let c = Cohort::new(records, [spec(Direction::HigherIsWorse)], None).unwrap();
        let imp = ImprovementSpec {
            strengths: vec![s1, s2],
            target_group: "a".into(),
            healthy_ref: [("m".to_string(), reference)].into(),
        };
        let c1 = apply_improvement(&c, &imp, s1, "m").unwrap();
        let c2 = apply_improvement(&c, &imp, s2, "m").unwrap();
        prop_assert_eq!(c1.len(), c.len());
        for (r1, r2) in c1.records().iter().zip(c2.records()) {
            let (v1, v2) = (r1.measurement("m").unwrap(), r2.measurement("m").unwrap());
            prop_assert!((v2 - reference).abs() <= (v1 - reference).abs() + 1e-12);
        }
    }

    #[test]
    fn spearman_ignores_monotone_transforms(
        pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 3..40),
    ) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(xs.iter().any(|&x| x != xs[0]) && ys.iter().any(|&y| y != ys[0]));
        let rho = spearman(&xs, &ys).unwrap();
        let tx: Vec<f64> = xs.iter().map(|x| (x / 10.0).exp()).collect();
        let ty: Vec<f64> = ys.iter().map(|y| y.powi(3) - 7.0).collect();
        prop_assert!((spearman(&tx, &ty).unwrap() - rho).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&rho));
    }

    #[test]
    fn run_summary_p_ignores_order(mut values in prop::collection::vec(-1.0..1.0f64, 2..20), seed in any::<u64>()) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let p = summarize_runs(&values, CiMethod::Percentile).unwrap().p_value;
        let k = (seed % values.len() as u64) as usize;
        values.rotate_left(k);
        values.reverse();
        let q = summarize_runs(&values, CiMethod::Percentile).unwrap().p_value;
        prop_assert!((p - q).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn ratio_ignores_common_scale(a in 0.01..1.0f64, b in 0.01..1.0f64, c in 0.1..10.0f64) {
        let v = ratio_minus_one(a, b, "x").unwrap();
        prop_assert!((ratio_minus_one(a * c, b * c, "x").unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn empirical_steps_partition_the_tail(
        values in prop::collection::vec(0.0..100.0f64, 1..80),
        k in 1usize..25,
        lower in any::<bool>(),
    ) {
        let dir = if lower { Direction::LowerIsWorse } else { Direction::HigherIsWorse };
        let s = spec(dir);
        let config = DeteriorationConfig::k_step(k, &WeightScheme::Uniform).unwrap();
        let d = empirical_index(&values, &s, 40.0, &config).unwrap();
        let tail = values.iter().filter(|&&v| if lower { v <= 40.0 } else { v >= 40.0 }).count() as f64
            / values.len() as f64;
        prop_assert!((d.step_total() - tail).abs() < 1e-12);
    }

    #[test]
    fn simpson_is_exact_for_cubics(n_half in 1usize..40, a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let n = 2 * n_half;
        let dx = 1.0 / n as f64;
        let ys: Vec<f64> = (0..=n).map(|i| { let x = i as f64 * dx; a * x.powi(3) + b * x }).collect();
        prop_assert!((simpson(&ys, dx) - (a / 4.0 + b / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_additive(half in 1usize..10, ds in prop::collection::vec(0.0..1.0f64, 21)) {
        let params = CurveParams { n: 21, ..Default::default() };
        let grid = params.grid();
        let points = ds
            .iter()
            .enumerate()
            .map(|(i, &d)| CurvePoint { grid_index: i, x: grid[i], d, n_window: 50 })
            .collect();
        let curve = ADCurve { points, params, group_label: "g".into(), degenerate_windows: 0 };
        // An even split keeps both halves on whole Simpson panels.
        let mid = grid[2 * half];
        let whole = auc(&curve, 0.0, 1.0).unwrap().area;
        let parts = auc(&curve, 0.0, mid).unwrap().area + auc(&curve, mid, 1.0).unwrap().area;
        prop_assert!((whole - parts).abs() < 1e-9);
    }
}

#[test]
fn same_cohort_has_zero_inequality() {
    let values: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37) % 100.0).collect();
    let rows: Vec<(bool, f64, Option<f64>)> = values.iter().map(|&v| (true, v, None)).collect();
    let (a, _) = cohort_from(&rows).split_by_group("a", "b").unwrap();
    let config = DeteriorationConfig::default();
    let s = spec(Direction::HigherIsWorse);
    assert_eq!(dataset_inequality(&a, &a, &s, None, &config).unwrap().value, 0.0);
}

#[test]
fn pooled_inequality_uses_each_stratum_threshold() {
    // Group a exceeds its stratum's threshold exactly as often as group b
    // exceeds its own, so the pooled ratio is one.
    let s = MeasurementSpec::new(
        "m",
        "",
        0.0,
        100.0,
        [("x".to_string(), 30.0), ("y".to_string(), 60.0)],
        Direction::HigherIsWorse,
        false,
    )
    .unwrap();
    let mut records = Vec::new();
    for i in 0..400 {
        let u = (i as f64 + 0.5) / 400.0;
        records.push(
            PatientRecord::new(format!("a{i}"), "a")
                .with_stratum("x")
                .with_measurement("m", 30.0 * u / 0.8),
        );
        records.push(
            PatientRecord::new(format!("b{i}"), "b")
                .with_stratum("y")
                .with_measurement("m", 60.0 * u / 0.8),
        );
    }
    let c = Cohort::new(records, [s.clone()], None).unwrap();
    let (a, b) = c.split_by_group("a", "b").unwrap();
    let config = DeteriorationConfig::one_cutoff();
    let r = pooled_dataset_inequality(&a, &b, &s, &config).unwrap();
    assert!(r.value.abs() < 0.05, "{}", r.value);
    assert_eq!((r.n_a, r.n_b), (400, 400));
}

#[test]
fn kde_tracks_empirical_on_wide_samples() {
    let values: Vec<f64> = (0..3000).map(|i| 100.0 * ((i as f64 + 0.5) / 3000.0).powi(2)).collect();
    for dir in [Direction::HigherIsWorse, Direction::LowerIsWorse] {
        let s = spec(dir);
        for config in [DeteriorationConfig::one_cutoff(), DeteriorationConfig::default()] {
            let kde = index_from_values(&values, &s, 40.0, &config).unwrap().value;
            let emp = empirical_index(&values, &s, 40.0, &config).unwrap().value;
            assert!((kde - emp).abs() < 0.02, "{dir:?}: {kde} vs {emp}");
        }
    }
}
