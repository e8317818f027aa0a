use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use daindex_core::cohort::{load_cohort, load_specs, Cohort, Direction, MeasurementSpec};
use daindex_core::curve::{ADCurve, CurveParams};
use daindex_core::density::linspace;
use daindex_core::deterioration::{fit_group_density, DeteriorationConfig, WeightScheme};
use daindex_core::error::{Error, Result};
use daindex_core::inequality::{
    dataset_inequality, model_inequality as model_report, pooled_dataset_inequality, CiMethod, InequalityReport,
    Provenance, SCHEMA_VERSION,
};
use daindex_core::synthetic::{
    default_healthy_refs, generate_base_cohort, null_experiment, run_improvement_sweep, write_sweep_csv,
    BaseCohortConfig, ImprovementSpec, SweepResult, SynthSpec, ALT_MAX, CREATININE_MAX, CREATININE_MIN,
};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::{CiArg, DbArgs, DbCmdArgs, EvalArgs, IndexArgs, InputArgs, ModelArgs, PdfArgs};

fn parse_pair(s: &str, flag: &str) -> Result<(String, String)> {
    match s.split(',').map(str::trim).collect::<Vec<_>>()[..] {
        [a, b] if !a.is_empty() && !b.is_empty() && a != b => Ok((a.to_string(), b.to_string())),
        _ => Err(Error::validation(format!(
            "{flag} expects two distinct labels `a,b`, got {s:?}"
        ))),
    }
}

fn parse_weights(s: &str, k: usize) -> Result<WeightScheme> {
    match s {
        "uniform" => Ok(WeightScheme::Uniform),
        "linear" => Ok(WeightScheme::Linear),
        _ => {
            let list = s
                .strip_prefix("csv:")
                .ok_or_else(|| Error::validation(format!("unknown weight scheme {s:?}")))?;
            let w = list
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::validation(format!("bad weight list {list:?}: {e}")))?;
            if w.len() != k {
                return Err(Error::validation(format!(
                    "--weights lists {} values but --k is {k}",
                    w.len()
                )));
            }
            Ok(WeightScheme::Custom(w))
        }
    }
}

pub fn det_config(args: &IndexArgs) -> Result<DeteriorationConfig> {
    let mut config = if args.one_cutoff {
        DeteriorationConfig::one_cutoff()
    } else {
        DeteriorationConfig::k_step(args.k, &parse_weights(&args.weights, args.k)?)?
    };
    config = config.with_exact_steps(args.exact_steps);
    if let Some(h) = args.bandwidth {
        config = config.with_bandwidth(h);
    }
    config.validate()?;
    Ok(config)
}

fn load_inputs(input: &InputArgs) -> Result<(Cohort, MeasurementSpec)> {
    let specs = load_specs(&input.specs)?;
    let cohort = load_cohort(&input.cohort, &specs)?;
    let spec = cohort.spec(&input.measurement)?.clone();
    if let Some(s) = &input.stratum {
        spec.threshold(Some(s))?;
    }
    Ok((cohort, spec))
}

fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_out(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn write_report(dir: &Path, report: &InequalityReport) -> Result<()> {
    write_out(dir, "report.json", (report.to_json()? + "\n").as_bytes())?;
    write_out(dir, "summary.txt", report.summary().as_bytes())?;
    print!("{}", report.summary());
    Ok(())
}

/// File-name-safe form of a group label.
fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn run_config(args: &DbArgs, config: &DeteriorationConfig) -> serde_json::Value {
    json!({
        "measurement": args.input.measurement,
        "stratum": args.input.stratum,
        "groups": args.groups,
        "deterioration": config,
        "seed": args.output.seed,
    })
}

pub fn db_inequality(cmd: &DbCmdArgs) -> Result<()> {
    let args = &cmd.db;
    let (a, b) = parse_pair(&args.groups, "--groups")?;
    let config = det_config(&args.index)?;
    let (cohort, spec) = load_inputs(&args.input)?;
    let (pa, pb) = cohort.split_by_group(&a, &b)?;
    let mut report = if cmd.pooled {
        pooled_dataset_inequality(&pa, &pb, &spec, &config)?
    } else {
        dataset_inequality(&pa, &pb, &spec, args.input.stratum.as_deref(), &config)?
    };
    let mut hashed = run_config(args, &config);
    hashed["command"] = json!("db-inequality");
    hashed["pooled"] = json!(cmd.pooled);
    report.provenance = Some(Provenance {
        seed: Some(args.output.seed),
        config_hash: config_hash(&hashed),
    });
    write_report(&args.output.out, &report)
}

fn model_inequality_report(args: &ModelArgs) -> Result<(InequalityReport, ADCurve, ADCurve)> {
    let db = &args.db;
    let (a, b) = parse_pair(&db.groups, "--groups")?;
    let config = det_config(&db.index)?;
    let params = CurveParams {
        n: args.curve_n,
        half_width: args.curve_l,
        min_patients: args.curve_nu,
    };
    params.validate()?;
    let (cohort, spec) = load_inputs(&db.input)?;
    let (pa, pb) = cohort.split_by_group(&a, &b)?;
    let (mut report, ca, cb) = model_report(&pa, &pb, &spec, db.input.stratum.as_deref(), &config, &params, args.tau)?;
    let mut hashed = run_config(db, &config);
    hashed["command"] = json!("model-inequality");
    hashed["curve"] = json!(params);
    hashed["tau"] = json!(args.tau);
    report.provenance = Some(Provenance {
        seed: Some(db.output.seed),
        config_hash: config_hash(&hashed),
    });
    Ok((report, ca, cb))
}

pub fn model_inequality(args: &ModelArgs) -> Result<()> {
    let (report, ca, cb) = model_inequality_report(args)?;
    let dir = &args.db.output.out;
    for c in [&ca, &cb] {
        let mut buf = Vec::new();
        c.write_csv(&mut buf)?;
        write_out(dir, &format!("curve_{}.csv", slug(&c.group_label)), &buf)?;
        if c.degenerate_windows > 0 {
            eprintln!(
                "note: {} curve skipped {} zero-variance window(s)",
                c.group_label, c.degenerate_windows
            );
        }
    }
    if args.svg {
        let title = format!("{} vs {}: {}", ca.group_label, cb.group_label, report.measurement);
        write_out(
            dir,
            "curves.svg",
            crate::svg::curves(&title, &[&ca, &cb], args.tau).as_bytes(),
        )?;
    }
    write_report(dir, &report)
}

fn resolve_stratum(explicit: Option<&str>, spec: &MeasurementSpec, source: &str) -> Option<String> {
    match explicit {
        Some(s) => Some(s.to_string()),
        None if spec.thresholds.contains_key(source) => Some(source.to_string()),
        None => None,
    }
}

fn parse_refs(flags: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut refs = default_healthy_refs();
    for f in flags {
        let (name, value) = f
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("--healthy-ref expects name=value, got {f:?}")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|e| Error::validation(format!("--healthy-ref {f:?}: {e}")))?;
        refs.insert(name.trim().to_string(), v);
    }
    Ok(refs)
}

pub fn eval_synthetic(args: &EvalArgs) -> Result<()> {
    let (source, target) = parse_pair(&args.groups, "--groups")?;
    let config = det_config(&args.index)?;
    if args.runs < 2 {
        return Err(Error::InsufficientData {
            what: "--runs".into(),
            n: args.runs,
            need: 2,
        });
    }
    let base = match (&args.cohort, &args.specs) {
        (Some(c), Some(s)) => load_cohort(c, &load_specs(s)?)?,
        _ => generate_base_cohort(&BaseCohortConfig {
            n: args.base_n,
            seed: args.seed,
            ..Default::default()
        })?,
    };
    let measurements: Vec<String> = if !args.measurements.is_empty() {
        args.measurements.clone()
    } else if args.cohort.is_none() {
        [CREATININE_MAX, CREATININE_MIN, ALT_MAX].map(String::from).to_vec()
    } else {
        return Err(Error::validation("--measurement is required with an external cohort"));
    };
    let synth = SynthSpec {
        seed: args.seed,
        sample_fraction: args.sample_fraction,
        source_group: source.clone(),
        target_group: target.clone(),
        ..Default::default()
    };
    let improve = ImprovementSpec {
        strengths: linspace(0.0, args.max_strength, args.steps),
        target_group: target.clone(),
        healthy_ref: parse_refs(&args.healthy_refs)?,
    };
    let ci = match args.ci {
        CiArg::Percentile => CiMethod::Percentile,
        CiArg::StudentT => CiMethod::StudentT,
    };

    let mut null_csv = String::from("measurement,mean,sd,ci_lo,ci_hi,t_statistic,p_value,n_runs\n");
    let mut summary = String::new();
    let mut nulls = BTreeMap::new();
    let mut sweeps: Vec<SweepResult> = Vec::new();
    for name in &measurements {
        let spec = base.spec(name)?;
        let stratum = resolve_stratum(args.stratum.as_deref(), spec, &source);
        let null = null_experiment(&base, &synth, spec, stratum.as_deref(), &config, args.runs, ci)?;
        let sweep = run_improvement_sweep(&base, &synth, &improve, &config, spec, stratum.as_deref(), args.runs)?;
        let _ = writeln!(
            null_csv,
            "{name},{},{},{},{},{},{},{}",
            null.mean, null.sd, null.ci95.0, null.ci95.1, null.t_statistic, null.p_value, null.n_runs
        );
        let _ = writeln!(
            summary,
            "{name}: null {target} vs {source} {} p = {:.4}; improvement sweep rho = {:.3}",
            null.bracket(),
            null.p_value,
            sweep.rho
        );
        nulls.insert(name.clone(), null);
        sweeps.push(sweep);
    }

    let hashed = json!({
        "command": "eval-synthetic",
        "base": args.cohort.as_ref().map(|p| p.display().to_string()),
        "base_n": args.base_n,
        "measurements": measurements,
        "stratum": args.stratum,
        "synth": synth,
        "improve": improve,
        "deterioration": config,
        "runs": args.runs,
    });
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "null": nulls,
        "sweep": sweeps,
        "provenance": Provenance { seed: Some(args.seed), config_hash: config_hash(&hashed) },
    });
    let mut sweep_csv = Vec::new();
    write_sweep_csv(&sweeps, &mut sweep_csv)?;
    write_out(&args.out, "null.csv", null_csv.as_bytes())?;
    write_out(&args.out, "sweep.csv", &sweep_csv)?;
    write_out(
        &args.out,
        "eval.json",
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    write_out(&args.out, "summary.txt", summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

pub fn pdf_dump(args: &PdfArgs) -> Result<()> {
    let config = det_config(&args.index)?;
    let (cohort, spec) = load_inputs(&args.input)?;
    if args.grid < 2 {
        return Err(Error::validation("--grid must be at least 2"));
    }
    let groups: Vec<String> = match &args.groups {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => cohort.groups().iter().cloned().collect(),
    };
    let boundary = match spec.direction {
        Direction::HigherIsWorse => spec.lb,
        Direction::LowerIsWorse => spec.ub,
    };

    let mut csv = String::from("group,stratum,x,pdf,cutoff,adjusted_cutoff,boundary,adjusted_boundary\n");
    for g in &groups {
        if !cohort.groups().contains(g) {
            return Err(Error::validation(format!("group '{g}' not present in cohort")));
        }
        let records = cohort
            .records()
            .iter()
            .filter(|r| &r.group_label == g)
            .cloned()
            .collect();
        let group = cohort.replace_records(records)?;
        let strata: Vec<String> = match &args.input.stratum {
            Some(s) => vec![s.clone()],
            None => group.strata().into_iter().map(String::from).collect(),
        };
        for stratum in &strata {
            let threshold = spec.threshold(Some(stratum))?;
            let (values, _) = group.measurement_values(&spec.name, Some(stratum));
            let model = fit_group_density(&values, &spec, &config)?;
            let adjusted = model.adjust(threshold, spec.direction);
            let adjusted_boundary = model.adjust(boundary, spec.direction);
            for (x, p) in model.pdf_grid(args.grid) {
                let _ = writeln!(
                    csv,
                    "{g},{stratum},{x},{p},{threshold},{adjusted},{boundary},{adjusted_boundary}"
                );
            }
            println!(
                "{g} [{stratum}]: n = {}, h = {}, cutoff {threshold} -> {adjusted}, boundary {boundary} -> {adjusted_boundary}",
                values.len(),
                model.bandwidth()
            );
        }
    }
    write_out(&args.out, "pdf.csv", csv.as_bytes())
}
