//! Inequality between two patient groups, and the run statistics used to
//! judge it across repeated experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;

use crate::cohort::{Cohort, MeasurementSpec};
use crate::curve::{auc, build_curve, ADCurve, CurveParams};
use crate::deterioration::{k_step_index, pooled_index, DeteriorationConfig, PooledDeterioration};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Denominators below this are treated as degenerate.
pub const MIN_DENOMINATOR: f64 = 1e-6;

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityKind {
    DatasetEmbedded,
    ModelInduced,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub config_hash: String,
}

/// Whole-range area comparison reported next to the decision-region value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WholeArea {
    pub value: f64,
    pub components: Components,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub schema_version: u32,
    pub kind: InequalityKind,
    pub group_a: String,
    pub group_b: String,
    pub measurement: String,
    pub stratum: Option<String>,
    /// `components.a / components.b - 1`. Negative means group a is
    /// healthier.
    pub value: f64,
    pub components: Components,
    pub tau: Option<f64>,
    pub whole_area: Option<WholeArea>,
    pub n_a: usize,
    pub n_b: usize,
    pub provenance: Option<Provenance>,
}

impl InequalityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn percentage(&self) -> String {
        format_percentage(self.value)
    }

    /// Plain-text summary for terminals and log files.
    pub fn summary(&self) -> String {
        let kind = match self.kind {
            InequalityKind::DatasetEmbedded => "dataset-embedded",
            InequalityKind::ModelInduced => "model-induced",
        };
        let mut s = format!(
            "{kind} inequality of {} vs {} on {}{}: {} ({} = {:.6}, {} = {:.6}; n = {}/{})\n",
            self.group_a,
            self.group_b,
            self.measurement,
            self.stratum.as_ref().map(|s| format!(" [{s}]")).unwrap_or_default(),
            self.percentage(),
            self.group_a,
            self.components.a,
            self.group_b,
            self.components.b,
            self.n_a,
            self.n_b,
        );
        if let (Some(tau), Some(whole)) = (self.tau, &self.whole_area) {
            s += &format!(
                "decision region x >= {tau}: {}; whole area: {}\n",
                self.percentage(),
                format_percentage(whole.value)
            );
        }
        s
    }
}

/// `value × 100` with two decimals, e.g. `35.06%`.
pub fn format_percentage(value: f64) -> String {
    format!("{:.2}%", value * 100.0)
}

/// `a / b - 1`, refusing near-zero denominators.
pub fn ratio_minus_one(a: f64, b: f64, what: &str) -> Result<f64> {
    if !(b >= MIN_DENOMINATOR) {
        return Err(Error::degenerate(format!(
            "{what} of the reference group is {b:.3e}, below {MIN_DENOMINATOR:e}; \
             try a different measurement or threshold"
        )));
    }
    Ok(a / b - 1.0)
}

/// Inequality of `p1` vs `p2` from their deterioration indices.
pub fn dataset_inequality(
    p1: &Cohort,
    p2: &Cohort,
    spec: &MeasurementSpec,
    stratum: Option<&str>,
    config: &DeteriorationConfig,
) -> Result<InequalityReport> {
    let da = k_step_index(p1, spec, stratum, config)?;
    let db = k_step_index(p2, spec, stratum, config)?;
    let value = ratio_minus_one(da.value, db.value, "deterioration index")?;
    Ok(InequalityReport {
        schema_version: SCHEMA_VERSION,
        kind: InequalityKind::DatasetEmbedded,
        group_a: p1.label().to_string(),
        group_b: p2.label().to_string(),
        measurement: spec.name.clone(),
        stratum: stratum.map(str::to_string),
        value,
        components: Components {
            a: da.value,
            b: db.value,
        },
        tau: None,
        whole_area: None,
        n_a: da.n_used,
        n_b: db.n_used,
        provenance: None,
    })
}

/// Like [`dataset_inequality`], but each group's index is pooled over its
/// strata, every stratum using its own threshold. This is how groups that
/// define the strata themselves (e.g. sex with sex-specific ranges) are
/// compared.
pub fn pooled_dataset_inequality(
    p1: &Cohort,
    p2: &Cohort,
    spec: &MeasurementSpec,
    config: &DeteriorationConfig,
) -> Result<InequalityReport> {
    let da = pooled_index(p1, spec, config)?;
    let db = pooled_index(p2, spec, config)?;
    let value = ratio_minus_one(da.value, db.value, "pooled deterioration index")?;
    let used = |d: &PooledDeterioration| d.strata.iter().map(|(_, v)| v.n_used).sum();
    Ok(InequalityReport {
        schema_version: SCHEMA_VERSION,
        kind: InequalityKind::DatasetEmbedded,
        group_a: p1.label().to_string(),
        group_b: p2.label().to_string(),
        measurement: spec.name.clone(),
        stratum: None,
        value,
        components: Components {
            a: da.value,
            b: db.value,
        },
        tau: None,
        whole_area: None,
        n_a: used(&da),
        n_b: used(&db),
        provenance: None,
    })
}

/// Inequality from two prebuilt curves over `[tau, 1]`, plus the whole-area
/// value over `[0, 1]`.
pub fn inequality_from_curves(curve_a: &ADCurve, curve_b: &ADCurve, tau: f64) -> Result<(f64, Components, WholeArea)> {
    let region = |c: &ADCurve, lo: f64| auc(c, lo, 1.0).map(|r| r.area);
    let (ra, rb) = (region(curve_a, tau)?, region(curve_b, tau)?);
    let value = ratio_minus_one(ra, rb, "decision-region area")?;
    let (wa, wb) = (region(curve_a, 0.0)?, region(curve_b, 0.0)?);
    let whole = WholeArea {
        value: ratio_minus_one(wa, wb, "whole area")?,
        components: Components { a: wa, b: wb },
    };
    Ok((value, Components { a: ra, b: rb }, whole))
}

/// Inequality induced by an allocation model: ratio of areas under the two
/// groups' A-D curves where the allocation score is at least `tau`.
pub fn model_inequality(
    p1: &Cohort,
    p2: &Cohort,
    spec: &MeasurementSpec,
    stratum: Option<&str>,
    config: &DeteriorationConfig,
    params: &CurveParams,
    tau: f64,
) -> Result<(InequalityReport, ADCurve, ADCurve)> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::validation(format!("tau must be in [0, 1), got {tau}")));
    }
    let curve_a = build_curve(p1, spec, stratum, config, params)?;
    let curve_b = build_curve(p2, spec, stratum, config, params)?;
    let (value, components, whole) = inequality_from_curves(&curve_a, &curve_b, tau)?;
    let count = |c: &Cohort| c.measurement_values(&spec.name, stratum).0.len();
    let report = InequalityReport {
        schema_version: SCHEMA_VERSION,
        kind: InequalityKind::ModelInduced,
        group_a: p1.label().to_string(),
        group_b: p2.label().to_string(),
        measurement: spec.name.clone(),
        stratum: stratum.map(str::to_string),
        value,
        components,
        tau: Some(tau),
        whole_area: Some(whole),
        n_a: count(p1),
        n_b: count(p2),
        provenance: None,
    };
    Ok((report, curve_a, curve_b))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Empirical 2.5% and 97.5% quantiles of the run values.
    #[default]
    Percentile,
    /// Mean ± t(0.975, n-1) · s / √n.
    StudentT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRunSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ci95: (f64, f64),
    pub q25: f64,
    pub q75: f64,
    pub t_statistic: f64,
    /// Two-sided one-sample t-test against a mean of zero.
    pub p_value: f64,
    pub n_runs: usize,
}

impl MultiRunSummary {
    /// `mean [lo, hi]` with three decimals.
    pub fn bracket(&self) -> String {
        format!("{:.3} [{:.3}, {:.3}]", self.mean, self.ci95.0, self.ci95.1)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Two-sided p-value of Student's t with `df` degrees of freedom, via the
/// regularized incomplete beta function.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn summarize_runs(values: &[f64], ci: CiMethod) -> Result<MultiRunSummary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "run summary".into(),
            n,
            need: 2,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("run values must be finite"));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::degenerate("run values have zero variance"));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::degenerate("run values have zero variance"));
    }
    let t = mean / (sd / nf.sqrt());
    let p_value = student_t_two_sided_p(t, nf - 1.0);

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ci95 = match ci {
        CiMethod::Percentile => (quantile(&sorted, 0.025), quantile(&sorted, 0.975)),
        CiMethod::StudentT => {
            let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::degenerate(e.to_string()))?;
            let half = dist.inverse_cdf(0.975) * sd / nf.sqrt();
            (mean - half, mean + half)
        }
    };
    Ok(MultiRunSummary {
        values: values.to_vec(),
        mean,
        sd,
        ci95,
        q25: quantile(&sorted, 0.25),
        q75: quantile(&sorted, 0.75),
        t_statistic: t,
        p_value,
        n_runs: n,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::validation(format!(
            "spearman needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData {
            what: "spearman correlation".into(),
            n: xs.len(),
            need: 3,
        });
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::validation("spearman input contains NaN"));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::degenerate(
            "spearman correlation is undefined for a constant sequence",
        ));
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}
