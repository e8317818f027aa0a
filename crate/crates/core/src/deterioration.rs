//! Deterioration indices: how far a group's readings sit beyond an
//! abnormality threshold.
//!
//! The one-cutoff index is `Pr(M >= t)`. The k-step index splits the range
//! beyond `t` into `k` steps of width `ceil((ub - t) / k)` and weights the
//! probability of each step, so that groups with more extreme readings score
//! higher than groups that barely cross the threshold.

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Direction, MeasurementSpec};
use crate::density::{fit_density, select_bandwidth, silverman_bandwidth, DensityModel};
use crate::error::{Error, Result};

/// Samples smaller than this fall back to Silverman's rule instead of
/// cross-validated bandwidth selection.
pub const MIN_CV_SAMPLE: usize = 10;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexVariant {
    OneCutoff,
    KStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    /// `w(i) = 2i / (k(k+1))`, heavier on more deteriorated steps.
    Linear,
    Custom(Vec<f64>),
}

impl WeightScheme {
    pub fn weights(&self, k: usize) -> Vec<f64> {
        match self {
            WeightScheme::Uniform => vec![1.0 / k as f64; k],
            WeightScheme::Linear => {
                let denom = (k * (k + 1)) as f64;
                (1..=k).map(|i| 2.0 * i as f64 / denom).collect()
            }
            WeightScheme::Custom(w) => w.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeteriorationConfig {
    pub variant: IndexVariant,
    pub k: usize,
    pub weights: Vec<f64>,
    pub bandwidth_override: Option<f64>,
    /// Use `(ub - t) / k` as the step width instead of its ceiling.
    pub exact_steps: bool,
}

impl Default for DeteriorationConfig {
    fn default() -> Self {
        Self::k_step(20, &WeightScheme::Linear).expect("linear weights are valid")
    }
}

impl DeteriorationConfig {
    pub fn one_cutoff() -> Self {
        DeteriorationConfig {
            variant: IndexVariant::OneCutoff,
            k: 1,
            weights: vec![1.0],
            bandwidth_override: None,
            exact_steps: false,
        }
    }

    pub fn k_step(k: usize, scheme: &WeightScheme) -> Result<Self> {
        let config = DeteriorationConfig {
            variant: IndexVariant::KStep,
            k,
            weights: scheme.weights(k),
            bandwidth_override: None,
            exact_steps: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_bandwidth(mut self, h: f64) -> Self {
        self.bandwidth_override = Some(h);
        self
    }

    pub fn with_exact_steps(mut self, exact: bool) -> Self {
        self.exact_steps = exact;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.variant == IndexVariant::OneCutoff && (self.k != 1 || self.weights != [1.0]) {
            return Err(Error::validation("one-cutoff index takes k = 1 and w = (1)"));
        }
        if self.weights.len() != self.k {
            return Err(Error::validation(format!(
                "expected {} weights, got {}",
                self.k,
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::validation("weights must be finite and non-negative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::validation(format!("weights must sum to 1, got {sum}")));
        }
        if let Some(h) = self.bandwidth_override {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::validation(format!(
                    "bandwidth override must be positive, got {h}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepProbability {
    pub probability: f64,
    pub weight: f64,
    /// Unadjusted cutoff where the step starts (nearest the threshold).
    pub cutoff: f64,
    /// Cutoff after boundary adjustment; equals `cutoff` for the empirical
    /// index.
    pub adjusted_cutoff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeteriorationValue {
    pub value: f64,
    pub n_used: usize,
    /// Records in the group lacking the measurement.
    pub n_missing: usize,
    pub threshold: f64,
    /// `None` for the empirical index.
    pub bandwidth: Option<f64>,
    pub per_step: Vec<StepProbability>,
}

impl DeteriorationValue {
    pub fn step_total(&self) -> f64 {
        self.per_step.iter().map(|s| s.probability).sum()
    }
}

/// Step width for the k-step index.
pub fn step_width(spec: &MeasurementSpec, threshold: f64, config: &DeteriorationConfig) -> Result<f64> {
    let span = match spec.direction {
        Direction::HigherIsWorse => spec.ub - threshold,
        Direction::LowerIsWorse => threshold - spec.lb,
    };
    let raw = span / config.k as f64;
    let delta = if config.exact_steps { raw } else { raw.ceil() };
    if !(delta > 0.0) {
        return Err(Error::degenerate(format!(
            "measurement '{}': threshold {threshold} leaves no room for steps",
            spec.name
        )));
    }
    Ok(delta)
}

/// Unadjusted step cutoffs, starting at the threshold and moving toward the
/// worse end of the range.
pub fn step_cutoffs(spec: &MeasurementSpec, threshold: f64, config: &DeteriorationConfig) -> Result<Vec<f64>> {
    let delta = step_width(spec, threshold, config)?;
    let sign = match spec.direction {
        Direction::HigherIsWorse => 1.0,
        Direction::LowerIsWorse => -1.0,
    };
    Ok((0..config.k).map(|i| threshold + sign * i as f64 * delta).collect())
}

fn check_threshold(spec: &MeasurementSpec, threshold: f64) -> Result<()> {
    if !(threshold > spec.lb && threshold < spec.ub) {
        return Err(Error::validation(format!(
            "threshold {threshold} outside ({}, {})",
            spec.lb, spec.ub
        )));
    }
    Ok(())
}

/// Bandwidth used for a group's density: the override, else cross-validated
/// selection, else Silverman's rule for very small groups.
pub fn choose_bandwidth(values: &[f64], config: &DeteriorationConfig) -> Result<f64> {
    match config.bandwidth_override {
        Some(h) => Ok(h),
        None if values.len() >= MIN_CV_SAMPLE => select_bandwidth(values),
        None => silverman_bandwidth(values),
    }
}

/// Fit a density for `values` under `spec`'s bounds.
pub fn fit_group_density(values: &[f64], spec: &MeasurementSpec, config: &DeteriorationConfig) -> Result<DensityModel> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            what: format!("measurement '{}'", spec.name),
            n: values.len(),
            need: 2,
        });
    }
    let h = choose_bandwidth(values, config)?;
    fit_density(values, h, spec.lb, spec.ub, spec.discrete)
}

/// k-step index from an already fitted density.
pub fn index_from_model(
    model: &DensityModel,
    spec: &MeasurementSpec,
    threshold: f64,
    config: &DeteriorationConfig,
) -> Result<DeteriorationValue> {
    config.validate()?;
    check_threshold(spec, threshold)?;
    let direction = spec.direction;
    let cutoffs = step_cutoffs(spec, threshold, config)?;

    // Adjusted cutoffs must stay ordered so the steps partition the tail.
    let mut adjusted = Vec::with_capacity(cutoffs.len());
    for &c in &cutoffs {
        let a = model.adjust(c, direction);
        let a = match (direction, adjusted.last()) {
            (Direction::HigherIsWorse, Some(&prev)) => f64::max(a, prev),
            (Direction::LowerIsWorse, Some(&prev)) => f64::min(a, prev),
            _ => a,
        };
        adjusted.push(a);
    }

    let support = model.support_mass(direction);
    if !(support > 0.0) {
        return Err(Error::degenerate("density has no mass over the legitimate support"));
    }
    let tails: Vec<f64> = adjusted.iter().map(|&a| model.raw_tail(a, direction)).collect();
    let per_step: Vec<StepProbability> = (0..config.k)
        .map(|i| {
            let next = tails.get(i + 1).copied().unwrap_or(0.0);
            StepProbability {
                probability: ((tails[i] - next) / support).max(0.0),
                weight: config.weights[i],
                cutoff: cutoffs[i],
                adjusted_cutoff: adjusted[i],
            }
        })
        .collect();
    let value = per_step
        .iter()
        .map(|s| s.weight * s.probability)
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(DeteriorationValue {
        value,
        n_used: model.sample().len(),
        n_missing: 0,
        threshold,
        bandwidth: Some(model.bandwidth()),
        per_step,
    })
}

/// KDE-based index over raw values.
pub fn index_from_values(
    values: &[f64],
    spec: &MeasurementSpec,
    threshold: f64,
    config: &DeteriorationConfig,
) -> Result<DeteriorationValue> {
    config.validate()?;
    let model = fit_group_density(values, spec, config)?;
    index_from_model(&model, spec, threshold, config)
}

/// Count-fraction version of the k-step index. Used as a reference for the
/// KDE estimate.
pub fn empirical_index(
    values: &[f64],
    spec: &MeasurementSpec,
    threshold: f64,
    config: &DeteriorationConfig,
) -> Result<DeteriorationValue> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::InsufficientData {
            what: format!("measurement '{}'", spec.name),
            n: 0,
            need: 1,
        });
    }
    let cutoffs = step_cutoffs(spec, threshold, config)?;
    let n = values.len() as f64;
    let in_step = |v: f64, i: usize| -> bool {
        let next = cutoffs.get(i + 1);
        match spec.direction {
            Direction::HigherIsWorse => v >= cutoffs[i] && next.is_none_or(|&c| v < c),
            Direction::LowerIsWorse => v <= cutoffs[i] && next.is_none_or(|&c| v > c),
        }
    };
    let per_step: Vec<StepProbability> = (0..config.k)
        .map(|i| StepProbability {
            probability: values.iter().filter(|&&v| in_step(v, i)).count() as f64 / n,
            weight: config.weights[i],
            cutoff: cutoffs[i],
            adjusted_cutoff: cutoffs[i],
        })
        .collect();
    let value = per_step.iter().map(|s| s.weight * s.probability).sum();
    Ok(DeteriorationValue {
        value,
        n_used: values.len(),
        n_missing: 0,
        threshold,
        bandwidth: None,
        per_step,
    })
}

fn group_values(group: &Cohort, spec: &MeasurementSpec, stratum: Option<&str>) -> Result<(Vec<f64>, usize, f64)> {
    let threshold = spec.threshold(stratum)?;
    let (values, missing) = group.measurement_values(&spec.name, stratum);
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            what: format!("group '{}' measurement '{}'", group.label(), spec.name),
            n: values.len(),
            need: 2,
        });
    }
    Ok((values, missing, threshold))
}

/// k-step (or one-cutoff) index of a group, restricted to `stratum` when
/// given.
pub fn k_step_index(
    group: &Cohort,
    spec: &MeasurementSpec,
    stratum: Option<&str>,
    config: &DeteriorationConfig,
) -> Result<DeteriorationValue> {
    let (values, missing, threshold) = group_values(group, spec, stratum)?;
    let mut d = index_from_values(&values, spec, threshold, config)?;
    d.n_missing = missing;
    Ok(d)
}

/// `Pr(M >= t)` (or `Pr(M <= t)` for lower-is-worse markers).
pub fn one_cutoff_index(group: &Cohort, spec: &MeasurementSpec, stratum: Option<&str>) -> Result<DeteriorationValue> {
    k_step_index(group, spec, stratum, &DeteriorationConfig::one_cutoff())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledDeterioration {
    pub value: f64,
    pub strata: Vec<(String, DeteriorationValue)>,
}

/// Index computed per stratum with that stratum's threshold, then averaged
/// with weights proportional to the records used in each stratum.
pub fn pooled_index(
    group: &Cohort,
    spec: &MeasurementSpec,
    config: &DeteriorationConfig,
) -> Result<PooledDeterioration> {
    let mut strata = Vec::new();
    for s in group.strata() {
        strata.push((s.to_string(), k_step_index(group, spec, Some(s), config)?));
    }
    let total: usize = strata.iter().map(|(_, d)| d.n_used).sum();
    if total == 0 {
        return Err(Error::InsufficientData {
            what: format!("group '{}'", group.label()),
            n: 0,
            need: 2,
        });
    }
    let value = strata.iter().map(|(_, d)| d.value * d.n_used as f64).sum::<f64>() / total as f64;
    Ok(PooledDeterioration { value, strata })
}
