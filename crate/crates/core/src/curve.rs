//! Allocation-deterioration (A-D) curves and the area under them.
//!
//! A curve maps an allocation score `x` to the deterioration index of the
//! patients scored near `x`. Grid points whose window holds too few patients
//! are left out rather than interpolated; areas are summed over the
//! contiguous runs that remain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, MeasurementSpec};
use crate::density::linspace;
use crate::deterioration::{index_from_values, DeteriorationConfig};
use crate::error::{Error, Result};

/// Tolerance when snapping a region boundary onto the grid.
const SNAP_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    /// Number of evenly spaced grid points over `[0, 1]`.
    pub n: usize,
    /// Window half-width `l`: a grid point `x` collects scores in `[x-l, x+l)`.
    pub half_width: f64,
    /// Minimum patients per window.
    pub min_patients: usize,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            n: 50,
            half_width: 0.05,
            min_patients: 20,
        }
    }
}

impl CurveParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::validation(format!("curve grid needs n >= 3, got {}", self.n)));
        }
        if !(self.half_width > 0.0 && self.half_width <= 0.5) {
            return Err(Error::validation(format!(
                "window half-width must be in (0, 0.5], got {}",
                self.half_width
            )));
        }
        if self.min_patients < 2 {
            return Err(Error::validation("minimum patients per window must be at least 2"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        linspace(0.0, 1.0, self.n)
    }

    fn step(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub grid_index: usize,
    pub x: f64,
    pub d: f64,
    pub n_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ADCurve {
    pub points: Vec<CurvePoint>,
    pub params: CurveParams,
    pub group_label: String,
    /// Windows that met the size threshold but had zero variance, so no
    /// density could be fitted.
    pub degenerate_windows: usize,
}

impl ADCurve {
    /// Multiply every deterioration value by `c`.
    pub fn scaled(&self, c: f64) -> ADCurve {
        let mut out = self.clone();
        for p in &mut out.points {
            p.d *= c;
        }
        out
    }

    /// Fill interior gaps by linear interpolation. For plotting only; areas
    /// are always computed on the raw curve.
    pub fn interpolated(&self) -> Vec<(f64, f64)> {
        let grid = self.params.grid();
        let mut out = Vec::new();
        for pair in self.points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            out.push((a.x, a.d));
            for (j, &x) in grid.iter().enumerate().take(b.grid_index).skip(a.grid_index + 1) {
                let frac = (j - a.grid_index) as f64 / (b.grid_index - a.grid_index) as f64;
                out.push((x, a.d + frac * (b.d - a.d)));
            }
        }
        if let Some(last) = self.points.last() {
            out.push((last.x, last.d));
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,d,n_window")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.x, p.d, p.n_window)?;
        }
        Ok(())
    }
}

/// Build a curve from `(allocation score, measurement)` pairs.
pub fn curve_from_pairs(
    pairs: &[(f64, f64)],
    spec: &MeasurementSpec,
    threshold: f64,
    config: &DeteriorationConfig,
    params: &CurveParams,
    group_label: &str,
) -> Result<ADCurve> {
    params.validate()?;
    config.validate()?;
    let l = params.half_width;
    let grid = params.grid();
    let computed: Vec<Option<Result<CurvePoint>>> = grid
        .par_iter()
        .enumerate()
        .map(|(j, &x)| {
            let window: Vec<f64> = pairs
                .iter()
                .filter(|(a, _)| x - l <= *a && *a < x + l)
                .map(|&(_, v)| v)
                .collect();
            if window.len() < params.min_patients {
                return None;
            }
            Some(index_from_values(&window, spec, threshold, config).map(|d| CurvePoint {
                grid_index: j,
                x,
                d: d.value,
                n_window: window.len(),
            }))
        })
        .collect();

    let mut points = Vec::new();
    let mut degenerate_windows = 0;
    for item in computed.into_iter().flatten() {
        match item {
            Ok(p) => points.push(p),
            Err(Error::Degenerate(_)) => degenerate_windows += 1,
            Err(e) => return Err(e),
        }
    }
    if points.len() < 2 {
        return Err(Error::InsufficientData {
            what: format!(
                "A-D curve for group '{group_label}' (grid points with >= {} patients)",
                params.min_patients
            ),
            n: points.len(),
            need: 2,
        });
    }
    Ok(ADCurve {
        points,
        params: *params,
        group_label: group_label.to_string(),
        degenerate_windows,
    })
}

/// Build the A-D curve of a group. Only records that carry the measurement
/// count toward a window.
pub fn build_curve(
    group: &Cohort,
    spec: &MeasurementSpec,
    stratum: Option<&str>,
    config: &DeteriorationConfig,
    params: &CurveParams,
) -> Result<ADCurve> {
    let threshold = spec.threshold(stratum)?;
    let in_stratum = |r: &&crate::cohort::PatientRecord| stratum.is_none_or(|s| r.effective_stratum() == s);
    let missing = group
        .records()
        .iter()
        .filter(in_stratum)
        .filter(|r| r.allocation_score.is_none())
        .count();
    if missing > 0 {
        return Err(Error::validation(format!(
            "group '{}': {missing} records lack an allocation_score",
            group.label()
        )));
    }
    let pairs: Vec<(f64, f64)> = group
        .records()
        .iter()
        .filter(in_stratum)
        .filter_map(|r| Some((r.allocation_score?, r.measurement(&spec.name)?)))
        .collect();
    curve_from_pairs(&pairs, spec, threshold, config, params, group.label())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AUCResult {
    pub area: f64,
    pub region_lo: f64,
    pub region_hi: f64,
    /// Region after snapping inward onto the grid.
    pub snapped_lo: f64,
    pub snapped_hi: f64,
    /// Contiguous runs of at least two points that contributed area.
    pub segments_used: usize,
    /// Grid points inside the region absent from the curve.
    pub points_missing: usize,
}

/// Composite Simpson's rule on evenly spaced samples. With an odd number of
/// intervals the last one is integrated with the trapezoid rule.
pub fn simpson(ys: &[f64], dx: f64) -> f64 {
    let intervals = ys.len().saturating_sub(1);
    if intervals == 0 {
        return 0.0;
    }
    let even = intervals - intervals % 2;
    let mut total = 0.0;
    if even > 0 {
        let mut s = ys[0] + ys[even];
        for (i, y) in ys.iter().enumerate().take(even).skip(1) {
            s += if i % 2 == 1 { 4.0 * y } else { 2.0 * y };
        }
        total += s * dx / 3.0;
    }
    if intervals % 2 == 1 {
        total += 0.5 * dx * (ys[intervals - 1] + ys[intervals]);
    }
    total
}

/// Area under `curve` over `[region_lo, region_hi]`.
pub fn auc(curve: &ADCurve, region_lo: f64, region_hi: f64) -> Result<AUCResult> {
    if !(0.0 <= region_lo && region_lo < region_hi && region_hi <= 1.0) {
        return Err(Error::validation(format!(
            "region must satisfy 0 <= lo < hi <= 1, got [{region_lo}, {region_hi}]"
        )));
    }
    let steps = (curve.params.n - 1) as f64;
    let j_lo = (region_lo * steps - SNAP_SLACK).ceil().max(0.0) as usize;
    let j_hi = ((region_hi * steps + SNAP_SLACK).floor() as usize).min(curve.params.n - 1);
    let inside: Vec<&CurvePoint> = curve
        .points
        .iter()
        .filter(|p| p.grid_index >= j_lo && p.grid_index <= j_hi)
        .collect();
    if inside.is_empty() {
        return Err(Error::InsufficientData {
            what: format!("curve '{}' in region [{region_lo}, {region_hi}]", curve.group_label),
            n: 0,
            need: 1,
        });
    }

    let dx = curve.params.step();
    let mut area = 0.0;
    let mut segments_used = 0;
    let mut run: Vec<f64> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut flush = |run: &mut Vec<f64>| {
        if run.len() >= 2 {
            area += simpson(run, dx);
            segments_used += 1;
        }
        run.clear();
    };
    for p in &inside {
        if prev.is_some_and(|j| p.grid_index != j + 1) {
            flush(&mut run);
        }
        run.push(p.d);
        prev = Some(p.grid_index);
    }
    flush(&mut run);

    let grid = curve.params.grid();
    Ok(AUCResult {
        area,
        region_lo,
        region_hi,
        snapped_lo: grid[j_lo.min(curve.params.n - 1)],
        snapped_hi: grid[j_hi],
        segments_used,
        points_missing: (j_hi + 1).saturating_sub(j_lo) - inside.len(),
    })
}
