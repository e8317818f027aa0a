//! Gaussian kernel density estimation over bounded measurements.
//!
//! Besides the usual pdf/cdf queries, [`DensityModel`] implements a
//! grid-scan boundary adjustment. A Gaussian KDE fitted to a sample bounded
//! at `lb` puts mass below `lb`; fitted to integer counts with a small
//! bandwidth it produces narrow pulses, and a cutoff placed on an integer
//! splits its pulse in half. The adjustment moves a cutoff outward to the
//! nearest point where the estimated density has dropped below `epsilon`, so
//! that the mass belonging to the cutoff is integrated with it.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cohort::Direction;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-10;

/// exp(-z^2/2) underflows to zero beyond this many bandwidths.
const KERNEL_REACH: f64 = 39.0;

/// How far below `lb` (above `ub`) the boundary scan reaches, in bandwidths.
pub const SCAN_EXTENSION: f64 = 10.0;

/// Interior points searched for a density valley between discrete values.
const VALLEY_POINTS: usize = 63;

/// Largest valley-to-peak density ratio that still separates two pulses.
const VALLEY_DEPTH: f64 = 1e-3;

/// Grid points per unit of measurement range for the boundary scan.
const SCAN_DENSITY: f64 = 20.0;
const SCAN_MIN_POINTS: usize = 200;
/// Cap on the extended scan grid relative to the in-range grid.
const SCAN_MAX_FACTOR: usize = 10;

const CV_FOLDS: usize = 5;
const CV_GRID: usize = 30;
const CV_SHUFFLE_SEED: u64 = 0x00da_1de5;
/// Terms with z^2 more than this above the nearest neighbour's are dropped
/// from the held-out log-likelihood (relative size below e^-40).
const CV_LOG_SPAN: f64 = 80.0;

fn inv_sqrt_2pi() -> f64 {
    1.0 / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Number of boundary-scan grid points for the range `[lb, ub]`.
pub fn scan_grid_size(lb: f64, ub: f64) -> usize {
    SCAN_MIN_POINTS.max((SCAN_DENSITY * (ub - lb)).round() as usize)
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
                .collect()
        }
    }
}

/// Result of integrating the density beyond a (possibly adjusted) cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailProbability {
    pub value: f64,
    pub adjusted_cutoff: f64,
    pub raw_cutoff: f64,
    pub direction: Direction,
}

/// A fitted Gaussian-kernel density over a bounded sample.
///
/// The boundary-scan caches are filled on first use and then shared, so a
/// model can be queried from several threads.
#[derive(Clone, Debug)]
pub struct DensityModel {
    sample: Vec<f64>,
    bandwidth: f64,
    lb: f64,
    ub: f64,
    discrete: bool,
    epsilon: f64,
    left_scan: OnceLock<Vec<f64>>,
    right_scan: OnceLock<Vec<f64>>,
}

/// Fit a KDE with a fixed bandwidth.
pub fn fit_density(sample: &[f64], bandwidth: f64, lb: f64, ub: f64, discrete: bool) -> Result<DensityModel> {
    if sample.len() < 2 {
        return Err(Error::InsufficientData {
            what: "density sample".into(),
            n: sample.len(),
            need: 2,
        });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::validation(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if !(lb < ub) {
        return Err(Error::validation(format!(
            "bounds must satisfy lb < ub, got [{lb}, {ub}]"
        )));
    }
    if let Some(bad) = sample.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite sample value {bad}")));
    }
    if let Some(out) = sample.iter().find(|&&v| v < lb || v > ub) {
        return Err(Error::validation(format!("sample value {out} outside [{lb}, {ub}]")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DensityModel {
        sample: sorted,
        bandwidth,
        lb,
        ub,
        discrete,
        epsilon: DEFAULT_EPSILON,
        left_scan: OnceLock::new(),
        right_scan: OnceLock::new(),
    })
}

impl DensityModel {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self.left_scan = OnceLock::new();
        self.right_scan = OnceLock::new();
        self
    }

    pub fn sample(&self) -> &[f64] {
        &self.sample
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lb, self.ub)
    }

    pub fn is_discrete(&self) -> bool {
        self.discrete
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn n(&self) -> f64 {
        self.sample.len() as f64
    }

    /// Index range of sample values within `reach` of `x`.
    fn window(&self, x: f64, reach: f64) -> (usize, usize) {
        let lo = self.sample.partition_point(|&m| m < x - reach);
        let hi = self.sample.partition_point(|&m| m <= x + reach);
        (lo, hi)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let (lo, hi) = self.window(x, KERNEL_REACH * h);
        let sum: f64 = self.sample[lo..hi]
            .iter()
            .map(|&m| {
                let z = (x - m) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum * inv_sqrt_2pi() / (self.n() * h)
    }

    /// Integral of the density over `(-inf, x]`, summed kernel by kernel.
    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        let h = self.bandwidth;
        let (lo, hi) = self.window(x, KERNEL_REACH * h);
        let partial: f64 = self.sample[lo..hi].iter().map(|&m| phi((x - m) / h)).sum();
        (lo as f64 + partial) / self.n()
    }

    /// Integral of the density over `[x, inf)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 0.0;
        }
        if x == f64::NEG_INFINITY {
            return 1.0;
        }
        let h = self.bandwidth;
        let (lo, hi) = self.window(x, KERNEL_REACH * h);
        let partial: f64 = self.sample[lo..hi].iter().map(|&m| phi((m - x) / h)).sum();
        ((self.sample.len() - hi) as f64 + partial) / self.n()
    }

    /// Low-density points found by the boundary scan. `sign = 1` scans for
    /// the left adjustment; `sign = -1` runs the same scan on the mirrored
    /// axis, so returned points are in mirrored coordinates.
    fn scan(&self, sign: f64) -> Vec<f64> {
        let (lb, ub) = if sign > 0.0 {
            (self.lb, self.ub)
        } else {
            (-self.ub, -self.lb)
        };
        let n_grid = scan_grid_size(lb, ub);
        let step = (ub - lb) / n_grid as f64;
        let lo = lb - SCAN_EXTENSION * self.bandwidth;
        let n = (((ub - lo) / step).ceil() as usize).clamp(n_grid, SCAN_MAX_FACTOR * n_grid);
        let grid = linspace(lo, ub, n);
        let s = (ub - lo) / n as f64;
        let pdf = |u: f64| self.pdf(sign * u);

        let mut low = Vec::new();
        for (i, &a) in grid.iter().enumerate() {
            let x_prev = if i > 0 { grid[i - 1] } else { lo };
            let mut x = a;
            let mut p = pdf(x);
            while p >= self.epsilon && x > x_prev {
                x -= s;
                p = pdf(x);
            }
            if p < self.epsilon {
                low.push(x);
            }
        }
        low
    }

    fn scan_cache(&self, sign: f64) -> &[f64] {
        if sign > 0.0 {
            self.left_scan.get_or_init(|| self.scan(1.0))
        } else {
            self.right_scan.get_or_init(|| self.scan(-1.0))
        }
    }

    /// Low-density points used by the left adjustment.
    pub fn left_boundary_points(&self) -> &[f64] {
        self.scan_cache(1.0)
    }

    /// Low-density points used by the right adjustment.
    pub fn right_boundary_points(&self) -> Vec<f64> {
        self.scan_cache(-1.0).iter().map(|&u| -u).collect()
    }

    /// Shared left adjustment on the (possibly mirrored) axis.
    fn adjust_mirrored(&self, sign: f64, u: f64) -> f64 {
        let lower = if sign > 0.0 { self.lb } else { -self.ub };
        let at_boundary = u == lower;
        // Largest sample value strictly below the cutoff; -inf lets a
        // boundary cutoff move into the leaked region.
        let floor = if at_boundary {
            f64::NEG_INFINITY
        } else if self.discrete {
            if sign > 0.0 {
                let idx = self.sample.partition_point(|&m| m < u);
                idx.checked_sub(1).map_or(f64::NEG_INFINITY, |i| self.sample[i])
            } else {
                let idx = self.sample.partition_point(|&m| m <= -u);
                self.sample.get(idx).map_or(f64::NEG_INFINITY, |&m| -m)
            }
        } else {
            // Continuous interior cutoff: any candidate lies below u itself.
            return u;
        };
        let candidate = self
            .scan_cache(sign)
            .iter()
            .copied()
            .filter(|&v| v < u)
            .fold(f64::NEG_INFINITY, f64::max);
        if candidate > floor {
            candidate
        } else if self.discrete && floor.is_finite() {
            self.valley(sign, floor, u)
        } else {
            u
        }
    }

    /// Lowest-density point strictly between two neighbouring discrete
    /// values, on the (possibly mirrored) axis. Used when pulses overlap too
    /// much for the density to drop below epsilon between them. Returns `u`
    /// unless the density there is at most `VALLEY_DEPTH` times the lower of
    /// the two pulse peaks.
    fn valley(&self, sign: f64, floor: f64, u: f64) -> f64 {
        let grid = linspace(floor, u, VALLEY_POINTS + 2);
        let (p_min, x_min) = grid[1..=VALLEY_POINTS]
            .iter()
            .map(|&x| (self.pdf(sign * x), x))
            .fold((f64::INFINITY, u), |best, cur| if cur.0 < best.0 { cur } else { best });
        let peak = self.pdf(sign * floor).min(self.pdf(sign * u));
        if p_min <= VALLEY_DEPTH * peak {
            x_min
        } else {
            u
        }
    }

    /// Move cutoff `t` left so that mass attached to `t` is counted in
    /// `Pr(M >= t)`.
    pub fn adjust_left_boundary(&self, t: f64) -> f64 {
        self.adjust_mirrored(1.0, t)
    }

    /// Mirror of [`adjust_left_boundary`](Self::adjust_left_boundary) for
    /// `Pr(M <= t)`.
    pub fn adjust_right_boundary(&self, t: f64) -> f64 {
        -self.adjust_mirrored(-1.0, -t)
    }

    /// Adjusted cutoff for `direction`.
    pub fn adjust(&self, t: f64, direction: Direction) -> f64 {
        match direction {
            Direction::HigherIsWorse => self.adjust_left_boundary(t),
            Direction::LowerIsWorse => self.adjust_right_boundary(t),
        }
    }

    /// Mass on the worse side of an already adjusted cutoff, not normalised.
    pub fn raw_tail(&self, adjusted: f64, direction: Direction) -> f64 {
        match direction {
            Direction::HigherIsWorse => self.survival(adjusted),
            Direction::LowerIsWorse => self.cdf(adjusted),
        }
    }

    /// Mass over the adjusted legitimate support, used to renormalise tail
    /// probabilities.
    pub fn support_mass(&self, direction: Direction) -> f64 {
        let edge = match direction {
            Direction::HigherIsWorse => self.lb,
            Direction::LowerIsWorse => self.ub,
        };
        self.raw_tail(self.adjust(edge, direction), direction)
    }

    pub fn tail_probability(&self, t: f64, direction: Direction) -> Result<TailProbability> {
        if !(t >= self.lb && t <= self.ub) {
            return Err(Error::validation(format!(
                "cutoff {t} outside [{}, {}]",
                self.lb, self.ub
            )));
        }
        let adjusted = self.adjust(t, direction);
        let z = self.support_mass(direction);
        let value = (self.raw_tail(adjusted, direction) / z).clamp(0.0, 1.0);
        Ok(TailProbability {
            value,
            adjusted_cutoff: adjusted,
            raw_cutoff: t,
            direction,
        })
    }

    /// `(x, pdf(x))` over the bounds widened by the scan extension.
    pub fn pdf_grid(&self, n: usize) -> Vec<(f64, f64)> {
        let pad = SCAN_EXTENSION * self.bandwidth;
        linspace(self.lb - pad, self.ub + pad, n)
            .into_iter()
            .map(|x| (x, self.pdf(x)))
            .collect()
    }
}

fn std_dev(sample: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// Silverman's rule of thumb, `1.06 σ n^(-1/5)`.
pub fn silverman_bandwidth(sample: &[f64]) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::InsufficientData {
            what: "bandwidth sample".into(),
            n: sample.len(),
            need: 2,
        });
    }
    let sd = std_dev(sample);
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::degenerate(
            "sample has zero variance; supply a fixed bandwidth instead",
        ));
    }
    Ok(1.06 * sd * (sample.len() as f64).powf(-0.2))
}

/// The candidate bandwidths searched by [`select_bandwidth`].
pub fn bandwidth_grid(silverman: f64) -> Vec<f64> {
    (0..CV_GRID)
        .map(|j| silverman * 10f64.powf(-1.0 + 2.0 * j as f64 / (CV_GRID - 1) as f64))
        .collect()
}

/// Log of the KDE over sorted `train` evaluated at `x`.
fn log_density(train: &[f64], x: f64, h: f64) -> f64 {
    let idx = train.partition_point(|&m| m < x);
    let nearest = [idx.checked_sub(1), Some(idx)]
        .into_iter()
        .flatten()
        .filter_map(|i| train.get(i))
        .map(|&m| (x - m).abs())
        .fold(f64::INFINITY, f64::min);
    let z_min2 = (nearest / h).powi(2);
    let reach = h * (z_min2 + CV_LOG_SPAN).sqrt();
    let lo = train.partition_point(|&m| m < x - reach);
    let hi = train.partition_point(|&m| m <= x + reach);
    let sum: f64 = train[lo..hi]
        .iter()
        .map(|&m| {
            let z = (x - m) / h;
            (-0.5 * (z * z - z_min2)).exp()
        })
        .sum();
    -0.5 * z_min2 + sum.ln() - (train.len() as f64 * h / inv_sqrt_2pi()).ln()
}

/// Choose a bandwidth by 5-fold cross-validated held-out log-likelihood
/// over a log-spaced grid around Silverman's rule.
///
/// Folds are contiguous blocks of a shuffled copy of the sample, shuffled
/// with a fixed seed, so the result only depends on the sample and its order.
pub fn select_bandwidth(sample: &[f64]) -> Result<f64> {
    const MIN: usize = 10;
    if sample.len() < MIN {
        return Err(Error::InsufficientData {
            what: "bandwidth selection sample".into(),
            n: sample.len(),
            need: MIN,
        });
    }
    if let Some(bad) = sample.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite sample value {bad}")));
    }
    let silverman = silverman_bandwidth(sample)?;

    let mut shuffled = sample.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(CV_SHUFFLE_SEED));
    let n = shuffled.len();
    let folds: Vec<(Vec<f64>, Vec<f64>)> = (0..CV_FOLDS)
        .map(|f| {
            let (start, end) = (f * n / CV_FOLDS, (f + 1) * n / CV_FOLDS);
            let test = shuffled[start..end].to_vec();
            let mut train: Vec<f64> = shuffled[..start].iter().chain(&shuffled[end..]).copied().collect();
            train.sort_by(f64::total_cmp);
            (train, test)
        })
        .collect();

    let grid = bandwidth_grid(silverman);
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&h| {
            let total: f64 = folds
                .iter()
                .map(|(train, test)| test.iter().map(|&x| log_density(train, x, h)).sum::<f64>())
                .sum();
            total / n as f64
        })
        .collect();

    let mut best = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = j;
        }
    }
    Ok(grid[best])
}
