//! Normality diagnostics for standardized estimation errors: one-sample
//! Kolmogorov-Smirnov distance, fixed-range histograms and QQ pairs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mean_models::SigmaMatrix;

pub const MIN_DIAGNOSTIC_SAMPLE: usize = 10;
pub const HISTOGRAM_BINS: usize = 30;
/// Histogram half-width in units of the reference standard deviation.
pub const HISTOGRAM_HALF_WIDTH: f64 = 4.0;

/// `sup_x |F_N(x) - cdf(x)|` for the empirical distribution of `sample`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |acc, (i, &x)| {
        let f = cdf(x);
        let above = (i as f64 + 1.0) / n - f;
        let below = f - i as f64 / n;
        acc.max(above).max(below)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `count / (N * width)`, comparable with a density overlay.
    pub density: Vec<f64>,
    /// Values falling outside the histogram range.
    pub outside: usize,
}

impl Histogram {
    pub fn equal_width(sample: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        let mut outside = 0;
        for &x in sample {
            if !(x >= lo && x <= hi) {
                outside += 1;
                continue;
            }
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = sample.len().max(1) as f64;
        let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
        Self {
            edges,
            counts,
            density,
            outside,
        }
    }
}

/// Diagnostics for one parameter component against `N(0, sd^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDiagnostics {
    pub component: usize,
    pub reference_sd: f64,
    pub ks: f64,
    pub histogram: Histogram,
    /// `(theoretical quantile, sorted sample value)` at levels `(i - 0.5) / N`.
    pub qq: Vec<(f64, f64)>,
}

/// Diagnostics for a single column against `N(0, sd^2)`.
pub fn component_diagnostics(sample: &[f64], sd: f64, component: usize) -> Result<ComponentDiagnostics> {
    if sample.len() < MIN_DIAGNOSTIC_SAMPLE {
        return Err(Error::InsufficientSample {
            needed: MIN_DIAGNOSTIC_SAMPLE,
            got: sample.len(),
        });
    }
    let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ks = ks_statistic(sample, |x| normal.cdf(x));
    let half = HISTOGRAM_HALF_WIDTH * sd;
    let histogram = Histogram::equal_width(sample, -half, half, HISTOGRAM_BINS);
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (normal.inverse_cdf((i as f64 + 0.5) / n), x))
        .collect();
    Ok(ComponentDiagnostics {
        component,
        reference_sd: sd,
        ks,
        histogram,
        qq,
    })
}

/// Per-component diagnostics of an `N x p` matrix of standardized errors
/// against the marginals of `N(0, Sigma^{-1})`.
pub fn normality_diagnostics(
    standardized: &DMatrix<f64>,
    sigma: &SigmaMatrix,
) -> Result<Vec<ComponentDiagnostics>> {
    if standardized.ncols() != sigma.dim() {
        return Err(Error::InvalidArgument(format!(
            "{} error columns for a {}-dimensional information matrix",
            standardized.ncols(),
            sigma.dim()
        )));
    }
    let sds = sigma.asymptotic_sd()?;
    (0..standardized.ncols())
        .map(|j| {
            let col: Vec<f64> = standardized.column(j).iter().copied().collect();
            component_diagnostics(&col, sds[j], j)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    /// Empirical `E |z|^2` over replications.
    pub second_moment: f64,
    /// `trace(Sigma^{-1})`, the second moment of the limit law.
    pub target: f64,
    pub relative_deviation: f64,
}

/// Compares the empirical second moment of standardized errors with
/// `trace(Sigma^{-1})`.
pub fn moment_check(standardized: &DMatrix<f64>, sigma: &SigmaMatrix) -> Result<MomentCheck> {
    let rows = standardized.nrows();
    if rows == 0 {
        return Err(Error::InsufficientSample { needed: 1, got: 0 });
    }
    let second_moment = standardized
        .row_iter()
        .map(|r| r.norm_squared())
        .sum::<f64>()
        / rows as f64;
    let target = sigma.inverse()?.trace();
    Ok(MomentCheck {
        second_moment,
        target,
        relative_deviation: (second_moment - target).abs() / target,
    })
}
