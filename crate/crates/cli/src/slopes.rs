//! Log-log decay-rate fits over a records file: per-x medians across
//! seeds, an OLS slope, and a seed-level bootstrap band for it.

use std::collections::{BTreeMap, BTreeSet};

use prefqe_core::seeding::rng_for;
use rand::Rng;
use serde::Serialize;

use crate::runner::RecordRow;

/// Which grid axis the fit sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XAxis {
    K,
    KHf,
}

impl XAxis {
    fn name(self) -> &'static str {
        match self {
            XAxis::K => "K",
            XAxis::KHf => "K_HF",
        }
    }

    fn value(self, row: &RecordRow) -> usize {
        match self {
            XAxis::K => row.summary.k,
            XAxis::KHf => row.summary.k_hf,
        }
    }

    /// The other sample-size axis, which must stay constant.
    fn frozen(self, row: &RecordRow) -> usize {
        match self {
            XAxis::K => row.summary.k_hf,
            XAxis::KHf => row.summary.k,
        }
    }
}

/// Which metric column the fit explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YMetric {
    AbsErr,
    RewardMse,
}

impl YMetric {
    fn name(self) -> &'static str {
        match self {
            YMetric::AbsErr => "abs_err",
            YMetric::RewardMse => "reward_mse",
        }
    }

    fn value(self, row: &RecordRow) -> f64 {
        match self {
            YMetric::AbsErr => row.summary.abs_err,
            YMetric::RewardMse => row.summary.reward_mse_mean,
        }
    }
}

const BOOTSTRAP_SAMPLES: usize = 1000;

/// Fit result; serialized as the command's JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub x_axis: &'static str,
    pub y_metric: &'static str,
    pub slope: f64,
    pub intercept: f64,
    /// 95 percent percentile band for the slope from a seed-level bootstrap.
    pub band_lo: f64,
    pub band_hi: f64,
    pub x_values: Vec<usize>,
    pub medians: Vec<f64>,
    pub seeds: usize,
    pub bootstrap_samples: usize,
}

/// Ordinary least squares y = a + b x; returns (b, a).
fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    (slope, mean_y - slope * mean_x)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Fits ln(median y) against ln x by OLS. Requires at least 3 distinct x
/// values, the same set of at least 5 seeds at every x, strictly positive
/// metric values, and every other grid axis held constant.
pub fn fit_decay_slope(
    rows: &[RecordRow],
    x_axis: XAxis,
    y_metric: YMetric,
) -> Result<SlopeFit, String> {
    if rows.is_empty() {
        return Err("records file has no rows".to_string());
    }
    let frozen: BTreeSet<usize> = rows.iter().map(|r| x_axis.frozen(r)).collect();
    if frozen.len() > 1 {
        let other = match x_axis {
            XAxis::K => "K_HF",
            XAxis::KHf => "K",
        };
        return Err(format!(
            "{other} varies across rows ({frozen:?}); restrict the records to one value before fitting against {}",
            x_axis.name()
        ));
    }
    let dims: BTreeSet<usize> = rows.iter().map(|r| r.summary.ambient_dim).collect();
    if dims.len() > 1 {
        return Err(format!(
            "D varies across rows ({dims:?}); restrict the records to one ambient dimension"
        ));
    }

    let mut table: BTreeMap<usize, BTreeMap<u64, f64>> = BTreeMap::new();
    for row in rows {
        let y = y_metric.value(row);
        if y.is_nan() || y <= 0.0 {
            return Err(format!(
                "{} = {y} at seed {}, {} = {}; log-log fitting needs strictly positive values",
                y_metric.name(),
                row.summary.seed,
                x_axis.name(),
                x_axis.value(row)
            ));
        }
        let cell = table.entry(x_axis.value(row)).or_default();
        if cell.insert(row.summary.seed, y).is_some() {
            return Err(format!(
                "duplicate row for seed {} at {} = {}",
                row.summary.seed,
                x_axis.name(),
                x_axis.value(row)
            ));
        }
    }
    if table.len() < 3 {
        return Err(format!(
            "need at least 3 distinct {} values, found {}",
            x_axis.name(),
            table.len()
        ));
    }
    let seed_sets: Vec<BTreeSet<u64>> = table
        .values()
        .map(|m| m.keys().copied().collect())
        .collect();
    if seed_sets.windows(2).any(|w| w[0] != w[1]) {
        return Err(format!("seed sets differ across {} values", x_axis.name()));
    }
    let seeds: Vec<u64> = seed_sets[0].iter().copied().collect();
    if seeds.len() < 5 {
        return Err(format!(
            "need at least 5 seeds per point, found {}",
            seeds.len()
        ));
    }

    let x_values: Vec<usize> = table.keys().copied().collect();
    let per_x: Vec<Vec<f64>> = x_values
        .iter()
        .map(|x| seeds.iter().map(|s| table[x][s]).collect())
        .collect();
    let medians: Vec<f64> = per_x
        .iter()
        .map(|ys| {
            let mut sorted = ys.clone();
            sorted.sort_by(f64::total_cmp);
            median(&sorted)
        })
        .collect();
    let points: Vec<(f64, f64)> = x_values
        .iter()
        .zip(&medians)
        .map(|(x, m)| ((*x as f64).ln(), m.ln()))
        .collect();
    let (slope, intercept) = ols(&points);

    // Seed-level bootstrap: resample the seed list with replacement, rebuild
    // every median from the resampled multiset, refit. Deterministic.
    let mut rng = rng_for(0, "slope-bootstrap");
    let n = seeds.len();
    let mut boot_slopes = Vec::with_capacity(BOOTSTRAP_SAMPLES);
    let mut resampled = vec![0.0_f64; n];
    for _ in 0..BOOTSTRAP_SAMPLES {
        let draw: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let boot_points: Vec<(f64, f64)> = per_x
            .iter()
            .zip(&points)
            .map(|(ys, (lx, _))| {
                for (slot, &i) in resampled.iter_mut().zip(&draw) {
                    *slot = ys[i];
                }
                resampled.sort_by(f64::total_cmp);
                (*lx, median(&resampled).ln())
            })
            .collect();
        boot_slopes.push(ols(&boot_points).0);
    }
    boot_slopes.sort_by(f64::total_cmp);
    let rank = |q: f64| ((BOOTSTRAP_SAMPLES - 1) as f64 * q).round() as usize;
    let band_lo = boot_slopes[rank(0.025)];
    let band_hi = boot_slopes[rank(0.975)];

    Ok(SlopeFit {
        x_axis: x_axis.name(),
        y_metric: y_metric.name(),
        slope,
        intercept,
        band_lo,
        band_hi,
        x_values,
        medians,
        seeds: seeds.len(),
        bootstrap_samples: BOOTSTRAP_SAMPLES,
    })
}
