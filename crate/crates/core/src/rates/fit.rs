use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::RatePoint;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::stats::{quantile_sorted, weighted_line_fit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bootstrap: usize,
    pub seed: u64,
    /// Drop floored points, provided at least four remain.
    pub exclude_flagged: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { bootstrap: 1000, seed: 0, exclude_flagged: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci: (f64, f64),
    pub r_squared: f64,
    /// n values entering the fit.
    pub used: Vec<usize>,
    pub warnings: Vec<String>,
}

const MIN_POINTS: usize = 4;

fn floored(est: f64, stderr: f64) -> (f64, bool) {
    if est < stderr / 2.0 {
        (stderr / 2.0, true)
    } else {
        (est, false)
    }
}

fn fit_once(ns: &[f64], est: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let y: Vec<f64> = est.iter().map(|e| e.ln()).collect();
    weighted_line_fit(ns, &y, w)
}

/// Weighted least squares of `log estimate` on `log n`, with a bootstrap
/// percentile interval. Estimates below `stderr/2` are floored there and
/// flagged in place.
pub fn fit_rate(points: &mut [RatePoint], opts: &FitOptions) -> Result<RateFit> {
    if points.len() < MIN_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_POINTS, have: points.len() });
    }
    let bad = points.iter().filter(|p| !p.estimate.is_finite() || !p.stderr.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFinite);
    }
    let non_positive = points.iter().filter(|p| p.estimate <= 0.0 && p.stderr <= 0.0).count();
    if non_positive > 0 {
        return Err(Error::NonPositiveEstimates(non_positive));
    }
    for p in points.iter_mut() {
        p.flagged = floored(p.estimate, p.stderr).1;
    }
    let mut warnings = Vec::new();
    let flagged = points.iter().filter(|p| p.flagged).count();
    let keep: Vec<&RatePoint> = if opts.exclude_flagged && points.len() - flagged >= MIN_POINTS {
        points.iter().filter(|p| !p.flagged).collect()
    } else {
        if opts.exclude_flagged && flagged > 0 {
            warnings.push(format!("{flagged} floored points kept: excluding them leaves too few"));
        }
        points.iter().collect()
    };
    let ns: Vec<f64> = keep.iter().map(|p| (p.n as f64).ln()).collect();
    let est: Vec<f64> = keep.iter().map(|p| floored(p.estimate, p.stderr).0).collect();
    // inverse relative variance; equal weights for exact points
    let w: Vec<f64> = if keep.iter().all(|p| p.stderr > 0.0) {
        keep.iter().zip(&est).map(|(p, e)| (e / p.stderr).powi(2)).collect()
    } else {
        vec![1.0; keep.len()]
    };
    let (slope, intercept, r_squared) = fit_once(&ns, &est, &w);

    let mut rng = stream(opts.seed, &[]);
    let mut slopes = Vec::with_capacity(opts.bootstrap);
    let mut resampled = vec![0.0; keep.len()];
    for _ in 0..opts.bootstrap {
        for (slot, p) in resampled.iter_mut().zip(&keep) {
            let shift = if p.replicates.len() >= 2 {
                let k = p.replicates.len();
                let pm = p.replicates.iter().sum::<f64>() / k as f64;
                (0..k).map(|_| p.replicates[rng.random_range(0..k)]).sum::<f64>() / k as f64 - pm
            } else {
                p.stderr * rng.sample::<f64, _>(StandardNormal)
            };
            *slot = floored(p.estimate + shift, p.stderr).0;
        }
        slopes.push(fit_once(&ns, &resampled, &w).0);
    }
    let ci = if slopes.is_empty() {
        (slope, slope)
    } else {
        slopes.sort_by(f64::total_cmp);
        (quantile_sorted(&slopes, 0.025).min(slope), quantile_sorted(&slopes, 0.975).max(slope))
    };
    Ok(RateFit { slope, intercept, ci, r_squared, used: keep.iter().map(|p| p.n).collect(), warnings })
}
