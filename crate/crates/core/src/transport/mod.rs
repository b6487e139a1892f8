//! Empirical Wasserstein distances between point clouds and estimators of the
//! distance from a sample law to a Gaussian.

mod discrete;
mod estimate;
pub mod lapjv;
mod selftest;

pub use discrete::DiscreteLaw;
pub use estimate::{estimate_wp_rank_matched, estimate_wp_to_gaussian, Estimator, WpEstimate};
pub use selftest::{selftest, wp_pow_brute_force, SelftestReport, MAX_BRUTE_FORCE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest cloud accepted by the assignment solver.
pub const MAX_ASSIGNMENT_SIZE: usize = 4096;

/// `m` points in R^d stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::BadParams(format!(
                "buffer of length {} is not a whole number of {dim}-dimensional points",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { dim, data })
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(xs.to_vec(), 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Coordinate `k` of every point.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.points().map(|p| p[k]).collect()
    }
}

fn check_pair(x: &PointCloud, y: &PointCloud, p: f64) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch { expected: x.dim(), got: y.dim() });
    }
    if x.len() != y.len() {
        return Err(Error::SizeMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::BadParams(format!("order p must be >= 1, got {p}")));
    }
    Ok(())
}

/// `‖a − b‖^p`, computed without a root for p = 2.
#[inline]
pub(crate) fn cost_pow(a: &[f64], b: &[f64], p: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    if p == 2.0 {
        sq
    } else if p == 1.0 {
        sq.sqrt()
    } else {
        sq.powf(0.5 * p)
    }
}

/// Optimal mean transport cost `W_p^p` between two uniform clouds of equal size.
pub fn wp_pow_assignment(x: &PointCloud, y: &PointCloud, p: f64) -> Result<f64> {
    check_pair(x, y, p)?;
    let m = x.len();
    if m > MAX_ASSIGNMENT_SIZE {
        return Err(Error::TooLarge(m, MAX_ASSIGNMENT_SIZE));
    }
    let mut cost = vec![0.0; m * m];
    for (i, row) in cost.chunks_exact_mut(m).enumerate() {
        let a = x.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = cost_pow(a, y.point(j), p);
        }
    }
    Ok(lapjv::solve(&cost, m).total / m as f64)
}

/// Exact `W_p` between two uniform clouds via optimal assignment.
pub fn wp_assignment(x: &PointCloud, y: &PointCloud, p: f64) -> Result<f64> {
    Ok(wp_pow_assignment(x, y, p)?.powf(1.0 / p))
}

/// Exact `W_p^p` in one dimension by matching order statistics.
pub fn wp_pow_sorted_1d(x: &[f64], y: &[f64], p: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let total: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).abs().powf(p)).sum();
    Ok(total / a.len() as f64)
}

/// Exact `W_p` between one-dimensional clouds.
pub fn wp_sorted_1d(x: &PointCloud, y: &PointCloud, p: f64) -> Result<f64> {
    check_pair(x, y, p)?;
    if x.dim() != 1 {
        return Err(Error::DimMismatch { expected: 1, got: x.dim() });
    }
    Ok(wp_pow_sorted_1d(x.as_slice(), y.as_slice(), p)?.powf(1.0 / p))
}

/// Exact `W_p` choosing the sorted route in one dimension.
pub fn wp_exact(x: &PointCloud, y: &PointCloud, p: f64) -> Result<f64> {
    if x.dim() == 1 {
        wp_sorted_1d(x, y, p)
    } else {
        wp_assignment(x, y, p)
    }
}
