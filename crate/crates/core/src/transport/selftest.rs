use itertools::Itertools;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{cost_pow, wp_pow_assignment, PointCloud};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Largest cloud the permutation oracle accepts.
pub const MAX_BRUTE_FORCE: usize = 8;

/// `W_p^p` by minimizing over every permutation.
pub fn wp_pow_brute_force(x: &PointCloud, y: &PointCloud, p: f64) -> Result<f64> {
    let m = x.len();
    if m != y.len() {
        return Err(Error::SizeMismatch(m, y.len()));
    }
    if m > MAX_BRUTE_FORCE {
        return Err(Error::TooLarge(m, MAX_BRUTE_FORCE));
    }
    let best = (0..m)
        .permutations(m)
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| cost_pow(x.point(i), y.point(j), p)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(best / m as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub instances: usize,
    pub exact: usize,
    pub max_abs_diff: f64,
    pub failures: Vec<String>,
}

impl SelftestReport {
    pub fn summary(&self) -> String {
        format!("{}/{} instances exact", self.exact, self.instances)
    }

    pub fn passed(&self) -> bool {
        self.exact == self.instances
    }
}

/// Solver against the permutation oracle on random instances with
/// `m ≤ 7`, `d ∈ {1, 2, 3}`, `p ∈ {1, 2, 3}`; exact means `|diff| ≤ 1e-9`.
pub fn selftest(instances: usize, seed: u64) -> Result<SelftestReport> {
    let mut report = SelftestReport { instances, exact: 0, max_abs_diff: 0.0, failures: Vec::new() };
    for k in 0..instances {
        let mut rng = stream(seed, &[k as u64]);
        let m = rng.random_range(1..=7);
        let d = 1 + k % 3;
        let p = (1 + (k / 3) % 3) as f64;
        let mut draw = || PointCloud::new((0..m * d).map(|_| rng.random_range(-10.0..10.0)).collect(), d);
        let (x, y) = (draw()?, draw()?);
        let diff = (wp_pow_assignment(&x, &y, p)? - wp_pow_brute_force(&x, &y, p)?).abs();
        report.max_abs_diff = report.max_abs_diff.max(diff);
        if diff <= 1e-9 {
            report.exact += 1;
        } else {
            report.failures.push(format!("instance {k}: m = {m}, d = {d}, p = {p}, diff = {diff:e}"));
        }
    }
    Ok(report)
}
