//! The conditional-dependence functional
//! `Σ_i E[‖U_i‖ · W₂²(L(W), L(W | U_i))]` for a normalized sum `W = Σ U_i`.
//! For chains the conditioning is on the state `x_i`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::MomentProfile;
use crate::markov::{conditional_sum_law, exact_covariances, stationary_dist, sum_law, time_reversal, FiniteChain};
use crate::rng::{stream, Rng};
use crate::stats::{mean, std_err};
use crate::transport::{wp_pow_assignment, wp_pow_sorted_1d, PointCloud, MAX_ASSIGNMENT_SIZE};

/// Horizon above which nested Monte Carlo is refused.
pub const MAX_FUNCTIONAL_N: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DependenceSource {
    Iid { profile: MomentProfile, d: usize },
    Chain { chain: FiniteChain },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceFunctional {
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub method: String,
}

fn w2_sq(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.dim() == 1 {
        wp_pow_sorted_1d(a.as_slice(), b.as_slice(), 2.0)
    } else {
        wp_pow_assignment(a, b, 2.0)
    }
}

/// Whitening `Σ^{-1/2}` of a chain's normalized sum.
struct ChainFrame {
    pi: Vec<f64>,
    /// `Σ_n^{-1/2} h̄(x) / √n` per state.
    u: Vec<Vec<f64>>,
    rev: FiniteChain,
}

impl ChainFrame {
    fn new(chain: &FiniteChain, n: usize) -> Result<Self> {
        chain.check_ergodic()?;
        let pi = stationary_dist(chain)?;
        let hbar = chain.centered_obs()?;
        let sigma = exact_covariances(chain, n)?.sigma_n;
        let w = sigma.inv_sqrt()?;
        let scale = 1.0 / (n as f64).sqrt();
        let u = hbar
            .iter()
            .map(|h| (0..h.len()).map(|a| (0..h.len()).map(|b| w[(a, b)] * h[b]).sum::<f64>() * scale).collect())
            .collect();
        Ok(Self { pi, u, rev: time_reversal(chain)? })
    }

    /// `W` for a path with `x_i = x`, sampled backwards and forwards.
    fn draw_given(&self, chain: &FiniteChain, n: usize, i: usize, x: usize, rng: &mut Rng, out: &mut [f64]) {
        out.copy_from_slice(&self.u[x]);
        let mut y = x;
        for _ in 0..i {
            y = self.rev.step(y, rng);
            out.iter_mut().zip(&self.u[y]).for_each(|(o, v)| *o += v);
        }
        y = x;
        for _ in i + 1..n {
            y = chain.step(y, rng);
            out.iter_mut().zip(&self.u[y]).for_each(|(o, v)| *o += v);
        }
    }

    fn draw(&self, chain: &FiniteChain, n: usize, rng: &mut Rng, out: &mut [f64]) {
        let x = FiniteChain::sample_from(&self.pi, rng);
        self.draw_given(chain, n, 0, x, rng, out);
    }
}

fn trivial_chain(chain: &FiniteChain, n: usize) -> Result<Option<DependenceFunctional>> {
    let zero = chain.centered_obs()?.iter().all(|h| h.iter().all(|v| *v == 0.0));
    Ok(zero.then(|| DependenceFunctional { n, value: 0.0, stderr: 0.0, method: "constant observable".into() }))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn cloud(m: usize, d: usize, mut fill: impl FnMut(&mut [f64])) -> Result<PointCloud> {
    let mut data = vec![0.0; m * d];
    data.chunks_exact_mut(d).for_each(&mut fill);
    PointCloud::new(data, d)
}

/// Nested Monte Carlo estimate. Each outer replicate fixes `U_i` (or `x_i`)
/// and compares a conditional cloud of size `inner_m` with an unconditional
/// one; with `debias` the W₂² between two further unconditional clouds is
/// subtracted. For i.i.d. summands the n terms are exchangeable and one
/// index stands for all of them.
pub fn estimate_dependence_functional(
    source: &DependenceSource,
    n: usize,
    outer_reps: usize,
    inner_m: usize,
    debias: bool,
    seed: u64,
    budget_secs: Option<f64>,
) -> Result<DependenceFunctional> {
    if n == 0 || n > MAX_FUNCTIONAL_N {
        return Err(Error::BadParams(format!("need 1 <= n <= {MAX_FUNCTIONAL_N}, got {n}")));
    }
    if outer_reps < 2 || inner_m < 2 {
        return Err(Error::BadParams("need outer_reps >= 2 and inner_m >= 2".into()));
    }
    let start = Instant::now();
    let over_budget = || budget_secs.filter(|&b| start.elapsed().as_secs_f64() > b);
    let scale = 1.0 / (n as f64).sqrt();

    let terms: Vec<Result<f64>> = match source {
        DependenceSource::Iid { profile, d } => {
            profile.validate()?;
            let d = *d;
            if d > 1 && inner_m > MAX_ASSIGNMENT_SIZE {
                return Err(Error::TooLarge(inner_m, MAX_ASSIGNMENT_SIZE));
            }
            let tail = |rng: &mut Rng, out: &mut [f64], skip: usize| {
                for _ in skip..n {
                    out.iter_mut().for_each(|o| *o += scale * profile.sample(rng));
                }
            };
            let mut rng = stream(seed, &[0]);
            let free = |rng: &mut Rng| {
                cloud(inner_m, d, |row| {
                    row.fill(0.0);
                    tail(rng, row, 0)
                })
            };
            let base = free(&mut rng)?;
            let baseline = if debias { w2_sq(&free(&mut rng)?, &free(&mut rng)?)? } else { 0.0 };
            (0..outer_reps)
                .into_par_iter()
                .map(|o| {
                    if let Some(b) = over_budget() {
                        return Err(Error::BudgetExceeded(b));
                    }
                    let mut rng = stream(seed, &[1, o as u64]);
                    let u0: Vec<f64> = (0..d).map(|_| scale * profile.sample(&mut rng)).collect();
                    let cond = cloud(inner_m, d, |row| {
                        row.copy_from_slice(&u0);
                        tail(&mut rng, row, 1)
                    })?;
                    Ok(n as f64 * norm(&u0) * (w2_sq(&cond, &base)? - baseline))
                })
                .collect()
        }
        DependenceSource::Chain { chain } => {
            if let Some(z) = trivial_chain(chain, n)? {
                return Ok(z);
            }
            let frame = ChainFrame::new(chain, n)?;
            let d = chain.dim();
            if d > 1 && inner_m > MAX_ASSIGNMENT_SIZE {
                return Err(Error::TooLarge(inner_m, MAX_ASSIGNMENT_SIZE));
            }
            let mut rng = stream(seed, &[0]);
            let free = |rng: &mut Rng| cloud(inner_m, d, |row| frame.draw(chain, n, rng, row));
            let base = free(&mut rng)?;
            let baseline = if debias { w2_sq(&free(&mut rng)?, &free(&mut rng)?)? } else { 0.0 };
            (0..outer_reps)
                .into_par_iter()
                .map(|o| {
                    let mut total = 0.0;
                    for i in 0..n {
                        if let Some(b) = over_budget() {
                            return Err(Error::BudgetExceeded(b));
                        }
                        let mut rng = stream(seed, &[1, o as u64, i as u64]);
                        let x = FiniteChain::sample_from(&frame.pi, &mut rng);
                        let cond = cloud(inner_m, d, |row| frame.draw_given(chain, n, i, x, &mut rng, row))?;
                        total += norm(&frame.u[x]) * (w2_sq(&cond, &base)? - baseline);
                    }
                    Ok(total)
                })
                .collect()
        }
    };
    let terms: Vec<f64> = terms.into_iter().collect::<Result<_>>()?;
    Ok(DependenceFunctional {
        n,
        value: mean(&terms).max(0.0),
        stderr: std_err(&terms),
        method: format!(
            "nested Monte Carlo, {outer_reps} outer x {inner_m} inner{}",
            if debias { ", debiased" } else { "" }
        ),
    })
}

/// Exact functional for a scalar finite chain from exact laws of `S_n` and
/// of `S_n | x_i`.
pub fn dependence_functional_exact(chain: &FiniteChain, n: usize) -> Result<DependenceFunctional> {
    if chain.dim() != 1 {
        return Err(Error::DimMismatch { expected: 1, got: chain.dim() });
    }
    if let Some(z) = trivial_chain(chain, n)? {
        return Ok(z);
    }
    let frame = ChainFrame::new(chain, n)?;
    let sigma = exact_covariances(chain, n)?.sigma_n.get(0, 0);
    let norm_scale = 1.0 / (n as f64 * sigma).sqrt();
    let marginal = sum_law(chain, n, &frame.pi)?.affine(norm_scale, 0.0);
    let per_index: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for (x, &px) in frame.pi.iter().enumerate() {
                let u = frame.u[x][0].abs();
                if px == 0.0 || u == 0.0 {
                    continue;
                }
                let cond = conditional_sum_law(chain, n, i, x)?.affine(norm_scale, 0.0);
                acc += px * u * marginal.wp_pow(&cond, 2.0);
            }
            Ok(acc)
        })
        .collect();
    let value = per_index.into_iter().sum::<Result<f64>>()?;
    Ok(DependenceFunctional { n, value, stderr: 0.0, method: "exact laws".into() })
}

/// Exact `W₁(L(W), N(0, 1))` for the standardized sum of a scalar chain
/// started from stationarity.
pub fn exact_chain_w1(chain: &FiniteChain, n: usize) -> Result<f64> {
    if chain.dim() != 1 {
        return Err(Error::DimMismatch { expected: 1, got: chain.dim() });
    }
    let pi = stationary_dist(chain)?;
    let sigma = exact_covariances(chain, n)?.sigma_n.get(0, 0);
    let law = sum_law(chain, n, &pi)?.affine(1.0 / (n as f64 * sigma).sqrt(), 0.0);
    Ok(law.w1_to_normal(0.0, 1.0))
}
