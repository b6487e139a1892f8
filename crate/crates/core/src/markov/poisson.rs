use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{center, stationary_dist, FiniteChain};
use crate::error::{Error, Result};
use crate::linalg::PsdMatrix;

/// Solution of `(I − P) g = h − π(h)` normalized by `π(g) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    /// `g[x][k]`
    pub g: Vec<Vec<f64>>,
    /// `(Pg)[x][k]`
    pub pg: Vec<Vec<f64>>,
    /// Centred observable.
    pub hbar: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    /// `max |(I − P) g − h̄|`
    pub residual: f64,
}

fn apply(p: &DMatrix<f64>, f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s = p.nrows();
    let d = f[0].len();
    (0..s).map(|x| (0..d).map(|k| (0..s).map(|y| p[(x, y)] * f[y][k]).sum()).collect()).collect()
}

pub fn poisson_solve(chain: &FiniteChain) -> Result<PoissonSolution> {
    let pi = stationary_dist(chain)?;
    let s = chain.n_states();
    let d = chain.dim();
    let hbar = center(chain.obs(), &pi);
    // (I − P + 1π) is invertible for an irreducible chain and its solution
    // automatically satisfies π(g) = π(h̄) = 0.
    let mut a = DMatrix::identity(s, s) - chain.kernel();
    for x in 0..s {
        for y in 0..s {
            a[(x, y)] += pi[y];
        }
    }
    let lu = a.lu();
    let mut g = vec![vec![0.0; d]; s];
    for k in 0..d {
        let rhs = DVector::from_iterator(s, hbar.iter().map(|h| h[k]));
        let sol = lu.solve(&rhs).ok_or(Error::Reducible)?;
        for x in 0..s {
            g[x][k] = sol[x];
        }
    }
    let pg = apply(chain.kernel(), &g);
    let residual = (0..s)
        .flat_map(|x| (0..d).map(move |k| (x, k)))
        .map(|(x, k)| (g[x][k] - pg[x][k] - hbar[x][k]).abs())
        .fold(0.0, f64::max);
    Ok(PoissonSolution { g, pg, hbar, pi, residual })
}

/// Solutions `g_t = Σ_k P^k h̄_{t+k}` of the time-inhomogeneous equation
/// `g_t = h̄_t + P g_{t+1}`, for `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSolution {
    pub g: Vec<Vec<Vec<f64>>>,
    pub hbar: Vec<Vec<Vec<f64>>>,
    /// Truncation window: `‖P^window − 1π‖_∞ < 1e-13`.
    pub window: usize,
}

impl ScheduleSolution {
    /// `(P g_t)(x)`.
    pub fn pg(&self, chain: &FiniteChain, t: usize, x: usize) -> Vec<f64> {
        let g = &self.g[t];
        (0..g[0].len()).map(|k| (0..chain.n_states()).map(|y| chain.p(x, y) * g[y][k]).sum()).collect()
    }
}

/// Backward recursion over a truncation window for a time-varying observable
/// (each `h_t` centred under π). Without a schedule this reproduces
/// `poisson_solve` at every `t`.
pub fn poisson_solve_schedule(chain: &FiniteChain, horizon: usize) -> Result<ScheduleSolution> {
    let pi = stationary_dist(chain)?;
    chain.check_ergodic()?;
    let s = chain.n_states();
    let d = chain.dim();
    let mut pk = chain.kernel().clone();
    let mut window = 1;
    loop {
        let gap = (0..s).map(|x| (0..s).map(|y| (pk[(x, y)] - pi[y]).abs()).sum::<f64>()).fold(0.0, f64::max);
        if gap < 1e-13 {
            break;
        }
        if window > 1_000_000 {
            return Err(Error::BadParams("chain mixes too slowly for the truncation window".into()));
        }
        pk = &pk * chain.kernel();
        window += 1;
    }
    let end = horizon + window;
    let hbar_at = |t: usize| center(chain.obs_at(t), &pi);
    let mut next = vec![vec![0.0; d]; s];
    let mut g = vec![Vec::new(); horizon + 1];
    let mut hbar = vec![Vec::new(); horizon + 1];
    for t in (0..end).rev() {
        let h = hbar_at(t);
        let pnext = apply(chain.kernel(), &next);
        let cur: Vec<Vec<f64>> = (0..s).map(|x| (0..d).map(|k| h[x][k] + pnext[x][k]).collect()).collect();
        if t <= horizon {
            g[t] = cur.clone();
            hbar[t] = h;
        }
        next = cur;
    }
    Ok(ScheduleSolution { g, hbar, window })
}

/// `Σ_n = Var(S_n)/n` under a given initial law and `Σ_∞ = π(H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariancePair {
    pub sigma_n: PsdMatrix,
    pub sigma_infty: PsdMatrix,
}

/// Exact covariances from a stationary start.
pub fn exact_covariances(chain: &FiniteChain, n: usize) -> Result<CovariancePair> {
    let pi = stationary_dist(chain)?;
    exact_covariances_from(chain, n, &pi)
}

/// Exact covariances from initial law `init`, for `S_n = Σ_{t<n} h̄(x_t)`.
pub fn exact_covariances_from(chain: &FiniteChain, n: usize, init: &[f64]) -> Result<CovariancePair> {
    if n == 0 {
        return Err(Error::BadParams("n must be positive".into()));
    }
    let s = chain.n_states();
    if init.len() != s {
        return Err(Error::DimMismatch { expected: s, got: init.len() });
    }
    let sol = poisson_solve(chain)?;
    let d = chain.dim();
    let h = &sol.hbar;

    // G_k = Σ_{j=1..k} P^j h̄ via G_k = P(h̄ + G_{k−1})
    let mut gk = vec![vec![vec![0.0; d]; s]];
    for k in 1..n {
        let prev = &gk[k - 1];
        let sum: Vec<Vec<f64>> = (0..s).map(|x| (0..d).map(|c| h[x][c] + prev[x][c]).collect()).collect();
        gk.push(apply(chain.kernel(), &sum));
    }
    let mut second = DMatrix::<f64>::zeros(d, d);
    let mut first = DVector::<f64>::zeros(d);
    let mut mu = DVector::from_column_slice(init).transpose();
    for t in 0..n {
        let g = &gk[n - 1 - t];
        for x in 0..s {
            let w = mu[x];
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                first[a] += w * h[x][a];
                for b in 0..d {
                    second[(a, b)] += w * (h[x][a] * h[x][b] + h[x][a] * g[x][b] + g[x][a] * h[x][b]);
                }
            }
        }
        mu = &mu * chain.kernel();
    }
    let var = (second - &first * first.transpose()) / n as f64;
    let sigma_n = PsdMatrix::new((&var + var.transpose()) * 0.5)?;

    let mut inf = DMatrix::<f64>::zeros(d, d);
    for x in 0..s {
        for y in 0..s {
            let w = sol.pi[x] * chain.p(x, y);
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    inf[(a, b)] += w * (sol.g[y][a] - sol.pg[x][a]) * (sol.g[y][b] - sol.pg[x][b]);
                }
            }
        }
    }
    let sigma_infty = PsdMatrix::new((&inf + inf.transpose()) * 0.5)?;
    Ok(CovariancePair { sigma_n, sigma_infty })
}
