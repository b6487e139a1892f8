//! Exact computations on finite-state Markov chains.

mod coupling;
mod law;
mod poisson;

pub use coupling::{meeting_survival_exact, meeting_time_sample, MeetingOutcome};
pub use law::{conditional_sum_law, sum_law};
pub use poisson::{
    exact_covariances, exact_covariances_from, poisson_solve, poisson_solve_schedule, CovariancePair, PoissonSolution,
    ScheduleSolution,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChainFile {
    kernel: Vec<Vec<f64>>,
    obs: Vec<Vec<f64>>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    lyapunov: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    small_set: Option<Vec<usize>>,
    /// Time-varying observables `h_t = obs_schedule[t mod len]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_schedule: Option<Vec<Vec<Vec<f64>>>>,
}

/// Transition kernel on `0..s` with an observable `h: states → R^d`, a
/// Lyapunov function and a small set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainFile", into = "ChainFile")]
pub struct FiniteChain {
    kernel: DMatrix<f64>,
    cumulative: Vec<Vec<f64>>,
    obs: Vec<Vec<f64>>,
    lyapunov: Vec<f64>,
    small_set: Vec<usize>,
    schedule: Option<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<ChainFile> for FiniteChain {
    type Error = Error;
    fn try_from(f: ChainFile) -> Result<Self> {
        let mut c = Self::new(f.kernel, f.obs)?;
        if let Some(v) = f.lyapunov {
            c = c.with_lyapunov(v)?;
        }
        if let Some(s) = f.small_set {
            c = c.with_small_set(s)?;
        }
        if let Some(s) = f.obs_schedule {
            c = c.with_schedule(s)?;
        }
        Ok(c)
    }
}

impl From<FiniteChain> for ChainFile {
    fn from(c: FiniteChain) -> Self {
        ChainFile {
            kernel: c.kernel_rows(),
            obs: c.obs.clone(),
            lyapunov: Some(c.lyapunov.clone()),
            small_set: Some(c.small_set.clone()),
            obs_schedule: c.schedule.clone(),
        }
    }
}

fn check_obs(obs: &[Vec<f64>], s: usize) -> Result<usize> {
    if obs.len() != s {
        return Err(Error::DimMismatch { expected: s, got: obs.len() });
    }
    let d = obs.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::BadParams("observable must have dimension >= 1".into()));
    }
    if let Some(r) = obs.iter().find(|r| r.len() != d) {
        return Err(Error::DimMismatch { expected: d, got: r.len() });
    }
    if obs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(d)
}

impl FiniteChain {
    /// Kernel rows must be non-negative and sum to one within 1e-9; they are
    /// renormalized exactly. `V` defaults to 1 and the small set to all states.
    pub fn new(kernel: Vec<Vec<f64>>, obs: Vec<Vec<f64>>) -> Result<Self> {
        let s = kernel.len();
        if s == 0 {
            return Err(Error::BadParams("empty kernel".into()));
        }
        if let Some(r) = kernel.iter().find(|r| r.len() != s) {
            return Err(Error::DimMismatch { expected: s, got: r.len() });
        }
        let mut k = DMatrix::zeros(s, s);
        for (i, row) in kernel.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::BadParams(format!("kernel row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
            for (j, v) in row.iter().enumerate() {
                k[(i, j)] = v / sum;
            }
        }
        check_obs(&obs, s)?;
        let cumulative = (0..s)
            .map(|i| {
                let mut acc = 0.0;
                (0..s)
                    .map(|j| {
                        acc += k[(i, j)];
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self { kernel: k, cumulative, obs, lyapunov: vec![1.0; s], small_set: (0..s).collect(), schedule: None })
    }

    pub fn with_lyapunov(mut self, v: Vec<f64>) -> Result<Self> {
        if v.len() != self.n_states() {
            return Err(Error::DimMismatch { expected: self.n_states(), got: v.len() });
        }
        if v.iter().any(|x| !(*x >= 1.0 && x.is_finite())) {
            return Err(Error::BadParams("Lyapunov function must be finite and >= 1".into()));
        }
        self.lyapunov = v;
        Ok(self)
    }

    pub fn with_small_set(mut self, mut set: Vec<usize>) -> Result<Self> {
        set.sort_unstable();
        set.dedup();
        if set.is_empty() || set.iter().any(|&x| x >= self.n_states()) {
            return Err(Error::BadParams("small set must be a non-empty set of states".into()));
        }
        self.small_set = set;
        Ok(self)
    }

    pub fn with_schedule(mut self, schedule: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::BadParams("observable schedule is empty".into()));
        }
        for obs in &schedule {
            let d = check_obs(obs, self.n_states())?;
            if d != self.dim() {
                return Err(Error::DimMismatch { expected: self.dim(), got: d });
            }
        }
        self.schedule = Some(schedule);
        Ok(self)
    }

    pub fn with_obs(mut self, obs: Vec<Vec<f64>>) -> Result<Self> {
        check_obs(&obs, self.n_states())?;
        self.obs = obs;
        Ok(self)
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn n_states(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn dim(&self) -> usize {
        self.obs[0].len()
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn kernel_rows(&self) -> Vec<Vec<f64>> {
        self.kernel.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.kernel[(x, y)]
    }

    pub fn obs(&self) -> &[Vec<f64>] {
        &self.obs
    }

    /// Observable at time `t` (the schedule if present).
    pub fn obs_at(&self, t: usize) -> &[Vec<f64>] {
        match &self.schedule {
            Some(s) => &s[t % s.len()],
            None => &self.obs,
        }
    }

    pub fn schedule(&self) -> Option<&[Vec<Vec<f64>>]> {
        self.schedule.as_deref()
    }

    pub fn lyapunov(&self) -> &[f64] {
        &self.lyapunov
    }

    pub fn small_set(&self) -> &[usize] {
        &self.small_set
    }

    pub fn in_small_set(&self, x: usize) -> bool {
        self.small_set.binary_search(&x).is_ok()
    }

    /// One transition from `x` using a single uniform draw.
    #[inline]
    pub fn step(&self, x: usize, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let row = &self.cumulative[x];
        row.partition_point(|&c| c <= u).min(row.len() - 1)
    }

    /// Draw from a probability vector over states.
    pub fn sample_from(dist: &[f64], rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        dist.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    pub fn kernel_power(&self, m: usize) -> DMatrix<f64> {
        let mut out = DMatrix::identity(self.n_states(), self.n_states());
        for _ in 0..m {
            out = &out * &self.kernel;
        }
        out
    }

    fn reachable(&self, transpose: bool) -> Vec<bool> {
        let s = self.n_states();
        let mut seen = vec![false; s];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for y in 0..s {
                let w = if transpose { self.kernel[(y, x)] } else { self.kernel[(x, y)] };
                if w > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen
    }

    pub fn is_irreducible(&self) -> bool {
        self.reachable(false).iter().all(|&b| b) && self.reachable(true).iter().all(|&b| b)
    }

    /// Period of an irreducible chain: gcd of `level(x) + 1 − level(y)` over
    /// edges, with levels from a breadth-first search.
    pub fn period(&self) -> Result<usize> {
        if !self.is_irreducible() {
            return Err(Error::Reducible);
        }
        let s = self.n_states();
        let mut level = vec![usize::MAX; s];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0]);
        while let Some(x) = queue.pop_front() {
            for y in 0..s {
                if self.kernel[(x, y)] > 0.0 && level[y] == usize::MAX {
                    level[y] = level[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        let mut g = 0usize;
        for x in 0..s {
            for y in 0..s {
                if self.kernel[(x, y)] > 0.0 {
                    g = gcd(g, (level[x] + 1).abs_diff(level[y]));
                }
            }
        }
        Ok(g)
    }

    /// Fails unless the chain is irreducible and aperiodic.
    pub fn check_ergodic(&self) -> Result<()> {
        match self.period()? {
            1 => Ok(()),
            p => Err(Error::Periodic(p)),
        }
    }

    /// Observable centred under π.
    pub fn centered_obs(&self) -> Result<Vec<Vec<f64>>> {
        let pi = stationary_dist(self)?;
        Ok(center(&self.obs, &pi))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn center(obs: &[Vec<f64>], pi: &[f64]) -> Vec<Vec<f64>> {
    let d = obs[0].len();
    let mean: Vec<f64> = (0..d).map(|k| obs.iter().zip(pi).map(|(h, p)| h[k] * p).sum()).collect();
    obs.iter().map(|h| h.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect()
}

/// Stationary distribution of an irreducible chain.
pub fn stationary_dist(chain: &FiniteChain) -> Result<Vec<f64>> {
    if !chain.is_irreducible() {
        return Err(Error::Reducible);
    }
    let s = chain.n_states();
    // π (I − P + 11ᵀ) = 1ᵀ
    let a = (DMatrix::identity(s, s) - chain.kernel() + DMatrix::from_element(s, s, 1.0)).transpose();
    let pi = a.lu().solve(&DVector::from_element(s, 1.0)).ok_or(Error::Reducible)?;
    let total: f64 = pi.iter().sum();
    Ok(pi.iter().map(|v| v.max(0.0) / total).collect())
}

/// Outcome of checking `PV ≤ λV + L·1_C` state by state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub holds: bool,
    /// Largest excess `PV − λV − L·1_C` (0 when the inequality holds).
    pub max_violation: f64,
    pub worst_state: usize,
    pub slack: Vec<f64>,
}

pub fn drift_verify(chain: &FiniteChain, lambda: f64, l: f64) -> Result<DriftReport> {
    if !(0.0..1.0).contains(&lambda) || l < 0.0 {
        return Err(Error::BadParams(format!("need λ in [0, 1) and L >= 0, got λ = {lambda}, L = {l}")));
    }
    let v = DVector::from_column_slice(chain.lyapunov());
    let pv = chain.kernel() * &v;
    let excess: Vec<f64> =
        (0..chain.n_states()).map(|x| pv[x] - lambda * v[x] - if chain.in_small_set(x) { l } else { 0.0 }).collect();
    let (worst_state, &worst) =
        excess.iter().enumerate().fold((0, &f64::NEG_INFINITY), |acc, x| if *x.1 > *acc.1 { x } else { acc });
    let tol = 1e-12 * v.amax();
    Ok(DriftReport {
        holds: worst <= tol,
        max_violation: worst.max(0.0),
        worst_state,
        slack: excess.iter().map(|e| -e).collect(),
    })
}

/// Smallest `L` making the drift inequality hold for a given λ, if any.
pub fn minimal_drift_constant(chain: &FiniteChain, lambda: f64) -> Option<f64> {
    let v = DVector::from_column_slice(chain.lyapunov());
    let pv = chain.kernel() * &v;
    let mut l: f64 = 0.0;
    for x in 0..chain.n_states() {
        let e = pv[x] - lambda * v[x];
        if chain.in_small_set(x) {
            l = l.max(e);
        } else if e > 1e-12 * v.amax() {
            return None;
        }
    }
    Some(l)
}

/// Time reversal `P*(y, x) = π(x) P(x, y) / π(y)`; observable, Lyapunov
/// function and small set are carried over unchanged.
pub fn time_reversal(chain: &FiniteChain) -> Result<FiniteChain> {
    let pi = stationary_dist(chain)?;
    let s = chain.n_states();
    let rows: Vec<Vec<f64>> = (0..s).map(|y| (0..s).map(|x| pi[x] * chain.p(x, y) / pi[y]).collect()).collect();
    let mut rev = FiniteChain::new(rows, chain.obs.clone())?
        .with_lyapunov(chain.lyapunov.clone())?
        .with_small_set(chain.small_set.clone())?;
    rev.schedule = chain.schedule.clone();
    Ok(rev)
}

/// State path `x_0, …, x_{n-1}`.
pub fn simulate_path(chain: &FiniteChain, x0: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    for t in 0..n {
        if t > 0 {
            x = chain.step(x, rng);
        }
        out.push(x);
    }
    out
}

/// Two-state chain used in examples and tests: `P = [[0.9, 0.1], [0.2, 0.8]]`
/// with `h = (1, 0)`.
pub fn two_state_example() -> FiniteChain {
    FiniteChain::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![vec![1.0], vec![0.0]]).expect("valid chain")
}

/// Three-state non-reversible chain with a lattice observable.
pub fn three_state_example() -> FiniteChain {
    FiniteChain::new(
        vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.6, 0.2], vec![0.3, 0.3, 0.4]],
        vec![vec![1.0], vec![0.0], vec![-1.0]],
    )
    .expect("valid chain")
}
