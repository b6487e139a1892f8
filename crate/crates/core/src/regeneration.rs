//! Nummelin splitting of finite chains: minorization, split-chain simulation
//! with exact bridges between skeleton times, regeneration cycles and the
//! cycle martingale increments.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{FiniteChain, PoissonSolution, ScheduleSolution};
use crate::rng::{self, Rng};
use crate::stats::{line_fit, mean, std_err};

const SPLIT_STREAM: u64 = 0x5350_4c54;
/// Smallest number of pooled cycles accepted by the tail fit.
pub const MIN_TAIL_CYCLES: usize = 1000;

/// `P^m(x, ·) ≥ β ν(·)` for every `x` in the small set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minorization {
    pub m: usize,
    pub beta: f64,
    pub nu: Vec<f64>,
    pub small_set: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl Minorization {
    pub fn contains(&self, x: usize) -> bool {
        self.small_set.binary_search(&x).is_ok()
    }
}

/// Columnwise minima of `P^m` over the small set, restricted to the small set.
pub fn build_minorization(chain: &FiniteChain, small_set: &[usize], m: usize) -> Result<Minorization> {
    let s = chain.n_states();
    let mut set = small_set.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.is_empty() || set.iter().any(|&x| x >= s) {
        return Err(Error::BadParams("small set must be a non-empty set of states".into()));
    }
    if m == 0 {
        return Err(Error::BadParams("skeleton step m must be positive".into()));
    }
    let pm = chain.kernel_power(m);
    let mut nu = vec![0.0; s];
    for &z in &set {
        nu[z] = set.iter().map(|&x| pm[(x, z)]).fold(f64::INFINITY, f64::min);
    }
    let beta: f64 = nu.iter().sum();
    if beta <= 1e-15 {
        return Err(Error::NoOverlap);
    }
    for v in nu.iter_mut() {
        *v /= beta;
    }
    let beta = beta.min(1.0);
    let warning = (beta < 0.02)
        .then(|| format!("β = {beta:.4} is small: cycles are long and short runs may hold too few regenerations"));
    Ok(Minorization { m, beta, nu, small_set: set, warning })
}

/// Path of the split chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTrace {
    pub m: usize,
    /// `x_0, …, x_{blocks·m}`
    pub states: Vec<usize>,
    /// Level drawn at each boundary `km` (0 off the small set).
    pub levels: Vec<u8>,
    /// `T_i = m τ_i`, strictly increasing.
    pub regen_times: Vec<usize>,
}

impl SplitTrace {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    /// `Λ_i = T_i − T_{i−1}` with `T_0 = 0`.
    pub fn cycle_lengths(&self) -> Vec<usize> {
        let mut prev = 0;
        self.regen_times
            .iter()
            .map(|&t| {
                let l = t - prev;
                prev = t;
                l
            })
            .collect()
    }

    /// Columns `t,state,boundary_level,is_regen`; the level is empty off the
    /// block boundaries.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,state,boundary_level,is_regen")?;
        let mut next_regen = self.regen_times.iter().peekable();
        for (t, &x) in self.states.iter().enumerate() {
            let level = if t % self.m == 0 {
                self.levels.get(t / self.m).map(|l| l.to_string()).unwrap_or_default()
            } else {
                String::new()
            };
            let regen = if next_regen.peek() == Some(&&t) {
                next_regen.next();
                1
            } else {
                0
            };
            writeln!(w, "{t},{x},{level},{regen}")?;
        }
        Ok(())
    }
}

fn draw(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Simulates the split chain from `x_0 ~ init` for `⌈n/m⌉` skeleton blocks.
pub fn simulate_split_chain(
    chain: &FiniteChain,
    minor: &Minorization,
    n: usize,
    init: &[f64],
    seed: u64,
) -> Result<SplitTrace> {
    let s = chain.n_states();
    if init.len() != s {
        return Err(Error::DimMismatch { expected: s, got: init.len() });
    }
    if minor.beta <= 0.0 {
        return Err(Error::NoOverlap);
    }
    let m = minor.m;
    let powers: Vec<DMatrix<f64>> = (0..=m).map(|j| chain.kernel_power(j)).collect();
    let pm = &powers[m];
    let blocks = n.div_ceil(m).max(1);
    let mut rng = rng::stream(seed, &[SPLIT_STREAM]);
    let mut states = Vec::with_capacity(blocks * m + 1);
    let mut levels = Vec::with_capacity(blocks);
    let mut regen_times = Vec::new();
    let mut x = FiniteChain::sample_from(init, &mut rng);
    states.push(x);
    let mut weights = vec![0.0; s];
    for k in 0..blocks {
        let level = if minor.contains(x) && rng.random::<f64>() < minor.beta { 1 } else { 0 };
        levels.push(level);
        let target = if level == 1 {
            regen_times.push((k + 1) * m);
            draw(&minor.nu, &mut rng)
        } else if minor.contains(x) {
            for z in 0..s {
                weights[z] = (pm[(x, z)] - minor.beta * minor.nu[z]).max(0.0);
            }
            draw(&weights, &mut rng)
        } else {
            for z in 0..s {
                weights[z] = pm[(x, z)];
            }
            draw(&weights, &mut rng)
        };
        // exact bridge x → target in m steps
        let mut a = x;
        for r in (1..m).rev() {
            for z in 0..s {
                weights[z] = chain.p(a, z) * powers[r][(z, target)];
            }
            a = draw(&weights, &mut rng);
            states.push(a);
        }
        states.push(target);
        x = target;
    }
    Ok(SplitTrace { m, states, levels, regen_times })
}

/// Independent traces, seeds `(seed, i)`.
pub fn simulate_traces(
    chain: &FiniteChain,
    minor: &Minorization,
    n: usize,
    init: &[f64],
    seed: u64,
    count: usize,
) -> Result<Vec<SplitTrace>> {
    (0..count)
        .into_par_iter()
        .map(|i| simulate_split_chain(chain, minor, n, init, rng::derive_key(seed, &[i as u64])))
        .collect()
}

/// Log-linear fit of the survival function of cycle lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub rho_hat: f64,
    pub b_hat: f64,
    pub r_squared: f64,
    pub n_cycles: usize,
    /// Survival points used, `(ℓ, P̂(L > ℓ))`.
    pub survival: Vec<(usize, f64)>,
    /// Fewer than two usable survival points: `rho_hat` is reported as 0.
    pub degenerate: bool,
}

/// Fits `log P̂(L > ℓ) ≈ log b + ℓ log ρ` over the range where the empirical
/// survival is at least `50/total`.
pub fn fit_geometric_tail(lengths: &[usize]) -> Result<TailFit> {
    let total = lengths.len();
    if total < MIN_TAIL_CYCLES {
        return Err(Error::TooFewCycles { have: total, needed: MIN_TAIL_CYCLES });
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let floor = 50.0 / total as f64;
    let mut survival = Vec::new();
    for ell in 0.. {
        let above = total - sorted.partition_point(|&l| l <= ell);
        let s = above as f64 / total as f64;
        if s < floor {
            break;
        }
        survival.push((ell, s));
    }
    if survival.len() < 2 {
        return Ok(TailFit { rho_hat: 0.0, b_hat: 1.0, r_squared: 1.0, n_cycles: total, survival, degenerate: true });
    }
    let x: Vec<f64> = survival.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = survival.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2) = line_fit(&x, &y);
    Ok(TailFit {
        rho_hat: slope.exp(),
        b_hat: intercept.exp(),
        r_squared: r2,
        n_cycles: total,
        survival,
        degenerate: false,
    })
}

/// Skeleton-scale cycle lengths `L_i = Λ_i/m` pooled over traces; the first
/// cycle of each trace is skipped unless `include_first`.
pub fn pooled_skeleton_lengths(traces: &[SplitTrace], include_first: bool) -> Vec<usize> {
    let skip = usize::from(!include_first);
    traces.iter().flat_map(|t| t.cycle_lengths().into_iter().skip(skip).map(move |l| l / t.m)).collect()
}

pub fn cycle_tail_fit(traces: &[SplitTrace]) -> Result<TailFit> {
    fit_geometric_tail(&pooled_skeleton_lengths(traces, false))
}

/// Mean of `Λ_i` over cycles `i ≥ 2`, with its standard error.
pub fn pooled_mean_cycle(traces: &[SplitTrace]) -> Result<(f64, f64)> {
    let lens: Vec<f64> = traces.iter().flat_map(|t| t.cycle_lengths().into_iter().skip(1)).map(|l| l as f64).collect();
    if lens.len() < 2 {
        return Err(Error::TooFewCycles { have: lens.len(), needed: 2 });
    }
    Ok((mean(&lens), std_err(&lens)))
}

/// Solution of the Poisson equation, homogeneous or along a schedule.
#[derive(Debug, Clone, Copy)]
pub enum Potential<'a> {
    Homogeneous(&'a PoissonSolution),
    Schedule(&'a ScheduleSolution),
}

impl Potential<'_> {
    fn g(&self, t: usize, x: usize) -> &[f64] {
        match self {
            Self::Homogeneous(s) => &s.g[x],
            Self::Schedule(s) => &s.g[t][x],
        }
    }

    fn hbar(&self, t: usize, x: usize) -> &[f64] {
        match self {
            Self::Homogeneous(s) => &s.hbar[x],
            Self::Schedule(s) => &s.hbar[t][x],
        }
    }

    /// `(P g_t)(x)`
    fn pg(&self, chain: &FiniteChain, t: usize, x: usize) -> Vec<f64> {
        match self {
            Self::Homogeneous(s) => s.pg[x].clone(),
            Self::Schedule(s) => s.pg(chain, t, x),
        }
    }

    fn horizon(&self) -> usize {
        match self {
            Self::Homogeneous(_) => usize::MAX,
            Self::Schedule(s) => s.g.len() - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleIncrements {
    /// `M̃_i` for `i = 1..=K_n`.
    pub tilde_m: Vec<Vec<f64>>,
    pub k_big: usize,
    pub k_small: usize,
    /// `R_n = Σ_{t=n}^{T_{K_n}−1} ξ_{t+1}`
    pub remainder: Vec<f64>,
    /// `M_n = Σ_{t<n} ξ_{t+1}`
    pub martingale: Vec<f64>,
    /// `S_n = Σ_{t<n} h̄_t(x_t)`
    pub partial_sum: Vec<f64>,
    /// `max |S_n − (g_0(x_0) − g_n(x_n) + M_n)|`
    pub identity_error: f64,
    /// `max |Σ_i M̃_i − (M_n + R_n)|`
    pub cycle_sum_error: f64,
}

/// `K_n = min{i : T_i > n} + 1` (1-based), or `None` if no regeneration
/// passes `n`.
pub fn k_big(regen_times: &[usize], n: usize) -> Option<usize> {
    regen_times.iter().position(|&t| t > n).map(|i| i + 2)
}

/// Cycle martingale increments `M̃_i = Σ_{t=T_{i−1}}^{T_i−1} ξ_{t+1}` with
/// `ξ_{t+1} = g_{t+1}(x_{t+1}) − P g_{t+1}(x_t)`.
pub fn cycle_increments(
    chain: &FiniteChain,
    trace: &SplitTrace,
    potential: Potential<'_>,
    n: usize,
    mean_cycle: f64,
) -> Result<CycleIncrements> {
    if n == 0 || !(mean_cycle > 0.0) {
        return Err(Error::BadParams("need n >= 1 and a positive mean cycle length".into()));
    }
    let have = trace.regen_times.len();
    let kb = k_big(&trace.regen_times, n).ok_or(Error::MissingRegens { needed: have + 2, have })?;
    if kb > have {
        return Err(Error::MissingRegens { needed: kb, have });
    }
    let end = trace.regen_times[kb - 1];
    if end > potential.horizon() {
        return Err(Error::BadParams(format!("potential covers {} steps, need {end}", potential.horizon())));
    }
    let d = chain.dim();
    let xs = &trace.states;
    let mut tilde_m = vec![vec![0.0; d]; kb];
    let mut martingale = vec![0.0; d];
    let mut remainder = vec![0.0; d];
    let mut partial_sum = vec![0.0; d];
    let mut cycle = 0;
    for t in 0..end {
        while t >= trace.regen_times[cycle] {
            cycle += 1;
        }
        let g_next = potential.g(t + 1, xs[t + 1]);
        let pg = potential.pg(chain, t + 1, xs[t]);
        for k in 0..d {
            let xi = g_next[k] - pg[k];
            tilde_m[cycle][k] += xi;
            if t < n {
                martingale[k] += xi;
            } else {
                remainder[k] += xi;
            }
        }
        if t < n {
            let h = potential.hbar(t, xs[t]);
            for k in 0..d {
                partial_sum[k] += h[k];
            }
        }
    }
    let g0 = potential.g(0, xs[0]);
    let gn = potential.g(n, xs[n]);
    let identity_error = (0..d).map(|k| (partial_sum[k] - (g0[k] - gn[k] + martingale[k])).abs()).fold(0.0, f64::max);
    let cycle_sum_error = (0..d)
        .map(|k| (tilde_m.iter().map(|v| v[k]).sum::<f64>() - martingale[k] - remainder[k]).abs())
        .fold(0.0, f64::max);
    Ok(CycleIncrements {
        tilde_m,
        k_big: kb,
        k_small: (n as f64 / mean_cycle).floor() as usize,
        remainder,
        martingale,
        partial_sum,
        identity_error,
        cycle_sum_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnRow {
    pub n: usize,
    pub mean_abs: f64,
    pub mean_abs_pow: f64,
    pub stderr: f64,
    /// `E|K_n − k_n| / √n`
    pub ratio: f64,
}

/// Empirical `E|K_n − k_n|` and `E|K_n − k_n|^{p/2}` across traces.
pub fn kn_concentration(traces: &[SplitTrace], n_grid: &[usize], p: f64) -> Result<Vec<KnRow>> {
    let (mu, _) = pooled_mean_cycle(traces)?;
    n_grid
        .iter()
        .map(|&n| {
            let devs: Vec<f64> = traces
                .iter()
                .map(|t| {
                    let kb = k_big(&t.regen_times, n)
                        .ok_or(Error::TooFewCycles { have: t.regen_times.len(), needed: t.regen_times.len() + 1 })?;
                    let ks = (n as f64 / mu).floor();
                    Ok((kb as f64 - ks).abs())
                })
                .collect::<Result<_>>()?;
            let pow: Vec<f64> = devs.iter().map(|v| v.powf(p / 2.0)).collect();
            let m = mean(&devs);
            Ok(KnRow { n, mean_abs: m, mean_abs_pow: mean(&pow), stderr: std_err(&devs), ratio: m / (n as f64).sqrt() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{
        poisson_solve, poisson_solve_schedule, stationary_dist, three_state_example, two_state_example,
    };

    #[test]
    fn minorization_examples() {
        let c = two_state_example();
        let m = build_minorization(&c, &[0, 1], 1).unwrap();
        assert!((m.beta - 0.3).abs() < 1e-12);
        assert!((m.nu[0] - 2.0 / 3.0).abs() < 1e-12 && (m.nu[1] - 1.0 / 3.0).abs() < 1e-12);
        let m = build_minorization(&c, &[0], 1).unwrap();
        assert!((m.beta - 0.9).abs() < 1e-12);
        assert_eq!(m.nu, vec![1.0, 0.0]);
        let iid = FiniteChain::new(vec![vec![0.25, 0.75], vec![0.25, 0.75]], vec![vec![1.0], vec![0.0]]).unwrap();
        let m = build_minorization(&iid, &[0, 1], 1).unwrap();
        assert!((m.beta - 1.0).abs() < 1e-12 && (m.nu[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn no_overlap() {
        let c = FiniteChain::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(build_minorization(&c, &[0, 1], 1), Err(Error::NoOverlap));
    }

    #[test]
    fn minorization_invariant_with_skeleton() {
        let c = three_state_example();
        for m in 1..4 {
            let mi = build_minorization(&c, &[0, 2], m).unwrap();
            let pm = c.kernel_power(m);
            for &x in &[0, 2] {
                for z in 0..3 {
                    assert!(pm[(x, z)] >= mi.beta * mi.nu[z] - 1e-15);
                }
            }
            assert_eq!(mi.nu[1], 0.0);
        }
    }

    fn chi_square_transitions(trace: &SplitTrace, chain: &FiniteChain) -> (f64, usize) {
        let s = chain.n_states();
        let mut counts = vec![vec![0usize; s]; s];
        for w in trace.states.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        let mut chi = 0.0;
        let mut dof = 0;
        for x in 0..s {
            let row: usize = counts[x].iter().sum();
            for y in 0..s {
                let e = row as f64 * chain.p(x, y);
                if e > 0.0 {
                    chi += (counts[x][y] as f64 - e).powi(2) / e;
                    dof += 1;
                }
            }
            dof -= 1;
        }
        (chi, dof)
    }

    #[test]
    fn split_chain_is_marginally_the_chain() {
        // m = 1 and m = 3 (bridged); chi-square on one-step transitions.
        let c = three_state_example();
        let pi = stationary_dist(&c).unwrap();
        for m in [1usize, 3] {
            let mi = build_minorization(&c, &[0, 1, 2], m).unwrap();
            let tr = simulate_split_chain(&c, &mi, 100_000, &pi, 7).unwrap();
            let (chi, dof) = chi_square_transitions(&tr, &c);
            // 1e-3 critical value for 6 degrees of freedom is 22.46
            assert_eq!(dof, 6);
            assert!(chi < 22.46, "m={m} chi={chi}");
        }
    }

    #[test]
    fn level_rate_matches_beta() {
        let c = two_state_example();
        let mi = build_minorization(&c, &[0], 1).unwrap();
        let tr = simulate_split_chain(&c, &mi, 100_000, &[1.0, 0.0], 3).unwrap();
        let visits: Vec<u8> =
            tr.states[..tr.levels.len()].iter().zip(&tr.levels).filter(|(x, _)| **x == 0).map(|(_, l)| *l).collect();
        let rate = visits.iter().map(|&l| l as f64).sum::<f64>() / visits.len() as f64;
        let se = (0.9 * 0.1 / visits.len() as f64).sqrt();
        assert!((rate - 0.9).abs() < 3.0 * se);
    }

    #[test]
    fn certain_coin_regenerates_every_step() {
        let iid = FiniteChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![vec![1.0], vec![0.0]]).unwrap();
        let mi = build_minorization(&iid, &[0, 1], 1).unwrap();
        let tr = simulate_split_chain(&iid, &mi, 50, &[0.5, 0.5], 1).unwrap();
        assert!(tr.cycle_lengths().iter().all(|&l| l == 1));
        let traces: Vec<SplitTrace> =
            (0..30).map(|s| simulate_split_chain(&iid, &mi, 50, &[0.5, 0.5], s).unwrap()).collect();
        let fit = cycle_tail_fit(&traces).unwrap();
        assert!(fit.degenerate && fit.rho_hat == 0.0);
        // T_i = i, so K_n = n + 2 and k_n = n
        let rows = kn_concentration(&traces, &[10, 40], 2.0).unwrap();
        assert!(rows.iter().all(|r| r.mean_abs == 2.0));
    }

    #[test]
    fn geometric_tail_recovered() {
        let mut rng = crate::rng::stream(5, &[]);
        let lens: Vec<usize> = (0..20_000)
            .map(|_| {
                let mut l = 1;
                while rng.random::<f64>() < 0.7 {
                    l += 1;
                }
                l
            })
            .collect();
        let fit = fit_geometric_tail(&lens).unwrap();
        assert!((0.65..=0.75).contains(&fit.rho_hat));
        assert!(matches!(fit_geometric_tail(&lens[..10]), Err(Error::TooFewCycles { .. })));
    }

    #[test]
    fn two_state_tail_fit() {
        let c = two_state_example();
        let pi = stationary_dist(&c).unwrap();
        let mi = build_minorization(&c, &[0, 1], 1).unwrap();
        let traces = simulate_traces(&c, &mi, 20_000, &pi, 2, 4).unwrap();
        let fit = cycle_tail_fit(&traces).unwrap();
        assert!(fit.r_squared >= 0.95 && (fit.rho_hat - 0.7).abs() < 0.02, "{fit:?}");
        // with C̄ = {0} the survival kinks at ℓ = 1 and then decays like 0.8^ℓ
        let mi = build_minorization(&c, &[0], 1).unwrap();
        let traces = simulate_traces(&c, &mi, 20_000, &pi, 2, 4).unwrap();
        let tail: Vec<usize> =
            pooled_skeleton_lengths(&traces, false).into_iter().filter(|&l| l > 1).map(|l| l - 1).collect();
        let fit = fit_geometric_tail(&tail).unwrap();
        assert!((fit.rho_hat - 0.8).abs() < 0.03, "{fit:?}");
    }

    #[test]
    fn k_big_example() {
        assert_eq!(k_big(&[5, 9, 12], 10), Some(4));
        assert_eq!(k_big(&[5, 9], 10), None);
        assert_eq!((10.0f64 / 4.0).floor() as usize, 2);
    }

    #[test]
    fn decomposition_identity() {
        let c = three_state_example();
        let pi = stationary_dist(&c).unwrap();
        let sol = poisson_solve(&c).unwrap();
        let mi = build_minorization(&c, &[0, 1, 2], 2).unwrap();
        let traces = simulate_traces(&c, &mi, 600, &pi, 11, 100).unwrap();
        let (mu, _) = pooled_mean_cycle(&traces).unwrap();
        for tr in &traces {
            let inc = cycle_increments(&c, tr, Potential::Homogeneous(&sol), 400, mu).unwrap();
            assert!(inc.identity_error < 1e-9 && inc.cycle_sum_error < 1e-9);
        }
    }

    #[test]
    fn schedule_identity() {
        let c = three_state_example()
            .with_schedule(vec![vec![vec![1.0], vec![0.0], vec![2.0]], vec![vec![0.0], vec![-1.0], vec![0.5]]])
            .unwrap();
        let pi = stationary_dist(&c).unwrap();
        let mi = build_minorization(&c, &[0, 1, 2], 1).unwrap();
        let tr = simulate_split_chain(&c, &mi, 400, &pi, 4).unwrap();
        let sched = poisson_solve_schedule(&c, tr.horizon()).unwrap();
        let inc = cycle_increments(&c, &tr, Potential::Schedule(&sched), 200, 3.0).unwrap();
        assert!(inc.identity_error < 1e-9 && inc.cycle_sum_error < 1e-9);
    }

    #[test]
    fn iid_chain_increments_are_cycle_sums() {
        let iid = FiniteChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![vec![1.0], vec![-1.0]]).unwrap();
        let sol = poisson_solve(&iid).unwrap();
        let mi = build_minorization(&iid, &[0, 1], 1).unwrap();
        let tr = simulate_split_chain(&iid, &mi, 30, &[0.5, 0.5], 2).unwrap();
        let inc = cycle_increments(&iid, &tr, Potential::Homogeneous(&sol), 20, 1.0).unwrap();
        for (i, v) in inc.tilde_m.iter().enumerate() {
            // one-step cycles: M̃_i = h(x_i)
            assert!((v[0] - sol.hbar[tr.states[i + 1]][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_regens() {
        let c = two_state_example();
        let sol = poisson_solve(&c).unwrap();
        let mi = build_minorization(&c, &[0, 1], 1).unwrap();
        let tr = simulate_split_chain(&c, &mi, 20, &[1.0, 0.0], 0).unwrap();
        assert!(matches!(
            cycle_increments(&c, &tr, Potential::Homogeneous(&sol), 20, 3.0),
            Err(Error::MissingRegens { .. })
        ));
    }

    #[test]
    fn csv_export() {
        let c = two_state_example();
        let mi = build_minorization(&c, &[0, 1], 2).unwrap();
        let tr = simulate_split_chain(&c, &mi, 6, &[1.0, 0.0], 0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,state,boundary_level,is_regen");
        assert_eq!(lines.len(), tr.states.len() + 1);
        assert!(lines[2].split(',').nth(2) == Some(""));
        let regens = lines[1..].iter().filter(|l| l.ends_with(",1")).count();
        assert_eq!(regens, tr.regen_times.len());
    }
}
