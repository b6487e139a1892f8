//! Synthetic sequences: i.i.d., moving-average m-dependent and local sums
//! over a graph, with unit-variance innovations of a chosen tail profile.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::PsdMatrix;
use crate::rng::{self, Rng};

const GEN_STREAM: u64 = 0x4745_4e53;

/// Law of a single coordinate. Every profile has mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MomentProfile {
    Gaussian,
    /// `E − 1` with `E ~ Exp(1)`.
    CenteredExponential,
    /// Random sign times a Pareto(α) magnitude, rescaled to unit variance.
    /// Moments of order below α are finite.
    SymmetrizedPareto {
        alpha: f64,
    },
    Rademacher,
}

impl MomentProfile {
    /// Pareto profile whose moments of order `2 + δ` are finite, with tail
    /// index `2 + δ + 0.05`.
    pub fn heavy_tail(delta: f64) -> Result<Self> {
        let p = Self::SymmetrizedPareto { alpha: 2.0 + delta + 0.05 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::SymmetrizedPareto { alpha } if !(alpha > 2.0 && alpha.is_finite()) => Err(Error::BadProfileParams(
                format!("pareto tail index must exceed 2 for finite variance, got {alpha}"),
            )),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Self::Gaussian => StandardNormal.sample(rng),
            Self::CenteredExponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
            Self::SymmetrizedPareto { alpha } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let mag = (-u.ln() / alpha).exp() * ((alpha - 2.0) / alpha).sqrt();
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            Self::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Supremum of the finite absolute moment orders.
    pub fn moment_order(&self) -> f64 {
        match *self {
            Self::SymmetrizedPareto { alpha } => alpha,
            _ => f64::INFINITY,
        }
    }

    /// `E|X|^s` where a closed form is available.
    pub fn abs_moment(&self, s: f64) -> Option<f64> {
        match *self {
            Self::Gaussian => Some(2f64.powf(s / 2.0) * libm::tgamma((s + 1.0) / 2.0) / std::f64::consts::PI.sqrt()),
            Self::Rademacher => Some(1.0),
            Self::SymmetrizedPareto { alpha } if s < alpha => {
                Some(((alpha - 2.0) / alpha).powf(s / 2.0) * alpha / (alpha - s))
            }
            Self::SymmetrizedPareto { .. } => None,
            Self::CenteredExponential => None,
        }
    }
}

/// Undirected graph on `0..n` without self loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    adj: Vec<Vec<usize>>,
}

impl DependencyGraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::BadParams(format!("edge ({a}, {b}) out of range for {n} vertices")));
            }
            if a == b {
                return Err(Error::BadParams(format!("self loop at vertex {a}")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adj })
    }

    pub fn path(n: usize) -> Self {
        Self::k_neighborhood(n, 1)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::BadParams("a cycle needs at least 3 vertices".into()));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::new(n, &edges)
    }

    /// Four-neighbour lattice, vertices numbered row by row.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        Self::new(rows * cols, &edges).expect("grid edges are valid")
    }

    /// `i ~ j` iff `0 < |i − j| ≤ k`.
    pub fn k_neighborhood(n: usize, k: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..(i + k + 1).min(n)).map(move |j| (i, j))).collect();
        Self::new(n, &edges).expect("banded edges are valid")
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    /// `N[i]`: the vertex and its neighbours, sorted.
    pub fn closed_neighborhood(&self, i: usize) -> Vec<usize> {
        let mut v = self.adj[i].clone();
        let pos = v.partition_point(|&j| j < i);
        v.insert(pos, i);
        v
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `1 + max degree`.
    pub fn degree_bound(&self) -> usize {
        1 + self.max_degree()
    }

    /// Graph linking vertices at distance at most 2. This is the dependency
    /// graph of the local sums generated over `self`.
    pub fn square(&self) -> Self {
        let n = self.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for &j in &self.adj[i] {
                edges.push((i, j));
                for &k in &self.adj[j] {
                    if k != i {
                        edges.push((i, k));
                    }
                }
            }
        }
        Self::new(n, &edges).expect("square edges are valid")
    }
}

/// Graph family by name, sized for a sequence of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GraphTemplate {
    Path,
    Cycle,
    /// Square grid; `n` must be a perfect square.
    Grid,
    KNeighborhood {
        k: usize,
    },
}

impl GraphTemplate {
    pub fn build(&self, n: usize) -> Result<DependencyGraph> {
        match *self {
            Self::Path => Ok(DependencyGraph::path(n)),
            Self::Cycle => DependencyGraph::cycle(n),
            Self::Grid => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(Error::BadParams(format!("grid template needs a square size, got {n}")));
                }
                Ok(DependencyGraph::grid(side, side))
            }
            Self::KNeighborhood { k } => Ok(DependencyGraph::k_neighborhood(n, k)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleKind {
    Iid,
    MDependent { m: usize },
    LocalGraph { degree_bound: usize },
}

/// `n` observations in R^d, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
    pub kind: SampleKind,
    pub profile: MomentProfile,
}

impl SequenceSample {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Column sums `S_n`.
    pub fn sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.d];
        for row in self.data.chunks_exact(self.d) {
            for (a, b) in s.iter_mut().zip(row) {
                *a += b;
            }
        }
        s
    }
}

fn check_shape(n: usize, d: usize, profile: &MomentProfile) -> Result<()> {
    profile.validate()?;
    if n == 0 || d == 0 {
        return Err(Error::BadParams(format!("need n >= 1 and d >= 1, got n = {n}, d = {d}")));
    }
    Ok(())
}

pub fn generator_rng(seed: u64) -> Rng {
    rng::stream(seed, &[GEN_STREAM])
}

pub fn gen_iid(n: usize, d: usize, profile: MomentProfile, seed: u64) -> Result<SequenceSample> {
    gen_m_dependent(n, d, 0, profile, seed).map(|mut s| {
        s.kind = SampleKind::Iid;
        s
    })
}

/// Moving average `X_i = (Z_i + … + Z_{i+m}) / √(m+1)`, coordinates independent.
pub fn gen_m_dependent(n: usize, d: usize, m: usize, profile: MomentProfile, seed: u64) -> Result<SequenceSample> {
    check_shape(n, d, &profile)?;
    let mut rng = generator_rng(seed);
    let z: Vec<f64> = (0..(n + m) * d).map(|_| profile.sample(&mut rng)).collect();
    let scale = 1.0 / ((m + 1) as f64).sqrt();
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..d {
            data[i * d + k] = (0..=m).map(|j| z[(i + j) * d + k]).sum::<f64>() * scale;
        }
    }
    Ok(SequenceSample { n, d, data, kind: SampleKind::MDependent { m }, profile })
}

/// Local sums `X_i = Σ_{j ∈ N[i]} Z_j / √|N[i]|`.
pub fn gen_local_graph(graph: &DependencyGraph, d: usize, profile: MomentProfile, seed: u64) -> Result<SequenceSample> {
    let n = graph.len();
    check_shape(n, d, &profile)?;
    let mut rng = generator_rng(seed);
    let z: Vec<f64> = (0..n * d).map(|_| profile.sample(&mut rng)).collect();
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        let nb = graph.closed_neighborhood(i);
        let scale = 1.0 / (nb.len() as f64).sqrt();
        for k in 0..d {
            data[i * d + k] = nb.iter().map(|&j| z[j * d + k]).sum::<f64>() * scale;
        }
    }
    let degree_bound = graph.square().degree_bound();
    Ok(SequenceSample { n, d, data, kind: SampleKind::LocalGraph { degree_bound }, profile })
}

/// Weight of each innovation in `S_n` for the moving average.
fn ma_weight(t: usize, n: usize, m: usize) -> f64 {
    let lo = t.saturating_sub(m);
    let hi = t.min(n - 1);
    (hi + 1 - lo) as f64
}

/// `S_n / √n` of the moving average, streamed from `rng` in the same order
/// as `gen_m_dependent` consumes it.
pub fn ma_normalized_sum(n: usize, m: usize, profile: &MomentProfile, rng: &mut Rng, out: &mut [f64]) {
    let d = out.len();
    out.fill(0.0);
    for t in 0..n + m {
        let w = ma_weight(t, n, m);
        for o in out.iter_mut().take(d) {
            *o += w * profile.sample(rng);
        }
    }
    let scale = 1.0 / (((m + 1) * n) as f64).sqrt();
    for o in out.iter_mut() {
        *o *= scale;
    }
}

/// Innovation weights `w_j = Σ_{i ∈ N[j]} 1/√|N[i]|` so that `S_n = Σ w_j Z_j`.
pub fn local_graph_weights(graph: &DependencyGraph) -> Vec<f64> {
    let inv: Vec<f64> = (0..graph.len()).map(|i| 1.0 / ((graph.neighbors(i).len() + 1) as f64).sqrt()).collect();
    (0..graph.len()).map(|j| inv[j] + graph.neighbors(j).iter().map(|&i| inv[i]).sum::<f64>()).collect()
}

/// `Var(S_n)/n` of the moving average with innovation variance `var`.
pub fn exact_sigma_n_ma(n: usize, m: usize, var: f64) -> Result<PsdMatrix> {
    if n == 0 {
        return Err(Error::BadParams("n must be positive".into()));
    }
    let nf = n as f64;
    let lag_sum: f64 = (1..=m.min(n - 1)).map(|h| (1.0 - h as f64 / nf) * (m + 1 - h) as f64 / (m + 1) as f64).sum();
    PsdMatrix::diagonal(&[var * (1.0 + 2.0 * lag_sum)])
}

/// `Var(S_n)/n` of local sums over `graph`, per coordinate.
pub fn exact_sigma_n_local(graph: &DependencyGraph, var: f64) -> f64 {
    let w = local_graph_weights(graph);
    var * w.iter().map(|x| x * x).sum::<f64>() / graph.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ma_sigma_example() {
        let s = exact_sigma_n_ma(10, 1, 1.0).unwrap();
        assert!((s.get(0, 0) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn ma_sigma_matches_lag_enumeration() {
        for &(n, m) in &[(1usize, 0usize), (5, 2), (7, 10), (30, 3)] {
            let mut tot = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let h = i.abs_diff(j);
                    if h <= m {
                        tot += (m + 1 - h) as f64 / (m + 1) as f64;
                    }
                }
            }
            assert!((exact_sigma_n_ma(n, m, 1.0).unwrap().get(0, 0) - tot / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn m_zero_equals_iid() {
        let a = gen_iid(50, 3, MomentProfile::CenteredExponential, 4).unwrap();
        let b = gen_m_dependent(50, 3, 0, MomentProfile::CenteredExponential, 4).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn streamed_sum_matches_sequence() {
        let p = MomentProfile::CenteredExponential;
        for &(n, m) in &[(20usize, 0usize), (33, 2), (4, 7)] {
            let s = gen_m_dependent(n, 2, m, p, 8).unwrap();
            let mut out = [0.0; 2];
            ma_normalized_sum(n, m, &p, &mut generator_rng(8), &mut out);
            for k in 0..2 {
                assert!((out[k] - s.sum()[k] / (n as f64).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_sum_weights_match_sequence() {
        let g = DependencyGraph::grid(3, 4);
        let s = gen_local_graph(&g, 1, MomentProfile::Gaussian, 2).unwrap();
        let mut rng = generator_rng(2);
        let z: Vec<f64> = (0..12).map(|_| MomentProfile::Gaussian.sample(&mut rng)).collect();
        let w = local_graph_weights(&g);
        let direct: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
        assert!((direct - s.sum()[0]).abs() < 1e-12);
    }

    #[test]
    fn path_of_three_shares_middle_innovation() {
        let g = DependencyGraph::path(3);
        assert_eq!(g.degree_bound(), 3);
        // X_0 = (Z_0+Z_1)/√2 and X_2 = (Z_1+Z_2)/√2 share Z_1: covariance 1/2
        let reps = 200_000;
        let mut acc = 0.0;
        for r in 0..reps {
            let s = gen_local_graph(&g, 1, MomentProfile::Rademacher, r).unwrap();
            acc += s.data[0] * s.data[2];
        }
        assert!((acc / reps as f64 - 0.5).abs() < 0.01);
        assert!(g.square().neighbors(0).contains(&2));
    }

    #[test]
    fn templates() {
        assert_eq!(DependencyGraph::cycle(5).unwrap().max_degree(), 2);
        assert_eq!(DependencyGraph::grid(3, 3).max_degree(), 4);
        assert_eq!(DependencyGraph::k_neighborhood(10, 3).degree_bound(), 7);
        assert!(GraphTemplate::Grid.build(10).is_err());
        assert!(DependencyGraph::new(2, &[(0, 0)]).is_err());
    }

    #[test]
    fn bad_pareto() {
        let p = MomentProfile::SymmetrizedPareto { alpha: 1.5 };
        assert!(matches!(gen_iid(5, 1, p, 0), Err(Error::BadProfileParams(_))));
        assert!(
            matches!(MomentProfile::heavy_tail(0.5).unwrap(), MomentProfile::SymmetrizedPareto { alpha } if (alpha - 2.55).abs() < 1e-12)
        );
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn third_abs_moment_of_exponential() {
        // E|E − 1|³ by quadrature against Monte Carlo
        let oracle = simpson(|x| (x - 1.0).abs().powi(3) * (-x).exp(), 0.0, 1.0, 2000)
            + simpson(|x| (x - 1.0).abs().powi(3) * (-x).exp(), 1.0, 60.0, 200_000);
        let p = MomentProfile::CenteredExponential;
        let mut rng = generator_rng(1);
        let m = 1_000_000;
        let mc = (0..m).map(|_| p.sample(&mut rng).abs().powi(3)).sum::<f64>() / m as f64;
        assert!((mc / oracle - 1.0).abs() < 0.05);
    }

    #[test]
    fn unit_variance_profiles() {
        let profiles = [
            MomentProfile::Gaussian,
            MomentProfile::CenteredExponential,
            MomentProfile::SymmetrizedPareto { alpha: 4.5 },
            MomentProfile::Rademacher,
        ];
        for p in profiles {
            let mut rng = generator_rng(3);
            let m = 400_000;
            let xs: Vec<f64> = (0..m).map(|_| p.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / m as f64;
            assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.03, "{p:?} {mean} {var}");
        }
        let g = MomentProfile::Gaussian.abs_moment(2.0).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
        let pa = MomentProfile::SymmetrizedPareto { alpha: 3.0 }.abs_moment(2.0).unwrap();
        assert!((pa - 1.0).abs() < 1e-12);
    }
}
