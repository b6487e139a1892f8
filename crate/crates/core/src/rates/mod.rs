//! Monte Carlo CLT-rate experiments: pooled realizations of `S_n/√n` against
//! `N(0, Σ_n)` across an n-grid, with log–log slope fits.

mod dependence;
mod fit;

pub use dependence::{
    dependence_functional_exact, estimate_dependence_functional, exact_chain_w1, DependenceFunctional, DependenceSource,
};
pub use fit::{fit_rate, FitOptions, RateFit};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{
    exact_sigma_n_local, exact_sigma_n_ma, local_graph_weights, ma_normalized_sum, GraphTemplate, MomentProfile,
};
use crate::linalg::{cholesky_factor, GaussianSpec, PsdMatrix};
use crate::markov::{exact_covariances_from, stationary_dist, FiniteChain};
use crate::rng::{derive_key, stream, Rng};
use crate::transport::{estimate_wp_rank_matched, estimate_wp_to_gaussian, Estimator, PointCloud, WpEstimate};
use crate::ustat::{projection_variance, u_statistic_fast, KernelSpec, UKernel};

const GEN: u64 = 0x0067_656e;
const EST: u64 = 0x0065_7374;
const CHUNK: usize = 256;

/// Rows of the summary table, each with a known rate exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Setting {
    IndepW1 { delta: f64 },
    LocalW1 { delta: f64 },
    MdepWp { p: f64, q: f64 },
    MarkovW1 { delta: f64 },
    MarkovWp { p: f64, q: f64 },
}

/// Exponent `a` of the `n^a` upper bound for a setting.
pub fn theoretical_exponent(setting: &Setting) -> Result<f64> {
    let moment = |delta: f64| {
        if delta > 0.0 && delta.is_finite() {
            Ok(-delta.min(1.0) / 2.0)
        } else {
            Err(Error::BadSetting(format!("delta must be positive, got {delta}")))
        }
    };
    let wp = |p: f64, q: f64| {
        if p >= 2.0 && q > 0.0 && q <= 2.0 {
            Ok(-(p + q - 2.0) / (2.0 * (2.0 * p + q - 2.0)))
        } else {
            Err(Error::BadSetting(format!("need p >= 2 and q in (0, 2], got p = {p}, q = {q}")))
        }
    };
    match *setting {
        Setting::IndepW1 { delta } | Setting::LocalW1 { delta } | Setting::MarkovW1 { delta } => moment(delta),
        Setting::MdepWp { p, q } | Setting::MarkovWp { p, q } => wp(p, q),
    }
}

/// What produces one realization of `S_n/√n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Source {
    Iid {
        profile: MomentProfile,
        d: usize,
    },
    /// Moving average of order `m_dep` with independent coordinates.
    MDependent {
        profile: MomentProfile,
        d: usize,
        m_dep: usize,
    },
    LocalGraph {
        template: GraphTemplate,
        profile: MomentProfile,
        d: usize,
    },
    /// Homogeneous finite chain; `init` defaults to the stationary law.
    Chain {
        chain: FiniteChain,
        init: Option<Vec<f64>>,
    },
    /// `√n (U_n − θ)/r` for a kernel over i.i.d. points.
    UStat {
        kernel: KernelSpec,
        profile: MomentProfile,
        input_dim: usize,
    },
    /// Exact draws from `N(0, cov)`: a zero-distance control.
    Synthetic {
        cov: PsdMatrix,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    #[default]
    Exact,
    /// Sample covariance of the pooled realizations.
    Estimated,
}

fn default_bootstrap() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub source: Source,
    pub p: f64,
    pub n_grid: Vec<usize>,
    /// Number of batches (rank-matched) or replicates (sampled).
    pub reps: usize,
    /// Batch size; the pool holds `reps · m` realizations per n.
    pub m: usize,
    pub seed: u64,
    #[serde(default)]
    pub debias: bool,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default)]
    pub sigma: SigmaMode,
    #[serde(default)]
    pub setting: Option<Setting>,
    #[serde(default)]
    pub exclude_flagged: bool,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Smallest n used by the slope fit.
    #[serde(default)]
    pub fit_min_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    /// Signed debiased estimate.
    pub estimate: f64,
    pub stderr: f64,
    /// Set when the fit floored the estimate at `stderr/2`.
    #[serde(default)]
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal_lower: Option<f64>,
    #[serde(skip)]
    pub replicates: Vec<f64>,
}

impl RatePoint {
    pub fn exact(n: usize, estimate: f64) -> Self {
        Self { n, estimate, stderr: 0.0, flagged: false, marginal_lower: None, replicates: Vec::new() }
    }

    fn from_estimate(n: usize, e: WpEstimate) -> Self {
        Self {
            n,
            estimate: e.raw,
            stderr: e.stderr,
            flagged: false,
            marginal_lower: e.marginal_lower,
            replicates: e.replicates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub setting: Option<Setting>,
    pub p: f64,
    pub estimator: Estimator,
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci: (f64, f64),
    pub r_squared: f64,
    pub theoretical_exponent: Option<f64>,
    /// Same pools measured against `N(0, Σ_∞)` (homogeneous chains only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_infty_points: Option<Vec<RatePoint>>,
    pub warnings: Vec<String>,
}

/// Per-n state shared by every realization.
enum Prepared {
    Iid { profile: MomentProfile, d: usize },
    Ma { profile: MomentProfile, d: usize, m_dep: usize },
    Weighted { profile: MomentProfile, d: usize, weights: Vec<f64> },
    Chain { chain: FiniteChain, hbar: Vec<Vec<f64>>, init: Vec<f64> },
    UStat { kernel: UKernel, profile: MomentProfile, theta: Vec<f64> },
    Gaussian { factor: DMatrix<f64> },
}

impl Prepared {
    fn dim(&self) -> usize {
        match self {
            Prepared::Iid { d, .. } | Prepared::Ma { d, .. } | Prepared::Weighted { d, .. } => *d,
            Prepared::Chain { hbar, .. } => hbar[0].len(),
            Prepared::UStat { kernel, .. } => kernel.output_dim,
            Prepared::Gaussian { factor } => factor.nrows(),
        }
    }

    fn draw(&self, n: usize, rng: &mut Rng, out: &mut [f64]) -> Result<()> {
        let scale = 1.0 / (n as f64).sqrt();
        match self {
            Prepared::Iid { profile, d } => {
                out.fill(0.0);
                for _ in 0..n {
                    for o in out.iter_mut().take(*d) {
                        *o += profile.sample(rng);
                    }
                }
                out.iter_mut().for_each(|o| *o *= scale);
            }
            Prepared::Ma { profile, m_dep, .. } => ma_normalized_sum(n, *m_dep, profile, rng, out),
            Prepared::Weighted { profile, weights, .. } => {
                out.fill(0.0);
                for w in weights {
                    for o in out.iter_mut() {
                        *o += w * profile.sample(rng);
                    }
                }
                out.iter_mut().for_each(|o| *o *= scale);
            }
            Prepared::Chain { chain, hbar, init } => {
                out.fill(0.0);
                let mut x = FiniteChain::sample_from(init, rng);
                for t in 0..n {
                    if t > 0 {
                        x = chain.step(x, rng);
                    }
                    out.iter_mut().zip(&hbar[x]).for_each(|(o, h)| *o += h);
                }
                out.iter_mut().for_each(|o| *o *= scale);
            }
            Prepared::UStat { kernel, profile, theta } => {
                let data: Vec<f64> = (0..n * kernel.input_dim).map(|_| profile.sample(rng)).collect();
                let u = u_statistic_fast(&PointCloud::new(data, kernel.input_dim)?, kernel)?;
                let r = kernel.order as f64;
                for ((o, u), t) in out.iter_mut().zip(u).zip(theta) {
                    *o = (n as f64).sqrt() * (u - t) / r;
                }
            }
            Prepared::Gaussian { factor } => {
                let z: Vec<f64> = (0..factor.ncols()).map(|_| MomentProfile::Gaussian.sample(rng)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|j| factor[(i, j)] * z[j]).sum();
                }
            }
        }
        Ok(())
    }
}

/// Exact target covariance, if available, plus Σ_∞ for chains.
struct Target {
    sigma_n: Option<PsdMatrix>,
    sigma_infty: Option<PsdMatrix>,
}

fn ustat_moments(kernel: &KernelSpec, profile: &MomentProfile, k: usize) -> (Option<Vec<f64>>, Option<PsdMatrix>) {
    match *kernel {
        // unit-variance coordinates: θ = I and Var(E[h | Z_0]) = Var(Z_0 Z_0ᵀ)/4
        KernelSpec::SampleCovariance => {
            let theta = (0..k * k).map(|ij| if ij / k == ij % k { 1.0 } else { 0.0 }).collect();
            let proj = if k == 1 {
                profile.abs_moment(4.0).and_then(|m4| PsdMatrix::diagonal(&[(m4 - 1.0) / 4.0]).ok())
            } else {
                None
            };
            (Some(theta), proj)
        }
        _ => match kernel.gaussian_moments(k) {
            Some((theta, proj)) => (Some(theta), Some(proj)),
            None => (None, None),
        },
    }
}

fn prepare(source: &Source, n: usize, seed: u64, warnings: &mut Vec<String>) -> Result<(Prepared, Target)> {
    let both = |s: PsdMatrix| Target { sigma_n: Some(s), sigma_infty: None };
    Ok(match source {
        Source::Iid { profile, d } => {
            profile.validate()?;
            (Prepared::Iid { profile: *profile, d: *d }, both(PsdMatrix::identity(*d)))
        }
        Source::MDependent { profile, d, m_dep } => {
            profile.validate()?;
            let s = exact_sigma_n_ma(n, *m_dep, 1.0)?.get(0, 0);
            (Prepared::Ma { profile: *profile, d: *d, m_dep: *m_dep }, both(PsdMatrix::scaled_identity(*d, s)?))
        }
        Source::LocalGraph { template, profile, d } => {
            profile.validate()?;
            let g = template.build(n)?;
            let s = exact_sigma_n_local(&g, 1.0);
            (
                Prepared::Weighted { profile: *profile, d: *d, weights: local_graph_weights(&g) },
                both(PsdMatrix::scaled_identity(*d, s)?),
            )
        }
        Source::Chain { chain, init } => {
            if chain.schedule().is_some() {
                return Err(Error::BadParams("rate curves need a homogeneous chain".into()));
            }
            chain.check_ergodic()?;
            let init = match init {
                Some(v) => v.clone(),
                None => stationary_dist(chain)?,
            };
            let cov = exact_covariances_from(chain, n, &init)?;
            (
                Prepared::Chain { chain: chain.clone(), hbar: chain.centered_obs()?, init },
                Target { sigma_n: Some(cov.sigma_n), sigma_infty: Some(cov.sigma_infty) },
            )
        }
        Source::UStat { kernel, profile, input_dim } => {
            profile.validate()?;
            let built = kernel.build(*input_dim)?;
            let (theta, proj) = ustat_moments(kernel, profile, *input_dim);
            let theta = theta.ok_or_else(|| Error::BadParams(format!("no known mean for kernel {}", built.name)))?;
            let proj = match proj {
                Some(p) => p,
                None => {
                    warnings.push(format!("n = {n}: projection variance estimated by nested Monte Carlo"));
                    projection_variance(&built, profile, 20_000, 32, derive_key(seed, &[0x7072_6f6a]))?.cov
                }
            };
            (Prepared::UStat { kernel: built, profile: *profile, theta }, both(proj))
        }
        Source::Synthetic { cov } => (Prepared::Gaussian { factor: cholesky_factor(cov)?.factor }, both(cov.clone())),
    })
}

/// `count` realizations of `S_n/√n`, in chunks with their own streams.
fn draw_pool(prep: &Prepared, n: usize, count: usize, seed: u64) -> Result<PointCloud> {
    let d = prep.dim();
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[GEN, n as u64, c as u64]);
            let len = CHUNK.min(count - c * CHUNK);
            let mut buf = vec![0.0; len * d];
            for row in buf.chunks_exact_mut(d) {
                prep.draw(n, &mut rng, row)?;
            }
            Ok(buf)
        })
        .collect();
    let mut data = Vec::with_capacity(count * d);
    for p in parts {
        data.extend(p?);
    }
    PointCloud::new(data, d)
}

fn pooled_covariance(cloud: &PointCloud) -> Result<PsdMatrix> {
    let d = cloud.dim();
    let n = cloud.len() as f64;
    let mut mean = vec![0.0; d];
    for p in cloud.points() {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x / n);
    }
    let mut c = DMatrix::zeros(d, d);
    for p in cloud.points() {
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    PsdMatrix::new((&c + c.transpose()) * 0.5)
}

fn estimate(cfg: &CurveConfig, pool: &PointCloud, target: &GaussianSpec, seed: u64) -> Result<WpEstimate> {
    match cfg.estimator {
        Estimator::RankMatched => estimate_wp_rank_matched(pool, target, cfg.p, cfg.reps, cfg.debias, seed),
        Estimator::Sampled => estimate_wp_to_gaussian(pool, target, cfg.p, cfg.m, cfg.reps, cfg.debias, seed),
    }
}

fn validate(cfg: &CurveConfig) -> Result<()> {
    if !(cfg.p >= 1.0) {
        return Err(Error::BadParams(format!("p must be at least 1, got {}", cfg.p)));
    }
    if cfg.n_grid.is_empty() || cfg.n_grid[0] == 0 || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadParams("n_grid must be positive and strictly increasing".into()));
    }
    if cfg.reps < 2 || cfg.m == 0 {
        return Err(Error::BadParams("need reps >= 2 and m >= 1".into()));
    }
    Ok(())
}

/// Estimates `W_p(L(S_n/√n), N(0, Σ_n))` at every n and fits the slope.
pub fn clt_distance_curve(cfg: &CurveConfig) -> Result<RateCurve> {
    validate(cfg)?;
    let mut warnings = Vec::new();
    if cfg.estimator == Estimator::RankMatched {
        let d = match &cfg.source {
            Source::Iid { d, .. } | Source::MDependent { d, .. } | Source::LocalGraph { d, .. } => *d,
            Source::Chain { chain, .. } => chain.dim(),
            Source::UStat { kernel, input_dim, .. } => kernel.build(*input_dim)?.output_dim,
            Source::Synthetic { cov } => cov.dim(),
        };
        if d > 1 {
            warnings.push(format!("rank-matched coupling in d = {d} is an upper bound on W_p"));
        }
    }
    let is_chain = matches!(cfg.source, Source::Chain { .. });
    let mut points = Vec::with_capacity(cfg.n_grid.len());
    let mut infty_points = Vec::new();
    for &n in &cfg.n_grid {
        let (prep, target) = prepare(&cfg.source, n, cfg.seed, &mut warnings)?;
        let pool = draw_pool(&prep, n, cfg.reps * cfg.m, cfg.seed)?;
        let sigma = match (cfg.sigma, target.sigma_n) {
            (SigmaMode::Exact, Some(s)) => s,
            _ => {
                warnings.push(format!("n = {n}: Σ_n estimated from the pool"));
                pooled_covariance(&pool)?
            }
        };
        let est_seed = derive_key(cfg.seed, &[EST, n as u64]);
        points.push(RatePoint::from_estimate(n, estimate(cfg, &pool, &GaussianSpec::centered(sigma), est_seed)?));
        if is_chain {
            if let Some(s) = target.sigma_infty {
                let e = estimate(cfg, &pool, &GaussianSpec::centered(s), est_seed)?;
                infty_points.push(RatePoint::from_estimate(n, e));
            }
        }
    }
    let fit_from = cfg.fit_min_n.unwrap_or(0);
    let mut window: Vec<RatePoint> = points.iter().filter(|p| p.n >= fit_from).cloned().collect();
    let fit = fit_rate(
        &mut window,
        &FitOptions {
            bootstrap: cfg.bootstrap,
            seed: derive_key(cfg.seed, &[0x0066_6974]),
            exclude_flagged: cfg.exclude_flagged,
        },
    )?;
    for p in points.iter_mut() {
        if let Some(w) = window.iter().find(|w| w.n == p.n) {
            p.flagged = w.flagged;
        }
    }
    warnings.extend(fit.warnings.iter().cloned());
    let theoretical_exponent = cfg.setting.as_ref().map(theoretical_exponent).transpose()?;
    Ok(RateCurve {
        setting: cfg.setting,
        p: cfg.p,
        estimator: cfg.estimator,
        points,
        slope: fit.slope,
        intercept: fit.intercept,
        slope_ci: fit.ci,
        r_squared: fit.r_squared,
        theoretical_exponent,
        sigma_infty_points: is_chain.then_some(infty_points),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::three_state_example;

    fn base(source: Source) -> CurveConfig {
        CurveConfig {
            source,
            p: 1.0,
            n_grid: vec![16, 32, 64, 128],
            reps: 20,
            m: 500,
            seed: 3,
            debias: true,
            estimator: Estimator::RankMatched,
            sigma: SigmaMode::Exact,
            setting: None,
            exclude_flagged: false,
            bootstrap: 200,
            fit_min_n: None,
        }
    }

    #[test]
    fn exponents() {
        assert_eq!(theoretical_exponent(&Setting::LocalW1 { delta: 1.0 }).unwrap(), -0.5);
        assert_eq!(theoretical_exponent(&Setting::MdepWp { p: 2.0, q: 2.0 }).unwrap(), -0.25);
        assert_eq!(theoretical_exponent(&Setting::MarkovW1 { delta: 1.5 }).unwrap(), -0.5);
        assert_eq!(theoretical_exponent(&Setting::IndepW1 { delta: 0.5 }).unwrap(), -0.25);
        assert!(matches!(theoretical_exponent(&Setting::MarkovWp { p: 1.0, q: 2.0 }), Err(Error::BadSetting(_))));
        assert!(theoretical_exponent(&Setting::IndepW1 { delta: 0.0 }).is_err());
    }

    #[test]
    fn synthetic_control_is_zero() {
        let cov = PsdMatrix::diagonal(&[1.0, 2.0]).unwrap();
        let mut cfg = base(Source::Synthetic { cov });
        cfg.p = 2.0;
        cfg.exclude_flagged = true;
        let c = clt_distance_curve(&cfg).unwrap();
        for p in &c.points {
            assert!(p.estimate.abs() <= 3.0 * p.stderr, "{p:?}");
        }
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = base(Source::Iid { profile: MomentProfile::CenteredExponential, d: 1 });
        let a = serde_json::to_string(&clt_distance_curve(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&clt_distance_curve(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iid_exponential_decays() {
        let mut cfg = base(Source::Iid { profile: MomentProfile::CenteredExponential, d: 1 });
        cfg.reps = 50;
        cfg.m = 2000;
        cfg.setting = Some(Setting::IndepW1 { delta: 1.0 });
        let c = clt_distance_curve(&cfg).unwrap();
        assert!(c.slope < -0.3 && c.slope > -0.7, "{}", c.slope);
        assert!(c.slope_ci.0 <= c.slope && c.slope <= c.slope_ci.1);
        assert_eq!(c.theoretical_exponent, Some(-0.5));
    }

    #[test]
    fn chain_reports_both_curves() {
        let cfg = base(Source::Chain { chain: three_state_example(), init: None });
        let c = clt_distance_curve(&cfg).unwrap();
        let infty = c.sigma_infty_points.unwrap();
        assert_eq!(infty.len(), 4);
        // Σ_n differs from Σ_∞ by O(1/n), so the two curves approach each other
        let gap = |i: usize| (infty[i].estimate - c.points[i].estimate).abs();
        assert!(gap(3) < gap(0) + 0.01);
    }

    #[test]
    fn ustat_source_runs() {
        let mut cfg = base(Source::UStat {
            kernel: KernelSpec::SampleCovariance,
            profile: MomentProfile::Gaussian,
            input_dim: 1,
        });
        cfg.reps = 20;
        cfg.m = 200;
        let c = clt_distance_curve(&cfg).unwrap();
        assert!(c.points.iter().all(|p| p.estimate.is_finite()));
    }

    #[test]
    fn bad_grid() {
        let mut cfg = base(Source::Iid { profile: MomentProfile::Gaussian, d: 1 });
        cfg.n_grid = vec![32, 16];
        assert!(matches!(clt_distance_curve(&cfg), Err(Error::BadParams(_))));
    }
}
