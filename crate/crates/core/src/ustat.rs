//! U-statistics with symmetric kernels, Hoeffding projection variance and
//! the exact combinatorial factor for the projection remainder.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::MomentProfile;
use crate::linalg::PsdMatrix;
use crate::rng::{stream, Rng};
use crate::transport::PointCloud;

/// Largest number of subsets enumerated for kernels of order three or more.
pub const MAX_SUBSETS: u128 = 10_000_000;

type EvalFn = dyn Fn(&[&[f64]], &mut [f64]) + Send + Sync;
type ClosedFn = dyn Fn(&PointCloud) -> Vec<f64> + Send + Sync;

/// Symmetric kernel of order `order` mapping points of dimension `input_dim`
/// into `R^output_dim`.
#[derive(Clone)]
pub struct UKernel {
    pub name: String,
    pub order: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    eval: Arc<EvalFn>,
    closed_form: Option<Arc<ClosedFn>>,
}

impl fmt::Debug for UKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UKernel")
            .field("name", &self.name)
            .field("order", &self.order)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .finish()
    }
}

impl UKernel {
    pub fn new(
        name: impl Into<String>,
        order: usize,
        input_dim: usize,
        output_dim: usize,
        eval: impl Fn(&[&[f64]], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if order == 0 || input_dim == 0 || output_dim == 0 {
            return Err(Error::BadParams("kernel order and dimensions must be positive".into()));
        }
        Ok(Self { name: name.into(), order, input_dim, output_dim, eval: Arc::new(eval), closed_form: None })
    }

    /// Attaches an exact O(n) formula for the full U-statistic.
    pub fn with_closed_form(mut self, f: impl Fn(&PointCloud) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.closed_form = Some(Arc::new(f));
        self
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    pub fn eval(&self, args: &[&[f64]]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim];
        (self.eval)(args, &mut out);
        out
    }

    /// Largest deviation of `h` under random argument permutations.
    pub fn symmetry_defect(&self, profile: &MomentProfile, trials: usize, seed: u64) -> f64 {
        use rand::seq::SliceRandom;
        let mut rng = stream(seed, &[]);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let pts: Vec<Vec<f64>> = (0..self.order).map(|_| draw_point(profile, self.input_dim, &mut rng)).collect();
            let base = self.eval(&pts.iter().map(Vec::as_slice).collect::<Vec<_>>());
            let mut perm: Vec<usize> = (0..self.order).collect();
            perm.shuffle(&mut rng);
            let args: Vec<&[f64]> = perm.iter().map(|&i| pts[i].as_slice()).collect();
            for (a, b) in base.iter().zip(self.eval(&args)) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

/// Built-in kernels selectable by name from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `h(z, z') = (z − z')(z − z')ᵀ/2`, flattened row-major. Its U-statistic
    /// is the unbiased sample covariance.
    SampleCovariance,
    /// `h(z, z') = (z + z')/2`.
    PairMean,
    /// Subbagging with the subsample-mean base learner, order `order`.
    SubsampleMean {
        order: usize,
    },
    Constant {
        value: f64,
    },
}

impl KernelSpec {
    pub fn build(&self, input_dim: usize) -> Result<UKernel> {
        let k = input_dim;
        match *self {
            KernelSpec::SampleCovariance => Ok(UKernel::new("sample-covariance", 2, k, k * k, move |z, out| {
                for i in 0..k {
                    for j in 0..k {
                        out[i * k + j] = 0.5 * (z[0][i] - z[1][i]) * (z[0][j] - z[1][j]);
                    }
                }
            })?
            .with_closed_form(sample_covariance)),
            KernelSpec::PairMean => Ok(UKernel::new("pair-mean", 2, k, k, |z, out| {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = 0.5 * (z[0][i] + z[1][i]);
                }
            })?
            .with_closed_form(sample_mean)),
            KernelSpec::SubsampleMean { order } => Ok(UKernel::new("subsample-mean", order, k, k, move |z, out| {
                out.fill(0.0);
                for p in z {
                    for (o, v) in out.iter_mut().zip(*p) {
                        *o += v / order as f64;
                    }
                }
            })?
            .with_closed_form(sample_mean)),
            KernelSpec::Constant { value } => {
                Ok(UKernel::new("constant", 2, k, 1, move |_, out| out[0] = value)?
                    .with_closed_form(move |_| vec![value]))
            }
        }
    }

    /// Mean `θ = E h` and projection covariance `Var(E[h | Z_0])` for i.i.d.
    /// standardized coordinates, when they are known in closed form.
    pub fn gaussian_moments(&self, input_dim: usize) -> Option<(Vec<f64>, PsdMatrix)> {
        let k = input_dim;
        match *self {
            KernelSpec::SampleCovariance if k == 1 => Some((vec![1.0], PsdMatrix::scaled_identity(1, 0.5).ok()?)),
            KernelSpec::PairMean => Some((vec![0.0; k], PsdMatrix::scaled_identity(k, 0.25).ok()?)),
            KernelSpec::SubsampleMean { order } => {
                Some((vec![0.0; k], PsdMatrix::scaled_identity(k, 1.0 / (order * order) as f64).ok()?))
            }
            _ => None,
        }
    }
}

fn sample_mean(data: &PointCloud) -> Vec<f64> {
    let mut m = vec![0.0; data.dim()];
    for p in data.points() {
        m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= data.len() as f64);
    m
}

fn sample_covariance(data: &PointCloud) -> Vec<f64> {
    let (n, k) = (data.len(), data.dim());
    let mean = sample_mean(data);
    let mut c = vec![0.0; k * k];
    for p in data.points() {
        for i in 0..k {
            for j in 0..k {
                c[i * k + j] += (p[i] - mean[i]) * (p[j] - mean[j]);
            }
        }
    }
    c.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    c
}

fn draw_point(profile: &MomentProfile, dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| profile.sample(rng)).collect()
}

/// `C(n, r)` saturating at `u128::MAX`.
pub fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Exact U-statistic by enumerating every `order`-subset.
pub fn u_statistic(data: &PointCloud, kernel: &UKernel) -> Result<Vec<f64>> {
    let (n, r) = (data.len(), kernel.order);
    if data.dim() != kernel.input_dim {
        return Err(Error::DimMismatch { expected: kernel.input_dim, got: data.dim() });
    }
    if n < r {
        return Err(Error::InsufficientSamples { needed: r, have: n });
    }
    let total = binomial(n, r);
    if r >= 3 && total > MAX_SUBSETS {
        return Err(Error::TooManySubsets(total));
    }
    let dim = kernel.output_dim;
    // canonical order makes the result exactly invariant under permutations
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        data.point(a)
            .iter()
            .zip(data.point(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<&[f64]> = order.iter().map(|&i| data.point(i)).collect();
    // one partial sum per leading index, reduced in index order
    let partials: Vec<Vec<f64>> = (0..=n - r)
        .into_par_iter()
        .map(|first| {
            let mut acc = vec![0.0; dim];
            let mut out = vec![0.0; dim];
            let mut idx: Vec<usize> = (first..first + r).collect();
            let mut args: Vec<&[f64]> = vec![&[]; r];
            loop {
                for (a, &i) in args.iter_mut().zip(&idx) {
                    *a = sorted[i];
                }
                (kernel.eval)(&args, &mut out);
                acc.iter_mut().zip(&out).for_each(|(a, b)| *a += b);
                // advance the tail (positions 1..r) to the next combination
                let mut pos = r;
                loop {
                    if pos <= 1 {
                        return acc;
                    }
                    pos -= 1;
                    if idx[pos] < n - (r - pos) {
                        idx[pos] += 1;
                        for q in pos + 1..r {
                            idx[q] = idx[q - 1] + 1;
                        }
                        break;
                    }
                }
            }
        })
        .collect();
    let mut sum = vec![0.0; dim];
    for p in partials {
        sum.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let total = total as f64;
    Ok(sum.into_iter().map(|v| v / total).collect())
}

/// Uses the kernel's exact closed form when it has one, else enumerates.
pub fn u_statistic_fast(data: &PointCloud, kernel: &UKernel) -> Result<Vec<f64>> {
    match &kernel.closed_form {
        Some(f) if data.dim() == kernel.input_dim && data.len() >= kernel.order => Ok(f(data)),
        _ => u_statistic(data, kernel),
    }
}

/// Nested Monte Carlo estimate of `Var(E[h(Z_0, …, Z_{r−1}) | Z_0])`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionVariance {
    pub cov: PsdMatrix,
    /// Inner-loop noise `E[Var(h | Z_0)]/inner` removed from the raw
    /// covariance of conditional means (trace).
    pub inner_noise: f64,
    pub reps: usize,
    pub inner: usize,
    pub note: String,
}

pub fn projection_variance(
    kernel: &UKernel,
    profile: &MomentProfile,
    reps: usize,
    inner: usize,
    seed: u64,
) -> Result<ProjectionVariance> {
    if reps < 2 || inner < 1 {
        return Err(Error::BadParams(format!("need reps >= 2 and inner >= 1, got {reps}, {inner}")));
    }
    profile.validate()?;
    let dim = kernel.output_dim;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
        .into_par_iter()
        .map(|o| {
            let mut rng = stream(seed, &[o as u64]);
            let z0 = draw_point(profile, kernel.input_dim, &mut rng);
            let mut sum = vec![0.0; dim];
            let mut sq = vec![0.0; dim * dim];
            for _ in 0..inner {
                let mut pts = vec![z0.clone()];
                pts.extend((1..kernel.order).map(|_| draw_point(profile, kernel.input_dim, &mut rng)));
                let h = kernel.eval(&pts.iter().map(Vec::as_slice).collect::<Vec<_>>());
                for i in 0..dim {
                    sum[i] += h[i];
                    for j in 0..dim {
                        sq[i * dim + j] += h[i] * h[j];
                    }
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / inner as f64).collect();
            // within-group covariance of h, divided by inner
            let noise: Vec<f64> = if inner > 1 {
                (0..dim * dim)
                    .map(|ij| {
                        let (i, j) = (ij / dim, ij % dim);
                        (sq[ij] - inner as f64 * mean[i] * mean[j]) / ((inner - 1) as f64 * inner as f64)
                    })
                    .collect()
            } else {
                vec![0.0; dim * dim]
            };
            (mean, noise)
        })
        .collect();
    let grand: Vec<f64> = (0..dim).map(|i| rows.iter().map(|r| r.0[i]).sum::<f64>() / reps as f64).collect();
    let mut cov = DMatrix::zeros(dim, dim);
    let mut noise = DMatrix::zeros(dim, dim);
    for (m, nz) in &rows {
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += (m[i] - grand[i]) * (m[j] - grand[j]) / (reps - 1) as f64;
                noise[(i, j)] += nz[i * dim + j] / reps as f64;
            }
        }
    }
    let corrected = clip_psd(&(cov - &noise));
    let note = if inner > 1 {
        "inner-loop noise subtracted; eigenvalues clipped at zero".to_string()
    } else {
        "inner = 1: raw covariance of single kernel draws, biased upward".to_string()
    };
    Ok(ProjectionVariance { cov: PsdMatrix::new(corrected)?, inner_noise: noise.trace(), reps, inner, note })
}

fn clip_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Nodes and weights of `nodes`-point Gauss–Hermite quadrature for the
/// standard normal law (Golub–Welsch).
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(nodes, nodes);
    for k in 1..nodes {
        let b = (k as f64).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> =
        (0..nodes).map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Projection covariance for scalar standard normal inputs by tensor
/// Gauss–Hermite quadrature. Exact for polynomial kernels of degree below
/// `2·nodes`.
pub fn projection_variance_gaussian(kernel: &UKernel, nodes: usize) -> Result<PsdMatrix> {
    if kernel.input_dim != 1 {
        return Err(Error::DimMismatch { expected: 1, got: kernel.input_dim });
    }
    let rest = kernel.order - 1;
    if (nodes as f64).powi(kernel.order as i32) > 1e8 {
        return Err(Error::BadParams("quadrature grid too large".into()));
    }
    let (x, w) = gauss_hermite(nodes);
    let dim = kernel.output_dim;
    let cond: Vec<Vec<f64>> = x
        .iter()
        .map(|&z0| {
            let mut acc = vec![0.0; dim];
            let mut idx = vec![0usize; rest];
            loop {
                let mut args: Vec<[f64; 1]> = vec![[z0]];
                args.extend(idx.iter().map(|&i| [x[i]]));
                let weight: f64 = idx.iter().map(|&i| w[i]).product();
                let refs: Vec<&[f64]> = args.iter().map(|a| a.as_slice()).collect();
                acc.iter_mut().zip(kernel.eval(&refs)).for_each(|(a, h)| *a += weight * h);
                let mut pos = 0;
                while pos < rest {
                    idx[pos] += 1;
                    if idx[pos] < nodes {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == rest {
                    break;
                }
            }
            acc
        })
        .collect();
    let mean: Vec<f64> = (0..dim).map(|i| cond.iter().zip(&w).map(|(c, wk)| c[i] * wk).sum()).collect();
    let mut cov = DMatrix::zeros(dim, dim);
    for (c, wk) in cond.iter().zip(&w) {
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += wk * (c[i] - mean[i]) * (c[j] - mean[j]);
            }
        }
    }
    PsdMatrix::new(clip_psd(&cov))
}

fn big_binomial(n: usize, r: usize) -> BigUint {
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `Q(n, r) = n² C(n, r)^{-2} C(n−1, r−1) C(n−r, r−1)` as an exact rational.
pub fn q_nr_exact(n: usize, r: usize) -> Result<BigRational> {
    if r == 0 || n + 1 < 2 * r {
        return Err(Error::DomainError(format!("need r >= 1 and n >= 2r - 1, got n = {n}, r = {r}")));
    }
    let num = BigUint::from(n).pow(2) * big_binomial(n - 1, r - 1) * big_binomial(n - r, r - 1);
    let den = big_binomial(n, r).pow(2);
    Ok(BigRational::new(num.into(), den.into()))
}

pub fn q_nr(n: usize, r: usize) -> Result<f64> {
    q_nr_exact(n, r)?.to_f64().ok_or(Error::NonFinite)
}
