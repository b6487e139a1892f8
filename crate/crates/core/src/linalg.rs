//! Symmetric PSD matrices, Cholesky factors, Gaussian sampling and the
//! closed-form Gaussian W2 distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const FACTOR_TOL: f64 = 1e-8;

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimMismatch { expected: m.nrows(), got: m.ncols() });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let d = m.nrows();
        let scale = m.amax().max(1.0);
        let asym = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
            .fold(0.0, f64::max);
        if asym > SYM_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&m + m.transpose()) * 0.5;
        if d > 0 {
            let min_eig = sym.clone().symmetric_eigenvalues().min();
            let tol = PSD_TOL * (sym.trace() / d as f64).max(f64::MIN_POSITIVE);
            if min_eig < -tol {
                return Err(Error::NotPsd { min_eig });
            }
        }
        Ok(Self(sym))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimMismatch { expected: d, got: bad.len() });
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn scaled_identity(d: usize, s: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d) * s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Symmetric square root with negative eigenvalues clamped to zero.
    pub fn sqrt(&self) -> DMatrix<f64> {
        sym_sqrt(&self.0)
    }

    /// Inverse square root; fails on a singular matrix.
    pub fn inv_sqrt(&self) -> Result<DMatrix<f64>> {
        let eig = SymmetricEigen::new(self.0.clone());
        let tol = PSD_TOL * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        if let Some(&v) = eig.eigenvalues.iter().find(|v| **v <= tol) {
            return Err(Error::NotPsd { min_eig: v });
        }
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
        Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Frobenius norm of the difference.
    pub fn frobenius_distance(&self, other: &Self) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok((&self.0 - &other.0).norm())
    }
}

impl TryFrom<Vec<Vec<f64>>> for PsdMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<PsdMatrix> for Vec<Vec<f64>> {
    fn from(m: PsdMatrix) -> Self {
        m.to_rows()
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch { expected: a, got: b });
    }
    Ok(())
}

pub(crate) fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Mean and covariance of a Gaussian law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub cov: PsdMatrix,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, cov: PsdMatrix) -> Result<Self> {
        check_dims(cov.dim(), mean.len())?;
        Ok(Self { mean, cov })
    }

    pub fn centered(cov: PsdMatrix) -> Self {
        Self { mean: vec![0.0; cov.dim()], cov }
    }

    pub fn standard(d: usize) -> Self {
        Self::centered(PsdMatrix::identity(d))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Factor `F` with `F Fᵀ = A`.
///
/// Full-rank inputs get the ordinary lower-triangular Cholesky factor. Singular
/// inputs fall back to diagonal pivoting; the factor is then lower triangular
/// up to the row permutation in `pivots`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub factor: DMatrix<f64>,
    pub rank: usize,
    pub pivots: Vec<usize>,
}

pub fn cholesky_factor(a: &PsdMatrix) -> Result<CholeskyFactor> {
    let d = a.dim();
    let m = a.matrix();
    let trace = m.trace();
    let min_eig = if d > 0 { m.clone().symmetric_eigenvalues().min() } else { 0.0 };
    if min_eig < -FACTOR_TOL * trace.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd { min_eig });
    }
    if let Some(ch) = m.clone().cholesky() {
        return Ok(CholeskyFactor { factor: ch.l(), rank: d, pivots: (0..d).collect() });
    }
    Ok(pivoted_cholesky(m))
}

fn pivoted_cholesky(a: &DMatrix<f64>) -> CholeskyFactor {
    let d = a.nrows();
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut l = DMatrix::<f64>::zeros(d, d);
    let tol = 1e-12 * a.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut rank = 0;
    for k in 0..d {
        let (piv, &best) =
            (k..d).map(|i| (i, &w[(i, i)])).fold((k, &f64::NEG_INFINITY), |acc, x| if *x.1 > *acc.1 { x } else { acc });
        if best <= tol {
            break;
        }
        w.swap_rows(k, piv);
        w.swap_columns(k, piv);
        l.swap_rows(k, piv);
        perm.swap(k, piv);
        let pivot = w[(k, k)].sqrt();
        l[(k, k)] = pivot;
        for i in k + 1..d {
            l[(i, k)] = w[(i, k)] / pivot;
        }
        for i in k + 1..d {
            for j in k + 1..=i {
                let v = w[(i, j)] - l[(i, k)] * l[(j, k)];
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        rank += 1;
    }
    // Undo the permutation so that F Fᵀ = A in the original ordering.
    let mut factor = DMatrix::<f64>::zeros(d, d);
    for (row, &orig) in perm.iter().enumerate() {
        factor.set_row(orig, &l.row(row));
    }
    CholeskyFactor { factor, rank, pivots: perm }
}

/// Draws `m` points of N(mean, cov) as a row-major `m × d` buffer.
pub fn sample_gaussian(spec: &GaussianSpec, m: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng::stream(seed, &[0x6761_7573]);
    sample_gaussian_with(spec, m, &mut rng)
}

pub fn sample_gaussian_with(spec: &GaussianSpec, m: usize, rng: &mut rng::Rng) -> Result<Vec<f64>> {
    let d = spec.dim();
    let f = cholesky_factor(&spec.cov)?.factor;
    let mut out = vec![0.0; m * d];
    if d == 0 {
        return Ok(out);
    }
    let mut z = vec![0.0; d];
    for row in out.chunks_exact_mut(d) {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        // pivoted factors are not lower triangular, so use the full row
        for (i, x) in row.iter_mut().enumerate() {
            *x = spec.mean[i] + (0..d).map(|j| f[(i, j)] * z[j]).sum::<f64>();
        }
    }
    Ok(out)
}

/// Closed-form W2 between N(0, a) and N(0, b).
pub fn gaussian_w2_closed_form(a: &PsdMatrix, b: &PsdMatrix) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let ra = a.sqrt();
    let cross = sym_sqrt(&(&ra * b.matrix() * &ra));
    let w2sq = a.trace() + b.trace() - 2.0 * cross.trace();
    Ok(w2sq.max(0.0).sqrt())
}

/// Closed-form W2 between two Gaussians with means.
pub fn gaussian_w2(a: &GaussianSpec, b: &GaussianSpec) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let cov = gaussian_w2_closed_form(&a.cov, &b.cov)?;
    let mean_sq: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((cov * cov + mean_sq).sqrt())
}
