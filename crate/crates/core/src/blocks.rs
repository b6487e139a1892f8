//! Big/small block decomposition of a dependent sequence.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::SequenceSample;

/// Big blocks of length `ell` separated by gaps of length `m_dep`, then a
/// remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub n: usize,
    pub m_dep: usize,
    pub ell: usize,
    pub k: usize,
    pub big: Vec<Range<usize>>,
    pub small: Vec<Range<usize>>,
    pub remainder: Range<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl BlockPartition {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serializes")
    }
}

/// `B_j = [j(ℓ+M), j(ℓ+M)+ℓ)`, `G_j` the following `M` indices, and the
/// remainder `[k(ℓ+M), n)` with `k = ⌊n/(ℓ+M)⌋`.
pub fn block_partition(n: usize, m_dep: usize, ell: usize) -> Result<BlockPartition> {
    if ell == 0 || ell < m_dep {
        return Err(Error::BadLengths(format!("need ell >= max(M, 1), got ell = {ell}, M = {m_dep}")));
    }
    let stride = ell + m_dep;
    let k = n / stride;
    let big = (0..k).map(|j| j * stride..j * stride + ell).collect();
    let small = (0..k).map(|j| j * stride + ell..(j + 1) * stride).collect();
    let warning = (k == 0).then(|| format!("n = {n} is shorter than one block of {stride}: remainder only"));
    Ok(BlockPartition { n, m_dep, ell, k, big, small, remainder: k * stride..n, warning })
}

/// Block length balancing the two error terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLength {
    pub ell: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// `ℓ = ⌊(2M+1)^{2p/(2p+q−2)} n^{(p+q−2)/(2p+q−2)}⌋`, at least `max(M, 1)`
/// and at most `n − M` when that is feasible.
pub fn optimal_block_length(n: usize, m_dep: usize, p: f64, q: f64) -> Result<BlockLength> {
    if !(p >= 2.0) || !(q > 0.0 && q <= 2.0) || n == 0 {
        return Err(Error::BadParams(format!("need p >= 2, q in (0, 2], n >= 1; got p = {p}, q = {q}, n = {n}")));
    }
    let denom = 2.0 * p + q - 2.0;
    let raw = ((2 * m_dep + 1) as f64).powf(2.0 * p / denom) * (n as f64).powf((p + q - 2.0) / denom);
    // guard against powf landing just below an integer
    let formula = (raw * (1.0 + 1e-12)).floor() as usize;
    let lower = m_dep.max(1);
    let upper = n.saturating_sub(m_dep).max(lower);
    let ell = formula.clamp(lower, upper);
    let warning = (ell != formula).then(|| format!("formula gives {formula}, clamped to {ell} for n = {n}"));
    Ok(BlockLength { ell, warning })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSums {
    /// `A = Σ_j U_j`
    pub a: Vec<f64>,
    /// Sum over the small blocks.
    pub b: Vec<f64>,
    /// `Δ = S_n − A`
    pub delta: Vec<f64>,
    /// Big-block sums `U_j`.
    pub big_sums: Vec<Vec<f64>>,
    pub remainder_sum: Vec<f64>,
    /// `max |(A + Δ) − S_n|` with `Δ` rebuilt from small blocks and remainder.
    pub identity_error: f64,
}

fn range_sum(sample: &SequenceSample, r: &Range<usize>) -> Vec<f64> {
    let mut s = vec![0.0; sample.d];
    for i in r.clone() {
        for (a, b) in s.iter_mut().zip(sample.row(i)) {
            *a += b;
        }
    }
    s
}

pub fn block_sums(sample: &SequenceSample, part: &BlockPartition) -> Result<BlockSums> {
    if sample.n != part.n {
        return Err(Error::LengthMismatch(format!("sample has {} rows, partition covers {}", sample.n, part.n)));
    }
    let d = sample.d;
    let add = |acc: &mut Vec<f64>, v: &[f64]| acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    let big_sums: Vec<Vec<f64>> = part.big.iter().map(|r| range_sum(sample, r)).collect();
    let mut a = vec![0.0; d];
    big_sums.iter().for_each(|u| add(&mut a, u));
    let mut b = vec![0.0; d];
    part.small.iter().for_each(|r| add(&mut b, &range_sum(sample, r)));
    let remainder_sum = range_sum(sample, &part.remainder);
    let total = sample.sum();
    let delta: Vec<f64> = total.iter().zip(&a).map(|(s, a)| s - a).collect();
    let identity_error = (0..d).map(|k| ((a[k] + b[k] + remainder_sum[k]) - total[k]).abs()).fold(0.0, f64::max);
    Ok(BlockSums { a, b, delta, big_sums, remainder_sum, identity_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{gen_m_dependent, MomentProfile, SampleKind};
    use proptest::prelude::*;

    #[test]
    fn partition_example() {
        let p = block_partition(10, 1, 3).unwrap();
        assert_eq!(p.k, 2);
        assert_eq!(p.big, vec![0..3, 4..7]);
        assert_eq!(p.small, vec![3..4, 7..8]);
        assert_eq!(p.remainder, 8..10);
        let p = block_partition(12, 0, 5).unwrap();
        assert!(p.small.iter().all(|r| r.is_empty()));
        let p = block_partition(4, 1, 3).unwrap();
        assert_eq!((p.k, p.remainder.len()), (1, 0));
        assert!(matches!(block_partition(10, 3, 2), Err(Error::BadLengths(_))));
        let p = block_partition(3, 1, 3).unwrap();
        assert!(p.k == 0 && p.warning.is_some() && p.remainder == (0..3));
    }

    #[test]
    fn optimal_length_examples() {
        assert_eq!(optimal_block_length(1024, 1, 2.0, 2.0).unwrap().ell, 96);
        assert_eq!(optimal_block_length(256, 0, 2.0, 2.0).unwrap().ell, 16);
        let l = optimal_block_length(10, 2, 2.0, 2.0).unwrap();
        assert_eq!(l.ell, 8);
        assert!(l.warning.is_some());
        assert!(optimal_block_length(10, 1, 1.5, 2.0).is_err());
    }

    #[test]
    fn ones_example() {
        let s = SequenceSample {
            n: 10,
            d: 1,
            data: vec![1.0; 10],
            kind: SampleKind::Iid,
            profile: MomentProfile::Gaussian,
        };
        let r = block_sums(&s, &block_partition(10, 1, 3).unwrap()).unwrap();
        assert_eq!((r.a[0], r.delta[0]), (6.0, 4.0));
        assert!(matches!(block_sums(&s, &block_partition(11, 1, 3).unwrap()), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn json_export() {
        let p = block_partition(10, 1, 3).unwrap();
        let back: BlockPartition = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn adjacent_big_blocks_uncorrelated() {
        let (n, m, ell) = (40, 2, 6);
        let part = block_partition(n, m, ell).unwrap();
        let reps = 20_000;
        let mut acc = 0.0;
        let mut sq = 0.0;
        for r in 0..reps {
            let s = gen_m_dependent(n, 1, m, MomentProfile::CenteredExponential, r).unwrap();
            let u = block_sums(&s, &part).unwrap().big_sums;
            acc += u[0][0] * u[1][0];
            sq += u[0][0] * u[0][0];
        }
        let corr = acc / sq;
        assert!(corr.abs() < 4.0 / (reps as f64).sqrt());
    }

    proptest! {
        #[test]
        fn partition_covers(n in 1usize..300, m in 0usize..6, extra in 0usize..20) {
            let ell = m.max(1) + extra;
            let p = block_partition(n, m, ell).unwrap();
            let mut seen = vec![0u8; n];
            for r in p.big.iter().chain(&p.small).chain(std::iter::once(&p.remainder)) {
                for i in r.clone() {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            prop_assert!(p.big.iter().all(|r| r.len() == ell));
            prop_assert!(p.small.iter().all(|r| r.len() == m));
            prop_assert!(p.remainder.len() < ell + m || p.k == 0);
        }

        #[test]
        fn block_identity(seed in 0u64..200, n in 5usize..80) {
            let s = gen_m_dependent(n, 2, 1, MomentProfile::Gaussian, seed).unwrap();
            let r = block_sums(&s, &block_partition(n, 1, 2).unwrap()).unwrap();
            prop_assert!(r.identity_error < 1e-12);
        }
    }
}
