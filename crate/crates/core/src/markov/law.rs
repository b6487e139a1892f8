//! Exact laws of scalar partial sums `S_n = Σ_{t<n} h̄(x_t)` by dynamic
//! programming over visit counts. The number of count vectors grows like
//! `n^{s−1}`, so this is meant for small chains and moderate `n`.

use std::collections::HashMap;

use super::{center, stationary_dist, time_reversal, FiniteChain};
use crate::error::{Error, Result};
use crate::transport::DiscreteLaw;

type Counts = HashMap<Vec<u32>, f64>;

/// Joint law of (final state, visit counts) after `steps` transitions from
/// `start`. Visits at the starting time are counted only if `count_start`.
fn count_dp(chain: &FiniteChain, start: &[f64], steps: usize, count_start: bool) -> Counts {
    let s = chain.n_states();
    let mut layer: Vec<Counts> = vec![HashMap::new(); s];
    for (x, &w) in start.iter().enumerate() {
        if w > 0.0 {
            let mut c = vec![0u32; s];
            if count_start {
                c[x] = 1;
            }
            layer[x].insert(c, w);
        }
    }
    for _ in 0..steps {
        let mut next: Vec<Counts> = vec![HashMap::new(); s];
        for (x, map) in layer.iter().enumerate() {
            for (c, &w) in map {
                for (y, slot) in next.iter_mut().enumerate() {
                    let p = chain.p(x, y);
                    if p == 0.0 {
                        continue;
                    }
                    let mut c2 = c.clone();
                    c2[y] += 1;
                    *slot.entry(c2).or_insert(0.0) += w * p;
                }
            }
        }
        layer = next;
    }
    let mut out: Counts = HashMap::new();
    for map in layer {
        for (c, w) in map {
            *out.entry(c).or_insert(0.0) += w;
        }
    }
    out
}

fn to_law(counts: &Counts, h: &[f64], offset: f64) -> Result<DiscreteLaw> {
    let atoms =
        counts.iter().map(|(c, w)| (offset + c.iter().zip(h).map(|(k, v)| *k as f64 * v).sum::<f64>(), *w)).collect();
    DiscreteLaw::new(atoms)
}

fn scalar_obs(chain: &FiniteChain) -> Result<Vec<f64>> {
    if chain.dim() != 1 {
        return Err(Error::DimMismatch { expected: 1, got: chain.dim() });
    }
    let pi = stationary_dist(chain)?;
    Ok(center(chain.obs(), &pi).iter().map(|r| r[0]).collect())
}

/// Law of the centred sum `S_n` with `x_0 ~ init`.
pub fn sum_law(chain: &FiniteChain, n: usize, init: &[f64]) -> Result<DiscreteLaw> {
    if n == 0 {
        return Err(Error::BadParams("n must be positive".into()));
    }
    if init.len() != chain.n_states() {
        return Err(Error::DimMismatch { expected: chain.n_states(), got: init.len() });
    }
    let h = scalar_obs(chain)?;
    to_law(&count_dp(chain, init, n - 1, true), &h, 0.0)
}

/// Law of `S_n` given `x_i = x` for the stationary chain: the past runs
/// backwards under the time reversal, the future forwards under `P`.
pub fn conditional_sum_law(chain: &FiniteChain, n: usize, i: usize, x: usize) -> Result<DiscreteLaw> {
    if i >= n || x >= chain.n_states() {
        return Err(Error::BadParams(format!("need i < n and a valid state, got i = {i}, n = {n}, x = {x}")));
    }
    let h = scalar_obs(chain)?;
    let s = chain.n_states();
    let mut start = vec![0.0; s];
    start[x] = 1.0;
    let rev = time_reversal(chain)?;
    let past = to_law(&count_dp(&rev, &start, i, false), &h, 0.0)?;
    let future = to_law(&count_dp(chain, &start, n - 1 - i, false), &h, h[x])?;
    past.convolve(&future)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{exact_covariances, simulate_path, three_state_example, two_state_example};

    #[test]
    fn variance_matches_exact_covariance() {
        for c in [two_state_example(), three_state_example()] {
            let pi = stationary_dist(&c).unwrap();
            for n in [1usize, 3, 12] {
                let law = sum_law(&c, n, &pi).unwrap();
                let sig = exact_covariances(&c, n).unwrap().sigma_n.get(0, 0);
                assert!(law.mean().abs() < 1e-12);
                assert!((law.variance() / n as f64 - sig).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_laws_mix_to_marginal() {
        let c = three_state_example();
        let pi = stationary_dist(&c).unwrap();
        let n = 7;
        let full = sum_law(&c, n, &pi).unwrap();
        for i in [0usize, 3, 6] {
            let mut atoms = Vec::new();
            for x in 0..3 {
                let l = conditional_sum_law(&c, n, i, x).unwrap();
                atoms.extend(l.atoms().iter().map(|(v, w)| (*v, w * pi[x])));
            }
            let mixed = DiscreteLaw::new(atoms).unwrap();
            assert!(mixed.wp_pow(&full, 1.0) < 1e-12);
        }
    }

    #[test]
    fn conditional_law_by_simulation() {
        let c = three_state_example();
        let pi = stationary_dist(&c).unwrap();
        let h = scalar_obs(&c).unwrap();
        let (n, i, x) = (6, 2, 1);
        let law = conditional_sum_law(&c, n, i, x).unwrap();
        let mut rng = crate::rng::stream(9, &[]);
        let mut vals = Vec::new();
        while vals.len() < 40_000 {
            let x0 = FiniteChain::sample_from(&pi, &mut rng);
            let path = simulate_path(&c, x0, n, &mut rng);
            if path[i] == x {
                vals.push(path.iter().map(|&z| h[z]).sum::<f64>());
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((m - law.mean()).abs() < 0.03);
    }
}
