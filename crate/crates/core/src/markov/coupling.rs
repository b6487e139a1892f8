use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::FiniteChain;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeetingOutcome {
    /// First time both copies occupy the same state.
    Met(usize),
    Timeout,
}

/// One step of the maximal coupling of rows `a` and `b`. Returns the pair of
/// next states; with probability `1 − TV(P(a,·), P(b,·))` they coincide.
pub fn coupled_step(chain: &FiniteChain, a: usize, b: usize, rng: &mut Rng) -> (usize, usize) {
    if a == b {
        let z = chain.step(a, rng);
        return (z, z);
    }
    let s = chain.n_states();
    let overlap: Vec<f64> = (0..s).map(|z| chain.p(a, z).min(chain.p(b, z))).collect();
    let alpha: f64 = overlap.iter().sum();
    let u: f64 = rng.random();
    if u < alpha {
        let z = pick(&overlap, alpha, rng);
        return (z, z);
    }
    let ra: Vec<f64> = (0..s).map(|z| chain.p(a, z) - overlap[z]).collect();
    let rb: Vec<f64> = (0..s).map(|z| chain.p(b, z) - overlap[z]).collect();
    (pick(&ra, 1.0 - alpha, rng), pick(&rb, 1.0 - alpha, rng))
}

fn pick(weights: &[f64], total: f64, rng: &mut Rng) -> usize {
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

/// Meeting time of two copies started at `x` and `y` under the step-wise
/// maximal coupling, or `Timeout` after `horizon` steps.
pub fn meeting_time_sample(
    chain: &FiniteChain,
    x: usize,
    y: usize,
    seed: u64,
    horizon: usize,
) -> Result<MeetingOutcome> {
    let s = chain.n_states();
    if x >= s || y >= s {
        return Err(Error::BadParams(format!("start states ({x}, {y}) out of range")));
    }
    if x == y {
        return Ok(MeetingOutcome::Met(0));
    }
    let mut rng = rng::stream(seed, &[0x4d45_4554]);
    let (mut a, mut b) = (x, y);
    for t in 1..=horizon {
        (a, b) = coupled_step(chain, a, b, &mut rng);
        if a == b {
            return Ok(MeetingOutcome::Met(t));
        }
    }
    Ok(MeetingOutcome::Timeout)
}

/// `P(T > k)` for `k = 0..=kmax` by propagating the coupled pair chain with
/// an absorbing diagonal.
pub fn meeting_survival_exact(chain: &FiniteChain, x: usize, y: usize, kmax: usize) -> Vec<f64> {
    let s = chain.n_states();
    let mut mass = vec![0.0; s * s];
    if x != y {
        mass[x * s + y] = 1.0;
    }
    let mut out = Vec::with_capacity(kmax + 1);
    for _ in 0..=kmax {
        out.push(mass.iter().sum());
        let mut next = vec![0.0; s * s];
        for a in 0..s {
            for b in 0..s {
                let w = mass[a * s + b];
                if w == 0.0 {
                    continue;
                }
                let overlap: Vec<f64> = (0..s).map(|z| chain.p(a, z).min(chain.p(b, z))).collect();
                let alpha: f64 = overlap.iter().sum();
                if alpha >= 1.0 {
                    continue;
                }
                for za in 0..s {
                    let pa = chain.p(a, za) - overlap[za];
                    if pa <= 0.0 {
                        continue;
                    }
                    for zb in 0..s {
                        let pb = chain.p(b, zb) - overlap[zb];
                        if pb > 0.0 && za != zb {
                            next[za * s + zb] += w * pa * pb / (1.0 - alpha);
                        }
                    }
                }
            }
        }
        mass = next;
    }
    out
}
