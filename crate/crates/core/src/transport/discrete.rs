use crate::error::{Error, Result};
use crate::stats::{normal_cdf, normal_pdf, normal_quantile};

/// Finitely supported law on the real line, atoms sorted by value.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteLaw {
    /// Builds a law from (value, mass) pairs, merging equal values and
    /// dropping null atoms. Masses must sum to one within 1e-9.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.iter().any(|(v, w)| !v.is_finite() || !w.is_finite() || *w < 0.0) {
            return Err(Error::NonFinite);
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, w) in atoms {
            if w == 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if (last.0 - v).abs() <= 1e-12 * (1.0 + v.abs()) => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::BadParams(format!("masses sum to {total}")));
        }
        for a in merged.iter_mut() {
            a.1 /= total;
        }
        Ok(Self { atoms: merged })
    }

    pub fn point(v: f64) -> Self {
        Self { atoms: vec![(v, 1.0)] }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(v, w)| v * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().map(|(v, w)| w * (v - m).powi(2)).sum()
    }

    /// Law of `a·X + b`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        let mut atoms: Vec<(f64, f64)> = self.atoms.iter().map(|(v, w)| (a * v + b, *w)).collect();
        if a < 0.0 {
            atoms.reverse();
        }
        Self { atoms }
    }

    /// Law of `X + Y` for independent `X ~ self`, `Y ~ other`.
    pub fn convolve(&self, other: &Self) -> Result<Self> {
        let atoms =
            self.atoms.iter().flat_map(|(a, wa)| other.atoms.iter().map(move |(b, wb)| (a + b, wa * wb))).collect();
        Self::new(atoms)
    }

    /// `W_p^p` between two discrete laws via their quantile functions.
    pub fn wp_pow(&self, other: &Self, p: f64) -> f64 {
        let (a, b) = (&self.atoms, &other.atoms);
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (a[0].1, b[0].1);
        let mut total = 0.0;
        loop {
            let step = ra.min(rb);
            total += step * (a[i].0 - b[j].0).abs().powf(p);
            ra -= step;
            rb -= step;
            if ra <= 1e-15 {
                i += 1;
                if i == a.len() {
                    break;
                }
                ra += a[i].1;
            }
            if rb <= 1e-15 {
                j += 1;
                if j == b.len() {
                    break;
                }
                rb += b[j].1;
            }
        }
        total
    }

    /// Exact `W_1` to N(mean, sd²) as ∫|F − Φ|.
    pub fn w1_to_normal(&self, mean: f64, sd: f64) -> f64 {
        // antiderivative of Φ((x − mean)/sd) in x
        let g = |x: f64| {
            let z = (x - mean) / sd;
            sd * (z * normal_cdf(z) + normal_pdf(z))
        };
        let first = self.atoms[0].0;
        let last = self.atoms[self.atoms.len() - 1].0;
        let mut total = g(first);
        let zl = (last - mean) / sd;
        total += sd * (normal_pdf(zl) - zl * (1.0 - normal_cdf(zl)));
        let mut cum = 0.0;
        for w in self.atoms.windows(2) {
            cum += w[0].1;
            let (lo, hi) = (w[0].0, w[1].0);
            let c = cum.min(1.0);
            let cross = mean + sd * normal_quantile(c);
            let piece = |a: f64, b: f64| (c * (b - a) - (g(b) - g(a))).abs();
            total += if cross > lo && cross < hi { piece(lo, cross) + piece(cross, hi) } else { piece(lo, hi) };
        }
        total
    }
}
