//! Dense linear assignment by the Jonker–Volgenant shortest augmenting path
//! method: column reduction, reduction transfer, two budgeted rounds of
//! augmenting row reduction, then Dijkstra-style augmentation for the remaining free rows.
//!
//! Ties are broken by index order, so the result is deterministic.

const NONE: usize = usize::MAX;

/// Budget of row-reduction passes per free row. The classical bound of `n`
/// passes lets floating-point costs creep down by tiny decrements for O(n³)
/// work; a small constant leaves those rows to the augmentation phase.
const ARR_PASSES: usize = 8;

/// Optimal assignment of rows to columns.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub row_to_col: Vec<usize>,
    pub total: f64,
}

/// Solves min Σ c[i][π(i)] for a row-major `n × n` cost matrix.
pub fn solve(cost: &[f64], n: usize) -> Assignment {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return Assignment { row_to_col: vec![], total: 0.0 };
    }
    if n == 1 {
        return Assignment { row_to_col: vec![0], total: cost[0] };
    }
    let mut s = Solver { n, cost, x: vec![NONE; n], y: vec![NONE; n], v: vec![0.0; n] };
    let mut free = s.column_reduction();
    for _ in 0..2 {
        if free.is_empty() {
            break;
        }
        free = s.augmenting_row_reduction(free);
    }
    if !free.is_empty() {
        s.augment(&free);
    }
    let total = (0..n).map(|i| cost[i * n + s.x[i]]).sum();
    Assignment { row_to_col: s.x, total }
}

struct Solver<'a> {
    n: usize,
    cost: &'a [f64],
    x: Vec<usize>,
    y: Vec<usize>,
    v: Vec<f64>,
}

impl Solver<'_> {
    #[inline]
    fn c(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    fn column_reduction(&mut self) -> Vec<usize> {
        let n = self.n;
        self.v.fill(f64::INFINITY);
        self.y.fill(0);
        for i in 0..n {
            let row = &self.cost[i * n..(i + 1) * n];
            for (j, &c) in row.iter().enumerate() {
                if c < self.v[j] {
                    self.v[j] = c;
                    self.y[j] = i;
                }
            }
        }
        let mut unique = vec![true; n];
        for j in (0..n).rev() {
            let i = self.y[j];
            if self.x[i] == NONE {
                self.x[i] = j;
            } else {
                unique[i] = false;
                self.y[j] = NONE;
            }
        }
        let mut free = Vec::new();
        for i in 0..n {
            if self.x[i] == NONE {
                free.push(i);
            } else if unique[i] {
                let j = self.x[i];
                let mut min = f64::INFINITY;
                for j2 in 0..n {
                    if j2 != j {
                        min = min.min(self.c(i, j2) - self.v[j2]);
                    }
                }
                self.v[j] -= min;
            }
        }
        free
    }

    fn augmenting_row_reduction(&mut self, mut free: Vec<usize>) -> Vec<usize> {
        let n = self.n;
        let n_free = free.len();
        let mut current = 0;
        let mut new_free = 0;
        let mut rr_cnt = 0;
        while current < n_free {
            rr_cnt += 1;
            let free_i = free[current];
            current += 1;
            let row = &self.cost[free_i * n..(free_i + 1) * n];
            let mut j1 = 0;
            let mut v1 = row[0] - self.v[0];
            let mut j2 = NONE;
            let mut v2 = f64::INFINITY;
            for (j, (&c, &vj)) in row.iter().zip(&self.v).enumerate().skip(1) {
                let h = c - vj;
                if h < v2 {
                    if h >= v1 {
                        v2 = h;
                        j2 = j;
                    } else {
                        v2 = v1;
                        v1 = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = self.y[j1];
            let v1_new = self.v[j1] - (v2 - v1);
            let v1_lowers = v1_new < self.v[j1];
            if rr_cnt < current * ARR_PASSES {
                if v1_lowers {
                    self.v[j1] = v1_new;
                } else if i0 != NONE && j2 != NONE {
                    j1 = j2;
                    i0 = self.y[j2];
                }
                if i0 != NONE {
                    if v1_lowers {
                        current -= 1;
                        free[current] = i0;
                    } else {
                        free[new_free] = i0;
                        new_free += 1;
                    }
                }
            } else if i0 != NONE {
                free[new_free] = i0;
                new_free += 1;
            }
            self.x[free_i] = j1;
            self.y[j1] = free_i;
        }
        free.truncate(new_free);
        free
    }

    fn augment(&mut self, free: &[usize]) {
        let n = self.n;
        let mut pred = vec![0usize; n];
        let mut cols: Vec<usize> = (0..n).collect();
        let mut d = vec![0.0; n];
        for &free_i in free {
            let mut j = self.find_path(free_i, &mut pred, &mut cols, &mut d);
            loop {
                let i = pred[j];
                self.y[j] = i;
                std::mem::swap(&mut j, &mut self.x[i]);
                if i == free_i {
                    break;
                }
            }
        }
    }

    /// Shortest alternating path from `start` to a free column.
    fn find_path(&mut self, start: usize, pred: &mut [usize], cols: &mut [usize], d: &mut [f64]) -> usize {
        let n = self.n;
        for (k, c) in cols.iter_mut().enumerate() {
            *c = k;
        }
        let row = &self.cost[start * n..(start + 1) * n];
        for ((dj, &c), &vj) in d.iter_mut().zip(row).zip(&self.v) {
            *dj = c - vj;
        }
        pred.fill(start);
        let mut lo = 0;
        let mut hi = 0;
        let mut n_ready = 0;
        let mut final_j = NONE;
        while final_j == NONE {
            if lo == hi {
                n_ready = lo;
                hi = find_min_cols(n, lo, d, cols);
                for &j in &cols[lo..hi] {
                    if self.y[j] == NONE {
                        final_j = j;
                    }
                }
            }
            if final_j == NONE {
                final_j = self.scan(&mut lo, &mut hi, d, cols, pred);
            }
        }
        let mind = d[cols[lo]];
        for &j in &cols[..n_ready] {
            self.v[j] += d[j] - mind;
        }
        final_j
    }

    #[allow(clippy::mut_range_bound)]
    fn scan(&self, plo: &mut usize, phi: &mut usize, d: &mut [f64], cols: &mut [usize], pred: &mut [usize]) -> usize {
        let n = self.n;
        let v = &self.v[..n];
        let d = &mut d[..n];
        let pred = &mut pred[..n];
        let cols = &mut cols[..n];
        let mut lo = *plo;
        let mut hi = *phi;
        while lo != hi {
            let j = cols[lo];
            lo += 1;
            let i = self.y[j];
            let row = &self.cost[i * n..(i + 1) * n];
            let mind = d[j];
            let h = row[j] - v[j] - mind;
            for k in hi..n {
                let j = cols[k];
                let cred = row[j] - v[j] - h;
                if cred < d[j] {
                    d[j] = cred;
                    pred[j] = i;
                    if cred == mind {
                        if self.y[j] == NONE {
                            return j;
                        }
                        cols[k] = cols[hi];
                        cols[hi] = j;
                        hi += 1;
                    }
                }
            }
        }
        *plo = lo;
        *phi = hi;
        NONE
    }
}

/// Moves the columns with minimal `d` among `cols[lo..]` to the front.
// the scan range is fixed at loop entry while `hi` advances
#[allow(clippy::mut_range_bound)]
fn find_min_cols(n: usize, lo: usize, d: &[f64], cols: &mut [usize]) -> usize {
    let mut hi = lo + 1;
    let mut mind = d[cols[lo]];
    for k in hi..n {
        let j = cols[k];
        if d[j] <= mind {
            if d[j] < mind {
                hi = lo;
                mind = d[j];
            }
            cols[k] = cols[hi];
            cols[hi] = j;
            hi += 1;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, i + 1, used, acc + cost[i * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&j| j < p.len() && !std::mem::replace(&mut seen[j], true))
    }

    #[test]
    fn matches_brute_force() {
        let mut r = crate::rng::stream(1, &[]);
        for trial in 0..300 {
            let n = 1 + trial % 7;
            let cost: Vec<f64> = (0..n * n).map(|_| r.random::<f64>()).collect();
            let a = solve(&cost, n);
            assert!(is_permutation(&a.row_to_col));
            assert!((a.total - brute(&cost, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_ties() {
        let mut r = crate::rng::stream(2, &[]);
        for trial in 0..300 {
            let n = 2 + trial % 6;
            let cost: Vec<f64> = (0..n * n).map(|_| r.random_range(0..3) as f64).collect();
            let a = solve(&cost, n);
            assert!(is_permutation(&a.row_to_col));
            assert_eq!(a.total, brute(&cost, n));
        }
    }

    #[test]
    fn constant_matrix() {
        let a = solve(&[5.0; 16], 4);
        assert!(is_permutation(&a.row_to_col));
        assert_eq!(a.total, 20.0);
    }
}
