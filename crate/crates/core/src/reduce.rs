//! REDUCE: collapse N vectors in R^m into a single signing whose signed sum
//! is bounded by the sum of the m largest column sup-norms.
//!
//! The fractional vector s starts at 0 (so X·s = 0) and moves along kernel
//! directions of X restricted to the unfrozen coordinates. Each step drives
//! at least one coordinate to ±1, where it freezes. When at most m
//! coordinates remain fractional, rounding them to sign(s) perturbs the sum
//! by at most the m largest column sup-norms.

use crate::error::Error;
use crate::instance::{Signing, VectorSet};
use crate::Result;

/// Snap tolerance for |s_j| = 1 detection.
const SNAP_TOL: f64 = 1e-9;

/// The fractional signing together with its frozen coordinate set.
#[derive(Debug, Clone)]
pub struct FractionalState {
    pub s: Vec<f64>,
    pub frozen: Vec<bool>,
    frozen_count: usize,
}

impl FractionalState {
    pub fn new(n: usize) -> Self {
        Self {
            s: vec![0.0; n],
            frozen: vec![false; n],
            frozen_count: 0,
        }
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen_count
    }

    pub fn unfrozen_count(&self) -> usize {
        self.s.len() - self.frozen_count
    }

    /// X·s, accumulated left to right.
    pub fn current_sum(&self, x: &VectorSet) -> Vec<f64> {
        let mut acc = vec![0.0; x.dim()];
        for (j, col) in x.columns().iter().enumerate() {
            for (a, c) in acc.iter_mut().zip(col) {
                *a += self.s[j] * c;
            }
        }
        acc
    }
}

/// Sum of the `m` largest column sup-norms: the right-hand side of the
/// REDUCE guarantee.
pub fn reduce_bound(x: &VectorSet) -> f64 {
    let mut sups: Vec<f64> = x
        .columns()
        .iter()
        .map(|c| c.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .collect();
    sups.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sups.iter().take(x.dim()).sum()
}

/// Finds a deterministic kernel vector of the m x w submatrix of `x` on the
/// columns `work` (w = work.len() > m guarantees one exists): Gaussian
/// elimination with partial pivoting, lowest-index free variable set to 1,
/// sign normalized so the lowest-index nonzero entry is positive.
fn kernel_vector(x: &VectorSet, work: &[usize]) -> Result<Vec<f64>> {
    let m = x.dim();
    let w = work.len();
    debug_assert!(w > m);
    // row-major m x w copy of the selected columns
    let mut a = vec![vec![0.0f64; w]; m];
    for (jj, &j) in work.iter().enumerate() {
        for (i, v) in x.columns()[j].iter().enumerate() {
            a[i][jj] = *v;
        }
    }
    let mut pivot_col_of_row = Vec::with_capacity(m);
    let mut is_pivot = vec![false; w];
    let mut row = 0usize;
    for col in 0..w {
        if row == m {
            break;
        }
        // partial pivoting within this column
        let (best, best_abs) = (row..m)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|p, q| p.1.partial_cmp(&q.1).unwrap())
            .unwrap();
        if best_abs < 1e-13 {
            continue; // free column
        }
        a.swap(row, best);
        let pivot_row = a[row].clone();
        for (r, other) in a.iter_mut().enumerate().take(m) {
            if r != row {
                let f = other[col] / pivot_row[col];
                if f != 0.0 {
                    for (entry, p) in other[col..w].iter_mut().zip(&pivot_row[col..w]) {
                        *entry -= f * p;
                    }
                }
            }
        }
        pivot_col_of_row.push(col);
        is_pivot[col] = true;
        row += 1;
    }
    let rank = row;
    let free_cols: Vec<usize> = (0..w).filter(|c| !is_pivot[*c]).collect();
    for &fc in &free_cols {
        // back-substitute the kernel vector with this free variable = 1
        let mut v = vec![0.0f64; w];
        v[fc] = 1.0;
        for (r, &pc) in pivot_col_of_row.iter().enumerate() {
            v[pc] = -a[r][fc] / a[r][pc];
        }
        let max = v.iter().fold(0.0f64, |acc, t| acc.max(t.abs()));
        if max < 1e-12 || !max.is_finite() {
            continue;
        }
        // normalize sign on the lowest-index nonzero entry
        if let Some(lead) = v.iter().find(|t| t.abs() > 1e-12 * max) {
            if *lead < 0.0 {
                for t in v.iter_mut() {
                    *t = -*t;
                }
            }
        }
        return Ok(v);
    }
    Err(Error::RankAnomaly { rank })
}

/// Smallest lambda > 0 at which `s + lambda * v` drives some unfrozen
/// coordinate (restricted to `work`) to +-1; returns (lambda, or None if no
/// positive lambda exists for this orientation).
fn first_hit(s: &[f64], work: &[usize], v: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (jj, &j) in work.iter().enumerate() {
        let d = v[jj];
        if d == 0.0 {
            continue;
        }
        let target = if d > 0.0 { 1.0 } else { -1.0 };
        let lam = (target - s[j]) / d;
        if lam > 0.0 && best.is_none_or(|b| lam < b) {
            best = Some(lam);
        }
    }
    best
}

/// One kernel-direction step: moves `state.s` along a kernel vector of X
/// supported on the m+1 lowest-index unfrozen coordinates until at least one
/// of them reaches +-1, then freezes every coordinate that arrived.
pub fn nullspace_step(x: &VectorSet, state: &mut FractionalState) -> Result<()> {
    let m = x.dim();
    let n = x.count();
    if state.unfrozen_count() <= m {
        return Err(Error::Validation(
            "nullspace_step requires more than m unfrozen coordinates".into(),
        ));
    }
    let work: Vec<usize> = (0..n)
        .filter(|j| !state.frozen[*j])
        .take(m + 1)
        .collect();
    let v = kernel_vector(x, &work)?;

    // both orientations; smaller positive lambda wins, ties to +v
    let lam_plus = first_hit(&state.s, &work, &v);
    let neg: Vec<f64> = v.iter().map(|t| -t).collect();
    let lam_minus = first_hit(&state.s, &work, &neg);
    let (lambda, dir) = match (lam_plus, lam_minus) {
        (Some(p), Some(q)) if q < p => (q, neg),
        (Some(p), _) => (p, v),
        (None, Some(q)) => (q, neg),
        (None, None) => {
            return Err(Error::ImpossibleState(
                "no positive step length along a nonzero kernel vector".into(),
            ))
        }
    };

    let before = state.frozen_count;
    for (jj, &j) in work.iter().enumerate() {
        state.s[j] += lambda * dir[jj];
        if state.s[j].abs() >= 1.0 - SNAP_TOL {
            state.s[j] = if state.s[j] > 0.0 { 1.0 } else { -1.0 };
            state.frozen[j] = true;
            state.frozen_count += 1;
        } else if state.s[j].abs() > 1.0 {
            state.s[j] = state.s[j].signum();
            state.frozen[j] = true;
            state.frozen_count += 1;
        }
    }
    if state.frozen_count == before {
        return Err(Error::ImpossibleState(
            "kernel step froze no coordinate".into(),
        ));
    }
    Ok(())
}

/// Runs the full reduction and rounds: sign(s) with sign(0) = +1.
pub fn reduce(x: &VectorSet) -> Result<Signing> {
    for col in x.columns() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite entry in input".into()));
        }
    }
    let m = x.dim();
    let n = x.count();
    let mut state = FractionalState::new(n);
    if n >= m {
        while state.unfrozen_count() > m {
            nullspace_step(x, &mut state)?;
        }
    }
    let signs: Vec<i8> = state
        .s
        .iter()
        .map(|&v| if v < 0.0 { -1 } else { 1 })
        .collect();
    let signing = Signing::new(signs)?;
    #[cfg(debug_assertions)]
    {
        let report = crate::instance::discrepancy(x, &signing)?;
        let bound = reduce_bound(x);
        debug_assert!(
            report.sup_norm <= bound + 1e-8 * bound.max(1.0),
            "reduce bound violated: {} > {}",
            report.sup_norm,
            bound
        );
    }
    Ok(signing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{BoundedDensity, RngStream};
    use crate::instance::discrepancy;
    use rand::Rng;

    fn vs(m: usize, cols: &[&[f64]]) -> VectorSet {
        VectorSet::new(m, cols.iter().map(|c| c.to_vec()).collect()).unwrap()
    }

    #[test]
    fn single_vector_gets_plus_one() {
        let x = vs(3, &[&[1.0, -2.0, 0.5]]);
        let sigma = reduce(&x).unwrap();
        assert_eq!(sigma.signs(), &[1]);
        let r = discrepancy(&x, &sigma).unwrap();
        assert!((r.sup_norm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_bound_instance() {
        let x = vs(1, &[&[1.0], &[1.0], &[2.0]]);
        let sigma = reduce(&x).unwrap();
        let r = discrepancy(&x, &sigma).unwrap();
        assert!(r.sup_norm <= 2.0 + 1e-12);
    }

    #[test]
    fn fewer_vectors_than_dimension_all_plus() {
        let x = vs(4, &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]);
        let sigma = reduce(&x).unwrap();
        assert_eq!(sigma.signs(), &[1, 1]);
    }

    #[test]
    fn textbook_two_column_step() {
        let x = vs(1, &[&[1.0], &[1.0]]);
        let mut state = FractionalState::new(2);
        nullspace_step(&x, &mut state).unwrap();
        assert_eq!(state.s, vec![1.0, -1.0]);
        assert_eq!(state.frozen_count(), 2);
    }

    #[test]
    fn conservation_and_monotone_freezing() {
        let rho = BoundedDensity::uniform(1.0).unwrap();
        let stream = RngStream::new(42, 7);
        let x = crate::dist::sample_instance(&rho, 4, 40, stream).unwrap();
        let mut state = FractionalState::new(40);
        let mut steps = 0;
        let mut prev_frozen = 0;
        while state.unfrozen_count() > 4 {
            nullspace_step(&x, &mut state).unwrap();
            steps += 1;
            assert!(state.frozen_count() > prev_frozen);
            prev_frozen = state.frozen_count();
            for (j, &f) in state.frozen.iter().enumerate() {
                if f {
                    assert!(state.s[j].abs() == 1.0);
                }
            }
            let sum = state.current_sum(&x);
            let tol = 1e-8 * 40.0;
            assert!(sum.iter().all(|v| v.abs() <= tol), "drift {sum:?}");
        }
        assert!(steps <= 40 - 4, "took {steps} steps");
    }

    #[test]
    fn bound_holds_on_500_random_instances() {
        let mut rng = RngStream::new(9001, 0).rng();
        for trial in 0..500u64 {
            let n = 1 + rng.gen_range(0..64);
            let m = 1 + rng.gen_range(0..8);
            let rho = BoundedDensity::uniform(1.0).unwrap();
            let x = crate::dist::sample_instance(&rho, m, n, RngStream::new(9002, trial))
                .unwrap();
            let sigma = reduce(&x).unwrap();
            let r = discrepancy(&x, &sigma).unwrap();
            let bound = reduce_bound(&x);
            assert!(
                r.sup_norm <= bound + 1e-9,
                "trial {trial}: {} > {bound} (n={n}, m={m})",
                r.sup_norm
            );
        }
    }

    #[test]
    fn iteration_count_within_n_minus_m() {
        let mut rng = RngStream::new(5150, 0).rng();
        for trial in 0..100u64 {
            let m = 1 + rng.gen_range(0..6);
            let n = m + 1 + rng.gen_range(0..50);
            let rho = BoundedDensity::uniform(1.0).unwrap();
            let x = crate::dist::sample_instance(&rho, m, n, RngStream::new(5151, trial))
                .unwrap();
            let mut state = FractionalState::new(n);
            let mut steps = 0;
            while state.unfrozen_count() > m {
                nullspace_step(&x, &mut state).unwrap();
                steps += 1;
            }
            assert!(steps <= n - m);
        }
    }
}
