//! One Partition-Resample-Difference-Clean-up phase: the set of working
//! vectors living in `[-alpha, alpha]^m` is tiled into sub-cubes, thinned to
//! restore conditional uniformity, differenced pairwise within each cube,
//! and the rejects are folded into a single small carried vector.

use std::collections::HashMap;

use serde::Serialize;

use crate::dist::{product_density_eval, subcube_density_min, BoundedDensity, RngStream};
use crate::error::Error;
use crate::instance::{SignedCombination, VectorSet};
use crate::reduce::reduce;
use crate::Result;

/// Full state between phases: working set, carried vector, cube half-width,
/// the density the working set is (conditionally) distributed by, and the
/// phase counter.
#[derive(Debug, Clone)]
pub struct PhaseState {
    pub s: Vec<SignedCombination>,
    pub v: SignedCombination,
    pub alpha: f64,
    pub density: BoundedDensity,
    pub phase: usize,
}

impl PhaseState {
    /// Phase-1 state: the raw columns, a zero carried vector, the input
    /// density on `[-alpha, alpha]`.
    pub fn initial(x: &VectorSet, rho: BoundedDensity) -> Self {
        let alpha = rho.half_width;
        let s = (0..x.count())
            .map(|i| SignedCombination::column(x, i))
            .collect();
        Self {
            s,
            v: SignedCombination::zero(x.dim()),
            alpha,
            density: rho,
            phase: 1,
        }
    }
}

/// The tiling of `[-alpha, alpha]^m` into `(2k)^m` half-open cubes of side
/// `alpha / k`; the right boundary is folded into the top cube on each axis.
#[derive(Debug, Clone)]
pub struct CubePartition {
    pub k: usize,
    pub child_alpha: f64,
    pub alpha: f64,
    pub dim: usize,
}

/// Smallest `k >= 1` with `k^(4m) >= set_size`, i.e. `ceil(set_size^(1/4m))`
/// computed exactly in integers.
fn ceil_root(set_size: usize, four_m: u32) -> usize {
    let target = set_size as u128;
    let mut k = (set_size as f64).powf(1.0 / f64::from(four_m)).ceil() as u128;
    k = k.max(1);
    let pow = |b: u128| b.checked_pow(four_m).unwrap_or(u128::MAX);
    while k > 1 && pow(k - 1) >= target {
        k -= 1;
    }
    while pow(k) < target {
        k += 1;
    }
    k as usize
}

/// PRDC step 1: cube partition with `k = ceil(set_size^(1/4m))` cells per
/// half-axis.
pub fn partition(alpha: f64, set_size: usize, m: usize) -> CubePartition {
    assert!(set_size >= 1 && m >= 1 && alpha > 0.0);
    let k = ceil_root(set_size, 4 * m as u32);
    CubePartition {
        k,
        child_alpha: alpha / k as f64,
        alpha,
        dim: m,
    }
}

impl CubePartition {
    /// Total cube count `(2k)^m`.
    pub fn cube_count(&self) -> u64 {
        (2 * self.k as u64).pow(self.dim as u32)
    }

    fn axis_index(&self, x: f64) -> Result<usize> {
        if !(x >= -self.alpha && x <= self.alpha) {
            return Err(Error::OutOfSupport {
                coord: 0,
                value: x,
                half_width: self.alpha,
            });
        }
        let cells = 2 * self.k;
        let i = ((x + self.alpha) / self.child_alpha).floor() as usize;
        Ok(i.min(cells - 1)) // +alpha folds into the top cube
    }

    /// Cube id of a point in `[-alpha, alpha]^m`, mixed-radix over the axes.
    pub fn index_of(&self, point: &[f64]) -> Result<u64> {
        debug_assert_eq!(point.len(), self.dim);
        let cells = 2 * self.k as u64;
        let mut id = 0u64;
        for &x in point {
            id = id * cells + self.axis_index(x)? as u64;
        }
        Ok(id)
    }

    /// The half-open box `[lo, lo + child_alpha)^m` of a cube id, returned as
    /// per-axis `(lo, hi)` pairs.
    pub fn cube_box(&self, mut id: u64) -> Vec<(f64, f64)> {
        let cells = 2 * self.k as u64;
        let mut rev = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            let i = (id % cells) as f64;
            id /= cells;
            let lo = -self.alpha + i * self.child_alpha;
            rev.push((lo, lo + self.child_alpha));
        }
        rev.reverse();
        rev
    }
}

/// Per-phase counters and (optionally) the per-point label record.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseDiagnostics {
    pub phase: usize,
    pub set_size: usize,
    pub k: usize,
    pub alpha: f64,
    pub child_alpha: f64,
    pub n_good: usize,
    pub n_bad: usize,
    pub n_leftover: usize,
    pub n_differences: usize,
    pub cleanup_draws: usize,
    pub cleanup_stopped: bool,
    pub v_l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub configuration: Option<Vec<(u64, bool)>>,
}

/// PRDC step 2: each point in cube `C` is kept ("good") with probability
/// `min_C g / g(x)`, which makes the kept points conditionally uniform on
/// their cube.
pub type ResampleSplit = (Vec<SignedCombination>, Vec<SignedCombination>, Vec<(u64, bool)>);

pub fn resample(
    s: Vec<SignedCombination>,
    g: &BoundedDensity,
    part: &CubePartition,
    stream: RngStream,
    record_configuration: bool,
) -> Result<ResampleSplit> {
    use rand::Rng;
    let mut rng = stream.rng();
    let mut mins: HashMap<u64, f64> = HashMap::new();
    let mut good = Vec::with_capacity(s.len());
    let mut bad = Vec::new();
    let mut configuration = Vec::new();
    for p in s {
        let id = part.index_of(&p.value)?;
        let gmin = match mins.get(&id) {
            Some(v) => *v,
            None => {
                let v = subcube_density_min(g, &part.cube_box(id))?;
                mins.insert(id, v);
                v
            }
        };
        let gx = product_density_eval(g, &p.value)?;
        if gx <= 0.0 {
            return Err(Error::ImpossibleState(format!(
                "density vanished at a sampled point {:?}",
                p.value
            )));
        }
        let accept = (gmin / gx).min(1.0);
        let is_good = rng.gen::<f64>() < accept;
        if record_configuration {
            configuration.push((id, is_good));
        }
        if is_good {
            good.push(p);
        } else {
            bad.push(p);
        }
    }
    Ok((good, bad, configuration))
}

/// PRDC step 3: uniformly random pairing within each cube (Fisher-Yates
/// shuffle, then adjacent pairs); each pair is replaced by its difference,
/// odd points stay behind as leftovers.
pub fn difference(
    good: Vec<SignedCombination>,
    part: &CubePartition,
    stream: RngStream,
) -> Result<(Vec<SignedCombination>, Vec<SignedCombination>)> {
    use rand::seq::SliceRandom;
    let mut rng = stream.rng();
    let mut by_cube: HashMap<u64, Vec<SignedCombination>> = HashMap::new();
    for p in good {
        let id = part.index_of(&p.value)?;
        by_cube.entry(id).or_default().push(p);
    }
    let mut ids: Vec<u64> = by_cube.keys().copied().collect();
    ids.sort_unstable(); // deterministic cube order regardless of hashing
    let mut differences = Vec::new();
    let mut leftovers = Vec::new();
    for id in ids {
        let mut pts = by_cube.remove(&id).unwrap();
        pts.shuffle(&mut rng);
        let mut it = pts.into_iter();
        while let Some(p) = it.next() {
            match it.next() {
                Some(q) => differences.push(p.difference(q)?),
                None => leftovers.push(p),
            }
        }
    }
    Ok((differences, leftovers))
}

/// Outcome of the clean-up loop.
#[derive(Debug)]
pub struct CleanupOutcome {
    pub v_next: SignedCombination,
    pub survivors: Vec<SignedCombination>,
    pub draws: usize,
    pub stopped: bool,
}

/// PRDC step 4: REDUCE folds the rejects, leftovers, and the carried vector
/// into one vector `v`, then random differences are pulled in with the
/// norm-reducing sign until `|v|_2 < gamma * m * child_alpha` or the draw
/// budget `ceil(|differences|^(3/4))` runs out.
pub fn cleanup(
    rejects: Vec<SignedCombination>,
    v: SignedCombination,
    mut differences: Vec<SignedCombination>,
    child_alpha: f64,
    gamma: f64,
    stream: RngStream,
) -> Result<CleanupOutcome> {
    use rand::Rng;
    let m = v.value.len();
    // v goes first: the elimination freezes low-index columns early, so the
    // final fractional residue is spanned by small reject columns rather
    // than the one large carried vector
    let pool: Vec<SignedCombination> = std::iter::once(v).chain(rejects).collect();
    let x = VectorSet::new(m, pool.iter().map(|p| p.value.clone()).collect())?;
    let sigma = reduce(&x)?;
    let mut v = SignedCombination::zero(m);
    for (p, &s) in pool.into_iter().zip(sigma.signs()) {
        v = v.add_signed(s, p)?;
    }

    let threshold = gamma * m as f64 * child_alpha;
    let budget = (differences.len() as f64).powf(0.75).ceil() as usize;
    let mut rng = stream.rng();
    let mut draws = 0usize;
    let mut best_l2 = v.l2_norm();
    while v.l2_norm() >= threshold {
        if draws >= budget || differences.is_empty() {
            return Err(Error::PhaseFailure {
                best_l2,
                threshold,
            });
        }
        let idx = rng.gen_range(0..differences.len());
        let u = differences.swap_remove(idx);
        let dot: f64 = v.value.iter().zip(&u.value).map(|(a, b)| a * b).sum();
        let a: i8 = if dot > 0.0 { -1 } else { 1 }; // tie (dot = 0) takes +1
        v = v.add_signed(a, u)?;
        draws += 1;
        best_l2 = best_l2.min(v.l2_norm());
    }
    Ok(CleanupOutcome {
        v_next: v,
        survivors: differences,
        draws,
        stopped: true,
    })
}

/// One full phase; the output state carries the survivors, the new carried
/// vector, the shrunken half-width, and the triangular density the
/// differences follow.
pub fn run_phase(
    state: PhaseState,
    gamma: f64,
    stream: RngStream,
    record_configuration: bool,
) -> Result<(PhaseState, PhaseDiagnostics)> {
    let m = state.density_dim();
    let set_size = state.s.len();
    let part = partition(state.alpha, set_size, m);
    let (good, bad, configuration) = resample(
        state.s,
        &state.density,
        &part,
        stream.derive(1),
        record_configuration,
    )?;
    let n_good = good.len();
    let n_bad = bad.len();
    let (differences, leftovers) = difference(good, &part, stream.derive(2))?;
    let n_leftover = leftovers.len();
    let n_differences = differences.len();
    let rejects: Vec<SignedCombination> = bad.into_iter().chain(leftovers).collect();
    let outcome = cleanup(
        rejects,
        state.v,
        differences,
        part.child_alpha,
        gamma,
        stream.derive(3),
    )?;
    let diag = PhaseDiagnostics {
        phase: state.phase,
        set_size,
        k: part.k,
        alpha: state.alpha,
        child_alpha: part.child_alpha,
        n_good,
        n_bad,
        n_leftover,
        n_differences,
        cleanup_draws: outcome.draws,
        cleanup_stopped: outcome.stopped,
        v_l2: outcome.v_next.l2_norm(),
        configuration: if record_configuration {
            Some(configuration)
        } else {
            None
        },
    };
    let next = PhaseState {
        s: outcome.survivors,
        v: outcome.v_next,
        alpha: part.child_alpha,
        density: BoundedDensity::triangular(part.child_alpha)?,
        phase: state.phase + 1,
    };
    Ok((next, diag))
}

impl PhaseState {
    fn density_dim(&self) -> usize {
        self.v.value.len()
    }
}

/// Expected good fraction under the exact resampling rule: the kept mass in
/// each cube is its density minimum times its volume, so per axis the lower
/// Riemann sum of the triangular density over `2k` cells is `1 - 1/k`, and
/// the product over axes gives `(1 - 1/k)^m`.
pub fn triangular_expected_good_fraction(k: usize, m: usize) -> f64 {
    (1.0 - 1.0 / k as f64).powi(m as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::sample_instance;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn partition_formula_examples() {
        let p = partition(1.0, 4096, 2);
        assert_eq!(p.k, 3); // 4096^(1/8) = 2.83
        assert!((p.child_alpha - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.cube_count(), 36);

        let p = partition(0.7, 1, 3);
        assert_eq!(p.k, 1);
        assert!((p.child_alpha - 0.7).abs() < 1e-15);
    }

    #[test]
    fn ceil_root_is_exact_on_perfect_powers() {
        // 2^8 = 256 is a perfect 4m-th power at m = 2: k must be exactly 2
        assert_eq!(ceil_root(256, 8), 2);
        assert_eq!(ceil_root(257, 8), 3);
        assert_eq!(ceil_root(255, 8), 2);
        assert_eq!(ceil_root(6561, 8), 3); // 3^8
    }

    #[test]
    fn boundary_points_assigned_once() {
        let p = partition(1.0, 4096, 2);
        // right boundary folds into the top cube
        let id = p.index_of(&[1.0, 1.0]).unwrap();
        let b = p.cube_box(id);
        assert!((b[0].1 - 1.0).abs() < 1e-12 && (b[1].1 - 1.0).abs() < 1e-12);
        // interior boundary between cells belongs to the right cell (half-open)
        let id = p.index_of(&[0.0, 0.0]).unwrap();
        let b = p.cube_box(id);
        assert_eq!(b[0].0, 0.0);
        assert_eq!(b[1].0, 0.0);
    }

    proptest! {
        #[test]
        fn every_point_lands_in_its_box(
            xs in proptest::collection::vec(-1.0f64..=1.0, 2),
            set_size in 1usize..100_000,
        ) {
            let p = partition(1.0, set_size, 2);
            let id = p.index_of(&xs).unwrap();
            prop_assert!(id < p.cube_count());
            let b = p.cube_box(id);
            for (x, (lo, hi)) in xs.iter().zip(&b) {
                let closed_top = (hi - 1.0).abs() < 1e-12;
                prop_assert!(*x >= *lo - 1e-12);
                if closed_top {
                    prop_assert!(*x <= *hi + 1e-12);
                } else {
                    prop_assert!(*x < *hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_density_accepts_everything() {
        let rho = BoundedDensity::uniform(1.0).unwrap();
        let x = sample_instance(&rho, 2, 2000, RngStream::new(11, 0)).unwrap();
        let state = PhaseState::initial(&x, rho.clone());
        let part = partition(1.0, 2000, 2);
        let (good, bad, _) =
            resample(state.s, &rho, &part, RngStream::new(11, 1), false).unwrap();
        assert_eq!(good.len(), 2000);
        assert!(bad.is_empty());
    }

    #[test]
    fn bad_fraction_matches_exact_resampling_mass() {
        // Triangular density: the expected kept fraction is the lower Riemann
        // sum (1 - 1/k)^m; check the empirical fraction against it.
        let rho = BoundedDensity::triangular(1.0).unwrap();
        let n = 100_000;
        let m = 2;
        let x = sample_instance(&rho, m, n, RngStream::new(23, 0)).unwrap();
        let state = PhaseState::initial(&x, rho.clone());
        let part = partition(1.0, n, m);
        let (good, bad, _) =
            resample(state.s, &rho, &part, RngStream::new(23, 1), false).unwrap();
        let expected = triangular_expected_good_fraction(part.k, m);
        let got = good.len() as f64 / n as f64;
        assert!(
            (got - expected).abs() < 0.01,
            "good fraction {got} vs expected {expected} (k = {})",
            part.k
        );
        assert_eq!(good.len() + bad.len(), n);
    }

    #[test]
    fn corner_point_always_accepted() {
        // a point sitting at its cube's density-minimizing corner has ratio 1
        let rho = BoundedDensity::triangular(1.0).unwrap();
        let part = partition(1.0, 4096, 1);
        // an interior cube's density infimum sits at its outer face; a point
        // just inside that face is accepted with probability -> 1
        let face = 1.0 - part.child_alpha; // outer face of the second-to-top cube
        let x_corner = face - 1e-9;
        let id = part.index_of(&[x_corner]).unwrap();
        let gmin = subcube_density_min(&rho, &part.cube_box(id)).unwrap();
        let gx = product_density_eval(&rho, &[x_corner]).unwrap();
        assert!((gmin / gx - 1.0).abs() < 1e-6);
    }

    #[test]
    fn difference_pairs_and_parity() {
        let x = VectorSet::new(
            1,
            vec![vec![0.11], vec![0.12], vec![0.13], vec![0.14], vec![0.15]],
        )
        .unwrap();
        // all five in one cube of a coarse partition
        let part = partition(1.0, 1, 1); // k = 1, single cell per half-axis
        let pts: Vec<SignedCombination> =
            (0..5).map(|i| SignedCombination::column(&x, i)).collect();
        let (diffs, leftovers) = difference(pts, &part, RngStream::new(3, 0)).unwrap();
        assert_eq!(diffs.len(), 2);
        assert_eq!(leftovers.len(), 1);
        for d in &diffs {
            assert!(d.value[0].abs() < part.child_alpha);
            assert_eq!(d.support.len(), 2);
            let recomputed = d.recompute(&x);
            assert!((recomputed[0] - d.value[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_cube_gives_one_difference() {
        let x = VectorSet::new(2, vec![vec![0.1, 0.2], vec![0.15, 0.22]]).unwrap();
        let part = partition(1.0, 1, 2);
        let pts = vec![
            SignedCombination::column(&x, 0),
            SignedCombination::column(&x, 1),
        ];
        let (diffs, leftovers) = difference(pts, &part, RngStream::new(4, 0)).unwrap();
        assert_eq!(diffs.len(), 1);
        assert!(leftovers.is_empty());
        let d = &diffs[0];
        let mag: Vec<f64> = d.value.iter().map(|v| v.abs()).collect();
        assert!((mag[0] - 0.05).abs() < 1e-12 && (mag[1] - 0.02).abs() < 1e-12);
        assert_eq!(d.support.len(), 2);
        let signs: Vec<i8> = d.support.values().copied().collect();
        assert_eq!(signs[0] * signs[1], -1);
    }

    #[test]
    fn cleanup_update_rule_examples() {
        // v = (3, 0), u = (1, 0): the norm-reducing sign is -1
        let dot = 3.0 * 1.0;
        let a: i8 = if dot > 0.0 { -1 } else { 1 };
        assert_eq!(a, -1);
        // orthogonal tie goes to +1
        let dot = 0.0;
        let a: i8 = if dot > 0.0 { -1 } else { 1 };
        assert_eq!(a, 1);
    }

    #[test]
    fn cleanup_zero_draws_when_already_small() {
        let m = 2;
        let x = VectorSet::new(m, vec![vec![0.01, 0.0], vec![0.3, -0.2]]).unwrap();
        let rejects = vec![SignedCombination::column(&x, 0)];
        let v = SignedCombination::zero(m);
        let diffs = vec![SignedCombination::column(&x, 1)];
        let out = cleanup(rejects, v, diffs, 0.5, 2.0, RngStream::new(7, 0)).unwrap();
        assert_eq!(out.draws, 0);
        assert_eq!(out.survivors.len(), 1);
        assert!(out.v_next.l2_norm() < 2.0 * m as f64 * 0.5);
    }

    #[test]
    fn cleanup_failure_carries_best_l2() {
        let m = 1;
        let x = VectorSet::new(m, vec![vec![100.0]]).unwrap();
        let rejects = vec![SignedCombination::column(&x, 0)];
        let v = SignedCombination::zero(m);
        let err = cleanup(rejects, v, Vec::new(), 1e-3, 2.0, RngStream::new(7, 1))
            .unwrap_err();
        match err {
            Error::PhaseFailure { best_l2, threshold } => {
                assert!((best_l2 - 100.0).abs() < 1e-9);
                assert!((threshold - 2e-3).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cleanup_monotone_norm_expansion() {
        // |v + a u|^2 = |v|^2 + |u|^2 - 2|<v,u>| with the chosen sign
        let mut rng = RngStream::new(77, 0).rng();
        for _ in 0..200 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dot: f64 = v.iter().zip(&u).map(|(a, b)| a * b).sum();
            let a = if dot > 0.0 { -1.0 } else { 1.0 };
            let next: f64 = v
                .iter()
                .zip(&u)
                .map(|(x, y)| (x + a * y) * (x + a * y))
                .sum();
            let vv: f64 = v.iter().map(|x| x * x).sum();
            let uu: f64 = u.iter().map(|x| x * x).sum();
            assert!((next - (vv + uu - 2.0 * dot.abs())).abs() < 1e-12);
        }
    }

    #[test]
    fn full_phase_preserves_invariants() {
        let rho = BoundedDensity::uniform(1.0).unwrap();
        let n = 20_000;
        let m = 2;
        let x = sample_instance(&rho, m, n, RngStream::new(55, 0)).unwrap();
        let state = PhaseState::initial(&x, rho);
        let gamma = 6.0;
        let (next, diag) = run_phase(state, gamma, RngStream::new(55, 1), false).unwrap();
        assert_eq!(diag.n_good + diag.n_bad, n);
        assert_eq!(diag.n_differences, (diag.n_good - diag.n_leftover) / 2);
        assert!(next.alpha < 1.0);
        // all survivors inside the shrunken cube
        for p in &next.s {
            assert!(p.value.iter().all(|v| v.abs() <= next.alpha + 1e-12));
            let rec = p.recompute(&x);
            for (a, b) in rec.iter().zip(&p.value) {
                assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
            }
        }
        // carried vector below its phase budget
        assert!(next.v.l2_norm() < gamma * m as f64 * next.alpha);
        // supports pairwise disjoint across S union {v}
        let mut seen = std::collections::HashSet::new();
        for p in next.s.iter().chain(std::iter::once(&next.v)) {
            for idx in p.support.keys() {
                assert!(seen.insert(*idx), "column {idx} in two supports");
            }
        }
    }
}
