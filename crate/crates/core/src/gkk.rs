//! The full driver: a logarithmic number of Partition-Resample-Difference-
//! Clean-up phases with the triangular density rescaled each phase, then a
//! final REDUCE over whatever survives, returning a verified signing.

use serde::Serialize;

use crate::dist::{BoundedDensity, RngStream};
use crate::error::Error;
use crate::instance::{discrepancy, DiscrepancyReport, SignedCombination, Signing, VectorSet};
use crate::prdc::{partition, run_phase, PhaseDiagnostics, PhaseState};
use crate::reduce::reduce;
use crate::Result;

/// Phase-count constant: `(2 ln(10/3))^{-1}`, so that a per-phase survival
/// fraction of 0.3 over `ceil(C_STAR ln n)` phases leaves exactly `sqrt(n)`
/// points.
pub const C_STAR_PHASES: f64 = 0.415_281_147_559_729_3;

/// `ceil(C_STAR ln n)` phases.
pub fn default_phase_cap(n: usize) -> usize {
    ((n as f64).ln() * C_STAR_PHASES).ceil().max(1.0) as usize
}

/// Below this set size, partitioning degenerates and the final REDUCE is
/// cheap: `max(2^m * 4, 64)`.
pub fn default_min_set_size(m: usize) -> usize {
    if m >= 32 {
        return usize::MAX;
    }
    ((1usize << m) * 4).max(64)
}

/// Monte Carlo estimate of the Khintchine-type l1 constant: the minimum over
/// random unit directions `nu` of a 3-sigma lower confidence bound on
/// `E|<nu, u>| / alpha`, with `u` per-coordinate triangular on `[-1, 1]^m`.
pub fn estimate_c_star(m: usize, stream: RngStream, directions: usize, samples: usize) -> f64 {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = stream.rng();
    // shared sample cloud
    let mut u = vec![0.0f64; samples * m];
    for v in u.iter_mut() {
        let a: f64 = rng.gen();
        let b: f64 = rng.gen();
        *v = a - b;
    }
    let mut best = f64::INFINITY;
    for _ in 0..directions {
        let mut nu: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = nu.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in nu.iter_mut() {
            *x /= norm;
        }
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for s in 0..samples {
            let dot: f64 = (0..m).map(|i| nu[i] * u[s * m + i]).sum();
            let a = dot.abs();
            sum += a;
            sumsq += a * a;
        }
        let mean = sum / samples as f64;
        let var = (sumsq / samples as f64 - mean * mean).max(0.0);
        let se = (var / samples as f64).sqrt();
        best = best.min(mean - 3.0 * se);
    }
    best
}

/// Driver configuration; `gamma >= 2 / c_star` is enforced at construction.
#[derive(Debug, Clone, Serialize)]
pub struct GkkConfig {
    pub gamma: f64,
    pub c_star: f64,
    pub phase_cap: usize,
    pub min_set_size: usize,
    pub record_configuration: bool,
}

impl GkkConfig {
    pub fn new(gamma: f64, c_star: f64, phase_cap: usize, min_set_size: usize) -> Result<Self> {
        if !(gamma > 0.0 && c_star > 0.0) || phase_cap == 0 || min_set_size == 0 {
            return Err(Error::Validation(
                "gamma, c_star > 0 and phase_cap, min_set_size >= 1 required".into(),
            ));
        }
        if gamma < 2.0 / c_star {
            return Err(Error::Validation(format!(
                "gamma = {gamma} below 2/c* = {}",
                2.0 / c_star
            )));
        }
        Ok(Self {
            gamma,
            c_star,
            phase_cap,
            min_set_size,
            record_configuration: false,
        })
    }

    /// Defaults for an (n, m) instance: c* estimated once by Monte Carlo,
    /// `gamma = max(2/c*, 2)`, `ceil(C_STAR ln n)` phases.
    pub fn for_instance(n: usize, m: usize, stream: RngStream) -> Result<Self> {
        let c_star = estimate_c_star(m, stream.derive(0xC57A), 100, 100_000);
        if c_star <= 0.0 {
            return Err(Error::Domain(format!(
                "nonpositive c* estimate {c_star} at m = {m}"
            )));
        }
        Self::new(
            (2.0 / c_star).max(2.0),
            c_star,
            default_phase_cap(n),
            default_min_set_size(m),
        )
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if gamma < 2.0 / self.c_star {
            return Err(Error::Validation(format!(
                "gamma = {gamma} below 2/c* = {}",
                2.0 / self.c_star
            )));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_phase_cap(mut self, phase_cap: usize) -> Self {
        self.phase_cap = phase_cap.max(1);
        self
    }
}

/// A verified run: the signing, its from-scratch report, per-phase
/// diagnostics, the half-width trace, and a coarse arithmetic-work counter.
#[derive(Debug, Clone, Serialize)]
pub struct GkkResult {
    pub signing: Signing,
    pub report: DiscrepancyReport,
    pub phases: Vec<PhaseDiagnostics>,
    pub alpha_trace: Vec<f64>,
    pub ops: u64,
    pub retries: u32,
}

/// The half-width schedule: `alpha_1 = delta`,
/// `alpha_{t+1} = alpha_t / ceil(sizes_t^(1/4m))`.
pub fn alpha_schedule(delta: f64, m: usize, sizes: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut alpha = delta;
    out.push(alpha);
    for &s in sizes {
        let k = partition(alpha, s.max(1), m).k;
        alpha /= k as f64;
        out.push(alpha);
    }
    out
}

/// Runs the phases, the final REDUCE, and re-verifies the signing against
/// the raw instance. A clean-up failure is retried once with a fresh derived
/// stream before propagating.
pub fn gkk_run(
    x: &VectorSet,
    rho: &BoundedDensity,
    cfg: &GkkConfig,
    stream: RngStream,
) -> Result<GkkResult> {
    let n = x.count();
    let m = x.dim();
    if n < 2 {
        return Err(Error::Validation("need at least two columns".into()));
    }
    for col in x.columns() {
        for (i, v) in col.iter().enumerate() {
            if v.abs() > rho.half_width + 1e-12 {
                return Err(Error::OutOfSupport {
                    coord: i,
                    value: *v,
                    half_width: rho.half_width,
                });
            }
        }
    }

    let mut state = PhaseState::initial(x, rho.clone());
    let mut phases = Vec::new();
    let mut alpha_trace = vec![state.alpha];
    let mut ops: u64 = 0;
    let mut retries: u32 = 0;

    for t in 1..=cfg.phase_cap {
        if state.s.len() < cfg.min_set_size {
            break;
        }
        if partition(state.alpha, state.s.len(), m).k <= 1 {
            break; // degenerate partition: no further shrinking possible
        }
        let phase_stream = stream.derive(t as u64);
        let attempt = run_phase(
            state.clone(),
            cfg.gamma,
            phase_stream,
            cfg.record_configuration,
        );
        let (next, diag) = match attempt {
            Ok(ok) => ok,
            Err(Error::PhaseFailure { .. }) => {
                retries += 1;
                run_phase(
                    state,
                    cfg.gamma,
                    phase_stream.derive(0xFA11),
                    cfg.record_configuration,
                )?
            }
            Err(e) => return Err(e),
        };
        // coarse work accounting: every point is touched O(m) times per
        // phase, plus the clean-up REDUCE at O(m^3) per folded vector
        ops += (diag.set_size as u64) * (m as u64) * 3
            + ((diag.n_bad + diag.n_leftover + 1) as u64) * (m as u64).pow(3)
            + (diag.cleanup_draws as u64) * (m as u64);
        alpha_trace.push(next.alpha);
        phases.push(diag);
        state = next;
    }

    // final REDUCE over the survivors plus the carried vector
    let pool: Vec<SignedCombination> = state
        .s
        .into_iter()
        .chain(std::iter::once(state.v))
        .collect();
    let final_set = VectorSet::new(m, pool.iter().map(|p| p.value.clone()).collect())?;
    let sigma_final = reduce(&final_set)?;
    ops += (pool.len() as u64) * (m as u64).pow(3);
    let mut combined = SignedCombination::zero(m);
    for (p, &s) in pool.into_iter().zip(sigma_final.signs()) {
        combined = combined.add_signed(s, p)?;
    }

    // untouched columns default to +1
    let mut signs = vec![1i8; n];
    for (&idx, &s) in &combined.support {
        signs[idx] = s;
    }
    let signing = Signing::new(signs)?;
    let report = discrepancy(x, &signing)?;

    // re-verification: the tracked vector must equal X sigma from scratch
    let scale = report.sup_norm.max(combined.sup_norm()).max(1.0);
    for (a, b) in report.coordinate_sums.iter().zip(&combined.value) {
        if (a - b).abs() > 1e-9 * scale {
            return Err(Error::ImpossibleState(format!(
                "tracked sum {b} disagrees with recomputed {a}"
            )));
        }
    }

    Ok(GkkResult {
        signing,
        report,
        phases,
        alpha_trace,
        ops,
        retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::sample_instance;

    #[test]
    fn phase_count_formula() {
        // ceil(0.41528 ln 1000) = ceil(2.868) = 3
        assert_eq!(default_phase_cap(1000), 3);
        assert_eq!(default_phase_cap(2), 1);
    }

    #[test]
    fn alpha_schedule_examples() {
        let s = alpha_schedule(1.0, 2, &[4096]);
        assert_eq!(s.len(), 2);
        assert!((s[1] - 1.0 / 3.0).abs() < 1e-15);

        // constant sizes with fixed k: geometric decay
        let s = alpha_schedule(2.0, 1, &[16, 16, 16]);
        for (t, v) in s.iter().enumerate() {
            assert!((v - 2.0 * 0.5f64.powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_schedule_final_bound() {
        // sizes_t >= 0.3^{t-1} n over T = ceil(C* ln n) phases forces
        // alpha_{T+1} <= max(1, delta) exp(-C* ln^2 n / (8m))
        let n = 10_000usize;
        let m = 2usize;
        let t_cap = default_phase_cap(n);
        let sizes: Vec<usize> = (0..t_cap)
            .map(|t| ((n as f64) * 0.3f64.powi(t as i32)).ceil() as usize)
            .collect();
        let sched = alpha_schedule(1.0, m, &sizes);
        let ln_n = (n as f64).ln();
        let bound = (-(C_STAR_PHASES) * ln_n * ln_n / (8.0 * m as f64)).exp();
        assert!(
            *sched.last().unwrap() <= bound,
            "{} > {bound}",
            sched.last().unwrap()
        );
    }

    #[test]
    fn c_star_estimate_scalar_case() {
        // m = 1: <nu, u> = +-u, and E|u| = 1/3 for the triangular law
        let c = estimate_c_star(1, RngStream::new(100, 0), 100, 100_000);
        assert!((0.30..0.34).contains(&c), "c* = {c}");
    }

    #[test]
    fn config_enforces_gamma_floor() {
        assert!(GkkConfig::new(2.0, 0.5, 3, 64).is_err()); // 2/c* = 4 > 2
        let cfg = GkkConfig::new(4.0, 0.5, 3, 64).unwrap();
        assert!(cfg.with_gamma(3.0).is_err());
    }

    #[test]
    fn end_to_end_verified_and_shrinking() {
        let rho = BoundedDensity::uniform(1.0).unwrap();
        let n = 1 << 14;
        let m = 2;
        let x = sample_instance(&rho, m, n, RngStream::new(2024, 0)).unwrap();
        let cfg = GkkConfig::for_instance(n, m, RngStream::new(2024, 1)).unwrap();
        let res = gkk_run(&x, &rho, &cfg, RngStream::new(2024, 2)).unwrap();
        // report is self-consistent by construction; cross-check once more
        let again = discrepancy(&x, &res.signing).unwrap();
        assert_eq!(again.sup_norm, res.report.sup_norm);
        // the signing must improve massively on the trivial all-plus signing
        let allplus = discrepancy(&x, &Signing::all_plus(n)).unwrap();
        assert!(res.report.sup_norm < allplus.sup_norm / 100.0);
        // alpha trace strictly decreasing
        for w in res.alpha_trace.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(!res.phases.is_empty());
    }

    #[test]
    fn work_grows_subquadratically() {
        let rho = BoundedDensity::uniform(1.0).unwrap();
        let m = 2;
        let mut ops = Vec::new();
        for (i, n) in [1usize << 12, 1 << 14, 1 << 16].into_iter().enumerate() {
            let x = sample_instance(&rho, m, n, RngStream::new(31, i as u64)).unwrap();
            let cfg = GkkConfig::new(6.0, 0.34, default_phase_cap(n), 64).unwrap();
            let res = gkk_run(&x, &rho, &cfg, RngStream::new(32, i as u64)).unwrap();
            ops.push(res.ops as f64);
        }
        // n grows 16x per step; quadratic work would grow 256x
        assert!(ops[1] / ops[0] < 64.0);
        assert!(ops[2] / ops[1] < 64.0);
    }
}
