//! Numerical engine for the moment formulas: Gaussian interval and bivariate
//! rectangle probabilities, first/second moments of the low-discrepancy
//! solution count, the exponent profile over the overlap fraction, small-ball
//! bounds, and the linear-regime constant.
//!
//! All moment arithmetic happens in natural-log space with log-sum-exp, since
//! the summands span hundreds of orders of magnitude.

use serde::Serialize;

use crate::error::Error;
use crate::Result;

/// Cap on `n` for the second-moment sum (`n + 1` quadratures).
pub const SECOND_MOMENT_CAP: usize = 4000;

// ---------------------------------------------------------------------------
// quadrature
// ---------------------------------------------------------------------------

// 10-point Gauss-Legendre nodes/weights on [0, 1] half-interval form.
const GL10: [(f64, f64); 5] = [
    (0.148_874_338_981_631_2, 0.295_524_224_714_752_9),
    (0.433_395_394_129_247_2, 0.269_266_719_309_996_3),
    (0.679_409_568_299_024_4, 0.219_086_362_515_982),
    (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
    (0.973_906_528_517_171_7, 0.066_671_344_308_688_1),
];

fn gl10<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for &(x, w) in &GL10 {
        acc += w * (f(c + h * x) + f(c - h * x));
    }
    acc * h
}

fn adaptive_1d<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let whole = gl10(f, a, b);
    let c = 0.5 * (a + b);
    let halves = gl10(f, a, c) + gl10(f, c, b);
    if (whole - halves).abs() <= tol || depth >= 40 {
        halves
    } else {
        adaptive_1d(f, a, c, 0.5 * tol, depth + 1) + adaptive_1d(f, c, b, 0.5 * tol, depth + 1)
    }
}

/// Adaptive Gauss-Legendre integration of `f` over `[a, b]` to absolute
/// tolerance `tol`.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    adaptive_1d(&f, a, b, tol.max(1e-15), 0)
}

fn gl10_2d<F: Fn(f64, f64) -> f64>(f: &F, a: (f64, f64), b: (f64, f64)) -> f64 {
    let cx = 0.5 * (a.0 + b.0);
    let hx = 0.5 * (b.0 - a.0);
    let cy = 0.5 * (a.1 + b.1);
    let hy = 0.5 * (b.1 - a.1);
    let mut acc = 0.0;
    for &(x, wx) in &GL10 {
        for &(y, wy) in &GL10 {
            let s = f(cx + hx * x, cy + hy * y)
                + f(cx + hx * x, cy - hy * y)
                + f(cx - hx * x, cy + hy * y)
                + f(cx - hx * x, cy - hy * y);
            acc += wx * wy * s;
        }
    }
    acc * hx * hy
}

fn adaptive_2d<F: Fn(f64, f64) -> f64>(
    f: &F,
    a: (f64, f64),
    b: (f64, f64),
    tol: f64,
    depth: u32,
) -> f64 {
    let whole = gl10_2d(f, a, b);
    let cx = 0.5 * (a.0 + b.0);
    let cy = 0.5 * (a.1 + b.1);
    let quads = gl10_2d(f, a, (cx, cy))
        + gl10_2d(f, (cx, a.1), (b.0, cy))
        + gl10_2d(f, (a.0, cy), (cx, b.1))
        + gl10_2d(f, (cx, cy), b);
    if (whole - quads).abs() <= tol || depth >= 20 {
        quads
    } else {
        let t = 0.25 * tol;
        adaptive_2d(f, a, (cx, cy), t, depth + 1)
            + adaptive_2d(f, (cx, a.1), (b.0, cy), t, depth + 1)
            + adaptive_2d(f, (a.0, cy), (cx, b.1), t, depth + 1)
            + adaptive_2d(f, (cx, cy), b, t, depth + 1)
    }
}

/// Adaptive tensor-product Gauss-Legendre integration over a rectangle.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    a: (f64, f64),
    b: (f64, f64),
    tol: f64,
) -> f64 {
    adaptive_2d(&f, a, b, tol.max(1e-15), 0)
}

// ---------------------------------------------------------------------------
// basic probabilities
// ---------------------------------------------------------------------------

/// `P(|Z| <= z)` for standard Gaussian `Z`, via the error function.
pub fn gauss_interval(z: f64) -> f64 {
    assert!(z >= 0.0, "gauss_interval requires z >= 0");
    libm::erf(z / std::f64::consts::SQRT_2)
}

/// `ln P(|Z| <= z)`, stable for very small `z`; `-inf` at `z = 0`.
pub fn ln_gauss_interval(z: f64) -> f64 {
    assert!(z >= 0.0);
    if z == 0.0 {
        return f64::NEG_INFINITY;
    }
    if z < 1e-3 {
        // P(|Z|<=z) = sqrt(2/pi) z (1 - z^2/6 + z^4/40 - ...)
        let z2 = z * z;
        (2.0 / std::f64::consts::PI).sqrt().ln() + z.ln() + (1.0 - z2 / 6.0 + z2 * z2 / 40.0).ln()
    } else {
        gauss_interval(z).ln()
    }
}

/// Joint density of a `rho`-correlated standard Gaussian pair.
pub fn psi_rho(rho: f64, x: f64, y: f64) -> f64 {
    let d = 1.0 - rho * rho;
    (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * d)).exp()
        / (2.0 * std::f64::consts::PI * d.sqrt())
}

/// `ln P_rho(|X| <= z, |Y| <= z)` for a correlated standard Gaussian pair.
///
/// Computed on the rescaled square `[-1, 1]^2` so that probabilities far
/// below the underflow threshold of direct quadrature keep full relative
/// accuracy in log space. `P_rho = P_{-rho}` (negate one coordinate), so only
/// `|rho|` matters.
pub fn bivariate_rect_log(rho: f64, z: f64) -> Result<f64> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Domain(format!("correlation {rho} outside (-1, 1)")));
    }
    if z < 0.0 {
        return Err(Error::Domain("z must be nonnegative".into()));
    }
    if z == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if z >= 9.0 {
        // both tails are below 1e-18; ln P is 0 to double precision
        return Ok(0.0);
    }
    let r = rho.abs();
    let d = 1.0 - r * r;
    let scale = z * z / (2.0 * d);
    let integrand = move |u: f64, v: f64| (-scale * (u * u - 2.0 * r * u * v + v * v)).exp();
    let tol = (1e-12 * 2.0 * std::f64::consts::PI * d.sqrt() / (z * z)).clamp(1e-14, 1e-9);
    let integral = integrate_2d(integrand, (-1.0, -1.0), (1.0, 1.0), tol);
    Ok(2.0 * z.ln() - (2.0 * std::f64::consts::PI * d.sqrt()).ln() + integral.ln())
}

/// `P_rho(|X| <= z, |Y| <= z)` by adaptive quadrature, absolute error 1e-12.
pub fn bivariate_rect(rho: f64, z: f64) -> Result<f64> {
    Ok(bivariate_rect_log(rho, z)?.exp())
}

/// Closed-form upper bound `2 z^2 / (pi sqrt(1 - rho^2))`.
pub fn bivariate_rect_upper_bound(rho: f64, z: f64) -> f64 {
    2.0 * z * z / (std::f64::consts::PI * (1.0 - rho * rho).sqrt())
}

// ---------------------------------------------------------------------------
// log-space helpers
// ---------------------------------------------------------------------------

pub fn ln_binomial(n: usize, k: usize) -> f64 {
    libm::lgamma((n + 1) as f64) - libm::lgamma((k + 1) as f64) - libm::lgamma((n - k + 1) as f64)
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

// ---------------------------------------------------------------------------
// moments
// ---------------------------------------------------------------------------

/// Discrepancy threshold `gamma sqrt(pi n / 2) 2^{-n/m}`.
pub fn epsilon_threshold(n: usize, m: usize, gamma: f64) -> f64 {
    gamma
        * (std::f64::consts::PI * n as f64 / 2.0).sqrt()
        * (-(n as f64 / m as f64) * std::f64::consts::LN_2).exp()
}

/// Parameters of a solution-count moment computation.
#[derive(Debug, Clone, Copy)]
pub struct MomentQuery {
    pub n: usize,
    pub m: usize,
    pub epsilon: f64,
}

impl MomentQuery {
    /// Threshold expressed through `gamma`: `eps = gamma sqrt(pi n/2) 2^{-n/m}`.
    pub fn with_gamma(n: usize, m: usize, gamma: f64) -> Result<Self> {
        if n == 0 || m == 0 || gamma <= 0.0 {
            return Err(Error::Validation("n, m >= 1 and gamma > 0 required".into()));
        }
        Ok(Self {
            n,
            m,
            epsilon: epsilon_threshold(n, m, gamma),
        })
    }

    pub fn with_epsilon(n: usize, m: usize, epsilon: f64) -> Result<Self> {
        if n == 0 || m == 0 || epsilon < 0.0 {
            return Err(Error::Validation("n, m >= 1 and eps >= 0 required".into()));
        }
        Ok(Self { n, m, epsilon })
    }

    fn z(&self) -> f64 {
        self.epsilon / (self.n as f64).sqrt()
    }
}

/// Natural log of the expected solution count, with an underflow flag when
/// the interval probability degenerates to zero.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentLog {
    pub log: f64,
    pub underflow: bool,
}

/// `ln E[S] = n ln 2 + m ln P(|Z| <= eps / sqrt(n))`.
pub fn first_moment_log(q: &MomentQuery) -> MomentLog {
    let z = q.z();
    let lp = ln_gauss_interval(z);
    MomentLog {
        log: q.n as f64 * std::f64::consts::LN_2 + q.m as f64 * lp,
        underflow: !lp.is_finite(),
    }
}

/// `ln E[S^2] = n ln 2 + lse_k [ ln C(n,k) + m ln P_{rho_k}(...) ]` with
/// `rho_k = 1 - 2k/n`; the `k = 0, n` endpoints reduce to the univariate
/// interval probability.
pub fn second_moment_log(q: &MomentQuery) -> Result<f64> {
    if q.n > SECOND_MOMENT_CAP {
        return Err(Error::SizeExceeded {
            n: q.n,
            cap: SECOND_MOMENT_CAP,
        });
    }
    let z = q.z();
    let n = q.n;
    let m = q.m as f64;
    let mut terms = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let lp = if k == 0 || k == n {
            ln_gauss_interval(z)
        } else {
            let rho = 1.0 - 2.0 * k as f64 / n as f64;
            bivariate_rect_log(rho, z)?
        };
        terms.push(ln_binomial(n, k) + m * lp);
    }
    Ok(n as f64 * std::f64::consts::LN_2 + log_sum_exp(&terms))
}

/// Per-`k` summand profile of the second moment (log scale), exposed for
/// unimodality and truncation diagnostics.
pub fn second_moment_summands(q: &MomentQuery) -> Result<Vec<f64>> {
    if q.n > SECOND_MOMENT_CAP {
        return Err(Error::SizeExceeded {
            n: q.n,
            cap: SECOND_MOMENT_CAP,
        });
    }
    let z = q.z();
    (0..=q.n)
        .map(|k| {
            let lp = if k == 0 || k == q.n {
                ln_gauss_interval(z)
            } else {
                bivariate_rect_log(1.0 - 2.0 * k as f64 / q.n as f64, z)?
            };
            Ok(ln_binomial(q.n, k) + q.m as f64 * lp)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// exponent profile
// ---------------------------------------------------------------------------

/// Binary entropy in nats.
pub fn binary_entropy(alpha: f64) -> f64 {
    if alpha <= 0.0 || alpha >= 1.0 {
        return 0.0;
    }
    -alpha * alpha.ln() - (1.0 - alpha) * (1.0 - alpha).ln()
}

/// The exponent profile over the overlap fraction.
#[derive(Debug, Clone, Serialize)]
pub struct PhiProfile {
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    /// Central second differences `(v[i-1] - 2 v[i] + v[i+1]) / h^2`;
    /// NaN at the two endpoints.
    pub second_diffs: Vec<f64>,
}

impl PhiProfile {
    pub fn argmax_index(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Evaluates `phi(alpha) = n h(alpha) + m ln P_{1-2 alpha}(|X| <= z, |Y| <= z)
/// - (1/2) ln(alpha (1 - alpha))` on a uniform grid over `[0.25, 0.75]`.
pub fn phi_profile(q: &MomentQuery, grid_size: usize) -> Result<PhiProfile> {
    if grid_size < 101 {
        return Err(Error::Validation("grid_size must be >= 101".into()));
    }
    let z = q.z();
    let n = q.n as f64;
    let m = q.m as f64;
    let h = 0.5 / (grid_size - 1) as f64;
    let mut alphas = Vec::with_capacity(grid_size);
    let mut values = Vec::with_capacity(grid_size);
    for i in 0..grid_size {
        let alpha = 0.25 + i as f64 * h;
        let rho = 1.0 - 2.0 * alpha;
        let phi = n * binary_entropy(alpha) + m * bivariate_rect_log(rho, z)?
            - 0.5 * (alpha * (1.0 - alpha)).ln();
        alphas.push(alpha);
        values.push(phi);
    }
    let mut second_diffs = vec![f64::NAN; grid_size];
    for i in 1..grid_size - 1 {
        second_diffs[i] = (values[i - 1] - 2.0 * values[i] + values[i + 1]) / (h * h);
    }
    Ok(PhiProfile {
        alphas,
        values,
        second_diffs,
    })
}

// ---------------------------------------------------------------------------
// small-ball bound suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SmallBallViolation {
    pub inequality: &'static str,
    pub z: f64,
    pub rho: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallBallReport {
    pub points_checked: usize,
    pub violations: Vec<SmallBallViolation>,
}

/// Checks, on the supplied grids, that
/// `sqrt(2/pi) z - z^3 <= P(|Z| <= z) <= sqrt(2/pi) z` for `z in (0, 1)` and
/// `P_rho(|X| <= z, |Y| <= z) <= 2 z^2 / (pi sqrt(1 - rho^2))` for
/// `rho in (-0.5, 0.5)`.
pub fn small_ball_checks(z_grid: &[f64], rho_grid: &[f64]) -> Result<SmallBallReport> {
    let tangent = (2.0 / std::f64::consts::PI).sqrt();
    let mut violations = Vec::new();
    let mut points = 0;
    for &z in z_grid {
        if !(z > 0.0 && z < 1.0) {
            return Err(Error::Domain(format!("z = {z} outside (0, 1)")));
        }
        points += 1;
        let p = gauss_interval(z);
        let upper = tangent * z;
        let lower = tangent * z - z * z * z;
        if p > upper * (1.0 + 1e-12) {
            violations.push(SmallBallViolation {
                inequality: "gauss_upper",
                z,
                rho: None,
                lhs: p,
                rhs: upper,
            });
        }
        if p < lower - 1e-15 {
            violations.push(SmallBallViolation {
                inequality: "gauss_lower",
                z,
                rho: None,
                lhs: p,
                rhs: lower,
            });
        }
        for &rho in rho_grid {
            if !(rho > -0.5 && rho < 0.5) {
                return Err(Error::Domain(format!("rho = {rho} outside (-0.5, 0.5)")));
            }
            points += 1;
            let p2 = bivariate_rect(rho, z)?;
            let bound = bivariate_rect_upper_bound(rho, z);
            if p2 > bound * (1.0 + 1e-10) {
                violations.push(SmallBallViolation {
                    inequality: "bivariate_upper",
                    z,
                    rho: Some(rho),
                    lhs: p2,
                    rhs: bound,
                });
            }
        }
    }
    Ok(SmallBallReport {
        points_checked: points,
        violations,
    })
}

// ---------------------------------------------------------------------------
// linear-regime constant
// ---------------------------------------------------------------------------

/// The unique `x > 0` with `P(|Z| <= x) = 2^{-1/delta}`, solved by bisection
/// in log space to 1e-12 relative precision.
pub fn c_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain("delta must be positive and finite".into()));
    }
    let target = -std::f64::consts::LN_2 / delta; // ln of 2^{-1/delta}
    if target >= 0.0 {
        return Err(Error::Domain("2^{-1/delta} must be < 1".into()));
    }
    let mut lo = 1e-300f64;
    let mut hi = 1.0f64;
    while ln_gauss_interval(hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Domain(
                "target probability too close to 1 to bracket".into(),
            ));
        }
    }
    // bisect on ln x: the map is monotone increasing
    let mut llo = lo.ln();
    let mut lhi = hi.ln();
    for _ in 0..200 {
        let mid = 0.5 * (llo + lhi);
        if ln_gauss_interval(mid.exp()) < target {
            llo = mid;
        } else {
            lhi = mid;
        }
        if (lhi - llo) < 1e-13 {
            break;
        }
    }
    lo = llo.exp();
    hi = lhi.exp();
    Ok(0.5 * (lo + hi))
}
