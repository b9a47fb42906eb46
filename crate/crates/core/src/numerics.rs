//! Special functions, adaptive quadrature and bracketed root finding.
//!
//! Everything here is pure and reentrant. The semi-infinite integrals that
//! appear in the coverage kernels all carry a dominating Gaussian factor
//! `exp(-c d^2)`, so they are mapped onto `(0, 1]` with `u = exp(-c d^2)` and
//! handed to a global adaptive Gauss-Kronrod rule.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Tolerances for the adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_subdivisions: 500,
        }
    }
}

impl QuadratureConfig {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize) -> Result<Self> {
        let cfg = Self {
            abs_tol,
            rel_tol,
            max_subdivisions,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) || self.max_subdivisions < 1 {
            return Err(Error::Domain(format!(
                "invalid quadrature config: abs_tol={}, rel_tol={}, max_subdivisions={}",
                self.abs_tol, self.rel_tol, self.max_subdivisions
            )));
        }
        Ok(())
    }

    /// Tolerances used internally by the Beta-function routines.
    pub(crate) fn tight() -> Self {
        Self {
            abs_tol: 1e-15,
            rel_tol: 1e-14,
            max_subdivisions: 2000,
        }
    }
}

/// Default tolerance for [`bisect_monotone`] callers.
pub const BISECTION_TOL: f64 = 1e-12;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let s = (std::f64::consts::PI * x).sin().abs();
        return (std::f64::consts::PI / s).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Beta function `B(x, y) = Γ(x)Γ(y)/Γ(x+y)`.
pub fn beta(x: f64, y: f64) -> Result<f64> {
    if !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(Error::Domain(format!("beta({x}, {y}) requires x > 0, y > 0")));
    }
    Ok((ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)).exp())
}

/// Complementary incomplete Beta function `∫_z^1 u^(x-1) (1-u)^(y-1) du`.
///
/// The interval is split at `1/2`. The lower piece uses `u = w^(1/x)` and the
/// upper piece `u = 1 - v^(1/y)`, which remove the endpoint singularities at
/// `u = 0` and `u = 1` so that plain Gauss-Kronrod converges quickly.
pub fn comp_inc_beta(x: f64, y: f64, z: f64) -> Result<f64> {
    if !(x > 0.0) || !(y > 0.0) {
        return Err(Error::Domain(format!(
            "comp_inc_beta requires x > 0 and y > 0, got x={x}, y={y}"
        )));
    }
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::Domain(format!("comp_inc_beta requires z in [0,1], got {z}")));
    }
    if z == 1.0 {
        return Ok(0.0);
    }
    let cfg = QuadratureConfig::tight();
    let upper = |from: f64| -> Result<f64> {
        // ∫_from^1 with u = 1 - v^(1/y)
        let vmax = (1.0 - from).powf(y);
        let val = integrate_finite(
            |v| (1.0 - v.powf(1.0 / y)).powf(x - 1.0),
            0.0,
            vmax,
            &cfg,
        )?;
        Ok(val / y)
    };
    if z >= 0.5 {
        return upper(z);
    }
    let lower = integrate_finite(
        |w| (1.0 - w.powf(1.0 / x)).powf(y - 1.0),
        z.powf(x),
        0.5f64.powf(x),
        &cfg,
    )? / x;
    Ok(lower + upper(0.5)?)
}

// Gauss-Kronrod 7/15 nodes and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Global adaptive Gauss-Kronrod (7/15) quadrature over a finite interval.
pub fn integrate_finite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (value, error) = gk15(&f, a, b);
    let mut segs = vec![Segment { a, b, value, error }];
    let mut total = value;
    let mut total_err = error;
    let mut splits = 0usize;
    loop {
        if !total.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        let tol = cfg.abs_tol.max(cfg.rel_tol * total.abs());
        if total_err <= tol {
            return Ok(total);
        }
        if splits >= cfg.max_subdivisions {
            return Err(Error::Convergence {
                estimate: total_err,
                subdivisions: splits,
            });
        }
        let (idx, worst) = segs
            .iter()
            .copied()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty segment list");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // cannot refine further in double precision
            return Err(Error::Convergence {
                estimate: total_err,
                subdivisions: splits,
            });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        segs[idx] = Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        };
        segs.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        splits += 1;
        // recompute sums to avoid drift from repeated add/subtract
        total = segs.iter().map(|s| s.value).sum();
        total_err = segs.iter().map(|s| s.error).sum();
    }
}

/// `∫_0^∞ f(d) dd` for integrands dominated by `exp(-rate·d²)`.
///
/// The map `u = exp(-rate·d²)` turns the integral into
/// `∫_0^1 f(d(u)) / (2·rate·d(u)·u) du`. When `f` is exactly
/// `d·exp(-rate·d²)·g(d)` the transformed integrand is `g/(2·rate)`, which is
/// bounded on `(0,1]`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    rate: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!(
            "semi-infinite quadrature needs a positive Gaussian rate, got {rate}"
        )));
    }
    cfg.validate()?;
    let g = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let d = (-u.ln() / rate).sqrt();
        if d == 0.0 {
            // u == 1 in floating point; take the limit d -> 0 with a tiny step
            let d = f64::EPSILON.sqrt();
            return f(d) / (2.0 * rate * d);
        }
        let fd = f(d);
        if fd == 0.0 {
            0.0
        } else {
            fd / (2.0 * rate * d * u)
        }
    };
    integrate_finite(g, 0.0, 1.0, cfg)
}

/// Solves `g(ν) = target` for a nondecreasing `g` by bisection.
///
/// When `g` is flat at the target level, the returned point is the right end of
/// the level set, i.e. the supremum of `{ν : g(ν) ≤ target}` (to within `tol`).
pub fn bisect_monotone<G: Fn(f64) -> f64>(
    g: G,
    target: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    if !(lo <= hi) || !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "bisection needs lo <= hi and tol > 0 (lo={lo}, hi={hi}, tol={tol})"
        )));
    }
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(g_lo <= target && target <= g_hi) {
        return Err(Error::Bracket { target, g_lo, g_hi });
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
