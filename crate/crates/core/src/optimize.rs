//! Caching-design optimization: marginal optimization over the capped
//! simplex, the structured candidate search, LP refinement of the placement
//! and an exhaustive oracle for small catalogs.

use crate::analysis::{
    macro_per_file, pico_load_pmf, pico_per_file, poisson_binomial_pmf, q_asymptotic, q_general_with, ClosedForm,
    Kernels,
};
use crate::combinatorics::{
    binomial, enumerate_combinations_capped, marginal_system, normalize, CombinationIndex, Placement,
    DEFAULT_COMBINATION_CAP,
};
use crate::error::{Error, Result};
use crate::lp;
use crate::model::{backhaul_set, ContentParams, Design, Marginals, PhyParams};
use crate::numerics::{bisect_monotone, BISECTION_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

/// Settings for the marginal optimizer and the end-to-end search.
#[derive(Debug, Clone, Serialize)]
pub struct OptConfig {
    /// Scale of the first trial step, relative to the inverse curvature at
    /// the starting point.
    pub step_c: f64,
    pub max_iters: usize,
    /// Stop when successive iterates differ by less than this (∞-norm).
    pub conv_tol: f64,
    pub lp_tol: f64,
    /// Number of intervals of the gradient lookup table on `[0, 1]`.
    pub grad_grid: usize,
    /// Refine the gradient-method output with exact gradients.
    pub exact_polish: bool,
    /// Random restarts used when the pico kernel is not concave.
    pub restarts: usize,
    pub seed: u64,
    /// Score candidates with the interference-limited objective instead of
    /// the general-region one.
    pub asymptotic_scoring: bool,
    pub combination_cap: u128,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            step_c: 1.0,
            max_iters: 100_000,
            conv_tol: 1e-10,
            lp_tol: 1e-9,
            grad_grid: 1000,
            exact_polish: true,
            restarts: 5,
            seed: 0x5eed,
            asymptotic_scoring: false,
            combination_cap: DEFAULT_COMBINATION_CAP,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_c > 0.0) || !(self.conv_tol > 0.0) || !(self.lp_tol > 0.0) || self.grad_grid < 4 {
            return Err(Error::Domain(format!("invalid optimizer settings: {self:?}")));
        }
        Ok(())
    }
}

/// Euclidean projection onto `{t : 0 ≤ t_n ≤ 1, Σ t_n = k}`.
///
/// The solution is `t_n = min{[x_n - ν]⁺, 1}` with the water level `ν` found
/// by bisection.
pub fn project_capped_simplex(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    assert!(k <= n, "cannot place {k} units on {n} coordinates");
    if k == n {
        return vec![1.0; n];
    }
    if k == 0 {
        return vec![0.0; n];
    }
    let level = |nu: f64| -> f64 { x.iter().map(|&v| (v - nu).clamp(0.0, 1.0)).sum() };
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = BISECTION_TOL * (1.0 + hi.abs().max(lo.abs()));
    let nu = bisect_monotone(|nu| -level(nu), -(k as f64), lo, hi, tol).expect("bracket holds by construction");
    let mut t: Vec<f64> = x.iter().map(|&v| (v - nu).clamp(0.0, 1.0)).collect();
    // spread the residual of the bisection over the free coordinates
    let free: Vec<usize> = (0..n).filter(|&i| t[i] > 0.0 && t[i] < 1.0).collect();
    if !free.is_empty() {
        let excess = (t.iter().sum::<f64>() - k as f64) / free.len() as f64;
        for i in free {
            t[i] = (t[i] - excess).clamp(0.0, 1.0);
        }
    }
    t
}

fn lagrange4(table: &[f64], x: f64) -> f64 {
    let g = table.len() - 1;
    let pos = x.clamp(0.0, 1.0) * g as f64;
    let i = (pos.floor() as usize).min(g - 1);
    let start = i.saturating_sub(1).min(g - 3);
    let xs = [start as f64, start as f64 + 1.0, start as f64 + 2.0, start as f64 + 3.0];
    let mut s = 0.0;
    for j in 0..4 {
        let mut w = 1.0;
        for m in 0..4 {
            if m != j {
                w *= (pos - xs[m]) / (xs[j] - xs[m]);
            }
        }
        s += w * table[start + j];
    }
    s
}

/// Interference-limited pico kernel `f(x) = f_{K2c,∞}(x)` with lookup tables
/// of its value and derivative.
#[derive(Debug, Clone)]
pub struct PicoObjective {
    kern: Kernels,
    closed: Option<ClosedForm>,
    k: usize,
    values: Vec<f64>,
    grads: Vec<f64>,
    concave: bool,
}

impl PicoObjective {
    pub fn new(phy: &PhyParams, k: usize, grid: usize) -> Result<Self> {
        let phy = phy.noiseless();
        let kern = Kernels::new(&phy)?;
        let closed = ClosedForm::new(&phy).ok();
        let mut values = Vec::with_capacity(grid + 1);
        let mut grads = Vec::with_capacity(grid + 1);
        for i in 0..=grid {
            let x = i as f64 / grid as f64;
            values.push(kern.f2(k, x)?);
            grads.push(kern.f2_grad(k, x)?);
        }
        let concave = grads.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs());
        Ok(Self {
            kern,
            closed,
            k,
            values,
            grads,
            concave,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_concave(&self) -> bool {
        self.concave
    }

    pub fn value(&self, x: f64) -> f64 {
        lagrange4(&self.values, x)
    }

    pub fn grad(&self, x: f64) -> f64 {
        lagrange4(&self.grads, x)
    }

    pub fn value_exact(&self, x: f64) -> Result<f64> {
        self.kern.f2(self.k, x.clamp(0.0, 1.0))
    }

    pub fn grad_exact(&self, x: f64) -> Result<f64> {
        self.kern.f2_grad(self.k, x.clamp(0.0, 1.0))
    }

    fn curvature_at(&self, x: f64) -> f64 {
        let h = 1e-3;
        let (a, b) = ((x - h).max(0.0), (x + h).min(1.0));
        ((self.grad(b) - self.grad(a)) / (b - a)).abs()
    }

    /// Solves `f'(x) = r` on `[0,1]`; `f'` is assumed nonincreasing.
    fn invert_grad(&self, r: f64) -> Result<f64> {
        if let Some(cf) = &self.closed {
            let (t1, t2) = (cf.theta1(self.k)?, cf.theta2(self.k)?);
            return Ok((((t2 / r).sqrt() - t2) / t1).clamp(0.0, 1.0));
        }
        let g = |x: f64| self.grad_exact(x);
        if g(1.0)? >= r {
            return Ok(1.0);
        }
        if g(0.0)? <= r {
            return Ok(0.0);
        }
        // bracket with the table, then bisect on exact values
        let n = self.grads.len() - 1;
        let i = self.grads.iter().position(|&v| v < r).unwrap_or(n);
        let mut lo = (i.saturating_sub(2)) as f64 / n as f64;
        let mut hi = ((i + 1).min(n)) as f64 / n as f64;
        if g(lo)? < r {
            lo = 0.0;
        }
        if g(hi)? > r {
            hi = 1.0;
        }
        while hi - lo > 1e-15 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid)? > r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Outcome of the gradient-projection marginal optimizer.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalOptimum {
    pub marginals: Marginals,
    /// Iterate reached by the projected-gradient loop before refinement.
    pub raw: Marginals,
    pub iterations: usize,
    pub converged: bool,
    pub polished: bool,
    pub starts: usize,
    /// Interference-limited pico objective `Σ a_n f(T_n)`.
    pub objective: f64,
}

fn weights(content: &ContentParams, f2c: &[usize]) -> Vec<f64> {
    f2c.iter().map(|&n| content.pop(n)).collect()
}

fn table_objective(obj: &PicoObjective, a: &[f64], t: &[f64]) -> f64 {
    a.iter().zip(t).map(|(a, &x)| a * obj.value(x)).sum()
}

fn exact_objective(obj: &PicoObjective, a: &[f64], t: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (a, &x) in a.iter().zip(t) {
        s += a * obj.value_exact(x)?;
    }
    Ok(s)
}

/// Projected-gradient ascent from `start`, with Barzilai–Borwein trial steps
/// and Armijo backtracking along the projection arc.
fn gradient_projection(
    obj: &PicoObjective,
    a: &[f64],
    k: usize,
    start: Vec<f64>,
    cfg: &OptConfig,
) -> (Vec<f64>, usize, bool) {
    let mut t = start;
    let grad = |t: &[f64]| -> Vec<f64> { a.iter().zip(t).map(|(a, &x)| a * obj.grad(x)).collect() };
    let mut g = grad(&t);
    let curv = a
        .iter()
        .zip(&t)
        .map(|(a, &x)| a * obj.curvature_at(x))
        .fold(0.0, f64::max)
        .max(1e-12);
    let mut step = cfg.step_c / curv;
    let mut value = table_objective(obj, a, &t);
    for it in 1..=cfg.max_iters {
        let mut s = step;
        let (next, next_value) = loop {
            let trial: Vec<f64> = t.iter().zip(&g).map(|(x, d)| x + s * d).collect();
            let p = project_capped_simplex(&trial, k);
            let v = table_objective(obj, a, &p);
            let gain: f64 = g.iter().zip(p.iter().zip(&t)).map(|(d, (y, x))| d * (y - x)).sum();
            if v >= value + 1e-4 * gain || s < 1e-14 {
                break (p, v);
            }
            s *= 0.5;
        };
        let dt: Vec<f64> = next.iter().zip(&t).map(|(y, x)| y - x).collect();
        let diff = dt.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let g_next = grad(&next);
        let dg: Vec<f64> = g_next.iter().zip(&g).map(|(y, x)| y - x).collect();
        t = next;
        g = g_next;
        value = next_value;
        if diff < cfg.conv_tol {
            return (t, it, true);
        }
        let ss: f64 = dt.iter().map(|d| d * d).sum();
        let sy: f64 = -dt.iter().zip(&dg).map(|(d, y)| d * y).sum::<f64>();
        step = if sy > 0.0 { ss / sy } else { 2.0 * s };
        step = step.clamp(1e-10, 1e10);
    }
    (t, cfg.max_iters, false)
}

/// Water level `ν` and marginals `t_n = (f')⁻¹(ν/a_n)` clipped to `[0,1]`.
fn water_level(a: &[f64], k: usize, lo: f64, hi: f64, inv: &dyn Fn(usize, f64) -> Result<f64>) -> Result<(Vec<f64>, f64)> {
    let err = Mutex::new(None);
    let total = |nu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            match inv(i, nu) {
                Ok(v) => s += v,
                Err(e) => {
                    *err.lock().unwrap() = Some(e);
                }
            }
        }
        -s
    };
    let tol = 1e-15 * hi.max(1e-300);
    let nu = bisect_monotone(&total, -(k as f64), lo, hi, tol)?;
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }
    let mut t = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        t.push(inv(i, nu)?);
    }
    Ok((t, nu))
}

fn exact_polish(obj: &PicoObjective, a: &[f64], k: usize) -> Result<Vec<f64>> {
    let g0 = obj.grad_exact(0.0)?;
    let g1 = obj.grad_exact(1.0)?;
    let lo = a.iter().map(|a| a * g1).fold(f64::INFINITY, f64::min) * (1.0 - 1e-12);
    let hi = a.iter().map(|a| a * g0).fold(0.0, f64::max) * (1.0 + 1e-12);
    let inv = |i: usize, nu: f64| -> Result<f64> {
        let r = nu / a[i];
        if g1 >= r {
            Ok(1.0)
        } else if g0 <= r {
            Ok(0.0)
        } else {
            obj.invert_grad(r)
        }
    };
    let (mut t, _) = water_level(a, k, lo, hi, &inv)?;
    let excess = t.iter().sum::<f64>() - k as f64;
    let free: Vec<usize> = (0..t.len()).filter(|&i| t[i] > 0.0 && t[i] < 1.0).collect();
    if !free.is_empty() {
        for &i in &free {
            t[i] = (t[i] - excess / free.len() as f64).clamp(0.0, 1.0);
        }
    }
    Ok(t)
}

/// Maximizes `Σ_{n∈F2c} a_n f_{K2c,∞}(T_n)` over the capped simplex by
/// gradient projection, starting from the uniform point `T_n = K2c/|F2c|`.
pub fn optimize_marginals_gradient(
    phy: &PhyParams,
    content: &ContentParams,
    f2c: &[usize],
    cfg: &OptConfig,
) -> Result<MarginalOptimum> {
    let obj = PicoObjective::new(phy, content.k2c, cfg.grad_grid)?;
    optimize_marginals_with(&obj, content, f2c, cfg)
}

pub fn optimize_marginals_with(
    obj: &PicoObjective,
    content: &ContentParams,
    f2c: &[usize],
    cfg: &OptConfig,
) -> Result<MarginalOptimum> {
    cfg.validate()?;
    let k = content.k2c;
    if f2c.len() < k {
        return Err(Error::Size(format!("|F2c| = {} is below K2c = {k}", f2c.len())));
    }
    let a = weights(content, f2c);
    let f = f2c.len();
    let uniform = vec![k as f64 / f as f64; f];
    let mut starts = vec![uniform];
    if !obj.is_concave() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.restarts {
            let raw: Vec<f64> = (0..f).map(|_| rng.random::<f64>()).collect();
            starts.push(project_capped_simplex(&raw, k));
        }
    }
    let mut best: Option<(f64, Vec<f64>, usize, bool)> = None;
    let mut total_iters = 0;
    for s in starts.iter().cloned() {
        let (t, it, conv) = gradient_projection(obj, &a, k, s, cfg);
        total_iters += it;
        let v = exact_objective(obj, &a, &t)?;
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, t, it, conv));
        }
    }
    let (mut value, raw, _, converged) = best.expect("at least one start");
    if !converged {
        log::warn!("gradient projection hit max_iters = {} without converging", cfg.max_iters);
    }
    let mut t = raw.clone();
    let mut polished = false;
    if cfg.exact_polish && obj.is_concave() {
        t = exact_polish(obj, &a, k)?;
        value = exact_objective(obj, &a, &t)?;
        polished = true;
    }
    Ok(MarginalOptimum {
        marginals: Marginals::new(f2c.to_vec(), t)?,
        raw: Marginals::new(f2c.to_vec(), raw)?,
        iterations: total_iters,
        converged,
        polished,
        starts: starts.len(),
        objective: value,
    })
}

/// Closed-form water-filling solution for equal path-loss exponents.
#[derive(Debug, Clone, Serialize)]
pub struct WaterFill {
    pub marginals: Marginals,
    pub nu: f64,
}

pub fn waterfill_closed_form(phy: &PhyParams, content: &ContentParams, f2c: &[usize]) -> Result<WaterFill> {
    let cf = ClosedForm::new(phy)?;
    let k = content.k2c;
    if f2c.len() < k {
        return Err(Error::Size(format!("|F2c| = {} is below K2c = {k}", f2c.len())));
    }
    let (t1, t2) = (cf.theta1(k)?, cf.theta2(k)?);
    let a = weights(content, f2c);
    let at = |i: usize, nu: f64| -> Result<f64> { Ok((((a[i] * t2 / nu).sqrt() - t2) / t1).clamp(0.0, 1.0)) };
    if f2c.len() == k {
        let nu = a.iter().map(|a| a * t2 / (t2 + t1).powi(2)).fold(f64::INFINITY, f64::min);
        return Ok(WaterFill {
            marginals: Marginals::new(f2c.to_vec(), vec![1.0; k])?,
            nu,
        });
    }
    let lo = a.iter().map(|a| a * t2 / (t2 + t1).powi(2)).fold(f64::INFINITY, f64::min) * (1.0 - 1e-12);
    let hi = a.iter().map(|a| a / t2).fold(0.0, f64::max) * (1.0 + 1e-12);
    let (t, nu) = water_level(&a, k, lo, hi, &at)?;
    Ok(WaterFill {
        marginals: Marginals::new(f2c.to_vec(), t)?,
        nu,
    })
}

/// Worst violation of the first-order optimality conditions of the marginal
/// problem, given the per-file gradients `a_n f'(T_n)` and the bound
/// gradients `a_n f'(0)`, `a_n f'(1)`.
#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    pub nu: f64,
    /// Largest `|a_n f'(T_n) − ν|` over interior coordinates.
    pub interior_spread: f64,
    /// Largest amount by which a bound coordinate violates its inequality.
    pub bound_violation: f64,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.interior_spread.max(self.bound_violation)
    }
}

pub fn kkt_report(
    a: &[f64],
    t: &[f64],
    grad: &dyn Fn(f64) -> Result<f64>,
    bound_tol: f64,
) -> Result<KktReport> {
    let mut interior = Vec::new();
    let mut at_zero = Vec::new();
    let mut at_one = Vec::new();
    for (i, &x) in t.iter().enumerate() {
        if x <= bound_tol {
            at_zero.push(a[i] * grad(0.0)?);
        } else if x >= 1.0 - bound_tol {
            at_one.push(a[i] * grad(1.0)?);
        } else {
            interior.push(a[i] * grad(x)?);
        }
    }
    let max_zero = at_zero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_one = at_one.iter().copied().fold(f64::INFINITY, f64::min);
    let nu = if interior.is_empty() {
        if max_zero.is_finite() && min_one.is_finite() {
            0.5 * (max_zero + min_one)
        } else if max_zero.is_finite() {
            max_zero
        } else {
            min_one
        }
    } else {
        let lo = interior.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = interior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    let interior_spread = interior.iter().map(|g| (g - nu).abs()).fold(0.0, f64::max);
    let mut bound_violation: f64 = 0.0;
    if max_zero.is_finite() {
        bound_violation = bound_violation.max(max_zero - nu);
    }
    if min_one.is_finite() {
        bound_violation = bound_violation.max(nu - min_one);
    }
    Ok(KktReport {
        nu,
        interior_spread,
        bound_violation: bound_violation.max(0.0),
    })
}

/// True when `t` is nonincreasing in file index up to `tol`.
pub fn is_popularity_monotone(t: &Marginals, tol: f64) -> bool {
    t.values.windows(2).all(|w| w[1] <= w[0] + tol)
}

/// A structured choice of tier sets: macros cache a consecutive block
/// starting at `n1c`, the next block is fetched over the backhaul and the
/// remaining files go to the pico tier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Candidate {
    pub n1c: usize,
    #[serde(rename = "F1c")]
    pub f1c: Vec<usize>,
    #[serde(rename = "F2c")]
    pub f2c: Vec<usize>,
    #[serde(rename = "F1b")]
    pub f1b: Vec<usize>,
}

/// All structured candidates, ordered by pico-set size then `n1c`.
pub fn enumerate_structured_candidates(content: &ContentParams) -> Vec<Candidate> {
    let (n, k1c, k2c, k1b) = (content.n, content.k1c, content.k2c, content.k1b);
    let lb = k2c.max(n.saturating_sub(k1c + k1b));
    let ub = n - k1c;
    let mut out = Vec::new();
    for s in lb..=ub {
        let fb = n - k1c - s;
        for n1c in 1..=s + 1 {
            let f1c: Vec<usize> = (n1c..n1c + k1c).collect();
            let f1b: Vec<usize> = (n1c + k1c..n1c + k1c + fb).collect();
            let f2c: Vec<usize> = (1..n1c).chain(n1c + k1c + fb..=n).collect();
            out.push(Candidate { n1c, f1c, f2c, f1b });
        }
    }
    out
}

/// Which popularity-ordering condition fired while pruning candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRule {
    /// Macros always beat a fully cached pico file: the most popular file is
    /// cached at macros, keep only `n1c = 1`.
    MacroFirst,
    /// Picos beat unloaded macros: the most popular file is cached at picos,
    /// drop `n1c = 1`.
    PicoFirst,
    None,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneOutcome {
    pub candidates: Vec<Candidate>,
    pub rule: PruneRule,
    pub before: usize,
}

/// Removes candidates that cannot be optimal given how the macro kernel at
/// full and empty backhaul load compares with the pico kernel.
pub fn prune_candidates(phy: &PhyParams, content: &ContentParams, candidates: Vec<Candidate>) -> Result<PruneOutcome> {
    let kern = Kernels::new(&phy.noiseless())?;
    let (n, k1c, k2c, k1b) = (content.n, content.k1c, content.k2c, content.k1b);
    let macro_full = kern.f1(k1c + k1b)?;
    let pico_full = kern.f2(k2c, 1.0)?;
    let macro_light = kern.f1(k1c)?;
    let pico_spread = kern.f2(k2c, (k2c as f64 / (n - k1c) as f64).min(1.0))?;
    let before = candidates.len();
    let (rule, candidates) = if macro_full > pico_full {
        (PruneRule::MacroFirst, candidates.into_iter().filter(|c| c.n1c == 1).collect())
    } else if macro_light < pico_spread {
        (PruneRule::PicoFirst, candidates.into_iter().filter(|c| c.n1c != 1).collect())
    } else {
        (PruneRule::None, candidates)
    };
    Ok(PruneOutcome {
        candidates,
        rule,
        before,
    })
}

/// Result of the placement LP for fixed marginals.
#[derive(Debug, Clone, Serialize)]
pub struct LpRefinement {
    /// Dense placement over the combination index.
    pub p: Vec<f64>,
    /// General-region pico success `q2` at `p`.
    pub q2: f64,
    /// Combinations fixed to zero because they contain a never-cached file
    /// or miss an always-cached one.
    pub fixed_zero: usize,
    pub pivots: usize,
}

/// Rounds marginals within 1e-12 of 0 or 1 onto the bound.
pub fn snap_marginals(t: &Marginals) -> Marginals {
    let values = t
        .values
        .iter()
        .map(|&v| {
            if v < 1e-12 {
                0.0
            } else if v > 1.0 - 1e-12 {
                1.0
            } else {
                v
            }
        })
        .collect();
    Marginals {
        files: t.files.clone(),
        values,
    }
}

/// Per-combination coefficient of `q2` when the marginals are held fixed.
fn q2_coefficients(kern: &Kernels, content: &ContentParams, idx: &CombinationIndex, t: &Marginals, skip: &[bool]) -> Result<Vec<f64>> {
    let phy = kern.phy();
    let act: Vec<f64> = t
        .iter()
        .map(|(m, tm)| crate::analysis::activity_prob_pico(content.pop(m), phy.lambda_u, tm, phy.lambda2))
        .collect();
    let mut coef = vec![0.0; idx.len()];
    for (i, combo) in idx.combos().enumerate() {
        if skip[i] {
            continue;
        }
        let mut c = 0.0;
        for &n in combo {
            let j = idx.file_position(n).expect("combination file in index");
            let tn = t.values[j];
            if tn <= 0.0 {
                continue;
            }
            let others: Vec<f64> = combo
                .iter()
                .filter(|&&m| m != n)
                .map(|&m| act[idx.file_position(m).unwrap()])
                .collect();
            let mut s = 0.0;
            for (kk, g) in poisson_binomial_pmf(&others).into_iter().enumerate() {
                if g > 0.0 {
                    s += g * kern.f2(kk + 1, tn)?;
                }
            }
            c += content.pop(n) / tn * s;
        }
        coef[i] = c;
    }
    Ok(coef)
}

/// Maximizes the general-region pico success over placements whose marginals
/// equal `t_star`.
pub fn lp_refine(
    kern: &Kernels,
    content: &ContentParams,
    idx: &CombinationIndex,
    t_star: &Marginals,
    tol: f64,
) -> Result<LpRefinement> {
    let t = snap_marginals(t_star);
    let skip: Vec<bool> = idx
        .combos()
        .map(|combo| {
            let has_zero = combo.iter().any(|&n| t.get(n) == Some(0.0));
            let ones_missing = t.iter().any(|(n, v)| v == 1.0 && !combo.contains(&n));
            has_zero || ones_missing
        })
        .collect();
    let fixed_zero = skip.iter().filter(|&&s| s).count();
    let keep: Vec<usize> = (0..idx.len()).filter(|&i| !skip[i]).collect();
    if keep.is_empty() {
        return Err(Error::Infeasible("every combination was excluded by the fixed marginals".into()));
    }
    let coef = q2_coefficients(kern, content, idx, &t, &skip)?;
    let (a_full, b) = marginal_system(idx, &t)?;
    let a: Vec<Vec<f64>> = a_full.iter().map(|row| keep.iter().map(|&i| row[i]).collect()).collect();
    let c: Vec<f64> = keep.iter().map(|&i| coef[i]).collect();
    let sol = lp::maximize(&c, &a, &b, tol)?;
    let mut p = vec![0.0; idx.len()];
    for (j, &i) in keep.iter().enumerate() {
        p[i] = sol.x[j];
    }
    let p = normalize(p);
    let q2 = p.iter().zip(&coef).map(|(p, c)| p * c).sum();
    Ok(LpRefinement {
        p,
        q2,
        fixed_zero,
        pivots: sol.pivots,
    })
}

/// General-region pico success `q2` of a dense placement with marginals `t`.
pub fn q2_of_placement(kern: &Kernels, content: &ContentParams, idx: &CombinationIndex, p: &[f64]) -> Result<f64> {
    let pl = Placement::from_index(idx, p)?;
    let t = pl.marginals(idx.files());
    let per = pico_per_file(kern, content, &pl, &t)?;
    Ok(per.iter().map(|(&n, &s)| content.pop(n) * s).sum())
}

/// A random placement with marginals `t`: a Dirichlet mixture of LP vertices
/// obtained from random objectives.
pub fn random_marginal_matching_p<R: Rng>(idx: &CombinationIndex, t: &Marginals, vertices: usize, rng: &mut R) -> Result<Vec<f64>> {
    let (a, b) = marginal_system(idx, t)?;
    let mut mix = vec![0.0; idx.len()];
    let mut wsum = 0.0;
    for _ in 0..vertices.max(1) {
        let c: Vec<f64> = (0..idx.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let sol = lp::maximize(&c, &a, &b, 1e-10)?;
        let w = -rng.random::<f64>().max(1e-300).ln();
        for (m, x) in mix.iter_mut().zip(&sol.x) {
            *m += w * x;
        }
        wsum += w;
    }
    for m in mix.iter_mut() {
        *m /= wsum;
    }
    Ok(normalize(mix))
}

/// Per-candidate evaluation record.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub n1c: usize,
    pub f2c_size: usize,
    pub q_general: f64,
    pub q_asymptotic: f64,
    pub lp_pivots: Option<usize>,
    pub lp_skipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub candidates_total: usize,
    pub candidates_after_prune: usize,
    pub prune_rule: PruneRule,
    pub marginal_method: &'static str,
    pub gradient_iterations: usize,
    pub lp_status: String,
    pub failures: Vec<String>,
    pub scores: Vec<CandidateScore>,
}

/// The selected design.
#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    #[serde(rename = "F1c")]
    pub f1c: Vec<usize>,
    #[serde(rename = "F2c")]
    pub f2c: Vec<usize>,
    #[serde(rename = "F1b")]
    pub f1b: Vec<usize>,
    #[serde(rename = "T")]
    pub marginals: Marginals,
    pub p: Placement,
    pub q_general: f64,
    pub q_asymptotic: f64,
    pub diagnostics: Diagnostics,
}

impl Solution {
    pub fn design(&self, content: &ContentParams) -> Result<Design> {
        Design::new(content, self.f1c.clone(), self.f2c.clone(), self.p.clone())
    }
}

/// Interference-limited optimal marginals for a pico set, using the closed
/// form when the exponents agree and the gradient method otherwise.
fn marginal_optimum(
    phy: &PhyParams,
    obj: Option<&PicoObjective>,
    content: &ContentParams,
    f2c: &[usize],
    cfg: &OptConfig,
) -> Result<(Marginals, usize)> {
    if phy.equal_exponents() {
        Ok((waterfill_closed_form(phy, content, f2c)?.marginals, 0))
    } else {
        let obj = obj.expect("objective built for unequal exponents");
        let r = optimize_marginals_with(obj, content, f2c, cfg)?;
        Ok((r.marginals, r.iterations))
    }
}

struct Evaluated {
    cand: Candidate,
    t: Marginals,
    placement: Placement,
    q_general: f64,
    q_asym: f64,
    pivots: Option<usize>,
    lp_skipped: bool,
    iterations: usize,
}

/// Structured search with LP refinement: returns the best candidate under
/// the configured scoring rule.
pub fn near_optimal(phy: &PhyParams, content: &ContentParams, cfg: &OptConfig) -> Result<Solution> {
    phy.check_kernel_domain()?;
    content.validate()?;
    cfg.validate()?;
    let all = enumerate_structured_candidates(content);
    let pruned = prune_candidates(phy, content, all)?;
    let kern = Kernels::new(phy)?;
    let asym_kern = Kernels::new(&phy.noiseless())?;
    let obj = if phy.equal_exponents() {
        None
    } else {
        Some(PicoObjective::new(phy, content.k2c, cfg.grad_grid)?)
    };
    let t_cache: Mutex<HashMap<Vec<usize>, (Marginals, usize)>> = Mutex::new(HashMap::new());

    let evaluate = |cand: &Candidate| -> Result<Evaluated> {
        let cached = t_cache.lock().unwrap().get(&cand.f2c).cloned();
        let (t, iterations) = match cached {
            Some(v) => v,
            None => {
                let v = marginal_optimum(phy, obj.as_ref(), content, &cand.f2c, cfg)?;
                t_cache.lock().unwrap().insert(cand.f2c.clone(), v.clone());
                v
            }
        };
        let macro_part = macro_per_file(&kern, content, &cand.f1c, &cand.f1b)?;
        let q1: f64 = macro_part.iter().map(|(&n, &s)| content.pop(n) * s).sum();
        let (placement, q2, pivots, lp_skipped) =
            match enumerate_combinations_capped(&cand.f2c, content.k2c, cfg.combination_cap) {
                Ok(idx) => {
                    let r = lp_refine(&kern, content, &idx, &t, cfg.lp_tol)?;
                    (Placement::from_index(&idx, &r.p)?, r.q2, Some(r.pivots), false)
                }
                Err(Error::TooManyCombinations { .. }) => {
                    let pl = Placement::systematic(&snap_marginals(&t), content.k2c)?;
                    let tt = pl.marginals(&cand.f2c);
                    let per = pico_per_file(&kern, content, &pl, &tt)?;
                    let q2 = per.iter().map(|(&n, &s)| content.pop(n) * s).sum();
                    (pl, q2, None, true)
                }
                Err(e) => return Err(e),
            };
        let asym = {
            let f1 = asym_kern.f1(content.k1c + content.k1b.min(cand.f1b.len()))?;
            let mut s: f64 = cand.f1c.iter().map(|&n| content.pop(n)).sum::<f64>() * f1;
            if !cand.f1b.is_empty() {
                let frac = content.k1b.min(cand.f1b.len()) as f64 / cand.f1b.len() as f64;
                s += frac * f1 * cand.f1b.iter().map(|&n| content.pop(n)).sum::<f64>();
            }
            for (n, tn) in t.iter() {
                s += content.pop(n) * asym_kern.f2(content.k2c, tn.clamp(0.0, 1.0))?;
            }
            s
        };
        Ok(Evaluated {
            cand: cand.clone(),
            t,
            placement,
            q_general: q1 + q2,
            q_asym: asym,
            pivots,
            lp_skipped,
            iterations,
        })
    };

    let results: Vec<Result<Evaluated>> = pruned.candidates.par_iter().map(evaluate).collect();
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (cand, r) in pruned.candidates.iter().zip(results) {
        match r {
            Ok(e) => ok.push(e),
            Err(e) => {
                log::warn!("candidate n1c={} |F2c|={} failed: {e}", cand.n1c, cand.f2c.len());
                failures.push(format!("n1c={} |F2c|={}: {e}", cand.n1c, cand.f2c.len()));
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::Infeasible(format!("no candidate could be evaluated: {failures:?}")));
    }
    let score = |e: &Evaluated| if cfg.asymptotic_scoring { e.q_asym } else { e.q_general };
    // candidates are ordered by (|F2c|, n1c); keep the first of any tie
    let mut best = 0;
    for i in 1..ok.len() {
        let (s, b) = (score(&ok[i]), score(&ok[best]));
        if s > b + 1e-12 * b.abs().max(1e-300) {
            best = i;
        }
    }
    let scores = ok
        .iter()
        .map(|e| CandidateScore {
            n1c: e.cand.n1c,
            f2c_size: e.cand.f2c.len(),
            q_general: e.q_general,
            q_asymptotic: e.q_asym,
            lp_pivots: e.pivots,
            lp_skipped: e.lp_skipped,
        })
        .collect();
    let gradient_iterations = ok.iter().map(|e| e.iterations).sum();
    let w = ok.swap_remove(best);
    let design = Design::new(content, w.cand.f1c.clone(), w.cand.f2c.clone(), w.placement.clone())?;
    let report = q_general_with(&kern, content, &design)?;
    let lp_status = if w.lp_skipped {
        format!("skipped: more than {} combinations, systematic placement used", cfg.combination_cap)
    } else {
        "optimal".to_string()
    };
    Ok(Solution {
        f1c: w.cand.f1c,
        f2c: w.cand.f2c,
        f1b: w.cand.f1b,
        marginals: w.t,
        p: w.placement,
        q_general: report.q,
        q_asymptotic: w.q_asym,
        diagnostics: Diagnostics {
            candidates_total: pruned.before,
            candidates_after_prune: pruned.candidates.len(),
            prune_rule: pruned.rule,
            marginal_method: if phy.equal_exponents() { "water-filling" } else { "gradient-projection" },
            gradient_iterations,
            lp_status,
            failures,
            scores,
        },
    })
}

/// Interference-limited optimum of one search.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticOptimum {
    pub q_inf: f64,
    #[serde(rename = "F1c")]
    pub f1c: Vec<usize>,
    #[serde(rename = "F2c")]
    pub f2c: Vec<usize>,
    #[serde(rename = "T")]
    pub marginals: Marginals,
    pub evaluated: usize,
}

fn q1_inf(kern: &Kernels, content: &ContentParams, f1c: &[usize], f1b: &[usize]) -> Result<f64> {
    let fetched = content.k1b.min(f1b.len());
    let f1 = kern.f1(content.k1c + fetched)?;
    let mut s: f64 = f1c.iter().map(|&n| content.pop(n)).sum::<f64>() * f1;
    if !f1b.is_empty() {
        s += fetched as f64 / f1b.len() as f64 * f1 * f1b.iter().map(|&n| content.pop(n)).sum::<f64>();
    }
    Ok(s)
}

/// Best interference-limited objective over the pruned structured candidates.
pub fn structured_search(phy: &PhyParams, content: &ContentParams, cfg: &OptConfig) -> Result<AsymptoticOptimum> {
    let pruned = prune_candidates(phy, content, enumerate_structured_candidates(content))?;
    let kern = Kernels::new(&phy.noiseless())?;
    let obj = PicoObjective::new(phy, content.k2c, cfg.grad_grid)?;
    let mut cache: HashMap<Vec<usize>, (f64, Marginals)> = HashMap::new();
    let mut best: Option<AsymptoticOptimum> = None;
    for cand in &pruned.candidates {
        let entry = match cache.get(&cand.f2c) {
            Some(v) => v.clone(),
            None => {
                let (t, _) = marginal_optimum(phy, Some(&obj), content, &cand.f2c, cfg)?;
                let a = weights(content, &cand.f2c);
                let v = exact_objective(&obj, &a, &t.values)?;
                cache.insert(cand.f2c.clone(), (v, t.clone()));
                (v, t)
            }
        };
        let q = q1_inf(&kern, content, &cand.f1c, &cand.f1b)? + entry.0;
        if best.as_ref().is_none_or(|b| q > b.q_inf + 1e-15) {
            best = Some(AsymptoticOptimum {
                q_inf: q,
                f1c: cand.f1c.clone(),
                f2c: cand.f2c.clone(),
                marginals: entry.1,
                evaluated: 0,
            });
        }
    }
    let mut b = best.ok_or_else(|| Error::Infeasible("no structured candidate".into()))?;
    b.evaluated = pruned.candidates.len();
    Ok(b)
}

fn subsets_of(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    match enumerate_combinations_capped(items, k, u128::MAX) {
        Ok(idx) => idx.combos().map(|c| c.to_vec()).collect(),
        Err(_) => Vec::new(),
    }
}

/// Exhaustive search over every admissible `(F1c, F2c)` pair, optimizing the
/// marginals of each pico set by multi-start gradient projection.
pub fn brute_force_oracle(phy: &PhyParams, content: &ContentParams, starts: usize) -> Result<AsymptoticOptimum> {
    content.validate()?;
    let n = content.n;
    if n > 10 {
        return Err(Error::Size(format!("exhaustive search is limited to N <= 10, got {n}")));
    }
    for s in content.k2c..=n - content.k1c {
        if binomial(s, content.k2c) > 200 {
            return Err(Error::Size(format!(
                "C({s}, {}) exceeds 200 combinations; exhaustive search refused",
                content.k2c
            )));
        }
    }
    let kern = Kernels::new(&phy.noiseless())?;
    let cfg = OptConfig::default();
    let obj = PicoObjective::new(phy, content.k2c, cfg.grad_grid)?;
    let all: Vec<usize> = (1..=n).collect();
    let mut pico_best: HashMap<Vec<usize>, (f64, Vec<f64>)> = HashMap::new();
    let mut best: Option<AsymptoticOptimum> = None;
    let mut evaluated = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb7u64);
    for f1c in subsets_of(&all, content.k1c) {
        let rest: Vec<usize> = all.iter().copied().filter(|x| !f1c.contains(x)).collect();
        for size in content.k2c..=rest.len() {
            for f2c in subsets_of(&rest, size) {
                evaluated += 1;
                let f1b = backhaul_set(n, &f1c, &f2c);
                let (v2, t) = match pico_best.get(&f2c) {
                    Some(x) => x.clone(),
                    None => {
                        let a = weights(content, &f2c);
                        let mut local: Option<(f64, Vec<f64>)> = None;
                        for s in 0..starts.max(1) {
                            let start = if s == 0 {
                                vec![content.k2c as f64 / f2c.len() as f64; f2c.len()]
                            } else {
                                let raw: Vec<f64> = (0..f2c.len()).map(|_| rng.random::<f64>()).collect();
                                project_capped_simplex(&raw, content.k2c)
                            };
                            let (t, _, _) = gradient_projection(&obj, &a, content.k2c, start, &cfg);
                            let v = exact_objective(&obj, &a, &t)?;
                            if local.as_ref().is_none_or(|l| v > l.0) {
                                local = Some((v, t));
                            }
                        }
                        let mut l = local.expect("one start");
                        if obj.is_concave() && cfg.exact_polish {
                            let t = exact_polish(&obj, &a, content.k2c)?;
                            l = (exact_objective(&obj, &a, &t)?, t);
                        }
                        pico_best.insert(f2c.clone(), l.clone());
                        l
                    }
                };
                let q = q1_inf(&kern, content, &f1c, &f1b)? + v2;
                if best.as_ref().is_none_or(|b| q > b.q_inf + 1e-15) {
                    best = Some(AsymptoticOptimum {
                        q_inf: q,
                        f1c: f1c.clone(),
                        f2c: f2c.clone(),
                        marginals: Marginals::new(f2c.clone(), t)?,
                        evaluated: 0,
                    });
                }
            }
        }
    }
    let mut b = best.ok_or_else(|| Error::Infeasible("no admissible design".into()))?;
    b.evaluated = evaluated;
    Ok(b)
}

/// General-region success at every candidate's optimal marginals with a
/// feasible (not LP-optimized) placement, for comparison against the
/// refined solution.
pub fn unrefined_scores(phy: &PhyParams, content: &ContentParams, cfg: &OptConfig) -> Result<BTreeMap<(usize, usize), f64>> {
    let pruned = prune_candidates(phy, content, enumerate_structured_candidates(content))?;
    let kern = Kernels::new(phy)?;
    let obj = if phy.equal_exponents() { None } else { Some(PicoObjective::new(phy, content.k2c, cfg.grad_grid)?) };
    let mut out = BTreeMap::new();
    for cand in &pruned.candidates {
        let (t, _) = marginal_optimum(phy, obj.as_ref(), content, &cand.f2c, cfg)?;
        let t = snap_marginals(&t);
        let idx = enumerate_combinations_capped(&cand.f2c, content.k2c, cfg.combination_cap)?;
        let p = crate::combinatorics::feasible_p_from_t(&idx, &t, cfg.lp_tol)?;
        let design = Design::new(content, cand.f1c.clone(), cand.f2c.clone(), Placement::from_index(&idx, &p)?)?;
        let r = q_general_with(&kern, content, &design)?;
        out.insert((cand.f2c.len(), cand.n1c), r.q);
    }
    Ok(out)
}

/// Checks that `q_asymptotic` agrees with the candidate asymptotic score.
#[doc(hidden)]
pub fn asymptotic_of(phy: &PhyParams, content: &ContentParams, sol: &Solution) -> Result<f64> {
    Ok(q_asymptotic(phy, content, &sol.f1c, &sol.f2c, &sol.marginals)?.q)
}

#[doc(hidden)]
pub fn pico_pmf_mean(phy: &PhyParams, content: &ContentParams, design: &Design, n: usize) -> Result<f64> {
    Ok(pico_load_pmf(content, phy, &design.placement, &design.marginals, n)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn qp_oracle(x: &[f64], k: usize) -> Vec<f64> {
        // enumerate which coordinates sit at 0, at 1 or are free
        let n = x.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut state = vec![0u8; n];
            for s in state.iter_mut() {
                *s = (c % 3) as u8;
                c /= 3;
            }
            let ones = state.iter().filter(|&&s| s == 2).count() as f64;
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
            let mut t = vec![0.0; n];
            for i in 0..n {
                if state[i] == 2 {
                    t[i] = 1.0;
                }
            }
            if free.is_empty() {
                if (ones - k as f64).abs() > 1e-12 {
                    continue;
                }
            } else {
                let nu = (free.iter().map(|&i| x[i]).sum::<f64>() - (k as f64 - ones)) / free.len() as f64;
                let mut ok = true;
                for &i in &free {
                    t[i] = x[i] - nu;
                    if t[i] < -1e-12 || t[i] > 1.0 + 1e-12 {
                        ok = false;
                    }
                }
                if !ok {
                    continue;
                }
            }
            let d: f64 = t.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|b| d < b.0 - 1e-15) {
                best = Some((d, t));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_capped_simplex(&[0.5, 0.5], 1), vec![0.5, 0.5]);
        let t = project_capped_simplex(&[2.0, 0.5, 0.1], 1);
        assert!((t[0] - 1.0).abs() < 1e-10 && t[1].abs() < 1e-10 && t[2].abs() < 1e-10);
        assert_eq!(project_capped_simplex(&[0.3, -4.0, 9.0], 3), vec![1.0; 3]);
    }

    #[test]
    fn candidate_counts() {
        let c = reference_content();
        let cands = enumerate_structured_candidates(&c);
        assert_eq!(cands.len(), 15);
        let sizes: std::collections::BTreeSet<usize> = cands.iter().map(|c| c.f2c.len()).collect();
        assert_eq!(sizes.into_iter().collect::<Vec<_>>(), vec![6, 7]);
        for cand in &cands {
            let mut all: Vec<usize> = cand.f1c.iter().chain(&cand.f2c).chain(&cand.f1b).copied().collect();
            all.sort();
            assert_eq!(all, (1..=10).collect::<Vec<_>>());
            assert_eq!(cand.f1c.len(), 3);
        }
    }

    #[test]
    fn candidates_match_scripted_enumeration() {
        let c = ContentParams::zipf(8, 1.0, 2, 2, 2).unwrap();
        let got = enumerate_structured_candidates(&c);
        // sizes: lb = max(2, 8-2-2) = 4 .. 6
        let mut want = Vec::new();
        for s in 4..=6usize {
            let fb = 8 - 2 - s;
            for n1 in 1..=s + 1 {
                let f1c = vec![n1, n1 + 1];
                let f1b: Vec<usize> = (0..fb).map(|i| n1 + 2 + i).collect();
                let f2c: Vec<usize> = (1..=8).filter(|x| !f1c.contains(x) && !f1b.contains(x)).collect();
                want.push((n1, f1c, f2c, f1b));
            }
        }
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!((g.n1c, &g.f1c, &g.f2c, &g.f1b), (w.0, &w.1, &w.2, &w.3));
        }
    }

    #[test]
    fn waterfill_symmetry_and_caps() {
        let phy = reference_phy(80.0);
        let mut c = ContentParams::zipf(4, 0.0, 1, 1, 1).unwrap();
        let w = waterfill_closed_form(&phy, &c, &[3, 4]).unwrap();
        assert!((w.marginals.values[0] - 0.5).abs() < 1e-10 && (w.marginals.values[1] - 0.5).abs() < 1e-10);
        c.a = vec![0.9, 0.04, 0.03, 0.03];
        let w = waterfill_closed_form(&phy, &c, &[1, 2, 3]).unwrap();
        assert!((w.marginals.sum() - 1.0).abs() < 1e-12);
        assert!(is_popularity_monotone(&w.marginals, 1e-12));
    }

    #[test]
    fn waterfill_matches_grid_oracle() {
        let phy = reference_phy(80.0);
        let c = ContentParams::zipf(10, 1.0, 3, 2, 1).unwrap();
        let f2c = [4, 5, 6, 7, 8, 9];
        let w = waterfill_closed_form(&phy, &c, &f2c).unwrap();
        let cf = ClosedForm::new(&phy).unwrap();
        let obj = |t: &[f64]| -> f64 { f2c.iter().zip(t).map(|(&n, &x)| c.pop(n) * cf.f2_inf(2, x).unwrap()).sum() };
        let best = obj(&w.marginals.values);
        // random feasible perturbations never do better
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let raw: Vec<f64> = w.marginals.values.iter().map(|v| v + 0.05 * (rng.random::<f64>() - 0.5)).collect();
            let t = project_capped_simplex(&raw, 2);
            assert!(obj(&t) <= best + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_waterfill_reference() {
        let phy = reference_phy(80.0);
        let c = reference_content();
        let f2c = [4, 5, 6, 7, 8, 9, 10];
        let g = optimize_marginals_gradient(&phy, &c, &f2c, &OptConfig::default()).unwrap();
        let w = waterfill_closed_form(&phy, &c, &f2c).unwrap();
        for (a, b) in g.raw.values.iter().zip(&w.marginals.values) {
            assert!((a - b).abs() < 1e-4, "{:?} vs {:?}", g.raw.values, w.marginals.values);
        }
        for (a, b) in g.marginals.values.iter().zip(&w.marginals.values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(is_popularity_monotone(&g.marginals, 1e-8));
    }

    #[test]
    fn gradient_uniform_popularity_stays_uniform() {
        let phy = reference_phy(80.0);
        let c = ContentParams::zipf(6, 0.0, 1, 2, 1).unwrap();
        let g = optimize_marginals_gradient(&phy, &c, &[2, 3, 4, 5], &OptConfig::default()).unwrap();
        for v in &g.marginals.values {
            assert!((v - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn lp_refine_forced_cases() {
        let phy = reference_phy(80.0);
        let c = reference_content();
        let kern = Kernels::new(&phy).unwrap();
        let idx = enumerate_combinations_capped(&[4, 5, 6], 2, 1000).unwrap();
        let t = Marginals::new(vec![4, 5, 6], vec![1.0, 1.0, 0.0]).unwrap();
        let r = lp_refine(&kern, &c, &idx, &t, 1e-10).unwrap();
        assert_eq!(r.fixed_zero, 2);
        assert!((r.p[0] - 1.0).abs() < 1e-12);
        let idx1 = enumerate_combinations_capped(&[4, 5], 2, 1000).unwrap();
        let t1 = Marginals::new(vec![4, 5], vec![1.0, 1.0]).unwrap();
        let r1 = lp_refine(&kern, &c, &idx1, &t1, 1e-10).unwrap();
        assert_eq!(r1.p, vec![1.0]);
        let direct = q2_of_placement(&kern, &c, &idx1, &[1.0]).unwrap();
        assert!((r1.q2 - direct).abs() < 1e-12);
    }

    #[test]
    fn lp_objective_is_q2() {
        let phy = reference_phy(80.0);
        let c = reference_content();
        let kern = Kernels::new(&phy).unwrap();
        let idx = enumerate_combinations_capped(&[4, 5, 6, 7], 2, 1000).unwrap();
        let t = Marginals::new(vec![4, 5, 6, 7], vec![0.8, 0.6, 0.4, 0.2]).unwrap();
        let r = lp_refine(&kern, &c, &idx, &t, 1e-10).unwrap();
        let direct = q2_of_placement(&kern, &c, &idx, &r.p).unwrap();
        assert!((r.q2 - direct).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = random_marginal_matching_p(&idx, &t, 3, &mut rng).unwrap();
            assert!(q2_of_placement(&kern, &c, &idx, &p).unwrap() <= r.q2 + 1e-12);
        }
    }

    #[test]
    fn prune_rules_fire() {
        let c = reference_content();
        let mut phy = reference_phy(80.0);
        let cands = enumerate_structured_candidates(&c);
        phy.lambda1 = 5e-5;
        phy.p1 = 1e4;
        let r = prune_candidates(&phy, &c, cands.clone()).unwrap();
        assert_eq!(r.rule, PruneRule::MacroFirst);
        assert!(r.candidates.iter().all(|c| c.n1c == 1));
        let mut phy = reference_phy(80.0);
        phy.lambda1 = 1e-9;
        let r = prune_candidates(&phy, &c, cands).unwrap();
        assert_eq!(r.rule, PruneRule::PicoFirst);
        assert!(r.candidates.iter().all(|c| c.n1c != 1));
    }

    #[test]
    fn structured_matches_brute_force_small() {
        let phy = reference_phy(80.0);
        let c = ContentParams::zipf(6, 1.0, 2, 1, 1).unwrap();
        let s = structured_search(&phy, &c, &OptConfig::default()).unwrap();
        let b = brute_force_oracle(&phy, &c, 2).unwrap();
        assert!((s.q_inf - b.q_inf).abs() < 1e-6, "{} vs {}", s.q_inf, b.q_inf);
    }

    #[test]
    fn near_optimal_beats_unrefined() {
        let phy = reference_phy(80.0);
        let c = ContentParams::zipf(8, 1.0, 2, 2, 2).unwrap();
        let sol = near_optimal(&phy, &c, &OptConfig::default()).unwrap();
        let unref = unrefined_scores(&phy, &c, &OptConfig::default()).unwrap();
        for (_, q) in unref {
            assert!(sol.q_general >= q - 1e-10);
        }
        let d = sol.design(&c).unwrap();
        assert!(is_popularity_monotone(&d.marginals, 1e-8));
        let qa = asymptotic_of(&phy, &c, &sol).unwrap();
        assert!((qa - sol.q_asymptotic).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn projection_equals_qp_oracle(x in prop::collection::vec(-2.0f64..3.0, 1..8), kf in 0.0f64..=1.0) {
            let k = ((x.len() as f64) * kf).round() as usize;
            let t = project_capped_simplex(&x, k);
            let o = qp_oracle(&x, k);
            for (a, b) in t.iter().zip(&o) {
                prop_assert!((a - b).abs() < 1e-8, "{:?} vs {:?}", t, o);
            }
            prop_assert!((t.iter().sum::<f64>() - k as f64).abs() < 1e-10);
        }
    }
}
