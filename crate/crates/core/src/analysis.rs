//! Analytical success probability: file-load distributions, conditional
//! coverage kernels and the general and interference-limited evaluations.

use crate::combinatorics::Placement;
use crate::error::{Error, Result};
use crate::model::{backhaul_set, ContentParams, Design, Marginals, PhyParams};
use crate::numerics::{beta, comp_inc_beta, integrate_finite, QuadratureConfig};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::RwLock;

/// Shape parameter of the Voronoi-cell area approximation.
const CELL_SHAPE: f64 = 3.5;

/// Distribution of a multicast load on `support_min..support_min + probs.len()`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadPmf {
    pub support_min: usize,
    pub probs: Vec<f64>,
}

impl LoadPmf {
    pub fn point_mass(k: usize) -> Self {
        Self {
            support_min: k,
            probs: vec![1.0],
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn prob(&self, k: usize) -> f64 {
        k.checked_sub(self.support_min)
            .and_then(|i| self.probs.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.support_min + i, p))
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(k, p)| k as f64 * p).sum()
    }
}

/// Distribution of the number of successes among independent indicators.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(probs.len() + 1);
    pmf.push(1.0);
    for &p in probs {
        pmf.push(0.0);
        for k in (1..pmf.len()).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    pmf
}

/// Probability that exactly `k` of the indicators fire.
pub fn poisson_binomial_g(probs: &[f64], k: usize) -> f64 {
    if k > probs.len() {
        return 0.0;
    }
    poisson_binomial_pmf(probs)[k]
}

fn activity(rate_ratio: f64) -> f64 {
    // 1 - (1 + r/3.5)^-4.5, written to keep precision for small r
    -(-4.5 * (rate_ratio / CELL_SHAPE).ln_1p()).exp_m1()
}

/// Probability that a macro cell holds at least one requester of a file with
/// popularity `a_m`.
pub fn activity_prob_macro(a_m: f64, lambda_u: f64, lambda1: f64) -> f64 {
    activity(a_m * lambda_u / lambda1)
}

/// Same for a pico cell; the serving density of the file is `t_m λ2`.
pub fn activity_prob_pico(a_m: f64, lambda_u: f64, t_m: f64, lambda2: f64) -> f64 {
    if t_m <= 0.0 {
        return 0.0;
    }
    activity(a_m * lambda_u / (t_m * lambda2))
}

fn shifted(pmf: Vec<f64>, by: usize) -> LoadPmf {
    LoadPmf {
        support_min: by,
        probs: pmf,
    }
}

/// Load distributions at the macro serving a request for file `n`:
/// (cached-file load, backhaul-file load). The requested file itself is
/// counted in the component it belongs to.
pub fn macro_load_pmfs(
    content: &ContentParams,
    phy: &PhyParams,
    f1c: &[usize],
    f1b: &[usize],
    n: usize,
) -> Result<(LoadPmf, LoadPmf)> {
    let act = |set: &[usize], skip: Option<usize>| -> Vec<f64> {
        set.iter()
            .filter(|&&m| Some(m) != skip)
            .map(|&m| activity_prob_macro(content.pop(m), phy.lambda_u, phy.lambda1))
            .collect()
    };
    if f1c.contains(&n) {
        let cached = shifted(poisson_binomial_pmf(&act(f1c, Some(n))), 1);
        let fetched = shifted(poisson_binomial_pmf(&act(f1b, None)), 0);
        Ok((cached, fetched))
    } else if f1b.contains(&n) {
        let cached = shifted(poisson_binomial_pmf(&act(f1c, None)), 0);
        let fetched = shifted(poisson_binomial_pmf(&act(f1b, Some(n))), 1);
        Ok((cached, fetched))
    } else {
        Err(Error::Membership(n))
    }
}

/// Load distribution at the pico serving a request for file `n ∈ F2c`.
pub fn pico_load_pmf(
    content: &ContentParams,
    phy: &PhyParams,
    placement: &Placement,
    t: &Marginals,
    n: usize,
) -> Result<LoadPmf> {
    let tn = t.get(n).ok_or(Error::Membership(n))?;
    if tn <= 0.0 {
        return Err(Error::NeverCached(n));
    }
    let act: HashMap<usize, f64> = t
        .iter()
        .map(|(m, tm)| (m, activity_prob_pico(content.pop(m), phy.lambda_u, tm, phy.lambda2)))
        .collect();
    let k2c = placement.k();
    let mut probs = vec![0.0; k2c];
    for (combo, p) in placement.entries() {
        if !combo.contains(&n) {
            continue;
        }
        let others: Vec<f64> = combo
            .iter()
            .filter(|&&m| m != n)
            .map(|m| act.get(m).copied().unwrap_or(0.0))
            .collect();
        let w = p / tn;
        for (k, g) in poisson_binomial_pmf(&others).into_iter().enumerate() {
            probs[k] += w * g;
        }
    }
    Ok(shifted(probs, 1))
}

/// Which tier serves the typical user in a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Tier {
    Macro,
    Pico,
}

/// Conditional coverage kernels for one set of physical parameters, with
/// memoized Beta-function constants and kernel values.
#[derive(Debug)]
pub struct Kernels {
    phy: PhyParams,
    cfg: QuadratureConfig,
    /// B(2/α_j, 1 - 2/α_j) for j = 1, 2.
    full_beta: [f64; 2],
    incomplete: RwLock<HashMap<(Tier, usize), f64>>,
    f1_cache: RwLock<HashMap<usize, f64>>,
    f2_cache: RwLock<HashMap<(usize, u64), f64>>,
}

impl Clone for Kernels {
    fn clone(&self) -> Self {
        Self {
            phy: self.phy,
            cfg: self.cfg,
            full_beta: self.full_beta,
            incomplete: RwLock::new(self.incomplete.read().unwrap().clone()),
            f1_cache: RwLock::new(self.f1_cache.read().unwrap().clone()),
            f2_cache: RwLock::new(self.f2_cache.read().unwrap().clone()),
        }
    }
}

struct Exponent {
    /// Coefficient of d² in the exponent (the Gaussian rate).
    gauss: f64,
    /// Coefficient and power of the remaining d-dependent terms.
    extra: Vec<(f64, f64)>,
}

impl Exponent {
    fn residual(&self, d: f64) -> f64 {
        self.extra.iter().map(|&(c, p)| c * d.powf(p)).sum()
    }

    /// `∫_0^∞ d^(1+2m) exp(-gauss·d² - residual(d)) dd` for `m ∈ {0, 1}`.
    fn moment(&self, m: u32, cfg: &QuadratureConfig) -> Result<f64> {
        let c = self.gauss;
        if self.extra.is_empty() && m == 0 {
            return Ok(0.5 / c);
        }
        if self.extra.is_empty() && m == 1 {
            return Ok(0.5 / (c * c));
        }
        let h = |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            let d2 = -u.ln() / c;
            let d = d2.sqrt();
            let w = if m == 1 { d2 } else { 1.0 };
            w * (-self.residual(d)).exp()
        };
        Ok(integrate_finite(h, 0.0, 1.0, cfg)? * 0.5 / c)
    }
}

impl Kernels {
    pub fn new(phy: &PhyParams) -> Result<Self> {
        Self::with_config(phy, QuadratureConfig::default())
    }

    pub fn with_config(phy: &PhyParams, cfg: QuadratureConfig) -> Result<Self> {
        phy.check_kernel_domain()?;
        cfg.validate()?;
        let b = |alpha: f64| beta(2.0 / alpha, 1.0 - 2.0 / alpha);
        Ok(Self {
            phy: *phy,
            cfg,
            full_beta: [b(phy.alpha1)?, b(phy.alpha2)?],
            incomplete: RwLock::new(HashMap::new()),
            f1_cache: RwLock::new(HashMap::new()),
            f2_cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn phy(&self) -> &PhyParams {
        &self.phy
    }

    fn alpha(&self, t: Tier) -> f64 {
        match t {
            Tier::Macro => self.phy.alpha1,
            Tier::Pico => self.phy.alpha2,
        }
    }

    /// `B'(2/α, 1-2/α, 2^(-kτ/W))` for the serving tier.
    fn incomplete_beta(&self, t: Tier, k: usize) -> Result<f64> {
        if let Some(v) = self.incomplete.read().unwrap().get(&(t, k)) {
            return Ok(*v);
        }
        let alpha = self.alpha(t);
        let z = 1.0 / (1.0 + self.phy.sinr_threshold(k));
        let v = comp_inc_beta(2.0 / alpha, 1.0 - 2.0 / alpha, z)?;
        self.incomplete.write().unwrap().insert((t, k), v);
        Ok(v)
    }

    /// Exponent of the integrand when tier `t` serves, with serving density
    /// fraction `x` (1 for the macro tier).
    fn exponent(&self, t: Tier, k: usize, x: f64) -> Result<Exponent> {
        let phy = &self.phy;
        let theta = phy.sinr_threshold(k);
        let (lam_s, lam_o, p_s, p_o, a_s, a_o, b_s, b_o) = match t {
            Tier::Macro => (
                phy.lambda1, phy.lambda2, phy.p1, phy.p2, phy.alpha1, phy.alpha2, self.full_beta[0], self.full_beta[1],
            ),
            Tier::Pico => (
                phy.lambda2, phy.lambda1, phy.p2, phy.p1, phy.alpha2, phy.alpha1, self.full_beta[1], self.full_beta[0],
            ),
        };
        let bp = self.incomplete_beta(t, k)?;
        let same_tier_beta = match t {
            Tier::Macro => bp,
            Tier::Pico => x * bp + (1.0 - x) * b_s,
        };
        let mut gauss = PI * lam_s * x + 2.0 * PI * lam_s / a_s * theta.powf(2.0 / a_s) * same_tier_beta;
        let mut extra = Vec::new();
        let cross = 2.0 * PI * lam_o / a_o * (p_o * theta / p_s).powf(2.0 / a_o) * b_o;
        let cross_pow = 2.0 * a_s / a_o;
        if cross_pow == 2.0 {
            gauss += cross;
        } else {
            extra.push((cross, cross_pow));
        }
        if phy.n0 > 0.0 {
            extra.push((theta * phy.n0 / p_s, a_s));
        }
        Ok(Exponent { gauss, extra })
    }

    /// Coverage probability at a macro with load `k`.
    pub fn f1(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("kernel load must be at least 1".into()));
        }
        if let Some(v) = self.f1_cache.read().unwrap().get(&k) {
            return Ok(*v);
        }
        let e = self.exponent(Tier::Macro, k, 1.0)?;
        let v = 2.0 * PI * self.phy.lambda1 * e.moment(0, &self.cfg)?;
        self.f1_cache.write().unwrap().insert(k, v);
        Ok(v)
    }

    /// Coverage probability at a pico with load `k` when a fraction `x` of
    /// picos stores the requested file.
    pub fn f2(&self, k: usize, x: f64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("kernel load must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("caching probability {x} is outside [0,1]")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        let key = (k, x.to_bits());
        if let Some(v) = self.f2_cache.read().unwrap().get(&key) {
            return Ok(*v);
        }
        let e = self.exponent(Tier::Pico, k, x)?;
        let v = 2.0 * PI * self.phy.lambda2 * x * e.moment(0, &self.cfg)?;
        self.f2_cache.write().unwrap().insert(key, v);
        Ok(v)
    }

    /// Derivative of [`Kernels::f2`] with respect to `x`. At `x = 0` this is
    /// the right-hand limit.
    pub fn f2_grad(&self, k: usize, x: f64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("kernel load must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("caching probability {x} is outside [0,1]")));
        }
        let phy = &self.phy;
        let e = self.exponent(Tier::Pico, k, x)?;
        let a = 2.0 * PI * phy.lambda2 / phy.alpha2 * phy.sinr_threshold(k).powf(2.0 / phy.alpha2);
        let slope = PI * phy.lambda2 + a * (self.incomplete_beta(Tier::Pico, k)? - self.full_beta[1]);
        let i1 = e.moment(0, &self.cfg)?;
        let i3 = if x > 0.0 { e.moment(1, &self.cfg)? } else { 0.0 };
        Ok(2.0 * PI * phy.lambda2 * (i1 - x * slope * i3))
    }
}

/// Macro kernel with the default quadrature settings.
pub fn f1k(phy: &PhyParams, k: usize) -> Result<f64> {
    Kernels::new(phy)?.f1(k)
}

/// Pico kernel with the default quadrature settings.
pub fn f2k(phy: &PhyParams, k: usize, x: f64) -> Result<f64> {
    Kernels::new(phy)?.f2(k, x)
}

/// Interference-limited macro kernel.
pub fn f1k_inf(phy: &PhyParams, k: usize) -> Result<f64> {
    f1k(&phy.noiseless(), k)
}

/// Interference-limited pico kernel.
pub fn f2k_inf(phy: &PhyParams, k: usize, x: f64) -> Result<f64> {
    f2k(&phy.noiseless(), k, x)
}

/// Derivative in `x` of the interference-limited pico kernel.
pub fn f2k_inf_grad(phy: &PhyParams, k: usize, x: f64) -> Result<f64> {
    Kernels::new(&phy.noiseless())?.f2_grad(k, x)
}

/// Closed-form interference-limited quantities for equal path-loss exponents.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    phy: PhyParams,
    alpha: f64,
    full_beta: f64,
}

impl ClosedForm {
    pub fn new(phy: &PhyParams) -> Result<Self> {
        phy.check_kernel_domain()?;
        if !phy.equal_exponents() {
            return Err(Error::Domain(format!(
                "closed forms need equal path-loss exponents (alpha1={}, alpha2={})",
                phy.alpha1, phy.alpha2
            )));
        }
        let alpha = phy.alpha1;
        Ok(Self {
            phy: *phy,
            alpha,
            full_beta: beta(2.0 / alpha, 1.0 - 2.0 / alpha)?,
        })
    }

    fn parts(&self, k: usize) -> Result<(f64, f64, f64)> {
        let theta = self.phy.sinr_threshold(k);
        let z = 1.0 / (1.0 + theta);
        let bp = comp_inc_beta(2.0 / self.alpha, 1.0 - 2.0 / self.alpha, z)?;
        Ok((theta, bp, self.full_beta))
    }

    pub fn omega(&self, k: usize) -> Result<f64> {
        let (theta, bp, b) = self.parts(k)?;
        let e = 2.0 / self.alpha;
        let ph = &self.phy;
        Ok(e * theta.powf(e) * bp
            + 2.0 * ph.lambda2 / (self.alpha * ph.lambda1) * (theta / ph.power_ratio()).powf(e) * b
            + 1.0)
    }

    pub fn theta1(&self, k: usize) -> Result<f64> {
        let (theta, bp, b) = self.parts(k)?;
        let e = 2.0 / self.alpha;
        Ok(e * theta.powf(e) * (bp - b) + 1.0)
    }

    pub fn theta2(&self, k: usize) -> Result<f64> {
        let (theta, _, b) = self.parts(k)?;
        let e = 2.0 / self.alpha;
        let ph = &self.phy;
        Ok(e * theta.powf(e) * b
            + 2.0 * ph.lambda1 / (self.alpha * ph.lambda2) * (ph.power_ratio() * theta).powf(e) * b)
    }

    pub fn f1_inf(&self, k: usize) -> Result<f64> {
        Ok(1.0 / self.omega(k)?)
    }

    pub fn f2_inf(&self, k: usize, x: f64) -> Result<f64> {
        let (t1, t2) = (self.theta1(k)?, self.theta2(k)?);
        Ok(x / (t2 + t1 * x))
    }

    pub fn f2_inf_grad(&self, k: usize, x: f64) -> Result<f64> {
        let (t1, t2) = (self.theta1(k)?, self.theta2(k)?);
        Ok(t2 / (t2 + t1 * x).powi(2))
    }
}

/// Success probability split by tier, with the per-file conditional values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub q: f64,
    pub q1: f64,
    pub q2: f64,
    pub per_file: BTreeMap<usize, f64>,
}

impl EvalReport {
    fn assemble(content: &ContentParams, macro_files: &[usize], per_file: BTreeMap<usize, f64>) -> Self {
        let mut q1 = 0.0;
        let mut q2 = 0.0;
        for (&n, &s) in &per_file {
            if macro_files.contains(&n) {
                q1 += content.pop(n) * s;
            } else {
                q2 += content.pop(n) * s;
            }
        }
        Self {
            q: q1 + q2,
            q1,
            q2,
            per_file,
        }
    }
}

/// Success probability of a macro-served request for `n` given the load
/// distributions and the backhaul capacity.
fn macro_success(kern: &Kernels, cached: &LoadPmf, fetched: &LoadPmf, k1b: usize, n_is_fetched: bool) -> Result<f64> {
    let mut total_load: BTreeMap<usize, f64> = BTreeMap::new();
    for (kb, pb) in fetched.iter() {
        let served = k1b.min(kb);
        let sel = if n_is_fetched {
            if kb == 0 {
                0.0
            } else {
                served as f64 / kb as f64
            }
        } else {
            1.0
        };
        if sel == 0.0 || pb == 0.0 {
            continue;
        }
        for (kc, pc) in cached.iter() {
            if pc == 0.0 {
                continue;
            }
            *total_load.entry(kc + served).or_insert(0.0) += pc * pb * sel;
        }
    }
    let mut s = 0.0;
    for (k, w) in total_load {
        if k == 0 {
            continue;
        }
        s += w * kern.f1(k)?;
    }
    Ok(s)
}

/// Macro-tier part of the general evaluation, shared with the optimizer.
pub(crate) fn macro_per_file(
    kern: &Kernels,
    content: &ContentParams,
    f1c: &[usize],
    f1b: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let phy = kern.phy();
    let mut out = BTreeMap::new();
    for &n in f1c.iter().chain(f1b) {
        let (cached, fetched) = macro_load_pmfs(content, phy, f1c, f1b, n)?;
        let s = macro_success(kern, &cached, &fetched, content.k1b, f1b.contains(&n))?;
        out.insert(n, s);
    }
    Ok(out)
}

/// Pico-tier success per file for a given placement.
pub(crate) fn pico_per_file(
    kern: &Kernels,
    content: &ContentParams,
    placement: &Placement,
    t: &Marginals,
) -> Result<BTreeMap<usize, f64>> {
    let phy = kern.phy();
    let mut out = BTreeMap::new();
    for (n, tn) in t.iter() {
        if tn <= 0.0 {
            out.insert(n, 0.0);
            continue;
        }
        let pmf = pico_load_pmf(content, phy, placement, t, n)?;
        let mut s = 0.0;
        for (k, w) in pmf.iter() {
            if w > 0.0 {
                s += w * kern.f2(k, tn.min(1.0))?;
            }
        }
        out.insert(n, s);
    }
    Ok(out)
}

/// General-region success probability of a design.
pub fn q_general(phy: &PhyParams, content: &ContentParams, design: &Design) -> Result<EvalReport> {
    let kern = Kernels::new(phy)?;
    q_general_with(&kern, content, design)
}

pub fn q_general_with(kern: &Kernels, content: &ContentParams, design: &Design) -> Result<EvalReport> {
    let mut per_file = macro_per_file(kern, content, &design.f1c, &design.f1b)?;
    per_file.extend(pico_per_file(kern, content, &design.placement, &design.marginals)?);
    let macro_files: Vec<usize> = design.f1c.iter().chain(&design.f1b).copied().collect();
    Ok(EvalReport::assemble(content, &macro_files, per_file))
}

fn asymptotic_report(
    content: &ContentParams,
    f1c: &[usize],
    f2c: &[usize],
    t: &Marginals,
    f1: &dyn Fn(usize) -> Result<f64>,
    f2: &dyn Fn(usize, f64) -> Result<f64>,
) -> Result<EvalReport> {
    if t.files != f2c {
        return Err(Error::Size("marginals must be listed over F2c".into()));
    }
    let viol = t.violations(content.k2c);
    if !viol.is_empty() {
        return Err(Error::Validation(viol));
    }
    let f1b = backhaul_set(content.n, f1c, f2c);
    let fetched = content.k1b.min(f1b.len());
    let macro_val = f1(content.k1c + fetched)?;
    let mut per_file = BTreeMap::new();
    for &n in f1c {
        per_file.insert(n, macro_val);
    }
    for &n in &f1b {
        per_file.insert(n, macro_val * fetched as f64 / f1b.len() as f64);
    }
    for (n, tn) in t.iter() {
        per_file.insert(n, f2(content.k2c, tn.clamp(0.0, 1.0))?);
    }
    let macro_files: Vec<usize> = f1c.iter().chain(&f1b).copied().collect();
    Ok(EvalReport::assemble(content, &macro_files, per_file))
}

/// Interference-limited, saturated-load success probability (quadrature).
pub fn q_asymptotic(
    phy: &PhyParams,
    content: &ContentParams,
    f1c: &[usize],
    f2c: &[usize],
    t: &Marginals,
) -> Result<EvalReport> {
    let kern = Kernels::new(&phy.noiseless())?;
    asymptotic_report(content, f1c, f2c, t, &|k| kern.f1(k), &|k, x| kern.f2(k, x))
}

/// Interference-limited success probability from the closed forms (equal
/// path-loss exponents only).
pub fn q_asymptotic_closed(
    phy: &PhyParams,
    content: &ContentParams,
    f1c: &[usize],
    f2c: &[usize],
    t: &Marginals,
) -> Result<EvalReport> {
    let cf = ClosedForm::new(phy)?;
    asymptotic_report(content, f1c, f2c, t, &|k| cf.f1_inf(k), &|k, x| cf.f2_inf(k, x))
}
