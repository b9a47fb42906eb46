//! Network, content and design parameters with constraint validation.
//!
//! File ids are 1-based and ordered by popularity (file 1 is the most popular).

use crate::combinatorics::{binomial, Placement};
use crate::error::{Error, Result, Violation};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Tolerance used when checking that probability vectors sum to one.
pub const SUM_TOL: f64 = 1e-9;

/// A scalar that may be given either as a plain number or as a string with a
/// `dB` suffix (`"16 dB"`), which is converted to linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Linear(f64),
    Text(String),
}

impl Quantity {
    pub fn to_linear(&self) -> Result<f64> {
        match self {
            Quantity::Linear(v) => Ok(*v),
            Quantity::Text(s) => parse_quantity(s),
        }
    }
}

/// Parses `"30 dB"`, `"30dB"` or a bare number.
pub fn parse_quantity(s: &str) -> Result<f64> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    if let Some(num) = lower.strip_suffix("db") {
        let db: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("cannot parse dB value '{s}'")))?;
        return Ok(db_to_linear(db));
    }
    t.parse()
        .map_err(|_| Error::Domain(format!("cannot parse quantity '{s}'")))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Physical-layer constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhyParams {
    /// Macro BS density per m².
    pub lambda1: f64,
    /// Pico BS density per m².
    pub lambda2: f64,
    /// User density per m².
    pub lambda_u: f64,
    #[serde(rename = "P1")]
    pub p1: f64,
    #[serde(rename = "P2")]
    pub p2: f64,
    /// Noise power; zero means interference-limited.
    #[serde(rename = "N0")]
    pub n0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(rename = "W_hz")]
    pub w_hz: f64,
    /// Multicast rate target in bit/s.
    pub tau: f64,
}

/// Wire form of [`PhyParams`]. Powers may be given in dB, and the noise may be
/// given through `P_over_N0` (relative to the pico power) instead of `N0`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhyWire {
    lambda1: f64,
    lambda2: f64,
    lambda_u: f64,
    #[serde(rename = "P1")]
    p1: Option<Quantity>,
    #[serde(rename = "P2")]
    p2: Option<Quantity>,
    #[serde(rename = "P1_over_P2")]
    p1_over_p2: Option<Quantity>,
    #[serde(rename = "N0")]
    n0: Option<Quantity>,
    #[serde(rename = "P_over_N0")]
    p_over_n0: Option<Quantity>,
    alpha1: f64,
    alpha2: f64,
    #[serde(rename = "W_hz")]
    w_hz: f64,
    tau: f64,
}

impl TryFrom<PhyWire> for PhyParams {
    type Error = Error;

    fn try_from(w: PhyWire) -> Result<Self> {
        let p2 = match &w.p2 {
            Some(q) => q.to_linear()?,
            None => 1.0,
        };
        let p1 = match (&w.p1, &w.p1_over_p2) {
            (Some(_), Some(_)) => {
                return Err(Error::Domain("give either P1 or P1_over_P2, not both".into()))
            }
            (Some(q), None) => q.to_linear()?,
            (None, Some(r)) => p2 * r.to_linear()?,
            (None, None) => return Err(Error::Domain("missing P1 (or P1_over_P2)".into())),
        };
        let n0 = match (&w.n0, &w.p_over_n0) {
            (Some(_), Some(_)) => {
                return Err(Error::Domain("give either N0 or P_over_N0, not both".into()))
            }
            (Some(q), None) => q.to_linear()?,
            (None, Some(r)) => p2 / r.to_linear()?,
            (None, None) => return Err(Error::Domain("missing N0 (or P_over_N0)".into())),
        };
        Ok(PhyParams {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda_u: w.lambda_u,
            p1,
            p2,
            n0,
            alpha1: w.alpha1,
            alpha2: w.alpha2,
            w_hz: w.w_hz,
            tau: w.tau,
        })
    }
}

impl<'de> Deserialize<'de> for PhyParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = PhyWire::deserialize(d)?;
        PhyParams::try_from(wire).map_err(serde::de::Error::custom)
    }
}

impl PhyParams {
    /// SINR threshold for a multicast load of `k` files.
    pub fn sinr_threshold(&self, k: usize) -> f64 {
        (k as f64 * self.tau / self.w_hz * std::f64::consts::LN_2).exp_m1()
    }

    /// Transmit SNR `P2/N0` in dB (infinite when `N0 = 0`).
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.p2 / self.n0).log10()
    }

    /// Copy with the noise set so that `P2/N0` equals `db`.
    pub fn with_snr_db(mut self, db: f64) -> Self {
        self.n0 = self.p2 / db_to_linear(db);
        self
    }

    /// Copy in the interference-limited regime (`N0 = 0`).
    pub fn noiseless(mut self) -> Self {
        self.n0 = 0.0;
        self
    }

    pub fn power_ratio(&self) -> f64 {
        self.p1 / self.p2
    }

    /// Whether both tiers share a path-loss exponent.
    pub fn equal_exponents(&self) -> bool {
        self.alpha1 == self.alpha2
    }

    /// Checks that kernel evaluation is well defined: positive, finite
    /// parameters and path-loss exponents above two.
    pub fn check_kernel_domain(&self) -> Result<()> {
        let v = self.domain_violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    fn domain_violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let positive = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_u", self.lambda_u),
            ("P1", self.p1),
            ("P2", self.p2),
            ("W_hz", self.w_hz),
            ("tau", self.tau),
        ];
        for (name, x) in positive {
            if !(x > 0.0) || !x.is_finite() {
                v.push(Violation::new("phy-positive", format!("{name} must be positive and finite, got {x}")));
            }
        }
        if !(self.n0 >= 0.0) || !self.n0.is_finite() {
            v.push(Violation::new("phy-noise", format!("N0 must be finite and >= 0, got {}", self.n0)));
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(a > 2.0) || !a.is_finite() {
                v.push(Violation::new("path-loss", format!("{name} must exceed 2, got {a}")));
            }
        }
        v
    }

    /// Full validation including the tier ordering (`λ1 < λ2`, `P1 > P2`).
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.domain_violations();
        if !(self.lambda1 < self.lambda2) {
            v.push(Violation::new(
                "tier-density",
                format!("macro density must be below pico density ({} >= {})", self.lambda1, self.lambda2),
            ));
        }
        if !(self.p1 > self.p2) {
            v.push(Violation::new(
                "tier-power",
                format!("macro power must exceed pico power ({} <= {})", self.p1, self.p2),
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Catalog, popularity and cache/backhaul capacities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContentParams {
    #[serde(rename = "N")]
    pub n: usize,
    /// Popularity of files `1..=N`, stored at index `n - 1`.
    pub a: Vec<f64>,
    #[serde(rename = "K1c")]
    pub k1c: usize,
    #[serde(rename = "K2c")]
    pub k2c: usize,
    #[serde(rename = "K1b")]
    pub k1b: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContentWire {
    #[serde(rename = "N")]
    n: usize,
    a: Option<Vec<f64>>,
    gamma: Option<f64>,
    #[serde(rename = "K1c")]
    k1c: usize,
    #[serde(rename = "K2c")]
    k2c: usize,
    #[serde(rename = "K1b")]
    k1b: usize,
}

impl<'de> Deserialize<'de> for ContentParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = ContentWire::deserialize(d)?;
        let a = match (w.a, w.gamma) {
            (Some(_), Some(_)) => return Err(D::Error::custom("give either 'a' or 'gamma', not both")),
            (Some(a), None) => a,
            (None, Some(g)) => zipf_popularity(w.n, g).map_err(D::Error::custom)?,
            (None, None) => return Err(D::Error::custom("missing popularity: give 'a' or 'gamma'")),
        };
        Ok(ContentParams {
            n: w.n,
            a,
            k1c: w.k1c,
            k2c: w.k2c,
            k1b: w.k1b,
        })
    }
}

impl ContentParams {
    /// Builds content parameters with Zipf popularity.
    pub fn zipf(n: usize, gamma: f64, k1c: usize, k2c: usize, k1b: usize) -> Result<Self> {
        Ok(Self {
            n,
            a: zipf_popularity(n, gamma)?,
            k1c,
            k2c,
            k1b,
        })
    }

    /// Popularity of file `n` (1-based).
    pub fn pop(&self, n: usize) -> f64 {
        self.a[n - 1]
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.a.len() != self.n {
            v.push(Violation::new(
                "popularity-length",
                format!("popularity has {} entries but N = {}", self.a.len(), self.n),
            ));
        }
        for (i, &x) in self.a.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                v.push(Violation::new("popularity-range", format!("a_{} = {x} is not in (0,1)", i + 1)));
            }
        }
        let mut ties = 0;
        for (i, w) in self.a.windows(2).enumerate() {
            if w[1] > w[0] {
                v.push(Violation::new(
                    "popularity-order",
                    format!("a_{} = {} exceeds a_{} = {}", i + 2, w[1], i + 1, w[0]),
                ));
            } else if w[1] == w[0] {
                ties += 1;
            }
        }
        if ties > 0 {
            log::warn!("popularity has {ties} tied neighbours; ordering is not strict");
        }
        let s: f64 = self.a.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            v.push(Violation::new("popularity-sum", format!("popularity sums to {s}, expected 1")));
        }
        if self.k1c == 0 {
            v.push(Violation::new("macro-cache", "K1c must be at least 1"));
        }
        if self.k2c == 0 {
            v.push(Violation::new("pico-cache", "K2c must be at least 1"));
        }
        for (name, k) in [("K1c", self.k1c), ("K2c", self.k2c), ("K1b", self.k1b)] {
            if k >= self.n {
                v.push(Violation::new("capacity-below-catalog", format!("{name} = {k} must be below N = {}", self.n)));
            }
        }
        if self.k1c + self.k2c > self.n {
            v.push(Violation::new(
                "total-cache",
                format!("K1c + K2c = {} exceeds N = {}", self.k1c + self.k2c, self.n),
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Zipf popularity `a_n = n^-γ / Σ m^-γ` for `n = 1..=N`.
pub fn zipf_popularity(n: usize, gamma: f64) -> Result<Vec<f64>> {
    if n == 0 || !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("zipf needs N >= 1 and gamma >= 0 (N={n}, gamma={gamma})")));
    }
    let w: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-gamma)).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// A hybrid design as written in configuration files: `p` is dense over the
/// lexicographic combinations of `F2c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridDesign {
    #[serde(rename = "F1c")]
    pub f1c: Vec<usize>,
    #[serde(rename = "F2c")]
    pub f2c: Vec<usize>,
    pub p: Vec<f64>,
}

/// Per-file pico caching probabilities over `F2c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub files: Vec<usize>,
    pub values: Vec<f64>,
}

impl Marginals {
    pub fn new(files: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if files.len() != values.len() {
            return Err(Error::Size(format!(
                "{} files but {} marginal values",
                files.len(),
                values.len()
            )));
        }
        Ok(Self { files, values })
    }

    pub fn get(&self, n: usize) -> Option<f64> {
        self.files.iter().position(|&f| f == n).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.files.iter().copied().zip(self.values.iter().copied())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn violations(&self, k2c: usize) -> Vec<Violation> {
        let mut v = Vec::new();
        for (n, t) in self.iter() {
            if !(-1e-12..=1.0 + 1e-12).contains(&t) {
                v.push(Violation::new("marginal-range", format!("T_{n} = {t} is outside [0,1]")));
            }
        }
        let s = self.sum();
        if (s - k2c as f64).abs() > SUM_TOL * (1.0 + k2c as f64) {
            v.push(Violation::new("marginal-sum", format!("marginals sum to {s}, expected K2c = {k2c}")));
        }
        v
    }
}

/// A validated design with the backhaul set derived and the placement in
/// sparse form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design {
    #[serde(rename = "F1c")]
    pub f1c: Vec<usize>,
    #[serde(rename = "F2c")]
    pub f2c: Vec<usize>,
    #[serde(rename = "F1b")]
    pub f1b: Vec<usize>,
    pub placement: Placement,
    #[serde(rename = "T")]
    pub marginals: Marginals,
}

impl Design {
    /// Assembles a design from its parts, checking the set constraints.
    pub fn new(content: &ContentParams, f1c: Vec<usize>, f2c: Vec<usize>, placement: Placement) -> Result<Self> {
        let mut v = set_violations(content, &f1c, &f2c);
        if placement.k() != content.k2c {
            v.push(Violation::new(
                "placement-size",
                format!("placement stores {} files per pico, expected K2c = {}", placement.k(), content.k2c),
            ));
        }
        let f2c_set: BTreeSet<usize> = f2c.iter().copied().collect();
        for (combo, _) in placement.entries() {
            if combo.iter().any(|n| !f2c_set.contains(n)) {
                v.push(Violation::new("placement-support", format!("combination {combo:?} is not inside F2c")));
            }
        }
        v.extend(placement.violations());
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let f1b = backhaul_set(content.n, &f1c, &f2c);
        let marginals = placement.marginals(&f2c);
        Ok(Self {
            f1c,
            f2c,
            f1b,
            placement,
            marginals,
        })
    }

    /// Popularity mass per tier: (cached at macros, fetched, cached at picos).
    pub fn tier_mass(&self, content: &ContentParams) -> (f64, f64, f64) {
        let s = |set: &[usize]| set.iter().map(|&n| content.pop(n)).sum::<f64>();
        (s(&self.f1c), s(&self.f1b), s(&self.f2c))
    }
}

/// Files neither cached at macros nor at picos, in ascending order.
pub fn backhaul_set(n: usize, f1c: &[usize], f2c: &[usize]) -> Vec<usize> {
    let used: BTreeSet<usize> = f1c.iter().chain(f2c.iter()).copied().collect();
    (1..=n).filter(|i| !used.contains(i)).collect()
}

fn set_violations(content: &ContentParams, f1c: &[usize], f2c: &[usize]) -> Vec<Violation> {
    let mut v = Vec::new();
    for (name, set) in [("F1c", f1c), ("F2c", f2c)] {
        for &n in set {
            if n == 0 || n > content.n {
                v.push(Violation::new("file-range", format!("{name} contains file {n} outside 1..={}", content.n)));
            }
        }
        let uniq: BTreeSet<usize> = set.iter().copied().collect();
        if uniq.len() != set.len() {
            v.push(Violation::new("duplicate-file", format!("{name} lists a file more than once")));
        }
    }
    if f1c.len() != content.k1c {
        v.push(Violation::new(
            "macro-cache-size",
            format!("|F1c| ≠ K1c ({} vs {})", f1c.len(), content.k1c),
        ));
    }
    if f2c.windows(2).any(|w| w[0] >= w[1]) {
        v.push(Violation::new("pico-set-order", "F2c must be listed in strictly ascending order"));
    }
    let a: BTreeSet<usize> = f1c.iter().copied().collect();
    let common: Vec<usize> = f2c.iter().copied().filter(|n| a.contains(n)).collect();
    if !common.is_empty() {
        v.push(Violation::new("disjoint-tiers", format!("F1c and F2c share files {common:?}")));
    }
    if f2c.len() < content.k2c {
        v.push(Violation::new(
            "pico-set-size",
            format!("|F2c| = {} is below K2c = {}", f2c.len(), content.k2c),
        ));
    }
    v
}

/// Checks every constraint of a configured design and returns it with the
/// backhaul set attached, or the full list of violations.
pub fn validate_design(phy: &PhyParams, content: &ContentParams, design: &HybridDesign) -> Result<Design> {
    let mut v = phy.violations();
    v.extend(content.violations());
    v.extend(set_violations(content, &design.f1c, &design.f2c));
    if design.f2c.len() >= content.k2c && content.k2c > 0 {
        let count = binomial(design.f2c.len(), content.k2c);
        if count != design.p.len() as u128 {
            v.push(Violation::new(
                "p-simplex",
                format!(
                    "Σp ≠ 1 / length mismatch: p has {} entries but there are {count} combinations",
                    design.p.len()
                ),
            ));
        }
    }
    for (i, &x) in design.p.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            v.push(Violation::new("p-range", format!("p_{} = {x} is outside [0,1]", i + 1)));
        }
    }
    let s: f64 = design.p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        v.push(Violation::new("p-simplex", format!("Σp ≠ 1 (sum is {s})")));
    }
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let placement = Placement::from_dense(&design.f2c, content.k2c, &design.p)?;
    Design::new(content, design.f1c.clone(), design.f2c.clone(), placement)
}

/// Top-level configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub phy: PhyParams,
    pub content: ContentParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<HybridDesign>,
}

/// Reference configurations used by examples and tests.
pub mod presets {
    use super::*;

    /// Two-tier reference deployment: α = 4 on both tiers, a 15 dB macro power
    /// advantage, 20 MHz and a 20 kbit/s multicast target.
    pub fn reference_phy(snr_db: f64) -> PhyParams {
        PhyParams {
            lambda1: 5e-7,
            lambda2: 3e-6,
            lambda_u: 5e-5,
            p1: 10f64.powf(1.5),
            p2: 1.0,
            n0: 1.0 / db_to_linear(snr_db),
            alpha1: 4.0,
            alpha2: 4.0,
            w_hz: 20e6,
            tau: 2e4,
        }
    }

    /// Ten files with Zipf(1) popularity, K1c = 3, K2c = 2, K1b = 1.
    pub fn reference_content() -> ContentParams {
        ContentParams::zipf(10, 1.0, 3, 2, 1).expect("valid preset")
    }

    /// Macros cache {1,2,3}, picos draw from {4,5,6}, {7..10} are fetched.
    pub fn reference_design() -> HybridDesign {
        HybridDesign {
            f1c: vec![1, 2, 3],
            f2c: vec![4, 5, 6],
            p: vec![0.7, 0.2, 0.1],
        }
    }
}
