//! K-subsets of the pico file set, marginal maps and placement distributions.

use crate::error::{Error, Result, Violation};
use crate::lp;
use crate::model::{Marginals, SUM_TOL};
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

/// Default refusal threshold for explicit combination enumeration.
pub const DEFAULT_COMBINATION_CAP: u128 = 2_000_000;

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All `k`-subsets of `files` in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationIndex {
    files: Vec<usize>,
    k: usize,
    flat: Vec<usize>,
    /// `containing[j]` lists the combinations holding `files[j]`.
    containing: Vec<Vec<usize>>,
}

impl CombinationIndex {
    pub fn files(&self) -> &[usize] {
        &self.files
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of combinations.
    pub fn len(&self) -> usize {
        if self.k == 0 {
            1
        } else {
            self.flat.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn combo(&self, i: usize) -> &[usize] {
        &self.flat[i * self.k..(i + 1) * self.k]
    }

    pub fn combos(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.len()).map(move |i| self.combo(i))
    }

    pub fn file_position(&self, n: usize) -> Option<usize> {
        self.files.binary_search(&n).ok()
    }

    /// Indices of the combinations that contain file `n`.
    pub fn containing(&self, n: usize) -> Option<&[usize]> {
        self.file_position(n).map(|j| self.containing[j].as_slice())
    }
}

/// Enumerates the `k`-subsets of `files` (sorted ascending) lexicographically.
pub fn enumerate_combinations(files: &[usize], k: usize) -> Result<CombinationIndex> {
    enumerate_combinations_capped(files, k, DEFAULT_COMBINATION_CAP)
}

pub fn enumerate_combinations_capped(files: &[usize], k: usize, cap: u128) -> Result<CombinationIndex> {
    if k == 0 || files.len() < k {
        return Err(Error::Size(format!(
            "cannot choose {k} files out of {} (need 1 <= K <= |set|)",
            files.len()
        )));
    }
    if files.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Size("file set must be strictly ascending".into()));
    }
    let count = binomial(files.len(), k);
    if count > cap {
        return Err(Error::TooManyCombinations { count, cap });
    }
    let count = count as usize;
    let mut flat = Vec::with_capacity(count * k);
    let mut containing = vec![Vec::with_capacity(count * k / files.len() + 1); files.len()];
    let mut pos: Vec<usize> = (0..k).collect();
    let f = files.len();
    for idx in 0..count {
        for &j in &pos {
            flat.push(files[j]);
            containing[j].push(idx);
        }
        // advance to the next combination of positions
        let mut i = k;
        while i > 0 {
            i -= 1;
            if pos[i] < f - k + i {
                pos[i] += 1;
                for j in i + 1..k {
                    pos[j] = pos[j - 1] + 1;
                }
                break;
            }
        }
    }
    Ok(CombinationIndex {
        files: files.to_vec(),
        k,
        flat,
        containing,
    })
}

/// Per-file caching probabilities `T_n = Σ_{i ∋ n} p_i`.
pub fn marginals_from_p(idx: &CombinationIndex, p: &[f64]) -> Result<Marginals> {
    if p.len() != idx.len() {
        return Err(Error::Size(format!("p has {} entries for {} combinations", p.len(), idx.len())));
    }
    let values = idx
        .containing
        .iter()
        .map(|c| c.iter().map(|&i| p[i]).sum())
        .collect();
    Marginals::new(idx.files.clone(), values)
}

/// Builds the equality system `[marginal rows; Σp = 1]` over the combinations.
pub(crate) fn marginal_system(idx: &CombinationIndex, t: &Marginals) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if t.files != idx.files {
        return Err(Error::Size("marginals and combination index cover different files".into()));
    }
    let n = idx.len();
    let mut a = Vec::with_capacity(idx.files.len() + 1);
    let mut b = Vec::with_capacity(idx.files.len() + 1);
    for (j, c) in idx.containing.iter().enumerate() {
        let mut row = vec![0.0; n];
        for &i in c {
            row[i] = 1.0;
        }
        a.push(row);
        b.push(t.values[j]);
    }
    a.push(vec![1.0; n]);
    b.push(1.0);
    Ok((a, b))
}

/// A placement distribution whose marginals equal `t`, found by phase-1
/// simplex (so the result is a vertex of the feasible set).
pub fn feasible_p_from_t(idx: &CombinationIndex, t: &Marginals, tol: f64) -> Result<Vec<f64>> {
    let viol = t.violations(idx.k);
    if !viol.is_empty() {
        return Err(Error::Infeasible(
            viol.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        ));
    }
    let (a, b) = marginal_system(idx, t)?;
    let sol = lp::find_feasible(&a, &b, idx.len(), tol)?;
    Ok(normalize(sol.x))
}

pub(crate) fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    for x in p.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        for x in p.iter_mut() {
            *x /= s;
        }
    }
    p
}

/// Sparse distribution over pico cache contents: each entry is a sorted
/// `K2c`-subset and its probability. Zero-probability entries are omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    k: usize,
    entries: Vec<(Vec<usize>, f64)>,
}

impl Placement {
    pub fn new(k: usize, entries: Vec<(Vec<usize>, f64)>) -> Self {
        let entries = entries.into_iter().filter(|(_, p)| *p > 0.0).collect();
        Self { k, entries }
    }

    /// Converts a dense `p` over the lexicographic combinations of `files`.
    pub fn from_dense(files: &[usize], k: usize, p: &[f64]) -> Result<Self> {
        let idx = enumerate_combinations(files, k)?;
        Self::from_index(&idx, p)
    }

    pub fn from_index(idx: &CombinationIndex, p: &[f64]) -> Result<Self> {
        if p.len() != idx.len() {
            return Err(Error::Size(format!("p has {} entries for {} combinations", p.len(), idx.len())));
        }
        let entries = idx
            .combos()
            .zip(p)
            .filter(|(_, &x)| x > 0.0)
            .map(|(c, &x)| (c.to_vec(), x))
            .collect();
        Ok(Self { k: idx.k, entries })
    }

    /// Dense vector over `idx`; fails if an entry is not one of its combinations.
    pub fn to_dense(&self, idx: &CombinationIndex) -> Result<Vec<f64>> {
        let mut p = vec![0.0; idx.len()];
        for (combo, x) in &self.entries {
            let i = rank_combination(idx, combo)
                .ok_or_else(|| Error::Size(format!("combination {combo:?} is not in the index")))?;
            p[i] += x;
        }
        Ok(p)
    }

    /// Systematic (ordered) sampling design: lays the marginals end to end on
    /// `[0, K)` and reads off the files hit by `u, u+1, …, u+K-1`. Uses at most
    /// `|files| + 1` combinations and reproduces `t` exactly.
    pub fn systematic(t: &Marginals, k: usize) -> Result<Self> {
        let viol = t.violations(k);
        if !viol.is_empty() {
            return Err(Error::Infeasible(
                viol.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            ));
        }
        let total: f64 = t.sum();
        let scale = k as f64 / total;
        let mut cum = Vec::with_capacity(t.files.len() + 1);
        cum.push(0.0);
        for &v in &t.values {
            let last = *cum.last().unwrap();
            cum.push(last + v.clamp(0.0, 1.0) * scale);
        }
        *cum.last_mut().unwrap() = k as f64;
        for c in cum.iter_mut() {
            *c = c.min(k as f64);
            if (*c - c.round()).abs() < 1e-12 {
                *c = c.round();
            }
        }
        let mut cuts: Vec<f64> = cum.iter().map(|c| c - c.floor()).collect();
        cuts.push(0.0);
        cuts.push(1.0);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let mut entries: Vec<(Vec<usize>, f64)> = Vec::new();
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 1e-15 {
                continue;
            }
            let u = 0.5 * (w[0] + w[1]);
            let mut combo = Vec::with_capacity(k);
            let mut j = 0;
            for m in 0..k {
                let point = u + m as f64;
                while j + 2 < cum.len() && cum[j + 1] <= point {
                    j += 1;
                }
                combo.push(t.files[j]);
            }
            if let Some(e) = entries.iter_mut().find(|(c, _)| *c == combo) {
                e.1 += len;
            } else {
                entries.push((combo, len));
            }
        }
        Ok(Self::new(k, entries))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn marginals(&self, files: &[usize]) -> Marginals {
        let mut values = vec![0.0; files.len()];
        for (combo, x) in &self.entries {
            for n in combo {
                if let Ok(j) = files.binary_search(n) {
                    values[j] += x;
                }
            }
        }
        Marginals {
            files: files.to_vec(),
            values,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (combo, x) in &self.entries {
            if combo.len() != self.k || combo.windows(2).any(|w| w[0] >= w[1]) {
                v.push(Violation::new(
                    "placement-combination",
                    format!("{combo:?} is not a sorted set of {} distinct files", self.k),
                ));
            }
            if !(0.0..=1.0).contains(x) {
                v.push(Violation::new("p-range", format!("probability {x} of {combo:?} is outside [0,1]")));
            }
        }
        let s: f64 = self.entries.iter().map(|e| e.1).sum();
        if (s - 1.0).abs() > SUM_TOL {
            v.push(Violation::new("p-simplex", format!("Σp ≠ 1 (sum is {s})")));
        }
        v
    }

    /// Cumulative weights for inverse-CDF sampling.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.entries
            .iter()
            .map(|(_, x)| {
                acc += x;
                acc
            })
            .collect()
    }
}

impl Serialize for Placement {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.entries.len()))?;
        for (combo, x) in &self.entries {
            let key = combo.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
            m.serialize_entry(&key, x)?;
        }
        m.end()
    }
}

/// Position of a sorted combination in the lexicographic order of `idx`.
pub fn rank_combination(idx: &CombinationIndex, combo: &[usize]) -> Option<usize> {
    if combo.len() != idx.k {
        return None;
    }
    let f = idx.files.len();
    let k = idx.k;
    let mut rank: u128 = 0;
    let mut prev: Option<usize> = None;
    for (i, n) in combo.iter().enumerate() {
        let pos = idx.file_position(*n)?;
        let start = prev.map_or(0, |p| p + 1);
        if pos < start {
            return None;
        }
        for skipped in start..pos {
            rank += binomial(f - skipped - 1, k - i - 1);
        }
        prev = Some(pos);
    }
    Some(rank as usize)
}
