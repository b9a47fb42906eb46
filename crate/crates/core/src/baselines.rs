//! Comparison caching schemes, expressed as per-BS cache samplers for the
//! simulator.

use crate::error::{Error, Result};
use crate::model::ContentParams;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Every BS holds the most popular files.
    MostPopular,
    /// Files drawn i.i.d. with probability `a_n`; duplicates waste slots.
    IidPopularity,
    /// A uniformly random set of distinct files.
    UniformCombination,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [Self::MostPopular, Self::IidPopularity, Self::UniformCombination];

    pub fn name(self) -> &'static str {
        match self {
            Self::MostPopular => "most_popular",
            Self::IidPopularity => "iid_popularity",
            Self::UniformCombination => "uniform_combination",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Draws macro and pico cache contents for one baseline. Macro-BSs store and
/// fetch `K1c + K1b` slots, pico-BSs store `K2c`.
#[derive(Debug, Clone)]
pub struct BaselineSampler {
    kind: BaselineKind,
    n: usize,
    macro_slots: usize,
    pico_slots: usize,
    weights: WeightedIndex<f64>,
}

pub fn baseline_cache_assignment(kind: BaselineKind, content: &ContentParams) -> Result<BaselineSampler> {
    content.validate()?;
    let macro_slots = content.k1c + content.k1b;
    if macro_slots > content.n {
        return Err(Error::Size(format!(
            "K1c + K1b = {macro_slots} exceeds the catalog size N = {}",
            content.n
        )));
    }
    let weights = WeightedIndex::new(&content.a).map_err(|e| Error::Domain(format!("popularity weights: {e}")))?;
    Ok(BaselineSampler {
        kind,
        n: content.n,
        macro_slots,
        pico_slots: content.k2c,
        weights,
    })
}

impl BaselineSampler {
    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    fn draw<R: Rng + ?Sized>(&self, slots: usize, rng: &mut R) -> Vec<usize> {
        let mut out: Vec<usize> = match self.kind {
            BaselineKind::MostPopular => (1..=slots).collect(),
            BaselineKind::IidPopularity => (0..slots).map(|_| self.weights.sample(rng) + 1).collect(),
            BaselineKind::UniformCombination => rand::seq::index::sample(rng, self.n, slots)
                .into_iter()
                .map(|i| i + 1)
                .collect(),
        };
        out.sort_unstable();
        out
    }

    /// Files a macro-BS stores or fetches, as a sorted multiset.
    pub fn macro_set<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.draw(self.macro_slots, rng)
    }

    /// Files a pico-BS stores, as a sorted multiset.
    pub fn pico_set<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.draw(self.pico_slots, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{enumerate_combinations, rank_combination};
    use crate::model::presets::reference_content;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn most_popular_is_fixed() {
        let c = reference_content();
        let s = baseline_cache_assignment(BaselineKind::MostPopular, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert_eq!(s.macro_set(&mut rng), vec![1, 2, 3, 4]);
            assert_eq!(s.pico_set(&mut rng), vec![1, 2]);
        }
    }

    #[test]
    fn iid_duplicate_rate() {
        let c = reference_content();
        let s = baseline_cache_assignment(BaselineKind::IidPopularity, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 20_000;
        let dup = (0..draws)
            .filter(|_| {
                let p = s.pico_set(&mut rng);
                p[0] == p[1]
            })
            .count() as f64
            / draws as f64;
        let want: f64 = c.a.iter().map(|a| a * a).sum();
        let sd = (want * (1.0 - want) / draws as f64).sqrt();
        assert!((dup - want).abs() < 4.0 * sd, "{dup} vs {want}");
    }

    #[test]
    fn iid_marginals_follow_popularity() {
        let c = reference_content();
        let s = baseline_cache_assignment(BaselineKind::IidPopularity, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let mut counts = vec![0usize; 11];
        for _ in 0..draws {
            for f in s.macro_set(&mut rng) {
                counts[f] += 1;
            }
        }
        let slots = (draws * 4) as f64;
        for n in 1..=10 {
            let p = c.pop(n);
            let sd = (p * (1.0 - p) / slots).sqrt();
            assert!((counts[n] as f64 / slots - p).abs() < 3.0 * sd + 1e-12, "file {n}");
        }
    }

    #[test]
    fn uniform_combinations_equiprobable() {
        let c = reference_content();
        let s = baseline_cache_assignment(BaselineKind::UniformCombination, &c).unwrap();
        let idx = enumerate_combinations(&(1..=10).collect::<Vec<_>>(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 45_000;
        let mut counts = vec![0usize; idx.len()];
        for _ in 0..draws {
            let p = s.pico_set(&mut rng);
            assert!(p[0] < p[1]);
            counts[rank_combination(&idx, &p).unwrap()] += 1;
        }
        let p = 1.0 / idx.len() as f64;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        for k in counts {
            assert!((k as f64 / draws as f64 - p).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn oversized_macro_rejected() {
        let c = ContentParams::zipf(5, 1.0, 3, 1, 3).unwrap();
        assert!(baseline_cache_assignment(BaselineKind::UniformCombination, &c).is_err());
    }
}
