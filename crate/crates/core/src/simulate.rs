//! Monte Carlo simulator: Poisson worlds of macro- and pico-BSs, content-centric
//! association, per-cell multicast loads with the backhaul limit, and the
//! rate test at a typical user placed at the window center.

use crate::baselines::{baseline_cache_assignment, BaselineKind, BaselineSampler};
use crate::error::{Error, Result};
use crate::model::{ContentParams, Design, PhyParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

pub const DEFAULT_WINDOW_SIDE: f64 = 15_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Interferers only inside the window.
    #[default]
    Plain,
    /// Window wrapped into a torus, removing the edge bias.
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Score every file on each world and weight by popularity.
    #[default]
    Stratified,
    /// Draw the typical user's request and score only that file.
    Naive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub window_side: f64,
    pub realizations: usize,
    pub seed: u64,
    #[serde(default)]
    pub edge_policy: EdgePolicy,
    #[serde(default)]
    pub estimator: Estimator,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(realizations: usize, seed: u64) -> Self {
        Self {
            window_side: DEFAULT_WINDOW_SIDE,
            realizations,
            seed,
            edge_policy: EdgePolicy::Plain,
            estimator: Estimator::Stratified,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_side > 0.0) || !self.window_side.is_finite() {
            return Err(Error::Domain(format!("window_side must be positive, got {}", self.window_side)));
        }
        if self.realizations == 0 {
            return Err(Error::Domain("realizations must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Domain("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// What the BSs cache.
#[derive(Debug, Clone)]
pub enum Scheme {
    Proposed(Design),
    Baseline(BaselineKind),
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::Proposed(_) => "proposed".into(),
            Scheme::Baseline(k) => k.name().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Macro,
    Pico,
}

// substream purposes
const GEOMETRY: u64 = 0;
const CACHES: u64 = 1;
const FADING: u64 = 2;
const USERS: u64 = 3;
const LOTTERY: u64 = 4;
const REQUEST: u64 = 5;

fn substream(seed: u64, replicate: u64, purpose: u64, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 24) | (purpose << 20) | (sub & 0xF_FFFF));
    rng
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

/// Uniform bucket grid for nearest-neighbour queries on the window, with
/// optional wrap-around.
#[derive(Debug, Clone)]
struct PointGrid {
    half: f64,
    side: f64,
    cells: usize,
    cell: f64,
    buckets: Vec<Vec<u32>>,
    torus: bool,
}

impl PointGrid {
    fn new(pts: &[[f64; 2]], ids: impl Iterator<Item = u32>, side: f64, torus: bool) -> Self {
        let ids: Vec<u32> = ids.collect();
        let cells = ((ids.len() as f64 / 2.0).sqrt().ceil() as usize).clamp(1, 256);
        let cell = side / cells as f64;
        let mut buckets = vec![Vec::new(); cells * cells];
        let half = side / 2.0;
        for id in ids {
            let p = pts[id as usize];
            let cx = (((p[0] + half) / cell) as usize).min(cells - 1);
            let cy = (((p[1] + half) / cell) as usize).min(cells - 1);
            buckets[cy * cells + cx].push(id);
        }
        Self {
            half,
            side,
            cells,
            cell,
            buckets,
            torus,
        }
    }

    fn dist2(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let mut dx = (a[0] - b[0]).abs();
        let mut dy = (a[1] - b[1]).abs();
        if self.torus {
            dx = dx.min(self.side - dx);
            dy = dy.min(self.side - dy);
        }
        dx * dx + dy * dy
    }

    /// Nearest point id and squared distance; ties go to the lower id.
    fn nearest(&self, pts: &[[f64; 2]], q: [f64; 2]) -> Option<(u32, f64)> {
        let n = self.cells as i64;
        let cx = (((q[0] + self.half) / self.cell) as i64).clamp(0, n - 1);
        let cy = (((q[1] + self.half) / self.cell) as i64).clamp(0, n - 1);
        let mut best: Option<(u32, f64)> = None;
        let max_ring = if self.torus { n / 2 + 1 } else { n };
        for r in 0..=max_ring {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let (mut x, mut y) = (cx + dx, cy + dy);
                    if self.torus {
                        x = x.rem_euclid(n);
                        y = y.rem_euclid(n);
                    } else if x < 0 || y < 0 || x >= n || y >= n {
                        continue;
                    }
                    for &id in &self.buckets[(y * n + x) as usize] {
                        let d = self.dist2(pts[id as usize], q);
                        let better = match best {
                            None => true,
                            Some((bid, bd)) => d < bd || (d == bd && id < bid),
                        };
                        if better {
                            best = Some((id, d));
                        }
                    }
                }
            }
            if let Some((_, bd)) = best {
                let reach = r as f64 * self.cell;
                if bd < reach * reach {
                    break;
                }
            }
        }
        best
    }
}

/// Role of a file under the proposed design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Cached,
    Fetched,
    Pico,
}

#[derive(Debug, Clone)]
enum MacroStore {
    /// Proposed design: every macro caches `F1c` and may fetch from `F1b`.
    Shared { role: Vec<Role>, k1b: usize },
    /// Baselines: each macro stores and serves its own multiset.
    PerBs(Vec<Vec<usize>>),
}

/// One sampled world.
#[derive(Debug, Clone)]
pub struct NetworkRealization {
    pub replicate: u64,
    /// Macro positions first, then picos; ids index this vector.
    pub positions: Vec<[f64; 2]>,
    pub macro_count: usize,
    /// Files held by each pico-BS (indexed by pico id minus `macro_count`).
    pub pico_cache: Vec<Vec<usize>>,
    /// Unit-mean exponential power gain from each BS to the typical user.
    pub fading: Vec<f64>,
    macro_store: MacroStore,
    /// Grid per file and tier over the BSs that can serve it.
    grids: Vec<[Option<PointGrid>; 2]>,
    cross_tier: bool,
    interference_total: f64,
}

/// How the typical user's request is handled on one world.
#[derive(Debug, Clone, PartialEq)]
pub struct Service {
    pub tier: Tier,
    pub bs: usize,
    pub distance: f64,
    /// Number of files the serving BS multicasts.
    pub load: usize,
    /// False when the file loses the backhaul lottery.
    pub transmitted: bool,
}

struct Params {
    power: [f64; 2],
    alpha: [f64; 2],
}

impl Params {
    fn new(phy: &PhyParams) -> Self {
        Self {
            power: [phy.p1, phy.p2],
            alpha: [phy.alpha1, phy.alpha2],
        }
    }

    fn rx(&self, tier: Tier, d2: f64) -> f64 {
        let t = tier as usize;
        self.power[t] * d2.powf(-self.alpha[t] / 2.0)
    }
}

impl NetworkRealization {
    pub fn sample(
        phy: &PhyParams,
        content: &ContentParams,
        scheme: &Scheme,
        cfg: &SimConfig,
        replicate: u64,
    ) -> Result<Self> {
        let sampler = match scheme {
            Scheme::Baseline(k) => Some(baseline_cache_assignment(*k, content)?),
            Scheme::Proposed(_) => None,
        };
        Ok(Self::sample_with(phy, content, scheme, sampler.as_ref(), cfg, replicate))
    }

    fn sample_with(
        phy: &PhyParams,
        content: &ContentParams,
        scheme: &Scheme,
        sampler: Option<&BaselineSampler>,
        cfg: &SimConfig,
        replicate: u64,
    ) -> Self {
        let side = cfg.window_side;
        let half = side / 2.0;
        let area = side * side;
        let torus = cfg.edge_policy == EdgePolicy::Torus;
        let mut geo = substream(cfg.seed, replicate, GEOMETRY, 0);
        let m = poisson(phy.lambda1 * area, &mut geo);
        let p = poisson(phy.lambda2 * area, &mut geo);
        let mut positions = Vec::with_capacity(m + p);
        for _ in 0..m + p {
            positions.push([geo.random::<f64>() * side - half, geo.random::<f64>() * side - half]);
        }

        let mut cache_rng = substream(cfg.seed, replicate, CACHES, 0);
        let n = content.n;
        let (macro_store, pico_cache) = match (scheme, sampler) {
            (Scheme::Proposed(d), _) => {
                let mut role = vec![Role::Pico; n + 1];
                for &f in &d.f1c {
                    role[f] = Role::Cached;
                }
                for &f in &d.f1b {
                    role[f] = Role::Fetched;
                }
                let cum = d.placement.cumulative();
                let entries = d.placement.entries();
                let picos: Vec<Vec<usize>> = (0..p)
                    .map(|_| {
                        let u: f64 = cache_rng.random();
                        let i = cum.partition_point(|&c| c <= u).min(entries.len() - 1);
                        entries[i].0.clone()
                    })
                    .collect();
                (MacroStore::Shared { role, k1b: content.k1b }, picos)
            }
            (Scheme::Baseline(_), Some(s)) => {
                let macros = (0..m).map(|_| s.macro_set(&mut cache_rng)).collect();
                let picos: Vec<Vec<usize>> = (0..p).map(|_| s.pico_set(&mut cache_rng)).collect();
                (MacroStore::PerBs(macros), picos)
            }
            (Scheme::Baseline(_), None) => unreachable!("baseline sampler is built by the caller"),
        };

        let mut fade = substream(cfg.seed, replicate, FADING, 0);
        let fading: Vec<f64> = (0..m + p).map(|_| Exp1.sample(&mut fade)).collect();

        let par = Params::new(phy);
        let dist2 = |a: [f64; 2]| -> f64 {
            let mut dx = a[0].abs();
            let mut dy = a[1].abs();
            if torus {
                dx = dx.min(side - dx);
                dy = dy.min(side - dy);
            }
            dx * dx + dy * dy
        };
        let mut interference_total = 0.0;
        for (i, pos) in positions.iter().enumerate() {
            let tier = if i < m { Tier::Macro } else { Tier::Pico };
            interference_total += fading[i] * par.rx(tier, dist2(*pos));
        }

        // per-file grids of qualifying BSs
        let mut per_file_macro: Vec<Vec<u32>> = vec![Vec::new(); n + 1];
        let mut per_file_pico: Vec<Vec<u32>> = vec![Vec::new(); n + 1];
        for (j, files) in pico_cache.iter().enumerate() {
            let mut last = 0;
            for &f in files {
                if f != last {
                    per_file_pico[f].push((m + j) as u32);
                    last = f;
                }
            }
        }
        let cross_tier = matches!(scheme, Scheme::Baseline(_));
        let mut grids: Vec<[Option<PointGrid>; 2]> = (0..=n).map(|_| [None, None]).collect();
        match &macro_store {
            MacroStore::Shared { role, .. } => {
                let all = PointGrid::new(&positions, 0..m as u32, side, torus);
                for f in 1..=n {
                    if role[f] == Role::Pico {
                        if !per_file_pico[f].is_empty() {
                            grids[f][1] =
                                Some(PointGrid::new(&positions, per_file_pico[f].iter().copied(), side, torus));
                        }
                    } else if m > 0 {
                        grids[f][0] = Some(all.clone());
                    }
                }
            }
            MacroStore::PerBs(sets) => {
                for (i, files) in sets.iter().enumerate() {
                    let mut last = 0;
                    for &f in files {
                        if f != last {
                            per_file_macro[f].push(i as u32);
                            last = f;
                        }
                    }
                }
                for f in 1..=n {
                    if !per_file_macro[f].is_empty() {
                        grids[f][0] = Some(PointGrid::new(&positions, per_file_macro[f].iter().copied(), side, torus));
                    }
                    if !per_file_pico[f].is_empty() {
                        grids[f][1] = Some(PointGrid::new(&positions, per_file_pico[f].iter().copied(), side, torus));
                    }
                }
            }
        }

        Self {
            replicate,
            positions,
            macro_count: m,
            pico_cache,
            fading,
            macro_store,
            grids,
            cross_tier,
            interference_total,
        }
    }

    pub fn pico_count(&self) -> usize {
        self.positions.len() - self.macro_count
    }

    fn tier_of(&self, id: usize) -> Tier {
        if id < self.macro_count {
            Tier::Macro
        } else {
            Tier::Pico
        }
    }

    /// BS a requester of file `f` at `q` associates with, and the squared
    /// distance to it.
    fn associate(&self, par: &Params, f: usize, q: [f64; 2]) -> Option<(usize, f64)> {
        let [mg, pg] = &self.grids[f];
        let macro_best = mg.as_ref().and_then(|g| g.nearest(&self.positions, q));
        let pico_best = pg.as_ref().and_then(|g| g.nearest(&self.positions, q));
        match (macro_best, pico_best) {
            (None, None) => None,
            (Some((i, d)), None) | (None, Some((i, d))) => Some((i as usize, d)),
            (Some((i, di)), Some((j, dj))) => {
                debug_assert!(self.cross_tier);
                let (ri, rj) = (par.rx(Tier::Macro, di), par.rx(Tier::Pico, dj));
                let pick_macro = ri > rj || (ri == rj && (di < dj || (di == dj && i < j)));
                Some(if pick_macro { (i as usize, di) } else { (j as usize, dj) })
            }
        }
    }

    fn stores(&self, bs: usize, f: usize) -> bool {
        if bs >= self.macro_count {
            return self.pico_cache[bs - self.macro_count].contains(&f);
        }
        match &self.macro_store {
            MacroStore::Shared { role, .. } => role[f] != Role::Pico,
            MacroStore::PerBs(sets) => sets[bs].contains(&f),
        }
    }

    /// For every file, the BS serving a typical user at the origin that
    /// requests it, together with its load and lottery outcome.
    pub fn schedule(&self, phy: &PhyParams, content: &ContentParams, cfg: &SimConfig) -> Vec<Option<Service>> {
        let par = Params::new(phy);
        let n = content.n;
        let side = cfg.window_side;
        let half = side / 2.0;
        let area = side * side;
        let serving: Vec<Option<(usize, f64)>> =
            (0..=n).map(|f| if f == 0 { None } else { self.associate(&par, f, [0.0, 0.0]) }).collect();
        let mut cands: Vec<usize> = serving.iter().flatten().map(|s| s.0).collect();
        cands.sort_unstable();
        cands.dedup();
        let slot: HashMap<usize, usize> = cands.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let mut marks = vec![vec![false; n + 1]; cands.len()];

        for f in 1..=n {
            let mut pending = cands.iter().filter(|&&b| self.stores(b, f)).count();
            if pending == 0 {
                continue;
            }
            let mut rng = substream(cfg.seed, self.replicate, USERS, f as u64);
            let users = poisson(content.pop(f) * phy.lambda_u * area, &mut rng);
            for _ in 0..users {
                let q = [rng.random::<f64>() * side - half, rng.random::<f64>() * side - half];
                if let Some((b, _)) = self.associate(&par, f, q) {
                    if let Some(&s) = slot.get(&b) {
                        if !marks[s][f] {
                            marks[s][f] = true;
                            pending -= 1;
                            if pending == 0 {
                                break;
                            }
                        }
                    }
                }
            }
        }

        // backhaul priority order per candidate macro
        let mut priority: HashMap<usize, Vec<usize>> = HashMap::new();
        if let MacroStore::Shared { role, .. } = &self.macro_store {
            let fetched: Vec<usize> = (1..=n).filter(|&f| role[f] == Role::Fetched).collect();
            let mut lot = substream(cfg.seed, self.replicate, LOTTERY, 0);
            for &b in cands.iter().filter(|&&b| b < self.macro_count) {
                let mut order = fetched.clone();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut lot);
                priority.insert(b, order);
            }
        }

        (0..=n)
            .map(|f| {
                let (b, d2) = serving[f]?;
                let s = slot[&b];
                let mut req = marks[s].clone();
                req[f] = true;
                let tier = self.tier_of(b);
                let (load, transmitted) = match (&self.macro_store, tier) {
                    (MacroStore::Shared { role, k1b }, Tier::Macro) => {
                        let kc = (1..=n).filter(|&g| req[g] && role[g] == Role::Cached).count();
                        let kb = (1..=n).filter(|&g| req[g] && role[g] == Role::Fetched).count();
                        let transmitted = role[f] != Role::Fetched
                            || priority[&b].iter().filter(|&&g| req[g]).take(*k1b).any(|&g| g == f);
                        (kc + kb.min(*k1b), transmitted)
                    }
                    _ => ((1..=n).filter(|&g| req[g]).count(), true),
                };
                Some(Service {
                    tier,
                    bs: b,
                    distance: d2.sqrt(),
                    load,
                    transmitted,
                })
            })
            .collect()
    }

    /// Whether the typical user decodes its file under `service`.
    pub fn success(&self, phy: &PhyParams, service: &Service) -> bool {
        if !service.transmitted {
            return false;
        }
        let par = Params::new(phy);
        let signal = self.fading[service.bs] * par.rx(service.tier, service.distance * service.distance);
        let interference = (self.interference_total - signal).max(0.0);
        let sinr = signal / (interference + phy.n0);
        sinr >= phy.sinr_threshold(service.load)
    }
}

/// Success of the typical user for every file (index 0 unused).
pub fn evaluate_realization(
    world: &NetworkRealization,
    phy: &PhyParams,
    content: &ContentParams,
    cfg: &SimConfig,
) -> Vec<bool> {
    world
        .schedule(phy, content, cfg)
        .iter()
        .map(|s| s.as_ref().is_some_and(|s| world.success(phy, s)))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub q_hat: f64,
    pub stderr: f64,
    /// Success frequency conditioned on each requested file.
    pub per_file: BTreeMap<usize, f64>,
    pub realizations: usize,
    pub estimator: Estimator,
}

struct Replicate {
    score: f64,
    hits: Vec<f64>,
    asked: Vec<f64>,
}

fn run_replicate(
    phy: &PhyParams,
    content: &ContentParams,
    scheme: &Scheme,
    sampler: Option<&BaselineSampler>,
    cfg: &SimConfig,
    r: u64,
) -> Replicate {
    let n = content.n;
    let world = NetworkRealization::sample_with(phy, content, scheme, sampler, cfg, r);
    match cfg.estimator {
        Estimator::Stratified => {
            let ok = evaluate_realization(&world, phy, content, cfg);
            let hits: Vec<f64> = ok.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let score = (1..=n).map(|f| content.pop(f) * hits[f]).sum();
            Replicate {
                score,
                hits,
                asked: vec![1.0; n + 1],
            }
        }
        Estimator::Naive => {
            let mut rng = substream(cfg.seed, r, REQUEST, 0);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut f = n;
            for g in 1..=n {
                acc += content.pop(g);
                if u < acc {
                    f = g;
                    break;
                }
            }
            let ok = evaluate_realization(&world, phy, content, cfg)[f];
            let mut hits = vec![0.0; n + 1];
            let mut asked = vec![0.0; n + 1];
            asked[f] = 1.0;
            hits[f] = if ok { 1.0 } else { 0.0 };
            Replicate {
                score: hits[f],
                hits,
                asked,
            }
        }
    }
}

/// Mean success of the typical user over independent worlds. Results are
/// identical for any thread count.
pub fn monte_carlo_q(phy: &PhyParams, content: &ContentParams, scheme: &Scheme, cfg: &SimConfig) -> Result<McEstimate> {
    phy.check_kernel_domain()?;
    content.validate()?;
    cfg.validate()?;
    if phy.lambda1 * cfg.window_side * cfg.window_side < 20.0 {
        log::warn!(
            "window of side {} m holds few macro-BSs on average; edge effects will inflate the estimate",
            cfg.window_side
        );
    }
    let sampler = match scheme {
        Scheme::Baseline(k) => Some(baseline_cache_assignment(*k, content)?),
        Scheme::Proposed(_) => None,
    };
    let work = || -> Vec<Replicate> {
        (0..cfg.realizations as u64)
            .into_par_iter()
            .map(|r| run_replicate(phy, content, scheme, sampler.as_ref(), cfg, r))
            .collect()
    };
    let reps = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let n = content.n;
    let count = reps.len() as f64;
    let mut sum = 0.0;
    let mut hits = vec![0.0; n + 1];
    let mut asked = vec![0.0; n + 1];
    for r in &reps {
        sum += r.score;
        for f in 1..=n {
            hits[f] += r.hits[f];
            asked[f] += r.asked[f];
        }
    }
    let mean = sum / count;
    let mut ss = 0.0;
    for r in &reps {
        ss += (r.score - mean).powi(2);
    }
    let stderr = if reps.len() > 1 { (ss / (count - 1.0) / count).sqrt() } else { 0.0 };
    let per_file = (1..=n)
        .map(|f| (f, if asked[f] > 0.0 { hits[f] / asked[f] } else { f64::NAN }))
        .collect();
    Ok(McEstimate {
        q_hat: mean,
        stderr,
        per_file,
        realizations: reps.len(),
        estimator: cfg.estimator,
    })
}
