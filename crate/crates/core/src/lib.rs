//! Analysis, optimization and simulation of hybrid caching and multicasting
//! in two-tier cache-enabled heterogeneous wireless networks.
//!
//! Macro base stations cache a file set `F1c` and fetch up to `K1b` files of
//! `F1b` over the backhaul; pico base stations cache `K2c` files of `F2c`
//! drawn by a random placement `p`. Every active file is multicast once per
//! slot, and a user succeeds when its SINR clears the threshold set by the
//! cell's multicast load.

pub mod analysis;
pub mod baselines;
pub mod combinatorics;
pub mod error;
pub mod lp;
pub mod model;
pub mod numerics;
pub mod optimize;
pub mod simulate;

pub use analysis::{q_asymptotic, q_asymptotic_closed, q_general, ClosedForm, EvalReport, Kernels};
pub use error::{Error, Result, Violation};
pub use model::{validate_design, Config, ContentParams, Design, HybridDesign, Marginals, PhyParams};
pub use optimize::{near_optimal, OptConfig, Solution};
