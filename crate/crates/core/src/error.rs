use thiserror::Error;

/// A single violated constraint, tagged with the constraint it comes from.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub constraint: &'static str,
    pub message: String,
}

impl Violation {
    pub fn new(constraint: &'static str, message: impl Into<String>) -> Self {
        Self {
            constraint,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.constraint, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: estimated error {estimate:.3e} after {subdivisions} subdivisions")]
    Convergence { estimate: f64, subdivisions: usize },

    #[error("target {target} is not bracketed by [{g_lo}, {g_hi}]")]
    Bracket { target: f64, g_lo: f64, g_hi: f64 },

    #[error("validation failed:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("size error: {0}")]
    Size(String),

    #[error("file {0} is not served by the requested tier")]
    Membership(usize),

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("{count} combinations exceeds the cap of {cap}; use the marginal (T) workflow instead")]
    TooManyCombinations { count: u128, cap: u128 },

    #[error("file {0} is never cached in the pico tier (T = 0)")]
    NeverCached(usize),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
