mod error;
mod sweep;
mod table;

use clap::{Args, Parser, Subcommand, ValueEnum};
use error::{CliError, CliResult};
use hetcache::baselines::BaselineKind;
use hetcache::simulate::{monte_carlo_q, EdgePolicy, Scheme, SimConfig};
use hetcache::{near_optimal, q_asymptotic, q_general, validate_design, Config, OptConfig, Solution};
use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use sweep::{Point, SweepSpec};
use table::Row;

#[derive(Debug, Parser)]
#[command(name = "hetcache", version, about = "Hybrid caching design for two-tier multicast networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the success probability of the configured design.
    Analyze(Common),
    /// Search for a near-optimal design.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Score candidates with the interference-limited objective.
        #[arg(long)]
        asymptotic_scoring: bool,
    },
    /// Estimate the success probability of the configured design by simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Simulate the optimized design against the baselines on the same networks.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        /// Schemes to include, in column order.
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = SchemeName::all())]
        schemes: Vec<SchemeName>,
        #[arg(long)]
        asymptotic_scoring: bool,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// JSON file with `parameter`, `values` and optional `outputs`.
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    realizations: usize,
    /// Side of the square simulation window in metres.
    #[arg(long, default_value_t = hetcache::simulate::DEFAULT_WINDOW_SIDE)]
    window: f64,
    /// Wrap the window into a torus.
    #[arg(long)]
    torus: bool,
}

impl SimArgs {
    fn config(&self) -> CliResult<SimConfig> {
        if self.realizations == 0 {
            return Err(CliError::invalid("--realizations must be at least 1"));
        }
        let mut cfg = SimConfig::new(self.realizations, self.seed);
        cfg.window_side = self.window;
        if self.torus {
            cfg.edge_policy = EdgePolicy::Torus;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SchemeName {
    Proposed,
    MostPopular,
    IidPopularity,
    UniformCombination,
}

impl SchemeName {
    fn all() -> Vec<Self> {
        vec![Self::Proposed, Self::MostPopular, Self::IidPopularity, Self::UniformCombination]
    }

    fn baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Proposed => None,
            Self::MostPopular => Some(BaselineKind::MostPopular),
            Self::IidPopularity => Some(BaselineKind::IidPopularity),
            Self::UniformCombination => Some(BaselineKind::UniformCombination),
        }
    }
}

struct Input {
    points: Vec<Point>,
    outputs: Vec<String>,
    swept: bool,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn load(common: &Common) -> CliResult<Input> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::invalid("--threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let base: serde_json::Value = serde_json::from_str(&read(&common.config)?)
        .map_err(|e| CliError::invalid(format!("{}: {e}", common.config.display())))?;
    let spec = match &common.sweep {
        Some(p) => Some(SweepSpec::from_json(&read(p)?)?),
        None => None,
    };
    let points = sweep::expand(&base, spec.as_ref())?;
    for p in &points {
        p.config.phy.validate()?;
        p.config.content.validate()?;
    }
    Ok(Input {
        points,
        outputs: spec.as_ref().map(|s| s.outputs.clone()).unwrap_or_default(),
        swept: spec.is_some(),
    })
}

fn sink(out: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            source: e,
        })?),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Runs `f` on every point in parallel and returns the results in input
/// order, or the first error in input order.
fn per_point<T: Send>(points: &[Point], f: impl Fn(&Point) -> CliResult<T> + Sync + Send) -> CliResult<Vec<T>> {
    let out: Vec<CliResult<T>> = points.par_iter().map(f).collect();
    out.into_iter().collect()
}

fn opt_config(asymptotic_scoring: bool) -> OptConfig {
    OptConfig {
        asymptotic_scoring,
        ..OptConfig::default()
    }
}

fn design_of(cfg: &Config) -> CliResult<hetcache::Design> {
    let hd = cfg
        .design
        .as_ref()
        .ok_or_else(|| CliError::invalid("config has no 'design'; run 'optimize' first or add one"))?;
    Ok(validate_design(&cfg.phy, &cfg.content, hd)?)
}

fn analyze(common: &Common) -> CliResult<()> {
    let input = load(common)?;
    let rows = per_point(&input.points, |pt| {
        let cfg = &pt.config;
        let design = design_of(cfg)?;
        let general = q_general(&cfg.phy, &cfg.content, &design)?;
        let asym = q_asymptotic(&cfg.phy, &cfg.content, &design.f1c, &design.f2c, &design.marginals)?;
        let mut row = Row::new(&pt.parameter, &pt.value);
        row.num("q", general.q);
        row.num("q1", general.q1);
        row.num("q2", general.q2);
        row.num("q_inf", asym.q);
        row.num("q1_inf", asym.q1);
        row.num("q2_inf", asym.q2);
        row.per_file("q_file", &general.per_file);
        row.per_file("q_inf_file", &asym.per_file);
        Ok(row)
    })?;
    table::write_csv(sink(&common.out)?, &rows, &input.outputs)
}

#[derive(Serialize)]
struct SweptSolution<'a> {
    parameter: &'a str,
    value: &'a str,
    solution: &'a Solution,
}

fn summarize(pt: &Point, s: &Solution) {
    let d = &s.diagnostics;
    let at = if pt.parameter.is_empty() {
        String::new()
    } else {
        format!("{} = {}: ", pt.parameter, pt.value)
    };
    eprintln!(
        "{at}F1c={:?} F2c={:?} F1b={:?} q={:.6} q_inf={:.6} candidates {}/{} ({:?}) marginals via {}",
        s.f1c,
        s.f2c,
        s.f1b,
        s.q_general,
        s.q_asymptotic,
        d.candidates_after_prune,
        d.candidates_total,
        d.prune_rule,
        d.marginal_method
    );
    for f in &d.failures {
        eprintln!("{at}warning: {f}");
    }
}

fn optimize(common: &Common, asymptotic_scoring: bool) -> CliResult<()> {
    let input = load(common)?;
    let opt = opt_config(asymptotic_scoring);
    let start = Instant::now();
    let sols = per_point(&input.points, |pt| Ok(near_optimal(&pt.config.phy, &pt.config.content, &opt)?))?;
    let elapsed = start.elapsed();
    for (pt, s) in input.points.iter().zip(&sols) {
        summarize(pt, s);
    }
    eprintln!("wall time {:.3} s", elapsed.as_secs_f64());
    let mut w = sink(&common.out)?;
    if input.swept {
        let all: Vec<SweptSolution> = input
            .points
            .iter()
            .zip(&sols)
            .map(|(pt, s)| SweptSolution {
                parameter: &pt.parameter,
                value: &pt.value,
                solution: s,
            })
            .collect();
        serde_json::to_writer_pretty(&mut w, &all)?;
    } else {
        serde_json::to_writer_pretty(&mut w, &sols[0])?;
    }
    writeln!(w).map_err(|e| CliError::Io {
        path: "output".into(),
        source: e,
    })?;
    Ok(())
}

fn simulate(common: &Common, sim: &SimArgs) -> CliResult<()> {
    let sim_cfg = sim.config()?;
    let input = load(common)?;
    let rows = per_point(&input.points, |pt| {
        let cfg = &pt.config;
        let scheme = Scheme::Proposed(design_of(cfg)?);
        let est = monte_carlo_q(&cfg.phy, &cfg.content, &scheme, &sim_cfg)?;
        let mut row = Row::new(&pt.parameter, &pt.value);
        row.num("q_hat", est.q_hat);
        row.num("stderr", est.stderr);
        row.text("realizations", &est.realizations.to_string());
        row.text("seed", &sim_cfg.seed.to_string());
        row.per_file("q_hat_file", &est.per_file);
        Ok(row)
    })?;
    table::write_csv(sink(&common.out)?, &rows, &input.outputs)
}

fn compare(common: &Common, sim: &SimArgs, schemes: &[SchemeName], asymptotic_scoring: bool) -> CliResult<()> {
    if schemes.is_empty() {
        return Err(CliError::invalid("--schemes must name at least one scheme"));
    }
    let sim_cfg = sim.config()?;
    let input = load(common)?;
    let opt = opt_config(asymptotic_scoring);
    let rows = per_point(&input.points, |pt| {
        let cfg = &pt.config;
        let mut row = Row::new(&pt.parameter, &pt.value);
        row.text("realizations", &sim_cfg.realizations.to_string());
        row.text("seed", &sim_cfg.seed.to_string());
        for &name in schemes {
            let scheme = match name.baseline() {
                Some(kind) => Scheme::Baseline(kind),
                None => {
                    let sol = near_optimal(&cfg.phy, &cfg.content, &opt)?;
                    row.num("proposed_q_general", sol.q_general);
                    Scheme::Proposed(sol.design(&cfg.content)?)
                }
            };
            let est = monte_carlo_q(&cfg.phy, &cfg.content, &scheme, &sim_cfg)?;
            let label = scheme.label();
            row.num(&format!("{label}_q_hat"), est.q_hat);
            row.num(&format!("{label}_stderr"), est.stderr);
        }
        Ok(row)
    })?;
    table::write_csv(sink(&common.out)?, &rows, &input.outputs)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.cmd {
        Command::Analyze(c) => analyze(c),
        Command::Optimize {
            common,
            asymptotic_scoring,
        } => optimize(common, *asymptotic_scoring),
        Command::Simulate { common, sim } => simulate(common, sim),
        Command::Compare {
            common,
            sim,
            schemes,
            asymptotic_scoring,
        } => compare(common, sim, schemes, *asymptotic_scoring),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
