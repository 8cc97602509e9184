//! Command-line driver: configuration, subcommand dispatch and artifact
//! output (CSV, SVG, run manifest).

pub mod commands;
pub mod config;
pub mod svg;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use config::RunConfig;
use config::{EstimatorName, ModeName, ModelName};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "BMCKDE_OUT";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<bmckde_core::Error> for CliError {
    fn from(e: bmckde_core::Error) -> Self {
        use bmckde_core::Error as E;
        match e {
            E::Parse(_) | E::EmptyGrid(_) | E::DepthOverflow(_) | E::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser, Debug, Clone)]
#[command(name = "bmckde", version, about = "Bifurcating Markov chain simulation and adaptive kernel density estimation")]
pub struct Cli {
    /// TOML run configuration; flags below override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelName>,
    /// Tree depth n (the tree has 2^(n+1) - 1 nodes).
    #[arg(long, global = true)]
    pub depth: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub h_max: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// How the penalty constant is chosen across evaluation points.
    #[arg(long, global = true, value_enum)]
    pub kappa_mode: Option<ModeName>,
    /// Number of equispaced evaluation points.
    #[arg(long, global = true)]
    pub eval_points: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
pub enum Command {
    /// Simulate a tree and write it as CSV.
    Simulate,
    /// Locally adaptive density estimate on the evaluation grid.
    Estimate {
        /// Read the tree from a CSV file instead of simulating it.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Also write per-bandwidth selection diagnostics.
        #[arg(long)]
        diagnostics: bool,
        /// Use this fixed bandwidth instead of the adaptive rule.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Penalty calibration trace at one point.
    Calibrate {
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Evaluation point (default: middle of the state space).
        #[arg(long)]
        x: Option<f64>,
    },
    /// Monte-Carlo pointwise risk over the evaluation grid.
    Risk {
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long, value_enum)]
        estimator: Option<EstimatorName>,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Risk at one point across depths and the log-log rate slope.
    Rates {
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<u32>>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        x: Option<f64>,
    },
    /// Splitting-rate estimate for the growth-fragmentation model.
    SplittingRate {
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Fixed bandwidth for the density estimate (default: adaptive).
        #[arg(long)]
        h: Option<f64>,
    },
    /// Empirical deviation probabilities against the concentration bound.
    BernsteinCheck {
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        x: Option<f64>,
    },
    /// Regenerate a figure: fig1 (Beta-BAR estimates) or fig2 (splitting rate).
    Reproduce {
        #[arg(long, value_enum)]
        figure: Figure,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1,
    Fig2,
}

impl Command {
    /// File-name stem of the run record.
    pub fn stem(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate { .. } => "estimate",
            Command::Calibrate { .. } => "calibrate",
            Command::Risk { .. } => "risk",
            Command::Rates { .. } => "rates",
            Command::SplittingRate { .. } => "splitting-rate",
            Command::BernsteinCheck { .. } => "bernstein-check",
            Command::Reproduce { figure: Figure::Fig1 } => "reproduce-fig1",
            Command::Reproduce { figure: Figure::Fig2 } => "reproduce-fig2",
        }
    }
}

/// Files are written to a temporary name in the output directory and then
/// renamed, so readers never see partial output.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<(String, usize)>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Io(format!("cannot write {name}: {e}"));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(contents.as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(self.dir.join(name)).map_err(|e| io(e.error))?;
        self.written.push((name.to_string(), contents.len()));
        Ok(())
    }

    pub fn files(&self) -> impl Iterator<Item = &str> {
        self.written.iter().map(|(n, _)| n.as_str())
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub files: Vec<String>,
    /// Human-readable one-line result.
    pub message: String,
}

/// Loads the config file (if any) and folds the flag overrides into it.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.model {
        cfg.model = m;
    }
    if let Some(d) = cli.depth {
        cfg.depth = d;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(h) = cli.h_max {
        cfg.grid.h_max = h;
        cfg.grid.values = None;
    }
    if let Some(a) = cli.alpha {
        cfg.grid.alpha = a;
        cfg.grid.values = None;
    }
    if let Some(m) = cli.kappa_mode {
        cfg.calibration.mode = m;
    }
    if let Some(p) = cli.eval_points {
        cfg.eval.points = p;
        cfg.eval.x = None;
    }
    match &cli.command {
        Command::Risk { replications, estimator, h } => {
            if let Some(r) = replications {
                cfg.risk.replications = *r;
            }
            if let Some(e) = estimator {
                cfg.risk.estimator = *e;
            }
            if let Some(h) = h {
                cfg.risk.h = *h;
            }
        }
        Command::Rates { depths, replications, x } => {
            if let Some(d) = depths {
                cfg.rates.depths = d.clone();
            }
            if let Some(r) = replications {
                cfg.rates.replications = *r;
            }
            if let Some(x) = x {
                cfg.rates.x = *x;
            }
        }
        Command::SplittingRate { threshold, h, .. } => {
            if let Some(t) = threshold {
                cfg.splitting.threshold = Some(*t);
            }
            if let Some(h) = h {
                cfg.splitting.bandwidth = config::SplitBandwidthSpec::Fixed(*h);
            }
        }
        Command::BernsteinCheck { replications, deltas, h, x } => {
            if let Some(r) = replications {
                cfg.bernstein.replications = *r;
            }
            if let Some(d) = deltas {
                cfg.bernstein.deltas = d.clone();
            }
            if let Some(h) = h {
                cfg.bernstein.h = *h;
            }
            if let Some(x) = x {
                cfg.bernstein.x = *x;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one subcommand. `argv` is recorded in the manifest.
pub fn run(cli: &Cli, argv: &[String]) -> Result<RunSummary, CliError> {
    let cfg = resolve_config(cli)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = cli.threads {
            if t == 0 {
                return Err(CliError::Config("threads must be at least 1".into()));
            }
            b = b.num_threads(t);
        }
        b.build().map_err(|e| CliError::Config(format!("cannot start thread pool: {e}")))?
    };
    let mut out = Artifacts::new(&cfg.output.dir)?;
    let message = pool.install(|| commands::dispatch(&cli.command, &cfg, &mut out))?;

    let stem = cli.command.stem();
    let config_name = format!("{stem}.config.toml");
    out.write(&config_name, &cfg.to_toml())?;
    let manifest = json!({
        "tool": "bmckde",
        "version": env!("CARGO_PKG_VERSION"),
        "command": stem,
        "argv": argv,
        "seed": cfg.seed,
        "seed_scheme": "node u of a tree with seed s draws from ChaCha8 stream u keyed by s; replication r of a batch uses seed splitmix64(s + r)",
        "resolved_config": config_name,
        "rerun": format!("bmckde --config {config_name} {}", rerun_args(&cli.command)),
        "config": serde_json::to_value(&cfg).expect("config serialises"),
        "outputs": out.written.iter().map(|(n, b)| json!({"file": n, "bytes": b})).collect::<Vec<_>>(),
    });
    out.write(&format!("{stem}.manifest.json"), &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    Ok(RunSummary { dir: out.dir.clone(), files: out.files().map(String::from).collect(), message })
}

/// Subcommand arguments not captured by the resolved config.
fn rerun_args(cmd: &Command) -> String {
    match cmd {
        Command::Estimate { tree, diagnostics, h } => {
            let mut s = String::from("estimate");
            if let Some(t) = tree {
                s += &format!(" --tree {}", t.display());
            }
            if *diagnostics {
                s += " --diagnostics";
            }
            if let Some(h) = h {
                s += &format!(" --h {h}");
            }
            s
        }
        Command::Calibrate { tree, x } => {
            let mut s = String::from("calibrate");
            if let Some(t) = tree {
                s += &format!(" --tree {}", t.display());
            }
            if let Some(x) = x {
                s += &format!(" --x {x}");
            }
            s
        }
        Command::SplittingRate { tree: Some(t), .. } => format!("splitting-rate --tree {}", t.display()),
        Command::Reproduce { figure } => format!("reproduce --figure {}", figure.to_possible_value().expect("value").get_name()),
        other => other.stem().to_string(),
    }
}
