//! Run configuration: a TOML file with one top-level table and optional
//! sections. Every key is optional; unknown keys are rejected.
//!
//! ```toml
//! model = "beta-bar"            # or "growth-frag"
//! depth = 10
//! seed = 42
//! kernel = "gaussian"           # or { table = "profile.csv" }
//!
//! [growth_frag]
//! tau = 2.0
//! s_max = 5.0
//! root_law = [0.5, 2.0]
//! rate = "tent"                 # or { constant = 2.0 }
//!
//! [grid]
//! h_max = 0.5
//! alpha = 1.5
//! # values = [0.2, 0.1, 0.05]   # explicit grid, overrides h_max/alpha
//!
//! [eval]
//! points = 101                  # equispaced over the state space
//! # x = [0.2, 0.5]              # explicit points, overrides points
//!
//! [calibration]
//! m = 20
//! s_max = 2
//! b_over_a = 2.0
//! mode = "shared"               # "per-point" | "shared" | "fixed"
//! # kappa = 0.5                 # required when mode = "fixed"
//!
//! [risk]
//! replications = 100
//! estimator = "adaptive"        # or "fixed" (uses h)
//! h = 0.1
//!
//! [rates]
//! depths = [8, 9, 10, 11, 12, 13]
//! replications = 30
//! x = 0.5
//!
//! [bernstein]
//! x = 0.5
//! h = 0.1
//! deltas = [0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.2]
//! replications = 2000
//! m = 2.0
//! rho = 0.4
//!
//! [splitting]
//! lo = 2.0
//! hi = 4.0
//! points = 21
//! bandwidth = "adaptive"        # or a fixed bandwidth, e.g. 0.1
//! # threshold = 0.1             # default 1 / log|T_n|
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative paths (kernel table) resolve against the config file's directory.

use std::path::{Path, PathBuf};

use bmckde_core::analysis::{ErgodicityParams, GridSpec};
use bmckde_core::calibration::{CalibrationConfig, KappaMode};
use bmckde_core::estimator::linspace;
use bmckde_core::kernel::{Kernel, TabulatedProfile};
use bmckde_core::models::{BetaBarModel, GrowthFragModel, Model, RootLaw, SplittingRate};
use bmckde_core::tree::MAX_DEPTH;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    #[default]
    BetaBar,
    GrowthFrag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Named(String),
    Table { table: PathBuf },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Named("gaussian".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Named(String),
    Constant { constant: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthFragSection {
    pub tau: f64,
    pub s_max: Option<f64>,
    pub root_law: [f64; 2],
    pub rate: RateSpec,
}

impl Default for GrowthFragSection {
    fn default() -> Self {
        Self { tau: 2.0, s_max: None, root_law: [0.5, 2.0], rate: RateSpec::Named("tent".into()) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub h_max: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

pub const DEFAULT_H_MAX: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 1.5;

impl Default for GridSection {
    fn default() -> Self {
        Self { h_max: DEFAULT_H_MAX, alpha: DEFAULT_ALPHA, values: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { points: 101, x: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    PerPoint,
    #[default]
    Shared,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub m: usize,
    pub s_max: usize,
    pub b_over_a: f64,
    pub mode: ModeName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        Self { m: c.m, s_max: c.s_max, b_over_a: c.b_over_a, mode: ModeName::default(), kappa: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    #[default]
    Adaptive,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    pub replications: usize,
    pub estimator: EstimatorName,
    pub h: f64,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self { replications: 100, estimator: EstimatorName::Adaptive, h: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub depths: Vec<u32>,
    pub replications: usize,
    pub x: f64,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self { depths: (8..=13).collect(), replications: 30, x: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BernsteinSection {
    pub x: f64,
    pub h: f64,
    pub deltas: Vec<f64>,
    pub replications: usize,
    pub m: f64,
    pub rho: f64,
}

impl Default for BernsteinSection {
    fn default() -> Self {
        Self {
            x: 0.5,
            h: 0.1,
            deltas: vec![0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.2],
            replications: 2000,
            m: 2.0,
            rho: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitBandwidthSpec {
    Fixed(f64),
    Named(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplittingSection {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub bandwidth: SplitBandwidthSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl Default for SplittingSection {
    fn default() -> Self {
        Self { lo: 2.0, hi: 4.0, points: 21, bandwidth: SplitBandwidthSpec::Named("adaptive".into()), threshold: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// The whole configuration as read from (or written back to) TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelName,
    pub depth: u32,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub growth_frag: GrowthFragSection,
    pub grid: GridSection,
    pub eval: EvalSection,
    pub calibration: CalibrationSection,
    pub risk: RiskSection,
    pub rates: RatesSection,
    pub bernstein: BernsteinSection,
    pub splitting: SplittingSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelName::default(),
            depth: 10,
            seed: 42,
            kernel: KernelSpec::default(),
            growth_frag: GrowthFragSection::default(),
            grid: GridSection::default(),
            eval: EvalSection::default(),
            calibration: CalibrationSection::default(),
            risk: RiskSection::default(),
            rates: RatesSection::default(),
            bernstein: BernsteinSection::default(),
            splitting: SplittingSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string().lines().collect::<Vec<_>>().join(" ")))
    }

    /// Reads a config file; relative paths inside it are made relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let KernelSpec::Table { table } = &mut cfg.kernel {
            if table.is_relative() {
                if let Some(dir) = path.parent() {
                    *table = dir.join(&*table);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn model(&self) -> Result<Model, CliError> {
        let model = match self.model {
            ModelName::BetaBar => Model::BetaBar(BetaBarModel),
            ModelName::GrowthFrag => {
                let g = &self.growth_frag;
                let rate = match &g.rate {
                    RateSpec::Named(n) if n == "tent" => SplittingRate::Tent,
                    RateSpec::Named(n) => return Err(config_err(format!("unknown splitting rate \"{n}\" (expected \"tent\" or {{ constant = c }})"))),
                    RateSpec::Constant { constant } => SplittingRate::Constant(*constant),
                };
                let default_smax = match rate {
                    SplittingRate::Tent => 5.0,
                    SplittingRate::Constant(_) => f64::INFINITY,
                };
                Model::GrowthFrag(GrowthFragModel {
                    tau: g.tau,
                    s_max: g.s_max.unwrap_or(default_smax),
                    rate,
                    root_law: RootLaw::Uniform { lo: g.root_law[0], hi: g.root_law[1] },
                })
            }
        };
        model.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(model)
    }

    pub fn kernel(&self) -> Result<Kernel, CliError> {
        match &self.kernel {
            KernelSpec::Named(n) if n == "gaussian" => Ok(Kernel::gaussian(1)),
            KernelSpec::Named(n) => Err(config_err(format!("unknown kernel \"{n}\" (expected \"gaussian\" or {{ table = path }})"))),
            KernelSpec::Table { table } => {
                let text = std::fs::read_to_string(table)
                    .map_err(|e| config_err(format!("cannot read kernel table {}: {e}", table.display())))?;
                let profile = TabulatedProfile::from_csv(&text).map_err(|e| config_err(e.to_string()))?;
                Kernel::tabulated(profile, 1).map_err(|e| config_err(e.to_string()))
            }
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        match &self.grid.values {
            Some(v) => {
                if v.is_empty() || v.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                    return Err(config_err("grid.values must be a nonempty list of positive bandwidths"));
                }
                Ok(GridSpec::Explicit(v.clone()))
            }
            None => {
                if !(self.grid.h_max > 0.0 && self.grid.h_max.is_finite()) {
                    return Err(config_err(format!("grid.h_max must be positive, got {}", self.grid.h_max)));
                }
                if !(self.grid.alpha > 1.0 && self.grid.alpha.is_finite()) {
                    return Err(config_err(format!("grid.alpha must exceed 1, got {}", self.grid.alpha)));
                }
                Ok(GridSpec::Geometric { h_max: self.grid.h_max, alpha: self.grid.alpha })
            }
        }
    }

    pub fn calibration(&self) -> Result<CalibrationConfig, CliError> {
        let c = &self.calibration;
        let cfg = CalibrationConfig { m: c.m, s_max: c.s_max, b_over_a: c.b_over_a };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    /// `κ` mode; a shared `κ` is calibrated at the middle of the state space.
    pub fn kappa_mode(&self) -> Result<KappaMode, CliError> {
        match self.calibration.mode {
            ModeName::PerPoint => Ok(KappaMode::PerPoint),
            ModeName::Shared => {
                let (lo, hi) = self.eval_range()?;
                Ok(KappaMode::Shared { at: vec![0.5 * (lo + hi)] })
            }
            ModeName::Fixed => match self.calibration.kappa {
                Some(k) if k >= 0.0 && k.is_finite() => Ok(KappaMode::Fixed(k)),
                Some(k) => Err(config_err(format!("calibration.kappa must be finite and nonnegative, got {k}"))),
                None => Err(config_err("calibration.mode = \"fixed\" requires calibration.kappa")),
            },
        }
    }

    /// Range used for default evaluation grids: the state space, or for the
    /// growth-fragmentation model the newborn space.
    pub fn eval_range(&self) -> Result<(f64, f64), CliError> {
        let model = self.model()?;
        Ok(match model {
            Model::BetaBar(_) => (0.0, 1.0),
            Model::GrowthFrag(g) => {
                let hi = g.newborn_bound();
                if hi.is_finite() {
                    (0.0, hi)
                } else {
                    let RootLaw::Uniform { hi, .. } = g.root_law;
                    (0.0, 4.0 * hi)
                }
            }
        })
    }

    pub fn eval_points(&self) -> Result<Vec<f64>, CliError> {
        match &self.eval.x {
            Some(x) if x.is_empty() => Err(config_err("eval.x must not be empty")),
            Some(x) if x.iter().any(|v| !v.is_finite()) => Err(config_err("eval.x must be finite")),
            Some(x) => Ok(x.clone()),
            None => {
                if self.eval.points < 1 {
                    return Err(config_err("eval.points must be at least 1"));
                }
                let (lo, hi) = self.eval_range()?;
                Ok(linspace(lo, hi, self.eval.points))
            }
        }
    }

    pub fn ergodicity(&self) -> Result<ErgodicityParams, CliError> {
        ErgodicityParams::beta_bar(self.bernstein.m, self.bernstein.rho).map_err(|e| config_err(e.to_string()))
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.depth > MAX_DEPTH {
            return Err(config_err(format!("depth must be at most {MAX_DEPTH}, got {}", self.depth)));
        }
        self.model()?;
        self.kernel()?;
        self.grid_spec()?;
        self.calibration()?;
        self.kappa_mode()?;
        self.eval_points()?;
        if self.risk.replications < 2 {
            return Err(config_err("risk.replications must be at least 2"));
        }
        if !(self.risk.h > 0.0 && self.risk.h.is_finite()) {
            return Err(config_err("risk.h must be positive"));
        }
        if self.rates.depths.len() < 3 {
            return Err(config_err("rates.depths needs at least 3 depths"));
        }
        if self.rates.depths.iter().any(|&d| d == 0 || d > MAX_DEPTH) {
            return Err(config_err(format!("rates.depths must lie in 1..={MAX_DEPTH}")));
        }
        if self.rates.replications < 2 {
            return Err(config_err("rates.replications must be at least 2"));
        }
        let b = &self.bernstein;
        if b.replications < 100 {
            return Err(config_err("bernstein.replications must be at least 100"));
        }
        if b.deltas.is_empty() || b.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(config_err("bernstein.deltas must be a nonempty list of positive values"));
        }
        if !(b.h > 0.0 && b.h.is_finite()) {
            return Err(config_err("bernstein.h must be positive"));
        }
        if !(b.rho > 0.0 && b.rho < 0.5) || !(b.m > 0.0 && b.m.is_finite()) {
            return Err(config_err("bernstein.rho must lie in (0, 1/2) and bernstein.m must be positive"));
        }
        let s = &self.splitting;
        if !(s.lo > 0.0 && s.lo < s.hi && s.hi.is_finite()) || s.points < 1 {
            return Err(config_err("splitting needs 0 < lo < hi and points >= 1"));
        }
        match &s.bandwidth {
            SplitBandwidthSpec::Fixed(h) if !(*h > 0.0 && h.is_finite()) => {
                return Err(config_err("splitting.bandwidth must be positive"));
            }
            SplitBandwidthSpec::Named(n) if n != "adaptive" => {
                return Err(config_err(format!("splitting.bandwidth must be \"adaptive\" or a number, got \"{n}\"")));
            }
            _ => {}
        }
        if let Some(t) = s.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(config_err("splitting.threshold must be positive"));
            }
        }
        Ok(())
    }
}
