//! Data-driven penalty constant by bandwidth-jump detection.
//!
//! Starting from `[0, κ_max]`, each iteration evaluates the selected
//! bandwidth on `m` equispaced values of `κ`, finds the largest jump of
//! `1/|ĥ(κ)|` between neighbours and zooms onto that interval. The bandwidth
//! just after the last detected jump is returned.

use rayon::prelude::*;

use crate::estimator::{validate_penalty, AdaptivePoint, BandwidthGrid, GlTable, KdeContext};
use crate::kernel::{Bandwidth, Kernel};
use crate::tree::TreeSample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationConfig {
    /// Number of `κ` values per iteration.
    pub m: usize,
    /// Number of zoom iterations.
    pub s_max: usize,
    pub b_over_a: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { m: 20, s_max: 2, b_over_a: 2.0 }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("calibration needs m >= 2, got {}", self.m)));
        }
        if self.s_max < 1 {
            return Err(Error::InvalidArgument("calibration needs at least one iteration".into()));
        }
        validate_penalty(0.0, self.b_over_a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub kappa: f64,
    pub h: Bandwidth,
    pub inv_h_prod: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceIteration {
    pub steps: Vec<TraceStep>,
    /// Zero-based index `j` of the jump between steps `j` and `j + 1`.
    pub jump: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTrace {
    pub kappa_max: f64,
    pub iterations: Vec<TraceIteration>,
    pub kappa: f64,
    pub selected: Bandwidth,
}

impl CalibrationTrace {
    /// Trace CSV rows `iteration,j,kappa,h_prod,inv_h_prod,is_jump` (1-based
    /// iteration and `j`; `is_jump` marks the left end of the detected jump).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,j,kappa,h_prod,inv_h_prod,is_jump\n");
        for (s, it) in self.iterations.iter().enumerate() {
            for (j, st) in it.steps.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s + 1,
                    j + 1,
                    st.kappa,
                    st.h.prod(),
                    st.inv_h_prod,
                    u8::from(j == it.jump)
                ));
            }
        }
        out
    }
}

/// `κ_max = (|T_n| / log|T_n|) max_{h,h'} |h'| (ν̂_{h'}(x) - K_h ∗ ν̂_{h'}(x))²`
pub fn kappa_max(sample: &TreeSample, kernel: &Kernel, grid: &BandwidthGrid, x: &[f64]) -> Result<f64> {
    Ok(KdeContext::new(sample, kernel, grid)?.table(x)?.kappa_max())
}

/// Runs the jump-detection zoom on a precomputed table.
pub fn calibrate_table(table: &GlTable, config: &CalibrationConfig) -> Result<CalibrationTrace> {
    config.validate()?;
    let kappa_max = table.kappa_max();
    if !kappa_max.is_finite() {
        return Err(Error::DegenerateDesign("kappa_max is not finite (a single-node tree has log|T_n| = 0)".into()));
    }
    let (mut lo, mut hi) = (0.0, kappa_max);
    let m = config.m;
    let mut iterations = Vec::with_capacity(config.s_max);
    let mut result = None;
    for _ in 0..config.s_max {
        let steps: Vec<TraceStep> = (0..m)
            .map(|j| {
                let kappa = if j == m - 1 { hi } else { lo + j as f64 / (m - 1) as f64 * (hi - lo) };
                let state = table.select(kappa, config.b_over_a);
                let h = state.selected_bandwidth().clone();
                let inv_h_prod = 1.0 / h.prod();
                TraceStep { kappa, h, inv_h_prod }
            })
            .collect();
        let mut jump = 0;
        let mut biggest = f64::NEG_INFINITY;
        for j in 0..m - 1 {
            let gap = (steps[j].inv_h_prod - steps[j + 1].inv_h_prod).abs();
            if gap > biggest {
                biggest = gap;
                jump = j;
            }
        }
        lo = steps[jump].kappa;
        hi = steps[jump + 1].kappa;
        result = Some((steps[jump + 1].kappa, steps[jump + 1].h.clone()));
        iterations.push(TraceIteration { steps, jump });
    }
    let (kappa, selected) = result.expect("s_max >= 1");
    Ok(CalibrationTrace { kappa_max, iterations, kappa, selected })
}

pub fn calibrate_and_select(
    sample: &TreeSample,
    kernel: &Kernel,
    grid: &BandwidthGrid,
    x: &[f64],
    config: &CalibrationConfig,
) -> Result<(CalibrationTrace, Bandwidth)> {
    let table = KdeContext::new(sample, kernel, grid)?.table(x)?;
    let trace = calibrate_table(&table, config)?;
    let h = trace.selected.clone();
    Ok((trace, h))
}

/// How `κ` is chosen across an evaluation grid.
#[derive(Clone, Debug, PartialEq)]
pub enum KappaMode {
    /// Calibrate separately at every point and use the returned bandwidth.
    PerPoint,
    /// Calibrate once at `at`, then apply the resulting `κ` everywhere.
    Shared { at: Vec<f64> },
    /// Use the given `κ` everywhere.
    Fixed(f64),
}

/// Locally adaptive estimate with calibrated penalty.
pub fn calibrated_estimate(
    sample: &TreeSample,
    kernel: &Kernel,
    grid: &BandwidthGrid,
    x_grid: &[Vec<f64>],
    config: &CalibrationConfig,
    mode: &KappaMode,
) -> Result<Vec<AdaptivePoint>> {
    config.validate()?;
    let ctx = KdeContext::new(sample, kernel, grid)?;
    // a singleton grid needs no penalty
    let shared = match mode {
        _ if grid.len() == 1 => Some(0.0),
        KappaMode::PerPoint => None,
        KappaMode::Shared { at } => Some(calibrate_table(&ctx.table(at)?, config)?.kappa),
        KappaMode::Fixed(k) => {
            validate_penalty(*k, config.b_over_a)?;
            Some(*k)
        }
    };
    x_grid
        .par_iter()
        .map(|x| {
            let table = ctx.table(x)?;
            let (kappa, h) = match shared {
                Some(k) => (k, table.select(k, config.b_over_a).selected_bandwidth().clone()),
                None => {
                    let trace = calibrate_table(&table, config)?;
                    (trace.kappa, trace.selected)
                }
            };
            let j = table.bandwidths().iter().position(|b| *b == h).expect("selection comes from the grid");
            Ok(AdaptivePoint { x: x.clone(), kappa, h, nu_hat: table.nu_hat(j) })
        })
        .collect()
}
