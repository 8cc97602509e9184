//! Theoretical constants, concentration bounds, Monte-Carlo risk harness,
//! convergence-rate regression and the splitting-rate estimator.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::calibration::{calibrated_estimate, CalibrationConfig, KappaMode};
use crate::estimator::{kde_eval, min_bandwidth_product, BandwidthGrid, KdeContext};
use crate::kernel::{Bandwidth, Kernel};
use crate::models::{beta_mixture_density, simulate, BetaBarModel, Model};
use crate::quadrature;
use crate::rng::replication_seed;
use crate::stats::linear_fit;
use crate::tree::{tree_size, TreeSample};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Constants
// ---------------------------------------------------------------------------

/// Geometric-ergodicity parameters `(M, ρ)` and sup-norms of the transition
/// densities and the invariant density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErgodicityParams {
    pub m: f64,
    pub rho: f64,
    pub sup_q: f64,
    pub sup_nu: f64,
    /// Sup-norm of the joint two-children density.
    pub sup_p: f64,
    pub sup_p0: f64,
    pub sup_p1: f64,
}

/// Grid step used to maximise densities.
pub const SUP_GRID_STEP: f64 = 1e-4;

impl ErgodicityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0, 1/2), got {}", self.rho)));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::InvalidArgument(format!("M must be positive, got {}", self.m)));
        }
        let sups = [self.sup_q, self.sup_nu, self.sup_p, self.sup_p0, self.sup_p1];
        if sups.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("sup-norms must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Beta-BAR sup-norms by dense grid maximisation, with caller-supplied
    /// `(M, ρ)` (they are not identifiable from data).
    pub fn beta_bar(m: f64, rho: f64) -> Result<Self> {
        let steps = (1.0 / SUP_GRID_STEP).round() as usize;
        let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        // For each parent state, the largest child density.
        let row_max: Vec<f64> = grid
            .par_iter()
            .map(|&x| grid.iter().map(|&y| beta_mixture_density(x, y).unwrap_or(0.0)).fold(0.0, f64::max))
            .collect();
        let sup_p0 = row_max.iter().copied().fold(0.0, f64::max);
        let sup_p = row_max.iter().map(|v| v * v).fold(0.0, f64::max);
        let sup_nu = grid.iter().map(|&y| BetaBarModel::invariant_density(y)).fold(0.0, f64::max);
        let params = Self { m, rho, sup_q: sup_p0, sup_nu, sup_p, sup_p0, sup_p1: sup_p0 };
        params.validate()?;
        Ok(params)
    }
}

/// `C(P, ν) = C_I / (√2 - 1)²`, the variance constant of the bias-variance
/// bound, with
/// `C_P = 2‖K‖₂²(‖Q‖ + ‖ν‖) + ‖P‖ + ‖ν‖(‖K‖₂² + ‖P₀‖ + ‖P₁‖)` and
/// `C_I = (1 + 1/(1 - 2ρ²))(‖Q‖ + ‖ν‖)² + M² + C_P`.
pub fn variance_constant(kernel: &Kernel, params: &ErgodicityParams) -> Result<f64> {
    params.validate()?;
    let l2 = kernel.norms().l2sq;
    let qn = params.sup_q + params.sup_nu;
    let c_p = 2.0 * l2 * qn + params.sup_p + params.sup_nu * (l2 + (params.sup_p0 + params.sup_p1));
    let c_i = (1.0 + 1.0 / (1.0 - 2.0 * params.rho * params.rho)) * qn * qn + params.m * params.m + c_p;
    Ok(c_i / (std::f64::consts::SQRT_2 - 1.0).powi(2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BernsteinConstants {
    /// `M(1 + ρ)/(1 - 2ρ)`
    pub c_rho_m: f64,
    /// `3 + 2/(1 - 2ρ)`
    pub c_prime_rho: f64,
    /// Variance constant of the convolved-kernel bound.
    pub c_conv: f64,
    /// Variance constant of the plain-kernel bound.
    pub c_plain: f64,
    /// `‖K‖₁`
    pub k_l1: f64,
    /// `‖K‖_∞`
    pub k_sup: f64,
}

impl BernsteinConstants {
    pub fn new(kernel: &Kernel, params: &ErgodicityParams) -> Result<Self> {
        params.validate()?;
        let n = kernel.norms();
        let (m, rho) = (params.m, params.rho);
        let qn = params.sup_q + params.sup_nu;
        let c_conv = 8.0 * f64::max(2.0 * n.l1 * n.l1 * n.l2sq * qn, f64::max(qn, m * n.l1 * n.sup).powi(2));
        let c_plain = 8.0 * (m * n.sup).max(qn * n.l1).max(qn * n.l2sq);
        Ok(Self {
            c_rho_m: m * (1.0 + rho) / (1.0 - 2.0 * rho),
            c_prime_rho: 3.0 + 2.0 / (1.0 - 2.0 * rho),
            c_conv,
            c_plain,
            k_l1: n.l1,
            k_sup: n.sup,
        })
    }
}

/// Which deviation the bound controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Deviation<'a> {
    /// Sum of `K_h(x - X_u)`.
    Plain,
    /// Sum of `(K_h ∗ K_{h'})(x - X_u)`; the bound involves `|h'|`.
    Convolved(&'a Bandwidth),
}

/// Right-hand side of the Bernstein-type deviation inequality, unclamped
/// (it exceeds 1 for small `δ`).
pub fn bernstein_bound(delta: f64, depth: u32, h: &Bandwidth, constants: &BernsteinConstants, which: Deviation<'_>) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let size = tree_size(depth)? as f64;
    let c = constants;
    let (variance, range, width) = match which {
        Deviation::Plain => (c.c_plain * c.c_prime_rho, 4.0 * c.c_rho_m * c.k_sup * delta / 3.0, h.prod()),
        Deviation::Convolved(hp) => {
            (c.c_conv * c.c_prime_rho, 4.0 * c.c_rho_m * c.k_l1 * c.k_sup * delta / 3.0, hp.prod())
        }
    };
    let lead = (delta * variance / (range + variance)).exp();
    let tail = (-(delta * delta * size * width) / (2.0 * (variance + range))).exp();
    Ok(2.0 * lead * tail)
}

// ---------------------------------------------------------------------------
// Monte-Carlo deviation probabilities
// ---------------------------------------------------------------------------

/// `(K_h ∗ ν)(x)` for a model with known invariant density, by quadrature.
pub fn smoothed_truth(model: &Model, kernel: &Kernel, h: &Bandwidth, x: f64) -> Result<f64> {
    if !model.has_known_invariant_density() {
        return Err(Error::InvalidArgument(format!("model {} has no closed-form invariant density", model.name())));
    }
    let (lo, hi) = model.state_space();
    let hj = h.components()[0];
    quadrature::integrate_pieces(
        |t| kernel.scaled_1d(x - t, hj) * model.invariant_density(t).unwrap_or(0.0),
        lo,
        hi,
        &[x],
        1e-12,
    )
}

/// `|ν̂_h(x) - (K_h ∗ ν)(x)|` over `replications` independent trees.
pub fn deviations(
    model: &Model,
    kernel: &Kernel,
    h: &Bandwidth,
    x: f64,
    depth: u32,
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let target = smoothed_truth(model, kernel, h, x)?;
    (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let tree = simulate(model, depth, replication_seed(seed, r))?;
            Ok((kde_eval(&tree, kernel, h, &[x])? - target).abs())
        })
        .collect()
}

/// Fraction of `replications` trees with `|ν̂_h(x) - (K_h ∗ ν)(x)| > δ`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_deviation_probability(
    model: &Model,
    kernel: &Kernel,
    h: &Bandwidth,
    x: f64,
    delta: f64,
    depth: u32,
    replications: usize,
    seed: u64,
) -> Result<f64> {
    Ok(deviation_profile(model, kernel, h, x, &[delta], depth, replications, seed)?[0])
}

/// Exceedance fractions for several `δ` from one set of replications.
#[allow(clippy::too_many_arguments)]
pub fn deviation_profile(
    model: &Model,
    kernel: &Kernel,
    h: &Bandwidth,
    x: f64,
    deltas: &[f64],
    depth: u32,
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if replications < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 replications, got {replications}")));
    }
    let devs = deviations(model, kernel, h, x, depth, replications, seed)?;
    Ok(exceedance(&devs, deltas))
}

pub fn exceedance(devs: &[f64], deltas: &[f64]) -> Vec<f64> {
    deltas.iter().map(|&d| devs.iter().filter(|&&v| v > d).count() as f64 / devs.len() as f64).collect()
}

// ---------------------------------------------------------------------------
// Pointwise risk
// ---------------------------------------------------------------------------

/// Bandwidth grid recipe, resolved per tree depth.
#[derive(Clone, Debug, PartialEq)]
pub enum GridSpec {
    Geometric { h_max: f64, alpha: f64 },
    Explicit(Vec<f64>),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Geometric { h_max: 0.5, alpha: 1.5 }
    }
}

impl GridSpec {
    pub fn resolve(&self, depth: u32, dim: usize) -> Result<BandwidthGrid> {
        match self {
            GridSpec::Geometric { h_max, alpha } => BandwidthGrid::build(*h_max, *alpha, depth, dim),
            GridSpec::Explicit(hs) => BandwidthGrid::from_entries(
                hs.iter().map(|&h| Bandwidth::isotropic(h, dim)).collect::<Result<_>>()?,
                depth,
            ),
        }
    }
}

/// Estimator evaluated by the risk harness.
#[derive(Clone, Debug, PartialEq)]
pub enum EstimatorConfig {
    Fixed(Bandwidth),
    Adaptive { grid: GridSpec, calibration: CalibrationConfig, mode: KappaMode },
    /// Returns the reference density itself.
    Oracle,
}

impl EstimatorConfig {
    pub fn describe(&self) -> String {
        match self {
            EstimatorConfig::Fixed(h) => format!("fixed h={:?}", h.components()),
            EstimatorConfig::Adaptive { grid, calibration, mode } => format!(
                "adaptive grid={grid:?} m={} s_max={} b/a={} mode={mode:?}",
                calibration.m, calibration.s_max, calibration.b_over_a
            ),
            EstimatorConfig::Oracle => "oracle".into(),
        }
    }
}

/// Reference density used as ground truth when the model has none.
pub type Reference = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

fn reference_for(model: &Model, supplied: Option<&Reference>) -> Result<Reference> {
    match supplied {
        Some(r) => Ok(r.clone()),
        None if model.has_known_invariant_density() => {
            let m = *model;
            Ok(Arc::new(move |x| m.invariant_density(x).unwrap_or(0.0)))
        }
        None => Err(Error::InvalidArgument(format!(
            "model {} has no closed-form invariant density; supply a reference",
            model.name()
        ))),
    }
}

/// Estimates at every `x` for one tree.
pub fn estimate_on_tree(
    tree: &TreeSample,
    kernel: &Kernel,
    config: &EstimatorConfig,
    x_grid: &[f64],
    reference: &Reference,
) -> Result<Vec<f64>> {
    match config {
        EstimatorConfig::Fixed(h) => x_grid.iter().map(|&x| kde_eval(tree, kernel, h, &[x])).collect(),
        EstimatorConfig::Oracle => Ok(x_grid.iter().map(|&x| reference(x)).collect()),
        EstimatorConfig::Adaptive { grid, calibration, mode } => {
            let grid = grid.resolve(tree.depth(), 1)?;
            let points: Vec<Vec<f64>> = x_grid.iter().map(|&x| vec![x]).collect();
            Ok(calibrated_estimate(tree, kernel, &grid, &points, calibration, mode)?
                .into_iter()
                .map(|p| p.nu_hat)
                .collect())
        }
    }
}

/// `replications × |x_grid|` estimates, in replication order.
#[allow(clippy::too_many_arguments)]
pub fn replicate_estimates(
    model: &Model,
    kernel: &Kernel,
    config: &EstimatorConfig,
    x_grid: &[f64],
    depth: u32,
    replications: usize,
    seed: u64,
    reference: Option<&Reference>,
) -> Result<Vec<Vec<f64>>> {
    let reference = reference_for(model, reference)?;
    (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let tree = simulate(model, depth, replication_seed(seed, r))?;
            estimate_on_tree(&tree, kernel, config, x_grid, &reference)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskRow {
    pub x: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskReport {
    pub rows: Vec<RiskRow>,
    pub model: String,
    pub depth: u32,
    pub replications: usize,
    pub seed: u64,
    pub estimator: String,
}

impl RiskReport {
    /// Risk CSV: `x,bias_sq,variance,mse,R,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,bias_sq,variance,mse,R,n\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.x, r.bias_sq, r.variance, r.mse, self.replications, self.depth);
        }
        out
    }
}

/// Plug-in bias², variance and MSE of each column of `estimates`.
pub fn risk_rows(x_grid: &[f64], estimates: &[Vec<f64>], truth: impl Fn(f64) -> f64) -> Vec<RiskRow> {
    let r = estimates.len() as f64;
    x_grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let col: Vec<f64> = estimates.iter().map(|e| e[i]).collect();
            let t = truth(x);
            let mean = col.iter().sum::<f64>() / r;
            let variance = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r;
            let mse = col.iter().map(|v| (v - t).powi(2)).sum::<f64>() / r;
            RiskRow { x, bias_sq: (mean - t).powi(2), variance, mse }
        })
        .collect()
}

/// Monte-Carlo pointwise quadratic risk of an estimator.
#[allow(clippy::too_many_arguments)]
pub fn pointwise_risk(
    model: &Model,
    kernel: &Kernel,
    config: &EstimatorConfig,
    x_grid: &[f64],
    depth: u32,
    replications: usize,
    seed: u64,
    reference: Option<&Reference>,
) -> Result<RiskReport> {
    if replications < 2 {
        return Err(Error::InvalidArgument("risk estimation needs at least two replications".into()));
    }
    let truth = reference_for(model, reference)?;
    let est = replicate_estimates(model, kernel, config, x_grid, depth, replications, seed, Some(&truth))?;
    Ok(RiskReport {
        rows: risk_rows(x_grid, &est, |x| truth(x)),
        model: model.name().into(),
        depth,
        replications,
        seed,
        estimator: config.describe(),
    })
}

// ---------------------------------------------------------------------------
// Rates
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub depth: u32,
    pub tree_size: usize,
    pub mse: f64,
    pub log_t: f64,
    pub log_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub slope: f64,
}

impl RateReport {
    /// Rate CSV `n,tree_size,mse,log_t,log_mse` with a `slope=` footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,tree_size,mse,log_t,log_mse\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.depth, r.tree_size, r.mse, r.log_t, r.log_mse);
        }
        let _ = writeln!(out, "slope={}", self.slope);
        out
    }
}

/// Least-squares slope of `log(mse)` against `log(|T_n| / log|T_n|)`.
pub fn rate_regression(risks: &[(u32, f64)]) -> Result<RateReport> {
    if risks.len() < 3 {
        return Err(Error::DegenerateDesign(format!("need at least 3 depths, got {}", risks.len())));
    }
    let mut depths: Vec<u32> = risks.iter().map(|r| r.0).collect();
    depths.sort_unstable();
    if depths.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DegenerateDesign("depths must be distinct".into()));
    }
    let mut rows = Vec::with_capacity(risks.len());
    for &(depth, mse) in risks {
        if !(mse > 0.0 && mse.is_finite()) {
            return Err(Error::InvalidArgument(format!("mse must be positive, got {mse} at depth {depth}")));
        }
        if depth == 0 {
            return Err(Error::DegenerateDesign("depth 0 has log|T_n| = 0".into()));
        }
        let size = tree_size(depth)?;
        rows.push(RateRow { depth, tree_size: size, mse, log_t: (1.0 / min_bandwidth_product(depth)).ln(), log_mse: mse.ln() });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.log_t).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.log_mse).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::DegenerateDesign("constant design".into()))?;
    Ok(RateReport { rows, slope: fit.slope })
}

// ---------------------------------------------------------------------------
// Splitting rate
// ---------------------------------------------------------------------------

/// `(τx/2) · density / max(mass, threshold)`
pub fn splitting_rate_plugin(x: f64, tau: f64, density_at_half: f64, mass: f64, threshold: f64) -> f64 {
    tau * x / 2.0 * density_at_half / mass.max(threshold)
}

/// Default denominator floor `1 / log|T_n|`.
pub fn default_threshold(tree_len: usize) -> f64 {
    1.0 / (tree_len as f64).ln()
}

/// Bandwidth used for `ν̂` inside the splitting-rate estimator.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitBandwidth {
    Fixed(Bandwidth),
    Adaptive { grid: GridSpec, calibration: CalibrationConfig, mode: KappaMode },
}

/// Fraction of nodes with `a ≤ X_u < b`.
pub fn empirical_fraction(sample: &TreeSample, a: f64, b: f64) -> f64 {
    sample.values().iter().filter(|&&v| v >= a && v < b).count() as f64 / sample.len() as f64
}

/// `B̂_n(x)` at each `x`.
pub fn splitting_rate_curve(
    sample: &TreeSample,
    kernel: &Kernel,
    mode: &SplitBandwidth,
    xs: &[f64],
    tau: f64,
    threshold: f64,
) -> Result<Vec<f64>> {
    if sample.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: sample.dim() });
    }
    let halves: Vec<f64> = xs.iter().map(|x| x / 2.0).collect();
    let densities: Vec<f64> = match mode {
        SplitBandwidth::Fixed(h) => halves.iter().map(|&y| kde_eval(sample, kernel, h, &[y])).collect::<Result<_>>()?,
        SplitBandwidth::Adaptive { grid, calibration, mode } => {
            let grid = grid.resolve(sample.depth(), 1)?;
            let points: Vec<Vec<f64>> = halves.iter().map(|&y| vec![y]).collect();
            let mode = match mode {
                KappaMode::Shared { at } => KappaMode::Shared { at: at.iter().map(|v| v / 2.0).collect() },
                other => other.clone(),
            };
            calibrated_estimate(sample, kernel, &grid, &points, calibration, &mode)?
                .into_iter()
                .map(|p| p.nu_hat)
                .collect()
        }
    };
    Ok(xs
        .iter()
        .zip(densities)
        .map(|(&x, d)| splitting_rate_plugin(x, tau, d, empirical_fraction(sample, x / 2.0, x), threshold))
        .collect())
}

pub fn estimate_splitting_rate(
    sample: &TreeSample,
    kernel: &Kernel,
    mode: &SplitBandwidth,
    x: f64,
    tau: f64,
    threshold: f64,
) -> Result<f64> {
    Ok(splitting_rate_curve(sample, kernel, mode, &[x], tau, threshold)?[0])
}

/// Fast path for a fixed bandwidth: reuse a sorted context.
pub fn fixed_bandwidth_kde_curve(sample: &TreeSample, kernel: &Kernel, h: &Bandwidth, xs: &[f64]) -> Result<Vec<f64>> {
    let grid = BandwidthGrid::from_entries(vec![h.clone()], sample.depth())
        .or_else(|_| BandwidthGrid::from_entries(vec![h.clone()], 0))?;
    let ctx = KdeContext::new(sample, kernel, &grid)?;
    xs.iter().map(|&x| ctx.kde(h, &[x])).collect()
}
