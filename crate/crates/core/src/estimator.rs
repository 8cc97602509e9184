//! Kernel density estimation on tree samples and Goldenshluger–Lepski local
//! bandwidth selection.
//!
//! The penalty is parameterised by a single constant `κ`: the bias proxy uses
//! `aV(x, h) = κ log|T_n| / (|T_n| |h|)` and the criterion adds
//! `(b/a) · κ log|T_n| / (|T_n| |h|)`.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::kernel::{
    convolved_kernel_eval, gaussian_pdf, scaled_kernel_eval, Bandwidth, Kernel, Profile, GAUSS_ZERO_RADIUS,
};
use crate::tree::{tree_size, TreeSample};
use crate::{Error, Result};

fn log_ratio(t: f64) -> f64 {
    t.ln() / t
}

/// `log|T_n| / |T_n|`, the smallest admissible bandwidth product.
pub fn min_bandwidth_product(depth: u32) -> f64 {
    let t = 2f64.powi(depth as i32 + 1) - 1.0;
    log_ratio(t)
}

/// `κ · log|T_n| / (|T_n| · |h|)`
pub fn variance_term(kappa: f64, depth: u32, h: &Bandwidth) -> f64 {
    kappa * min_bandwidth_product(depth) / h.prod()
}

/// Finite bandwidth collection, sorted by decreasing `|h|`, every entry
/// satisfying `|h| ≥ log|T_n| / |T_n|`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthGrid {
    entries: Vec<Bandwidth>,
    depth: u32,
    h_max: Option<f64>,
    alpha: Option<f64>,
}

impl BandwidthGrid {
    /// The `d`-fold product of `{h_max k^{-α}, k = 1..k_max}` with
    /// `k_max = ⌊(|T_n| h_max / log|T_n|)^{1/α}⌋`, filtered by the lower bound.
    pub fn build(h_max: f64, alpha: f64, depth: u32, dim: usize) -> Result<Self> {
        if !(h_max > 0.0 && h_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("h_max must be positive, got {h_max}")));
        }
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        let t = tree_size(depth)? as f64;
        if depth == 0 {
            return Err(Error::EmptyGrid("a single-node tree gives no admissible geometric grid".into()));
        }
        let k_max = (t * h_max / t.ln()).powf(1.0 / alpha).floor() as usize;
        if k_max == 0 {
            return Err(Error::EmptyGrid(format!("h_max = {h_max} is below the admissible minimum at depth {depth}")));
        }
        let axis: Vec<f64> = (1..=k_max).map(|k| h_max * (k as f64).powf(-alpha)).collect();
        let mut entries = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            entries.push(Bandwidth::new(idx.iter().map(|&i| axis[i]).collect())?);
            let mut j = 0;
            while j < dim {
                idx[j] += 1;
                if idx[j] < axis.len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == dim {
                break;
            }
        }
        let mut grid = Self::from_entries(entries, depth)?;
        grid.h_max = Some(h_max);
        grid.alpha = Some(alpha);
        Ok(grid)
    }

    /// Grid from explicit bandwidths; entries below the lower bound are
    /// dropped, duplicates removed.
    pub fn from_entries(entries: Vec<Bandwidth>, depth: u32) -> Result<Self> {
        let floor = min_bandwidth_product(depth);
        let dim = entries.first().map(Bandwidth::dim);
        if entries.iter().any(|b| Some(b.dim()) != dim) {
            return Err(Error::InvalidArgument("bandwidth grid mixes dimensions".into()));
        }
        let mut kept: Vec<Bandwidth> = entries.into_iter().filter(|b| b.prod() >= floor).collect();
        kept.sort_by(|a, b| {
            b.prod()
                .total_cmp(&a.prod())
                .then_with(|| b.components().partial_cmp(a.components()).unwrap_or(std::cmp::Ordering::Equal))
        });
        kept.dedup();
        if kept.is_empty() {
            return Err(Error::EmptyGrid(format!("no bandwidth satisfies |h| >= {floor:.3e}")));
        }
        Ok(Self { entries: kept, depth, h_max: None, alpha: None })
    }

    pub fn entries(&self) -> &[Bandwidth] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.entries[0].dim()
    }

    pub fn h_max(&self) -> Option<f64> {
        self.h_max
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }
}

fn check_point(sample: &TreeSample, kernel: &Kernel, x: &[f64]) -> Result<()> {
    if sample.dim() != kernel.dim() {
        return Err(Error::DimensionMismatch { expected: kernel.dim(), got: sample.dim() });
    }
    if x.len() != sample.dim() {
        return Err(Error::DimensionMismatch { expected: sample.dim(), got: x.len() });
    }
    Ok(())
}

fn diff(x: &[f64], p: &[f64], buf: &mut [f64]) {
    for ((b, a), c) in buf.iter_mut().zip(x).zip(p) {
        *b = a - c;
    }
}

/// `ν̂_h(x) = |T_n|^{-1} Σ_u K_h(x - X_u)`, summed over every node.
pub fn kde_eval(sample: &TreeSample, kernel: &Kernel, h: &Bandwidth, x: &[f64]) -> Result<f64> {
    check_point(sample, kernel, x)?;
    let mut buf = vec![0.0; x.len()];
    let mut total = 0.0;
    for p in sample.points() {
        diff(x, p, &mut buf);
        total += scaled_kernel_eval(kernel, h, &buf)?;
    }
    Ok(total / sample.len() as f64)
}

/// `K_h ∗ ν̂_{h'}(x) = |T_n|^{-1} Σ_u (K_h ∗ K_{h'})(x - X_u)`.
pub fn smoothed_kde_eval(sample: &TreeSample, kernel: &Kernel, h: &Bandwidth, hp: &Bandwidth, x: &[f64]) -> Result<f64> {
    check_point(sample, kernel, x)?;
    let mut buf = vec![0.0; x.len()];
    let mut total = 0.0;
    for p in sample.points() {
        diff(x, p, &mut buf);
        total += convolved_kernel_eval(kernel, h, hp, &buf)?;
    }
    Ok(total / sample.len() as f64)
}

/// Reusable view of a sample, kernel and grid for repeated evaluation.
///
/// One-dimensional samples are sorted once so kernel sums only visit points
/// where a term can be nonzero; for the Gaussian the window is wide enough
/// that every skipped term is exactly `0.0` in floating point. Gaussian
/// tables with many bandwidths use the anchored series of [`GaussianSums`].
pub struct KdeContext<'a> {
    sample: &'a TreeSample,
    kernel: &'a Kernel,
    grid: &'a BandwidthGrid,
    sorted: Option<Vec<f64>>,
}

impl<'a> KdeContext<'a> {
    pub fn new(sample: &'a TreeSample, kernel: &'a Kernel, grid: &'a BandwidthGrid) -> Result<Self> {
        if sample.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch { expected: kernel.dim(), got: sample.dim() });
        }
        if grid.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch { expected: kernel.dim(), got: grid.dim() });
        }
        let sorted = (sample.dim() == 1).then(|| {
            let mut v = sample.values().to_vec();
            v.sort_by(f64::total_cmp);
            v
        });
        Ok(Self { sample, kernel, grid, sorted })
    }

    pub fn sample(&self) -> &TreeSample {
        self.sample
    }

    pub fn kernel(&self) -> &Kernel {
        self.kernel
    }

    pub fn grid(&self) -> &BandwidthGrid {
        self.grid
    }

    /// Sum over sorted values in `[x - radius, x + radius]`.
    fn window_sum<F: Fn(f64) -> Result<f64>>(&self, sorted: &[f64], x: f64, radius: f64, term: F) -> Result<f64> {
        let lo = sorted.partition_point(|&v| v < x - radius);
        let hi = sorted.partition_point(|&v| v <= x + radius);
        let mut total = 0.0;
        for &v in &sorted[lo..hi] {
            total += term(x - v)?;
        }
        Ok(total)
    }

    fn radius(&self, width: f64) -> f64 {
        match self.kernel.profile() {
            Profile::Gaussian => GAUSS_ZERO_RADIUS * width,
            Profile::Tabulated(p) => p.radius() * width,
        }
    }

    pub fn kde(&self, h: &Bandwidth, x: &[f64]) -> Result<f64> {
        match &self.sorted {
            Some(sorted) if x.len() == 1 => {
                let hj = h.components()[0];
                let s = self.window_sum(sorted, x[0], self.radius(hj), |t| Ok(self.kernel.scaled_1d(t, hj)))?;
                Ok(s / sorted.len() as f64)
            }
            _ => kde_eval(self.sample, self.kernel, h, x),
        }
    }

    pub fn smoothed(&self, h: &Bandwidth, hp: &Bandwidth, x: &[f64]) -> Result<f64> {
        match &self.sorted {
            Some(sorted) if x.len() == 1 => {
                let (a, b) = (h.components()[0], hp.components()[0]);
                let radius = match self.kernel.profile() {
                    Profile::Gaussian => GAUSS_ZERO_RADIUS * (a * a + b * b).sqrt(),
                    Profile::Tabulated(p) => p.radius() * (a + b),
                };
                let s = self.window_sum(sorted, x[0], radius, |t| self.kernel.convolved_1d(t, a, b))?;
                Ok(s / sorted.len() as f64)
            }
            _ => smoothed_kde_eval(self.sample, self.kernel, h, hp, x),
        }
    }

    /// All `ν̂_{h'}(x)` and `K_h ∗ ν̂_{h'}(x)` over the grid at `x`.
    pub fn table(&self, x: &[f64]) -> Result<GlTable> {
        check_point(self.sample, self.kernel, x)?;
        let hs = self.grid.entries();
        let g = hs.len();
        let mut smoothed = vec![0.0; g * g];
        let nu: Vec<f64> = match (&self.sorted, self.kernel.profile()) {
            (Some(sorted), Profile::Gaussian) if anchors_pay_off(hs) => {
                let mut sums = GaussianSums::new(sorted, x[0]);
                let n = sorted.len() as f64;
                let mut density = |s: f64| sums.sum(0.5 / (s * s)) * gaussian_pdf(0.0) / (s * n);
                let nu = hs.iter().map(|h| density(h.components()[0])).collect();
                for i in 0..g {
                    for j in i..g {
                        let (a, b) = (hs[i].components()[0], hs[j].components()[0]);
                        let v = density((a * a + b * b).sqrt());
                        smoothed[i * g + j] = v;
                        smoothed[j * g + i] = v;
                    }
                }
                nu
            }
            _ => {
                for i in 0..g {
                    for j in i..g {
                        let v = self.smoothed(&hs[i], &hs[j], x)?;
                        smoothed[i * g + j] = v;
                        smoothed[j * g + i] = v;
                    }
                }
                hs.iter().map(|h| self.kde(h, x)).collect::<Result<_>>()?
            }
        };
        let products = hs.iter().map(Bandwidth::prod).collect();
        Ok(GlTable {
            x: x.to_vec(),
            tree_len: self.sample.len(),
            depth: self.sample.depth(),
            bandwidths: hs.to_vec(),
            products,
            nu,
            smoothed,
        })
    }
}

/// Ratio between consecutive expansion anchors.
const ANCHOR_RATIO: f64 = 1.1;
/// Series length; the per-point truncation error is a Poisson(`≤ 0.1 c D`)
/// tail beyond this many terms.
const ANCHOR_TERMS: usize = 30;

/// `F(c) = Σ_u exp(-c (x - X_u)²)` for many `c` at one `x`.
///
/// Each `c` is expanded around the nearest anchor `c_a ≥ c` on a geometric
/// ladder: `F(c) = Σ_k ((c_a - c)/c_a)^k μ_k` with
/// `μ_k = Σ_u (c_a D_u)^k / k! · exp(-c_a D_u)`. All terms are positive, and
/// the moments of an anchor are shared by every `c` that maps to it, so a
/// whole bandwidth table costs a few passes over the data instead of one
/// pass per bandwidth pair. Terms with `c D ≤ 40` are reproduced to rounding;
/// farther terms, each below `e^-40`, only to a truncated Poisson tail.
struct GaussianSums<'s> {
    sorted: &'s [f64],
    x: f64,
    moments: HashMap<i64, Vec<f64>>,
}

impl<'s> GaussianSums<'s> {
    fn new(sorted: &'s [f64], x: f64) -> Self {
        Self { sorted, x, moments: HashMap::new() }
    }

    fn sum(&mut self, c: f64) -> f64 {
        let m = anchor_index(c);
        let anchor = (m as f64 * ANCHOR_RATIO.ln()).exp();
        let r = (anchor - c) / anchor;
        let (sorted, x) = (self.sorted, self.x);
        let mu = self.moments.entry(m).or_insert_with(|| anchor_moments(sorted, x, anchor));
        mu.iter().rev().fold(0.0, |acc, &v| acc * r + v)
    }
}

fn anchor_index(c: f64) -> i64 {
    (c.ln() / ANCHOR_RATIO.ln()).ceil() as i64
}

/// An anchor pass costs a few direct passes; use anchors only when there
/// are clearly more distinct widths than anchors.
fn anchors_pay_off(hs: &[Bandwidth]) -> bool {
    let widths: Vec<f64> = hs.iter().map(|h| h.components()[0]).collect();
    let mut anchors = std::collections::BTreeSet::new();
    let mut pairs = 0usize;
    for (i, a) in widths.iter().enumerate() {
        for b in &widths[i..] {
            anchors.insert(anchor_index(0.5 / (a * a + b * b)));
            pairs += 1;
        }
        anchors.insert(anchor_index(0.5 / (a * a)));
    }
    3 * anchors.len() < pairs + widths.len()
}

fn anchor_moments(sorted: &[f64], x: f64, anchor: f64) -> Vec<f64> {
    let radius = GAUSS_ZERO_RADIUS / (2.0 * anchor).sqrt();
    let lo = sorted.partition_point(|&v| v < x - radius);
    let hi = sorted.partition_point(|&v| v <= x + radius);
    let inv: Vec<f64> = (0..=ANCHOR_TERMS).map(|k| 1.0 / k.max(1) as f64).collect();
    let mut mu = vec![0.0; ANCHOR_TERMS + 1];
    for &v in &sorted[lo..hi] {
        let d = anchor * (x - v) * (x - v);
        let t0 = (-d).exp();
        let mut t = t0;
        mu[0] += t;
        for k in 1..=ANCHOR_TERMS {
            t *= d * inv[k];
            // past k = 2d the terms at least halve, so the rest is below 2t
            if t == 0.0 || (k as f64 >= 2.0 * d && t < 1e-20 * t0) {
                break;
            }
            mu[k] += t;
        }
    }
    mu
}

/// Cached pairwise quantities at a single evaluation point. Nothing here
/// depends on `κ`, so one table serves a whole calibration sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct GlTable {
    x: Vec<f64>,
    tree_len: usize,
    depth: u32,
    bandwidths: Vec<Bandwidth>,
    products: Vec<f64>,
    nu: Vec<f64>,
    /// Row-major `smoothed[i * G + j] = K_{h_i} ∗ ν̂_{h_j}(x)`.
    smoothed: Vec<f64>,
}

impl GlTable {
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }

    pub fn bandwidths(&self) -> &[Bandwidth] {
        &self.bandwidths
    }

    pub fn nu_hat(&self, j: usize) -> f64 {
        self.nu[j]
    }

    pub fn smoothed(&self, i: usize, j: usize) -> f64 {
        self.smoothed[i * self.len() + j]
    }

    fn log_ratio(&self) -> f64 {
        log_ratio(self.tree_len as f64)
    }

    /// `aV(x, h_j)` for penalty constant `κ`.
    pub fn variance(&self, kappa: f64, j: usize) -> f64 {
        kappa * self.log_ratio() / self.products[j]
    }

    /// `(|T_n| / log|T_n|) · |h_j| · (ν̂_{h_j}(x) - K_{h_i} ∗ ν̂_{h_j}(x))²`: the
    /// smallest `κ` for which pair `(i, j)` contributes nothing to `Â`.
    pub fn pair_threshold(&self, i: usize, j: usize) -> f64 {
        let d2 = (self.nu[j] - self.smoothed(i, j)).powi(2);
        if d2 == 0.0 {
            return 0.0;
        }
        d2 * self.products[j] / self.log_ratio()
    }

    /// `Â(x, h_i) = max_j ((ν̂_{h_j} - K_{h_i} ∗ ν̂_{h_j})² - aV(x, h_j))_+`
    ///
    /// The positive part is decided by comparing `κ` with
    /// [`pair_threshold`](Self::pair_threshold), so `κ = κ_max` zeroes every
    /// term exactly.
    pub fn bias_proxy(&self, kappa: f64, i: usize) -> f64 {
        (0..self.len())
            .map(|j| {
                if self.pair_threshold(i, j) <= kappa {
                    0.0
                } else {
                    ((self.nu[j] - self.smoothed(i, j)).powi(2) - self.variance(kappa, j)).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `κ_max = max_{i,j}` [`pair_threshold`](Self::pair_threshold).
    pub fn kappa_max(&self) -> f64 {
        let g = self.len();
        (0..g).flat_map(|i| (0..g).map(move |j| (i, j))).map(|(i, j)| self.pair_threshold(i, j)).fold(0.0, f64::max)
    }

    /// Minimises `Â(x, h) + (b/a) · aV(x, h)`; ties go to the larger `|h|`.
    pub fn select(&self, kappa: f64, b_over_a: f64) -> GlState {
        let mut records = Vec::with_capacity(self.len());
        let mut best = 0;
        for i in 0..self.len() {
            let a_hat = self.bias_proxy(kappa, i);
            let v = self.variance(kappa, i);
            let criterion = a_hat + b_over_a * v;
            records.push(GlRecord { h: self.bandwidths[i].clone(), nu_hat: self.nu[i], variance: v, a_hat, criterion });
            if criterion < records[best].criterion {
                best = i;
            }
        }
        GlState { x: self.x.clone(), kappa, b_over_a, depth: self.depth, records, selected: best }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlRecord {
    pub h: Bandwidth,
    pub nu_hat: f64,
    /// `aV(x, h)`
    pub variance: f64,
    pub a_hat: f64,
    pub criterion: f64,
}

/// Selection outcome at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct GlState {
    pub x: Vec<f64>,
    pub kappa: f64,
    pub b_over_a: f64,
    pub depth: u32,
    pub records: Vec<GlRecord>,
    pub selected: usize,
}

impl GlState {
    pub fn selected_record(&self) -> &GlRecord {
        &self.records[self.selected]
    }

    pub fn selected_bandwidth(&self) -> &Bandwidth {
        &self.records[self.selected].h
    }

    pub fn estimate(&self) -> f64 {
        self.records[self.selected].nu_hat
    }
}

pub fn bias_proxy_a(sample: &TreeSample, kernel: &Kernel, grid: &BandwidthGrid, x: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let table = KdeContext::new(sample, kernel, grid)?.table(x)?;
    Ok((0..table.len()).map(|i| table.bias_proxy(kappa, i)).collect())
}

pub fn select_bandwidth_gl(
    sample: &TreeSample,
    kernel: &Kernel,
    grid: &BandwidthGrid,
    x: &[f64],
    kappa: f64,
    b_over_a: f64,
) -> Result<GlState> {
    validate_penalty(kappa, b_over_a)?;
    Ok(KdeContext::new(sample, kernel, grid)?.table(x)?.select(kappa, b_over_a))
}

pub(crate) fn validate_penalty(kappa: f64, b_over_a: f64) -> Result<()> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("kappa must be finite and nonnegative, got {kappa}")));
    }
    if !(b_over_a >= 1.0 && b_over_a.is_finite()) {
        return Err(Error::InvalidArgument(format!("b/a must be at least 1, got {b_over_a}")));
    }
    Ok(())
}

/// One point of a locally adaptive estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptivePoint {
    pub x: Vec<f64>,
    pub kappa: f64,
    pub h: Bandwidth,
    pub nu_hat: f64,
}

/// Selects a bandwidth independently at each point with a fixed `κ`.
pub fn adaptive_estimate(
    sample: &TreeSample,
    kernel: &Kernel,
    grid: &BandwidthGrid,
    x_grid: &[Vec<f64>],
    kappa: f64,
    b_over_a: f64,
) -> Result<Vec<AdaptivePoint>> {
    validate_penalty(kappa, b_over_a)?;
    let ctx = KdeContext::new(sample, kernel, grid)?;
    x_grid
        .par_iter()
        .map(|x| {
            let state = ctx.table(x)?.select(kappa, b_over_a);
            Ok(AdaptivePoint {
                x: x.clone(),
                kappa,
                h: state.selected_bandwidth().clone(),
                nu_hat: state.estimate(),
            })
        })
        .collect()
}

/// `points` equispaced values over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate_bar, BetaBarModel};
    use crate::quadrature::integrate;
    use proptest::prelude::*;

    fn single(x: f64) -> TreeSample {
        TreeSample::new(0, 1, vec![x]).unwrap()
    }

    fn bw(h: f64) -> Bandwidth {
        Bandwidth::isotropic(h, 1).unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = BandwidthGrid::build(0.5, 2.0, 3, 1).unwrap();
        assert_eq!(g.entries(), &[bw(0.5)]);
        let g = BandwidthGrid::build(0.5, 2.0, 10, 1).unwrap();
        assert_eq!(g.len(), 11);
        for (k, h) in g.entries().iter().enumerate() {
            assert!((h.prod() - 0.5 / ((k + 1) as f64).powi(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_rejections() {
        assert!(matches!(BandwidthGrid::build(1e-4, 2.0, 3, 1), Err(Error::EmptyGrid(_))));
        assert!(BandwidthGrid::build(0.5, 1.0, 3, 1).is_err());
        assert!(BandwidthGrid::build(-0.5, 2.0, 3, 1).is_err());
        assert!(BandwidthGrid::from_entries(vec![bw(1e-6)], 10).is_err());
    }

    #[test]
    fn two_dimensional_grid_is_sorted_product() {
        let g = BandwidthGrid::build(0.5, 2.0, 10, 2).unwrap();
        let floor = min_bandwidth_product(10);
        assert!(g.entries().windows(2).all(|w| w[0].prod() >= w[1].prod()));
        assert!(g.entries().iter().all(|h| h.prod() >= floor));
        assert!(g.len() < 121);
        assert_eq!(g.entries()[0].components(), &[0.5, 0.5]);
    }

    #[test]
    fn single_point_kde() {
        let t = single(0.3);
        let v = kde_eval(&t, &Kernel::gaussian(1), &bw(0.1), &[0.3]).unwrap();
        assert!((v - 10.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        let s = smoothed_kde_eval(&t, &Kernel::gaussian(1), &bw(1.0), &bw(1.0), &[0.3]).unwrap();
        assert!((s - 0.5 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kde_integrates_to_one() {
        let t = simulate_bar(&BetaBarModel, 6, 3).unwrap();
        let k = Kernel::gaussian(1);
        let total = integrate(|x| kde_eval(&t, &k, &bw(0.05), &[x]).unwrap(), -1.0, 2.0, 1e-8).unwrap();
        assert!((total - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gaussian_table_matches_direct_sums_in_the_tails() {
        let t = simulate_bar(&BetaBarModel, 8, 11).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::build(0.5, 1.5, 8, 1).unwrap();
        let ctx = KdeContext::new(&t, &k, &grid).unwrap();
        for x in [-0.3, -0.01, 0.0, 0.004, 0.5, 0.999, 1.2] {
            let table = ctx.table(&[x]).unwrap();
            for (j, hj) in grid.entries().iter().enumerate() {
                let full = kde_eval(&t, &k, hj, &[x]).unwrap();
                assert!((table.nu_hat(j) - full).abs() <= 1e-12 * full + 1e-30, "x={x} j={j}");
                for (i, hi) in grid.entries().iter().enumerate().step_by(3) {
                    let full = smoothed_kde_eval(&t, &k, hi, hj, &[x]).unwrap();
                    assert!((table.smoothed(i, j) - full).abs() <= 1e-12 * full + 1e-30, "x={x} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn anchored_gaussian_sums_match_brute_force() {
        let t = simulate_bar(&BetaBarModel, 9, 3).unwrap();
        let mut sorted = t.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        for x in [-0.2, 0.0, 0.013, 0.5, 0.97] {
            let mut sums = GaussianSums::new(&sorted, x);
            for e in -4..=28 {
                let c = 1.7f64.powi(e);
                let direct: f64 = sorted.iter().map(|v| (-c * (x - v) * (x - v)).exp()).sum();
                let got = sums.sum(c);
                // relative accuracy, except for sums made only of terms below e^-40
                let n = sorted.len() as f64;
                assert!((got - direct).abs() <= 1e-13 * direct + 1e-17 * n, "x={x} c={c}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn large_grids_use_anchors() {
        let grid = BandwidthGrid::build(0.5, 1.5, 15, 1).unwrap();
        assert!(anchors_pay_off(grid.entries()));
        assert!(!anchors_pay_off(BandwidthGrid::build(0.5, 2.0, 6, 1).unwrap().entries()));
    }

    #[test]
    fn context_matches_full_sums() {
        let t = simulate_bar(&BetaBarModel, 9, 7).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::build(0.5, 2.0, 9, 1).unwrap();
        let ctx = KdeContext::new(&t, &k, &grid).unwrap();
        let table = ctx.table(&[0.37]).unwrap();
        for (j, hj) in grid.entries().iter().enumerate() {
            let full = kde_eval(&t, &k, hj, &[0.37]).unwrap();
            assert!((table.nu_hat(j) - full).abs() <= 1e-12 * full.abs().max(1.0));
            for (i, hi) in grid.entries().iter().enumerate() {
                let full = smoothed_kde_eval(&t, &k, hi, hj, &[0.37]).unwrap();
                assert!((table.smoothed(i, j) - full).abs() <= 1e-12 * full.abs().max(1.0));
            }
        }
    }

    #[test]
    fn smoothed_is_symmetric_and_approaches_kde() {
        let t = simulate_bar(&BetaBarModel, 8, 1).unwrap();
        let k = Kernel::gaussian(1);
        let a = smoothed_kde_eval(&t, &k, &bw(0.1), &bw(0.03), &[0.4]).unwrap();
        let b = smoothed_kde_eval(&t, &k, &bw(0.03), &bw(0.1), &[0.4]).unwrap();
        assert!((a - b).abs() < 1e-10);
        let plain = kde_eval(&t, &k, &bw(0.1), &[0.4]).unwrap();
        let mut last = f64::INFINITY;
        for hp in [0.01, 0.003, 0.001] {
            let gap = (smoothed_kde_eval(&t, &k, &bw(0.1), &bw(hp), &[0.4]).unwrap() - plain).abs();
            assert!(gap <= last);
            last = gap;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn variance_term_values() {
        assert!((variance_term(1.0, 1, &bw(1.0)) - 3f64.ln() / 3.0).abs() < 1e-15);
        assert_eq!(variance_term(0.0, 5, &bw(0.2)), 0.0);
        let a = variance_term(0.7, 6, &bw(0.1));
        let b = variance_term(0.7, 6, &bw(0.2));
        assert!((a - 2.0 * b).abs() < 1e-15);
    }

    #[test]
    fn singleton_grid_behaviour() {
        let t = simulate_bar(&BetaBarModel, 7, 5).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::from_entries(vec![bw(0.1)], 7).unwrap();
        let a = bias_proxy_a(&t, &k, &grid, &[0.5], 0.0).unwrap();
        let nu = kde_eval(&t, &k, &bw(0.1), &[0.5]).unwrap();
        let sm = smoothed_kde_eval(&t, &k, &bw(0.1), &bw(0.1), &[0.5]).unwrap();
        assert!((a[0] - (nu - sm).powi(2)).abs() < 1e-12);
        let state = select_bandwidth_gl(&t, &k, &grid, &[0.5], 0.3, 2.0).unwrap();
        assert_eq!(state.selected, 0);
        assert_eq!(state.selected_bandwidth(), &bw(0.1));
    }

    #[test]
    fn kappa_max_zeroes_bias_proxy() {
        let t = simulate_bar(&BetaBarModel, 10, 42).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::build(0.5, 2.0, 10, 1).unwrap();
        let table = KdeContext::new(&t, &k, &grid).unwrap().table(&[0.5]).unwrap();
        let km = table.kappa_max();
        assert!(km > 0.0);
        for i in 0..table.len() {
            assert_eq!(table.bias_proxy(km, i), 0.0);
            assert_eq!(table.bias_proxy(2.0 * km, i), 0.0);
        }
        let state = table.select(km, 2.0);
        assert_eq!(state.selected, 0);
        let min = state.records.iter().map(|r| r.criterion).fold(f64::INFINITY, f64::min);
        assert_eq!(state.selected_record().criterion, min);
    }

    #[test]
    fn selection_is_reproducible() {
        let t = simulate_bar(&BetaBarModel, 9, 2).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::build(0.5, 2.0, 9, 1).unwrap();
        let a = select_bandwidth_gl(&t, &k, &grid, &[0.3], 0.05, 2.0).unwrap();
        let b = select_bandwidth_gl(&t, &k, &grid, &[0.3], 0.05, 2.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_penalty() {
        let t = single(0.5);
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::from_entries(vec![bw(0.1)], 0).unwrap();
        assert!(select_bandwidth_gl(&t, &k, &grid, &[0.5], -1.0, 2.0).is_err());
        assert!(select_bandwidth_gl(&t, &k, &grid, &[0.5], 1.0, 0.5).is_err());
    }

    #[test]
    fn adaptive_single_point_matches_components() {
        let t = simulate_bar(&BetaBarModel, 8, 9).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::build(0.5, 2.0, 8, 1).unwrap();
        let est = adaptive_estimate(&t, &k, &grid, &[vec![0.6]], 0.02, 2.0).unwrap();
        let state = select_bandwidth_gl(&t, &k, &grid, &[0.6], 0.02, 2.0).unwrap();
        assert_eq!(&est[0].h, state.selected_bandwidth());
        let direct = kde_eval(&t, &k, &est[0].h, &[0.6]).unwrap();
        assert!((est[0].nu_hat - direct).abs() < 1e-12);
    }

    #[test]
    fn tabulated_kernel_context() {
        let prof = crate::kernel::TabulatedProfile::new(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        let k = Kernel::tabulated(prof, 1).unwrap();
        let t = simulate_bar(&BetaBarModel, 5, 4).unwrap();
        let grid = BandwidthGrid::from_entries(vec![bw(0.3), bw(0.1)], 5).unwrap();
        let table = KdeContext::new(&t, &k, &grid).unwrap().table(&[0.45]).unwrap();
        let full = smoothed_kde_eval(&t, &k, &bw(0.3), &bw(0.1), &[0.45]).unwrap();
        assert!((table.smoothed(0, 1) - full).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bias_proxy_nonincreasing_in_kappa(seed in 0u64..1000, x in 0.05f64..0.95, k1 in 0.0f64..0.5, dk in 0.0f64..0.5) {
            let t = simulate_bar(&BetaBarModel, 7, seed).unwrap();
            let k = Kernel::gaussian(1);
            let grid = BandwidthGrid::build(0.5, 2.0, 7, 1).unwrap();
            let table = KdeContext::new(&t, &k, &grid).unwrap().table(&[x]).unwrap();
            for i in 0..table.len() {
                let lo = table.bias_proxy(k1, i);
                let hi = table.bias_proxy(k1 + dk, i);
                prop_assert!(lo >= 0.0 && hi >= 0.0);
                prop_assert!(hi <= lo);
            }
        }
    }
}
