//! Reference bifurcating Markov chain models.
//!
//! Both models have conditionally independent, identically distributed
//! children given the parent, so the tagged-branch transition coincides with
//! the one-child marginal.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1};
use rayon::prelude::*;

use crate::rng::StreamFactory;
use crate::tree::{generation_range, tree_size, TreeSample};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Beta bifurcating autoregressive model on [0, 1]
// ---------------------------------------------------------------------------

/// BAR process on `[0, 1]` whose children are drawn from the mixture
/// `(1 - x) Beta(2, 3) + x Beta(3, 2)`. Its invariant law is `Beta(2, 2)` and
/// `E[child | x] = x / 5 + 2 / 5`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BetaBarModel;

fn check_unit(v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfDomain { value: v, space: "[0, 1]".into() })
    }
}

impl BetaBarModel {
    /// Conditional mean of a child, `x / 5 + 2 / 5`.
    pub fn link(x: f64) -> f64 {
        x / 5.0 + 2.0 / 5.0
    }

    pub fn invariant_density(y: f64) -> f64 {
        if (0.0..=1.0).contains(&y) {
            6.0 * y * (1.0 - y)
        } else {
            0.0
        }
    }

    pub fn invariant_cdf(y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        y * y * (3.0 - 2.0 * y)
    }
}

/// Transition density `(1-x)·12y(1-y)² + x·12y²(1-y)` of the Beta-BAR model.
pub fn beta_mixture_density(x: f64, y: f64) -> Result<f64> {
    check_unit(x)?;
    check_unit(y)?;
    Ok((1.0 - x) * 12.0 * y * (1.0 - y).powi(2) + x * 12.0 * y * y * (1.0 - y))
}

pub fn sample_beta_transition<R: Rng + ?Sized>(x: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let shape = if u < 1.0 - x { (2.0, 3.0) } else { (3.0, 2.0) };
    Beta::new(shape.0, shape.1).expect("valid shape").sample(rng)
}

fn sample_beta22<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Beta::new(2.0, 2.0).expect("valid shape").sample(rng)
}

// ---------------------------------------------------------------------------
// Growth-fragmentation model
// ---------------------------------------------------------------------------

/// Tent function `T(x) = (1 + x) on [-1, 0)`, `(1 - x) on [0, 1]`, 0 elsewhere.
pub fn tent(x: f64) -> f64 {
    if (-1.0..0.0).contains(&x) {
        1.0 + x
    } else if (0.0..=1.0).contains(&x) {
        1.0 - x
    } else {
        0.0
    }
}

/// Tent-shaped splitting rate on `(0, 5)`: `x / (5 - x) + 3 T(2 (x - 7/2))`.
pub fn splitting_rate_tent(x: f64) -> Result<f64> {
    if x > 0.0 && x < 5.0 {
        Ok(tent_rate(x))
    } else {
        Err(Error::OutOfDomain { value: x, space: "(0, 5)".into() })
    }
}

fn tent_rate(x: f64) -> f64 {
    x / (5.0 - x) + 3.0 * tent(2.0 * (x - 3.5))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplittingRate {
    /// The tent-shaped rate, defined on `(0, 5)` and diverging at 5.
    Tent,
    /// `B(x) ≡ c`.
    Constant(f64),
}

impl SplittingRate {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SplittingRate::Tent => {
                if x >= 5.0 {
                    f64::INFINITY
                } else if x <= 0.0 {
                    0.0
                } else {
                    tent_rate(x)
                }
            }
            SplittingRate::Constant(c) => c,
        }
    }

    /// Kinks of the rate, where quadrature should split.
    pub fn breakpoints(&self) -> &'static [f64] {
        match self {
            SplittingRate::Tent => &[3.0, 3.5, 4.0],
            SplittingRate::Constant(_) => &[],
        }
    }

    /// `∫_a^b B(2z) / (τ z) dz` in closed form.
    fn integrated_hazard(&self, tau: f64, a: f64, b: f64) -> f64 {
        match *self {
            SplittingRate::Constant(c) => c / tau * (b / a).ln(),
            SplittingRate::Tent => {
                if a.max(b) >= 2.5 {
                    return if b > a { f64::INFINITY } else { f64::NEG_INFINITY };
                }
                // 2 / (τ (5 - 2z)) plus the bump 3 T(4z - 7) / (τ z) on [3/2, 2],
                // which is (12 - 18/z)/τ rising and (24/z - 12)/τ falling
                let bump = |z: f64| {
                    let rise = |z: f64| 12.0 * (z - 1.5) - 18.0 * (z / 1.5).ln();
                    let z = z.clamp(1.5, 2.0);
                    if z <= 1.75 {
                        rise(z)
                    } else {
                        rise(1.75) + 24.0 * (z / 1.75).ln() - 12.0 * (z - 1.75)
                    }
                };
                (((5.0 - 2.0 * a) / (5.0 - 2.0 * b)).ln() + bump(b) - bump(a)) / tau
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RootLaw {
    Uniform { lo: f64, hi: f64 },
}

impl Default for RootLaw {
    fn default() -> Self {
        RootLaw::Uniform { lo: 0.5, hi: 2.0 }
    }
}

/// Cells grow exponentially at rate `tau` and split at rate `B(size)` into
/// two halves; `X_u` is the size at birth. `s_max` bounds the size space
/// `S = (0, s_max)`, and may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthFragModel {
    pub tau: f64,
    pub s_max: f64,
    pub rate: SplittingRate,
    pub root_law: RootLaw,
}

impl Default for GrowthFragModel {
    fn default() -> Self {
        Self { tau: 2.0, s_max: 5.0, rate: SplittingRate::Tent, root_law: RootLaw::default() }
    }
}

impl GrowthFragModel {
    /// Constant rate `B ≡ c` on an unbounded size space.
    pub fn constant_rate(tau: f64, c: f64) -> Self {
        Self { tau, s_max: f64::INFINITY, rate: SplittingRate::Constant(c), root_law: RootLaw::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.s_max > 0.0) {
            return Err(Error::InvalidArgument(format!("s_max must be positive, got {}", self.s_max)));
        }
        if self.rate == SplittingRate::Tent && self.s_max != 5.0 {
            return Err(Error::InvalidArgument("the tent rate is defined on S = (0, 5); set s_max = 5".into()));
        }
        if let SplittingRate::Constant(c) = self.rate {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("constant rate must be positive, got {c}")));
            }
        }
        let RootLaw::Uniform { lo, hi } = self.root_law;
        if !(lo > 0.0 && hi > lo && hi <= self.newborn_bound()) {
            return Err(Error::InvalidArgument(format!(
                "root law U({lo}, {hi}) must lie inside (0, {})",
                self.newborn_bound()
            )));
        }
        Ok(())
    }

    /// Upper end of the newborn-size space `S / 2`.
    pub fn newborn_bound(&self) -> f64 {
        self.s_max / 2.0
    }

    /// Instantaneous hazard in birth-size coordinates, `B(2z) / (τ z)`.
    pub fn hazard_rate(&self, z: f64) -> f64 {
        self.rate.eval(2.0 * z) / (self.tau * z)
    }

    /// `∫_a^b B(2z)/(τ z) dz`.
    pub fn cumulative_hazard(&self, a: f64, b: f64) -> Result<f64> {
        if !(a >= 0.0 && b >= 0.0) {
            return Err(Error::OutOfDomain { value: a.min(b), space: "[0, ∞)".into() });
        }
        if a == b {
            return Ok(0.0);
        }
        Ok(self.rate.integrated_hazard(self.tau, a, b))
    }

    fn check_size(&self, x: f64) -> Result<()> {
        if x > 0.0 && x < self.s_max {
            Ok(())
        } else {
            Err(Error::OutOfDomain { value: x, space: format!("(0, {})", self.s_max) })
        }
    }

    fn sample_root<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let RootLaw::Uniform { lo, hi } = self.root_law;
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Birth-size transition density `P(x, y)`.
pub fn gf_transition_density(model: &GrowthFragModel, x: f64, y: f64) -> Result<f64> {
    model.check_size(x)?;
    if y < x / 2.0 || y >= model.newborn_bound() {
        return Ok(0.0);
    }
    let h = model.cumulative_hazard(x / 2.0, y)?;
    Ok(model.hazard_rate(y) * (-h).exp())
}

/// Draws a child birth size by inverting the cumulative hazard at an Exp(1)
/// level (safeguarded Newton on a bracket).
pub fn sample_gf_transition<R: Rng + ?Sized>(model: &GrowthFragModel, x: f64, rng: &mut R) -> Result<f64> {
    model.check_size(x)?;
    let level: f64 = Exp1.sample(rng);
    invert_hazard(model, x / 2.0, level)
}

fn invert_hazard(model: &GrowthFragModel, start: f64, level: f64) -> Result<f64> {
    let bound = model.newborn_bound();
    let (mut lo, mut h_lo) = (start, 0.0);
    // Bracket: approach the boundary geometrically, or double outward.
    let mut hi;
    let mut h_hi;
    let mut k = 0;
    loop {
        k += 1;
        hi = if bound.is_finite() { bound - (bound - start) * 0.5f64.powi(k) } else { start * 2f64.powi(k) };
        if !hi.is_finite() || hi <= lo || k > 1000 {
            return Err(Error::NotBracketed(format!(
                "cumulative hazard from {start} never reaches {level}; the splitting rate must diverge at the size boundary"
            )));
        }
        h_hi = h_lo + model.cumulative_hazard(lo, hi)?;
        if h_hi >= level {
            break;
        }
        lo = hi;
        h_lo = h_hi;
    }

    let mut current = lo;
    for _ in 0..200 {
        let slope = model.hazard_rate(current);
        let h_current = if current == lo { h_lo } else { h_hi };
        let mut next = current + (level - h_current) / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let h_next = h_lo + model.cumulative_hazard(lo, next)?;
        if h_next < level {
            lo = next;
            h_lo = h_next;
        } else {
            hi = next;
            h_hi = h_next;
        }
        current = next;
        if (h_next - level).abs() <= 1e-11 * (1.0 + level) || hi - lo <= 1e-14 * hi {
            return Ok(next);
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Model dispatch and simulation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Model {
    BetaBar(BetaBarModel),
    GrowthFrag(GrowthFragModel),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::BetaBar(_) => "beta-bar",
            Model::GrowthFrag(_) => "growth-frag",
        }
    }

    /// Closure of the observation space, used for evaluation grids and plots.
    pub fn state_space(&self) -> (f64, f64) {
        match self {
            Model::BetaBar(_) => (0.0, 1.0),
            Model::GrowthFrag(m) => {
                let hi = if m.s_max.is_finite() { m.newborn_bound() } else { 4.0 * m.root_law_hi() };
                (0.0, hi)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::BetaBar(_) => Ok(()),
            Model::GrowthFrag(m) => m.validate(),
        }
    }

    /// Closed-form invariant density, when one is known.
    pub fn invariant_density(&self, y: f64) -> Option<f64> {
        match self {
            Model::BetaBar(_) => Some(BetaBarModel::invariant_density(y)),
            Model::GrowthFrag(_) => None,
        }
    }

    pub fn has_known_invariant_density(&self) -> bool {
        matches!(self, Model::BetaBar(_))
    }

    pub fn sample_root<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Model::BetaBar(_) => sample_beta22(rng),
            Model::GrowthFrag(m) => m.sample_root(rng),
        }
    }

    /// One child of a parent in state `x`.
    pub fn sample_child<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        match self {
            Model::BetaBar(_) => {
                check_unit(x)?;
                Ok(sample_beta_transition(x, rng))
            }
            Model::GrowthFrag(m) => sample_gf_transition(m, x, rng),
        }
    }

    /// Marginal child density `P(x, y)`, which here is also the tagged-branch
    /// transition density.
    pub fn transition_density(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            Model::BetaBar(_) => beta_mixture_density(x, y),
            Model::GrowthFrag(m) => gf_transition_density(m, x, y),
        }
    }
}

impl GrowthFragModel {
    fn root_law_hi(&self) -> f64 {
        let RootLaw::Uniform { hi, .. } = self.root_law;
        hi
    }
}

/// Simulates generations `0..=depth`. Node `u` draws from its own stream,
/// so the output is identical for any thread count.
pub fn simulate(model: &Model, depth: u32, seed: u64) -> Result<TreeSample> {
    model.validate()?;
    let size = tree_size(depth)?;
    let streams = StreamFactory::new(seed);
    let mut values = vec![0.0; size];
    values[0] = model.sample_root(&mut streams.stream(0));
    for m in 1..=depth {
        let range = generation_range(m);
        let parents = &values[generation_range(m - 1)];
        let children: Vec<f64> = range
            .clone()
            .into_par_iter()
            .with_min_len(256)
            .map(|u| {
                let parent = parents[(u - 1) / 2 - ((1usize << (m - 1)) - 1)];
                model.sample_child(parent, &mut streams.stream(u as u64))
            })
            .collect::<Result<_>>()?;
        values[range].copy_from_slice(&children);
    }
    TreeSample::new(depth, 1, values)
}

pub fn simulate_bar(model: &BetaBarModel, depth: u32, seed: u64) -> Result<TreeSample> {
    simulate(&Model::BetaBar(*model), depth, seed)
}

pub fn simulate_growth_frag(model: &GrowthFragModel, depth: u32, seed: u64) -> Result<TreeSample> {
    simulate(&Model::GrowthFrag(*model), depth, seed)
}

/// A single lineage `(Y_0, ..., Y_m)` of the tagged-branch chain.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedBranchPath {
    pub values: Vec<f64>,
}

impl TaggedBranchPath {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("paths are never empty")
    }
}

pub fn simulate_tagged_branch(model: &Model, steps: usize, seed: u64) -> Result<TaggedBranchPath> {
    model.validate()?;
    let streams = StreamFactory::new(seed);
    let mut values = Vec::with_capacity(steps + 1);
    let mut y = model.sample_root(&mut streams.stream(0));
    values.push(y);
    for k in 1..=steps {
        y = model.sample_child(y, &mut streams.stream(k as u64))?;
        values.push(y);
    }
    Ok(TaggedBranchPath { values })
}

// ---------------------------------------------------------------------------
// Stationary birth-size density of the growth-fragmentation chain
// ---------------------------------------------------------------------------

/// Numerical invariant density of the birth-size chain on a bounded size
/// space.
///
/// Writing `b(z) = B(2z)/(τz)` and `Λ(z) = ∫_0^z b`, stationarity reads
/// `ν(y) = b(y) e^{-Λ(y)} G(min(2y, L))` with `G(s) = ∫_0^s ν(x) e^{Λ(x/2)} dx`
/// and `L = s_max / 2`. The fixed point is computed for `G` on a uniform grid,
/// integrating the `b e^{-Λ}` factor exactly cell by cell, which absorbs the
/// integrable singularity of `ν` at `L`.
#[derive(Clone, Debug)]
pub struct StationaryDensity {
    model: GrowthFragModel,
    step: f64,
    /// `Λ` at nodes `k · step / 4`, `k = 0..=4N`.
    lambda_quarter: Vec<f64>,
    /// Normalised `G` at nodes `i · step`, `i = 0..=N`.
    g: Vec<f64>,
    /// CDF at nodes `i · step`.
    cdf: Vec<f64>,
}

impl StationaryDensity {
    pub fn solve(model: &GrowthFragModel, cells: usize) -> Result<Self> {
        model.validate()?;
        if !model.s_max.is_finite() {
            return Err(Error::InvalidArgument(
                "a stationary birth-size density requires a bounded size space".into(),
            ));
        }
        if model.hazard_rate(1e-12).is_infinite() {
            return Err(Error::InvalidArgument("hazard must be integrable at 0".into()));
        }
        let n = cells.max(16);
        let bound = model.newborn_bound();
        let step = bound / n as f64;
        let q = step / 4.0;
        let mut lambda_quarter = vec![0.0; 4 * n + 1];
        for k in 1..4 * n {
            lambda_quarter[k] = lambda_quarter[k - 1] + model.cumulative_hazard((k - 1) as f64 * q, k as f64 * q)?;
        }
        lambda_quarter[4 * n] = f64::INFINITY;

        // Cell weights ∫ b e^{-Λ} over [iΔ, (i+1)Δ] and the e^{Λ(m_i / 2)} factor.
        let node_survival = |i: usize| (-lambda_quarter[4 * i]).exp();
        let weights: Vec<f64> = (0..n).map(|i| node_survival(i) - node_survival(i + 1)).collect();
        let half_mid: Vec<f64> = (0..n).map(|i| lambda_quarter[2 * i + 1].exp()).collect();
        let src = |i: usize| (2 * i + 1).min(n);

        let mut g: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        for _ in 0..2000 {
            let mut next = vec![0.0; n + 1];
            for i in 0..n {
                next[i + 1] = next[i] + weights[i] * half_mid[i] * g[src(i)];
            }
            let mass: f64 = (0..n).map(|i| weights[i] * next[src(i)]).sum();
            next.iter_mut().for_each(|v| *v /= mass);
            let diff = next.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            g = next;
            if diff < 1e-15 {
                break;
            }
        }
        let mut cdf = vec![0.0; n + 1];
        for i in 0..n {
            cdf[i + 1] = cdf[i] + weights[i] * g[src(i)];
        }
        Ok(Self { model: *model, step, lambda_quarter, g, cdf })
    }

    fn cells(&self) -> usize {
        self.g.len() - 1
    }

    fn lambda(&self, y: f64) -> f64 {
        let q = self.step / 4.0;
        let k = ((y / q).floor() as usize).min(4 * self.cells() - 1);
        let base = k as f64 * q;
        self.lambda_quarter[k] + self.model.cumulative_hazard(base, y).unwrap_or(f64::INFINITY)
    }

    fn g_at(&self, s: f64) -> f64 {
        let t = (s / self.step).clamp(0.0, self.cells() as f64);
        let i = (t.floor() as usize).min(self.cells() - 1);
        let frac = t - i as f64;
        self.g[i] * (1.0 - frac) + self.g[i + 1] * frac
    }

    pub fn density(&self, y: f64) -> f64 {
        let bound = self.model.newborn_bound();
        if y <= 0.0 || y >= bound {
            return 0.0;
        }
        self.model.hazard_rate(y) * (-self.lambda(y)).exp() * self.g_at((2.0 * y).min(bound))
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let bound = self.model.newborn_bound();
        if y <= 0.0 {
            return 0.0;
        }
        if y >= bound {
            return 1.0;
        }
        let i = ((y / self.step).floor() as usize).min(self.cells() - 1);
        let within = (-self.lambda_quarter[4 * i]).exp() - (-self.lambda(y)).exp();
        self.cdf[i] + within * self.g[(2 * i + 1).min(self.cells())]
    }

    /// `∫_a^b ν`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.cdf(b) - self.cdf(a)
    }
}
