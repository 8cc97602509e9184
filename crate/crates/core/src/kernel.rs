//! Product kernels, bandwidth vectors and kernel–kernel convolution.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::quadrature;
use crate::{Error, Result};

/// Absolute tolerance of per-axis numeric convolution.
pub const CONVOLUTION_TOL: f64 = 1e-8;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Beyond this many standard deviations `exp(-z²/2)` underflows to exactly
/// zero in `f64`, so truncating a Gaussian sum there changes nothing.
pub const GAUSS_ZERO_RADIUS: f64 = 38.61;

#[inline]
pub fn gaussian_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Per-axis bandwidth vector `h` with product `|h|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bandwidth {
    h: Vec<f64>,
}

impl Bandwidth {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::InvalidArgument("bandwidth needs at least one component".into()));
        }
        if let Some(bad) = h.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!("bandwidth components must be positive, got {bad}")));
        }
        Ok(Self { h })
    }

    /// Same width `h` on each of `dim` axes.
    pub fn isotropic(h: f64, dim: usize) -> Result<Self> {
        Self::new(vec![h; dim])
    }

    pub fn components(&self) -> &[f64] {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    /// `|h| = h_1 ⋯ h_d`
    pub fn prod(&self) -> f64 {
        self.h.iter().product()
    }
}

/// Symmetric one-dimensional profile given by knots `0 = t_0 < … < t_k` and
/// values, linearly interpolated and zero beyond `t_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedProfile {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedProfile {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidArgument("a tabulated profile needs at least two (t, value) pairs".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::InvalidArgument("tabulated profile must start at t = 0".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("profile knots must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("profile values must be finite".into()));
        }
        Ok(Self { knots, values })
    }

    /// Parses `t,value` rows (an optional non-numeric header line is skipped).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut knots = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse(format!("line {}: expected `t,value`", i + 1)));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(t), Ok(v)) => {
                    knots.push(t);
                    values.push(v);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("line {}: non-numeric entry", i + 1))),
            }
        }
        Self::new(knots, values)
    }

    pub fn radius(&self) -> f64 {
        *self.knots.last().expect("non-empty")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        if a > self.radius() {
            return 0.0;
        }
        let j = self.knots.partition_point(|&k| k <= a).min(self.knots.len() - 1).max(1);
        let (t0, t1) = (self.knots[j - 1], self.knots[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        v0 + (v1 - v0) * (a - t0) / (t1 - t0)
    }

    fn integral_of<F: Fn(f64) -> f64>(&self, g: F) -> Result<f64> {
        let half = quadrature::integrate_pieces(g, 0.0, self.radius(), &self.knots, 1e-13)?;
        Ok(2.0 * half)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Gaussian,
    Tabulated(Arc<TabulatedProfile>),
}

impl Profile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Profile::Gaussian => gaussian_pdf(t),
            Profile::Tabulated(p) => p.eval(t),
        }
    }

    /// Support radius in standardised units; `None` for unbounded support.
    pub fn radius(&self) -> Option<f64> {
        match self {
            Profile::Gaussian => None,
            Profile::Tabulated(p) => Some(p.radius()),
        }
    }
}

/// `(‖K‖₁, ‖K‖₂², ‖K‖_∞)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelNorms {
    pub l1: f64,
    pub l2sq: f64,
    pub sup: f64,
}

/// Product kernel `K(t) = Π_j k(t_j)` on `R^d` built from a 1-d profile.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    profile: Profile,
    dim: usize,
    norms: KernelNorms,
}

impl Kernel {
    pub fn gaussian(dim: usize) -> Self {
        let d = dim.max(1) as i32;
        let norms = KernelNorms { l1: 1.0, l2sq: (0.5 / PI.sqrt()).powi(d), sup: INV_SQRT_2PI.powi(d) };
        Self { profile: Profile::Gaussian, dim: dim.max(1), norms }
    }

    pub fn tabulated(profile: TabulatedProfile, dim: usize) -> Result<Self> {
        let mass = profile.integral_of(|t| profile.eval(t))?;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("kernel profile integrates to {mass}, not 1")));
        }
        let l1 = profile.integral_of(|t| profile.eval(t).abs())?;
        let l2sq = profile.integral_of(|t| profile.eval(t).powi(2))?;
        let sup = profile.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = dim.max(1) as i32;
        let norms = KernelNorms { l1: l1.powi(d), l2sq: l2sq.powi(d), sup: sup.powi(d) };
        Ok(Self { profile: Profile::Tabulated(Arc::new(profile)), dim: dim.max(1), norms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.profile, Profile::Gaussian)
    }

    /// Conventional order of a symmetric nonnegative kernel: its first
    /// nonvanishing moment is the second.
    pub fn order(&self) -> u32 {
        2
    }

    pub fn norms(&self) -> KernelNorms {
        self.norms
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        t.iter().map(|&v| self.profile.eval(v)).product()
    }

    /// `k(t / h) / h` on one axis.
    #[inline]
    pub fn scaled_1d(&self, t: f64, h: f64) -> f64 {
        self.profile.eval(t / h) / h
    }

    /// `(k_h ∗ k_{h'})(t)` on one axis.
    pub fn convolved_1d(&self, t: f64, h: f64, hp: f64) -> Result<f64> {
        match &self.profile {
            Profile::Gaussian => {
                let s = (h * h + hp * hp).sqrt();
                Ok(gaussian_pdf(t / s) / s)
            }
            Profile::Tabulated(p) => {
                let r = p.radius();
                let lo = (-r * hp).max(t - r * h);
                let hi = (r * hp).min(t + r * h);
                if lo >= hi {
                    return Ok(0.0);
                }
                let mut cuts: Vec<f64> = Vec::with_capacity(4 * p.knots.len());
                for &k in &p.knots {
                    cuts.extend_from_slice(&[k * hp, -k * hp, t - k * h, t + k * h]);
                }
                quadrature::integrate_pieces(
                    |s| self.scaled_1d(t - s, h) * self.scaled_1d(s, hp),
                    lo,
                    hi,
                    &cuts,
                    CONVOLUTION_TOL,
                )
            }
        }
    }
}

fn check_dims(k: &Kernel, h: &Bandwidth, x: &[f64]) -> Result<()> {
    if h.dim() != k.dim() {
        return Err(Error::DimensionMismatch { expected: k.dim(), got: h.dim() });
    }
    if x.len() != k.dim() {
        return Err(Error::DimensionMismatch { expected: k.dim(), got: x.len() });
    }
    Ok(())
}

/// `K_h(x) = K(x_1/h_1, …, x_d/h_d) / |h|`
pub fn scaled_kernel_eval(k: &Kernel, h: &Bandwidth, x: &[f64]) -> Result<f64> {
    check_dims(k, h, x)?;
    Ok(x.iter().zip(h.components()).map(|(&t, &hj)| k.scaled_1d(t, hj)).product())
}

/// `(K_h ∗ K_{h'})(x)`, exact for the Gaussian profile.
pub fn convolved_kernel_eval(k: &Kernel, h: &Bandwidth, hp: &Bandwidth, x: &[f64]) -> Result<f64> {
    check_dims(k, h, x)?;
    check_dims(k, hp, x)?;
    let mut out = 1.0;
    for ((&t, &a), &b) in x.iter().zip(h.components()).zip(hp.components()) {
        out *= k.convolved_1d(t, a, b)?;
    }
    Ok(out)
}

pub fn kernel_norms(k: &Kernel) -> KernelNorms {
    k.norms()
}
