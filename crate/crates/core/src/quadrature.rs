//! Adaptive Gauss–Kronrod (7/15) quadrature on finite and half-infinite
//! intervals.
#![allow(clippy::excessive_precision)]

use crate::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_20,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_98,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

const MAX_PANELS: usize = 4000;

/// Single 15-point Kronrod panel; returns (kronrod estimate, error estimate)
/// with the usual QUADPACK scaling of the Gauss/Kronrod difference.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut res_abs = fc.abs() * WGK[7];
    let mut fv = [(0.0, 0.0); 7];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let (f1, f2) = (f(centre - dx), f(centre + dx));
        fv[j] = (f1, f2);
        kronrod += w * (f1 + f2);
        res_abs += w * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for (j, &(f1, f2)) in fv.iter().enumerate() {
        res_asc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
    }
    let scale = half.abs();
    let (res_abs, res_asc) = (res_abs * scale, res_asc * scale);
    let mut err = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * f64::min(1.0, (200.0 * err / res_asc).powf(1.5));
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (kronrod * half, err)
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Globally adaptive bisection: always split the panel with the largest
/// error estimate until the summed estimate drops below `tol`.
fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let panel = |a: f64, b: f64| -> Result<Panel> {
        let (value, err) = gk15(f, a, b);
        if !value.is_finite() {
            return Err(Error::Quadrature { a, b, estimate: f64::INFINITY });
        }
        Ok(Panel { a, b, value, err })
    };
    let mut heap = std::collections::BinaryHeap::new();
    let first = panel(a, b)?;
    let mut total_err = first.err;
    let mut abs_total = first.value.abs();
    heap.push(first);
    let mut stalls = 0;
    // below roundoff of the running sum no further splitting helps
    while total_err > tol.max(1e-14 * abs_total) {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if heap.len() >= MAX_PANELS || mid <= worst.a || mid >= worst.b {
            return Err(Error::Quadrature { a: worst.a, b: worst.b, estimate: total_err });
        }
        let left = panel(worst.a, mid)?;
        let right = panel(mid, worst.b)?;
        // roundoff detection as in QUADPACK: bisection no longer changes the
        // value or shrinks the error, so the result is as good as it gets
        let refined = left.value + right.value;
        if (worst.value - refined).abs() <= 1e-5 * refined.abs() && left.err + right.err >= 0.99 * worst.err {
            stalls += 1;
            if stalls >= 10 {
                heap.push(left);
                heap.push(right);
                break;
            }
        }
        total_err += left.err + right.err - worst.err;
        abs_total += left.value.abs() + right.value.abs() - worst.value.abs();
        heap.push(left);
        heap.push(right);
        // refresh to avoid drift from repeated subtraction
        if heap.len() % 64 == 0 {
            total_err = heap.iter().map(|p| p.err).sum();
            abs_total = heap.iter().map(|p| p.value.abs()).sum();
        }
    }
    Ok(heap.iter().map(|p| p.value).sum())
}

/// Integrates `f` over `[a, b]` to the absolute tolerance `abs_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return integrate(f, b, a, abs_tol).map(|v| -v);
    }
    adapt(&f, a, b, abs_tol)
}

/// Integrates over `[a, b]` split at the given interior breakpoints (kinks or
/// discontinuities of the integrand).
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    abs_tol: f64,
) -> Result<f64> {
    let mut cuts: Vec<f64> = breakpoints.iter().copied().filter(|&c| c > a && c < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);
    let share = abs_tol / (edges.len() - 1) as f64;
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += adapt(&f, w[0], w[1], share)?;
    }
    Ok(total)
}

/// Integrates `f` over `[a, ∞)` through the substitution `x = a + t / (1 - t)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64) -> Result<f64> {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        f(a + t / s) / (s * s)
    };
    adapt(&g, 0.0, 1.0, abs_tol)
}
