//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits nonzero if any criterion fails. Each criterion also has a wall-clock
//! budget, which counts as part of the criterion.

use std::path::Path;
use std::time::{Duration, Instant};

use bmckde_cli::{Cli, RunConfig};
use bmckde_core::analysis::{
    bernstein_bound, deviations, exceedance, pointwise_risk, rate_regression, smoothed_truth, splitting_rate_curve,
    splitting_rate_plugin, variance_constant, BernsteinConstants, Deviation, EstimatorConfig, ErgodicityParams,
    SplitBandwidth,
};
use bmckde_core::calibration::KappaMode;
use bmckde_core::estimator::{kde_eval, linspace, KdeContext};
use bmckde_core::kernel::{gaussian_pdf, Bandwidth, Kernel};
use bmckde_core::models::{simulate, BetaBarModel, GrowthFragModel, Model, StationaryDensity};
use bmckde_core::quadrature::integrate_pieces;
use bmckde_core::rng::{mix64, replication_seed, StreamFactory};
use bmckde_core::stats::{ks_distance, linear_fit, mean_and_stderr, median};
use bmckde_core::tree::tree_size;
use clap::Parser;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, u64, fn() -> Outcome);

const BETA_BAR: Model = Model::BetaBar(BetaBarModel);

fn bw(h: f64) -> Bandwidth {
    Bandwidth::isotropic(h, 1).unwrap()
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uniform(seed: u64, i: u64) -> f64 {
    (mix64(seed ^ mix64(i)) >> 11) as f64 / (1u64 << 53) as f64
}

fn beta22_cdf(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    y * y * (3.0 - 2.0 * y)
}

fn defaults() -> RunConfig {
    RunConfig::default()
}

fn adaptive(cfg: &RunConfig, at: f64) -> EstimatorConfig {
    let mode = match cfg.kappa_mode().unwrap() {
        KappaMode::Shared { .. } => KappaMode::Shared { at: vec![at] },
        m => m,
    };
    EstimatorConfig::Adaptive { grid: cfg.grid_spec().unwrap(), calibration: cfg.calibration().unwrap(), mode }
}

fn ac1_simulator() -> Outcome {
    let tree = simulate(&BETA_BAR, 12, 101).map_err(|e| e.to_string())?;
    let ks = ks_distance(tree.generation(12), beta22_cdf);

    // E[child | x] = 2/5 + x/5
    let streams = StreamFactory::new(102);
    let mut worst = 0.0f64;
    for (k, &x) in [0.1, 0.3, 0.5, 0.7, 0.9].iter().enumerate() {
        let mut rng = streams.stream(k as u64);
        let draws: Vec<f64> = (0..20_000).map(|_| BETA_BAR.sample_child(x, &mut rng).unwrap()).collect();
        let (mean, se) = mean_and_stderr(&draws);
        worst = worst.max((mean - (0.4 + x / 5.0)).abs() / se);
    }
    check(ks < 0.05 && worst <= 3.0, format!("KS {ks:.4} < 0.05, worst conditional-mean z {worst:.2} <= 3"))
}

fn ac2_convolution() -> Outcome {
    let k = Kernel::gaussian(1);
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let h = 0.01 + 0.99 * uniform(2, 3 * i);
        let hp = 0.01 + 0.99 * uniform(2, 3 * i + 1);
        let x = -2.0 + 4.0 * uniform(2, 3 * i + 2);
        let closed = k.convolved_1d(x, h, hp).map_err(|e| e.to_string())?;
        let reach = 40.0 * h.max(hp) + x.abs();
        let quad = integrate_pieces(
            |z| gaussian_pdf((x - z) / h) / h * gaussian_pdf(z / hp) / hp,
            -reach,
            reach,
            &[0.0, x],
            1e-11,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((closed - quad).abs());
    }
    check(worst <= 1e-6, format!("max |closed form - quadrature| {worst:.2e} <= 1e-6 over 20 triples"))
}

fn kde_replicates(seed: u64) -> Vec<f64> {
    let k = Kernel::gaussian(1);
    (0..200u64)
        .map(|r| {
            let tree = simulate(&BETA_BAR, 10, replication_seed(seed, r)).unwrap();
            kde_eval(&tree, &k, &bw(0.1), &[0.5]).unwrap()
        })
        .collect()
}

fn ac3_unbiased() -> Outcome {
    let values = kde_replicates(301);
    let target = smoothed_truth(&BETA_BAR, &Kernel::gaussian(1), &bw(0.1), 0.5).map_err(|e| e.to_string())?;
    let (mean, se) = mean_and_stderr(&values);
    let z = (mean - target).abs() / se;
    check(z <= 3.0, format!("mean {mean:.5} vs (K_h*nu)(0.5) = {target:.5}, z = {z:.2} <= 3"))
}

fn ac4_variance() -> Outcome {
    let values = kde_replicates(401);
    let (mean, _) = mean_and_stderr(&values);
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    let params = ErgodicityParams::beta_bar(2.0, 0.4).map_err(|e| e.to_string())?;
    let c = variance_constant(&Kernel::gaussian(1), &params).map_err(|e| e.to_string())?;
    let bound = c / (tree_size(10).unwrap() as f64 * 0.1);
    check(var <= bound, format!("MC variance {var:.3e} <= C/(|T||h|) = {bound:.3e} (C = {c:.2})"))
}

fn ac5_degenerate() -> Outcome {
    let cfg = defaults();
    let k = Kernel::gaussian(1);
    let grid = cfg.grid_spec().unwrap().resolve(10, 1).map_err(|e| e.to_string())?;
    let tree = simulate(&BETA_BAR, 10, 501).map_err(|e| e.to_string())?;
    let ctx = KdeContext::new(&tree, &k, &grid).map_err(|e| e.to_string())?;
    let widest = (0..grid.len()).max_by(|&a, &b| grid.entries()[a].prod().total_cmp(&grid.entries()[b].prod())).unwrap();
    let t = tree_size(10).unwrap() as f64;
    let log_ratio = t.ln() / t;
    for x in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let table = ctx.table(&[x]).map_err(|e| e.to_string())?;
        let kappa = table.kappa_max();
        for i in 0..grid.len() {
            if table.bias_proxy(kappa, i) != 0.0 {
                return Err(format!("A_hat(x={x}, h_{i}) = {} at kappa_max", table.bias_proxy(kappa, i)));
            }
            // brute force from the definitions, up to the rounding of kappa itself
            for j in 0..grid.len() {
                let d2 = (table.nu_hat(j) - table.smoothed(i, j)).powi(2);
                let v = kappa * log_ratio / grid.entries()[j].prod();
                if d2 - v > 4.0 * f64::EPSILON * d2 {
                    return Err(format!("pair ({i}, {j}) at x={x}: d^2 {d2:e} exceeds aV {v:e}"));
                }
            }
        }
        let state = table.select(kappa, cfg.calibration.b_over_a);
        if state.selected != widest {
            return Err(format!("x={x}: selected h = {} instead of the widest grid bandwidth", state.selected_bandwidth().prod()));
        }
    }
    Ok(format!("A_hat = 0 on all {} grid bandwidths and h_hat = argmax |h| at 5 points", grid.len()))
}

fn ac6_oracle_ratio() -> Outcome {
    let cfg = defaults();
    let k = Kernel::gaussian(1);
    let xs = [0.2, 0.35, 0.5, 0.65, 0.8];
    let grid = cfg.grid_spec().unwrap().resolve(10, 1).map_err(|e| e.to_string())?;
    let estimator = adaptive(&cfg, 0.5);
    let never = std::sync::Arc::new(|_: f64| 0.0) as bmckde_core::analysis::Reference;
    let mut adaptive_se = vec![Vec::new(); xs.len()];
    let mut fixed_se = vec![vec![Vec::new(); grid.len()]; xs.len()];
    for s in 0..50u64 {
        let tree = simulate(&BETA_BAR, 10, replication_seed(601, s)).map_err(|e| e.to_string())?;
        let est = bmckde_core::analysis::estimate_on_tree(&tree, &k, &estimator, &xs, &never).map_err(|e| e.to_string())?;
        let ctx = KdeContext::new(&tree, &k, &grid).map_err(|e| e.to_string())?;
        for (i, &x) in xs.iter().enumerate() {
            let nu = BetaBarModel::invariant_density(x);
            adaptive_se[i].push((est[i] - nu).powi(2));
            for (j, h) in grid.entries().iter().enumerate() {
                fixed_se[i][j].push((ctx.kde(h, &[x]).map_err(|e| e.to_string())? - nu).powi(2));
            }
        }
    }
    let ratios: Vec<f64> = (0..xs.len())
        .map(|i| median(&adaptive_se[i]) / fixed_se[i].iter().map(|v| median(v)).fold(f64::INFINITY, f64::min))
        .collect();
    let listed = ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ");
    check(ratios.iter().all(|&r| r <= 4.0), format!("median-MSE ratios to best fixed h [{listed}] <= 4"))
}

fn ac7_rate() -> Outcome {
    let cfg = defaults();
    let k = Kernel::gaussian(1);
    let estimator = adaptive(&cfg, 0.5);
    let mut risks = Vec::new();
    for n in 8..=13u32 {
        let report = pointwise_risk(&BETA_BAR, &k, &estimator, &[0.5], n, 30, replication_seed(701, n as u64), None)
            .map_err(|e| e.to_string())?;
        risks.push((n, report.rows[0].mse));
    }
    let slope = rate_regression(&risks).map_err(|e| e.to_string())?.slope;
    check((-1.0..=-0.5).contains(&slope), format!("log-log slope {slope:.3} in [-1, -0.5]"))
}

fn ac8_concentration() -> Outcome {
    let k = Kernel::gaussian(1);
    let h = bw(0.1);
    let devs = deviations(&BETA_BAR, &k, &h, 0.5, 10, 2000, 801).map_err(|e| e.to_string())?;
    let deltas: Vec<f64> = (1..=40).map(|i| 0.005 * i as f64).collect();
    let p = exceedance(&devs, &deltas);
    if p.windows(2).any(|w| w[1] > w[0]) {
        return Err("exceedance probabilities increase in delta".into());
    }
    // tail range: at least 20 exceedances and probability at most 1/2
    let (dx, ly): (Vec<f64>, Vec<f64>) =
        deltas.iter().zip(&p).filter(|(_, &q)| (0.01..=0.5).contains(&q)).map(|(d, q)| (d * d, q.ln())).unzip();
    let fit = linear_fit(&dx, &ly).ok_or("fewer than two deltas in the tail range")?;
    let constants = BernsteinConstants::new(&k, &ErgodicityParams::beta_bar(2.0, 0.4).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut dominated = true;
    for (&d, &q) in deltas.iter().zip(&p) {
        let b = bernstein_bound(d, 10, &h, &constants, Deviation::Plain).map_err(|e| e.to_string())?;
        dominated &= q <= b.min(1.0);
    }
    check(
        dx.len() >= 4 && fit.slope < 0.0 && fit.r_squared >= 0.95 && dominated,
        format!(
            "non-increasing; log p vs delta^2 over {} tail deltas: slope {:.1}, R^2 {:.3} >= 0.95; bound dominates: {dominated}",
            dx.len(),
            fit.slope,
            fit.r_squared
        ),
    )
}

fn ac9_growth_frag_sampler() -> Outcome {
    let tau = 2.0;
    let model = Model::GrowthFrag(GrowthFragModel::constant_rate(tau, tau));
    // with B = tau the child size has survival (x / 2y) on y >= x/2
    let streams = StreamFactory::new(901);
    let mut worst = 0.0f64;
    let mut below = 0usize;
    for (k, &x) in [0.5, 1.0, 3.0].iter().enumerate() {
        let mut rng = streams.stream(k as u64);
        let draws: Vec<f64> = (0..10_000).map(|_| model.sample_child(x, &mut rng).unwrap()).collect();
        below += draws.iter().filter(|&&y| y < x / 2.0).count();
        worst = worst.max(ks_distance(&draws, |y| if y < x / 2.0 { 0.0 } else { 1.0 - x / (2.0 * y) }));
    }
    check(worst < 0.02 && below == 0, format!("max KS {worst:.4} < 0.02 over 3 parents, {below} draws below x/2"))
}

fn ac10_splitting() -> Outcome {
    let mut cfg = defaults();
    cfg.model = bmckde_cli::config::ModelName::GrowthFrag;
    let model = cfg.model().unwrap();
    let Model::GrowthFrag(g) = model else { unreachable!() };
    let k = Kernel::gaussian(1);
    let xs = linspace(2.0, 4.0, 21);
    let mode = SplitBandwidth::Adaptive {
        grid: cfg.grid_spec().unwrap(),
        calibration: cfg.calibration().unwrap(),
        mode: match cfg.kappa_mode().unwrap() {
            KappaMode::Shared { .. } => KappaMode::Shared { at: vec![3.0] },
            m => m,
        },
    };
    let sup_error = |n: u32, s: u64| -> Result<f64, String> {
        let tree = simulate(&model, n, replication_seed(1001 + n as u64, s)).map_err(|e| e.to_string())?;
        let threshold = 1.0 / (tree.len() as f64).ln();
        let b = splitting_rate_curve(&tree, &k, &mode, &xs, g.tau, threshold).map_err(|e| e.to_string())?;
        Ok(xs.iter().zip(b).map(|(&x, v)| (v - g.rate.eval(x)).abs()).fold(0.0, f64::max))
    };
    let small = median(&(0..10).map(|s| sup_error(8, s)).collect::<Result<Vec<_>, _>>()?);
    let large = median(&(0..10).map(|s| sup_error(14, s)).collect::<Result<Vec<_>, _>>()?);

    let nu = StationaryDensity::solve(&g, 8000).map_err(|e| e.to_string())?;
    let identity = xs
        .iter()
        .map(|&x| {
            let b = splitting_rate_plugin(x, g.tau, nu.density(x / 2.0), nu.mass(x / 2.0, x), 1e-12);
            (b / g.rate.eval(x) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    check(
        large < small && identity <= 1e-4,
        format!("median sup error n=14 {large:.3} < n=8 {small:.3}; plug-in identity max rel error {identity:.1e}"),
    )
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let mut argv = vec!["bmckde".to_string(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let cli = Cli::try_parse_from(&argv).map_err(|e| e.to_string())?;
    bmckde_cli::run(&cli, &argv).map(|_| ()).map_err(|e| format!("{args:?}: {e}"))
}

fn ac11_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = ["--depth", "7", "--eval-points", "11"];
    let runs: Vec<Vec<&str>> = vec![
        vec!["simulate"],
        vec!["estimate", "--diagnostics"],
        vec!["calibrate"],
        vec!["risk", "--replications", "8"],
        vec!["rates", "--depths", "5,6,7", "--replications", "4"],
        vec!["--model", "growth-frag", "splitting-rate"],
        vec!["bernstein-check", "--replications", "200"],
        vec!["reproduce", "--figure", "fig1"],
        vec!["reproduce", "--figure", "fig2"],
    ];
    let mut compared = 0;
    for (i, args) in runs.iter().enumerate() {
        let mut dirs = Vec::new();
        for threads in ["1", "3"] {
            let dir = root.path().join(format!("{i}-{threads}"));
            let mut full: Vec<&str> = vec!["--threads", threads];
            full.extend(small);
            full.extend(args);
            run_cli(&full, &dir)?;
            dirs.push(dir);
        }
        let mut csvs: Vec<_> = std::fs::read_dir(&dirs[0])
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.file_name()))
            .filter(|n| n.to_string_lossy().ends_with(".csv"))
            .collect();
        csvs.sort();
        if csvs.is_empty() {
            return Err(format!("{args:?} wrote no CSV"));
        }
        for name in csvs {
            let a = std::fs::read(dirs[0].join(&name)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dirs[1].join(&name)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{args:?}: {} differs between 1 and 3 threads", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} CSVs byte-identical across 1 and 3 threads for {} subcommands", runs.len()))
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 11] = [
        ("AC1", "simulator fidelity", 30, ac1_simulator),
        ("AC2", "convolution oracle", 5, ac2_convolution),
        ("AC3", "unbiased smoothed mean", 120, ac3_unbiased),
        ("AC4", "variance bound", 120, ac4_variance),
        ("AC5", "degenerate penalty regime", 10, ac5_degenerate),
        ("AC6", "oracle ratio", 600, ac6_oracle_ratio),
        ("AC7", "rate slope", 900, ac7_rate),
        ("AC8", "concentration", 300, ac8_concentration),
        ("AC9", "growth-fragmentation sampler", 10, ac9_growth_frag_sampler),
        ("AC10", "splitting-rate consistency", 600, ac10_splitting),
        ("AC11", "determinism", 60, ac11_determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| p == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let (tag, detail) = match (&outcome, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over the {budget} s budget")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("[{tag}] {id} {name}: {detail} ({:.1} s)", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
