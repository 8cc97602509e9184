//! Subcommand bodies. Each writes its CSV and SVG through [`Artifacts`] and
//! returns a one-line summary.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use bmckde_core::analysis::{
    bernstein_bound, default_threshold, deviations, exceedance, pointwise_risk, rate_regression, splitting_rate_curve,
    BernsteinConstants, Deviation, EstimatorConfig, Reference, SplitBandwidth,
};
use bmckde_core::calibration::{calibrate_table, calibrated_estimate, KappaMode};
use bmckde_core::estimator::{linspace, KdeContext};
use bmckde_core::kernel::{Bandwidth, Kernel};
use bmckde_core::models::{simulate, GrowthFragModel, Model, StationaryDensity};
use bmckde_core::rng::replication_seed;
use bmckde_core::tree::TreeSample;

use crate::config::{EstimatorName, ModelName, RunConfig, SplitBandwidthSpec};
use crate::svg::{Plot, Series};
use crate::{Artifacts, CliError, Command, Figure};

/// Cells used for the numerical growth-fragmentation reference density.
const REFERENCE_CELLS: usize = 4000;
const FIG1_RUNS: usize = 10;
const FIG1_DEPTH: u32 = 10;
const FIG2_DEPTH: u32 = 15;

pub fn dispatch(cmd: &Command, cfg: &RunConfig, out: &mut Artifacts) -> Result<String, CliError> {
    match cmd {
        Command::Simulate => simulate_cmd(cfg, out),
        Command::Estimate { tree, diagnostics, h } => estimate_cmd(cfg, out, tree.as_deref(), *diagnostics, *h),
        Command::Calibrate { tree, x } => calibrate_cmd(cfg, out, tree.as_deref(), *x),
        Command::Risk { .. } => risk_cmd(cfg, out),
        Command::Rates { .. } => rates_cmd(cfg, out),
        Command::SplittingRate { tree, .. } => splitting_cmd(cfg, out, tree.as_deref()),
        Command::BernsteinCheck { .. } => bernstein_cmd(cfg, out),
        Command::Reproduce { figure: Figure::Fig1 } => fig1(cfg, out),
        Command::Reproduce { figure: Figure::Fig2 } => fig2(cfg, out),
    }
}

fn bw(h: f64) -> Result<Bandwidth, CliError> {
    Ok(Bandwidth::isotropic(h, 1)?)
}

fn load_or_simulate(cfg: &RunConfig, path: Option<&Path>) -> Result<TreeSample, CliError> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read tree {}: {e}", p.display())))?;
            let tree = TreeSample::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            if tree.dim() != 1 {
                return Err(CliError::Config(format!("{}: only one-dimensional trees are supported", p.display())));
            }
            Ok(tree)
        }
        None => Ok(simulate(&cfg.model()?, cfg.depth, cfg.seed)?),
    }
}

/// Closed-form invariant density, or the numerical one for bounded
/// growth-fragmentation models.
fn reference(model: &Model) -> Result<Option<Reference>, CliError> {
    match model {
        Model::BetaBar(_) => Ok(None),
        Model::GrowthFrag(g) if g.s_max.is_finite() => {
            let nu = StationaryDensity::solve(g, REFERENCE_CELLS)?;
            Ok(Some(Arc::new(move |x| nu.density(x))))
        }
        Model::GrowthFrag(_) => Err(CliError::Config(
            "no reference density for an unbounded growth-fragmentation model; set growth_frag.s_max".into(),
        )),
    }
}

fn truth_curve(model: &Model, xs: &[f64]) -> Result<Option<Vec<(f64, f64)>>, CliError> {
    let r = match model {
        Model::GrowthFrag(g) if !g.s_max.is_finite() => return Ok(None),
        _ => reference(model)?,
    };
    Ok(Some(
        xs.iter()
            .map(|&x| (x, r.as_ref().map_or_else(|| model.invariant_density(x).unwrap_or(0.0), |f| f(x))))
            .collect(),
    ))
}

fn growth_frag(model: &Model) -> Result<&GrowthFragModel, CliError> {
    match model {
        Model::GrowthFrag(g) => Ok(g),
        _ => Err(CliError::Config("this command needs model = \"growth-frag\"".into())),
    }
}

fn simulate_cmd(cfg: &RunConfig, out: &mut Artifacts) -> Result<String, CliError> {
    let model = cfg.model()?;
    let tree = simulate(&model, cfg.depth, cfg.seed)?;
    out.write("tree.csv", &tree.to_csv())?;

    let (lo, hi) = match model {
        Model::BetaBar(_) => (0.0, 1.0),
        Model::GrowthFrag(_) => {
            let max = tree.values().iter().cloned().fold(0.0, f64::max);
            (0.0, max.max(1e-9))
        }
    };
    let bins = ((tree.len() as f64).sqrt() as usize).clamp(5, 60);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in tree.values() {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let mut hist = Vec::with_capacity(2 * bins);
    for (i, c) in counts.iter().enumerate() {
        let d = *c as f64 / (tree.len() as f64 * width);
        hist.push((lo + i as f64 * width, d));
        hist.push((lo + (i + 1) as f64 * width, d));
    }
    let mut plot = Plot::new(format!("{} tree, depth {}", model.name(), cfg.depth), "x", "density")
        .with(Series::line("histogram", hist));
    if let Some(t) = truth_curve(&model, &linspace(lo, hi, 201))? {
        plot = plot.with(Series::reference("invariant density", t));
    }
    out.write("tree.svg", &plot.to_svg())?;
    Ok(format!("simulated {} nodes (depth {}, seed {})", tree.len(), cfg.depth, cfg.seed))
}

fn estimate_cmd(
    cfg: &RunConfig,
    out: &mut Artifacts,
    tree: Option<&Path>,
    diagnostics: bool,
    h: Option<f64>,
) -> Result<String, CliError> {
    let sample = load_or_simulate(cfg, tree)?;
    let kernel = cfg.kernel()?;
    let xs = cfg.eval_points()?;
    let points: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();

    let (selected, nu_hat): (Vec<f64>, Vec<f64>) = match h {
        Some(h) => {
            if diagnostics {
                return Err(CliError::Config("--diagnostics applies to the adaptive estimate only".into()));
            }
            let hb = bw(h)?;
            let est = bmckde_core::analysis::fixed_bandwidth_kde_curve(&sample, &kernel, &hb, &xs)?;
            (vec![h; xs.len()], est)
        }
        None => {
            let grid = cfg.grid_spec()?.resolve(sample.depth(), 1)?;
            let calib = cfg.calibration()?;
            let est = calibrated_estimate(&sample, &kernel, &grid, &points, &calib, &cfg.kappa_mode()?)?;
            if diagnostics {
                let ctx = KdeContext::new(&sample, &kernel, &grid)?;
                let mut csv = String::from("x,h_prod,A,V,criterion\n");
                for p in &est {
                    let state = ctx.table(&p.x)?.select(p.kappa, calib.b_over_a);
                    for r in &state.records {
                        let _ = writeln!(csv, "{},{},{},{},{}", p.x[0], r.h.prod(), r.a_hat, r.variance, r.criterion);
                    }
                }
                out.write("diagnostics.csv", &csv)?;
            }
            est.into_iter().map(|p| (p.h.prod(), p.nu_hat)).unzip()
        }
    };

    let mut csv = String::from("x,h_selected_prod,nu_hat\n");
    for ((x, h), v) in xs.iter().zip(&selected).zip(&nu_hat) {
        let _ = writeln!(csv, "{x},{h},{v}");
    }
    out.write("estimate.csv", &csv)?;

    let model = cfg.model()?;
    let mut plot = Plot::new(format!("density estimate, {} nodes", sample.len()), "x", "density")
        .with(Series::line("estimate", xs.iter().cloned().zip(nu_hat.iter().cloned()).collect()));
    if tree.is_none() {
        if let Some(t) = truth_curve(&model, &xs)? {
            plot = plot.with(Series::reference("invariant density", t));
        }
    }
    out.write("estimate.svg", &plot.to_svg())?;
    Ok(format!("estimated the density at {} points from {} nodes", xs.len(), sample.len()))
}

fn calibrate_cmd(cfg: &RunConfig, out: &mut Artifacts, tree: Option<&Path>, x: Option<f64>) -> Result<String, CliError> {
    let sample = load_or_simulate(cfg, tree)?;
    let kernel = cfg.kernel()?;
    let grid = cfg.grid_spec()?.resolve(sample.depth(), 1)?;
    let x = match x {
        Some(x) => x,
        None => {
            let (lo, hi) = cfg.eval_range()?;
            0.5 * (lo + hi)
        }
    };
    let table = KdeContext::new(&sample, &kernel, &grid)?.table(&[x])?;
    let trace = calibrate_table(&table, &cfg.calibration()?)?;
    out.write("trace.csv", &trace.to_csv())?;

    let mut plot = Plot::new(format!("penalty calibration at x = {x}"), "kappa", "1 / h");
    for (s, it) in trace.iterations.iter().enumerate() {
        let pts = it.steps.iter().map(|st| (st.kappa, st.inv_h_prod)).collect();
        plot = plot.with(Series::line(format!("iteration {}", s + 1), pts).markers());
    }
    out.write("trace.svg", &plot.to_svg())?;
    Ok(format!("kappa = {} (kappa_max = {}), selected h = {}", trace.kappa, trace.kappa_max, trace.selected.prod()))
}

fn adaptive_config(cfg: &RunConfig) -> Result<EstimatorConfig, CliError> {
    Ok(EstimatorConfig::Adaptive { grid: cfg.grid_spec()?, calibration: cfg.calibration()?, mode: cfg.kappa_mode()? })
}

fn risk_cmd(cfg: &RunConfig, out: &mut Artifacts) -> Result<String, CliError> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let xs = cfg.eval_points()?;
    let estimator = match cfg.risk.estimator {
        EstimatorName::Adaptive => adaptive_config(cfg)?,
        EstimatorName::Fixed => EstimatorConfig::Fixed(bw(cfg.risk.h)?),
    };
    let reference = reference(&model)?;
    let report =
        pointwise_risk(&model, &kernel, &estimator, &xs, cfg.depth, cfg.risk.replications, cfg.seed, reference.as_ref())?;
    out.write("risk.csv", &report.to_csv())?;

    let col = |f: fn(&bmckde_core::analysis::RiskRow) -> f64| report.rows.iter().map(|r| (r.x, f(r))).collect();
    let plot = Plot::new(format!("pointwise risk, {} replications, depth {}", report.replications, report.depth), "x", "risk")
        .with(Series::line("MSE", col(|r| r.mse)))
        .with(Series::line("squared bias", col(|r| r.bias_sq)))
        .with(Series::line("variance", col(|r| r.variance)));
    out.write("risk.svg", &plot.to_svg())?;
    let mean = report.rows.iter().map(|r| r.mse).sum::<f64>() / report.rows.len() as f64;
    Ok(format!("mean MSE {mean:.3e} over {} points ({})", report.rows.len(), report.estimator))
}

fn rates_cmd(cfg: &RunConfig, out: &mut Artifacts) -> Result<String, CliError> {
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let estimator = adaptive_config(cfg)?;
    let reference = reference(&model)?;
    let x = cfg.rates.x;
    let mut risks = Vec::with_capacity(cfg.rates.depths.len());
    for &n in &cfg.rates.depths {
        let report = pointwise_risk(
            &model,
            &kernel,
            &estimator,
            &[x],
            n,
            cfg.rates.replications,
            replication_seed(cfg.seed, u64::from(n)),
            reference.as_ref(),
        )?;
        risks.push((n, report.rows[0].mse));
    }
    let rates = rate_regression(&risks)?;
    out.write("rates.csv", &rates.to_csv())?;

    let pts: Vec<(f64, f64)> = rates.rows.iter().map(|r| (r.log_t, r.log_mse)).collect();
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (mx / pts.len() as f64, my / pts.len() as f64);
    let fit = pts.iter().map(|&(lx, _)| (lx, my + rates.slope * (lx - mx))).collect();
    let plot = Plot::new(format!("MSE at x = {x}"), "log tree size", "log MSE")
        .with(Series::line("observed", pts).markers())
        .with(Series::reference(format!("slope {:.3}", rates.slope), fit));
    out.write("rates.svg", &plot.to_svg())?;
    Ok(format!("log-log slope {:.4} over {} depths", rates.slope, rates.rows.len()))
}

fn split_mode(cfg: &RunConfig) -> Result<SplitBandwidth, CliError> {
    Ok(match cfg.splitting.bandwidth {
        SplitBandwidthSpec::Fixed(h) => SplitBandwidth::Fixed(bw(h)?),
        SplitBandwidthSpec::Named(_) => {
            // the shared κ is calibrated in the middle of the plotted range
            let mode = match cfg.kappa_mode()? {
                KappaMode::Shared { .. } => KappaMode::Shared { at: vec![0.5 * (cfg.splitting.lo + cfg.splitting.hi)] },
                other => other,
            };
            SplitBandwidth::Adaptive { grid: cfg.grid_spec()?, calibration: cfg.calibration()?, mode }
        }
    })
}

fn splitting_curve(cfg: &RunConfig, sample: &TreeSample, g: &GrowthFragModel, out: &mut Artifacts, stem: &str) -> Result<String, CliError> {
    let kernel = cfg.kernel()?;
    let s = &cfg.splitting;
    let xs = linspace(s.lo, s.hi, s.points);
    let threshold = s.threshold.unwrap_or_else(|| default_threshold(sample.len()));
    let est = splitting_rate_curve(sample, &kernel, &split_mode(cfg)?, &xs, g.tau, threshold)?;
    let truth: Vec<f64> = xs.iter().map(|&x| g.rate.eval(x)).collect();

    let mut csv = String::from("x,B_hat,B_true\n");
    for ((x, b), t) in xs.iter().zip(&est).zip(&truth) {
        let _ = writeln!(csv, "{x},{b},{t}");
    }
    out.write(&format!("{stem}.csv"), &csv)?;
    let plot = Plot::new(format!("splitting rate, {} nodes", sample.len()), "size x", "B(x)")
        .with(Series::line("estimate", xs.iter().cloned().zip(est.iter().cloned()).collect()))
        .with(Series::reference("true rate", xs.iter().cloned().zip(truth.iter().cloned()).collect()));
    out.write(&format!("{stem}.svg"), &plot.to_svg())?;
    let worst = est.iter().zip(&truth).map(|(b, t)| (b - t).abs()).fold(0.0, f64::max);
    Ok(format!("splitting rate at {} points, max abs error {worst:.4}", xs.len()))
}

fn splitting_cmd(cfg: &RunConfig, out: &mut Artifacts, tree: Option<&Path>) -> Result<String, CliError> {
    let model = cfg.model()?;
    let g = growth_frag(&model)?;
    let sample = load_or_simulate(cfg, tree)?;
    splitting_curve(cfg, &sample, g, out, "splitting_rate")
}

fn bernstein_cmd(cfg: &RunConfig, out: &mut Artifacts) -> Result<String, CliError> {
    if cfg.model != ModelName::BetaBar {
        return Err(CliError::Config("bernstein-check uses the Beta-BAR constants; set model = \"beta-bar\"".into()));
    }
    let model = cfg.model()?;
    let kernel = cfg.kernel()?;
    let b = &cfg.bernstein;
    let h = bw(b.h)?;
    let constants = BernsteinConstants::new(&kernel, &cfg.ergodicity()?)?;
    let devs = deviations(&model, &kernel, &h, b.x, cfg.depth, b.replications, cfg.seed)?;
    let empirical = exceedance(&devs, &b.deltas);

    let mut csv = String::from("delta,empirical,bound,bound_clamped\n");
    let mut emp_pts = Vec::new();
    let mut bound_pts = Vec::new();
    let mut dominated = true;
    for (&d, &p) in b.deltas.iter().zip(&empirical) {
        let bound = bernstein_bound(d, cfg.depth, &h, &constants, Deviation::Plain)?;
        let clamped = bound.min(1.0);
        dominated &= p <= clamped;
        let _ = writeln!(csv, "{d},{p},{bound},{clamped}");
        emp_pts.push((d, p));
        bound_pts.push((d, clamped));
    }
    out.write("bernstein.csv", &csv)?;
    let plot = Plot::new(format!("deviation probability, {} replications", b.replications), "delta", "probability")
        .with(Series::line("empirical", emp_pts).markers())
        .with(Series::reference("bound (clamped at 1)", bound_pts));
    out.write("bernstein.svg", &plot.to_svg())?;
    Ok(format!(
        "{} deltas, bound {} the empirical probabilities",
        b.deltas.len(),
        if dominated { "dominates" } else { "does NOT dominate" }
    ))
}

fn fig1(cfg: &RunConfig, out: &mut Artifacts) -> Result<String, CliError> {
    let model = Model::BetaBar(bmckde_core::models::BetaBarModel);
    let kernel = Kernel::gaussian(1);
    let xs = linspace(0.0, 1.0, cfg.eval.points.max(2));
    let points: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
    let grid = cfg.grid_spec()?.resolve(FIG1_DEPTH, 1)?;
    let calib = cfg.calibration()?;
    let mode = match cfg.kappa_mode()? {
        KappaMode::Shared { .. } => KappaMode::Shared { at: vec![0.5] },
        other => other,
    };
    let mut curves = Vec::with_capacity(FIG1_RUNS);
    for r in 0..FIG1_RUNS {
        let tree = simulate(&model, FIG1_DEPTH, replication_seed(cfg.seed, r as u64))?;
        let est = calibrated_estimate(&tree, &kernel, &grid, &points, &calib, &mode)?;
        curves.push(est.into_iter().map(|p| p.nu_hat).collect::<Vec<f64>>());
    }
    let truth: Vec<f64> = xs.iter().map(|&x| model.invariant_density(x).unwrap_or(0.0)).collect();

    let mut csv = String::from("x,truth");
    for r in 1..=FIG1_RUNS {
        let _ = write!(csv, ",run{r}");
    }
    csv.push('\n');
    for (i, x) in xs.iter().enumerate() {
        let _ = write!(csv, "{x},{}", truth[i]);
        for c in &curves {
            let _ = write!(csv, ",{}", c[i]);
        }
        csv.push('\n');
    }
    out.write("fig1.csv", &csv)?;

    let mut plot = Plot::new(format!("Beta-BAR, {FIG1_RUNS} trees of depth {FIG1_DEPTH}"), "x", "density");
    for (r, c) in curves.iter().enumerate() {
        plot = plot.with(Series::line(format!("run {}", r + 1), xs.iter().cloned().zip(c.iter().cloned()).collect()));
    }
    plot = plot.with(Series::reference("invariant density", xs.iter().cloned().zip(truth).collect()));
    out.write("fig1.svg", &plot.to_svg())?;
    Ok(format!("{FIG1_RUNS} adaptive estimates at {} points", xs.len()))
}

fn fig2(cfg: &RunConfig, out: &mut Artifacts) -> Result<String, CliError> {
    let mut gf = cfg.clone();
    gf.model = ModelName::GrowthFrag;
    let model = gf.model()?;
    let g = growth_frag(&model)?;
    let tree = simulate(&model, FIG2_DEPTH, cfg.seed)?;
    splitting_curve(&gf, &tree, g, out, "fig2")
}
