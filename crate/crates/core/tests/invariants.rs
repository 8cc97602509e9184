use bmckde_core::analysis::{variance_constant, ErgodicityParams};
use bmckde_core::calibration::{calibrate_table, CalibrationConfig};
use bmckde_core::estimator::{kde_eval, BandwidthGrid, KdeContext};
use bmckde_core::kernel::{Bandwidth, Kernel};
use bmckde_core::models::{simulate, simulate_bar, BetaBarModel, GrowthFragModel, Model};
use bmckde_core::quadrature::integrate;
use bmckde_core::tree::{generation_of, tree_size, NodeId};
use proptest::prelude::*;

fn bw(h: f64) -> Bandwidth {
    Bandwidth::isotropic(h, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulated_trees_have_full_size(depth in 0u32..9, seed in any::<u64>()) {
        let t = simulate_bar(&BetaBarModel, depth, seed).unwrap();
        prop_assert_eq!(t.len(), tree_size(depth).unwrap());
        prop_assert!(t.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let last = t.len() - 1;
        prop_assert_eq!(generation_of(NodeId(last)), depth);
    }

    #[test]
    fn growth_frag_sizes_stay_below_half_the_boundary(seed in any::<u64>()) {
        let model = GrowthFragModel::default();
        let t = simulate(&Model::GrowthFrag(model), 6, seed).unwrap();
        prop_assert!(t.values().iter().all(|&v| v > 0.0 && v < 2.5));
    }

    #[test]
    fn estimate_is_a_density(seed in 0u64..10_000, h in 0.03f64..0.4) {
        let t = simulate_bar(&BetaBarModel, 6, seed).unwrap();
        let k = Kernel::gaussian(1);
        let h = bw(h);
        let mass = integrate(|x| kde_eval(&t, &k, &h, &[x]).unwrap(), -4.0, 5.0, 1e-10).unwrap();
        prop_assert!((mass - 1.0).abs() < 1e-6, "mass {}", mass);
    }

    #[test]
    fn largest_penalty_selects_largest_bandwidth(seed in 0u64..10_000, x in 0.0f64..1.0, bump in 0.0f64..3.0) {
        let t = simulate_bar(&BetaBarModel, 7, seed).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::build(0.5, 1.5, 7, 1).unwrap();
        let table = KdeContext::new(&t, &k, &grid).unwrap().table(&[x]).unwrap();
        let state = table.select(table.kappa_max() * (1.0 + bump), 2.0);
        prop_assert_eq!(state.selected, 0);
        prop_assert!(state.records.iter().all(|r| r.a_hat == 0.0));
        prop_assert_eq!(state.clone(), table.select(state.kappa, 2.0));
    }

    #[test]
    fn calibration_zooms_inside_the_initial_interval(seed in 0u64..10_000, x in 0.1f64..0.9, m in 3usize..25, s_max in 1usize..4) {
        let t = simulate_bar(&BetaBarModel, 7, seed).unwrap();
        let k = Kernel::gaussian(1);
        let grid = BandwidthGrid::build(0.5, 1.5, 7, 1).unwrap();
        let table = KdeContext::new(&t, &k, &grid).unwrap().table(&[x]).unwrap();
        let cfg = CalibrationConfig { m, s_max, b_over_a: 2.0 };
        let trace = calibrate_table(&table, &cfg).unwrap();
        prop_assert_eq!(trace.iterations.len(), s_max);
        let mut width = trace.kappa_max;
        for it in &trace.iterations {
            let (lo, hi) = (it.steps[0].kappa, it.steps[m - 1].kappa);
            prop_assert!(lo >= 0.0 && hi <= trace.kappa_max);
            prop_assert!((hi - lo - width).abs() <= 1e-9 * trace.kappa_max);
            width = it.steps[it.jump + 1].kappa - it.steps[it.jump].kappa;
        }
        prop_assert!(trace.kappa >= 0.0 && trace.kappa <= trace.kappa_max);
        prop_assert_eq!(trace, calibrate_table(&table, &cfg).unwrap());
    }

    #[test]
    fn variance_constant_is_symmetric_in_the_child_norms(p0 in 0.0f64..5.0, p1 in 0.0f64..5.0, rho in 0.01f64..0.49) {
        let k = Kernel::gaussian(1);
        let base = ErgodicityParams { m: 2.0, rho, sup_q: 1.5, sup_nu: 1.5, sup_p: 3.0, sup_p0: p0, sup_p1: p1 };
        let swapped = ErgodicityParams { sup_p0: p1, sup_p1: p0, ..base };
        prop_assert_eq!(variance_constant(&k, &base).unwrap(), variance_constant(&k, &swapped).unwrap());
    }
}
