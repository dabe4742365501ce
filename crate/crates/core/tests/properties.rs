use mvqmc::bridge::bridge_path;
use mvqmc::experiments::fit_rate;
use mvqmc::lowdisc::{
    frac, korobov_vector, lattice_points, shift_points, split_even_odd, star_discrepancy_1d,
    BridgeOrdering, CoordinateLayout, PointSet, Shift,
};
use mvqmc::mlqmc::{level_points, mlqmc_estimator, LevelConfig};
use mvqmc::models::{kuramoto_model, ou_model, Model, Observable, OuParams};
use mvqmc::particle::{evolve, richardson_in_p, single_level_estimator, KernelMode, ParticleInputs, SystemConfig};
use mvqmc::seeding::Purpose;
use mvqmc::Execution;
use proptest::prelude::*;

fn odd(g: u64) -> u64 {
    2 * g + 1
}

/// Star discrepancy by scanning both one-sided limits at every jump.
fn brute_star_discrepancy(points: &[f64]) -> f64 {
    let p = points.len() as f64;
    let mut best = 0.0f64;
    for &x in points.iter().chain(std::iter::once(&1.0)) {
        let le = points.iter().filter(|&&y| y <= x).count() as f64 / p;
        let lt = points.iter().filter(|&&y| y < x).count() as f64 / p;
        best = best.max((le - x).abs()).max((lt - x).abs());
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn lattice_halves_differ_by_one_generator_step(g in 0u64..1 << 20, log_p in 1u32..9, d in 1usize..6) {
        let z = korobov_vector(odd(g), d).unwrap();
        let p = 1usize << log_p;
        let ps = lattice_points(&z, p).unwrap();
        let (even, odd_half) = split_even_odd(&ps).unwrap();
        for (e, o) in even.points().zip(odd_half.points()) {
            for j in 0..d {
                let step = z.component_mod(j, p) as f64 / p as f64;
                prop_assert!((frac(e[j] + step) - o[j]).abs() <= 2f64.powi(-50));
            }
        }
        let half = lattice_points(&z, p / 2).unwrap();
        prop_assert_eq!(even.coords(), half.coords());
    }

    #[test]
    fn level_hierarchy_is_nested(g in 0u64..1 << 20, n0 in 1u32..3, p0 in 1u32..3, levels in 1usize..4) {
        let model = kuramoto_model(0.4);
        let mut cfg = LevelConfig::new(levels, n0, p0, vec![2; levels + 1], 1.0, 0);
        cfg.korobov_base = odd(g);
        for l in 1..=levels {
            let cut = level_points(&model, &cfg, l).unwrap().cut(&cfg.layout(&model, l)).unwrap();
            let (even, _) = split_even_odd(&cut).unwrap();
            let prev = level_points(&model, &cfg, l - 1).unwrap();
            prop_assert_eq!(even.coords(), prev.coords());
        }
    }

    #[test]
    fn estimator_is_invariant_under_group_translation(seed in 0u64..500, j in 1usize..16) {
        let model = kuramoto_model(0.4);
        let (p, n) = (16usize, 8usize);
        let z = CoordinateLayout::new(model.aux_arity(), n).korobov(17797, BridgeOrdering::TimeIndexed).unwrap();
        let ps = lattice_points(&z, p).unwrap();
        let shifted = shift_points(&ps, &Shift::draw(seed, Purpose::Test, 0, 0, ps.dim())).unwrap();
        let mut coords = Vec::with_capacity(shifted.coords().len());
        for k in 0..p {
            coords.extend_from_slice(shifted.point((k + j) % p));
        }
        let permuted = PointSet::explicit(ps.dim(), coords).unwrap();
        let g = Observable::Gauss;
        let run = |pts: &PointSet| {
            let inputs = ParticleInputs::from_points(&model, pts, 1.0, BridgeOrdering::TimeIndexed).unwrap();
            g.mean(&evolve(&model, &inputs, KernelMode::Direct, Execution::Sequential, None).unwrap())
        };
        prop_assert!((run(&shifted) - run(&permuted)).abs() < 1e-13);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise(seed in 0u64..1000, log_p in 1u32..6, log_n in 1u32..5) {
        let model = ou_model(OuParams::default()).unwrap();
        let cfg = SystemConfig::new(1 << log_p, 1 << log_n, 1.0, 5, seed);
        let a = single_level_estimator(&model, &cfg.clone().with_execution(Execution::Sequential)).unwrap();
        let b = single_level_estimator(&model, &cfg.with_execution(Execution::Parallel)).unwrap();
        prop_assert_eq!(a.per_shift, b.per_shift);
    }

    #[test]
    fn constant_observable_is_exact(c in -10.0f64..10.0, seed in 0u64..100) {
        let model = kuramoto_model(0.4);
        let cfg = LevelConfig::new(2, 1, 1, vec![3, 2, 2], 1.0, seed).with_observable(Observable::Constant(c));
        let r = mlqmc_estimator(&model, &cfg).unwrap();
        prop_assert!((r.value - c).abs() <= 1e-12 * c.abs().max(1.0));
        let s = single_level_estimator(&model, &SystemConfig::new(4, 4, 1.0, 3, seed).with_observable(Observable::Constant(c))).unwrap();
        prop_assert_eq!(s.sample_variance, Some(0.0));
    }

    #[test]
    fn richardson_cancels_first_order(c in -5.0f64..5.0, k in -5.0f64..5.0, p in 1u32..1000) {
        let p = p as f64;
        prop_assert!((richardson_in_p(c + k / p, c + k / (2.0 * p)) - c).abs() < 1e-12);
    }

    #[test]
    fn fitted_slope_recovers_power_laws(a in -4.0f64..2.0, c in 0.01f64..100.0, n in 3usize..10) {
        let xs: Vec<f64> = (0..n).map(|i| 2f64.powi(i as i32 + 2)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(a)).collect();
        prop_assert!((fit_rate(&xs, &ys).unwrap().slope - a).abs() < 1e-9);
    }

    #[test]
    fn star_discrepancy_matches_brute_force(pts in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let fast = star_discrepancy_1d(&pts).unwrap();
        prop_assert!((fast - brute_star_discrepancy(&pts)).abs() < 1e-12);
        prop_assert!(fast >= 0.5 / pts.len() as f64 - 1e-15);
    }

    #[test]
    fn bridge_inputs_act_locally(u in prop::collection::vec(0.001f64..0.999, 16), r in 0usize..16, v in 0.001f64..0.999) {
        let n = 16;
        let base = bridge_path(&u, 1.0).unwrap();
        let mut w = u.clone();
        w[r] = v;
        let moved = bridge_path(&w, 1.0).unwrap();
        let node = mvqmc::lowdisc::bridge_node(r, n);
        let half = if r == 0 { n } else { 1usize << node.trailing_zeros() };
        for j in 0..=n {
            let inside = if r == 0 { j > 0 } else { j > node - half && j < node + half };
            if !inside {
                prop_assert_eq!(base.nodes()[j], moved.nodes()[j]);
            }
        }
    }

    #[test]
    fn shift_sharing_is_deterministic(seed in 0u64..1000, dim in 1usize..20) {
        let a = Shift::draw(seed, Purpose::MlqmcShift, 2, 7, dim);
        let b = Shift::draw(seed, Purpose::MlqmcShift, 2, 7, dim);
        prop_assert_eq!(a.as_slice(), b.as_slice());
        prop_assert!(a.as_slice().iter().all(|u| (0.0..1.0).contains(u)));
    }
}

#[test]
fn direct_and_separable_kernels_agree() {
    let model = kuramoto_model(0.4);
    for mode in [KernelMode::Direct, KernelMode::Separable] {
        let cfg = SystemConfig::new(32, 16, 1.0, 4, 3).with_kernel(mode);
        let r = single_level_estimator(&model, &cfg).unwrap();
        let d = single_level_estimator(&model, &cfg.clone().with_kernel(KernelMode::Direct)).unwrap();
        for (a, b) in r.per_shift.iter().zip(&d.per_shift) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
