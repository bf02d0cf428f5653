mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supmin_core::audit::{
    audit_absolute_minimality, build_comparison, default_delta_schedule, endpoint_quotient_scan, AuditConfig,
};
use supmin_core::energy::sup_energy;
use supmin_core::path::interpolate_affine;
use supmin_core::solver::SweepSchedule;
use supmin_core::{AffineMap, Grid, LagrangianModel, Path};

fn quadratic(n: usize) -> LagrangianModel {
    LagrangianModel::power_norm(2.0, vec![0.0; n]).unwrap()
}

fn max_node_gap(a: &Path, b: &Path) -> f64 {
    a.max_node_distance(b)
}

fn max_slope_gap(a: &Path, b: &Path) -> f64 {
    (0..a.grid().num_elements())
        .map(|e| {
            let d: Vec<f64> = a.element_slope(e).iter().zip(b.element_slope(e)).map(|(x, y)| x - y).collect();
            common::norm(&d)
        })
        .fold(0.0, f64::max)
}

#[test]
fn affine_optima_survive_the_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for s in [0.5, 1.0, 2.0, 3.5] {
        let n = rng.gen_range(1..=3);
        let model = LagrangianModel::power_norm(s, common::uniform_vec(&mut rng, n, 1.0)).unwrap();
        let b = AffineMap::new(common::uniform_vec(&mut rng, n, 1.0), common::uniform_vec(&mut rng, n, 2.0)).unwrap();
        let candidate = interpolate_affine(&b, &Grid::uniform(0.0, 1.0, 24).unwrap());
        let config = AuditConfig {
            num_subintervals: 10,
            schedule: SweepSchedule { m_max: 64, ..SweepSchedule::default() },
            seed: 4,
            ..AuditConfig::default()
        };
        let report = audit_absolute_minimality(&model, &candidate, &config, 0).unwrap();
        assert!(report.passed(), "s = {s}: {:?}", report.violations);
        assert!(report.inconclusive.is_empty());
        for e in &report.entries {
            assert_eq!(e.deficit, e.sup_global_restricted - e.sup_local_solution);
        }
    }
}

#[test]
fn audit_reports_do_not_depend_on_thread_count() {
    let grid = Grid::uniform(0.0, 1.0, 16).unwrap();
    let mut spike = interpolate_affine(&AffineMap::new(vec![0.0], vec![1.0]).unwrap(), &grid);
    spike.set_node(8, &[0.9]);
    let config = AuditConfig {
        num_subintervals: 12,
        schedule: SweepSchedule { m_max: 32, ..SweepSchedule::default() },
        seed: 9,
        ..AuditConfig::default()
    };
    let one = audit_absolute_minimality(&quadratic(1), &spike, &config, 1).unwrap();
    let four = audit_absolute_minimality(&quadratic(1), &spike, &config, 4).unwrap();
    assert_eq!(one, four);
}

#[test]
fn glued_limits_converge_with_the_slope_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let grid = Grid::uniform(0.0, 1.0, 60).unwrap();
    let limit = common::random_path(&mut rng, grid.clone(), 2, 1.0);
    let bump = common::random_path(&mut rng, grid, 2, 1.0);
    let delta = 0.2;
    let glued_limit = build_comparison(limit.node(0), limit.node(60), &limit, delta).unwrap();
    let mut prev = f64::INFINITY;
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        let values: Vec<f64> = limit.values().iter().zip(bump.values()).map(|(u, v)| u + eps * v).collect();
        let approx = Path::new(limit.grid().clone(), 2, values).unwrap();
        let dist = approx.max_node_distance(&limit);
        let glued = build_comparison(approx.node(0), approx.node(60), &approx, delta).unwrap();
        let (sl, sr) = glued.layer_slopes();
        let (ll, lr) = glued_limit.layer_slopes();
        let dev = |a: &[f64], b: &[f64]| common::norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
        let bound = 2.0 / glued.delta_left * dist;
        assert!(dev(&sl, &ll) <= bound * (1.0 + 1e-12));
        assert!(dev(&sr, &lr) <= 2.0 / glued.delta_right * dist * (1.0 + 1e-12));
        assert!(max_node_gap(&glued.path, &glued_limit.path) <= dist * (1.0 + 1e-12));
        let slope_gap = max_slope_gap(&glued.path, &glued_limit.path);
        assert!(slope_gap < prev);
        prev = slope_gap;
    }
}

#[test]
fn quotient_scan_on_a_curved_spike_path() {
    let grid = Grid::uniform(0.0, 1.0, 256).unwrap();
    let rows: Vec<Vec<f64>> = grid.nodes().iter().map(|x| vec![x * x]).collect();
    let mut psi = Path::from_rows(grid, &rows).unwrap();
    psi.set_node(128, &[0.75]);
    let first_slope = psi.element_slope(0)[0];
    let model = quadratic(1);
    let deltas = default_delta_schedule(&psi);
    // successive quotients differ by about one element slope increment, 4e-3
    let scan = endpoint_quotient_scan(&model, &psi, &deltas, 1e-2).unwrap();
    let mut prev_gap = f64::INFINITY;
    let mut prev_dev = f64::INFINITY;
    for s in &scan.left {
        let gap = (s.quotient[0] - first_slope).abs();
        assert!(gap < prev_gap);
        assert!(s.boundary_deviation <= prev_dev);
        assert!((s.layer_sup - s.quotient[0].powi(2)).abs() < 1e-12);
        prev_gap = gap;
        prev_dev = s.boundary_deviation;
    }
    assert!(scan.left_limit.layer_sup <= scan.global_sup);
    assert!(scan.left_limit.cauchy);
    assert!(scan.conclusion_holds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gluing_is_exact_node_for_node(seed in any::<u64>(), n in 1usize..=3, elements in 9usize..=60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = common::random_grid(&mut rng, -1.0, 1.0, elements);
        let psi = common::random_path(&mut rng, grid.clone(), n, 2.0);
        let ul = common::uniform_vec(&mut rng, n, 2.0);
        let ur = common::uniform_vec(&mut rng, n, 2.0);
        let delta = rng.gen_range(0.05..0.66);
        let Ok(c) = build_comparison(&ul, &ur, &psi, delta) else { return Ok(()) };
        prop_assert!(c.delta_left <= delta * (1.0 + 1e-12) && c.delta_right <= delta * (1.0 + 1e-12));
        prop_assert_eq!(c.path.node(0), ul.as_slice());
        prop_assert_eq!(c.path.node(elements), ur.as_slice());
        let nodes = grid.nodes();
        for (k, &x) in nodes.iter().enumerate() {
            let got = c.path.node(k);
            if k >= c.left_node && k <= c.right_node {
                prop_assert_eq!(got, psi.node(k));
                continue;
            }
            let expected: Vec<f64> = if k < c.left_node {
                let t = (x - grid.a()) / c.delta_left;
                ul.iter().zip(psi.node(c.left_node)).map(|(l, r)| l + t * (r - l)).collect()
            } else {
                let t = (x - nodes[c.right_node]) / c.delta_right;
                psi.node(c.right_node).iter().zip(&ur).map(|(l, r)| l + t * (r - l)).collect()
            };
            for (g, e) in got.iter().zip(&expected) {
                prop_assert!((g - e).abs() <= 1e-14 * (1.0 + e.abs()));
            }
        }
    }

    #[test]
    fn glued_sup_splits_into_layers_and_interior(seed in any::<u64>(), n in 1usize..=3, elements in 12usize..=64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::builtin(&mut rng, n);
        let psi = common::random_path(&mut rng, Grid::uniform(0.0, 1.0, elements).unwrap(), n, 1.0);
        let deltas = default_delta_schedule(&psi);
        prop_assume!(!deltas.is_empty());
        let scan = endpoint_quotient_scan(&model, &psi, &deltas, 1e-3).unwrap();
        let whole = sup_energy(&model, &psi, (0.0, 1.0)).unwrap();
        prop_assert_eq!(scan.global_sup, whole);
        for (l, r) in scan.left.iter().zip(&scan.right) {
            let glued = build_comparison(psi.node(0), psi.node(elements), &psi, l.delta).unwrap();
            let glued_sup = sup_energy(&model, &glued.path, (0.0, 1.0)).unwrap();
            let bound = l.layer_sup.max(whole).max(r.layer_sup);
            prop_assert!(glued_sup <= bound + 1e-12 * (1.0 + bound));
            let left_layer = sup_energy(&model, &glued.path, (0.0, l.snapped)).unwrap();
            let right_layer = sup_energy(&model, &glued.path, (1.0 - r.snapped, 1.0)).unwrap();
            prop_assert!((left_layer - l.layer_sup).abs() <= 1e-9 * (1.0 + l.layer_sup));
            prop_assert!((right_layer - r.layer_sup).abs() <= 1e-9 * (1.0 + r.layer_sup));
        }
    }
}
