mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supmin_core::lagrangian::{SampledSignal, VelocityField};
use supmin_core::path::interpolate_affine;
use supmin_core::solver::{m_sweep, minimize_power, SolveOptions, SweepSchedule};
use supmin_core::{AffineMap, Grid, LagrangianModel};

/// `|k - eta|^2 + |P - A eta - c|^2` with constant `k`, `c`.
fn quadratic_da(k: &[f64], a: &DMatrix<f64>, c: &[f64]) -> LagrangianModel {
    let n = k.len();
    LagrangianModel::data_assimilation(
        DMatrix::identity(n, n),
        SampledSignal::constant(k.to_vec()),
        VelocityField::new(a.clone(), SampledSignal::constant(c.to_vec())).unwrap(),
    )
    .unwrap()
}

/// Interior nodal values minimizing the midpoint-rule energy
/// `sum_e h_e (|k - eta_e|^2 + |P_e - A eta_e - c|^2)`, from the normal
/// equations of the linear least-squares problem it defines.
fn quadratic_oracle(k: &[f64], a: &DMatrix<f64>, c: &[f64], grid: &Grid, b: &AffineMap) -> Vec<Vec<f64>> {
    let n = k.len();
    let elements = grid.num_elements();
    let interior = grid.num_nodes() - 2;
    let unknowns = interior * n;
    let rows = elements * 2 * n;
    let mut g = DMatrix::<f64>::zeros(rows, unknowns);
    let mut rhs = DVector::<f64>::zeros(rows);
    let left = b.eval(grid.a());
    let right = b.eval(grid.b());
    // Coefficient of node `i`'s component `j` in element `e`'s residual rows.
    for e in 0..elements {
        let h = grid.element_length(e);
        let w = h.sqrt();
        for (node, sign) in [(e, -1.0), (e + 1, 1.0)] {
            for j in 0..n {
                // observation residual: k - eta_e, eta_e = (u_e + u_{e+1}) / 2
                let mut obs = DVector::<f64>::zeros(n);
                obs[j] = -0.5;
                // velocity residual: (u_{e+1} - u_e) / h - A eta_e - c
                let mut vel = DVector::<f64>::zeros(n);
                vel[j] += sign / h;
                for r in 0..n {
                    vel[r] -= 0.5 * a[(r, j)];
                }
                for r in 0..n {
                    let (ro, rv) = (e * 2 * n + r, e * 2 * n + n + r);
                    if node == 0 || node == elements {
                        let fixed = if node == 0 { left[j] } else { right[j] };
                        rhs[ro] -= w * obs[r] * fixed;
                        rhs[rv] -= w * vel[r] * fixed;
                    } else {
                        let col = (node - 1) * n + j;
                        g[(ro, col)] += w * obs[r];
                        g[(rv, col)] += w * vel[r];
                    }
                }
            }
        }
        for r in 0..n {
            rhs[e * 2 * n + r] -= w * k[r];
            rhs[e * 2 * n + n + r] += w * c[r];
        }
    }
    // residual = G u - rhs
    let normal = g.transpose() * &g;
    let sol = normal.lu().solve(&(g.transpose() * rhs)).unwrap();
    let mut out = vec![left];
    out.extend((0..interior).map(|i| sol.as_slice()[i * n..(i + 1) * n].to_vec()));
    out.push(right);
    out
}

#[test]
fn first_power_matches_the_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 1..=3 {
        let k = common::uniform_vec(&mut rng, n, 1.0);
        let c = common::uniform_vec(&mut rng, n, 1.0);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.5..0.5));
        let model = quadratic_da(&k, &a, &c);
        let grid = common::random_grid(&mut rng, 0.0, 1.0, 24);
        let b = AffineMap::new(common::uniform_vec(&mut rng, n, 1.0), common::uniform_vec(&mut rng, n, 2.0)).unwrap();
        let opts = SolveOptions { grad_tol: 1e-12, ..SolveOptions::default() };
        let res = minimize_power(&model, &grid, &b, 1, &interpolate_affine(&b, &grid), &opts).unwrap();
        let oracle = quadratic_oracle(&k, &a, &c, &grid, &b);
        for (i, row) in oracle.iter().enumerate() {
            for (u, o) in res.path.node(i).iter().zip(row) {
                assert!((u - o).abs() < 1e-6, "n = {n}, node {i}: {u} vs {o}");
            }
        }
    }
}

#[test]
fn endpoints_stay_bit_exact_through_a_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..=3 {
        let model = common::data_assimilation(&mut rng, n);
        let grid = Grid::uniform(0.0, 1.0, 32).unwrap();
        let b = AffineMap::new(common::uniform_vec(&mut rng, n, 1.0), common::uniform_vec(&mut rng, n, 1.0)).unwrap();
        let schedule = SweepSchedule { m_max: 64, ..SweepSchedule::default() };
        let res = m_sweep(&model, &grid, &b, &schedule, &SolveOptions::default()).unwrap();
        for rec in &res.records {
            assert_eq!(rec.path.node(0), b.eval(0.0).as_slice());
            assert_eq!(rec.path.node(32), b.eval(1.0).as_slice());
        }
    }
}

/// Nontrivial data-assimilation instance: observations pull the path toward
/// a moving target while the drift pushes it elsewhere.
fn nontrivial() -> (LagrangianModel, Grid, AffineMap) {
    let model = LagrangianModel::data_assimilation(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
        SampledSignal::new(vec![(0.0, vec![0.0]), (0.5, vec![1.0]), (1.0, vec![-0.5])]).unwrap(),
        VelocityField::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            SampledSignal::constant(vec![0.5, 0.0]),
        )
        .unwrap(),
    )
    .unwrap();
    let grid = Grid::uniform(0.0, 1.0, 128).unwrap();
    let b = AffineMap::new(vec![0.0, 0.0], vec![1.0, -1.0]).unwrap();
    (model, grid, b)
}

#[test]
fn normalized_roots_are_monotone_and_bound_the_candidate() {
    let (model, grid, b) = nontrivial();
    let schedule = SweepSchedule::default();
    let res = m_sweep(&model, &grid, &b, &schedule, &SolveOptions::default()).unwrap();
    assert!(res.completed());
    let tol = 10.0 * schedule.tol_sweep;
    for w in res.c_sequence.windows(2) {
        assert!(w[1] >= w[0] - tol * (1.0 + w[1]), "{:?}", res.c_sequence);
    }
    let last = *res.c_sequence.last().unwrap();
    assert!(res.sup_of_candidate >= last - tol);
    assert!((res.sup_of_candidate - last) / res.sup_of_candidate < 0.05, "{} vs {last}", res.sup_of_candidate);
}

#[test]
fn identical_runs_are_bit_identical() {
    let (model, grid, b) = nontrivial();
    let schedule = SweepSchedule { m_max: 32, ..SweepSchedule::default() };
    let one = m_sweep(&model, &grid, &b, &schedule, &SolveOptions::default()).unwrap();
    let two = m_sweep(&model, &grid, &b, &schedule, &SolveOptions::default()).unwrap();
    assert_eq!(one.c_sequence, two.c_sequence);
    assert_eq!(one.candidate, two.candidate);
    assert_eq!(one.records.len(), two.records.len());
    for (r1, r2) in one.records.iter().zip(&two.records) {
        assert_eq!(r1.path, r2.path);
        assert_eq!(r1.stats, r2.stats);
    }
}

