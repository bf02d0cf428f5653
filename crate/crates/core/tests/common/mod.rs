#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use supmin_core::lagrangian::{RadialProfile, SampledSignal, VelocityField};
use supmin_core::{Grid, LagrangianModel, Path};

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-half..=half)).collect()
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, half: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-half..=half))
}

/// Piecewise-linear signal on `[0, 1]` with kinks at 0, 0.5 and 1.
pub fn signal(rng: &mut ChaCha8Rng, n: usize) -> SampledSignal {
    SampledSignal::new((0..3).map(|i| (0.5 * i as f64, uniform_vec(rng, n, 1.0))).collect()).unwrap()
}

pub fn velocity(rng: &mut ChaCha8Rng, n: usize) -> VelocityField {
    VelocityField::new(matrix(rng, n, n, 0.5), signal(rng, n)).unwrap()
}

pub fn data_assimilation(rng: &mut ChaCha8Rng, n: usize) -> LagrangianModel {
    let rows = rng.gen_range(1..=n);
    let k = matrix(rng, rows, n, 1.0);
    let meas = signal(rng, rows);
    LagrangianModel::data_assimilation(k, meas, velocity(rng, n)).unwrap()
}

pub fn radial(rng: &mut ChaCha8Rng, n: usize) -> LagrangianModel {
    let profile = match rng.gen_range(0..3) {
        0 => RadialProfile::Identity,
        1 => RadialProfile::Shift { beta: rng.gen_range(0.0..2.0) },
        _ => RadialProfile::Power { gamma: rng.gen_range(0.5..2.5) },
    };
    LagrangianModel::radial(profile, velocity(rng, n)).unwrap()
}

pub fn power_norm(rng: &mut ChaCha8Rng, n: usize) -> LagrangianModel {
    let s = [1.0, 2.0, 3.0, 4.0][rng.gen_range(0..4)];
    LagrangianModel::power_norm(s, uniform_vec(rng, n, 1.0)).unwrap()
}

/// One of the built-in level-convex families.
pub fn builtin(rng: &mut ChaCha8Rng, n: usize) -> LagrangianModel {
    match rng.gen_range(0..3) {
        0 => power_norm(rng, n),
        1 => data_assimilation(rng, n),
        _ => radial(rng, n),
    }
}

/// Grid on `[a, b]` with random spacing ratios in `[1, 4]`.
pub fn random_grid(rng: &mut ChaCha8Rng, a: f64, b: f64, elements: usize) -> Grid {
    let widths: Vec<f64> = (0..elements).map(|_| rng.gen_range(1.0..4.0)).collect();
    let total: f64 = widths.iter().sum();
    let mut nodes = vec![a];
    let mut acc = 0.0;
    for w in &widths[..elements - 1] {
        acc += w;
        nodes.push(a + (b - a) * acc / total);
    }
    nodes.push(b);
    Grid::new(nodes).unwrap()
}

pub fn random_path(rng: &mut ChaCha8Rng, grid: Grid, n: usize, half: f64) -> Path {
    let values = uniform_vec(rng, grid.num_nodes() * n, half);
    Path::new(grid, n, values).unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}
