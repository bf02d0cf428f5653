//! Minimization of power energies with clamped affine boundary values and
//! the sweep `m -> infinity` that produces a candidate sup-energy minimizer.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{power_objective, sup_energy};
use crate::error::{Error, Result};
use crate::lagrangian::LagrangianModel;
use crate::path::{interpolate_affine, AffineMap, Grid, Path};

/// Backtracking attempts per line search.
const MAX_BACKTRACKS: usize = 60;
/// Consecutive accepted steps without relative decrease above `1e-15`
/// before the descent is declared stalled.
const STALL_ITERS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Stop once the max-norm of the gradient is at most this.
    pub grad_tol: f64,
    pub initial_step: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    /// Number of stored curvature pairs.
    pub history: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            grad_tol: 1e-8,
            initial_step: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            history: 10,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.grad_tol > 0.0
            && self.initial_step > 0.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0
            && self.history > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidOptions(
                "solve options must be positive with backtrack and sufficient_decrease in (0, 1)".into(),
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSchedule {
    pub m_start: u32,
    pub factor: u32,
    pub m_max: u32,
    /// Relative stall tolerance on successive normalized roots.
    pub tol_sweep: f64,
}

impl Default for SweepSchedule {
    fn default() -> Self {
        Self { m_start: 2, factor: 2, m_max: 1024, tol_sweep: 1e-4 }
    }
}

impl SweepSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.m_start < 1 || self.factor < 2 || self.m_max < self.m_start || !(self.tol_sweep > 0.0) {
            return Err(Error::InvalidOptions(
                "schedule needs m_start >= 1, factor >= 2, m_max >= m_start, tol_sweep > 0".into(),
            ));
        }
        Ok(())
    }

    /// `m_start, m_start * factor, ...` up to `m_max`.
    pub fn powers(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut m = self.m_start;
        while m <= self.m_max {
            out.push(m);
            match m.checked_mul(self.factor) {
                Some(next) => m = next,
                None => break,
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No relative decrease above rounding for several accepted steps.
    Stalled,
    /// Backtracking failed along steepest descent; the best iterate is kept.
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub grad_inf_norm: f64,
    pub objective: f64,
    pub initial_objective: f64,
    pub termination: Termination,
}

impl SolveStats {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

#[derive(Clone, Debug)]
pub struct Minimized {
    pub path: Path,
    pub stats: SolveStats,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: `-H g` for the inverse Hessian approximation built
/// from the stored `(s, y, 1 / s.y)` triples.
fn lbfgs_direction(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

fn check_problem(model: &LagrangianModel, grid: &Grid, b: &AffineMap, init: &Path) -> Result<()> {
    if b.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: b.dim() });
    }
    if init.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: init.dim() });
    }
    if init.grid() != grid {
        return Err(Error::InvalidPath("initial path must live on the solver grid".into()));
    }
    Ok(())
}

/// Limited-memory quasi-Newton descent on the normalized power root with the
/// endpoint values clamped to `b(a)`, `b(b)`.
pub fn minimize_power(
    model: &LagrangianModel,
    grid: &Grid,
    b: &AffineMap,
    m: u32,
    init: &Path,
    opts: &SolveOptions,
) -> Result<Minimized> {
    opts.validate()?;
    check_problem(model, grid, b, init)?;
    let sub = (grid.a(), grid.b());
    let last = grid.num_nodes() - 1;
    let mut path = init.clone();
    path.set_node(0, &b.eval(grid.a()));
    path.set_node(last, &b.eval(grid.b()));

    let (mut f, mut g) = power_objective(model, &path, m, sub)?;
    let initial_objective = f;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.history);
    let mut iterations = 0;
    let mut stalled_for = 0;
    let mut trial = path.clone();

    let termination = loop {
        if inf_norm(&g) <= opts.grad_tol {
            break Termination::Converged;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }
        let mut direction = lbfgs_direction(&g, &memory);
        let mut slope = dot(&direction, &g);
        if !(slope < 0.0) {
            memory.clear();
            direction = g.iter().map(|x| -x).collect();
            slope = dot(&direction, &g);
        }

        let mut accepted = None;
        loop {
            let mut step = opts.initial_step;
            for _ in 0..MAX_BACKTRACKS {
                trial
                    .values_mut()
                    .iter_mut()
                    .zip(path.values().iter().zip(&direction))
                    .for_each(|(t, (x, d))| *t = x + step * d);
                match power_objective(model, &trial, m, sub) {
                    Ok((ft, gt)) if ft <= f + opts.sufficient_decrease * step * slope => {
                        accepted = Some((ft, gt));
                        break;
                    }
                    Ok(_) | Err(Error::NonFinite(_)) => step *= opts.backtrack,
                    Err(e) => return Err(e),
                }
            }
            if accepted.is_some() || memory.is_empty() {
                break;
            }
            memory.clear();
            direction = g.iter().map(|x| -x).collect();
            slope = dot(&direction, &g);
        }
        let Some((f_new, g_new)) = accepted else {
            break Termination::LineSearchFailure;
        };

        iterations += 1;
        let s: Vec<f64> = trial.values().iter().zip(path.values()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == opts.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        stalled_for = if f - f_new <= 1e-15 * f.abs() { stalled_for + 1 } else { 0 };
        std::mem::swap(&mut path, &mut trial);
        f = f_new;
        g = g_new;
        if stalled_for >= STALL_ITERS {
            break Termination::Stalled;
        }
    };

    Ok(Minimized {
        stats: SolveStats { iterations, grad_inf_norm: inf_norm(&g), objective: f, initial_objective, termination },
        path,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub m: u32,
    pub path: Path,
    pub normalized_root: f64,
    pub stats: SolveStats,
}

impl SweepRecord {
    pub fn converged(&self) -> bool {
        self.stats.converged()
    }
}

/// The power `m` at which a sweep stopped with an error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepFailure {
    pub m: u32,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    /// Minimizer at the last successful power (the initial path when the
    /// first power already failed).
    pub candidate: Path,
    pub c_sequence: Vec<f64>,
    pub sup_of_candidate: f64,
    pub failure: Option<SweepFailure>,
}

impl SweepResult {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Sweep starting from the affine interpolant of `b`.
pub fn m_sweep(
    model: &LagrangianModel,
    grid: &Grid,
    b: &AffineMap,
    schedule: &SweepSchedule,
    opts: &SolveOptions,
) -> Result<SweepResult> {
    m_sweep_from(model, grid, b, interpolate_affine(b, grid), schedule, opts)
}

/// Solves for `m = m_start, m_start * factor, ...`, warm-starting each power
/// from the previous minimizer, until `m_max` or until successive normalized
/// roots agree to `tol_sweep * (1 + root)`.
pub fn m_sweep_from(
    model: &LagrangianModel,
    grid: &Grid,
    b: &AffineMap,
    init: Path,
    schedule: &SweepSchedule,
    opts: &SolveOptions,
) -> Result<SweepResult> {
    schedule.validate()?;
    opts.validate()?;
    check_problem(model, grid, b, &init)?;
    let mut records: Vec<SweepRecord> = Vec::new();
    let mut failure = None;
    let mut current = init;
    for m in schedule.powers() {
        match minimize_power(model, grid, b, m, &current, opts) {
            Ok(Minimized { path, stats }) => {
                let root = stats.objective;
                current = path.clone();
                let stop = records
                    .last()
                    .is_some_and(|prev| (root - prev.normalized_root).abs() <= schedule.tol_sweep * (1.0 + root));
                records.push(SweepRecord { m, path, normalized_root: root, stats });
                if stop {
                    break;
                }
            }
            Err(e) => {
                failure = Some(SweepFailure { m, message: e.to_string() });
                break;
            }
        }
    }
    let sup_of_candidate = sup_energy(model, &current, (grid.a(), grid.b()))?;
    Ok(SweepResult {
        c_sequence: records.iter().map(|r| r.normalized_root).collect(),
        records,
        candidate: current,
        sup_of_candidate,
        failure,
    })
}

/// Random restarts around the affine interpolant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiStart {
    /// Total number of sweeps; the first always starts from the affine path.
    pub starts: usize,
    /// Perturbation amplitude relative to `1 + |b1| (b - a)`.
    pub scale: f64,
    pub seed: u64,
}

impl Default for MultiStart {
    fn default() -> Self {
        Self { starts: 1, scale: 0.25, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct MultiStartResult {
    pub runs: Vec<SweepResult>,
    /// Index of the run with the smallest sup-energy (lowest index on ties).
    pub best: usize,
    /// Other runs whose sup-energy matches the best within the sweep
    /// tolerance but whose candidate differs by more than `1e-6`.
    pub ties: Vec<usize>,
}

/// Start `k >= 1` perturbs interior nodes of the affine path uniformly in
/// `[-1, 1] * scale * (1 + |b1| (b - a))`, drawn from a ChaCha8 stream seeded
/// with `seed + k`.
pub fn perturbed_start(b: &AffineMap, grid: &Grid, scale: f64, seed: u64) -> Path {
    let mut path = interpolate_affine(b, grid);
    let slope_norm = b.b1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let amplitude = scale * (1.0 + slope_norm * grid.length());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = path.dim();
    let last = grid.num_nodes() - 1;
    for (i, v) in path.values_mut().iter_mut().enumerate() {
        let node = i / n;
        if node != 0 && node != last {
            *v += amplitude * rng.gen_range(-1.0..=1.0);
        }
    }
    path
}

pub fn m_sweep_multistart(
    model: &LagrangianModel,
    grid: &Grid,
    b: &AffineMap,
    schedule: &SweepSchedule,
    opts: &SolveOptions,
    multi: &MultiStart,
    jobs: usize,
) -> Result<MultiStartResult> {
    if multi.starts == 0 || !(multi.scale >= 0.0) {
        return Err(Error::InvalidOptions("multi-start needs starts >= 1 and scale >= 0".into()));
    }
    let runs: Vec<SweepResult> = with_pool(jobs, || {
        (0..multi.starts)
            .into_par_iter()
            .map(|k| {
                let init = if k == 0 {
                    interpolate_affine(b, grid)
                } else {
                    perturbed_start(b, grid, multi.scale, multi.seed.wrapping_add(k as u64))
                };
                m_sweep_from(model, grid, b, init, schedule, opts)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let best = (0..runs.len())
        .min_by(|&i, &j| runs[i].sup_of_candidate.total_cmp(&runs[j].sup_of_candidate))
        .unwrap_or(0);
    let target = runs[best].sup_of_candidate;
    let ties = (0..runs.len())
        .filter(|&k| k != best)
        .filter(|&k| {
            (runs[k].sup_of_candidate - target).abs() <= schedule.tol_sweep * (1.0 + target)
                && runs[k].candidate.max_node_distance(&runs[best].candidate) > 1e-6
        })
        .collect();
    Ok(MultiStartResult { runs, best, ties })
}

/// Runs `f` on a pool of `jobs` threads; `0` uses the global pool.
pub(crate) fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::power_energy;

    fn quadratic(n: usize) -> LagrangianModel {
        LagrangianModel::power_norm(2.0, vec![0.0; n]).unwrap()
    }

    #[test]
    fn schedule_powers() {
        assert_eq!(SweepSchedule::default().powers(), vec![2, 4, 8, 16, 32, 64, 128, 256, 512, 1024]);
        let s = SweepSchedule { m_start: 3, factor: 3, m_max: 30, tol_sweep: 1e-4 };
        assert_eq!(s.powers(), vec![3, 9, 27]);
        assert!(SweepSchedule { factor: 1, ..s.clone() }.validate().is_err());
        assert!(SweepSchedule { m_max: 1, ..s }.validate().is_err());
    }

    #[test]
    fn affine_start_is_already_optimal() {
        let grid = Grid::uniform(0.0, 1.0, 16).unwrap();
        let b = AffineMap::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let init = interpolate_affine(&b, &grid);
        for m in [1, 2, 8, 256] {
            let out = minimize_power(&quadratic(2), &grid, &b, m, &init, &SolveOptions::default()).unwrap();
            assert_eq!(out.stats.iterations, 0);
            assert!(out.stats.converged());
            assert_eq!(out.path, init);
        }
    }

    #[test]
    fn spike_descends_to_affine_value() {
        let grid = Grid::uniform(0.0, 1.0, 16).unwrap();
        let b = AffineMap::new(vec![0.0], vec![1.0]).unwrap();
        let mut init = interpolate_affine(&b, &grid);
        init.set_node(7, &[3.0]);
        let model = quadratic(1);
        let before = power_energy(&model, &init, 4, (0.0, 1.0)).unwrap().normalized_root;
        let out = minimize_power(&model, &grid, &b, 4, &init, &SolveOptions::default()).unwrap();
        assert_eq!(out.stats.initial_objective, before);
        assert!(out.stats.objective < before);
        assert!((out.stats.objective - 1.0).abs() < 1e-8, "{:?}", out.stats);
        assert_eq!(out.path.node(0), &[0.0]);
        assert_eq!(out.path.node(16), &[1.0]);
    }

    #[test]
    fn endpoints_are_overwritten_with_boundary_values() {
        let grid = Grid::uniform(0.0, 2.0, 8).unwrap();
        let b = AffineMap::new(vec![1.0], vec![0.5]).unwrap();
        let init = interpolate_affine(&AffineMap::new(vec![0.0], vec![0.0]).unwrap(), &grid);
        let out = minimize_power(&quadratic(1), &grid, &b, 2, &init, &SolveOptions::default()).unwrap();
        assert_eq!(out.path.node(0), b.eval(0.0).as_slice());
        assert_eq!(out.path.node(8), b.eval(2.0).as_slice());
    }

    #[test]
    fn dimension_errors() {
        let grid = Grid::uniform(0.0, 1.0, 4).unwrap();
        let b = AffineMap::new(vec![0.0], vec![1.0]).unwrap();
        let init = interpolate_affine(&b, &grid);
        assert!(minimize_power(&quadratic(2), &grid, &b, 2, &init, &SolveOptions::default()).is_err());
        let other = Grid::uniform(0.0, 1.0, 5).unwrap();
        assert!(minimize_power(&quadratic(1), &other, &b, 2, &init, &SolveOptions::default()).is_err());
    }

    #[test]
    fn sweep_on_affine_data_is_constant() {
        let grid = Grid::uniform(0.0, 1.0, 32).unwrap();
        let b = AffineMap::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        let res = m_sweep(&quadratic(2), &grid, &b, &SweepSchedule::default(), &SolveOptions::default()).unwrap();
        assert!(res.completed());
        assert_eq!(res.candidate, interpolate_affine(&b, &grid));
        assert!(res.c_sequence.iter().all(|&c| c == 1.0));
        assert_eq!(res.sup_of_candidate, 1.0);
        assert_eq!(res.records.len(), 2);
    }

    #[test]
    fn multistart_finds_the_chord_from_every_start() {
        let grid = Grid::uniform(0.0, 1.0, 12).unwrap();
        let b = AffineMap::new(vec![0.0], vec![1.0]).unwrap();
        let sched = SweepSchedule { m_max: 16, ..SweepSchedule::default() };
        let multi = MultiStart { starts: 4, scale: 0.3, seed: 9 };
        let res =
            m_sweep_multistart(&quadratic(1), &grid, &b, &sched, &SolveOptions::default(), &multi, 2).unwrap();
        assert_eq!(res.runs.len(), 4);
        assert_eq!(res.best, 0);
        for run in &res.runs {
            assert!((run.sup_of_candidate - 1.0).abs() < 1e-3, "{}", run.sup_of_candidate);
        }
        let again =
            m_sweep_multistart(&quadratic(1), &grid, &b, &sched, &SolveOptions::default(), &multi, 1).unwrap();
        for (x, y) in res.runs.iter().zip(&again.runs) {
            assert_eq!(x.candidate, y.candidate);
        }
    }
}
