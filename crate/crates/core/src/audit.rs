//! Numerical audits of a candidate sup-energy minimizer.
//!
//! An absolute minimizer must beat every competitor with the same boundary
//! values on every subinterval, not just on the whole domain. The audit
//! samples node-aligned subintervals, re-solves the sweep there with the
//! candidate's own boundary values, and reports the deficit
//! `sup_candidate - sup_local`. A positive deficit beyond tolerance refutes
//! absolute minimality; the absence of one only fails to refute it.
//!
//! The remaining operations check the individual steps that make power-sweep
//! limits absolute minimizers: the boundary-layer comparison map, the lower
//! semicontinuity of the normalized roots, and the behaviour of endpoint
//! difference quotients as the layer width shrinks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{power_energy, sup_energy};
use crate::error::{Error, Result};
use crate::lagrangian::LagrangianModel;
use crate::path::{AffineMap, Path};
use crate::solver::{m_sweep, with_pool, SolveOptions, SweepSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub num_subintervals: usize,
    /// Minimum number of elements in a sampled subinterval.
    pub min_elements: usize,
    /// Relative tolerance on deficits.
    pub tol_audit: f64,
    pub schedule: SweepSchedule,
    pub solve: SolveOptions,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            num_subintervals: 20,
            min_elements: 3,
            tol_audit: 1e-3,
            schedule: SweepSchedule::default(),
            solve: SolveOptions::default(),
            seed: 0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_subintervals == 0 {
            return Err(Error::InvalidOptions("audit needs num_subintervals >= 1".into()));
        }
        if self.min_elements == 0 {
            return Err(Error::InvalidOptions("audit needs min_elements >= 1".into()));
        }
        if !(self.tol_audit > 0.0) {
            return Err(Error::InvalidOptions("audit needs tol_audit > 0".into()));
        }
        self.schedule.validate()?;
        self.solve.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditEntry {
    pub alpha: f64,
    pub beta: f64,
    pub first_node: usize,
    pub last_node: usize,
    pub sup_global_restricted: f64,
    pub sup_local_solution: f64,
    pub deficit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InconclusiveEntry {
    pub alpha: f64,
    pub beta: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub tol_audit: f64,
    pub entries: Vec<AuditEntry>,
    pub violations: Vec<AuditEntry>,
    pub inconclusive: Vec<InconclusiveEntry>,
    pub max_deficit: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn assemble(tol_audit: f64, outcomes: Vec<std::result::Result<AuditEntry, InconclusiveEntry>>) -> Self {
        let mut entries = Vec::new();
        let mut inconclusive = Vec::new();
        for o in outcomes {
            match o {
                Ok(e) => entries.push(e),
                Err(i) => inconclusive.push(i),
            }
        }
        let violations = entries
            .iter()
            .filter(|e| e.deficit > tol_audit * (1.0 + e.sup_global_restricted))
            .cloned()
            .collect();
        let max_deficit = entries.iter().map(|e| e.deficit).fold(f64::NEG_INFINITY, f64::max);
        Self { tol_audit, entries, violations, inconclusive, max_deficit }
    }
}

/// Seeded node pairs `(i, j)` with `j - i >= min_elements`.
pub fn sample_subintervals(path: &Path, config: &AuditConfig) -> Result<Vec<(usize, usize)>> {
    let elements = path.grid().num_elements();
    let min = config.min_elements.max(2);
    if elements < min {
        return Err(Error::TooFewElements { needed: min, got: elements });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..config.num_subintervals)
        .map(|_| {
            let i = rng.gen_range(0..=elements - min);
            let j = rng.gen_range(i + min..=elements);
            (i, j)
        })
        .collect())
}

fn audit_one(
    model: &LagrangianModel,
    candidate: &Path,
    (i, j): (usize, usize),
    config: &AuditConfig,
) -> std::result::Result<AuditEntry, InconclusiveEntry> {
    let nodes = candidate.grid().nodes();
    let (alpha, beta) = (nodes[i], nodes[j]);
    let inconclusive = |reason: String| InconclusiveEntry { alpha, beta, reason };
    let run = || -> Result<std::result::Result<AuditEntry, InconclusiveEntry>> {
        let sup_global_restricted = sup_energy(model, candidate, (alpha, beta))?;
        let grid = candidate.grid().sub(i, j)?;
        let chord = AffineMap::through(alpha, candidate.node(i), beta, candidate.node(j))?;
        let local = m_sweep(model, &grid, &chord, &config.schedule, &config.solve)?;
        if let Some(f) = local.failure {
            return Ok(Err(inconclusive(format!("local sweep failed at m = {}: {}", f.m, f.message))));
        }
        Ok(Ok(AuditEntry {
            alpha,
            beta,
            first_node: i,
            last_node: j,
            sup_global_restricted,
            sup_local_solution: local.sup_of_candidate,
            deficit: sup_global_restricted - local.sup_of_candidate,
        }))
    };
    run().unwrap_or_else(|e| Err(inconclusive(e.to_string())))
}

/// Compares the candidate's sup-energy on sampled subintervals against fresh
/// sweeps with the same boundary values. Subintervals run in parallel on
/// `jobs` threads (`0` for the global pool); the report order is the
/// sampling order.
pub fn audit_absolute_minimality(
    model: &LagrangianModel,
    candidate: &Path,
    config: &AuditConfig,
    jobs: usize,
) -> Result<AuditReport> {
    config.validate()?;
    let pairs = sample_subintervals(candidate, config)?;
    let outcomes = with_pool(jobs, || {
        pairs.par_iter().map(|&pair| audit_one(model, candidate, pair, config)).collect::<Vec<_>>()
    });
    Ok(AuditReport::assemble(config.tol_audit, outcomes))
}

/// Cheap smoke test: instead of re-solving, tries `trials` random
/// perturbations of amplitude `amplitude` vanishing at the subinterval ends.
pub fn audit_random_perturbations(
    model: &LagrangianModel,
    candidate: &Path,
    config: &AuditConfig,
    trials: usize,
    amplitude: f64,
) -> Result<AuditReport> {
    config.validate()?;
    if trials == 0 {
        return Err(Error::InvalidOptions("need at least one perturbation trial".into()));
    }
    let pairs = sample_subintervals(candidate, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = candidate.dim();
    let mut outcomes = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let nodes = candidate.grid().nodes();
        let (alpha, beta) = (nodes[i], nodes[j]);
        let sup_global_restricted = sup_energy(model, candidate, (alpha, beta))?;
        let mut best = f64::INFINITY;
        for _ in 0..trials {
            let mut trial = candidate.clone();
            for node in i + 1..j {
                let v: Vec<f64> =
                    trial.node(node).iter().map(|c| c + amplitude * rng.gen_range(-1.0..=1.0)).collect();
                trial.set_node(node, &v);
            }
            debug_assert_eq!(trial.dim(), n);
            best = best.min(sup_energy(model, &trial, (alpha, beta))?);
        }
        outcomes.push(Ok(AuditEntry {
            alpha,
            beta,
            first_node: i,
            last_node: j,
            sup_global_restricted,
            sup_local_solution: best,
            deficit: sup_global_restricted - best,
        }));
    }
    Ok(AuditReport::assemble(config.tol_audit, outcomes))
}

/// A path glued from affine boundary layers and an interior profile.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub path: Path,
    /// Last node of the left layer.
    pub left_node: usize,
    /// First node of the right layer.
    pub right_node: usize,
    pub delta_left: f64,
    pub delta_right: f64,
}

impl Comparison {
    /// `((psi(alpha + delta) - u_left) / delta, (u_right - psi(beta - delta)) / delta)`
    /// computed from the glued nodal values.
    pub fn layer_slopes(&self) -> (Vec<f64>, Vec<f64>) {
        let last = self.path.grid().num_nodes() - 1;
        let left = self
            .path
            .node(self.left_node)
            .iter()
            .zip(self.path.node(0))
            .map(|(r, l)| (r - l) / self.delta_left)
            .collect();
        let right = self
            .path
            .node(last)
            .iter()
            .zip(self.path.node(self.right_node))
            .map(|(r, l)| (r - l) / self.delta_right)
            .collect();
        (left, right)
    }
}

/// Node-snapped layer ends `(k_left, k_right)` for a width `delta`.
fn snap_layers(psi: &Path, delta: f64) -> Result<(usize, usize)> {
    let grid = psi.grid();
    let (alpha, beta) = (grid.a(), grid.b());
    let len = grid.length();
    if !(delta > 0.0 && delta < len / 3.0) {
        return Err(Error::BadDelta(format!("need 0 < delta < {} (a third of the interval), got {delta}", len / 3.0)));
    }
    let slack = 1e-12 * len;
    let nodes = grid.nodes();
    let k_left = nodes.partition_point(|&x| x - alpha <= delta + slack).saturating_sub(1);
    let k_right = nodes.partition_point(|&x| beta - x > delta + slack);
    if k_left == 0 || k_right >= nodes.len() - 1 {
        return Err(Error::GridTooCoarse { delta });
    }
    if k_left > k_right {
        return Err(Error::BadDelta(format!("layers of width {delta} overlap on this grid")));
    }
    Ok((k_left, k_right))
}

/// Replaces `psi` on `[alpha, alpha + delta]` by the affine interpolation from
/// `u_left` to `psi(alpha + delta)` and on `[beta - delta, beta]` by the
/// affine interpolation from `psi(beta - delta)` to `u_right`. The width is
/// snapped down to grid nodes on each side.
pub fn build_comparison(u_left: &[f64], u_right: &[f64], psi: &Path, delta: f64) -> Result<Comparison> {
    let n = psi.dim();
    for v in [u_left, u_right] {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let (k_left, k_right) = snap_layers(psi, delta)?;
    let grid = psi.grid();
    let nodes = grid.nodes();
    let (alpha, beta) = (grid.a(), grid.b());
    let last = nodes.len() - 1;
    let delta_left = nodes[k_left] - alpha;
    let delta_right = beta - nodes[k_right];
    let inner_left = psi.node(k_left).to_vec();
    let inner_right = psi.node(k_right).to_vec();

    let mut path = psi.clone();
    for (k, &x) in nodes.iter().enumerate().take(k_left + 1) {
        let (wl, wr) = ((delta_left - (x - alpha)) / delta_left, (x - alpha) / delta_left);
        let v: Vec<f64> = u_left.iter().zip(&inner_left).map(|(l, r)| wl * l + wr * r).collect();
        path.set_node(k, &v);
    }
    for (k, &x) in nodes.iter().enumerate().skip(k_right) {
        let (wl, wr) = ((beta - x) / delta_right, (x - nodes[k_right]) / delta_right);
        let v: Vec<f64> = inner_right.iter().zip(u_right).map(|(l, r)| wl * l + wr * r).collect();
        path.set_node(k, &v);
    }
    path.set_node(0, u_left);
    path.set_node(last, u_right);
    Ok(Comparison { path, left_node: k_left, right_node: k_right, delta_left, delta_right })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemicontinuityReport {
    /// Sup-energy of the limit path on the subinterval.
    pub lhs: f64,
    /// Normalized power roots of the approximants.
    pub rhs: Vec<f64>,
    /// Minimum over the last half of `rhs`.
    pub liminf_estimate: f64,
    pub pass: bool,
}

/// Checks `sup_A L(limit) <= liminf_m Phi_m(u_m; A)` with the liminf
/// replaced by the minimum over the tail half of the sequence.
pub fn semicontinuity_check(
    model: &LagrangianModel,
    approx: &[(u32, Path)],
    limit: &Path,
    subinterval: (f64, f64),
    tol_audit: f64,
) -> Result<SemicontinuityReport> {
    if approx.len() < 3 {
        return Err(Error::TooFewEntries { needed: 3, got: approx.len() });
    }
    if approx.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidOptions("powers m must be strictly increasing".into()));
    }
    let lhs = sup_energy(model, limit, subinterval)?;
    let rhs = approx
        .iter()
        .map(|(m, p)| Ok(power_energy(model, p, *m, subinterval)?.normalized_root))
        .collect::<Result<Vec<f64>>>()?;
    let tail = rhs.len() / 2;
    let liminf_estimate = rhs[tail..].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SemicontinuityReport { lhs, pass: lhs <= liminf_estimate + tol_audit * (1.0 + lhs), rhs, liminf_estimate })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSample {
    /// Requested width.
    pub delta: f64,
    /// Width after snapping to nodes.
    pub snapped: f64,
    /// Difference quotient across the layer, taken from the endpoint inward.
    pub quotient: Vec<f64>,
    /// Max of `L(x, glued(x), quotient)` over the layer samples.
    pub layer_sup: f64,
    /// Max over the layer of `|glued(x) - psi(endpoint)|`.
    pub boundary_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitEstimate {
    pub quotient: Vec<f64>,
    pub layer_sup: f64,
    /// Last two quotients and layer sups agree to `tol_audit`.
    pub cauchy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientScan {
    pub left: Vec<LayerSample>,
    pub right: Vec<LayerSample>,
    pub left_limit: LimitEstimate,
    pub right_limit: LimitEstimate,
    pub global_sup: f64,
    /// Both limiting layer sups are at most `global_sup + tol_audit`.
    pub conclusion_holds: bool,
}

/// `2^-i * 0.3 * length` for `i = 1..=8`, keeping only widths that reach the
/// first node on both sides.
pub fn default_delta_schedule(psi: &Path) -> Vec<f64> {
    let grid = psi.grid();
    let min_width = grid.element_length(0).max(grid.element_length(grid.num_elements() - 1));
    (1..=8)
        .map(|i| 0.3 * grid.length() / f64::from(1u32 << i))
        .filter(|&d| d >= min_width * (1.0 + 1e-12))
        .collect()
}

fn layer_max(
    model: &LagrangianModel,
    glued: &Path,
    elements: std::ops::Range<usize>,
    quotient: &[f64],
    anchor: &[f64],
) -> Result<(f64, f64)> {
    let grid = glued.grid();
    let mut sup = 0.0f64;
    let mut deviation = 0.0f64;
    for e in elements {
        let (x0, x1) = grid.element(e);
        for theta in [0.0, 0.5, 1.0] {
            let x = (1.0 - theta) * x0 + theta * x1;
            let value = glued.value_in_element(e, theta);
            sup = sup.max(model.eval(x, &value, quotient)?);
            let d = value.iter().zip(anchor).map(|(v, a)| (v - a) * (v - a)).sum::<f64>().sqrt();
            deviation = deviation.max(d);
        }
    }
    Ok((sup, deviation))
}

fn limit_of(samples: &[LayerSample], tol: f64) -> LimitEstimate {
    let last = samples.last().expect("non-empty schedule");
    let cauchy = samples.len() >= 2 && {
        let prev = &samples[samples.len() - 2];
        let dq = last.quotient.iter().zip(&prev.quotient).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        dq < tol && (last.layer_sup - prev.layer_sup).abs() < tol
    };
    LimitEstimate { quotient: last.quotient.clone(), layer_sup: last.layer_sup, cauchy }
}

/// Shrinks the boundary layers of the self-glued comparison map along
/// `deltas` and tracks the endpoint difference quotients and the layer
/// sup-energies they induce.
pub fn endpoint_quotient_scan(
    model: &LagrangianModel,
    psi: &Path,
    deltas: &[f64],
    tol_audit: f64,
) -> Result<QuotientScan> {
    if deltas.is_empty() {
        return Err(Error::BadDelta("empty schedule".into()));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::BadDelta("schedule must be strictly decreasing".into()));
    }
    let grid = psi.grid();
    let (alpha, beta) = (grid.a(), grid.b());
    let last = grid.num_nodes() - 1;
    let (u_left, u_right) = (psi.node(0).to_vec(), psi.node(last).to_vec());
    let mut left = Vec::with_capacity(deltas.len());
    let mut right = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let glued = build_comparison(&u_left, &u_right, psi, delta)?;
        let q_left = psi.difference_quotient(alpha, glued.delta_left)?;
        let q_right = psi.difference_quotient(beta, -glued.delta_right)?;
        let (sup_l, dev_l) = layer_max(model, &glued.path, 0..glued.left_node, &q_left, &u_left)?;
        let (sup_r, dev_r) = layer_max(model, &glued.path, glued.right_node..last, &q_right, &u_right)?;
        left.push(LayerSample {
            delta,
            snapped: glued.delta_left,
            quotient: q_left,
            layer_sup: sup_l,
            boundary_deviation: dev_l,
        });
        right.push(LayerSample {
            delta,
            snapped: glued.delta_right,
            quotient: q_right,
            layer_sup: sup_r,
            boundary_deviation: dev_r,
        });
    }
    let global_sup = sup_energy(model, psi, (alpha, beta))?;
    let left_limit = limit_of(&left, tol_audit);
    let right_limit = limit_of(&right, tol_audit);
    let conclusion_holds = left_limit.layer_sup.max(right_limit.layer_sup) <= global_sup + tol_audit;
    Ok(QuotientScan { left, right, left_limit, right_limit, global_sup, conclusion_holds })
}
