//! Discrete supremal and power energies of piecewise-linear paths.
//!
//! On each element the slope is constant, so only `(x, u(x))` vary inside it.
//! The sup-energy takes the maximum of `L` over three samples per element
//! (both ends and the midpoint, clipped to the subinterval). The power energy
//! uses one midpoint sample per element weighted by its (clipped) length and
//! is evaluated through the normalized root
//!
//! ```text
//! Phi_m = S * ( (1/|I|) sum_e w_e (L_e / S)^m )^(1/m),   S = max_e L_e,
//! ```
//!
//! which stays finite for every `m` even when `S^m` overflows.

use serde::{Serialize, Serializer};

use crate::error::{ensure_finite, Error, Result};
use crate::lagrangian::{level_convexity_tolerance, LagrangianModel};
use crate::path::Path;

/// Order of an energy: a finite power `m` or the supremum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Finite(u32),
    Infinity,
}

impl Serialize for Order {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Order::Finite(m) => s.serialize_u32(*m),
            Order::Infinity => s.serialize_str("inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub m: Order,
    /// `sum_e w_e L_e^m`; `+inf` when it overflows (see `overflow`).
    pub raw: f64,
    pub overflow: bool,
    pub normalized_root: f64,
    pub sup: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Part `[lo, hi]` of element `e` inside the subinterval.
#[derive(Clone, Copy, Debug)]
struct Span {
    e: usize,
    lo: f64,
    hi: f64,
}

fn spans(path: &Path, (alpha, beta): (f64, f64)) -> Result<Vec<Span>> {
    if !(alpha < beta) {
        return Err(Error::EmptyInterval { alpha, beta });
    }
    let grid = path.grid();
    for x in [alpha, beta] {
        if x < grid.a() || x > grid.b() {
            return Err(Error::OutOfDomain { x, a: grid.a(), b: grid.b() });
        }
    }
    Ok((0..grid.num_elements())
        .filter_map(|e| {
            let (x0, x1) = grid.element(e);
            let (lo, hi) = (x0.max(alpha), x1.min(beta));
            (hi > lo).then_some(Span { e, lo, hi })
        })
        .collect())
}

fn theta(path: &Path, e: usize, x: f64) -> f64 {
    let (x0, x1) = path.grid().element(e);
    (x - x0) / (x1 - x0)
}

/// Maximum of `L(x, u(x), Du)` over the sup-quadrature samples of the
/// elements meeting `(alpha, beta)`.
pub fn sup_energy(model: &LagrangianModel, path: &Path, subinterval: (f64, f64)) -> Result<f64> {
    let mut sup = 0.0f64;
    for span in spans(path, subinterval)? {
        let slope = path.element_slope(span.e);
        for x in [span.lo, 0.5 * (span.lo + span.hi), span.hi] {
            let eta = path.value_in_element(span.e, theta(path, span.e, x));
            sup = sup.max(model.eval(x, &eta, &slope)?);
        }
    }
    Ok(sup)
}

/// Midpoint samples `(weight, L)` of the power quadrature.
fn midpoint_values(model: &LagrangianModel, path: &Path, spans: &[Span]) -> Result<Vec<(f64, f64)>> {
    spans
        .iter()
        .map(|s| {
            let x = 0.5 * (s.lo + s.hi);
            let eta = path.value_in_element(s.e, theta(path, s.e, x));
            Ok((s.hi - s.lo, model.eval(x, &eta, &path.element_slope(s.e))?))
        })
        .collect()
}

/// `(S, sum_e w_e (L_e / S)^m)` in ascending element order.
fn scaled_sum(samples: &[(f64, f64)], m: u32) -> (f64, f64) {
    let s = samples.iter().fold(0.0f64, |acc, &(_, l)| acc.max(l));
    if s == 0.0 {
        return (0.0, 0.0);
    }
    let sum = samples.iter().map(|&(w, l)| w * (l / s).powi(m as i32)).sum();
    (s, sum)
}

pub fn power_energy(model: &LagrangianModel, path: &Path, m: u32, subinterval: (f64, f64)) -> Result<EnergyReport> {
    if m == 0 {
        return Err(Error::InvalidOptions("power m must be at least 1".into()));
    }
    let spans = spans(path, subinterval)?;
    let (alpha, beta) = subinterval;
    let samples = midpoint_values(model, path, &spans)?;
    let (s, sum) = scaled_sum(&samples, m);
    let (raw, normalized_root) = if s == 0.0 {
        (0.0, 0.0)
    } else {
        (s.powi(m as i32) * sum, s * (sum / (beta - alpha)).powf(1.0 / m as f64))
    };
    ensure_finite(normalized_root, "normalized power root")?;
    Ok(EnergyReport {
        m: Order::Finite(m),
        raw,
        overflow: !raw.is_finite(),
        normalized_root,
        sup: sup_energy(model, path, subinterval)?,
        alpha,
        beta,
    })
}

/// `Phi_m` and its gradient with respect to the nodal values (row-major,
/// one row per node). Rows of nodes not strictly inside the subinterval are
/// zero: those nodes are held fixed.
pub fn power_objective(
    model: &LagrangianModel,
    path: &Path,
    m: u32,
    subinterval: (f64, f64),
) -> Result<(f64, Vec<f64>)> {
    if m == 0 {
        return Err(Error::InvalidOptions("power m must be at least 1".into()));
    }
    let (alpha, beta) = subinterval;
    let spans = spans(path, subinterval)?;
    let n = path.dim();
    let mut grad = vec![0.0; path.values().len()];

    let mut jets = Vec::with_capacity(spans.len());
    for s in &spans {
        let x = 0.5 * (s.lo + s.hi);
        let th = theta(path, s.e, x);
        let eta = path.value_in_element(s.e, th);
        let jet = model.first_jet(x, &eta, &path.element_slope(s.e))?;
        jets.push((th, jet));
    }
    let samples: Vec<(f64, f64)> = spans.iter().zip(&jets).map(|(s, (_, j))| (s.hi - s.lo, j.value)).collect();
    let (smax, sum) = scaled_sum(&samples, m);
    if smax == 0.0 {
        return Ok((0.0, grad));
    }
    let length = beta - alpha;
    let phi = smax * (sum / length).powf(1.0 / m as f64);
    ensure_finite(phi, "normalized power root")?;

    // dPhi/dL_e = (w_e / |I|) (L_e / Phi)^(m - 1)
    for (s, (th, jet)) in spans.iter().zip(&jets) {
        let coef = (s.hi - s.lo) / length * (jet.value / phi).powi(m as i32 - 1);
        if coef == 0.0 {
            continue;
        }
        let h = path.grid().element_length(s.e);
        for k in 0..n {
            let dp = jet.d_p[k] / h;
            let de = jet.d_eta[k];
            grad[s.e * n + k] += coef * (de * (1.0 - th) - dp);
            grad[(s.e + 1) * n + k] += coef * (de * th + dp);
        }
    }
    for (i, &x) in path.grid().nodes().iter().enumerate() {
        if x <= alpha || x >= beta {
            grad[i * n..(i + 1) * n].iter_mut().for_each(|g| *g = 0.0);
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("power energy gradient".into()));
    }
    Ok((phi, grad))
}

/// Gradient of the normalized power root with respect to nodal values.
pub fn power_energy_gradient(
    model: &LagrangianModel,
    path: &Path,
    m: u32,
    subinterval: (f64, f64),
) -> Result<Vec<f64>> {
    Ok(power_objective(model, path, m, subinterval)?.1)
}

/// `max_i L(x, eta, P_i) - L(x, eta, sum_i w_i P_i)`; nonnegative (up to
/// rounding) whenever `L(x, eta, .)` is level-convex.
pub fn jensen_gap(
    model: &LagrangianModel,
    x: f64,
    eta: &[f64],
    weights: &[f64],
    p_list: &[Vec<f64>],
) -> Result<f64> {
    if p_list.is_empty() {
        return Err(Error::BadWeights("empty point list".into()));
    }
    if weights.len() != p_list.len() {
        return Err(Error::BadWeights(format!("{} weights for {} points", weights.len(), p_list.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::BadWeights("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::BadWeights(format!("weights sum to {total}, not 1")));
    }
    let mut mean = vec![0.0; model.dim()];
    let mut max = f64::NEG_INFINITY;
    for (w, p) in weights.iter().zip(p_list) {
        for (acc, c) in mean.iter_mut().zip(p) {
            *acc += w * c;
        }
        max = max.max(model.eval(x, eta, p)?);
    }
    if p_list.len() == 1 {
        return Ok(0.0);
    }
    Ok(max - model.eval(x, eta, &mean)?)
}

/// Tolerance used to accept a Jensen gap as nonnegative.
pub fn jensen_tolerance(scale: f64) -> f64 {
    level_convexity_tolerance(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{interpolate_affine, AffineMap, Grid};

    fn quadratic() -> LagrangianModel {
        LagrangianModel::power_norm(2.0, vec![0.0]).unwrap()
    }

    fn bent() -> Path {
        Path::from_rows(Grid::new(vec![0.0, 0.5, 1.0]).unwrap(), &[vec![0.0], vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn sup_energy_examples() {
        let affine = interpolate_affine(&AffineMap::new(vec![0.0], vec![2.0]).unwrap(), &Grid::uniform(0.0, 1.0, 4).unwrap());
        assert_eq!(sup_energy(&quadratic(), &affine, (0.0, 1.0)).unwrap(), 4.0);
        assert_eq!(sup_energy(&quadratic(), &bent(), (0.0, 1.0)).unwrap(), 4.0);
        assert_eq!(sup_energy(&quadratic(), &bent(), (0.0, 0.4)).unwrap(), 0.0);
        assert!(matches!(sup_energy(&quadratic(), &bent(), (0.5, 0.5)), Err(Error::EmptyInterval { .. })));
    }

    #[test]
    fn power_energy_examples() {
        let model = LagrangianModel::power_norm(2.0, vec![0.0, 0.0]).unwrap();
        let affine = interpolate_affine(&AffineMap::new(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap(), &Grid::uniform(0.0, 1.0, 8).unwrap());
        for m in [1, 3, 64, 1024] {
            let r = power_energy(&model, &affine, m, (0.0, 1.0)).unwrap();
            assert_eq!((r.raw, r.normalized_root), (1.0, 1.0));
        }

        let r = power_energy(&quadratic(), &bent(), 3, (0.0, 1.0)).unwrap();
        assert_eq!(r.raw, 32.0);
        assert!((r.normalized_root - 4.0 * 0.5f64.powf(1.0 / 3.0)).abs() < 1e-14);
        assert!((r.normalized_root - 3.1748).abs() < 1e-4);
    }

    /// The log-space evaluation `exp((ln sum_e w_e L_e^m - ln|I|) / m)` is an
    /// independent route to the normalized root.
    #[test]
    fn large_power_overflows_raw_but_not_root() {
        let r = power_energy(&quadratic(), &bent(), 1024, (0.0, 1.0)).unwrap();
        assert!(r.overflow);
        assert!(r.raw.is_infinite());
        let log_sum = 1024.0 * 4.0f64.ln() + 0.5f64.ln();
        let oracle = (log_sum / 1024.0).exp();
        assert!((r.normalized_root - oracle).abs() < 1e-14 * oracle);
        assert!((r.normalized_root - 4.0 * 0.5f64.powf(1.0 / 1024.0)).abs() < 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let v = vec![1.0, -0.5];
        let model = LagrangianModel::constant_drift(v.clone()).unwrap();
        let grid = Grid::uniform(0.0, 2.0, 6).unwrap();
        let path = interpolate_affine(&AffineMap::new(vec![0.3, 0.1], v).unwrap(), &grid);
        let g = power_energy_gradient(&model, &path, 4, (0.0, 2.0)).unwrap();
        assert!(g.iter().all(|&x| x.abs() < 1e-12));

        let constant = interpolate_affine(&AffineMap::new(vec![0.7], vec![0.0]).unwrap(), &grid);
        let g = power_energy_gradient(&quadratic(), &constant, 2, (0.0, 2.0)).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_rows_outside_open_subinterval_are_zero() {
        let grid = Grid::uniform(0.0, 1.0, 8).unwrap();
        let rows: Vec<Vec<f64>> = (0..=8).map(|i| vec![(i as f64 * 0.7).sin()]).collect();
        let path = Path::from_rows(grid, &rows).unwrap();
        let g = power_energy_gradient(&quadratic(), &path, 3, (0.25, 0.75)).unwrap();
        for (i, gi) in g.iter().enumerate() {
            if i <= 2 || i >= 6 {
                assert_eq!(*gi, 0.0, "row {i}");
            }
        }
        assert!(g[3..6].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn jensen_gap_examples() {
        let abs = LagrangianModel::power_norm(1.0, vec![0.0]).unwrap();
        let gap = jensen_gap(&abs, 0.0, &[0.0], &[0.5, 0.5], &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(gap, 1.0);
        assert_eq!(jensen_gap(&abs, 0.0, &[0.0], &[1.0], &[vec![3.0]]).unwrap(), 0.0);
        let wells = LagrangianModel::min_of_norms(vec![vec![2.0], vec![-2.0]], 1.0).unwrap();
        let gap = jensen_gap(&wells, 0.0, &[0.0], &[0.5, 0.5], &[vec![-2.0], vec![2.0]]).unwrap();
        assert_eq!(gap, -2.0);
        assert!(matches!(
            jensen_gap(&abs, 0.0, &[0.0], &[0.5, 0.6], &[vec![0.0], vec![2.0]]),
            Err(Error::BadWeights(_))
        ));
        assert!(matches!(jensen_gap(&abs, 0.0, &[0.0], &[], &[]), Err(Error::BadWeights(_))));
    }

    #[test]
    fn partial_elements_are_clipped() {
        // slope 2 on (0.5, 1); the clipped piece (0.5, 0.6) has midpoint 0.55
        let x_dep = LagrangianModel::from_fn(1, |x, _, p| x * p[0] * p[0]).unwrap();
        let s = sup_energy(&x_dep, &bent(), (0.3, 0.6)).unwrap();
        assert!((s - 0.6 * 4.0).abs() < 1e-15);
        let r = power_energy(&x_dep, &bent(), 1, (0.3, 0.6)).unwrap();
        // (0.2 * 0 + 0.1 * 0.55 * 4) / 0.3
        assert!((r.normalized_root - 0.1 * 0.55 * 4.0 / 0.3).abs() < 1e-14);
    }
}
