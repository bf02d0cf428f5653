//! Piecewise-linear paths `[a, b] -> R^N` on strictly increasing grids.
//!
//! A [`Path`] stores nodal values; its derivative is constant on each
//! element. Evaluation inside an element uses the convex combination
//! `(1 - theta) u_e + theta u_{e+1}`, so nodal values are reproduced exactly.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
}

impl Grid {
    /// Strictly increasing nodes, at least two elements.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {}", nodes.len())));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid("nodes must be finite".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("nodes must be strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// `elements + 1` equally spaced nodes with the endpoints exact.
    pub fn uniform(a: f64, b: f64, elements: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidGrid(format!("need finite a < b, got [{a}, {b}]")));
        }
        let mut nodes: Vec<f64> = (0..=elements)
            .map(|i| a + (b - a) * (i as f64) / (elements as f64))
            .collect();
        if let Some(last) = nodes.last_mut() {
            *last = b;
        }
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn a(&self) -> f64 {
        self.nodes[0]
    }

    pub fn b(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.b() - self.a()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.nodes[e], self.nodes[e + 1])
    }

    pub fn element_length(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    /// Common spacing if all element lengths agree to a relative `1e-9`.
    pub fn uniform_spacing(&self) -> Option<f64> {
        let h = self.length() / self.num_elements() as f64;
        let uniform = (0..self.num_elements()).all(|e| (self.element_length(e) - h).abs() <= 1e-9 * h);
        uniform.then_some(h)
    }

    /// Clamps points that miss the domain by rounding only.
    fn admit(&self, x: f64) -> Result<f64> {
        let (a, b) = (self.a(), self.b());
        let slack = 8.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0);
        if x.is_finite() && x >= a - slack && x <= b + slack {
            Ok(x.clamp(a, b))
        } else {
            Err(Error::OutOfDomain { x, a, b })
        }
    }

    /// Element containing `x`; at interior nodes the left element.
    pub fn locate(&self, x: f64) -> Result<usize> {
        let x = self.admit(x)?;
        let idx = self.nodes.partition_point(|&n| n < x);
        Ok(idx.saturating_sub(1).min(self.num_elements() - 1))
    }

    /// Index of the node equal to `x` up to a relative `1e-12`.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let tol = 1e-12 * self.length().max(x.abs()).max(1.0);
        let idx = self.nodes.partition_point(|&n| n < x - tol);
        (idx < self.nodes.len() && (self.nodes[idx] - x).abs() <= tol).then_some(idx)
    }

    /// Nodes `first..=last` as a grid.
    pub fn sub(&self, first: usize, last: usize) -> Result<Grid> {
        if last >= self.nodes.len() || last < first + 2 {
            return Err(Error::InvalidGrid(format!("bad node range {first}..={last}")));
        }
        Grid::new(self.nodes[first..=last].to_vec())
    }
}

/// Boundary data `b(x) = b0 + b1 x`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineMap {
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
}

impl AffineMap {
    pub fn new(b0: Vec<f64>, b1: Vec<f64>) -> Result<Self> {
        if b0.len() != b1.len() {
            return Err(Error::DimensionMismatch { expected: b0.len(), got: b1.len() });
        }
        if b0.iter().chain(&b1).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("affine map has non-finite entries".into()));
        }
        Ok(Self { b0, b1 })
    }

    /// The chord through `(xa, ua)` and `(xb, ub)`.
    pub fn through(xa: f64, ua: &[f64], xb: f64, ub: &[f64]) -> Result<Self> {
        let b1: Vec<f64> = ua.iter().zip(ub).map(|(l, r)| (r - l) / (xb - xa)).collect();
        let b0 = ua.iter().zip(&b1).map(|(l, s)| l - s * xa).collect();
        Self::new(b0, b1)
    }

    pub fn dim(&self) -> usize {
        self.b0.len()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.b0.iter().zip(&self.b1).map(|(c, s)| c + s * x).collect()
    }
}

/// Value and derivative of a path at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointEval {
    pub value: Vec<f64>,
    pub slope: Vec<f64>,
    pub element: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    grid: Grid,
    dim: usize,
    /// Row-major nodal values, one row of `dim` entries per node.
    values: Vec<f64>,
}

impl Path {
    pub fn new(grid: Grid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be at least 1".into()));
        }
        if values.len() != grid.num_nodes() * dim {
            return Err(Error::DimensionMismatch { expected: grid.num_nodes() * dim, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("nodal values must be finite".into()));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_rows(grid: Grid, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Self::new(grid, dim, rows.concat())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn set_node(&mut self, i: usize, value: &[f64]) {
        self.values[i * self.dim..(i + 1) * self.dim].copy_from_slice(value);
    }

    pub fn element_slope(&self, e: usize) -> Vec<f64> {
        let h = self.grid.element_length(e);
        self.node(e).iter().zip(self.node(e + 1)).map(|(l, r)| (r - l) / h).collect()
    }

    /// Value at the point `theta` of element `e` (`theta` in `[0, 1]`).
    pub fn value_in_element(&self, e: usize, theta: f64) -> Vec<f64> {
        self.node(e)
            .iter()
            .zip(self.node(e + 1))
            .map(|(l, r)| (1.0 - theta) * l + theta * r)
            .collect()
    }

    pub fn eval_and_slope(&self, x: f64) -> Result<PointEval> {
        let element = self.grid.locate(x)?;
        let x = x.clamp(self.grid.a(), self.grid.b());
        let (x0, x1) = self.grid.element(element);
        let theta = (x - x0) / (x1 - x0);
        Ok(PointEval { value: self.value_in_element(element, theta), slope: self.element_slope(element), element })
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        Ok(self.eval_and_slope(x)?.value)
    }

    /// `(u(y + t) - u(y)) / t`.
    pub fn difference_quotient(&self, y: f64, t: f64) -> Result<Vec<f64>> {
        if t == 0.0 {
            return Err(Error::ZeroStep);
        }
        let lo = self.eval(y)?;
        let hi = self.eval(y + t)?;
        let quotient: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| (h - l) / t).collect();
        #[cfg(debug_assertions)]
        {
            let average = self.slope_average(y, t)?;
            let tol = 8.0 * f64::EPSILON * self.quotient_scale(t);
            for (q, a) in quotient.iter().zip(&average) {
                debug_assert!((q - a).abs() <= tol, "difference quotient {q} vs slope average {a}");
            }
        }
        Ok(quotient)
    }

    /// Length-weighted average of element slopes over the increment from `y`
    /// to `y + t`. Equals [`Path::difference_quotient`] for every admissible
    /// `(y, t)`.
    pub fn slope_average(&self, y: f64, t: f64) -> Result<Vec<f64>> {
        if t == 0.0 {
            return Err(Error::ZeroStep);
        }
        let (lo, hi) = if t > 0.0 { (y, y + t) } else { (y + t, y) };
        let (lo, hi) = (self.grid.admit(lo)?, self.grid.admit(hi)?);
        let mut acc = vec![0.0; self.dim];
        for e in 0..self.grid.num_elements() {
            let (x0, x1) = self.grid.element(e);
            let overlap = x1.min(hi) - x0.max(lo);
            if overlap > 0.0 {
                for (a, s) in acc.iter_mut().zip(self.element_slope(e)) {
                    *a += overlap * s;
                }
            }
        }
        let span = hi - lo;
        Ok(acc.into_iter().map(|a| a / span).collect())
    }

    /// Rounding scale of a difference quotient: nodal magnitudes and
    /// abscissa-slope products over the step, plus the slopes themselves.
    pub fn quotient_scale(&self, t: f64) -> f64 {
        let u_max = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x_max = self.grid.a().abs().max(self.grid.b().abs());
        let s_max = self.max_slope_norm();
        (u_max + x_max * s_max) / t.abs() + s_max
    }

    /// Largest Euclidean norm of an element slope.
    pub fn max_slope_norm(&self) -> f64 {
        (0..self.grid.num_elements())
            .map(|e| self.element_slope(e).iter().map(|s| s * s).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// The sub-path on nodes `first..=last`.
    pub fn restrict(&self, first: usize, last: usize) -> Result<Path> {
        let grid = self.grid.sub(first, last)?;
        let values = self.values[first * self.dim..(last + 1) * self.dim].to_vec();
        Path::new(grid, self.dim, values)
    }

    /// Samples this path at the nodes of another grid covering the same
    /// interval.
    pub fn resample(&self, grid: &Grid) -> Result<Path> {
        let mut values = Vec::with_capacity(grid.num_nodes() * self.dim);
        for &x in grid.nodes() {
            values.extend(self.eval(x)?);
        }
        Path::new(grid.clone(), self.dim, values)
    }

    /// Largest nodal deviation in the max norm.
    pub fn max_node_distance(&self, other: &Path) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// CSV with header `x,u1,...,uN`, one row per node, 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> =
            std::iter::once("x".to_string()).chain((1..=self.dim).map(|i| format!("u{i}"))).collect();
        w.write_record(&header)?;
        for (i, &x) in self.grid.nodes().iter().enumerate() {
            let row: Vec<String> = std::iter::once(x).chain(self.node(i).iter().copied()).map(fmt_f64).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Path> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        if header.get(0) != Some("x") || dim == 0 {
            return Err(Error::InvalidPath("CSV header must be x,u1,...,uN".into()));
        }
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for record in r.records() {
            let record = record?;
            let mut fields = record.iter().map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::InvalidPath(format!("bad number {f:?}: {e}")))
            });
            nodes.push(fields.next().ok_or_else(|| Error::InvalidPath("empty row".into()))??);
            for field in fields {
                values.push(field?);
            }
        }
        Path::new(Grid::new(nodes)?, dim, values)
    }
}

/// Interpolates affine boundary data at the grid nodes.
pub fn interpolate_affine(b: &AffineMap, grid: &Grid) -> Path {
    let values = grid.nodes().iter().flat_map(|&x| b.eval(x)).collect();
    Path { grid: grid.clone(), dim: b.dim(), values }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
