//! The vectorial Aronsson operator
//!
//! ```text
//! F(x, eta, P, X) = [L_P (x) L_P + L [L_P]^perp L_PP] X
//!                 + (L_eta . P + L_x) L_P
//!                 + L [L_P]^perp (L_Peta P + L_Px - L_eta)
//! ```
//!
//! with `[xi]^perp = I - sgn(xi) (x) sgn(xi)` the projection onto the
//! hyperplane normal to `xi`. Smooth sup-energy minimizers satisfy `F = 0`.
//! The coefficients are discontinuous where `L_P` vanishes; there the
//! convention `sgn(0) = 0` makes the projection the identity.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lagrangian::LagrangianModel;
use crate::path::Path;

/// Arguments of the operator: position, value, first and second derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderPoint {
    pub x: f64,
    pub eta: Vec<f64>,
    pub p: Vec<f64>,
    pub xx: Vec<f64>,
}

fn projection_threshold(xi: &DVector<f64>) -> f64 {
    1e-12 * (1.0 + xi.amax())
}

/// `I - (xi/|xi|) (x) (xi/|xi|)`, or the identity when `|xi|` is below
/// `1e-12 (1 + max_i |xi_i|)`.
pub fn normal_projection(xi: &[f64]) -> DMatrix<f64> {
    let xi = DVector::from_column_slice(xi);
    let n = xi.len();
    let norm = xi.norm();
    if norm <= projection_threshold(&xi) {
        return DMatrix::identity(n, n);
    }
    let unit = xi / norm;
    DMatrix::identity(n, n) - &unit * unit.transpose()
}

pub fn f_infinity(model: &LagrangianModel, pt: &SecondOrderPoint) -> Result<DVector<f64>> {
    let n = model.dim();
    for v in [&pt.eta, &pt.p, &pt.xx] {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let jet = model.jet(pt.x, &pt.eta, &pt.p)?;
    let p = DVector::from_column_slice(&pt.p);
    let xx = DVector::from_column_slice(&pt.xx);
    let proj = normal_projection(jet.d_p.as_slice());

    let second_order = &jet.d_p * jet.d_p.dot(&xx) + (&proj * (&jet.d_pp * &xx)) * jet.value;
    let transport = &jet.d_p * (jet.d_eta.dot(&p) + jet.d_x);
    let normal = (&proj * (&jet.d_peta * &p + &jet.d_px - &jet.d_eta)) * jet.value;
    let out = second_order + transport + normal;
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite("Aronsson operator".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualNode {
    pub x: f64,
    pub residual: Vec<f64>,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualProfile {
    pub nodes: Vec<ResidualNode>,
    pub max_norm: f64,
}

impl ResidualProfile {
    /// CSV with header `x,res_1,...,res_N,norm`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let dim = self.nodes.first().map_or(0, |n| n.residual.len());
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = std::iter::once("x".to_string())
            .chain((1..=dim).map(|i| format!("res_{i}")))
            .chain(std::iter::once("norm".to_string()))
            .collect();
        w.write_record(&header)?;
        for node in &self.nodes {
            let row: Vec<String> = std::iter::once(node.x)
                .chain(node.residual.iter().copied())
                .chain(std::iter::once(node.norm))
                .map(crate::path::fmt_f64)
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the operator at every interior node with the central slope
/// `(u_{i+1} - u_{i-1}) / 2h` and second difference
/// `(u_{i+1} - 2 u_i + u_{i-1}) / h^2`.
pub fn residual_profile(model: &LagrangianModel, path: &Path) -> Result<ResidualProfile> {
    let grid = path.grid();
    if grid.num_elements() < 4 {
        return Err(Error::TooFewElements { needed: 4, got: grid.num_elements() });
    }
    let h = grid.uniform_spacing().ok_or(Error::NonUniformGrid)?;
    let mut nodes = Vec::with_capacity(grid.num_nodes() - 2);
    for i in 1..grid.num_elements() {
        let (l, c, r) = (path.node(i - 1), path.node(i), path.node(i + 1));
        let pt = SecondOrderPoint {
            x: grid.nodes()[i],
            eta: c.to_vec(),
            p: l.iter().zip(r).map(|(a, b)| (b - a) / (2.0 * h)).collect(),
            xx: l.iter().zip(c).zip(r).map(|((a, b), d)| (d - 2.0 * b + a) / (h * h)).collect(),
        };
        let res = f_infinity(model, &pt)?;
        nodes.push(ResidualNode { x: pt.x, norm: res.norm(), residual: res.iter().copied().collect() });
    }
    let max_norm = nodes.iter().fold(0.0, |m: f64, n| m.max(n.norm));
    Ok(ResidualProfile { nodes, max_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{RadialProfile, VelocityField};
    use crate::path::{interpolate_affine, AffineMap, Grid};

    fn half_square() -> LagrangianModel {
        LagrangianModel::radial(RadialProfile::Identity, VelocityField::constant(vec![0.0])).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(normal_projection(&[1.0, 0.0]), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(normal_projection(&[0.0, 0.0, 0.0]), DMatrix::identity(3, 3));
        let q = normal_projection(&[1.0, 1.0]);
        let expected = DMatrix::identity(2, 2) - DMatrix::from_element(2, 2, 0.5);
        assert!((&q - expected).amax() < 1e-15);
        assert!((&q * &q - &q).amax() < 1e-15);
        assert!((&q * DVector::from_column_slice(&[1.0, 1.0])).amax() < 1e-15);
        // scalar case: the projection vanishes away from zero
        assert_eq!(normal_projection(&[-3.0]), DMatrix::zeros(1, 1));
    }

    #[test]
    fn scalar_half_square() {
        let m = half_square();
        let pt = SecondOrderPoint { x: 0.0, eta: vec![0.0], p: vec![2.0], xx: vec![0.0] };
        assert_eq!(f_infinity(&m, &pt).unwrap().as_slice(), &[0.0]);
        let pt = SecondOrderPoint { xx: vec![1.0], ..pt };
        assert_eq!(f_infinity(&m, &pt).unwrap().as_slice(), &[4.0]);
    }

    /// For `L = |P|^2`, `L_P = 2P`, `L_PP = 2I`: with `X` parallel to `P` the
    /// projected term vanishes and `F = (2P . X) 2P = 4 (P . X) P`.
    #[test]
    fn planar_square_with_parallel_curvature() {
        let m = LagrangianModel::power_norm(2.0, vec![0.0, 0.0]).unwrap();
        let p = [1.5, -0.5];
        let xx = [3.0, -1.0];
        let pt = SecondOrderPoint { x: 0.3, eta: vec![0.1, 0.2], p: p.to_vec(), xx: xx.to_vec() };
        let f = f_infinity(&m, &pt).unwrap();
        let px = p[0] * xx[0] + p[1] * xx[1];
        for k in 0..2 {
            assert!((f[k] - 4.0 * px * p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_examples() {
        let grid = Grid::uniform(0.0, 1.0, 16).unwrap();
        let affine = interpolate_affine(&AffineMap::new(vec![0.5, -1.0], vec![1.0, 2.0]).unwrap(), &grid);
        let m = LagrangianModel::power_norm(2.0, vec![0.0, 0.0]).unwrap();
        let prof = residual_profile(&m, &affine).unwrap();
        assert_eq!(prof.nodes.len(), 15);
        assert!(prof.max_norm < 1e-12);

        let rows: Vec<Vec<f64>> = grid.nodes().iter().map(|x| vec![x * x]).collect();
        let parabola = Path::from_rows(grid.clone(), &rows).unwrap();
        let prof = residual_profile(&half_square(), &parabola).unwrap();
        for n in &prof.nodes {
            assert!((n.residual[0] - 8.0 * n.x * n.x).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_preconditions() {
        let g = Grid::new(vec![0.0, 0.1, 0.3, 0.6, 0.8, 1.0]).unwrap();
        let p = Path::from_rows(g, &vec![vec![0.0]; 6]).unwrap();
        assert!(matches!(residual_profile(&half_square(), &p), Err(Error::NonUniformGrid)));
        let g = Grid::uniform(0.0, 1.0, 3).unwrap();
        let p = Path::from_rows(g, &vec![vec![0.0]; 4]).unwrap();
        assert!(matches!(residual_profile(&half_square(), &p), Err(Error::TooFewElements { .. })));
    }
}
