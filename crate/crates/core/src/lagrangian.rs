//! Lagrangians `L(x, eta, P) >= 0` for paths `u : [a, b] -> R^N`.
//!
//! Three built-in families carry exact first and second derivatives:
//!
//! * [`PowerNorm`]: `|P - V0|^s`, the canonical test model.
//! * [`DataAssimilation`]: `|k(x) - K eta|^2 + |P - V(x, eta)|^2`, the error
//!   functional of a trajectory that should follow the law of motion
//!   `Du = V(x, u)` while matching partial observations `K u = k`.
//! * [`Radial`]: `H(1/2 |P - V(x, eta)|^2)` with `H` strictly increasing.
//!
//! Custom models (a closure, a minimum of shifted norms, or a tabulated radial
//! profile) fall back to central finite differences for their jets.
//!
//! The module also provides sampling-based checks of the two structural
//! hypotheses the existence theory needs: level-convexity in `P` and the
//! two-sided power growth bound. Both can only refute, never prove.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Maximum number of witnesses stored in a check report.
const MAX_WITNESSES: usize = 32;

/// Piecewise-linear signal `x -> R^d` given by samples, held constant outside
/// the sampled range.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSignal {
    xs: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

impl SampledSignal {
    pub fn new(samples: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidModel("sampled signal needs at least one sample".into()));
        };
        let dim = first.1.len();
        let mut xs = Vec::with_capacity(samples.len());
        let mut values = Vec::with_capacity(samples.len() * dim);
        for (x, v) in samples {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if !x.is_finite() || v.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidModel("sampled signal has non-finite entries".into()));
            }
            if let Some(&last) = xs.last() {
                if x <= last {
                    return Err(Error::InvalidModel(
                        "sampled signal abscissae must be strictly increasing".into(),
                    ));
                }
            }
            xs.push(x);
            values.extend(v);
        }
        Ok(Self { xs, values, dim })
    }

    pub fn constant(value: Vec<f64>) -> Self {
        Self { xs: vec![0.0], dim: value.len(), values: value }
    }

    pub fn zero(dim: usize) -> Self {
        Self::constant(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Segment containing `x` (left segment at interior samples), or `None`
    /// outside the sampled range.
    fn segment(&self, x: f64) -> Option<usize> {
        let n = self.xs.len();
        if n < 2 || x < self.xs[0] || x > self.xs[n - 1] {
            return None;
        }
        let idx = self.xs.partition_point(|&xi| xi < x);
        Some(idx.saturating_sub(1).min(n - 2))
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let n = self.xs.len();
        match self.segment(x) {
            Some(e) => {
                let (x0, x1) = (self.xs[e], self.xs[e + 1]);
                let theta = (x - x0) / (x1 - x0);
                self.row(e)
                    .iter()
                    .zip(self.row(e + 1))
                    .map(|(a, b)| (1.0 - theta) * a + theta * b)
                    .collect()
            }
            None if x <= self.xs[0] => self.row(0).to_vec(),
            None => self.row(n - 1).to_vec(),
        }
    }

    /// Derivative of the interpolant; zero outside the sampled range.
    pub fn slope(&self, x: f64) -> Vec<f64> {
        match self.segment(x) {
            Some(e) => {
                let h = self.xs[e + 1] - self.xs[e];
                self.row(e).iter().zip(self.row(e + 1)).map(|(a, b)| (b - a) / h).collect()
            }
            None => vec![0.0; self.dim],
        }
    }
}

/// Velocity field `V(x, eta) = A eta + c(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub a: DMatrix<f64>,
    pub drift: SampledSignal,
}

impl VelocityField {
    pub fn new(a: DMatrix<f64>, drift: SampledSignal) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidModel("velocity matrix A must be square".into()));
        }
        if drift.dim() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: drift.dim() });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("velocity matrix A has non-finite entries".into()));
        }
        Ok(Self { a, drift })
    }

    /// Constant velocity `V`.
    pub fn constant(v: Vec<f64>) -> Self {
        let n = v.len();
        Self { a: DMatrix::zeros(n, n), drift: SampledSignal::constant(v) }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: f64, eta: &[f64]) -> DVector<f64> {
        let mut v = DVector::from_vec(self.drift.eval(x));
        for i in 0..self.dim() {
            for (j, e) in eta.iter().enumerate() {
                v[i] += self.a[(i, j)] * e;
            }
        }
        v
    }
}

/// `|P - V0|^s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerNorm {
    pub exponent: f64,
    pub offset: Vec<f64>,
}

/// `|k(x) - K eta|^2 + |P - V(x, eta)|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataAssimilation {
    /// Observation operator `K`, `M x N`. `M = 0` drops the observation term.
    pub observation: DMatrix<f64>,
    /// Measurements `k(x)` in `R^M`.
    pub measurements: SampledSignal,
    pub velocity: VelocityField,
}

/// Increasing profiles `H` for [`Radial`] models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RadialProfile {
    /// `H(t) = t`
    Identity,
    /// `H(t) = t + beta`
    Shift { beta: f64 },
    /// `H(t) = (1 + t)^gamma - 1`
    Power { gamma: f64 },
}

impl RadialProfile {
    fn derivatives(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            RadialProfile::Identity => (t, 1.0, 0.0),
            RadialProfile::Shift { beta } => (t + beta, 1.0, 0.0),
            RadialProfile::Power { gamma } => {
                let base = 1.0 + t;
                (
                    base.powf(gamma) - 1.0,
                    gamma * base.powf(gamma - 1.0),
                    gamma * (gamma - 1.0) * base.powf(gamma - 2.0),
                )
            }
        }
    }
}

/// `H(1/2 |P - V(x, eta)|^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Radial {
    pub profile: RadialProfile,
    pub velocity: VelocityField,
}

pub type CustomFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type EnvelopeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Models without closed-form jets.
#[derive(Clone)]
pub enum Custom {
    /// `min_j |P - c_j|^s`, level-convex only when there is a single centre.
    MinOfNorms { centers: Vec<Vec<f64>>, exponent: f64 },
    /// `g(|P - V0|)` with `g` piecewise linear through `(r, g(r))` pairs and
    /// extended linearly beyond the last pair.
    Tabulated { offset: Vec<f64>, table: Vec<(f64, f64)> },
    Function { dim: usize, f: CustomFn },
}

impl fmt::Debug for Custom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Custom::MinOfNorms { centers, exponent } => f
                .debug_struct("MinOfNorms")
                .field("centers", centers)
                .field("exponent", exponent)
                .finish(),
            Custom::Tabulated { offset, table } => {
                f.debug_struct("Tabulated").field("offset", offset).field("table", table).finish()
            }
            Custom::Function { dim, .. } => f.debug_struct("Function").field("dim", dim).finish(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum ModelKind {
    PowerNorm(PowerNorm),
    DataAssimilation(DataAssimilation),
    Radial(Radial),
    Custom(Custom),
}

/// Upper envelope `h(x, eta)` of the growth bound.
#[derive(Clone)]
pub enum Envelope {
    Constant(f64),
    Function(EnvelopeFn),
}

impl Envelope {
    fn eval(&self, x: f64, eta: &[f64]) -> f64 {
        match self {
            Envelope::Constant(h) => *h,
            Envelope::Function(f) => f(x, eta),
        }
    }
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Envelope::Constant(h) => write!(f, "Constant({h})"),
            Envelope::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Constants of the bound `C1 |P|^q - C2 <= L(x, eta, P) <= h(x, eta) |P|^r + C3`.
#[derive(Clone, Debug)]
pub struct GrowthParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub q: f64,
    pub r: f64,
    pub h: Envelope,
}

impl GrowthParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.c1, self.c2, self.c3, self.q, self.r].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidModel("growth constants must be finite".into()));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 || self.c3 < 0.0 {
            return Err(Error::InvalidModel("growth constants C1, C2, C3 must be nonnegative".into()));
        }
        if !(self.q > 0.0 && self.q <= self.r) {
            return Err(Error::InvalidModel("growth exponents need 0 < q <= r".into()));
        }
        if let Envelope::Constant(h) = self.h {
            if !(h.is_finite() && h >= 0.0) {
                return Err(Error::InvalidModel("growth envelope h must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Value and first partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstJet {
    pub value: f64,
    pub d_p: DVector<f64>,
    pub d_eta: DVector<f64>,
    pub d_x: f64,
}

/// Value, first and second partial derivatives entering the Aronsson system.
///
/// Mixed blocks are indexed `d_peta[(i, j)] = d^2 L / dP_i d eta_j` and
/// `d_px[i] = d^2 L / dP_i dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d_p: DVector<f64>,
    pub d_eta: DVector<f64>,
    pub d_x: f64,
    pub d_pp: DMatrix<f64>,
    pub d_peta: DMatrix<f64>,
    pub d_px: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct LagrangianModel {
    kind: ModelKind,
    dim: usize,
    growth: Option<GrowthParams>,
}

impl LagrangianModel {
    pub fn power_norm(exponent: f64, offset: Vec<f64>) -> Result<Self> {
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidModel("power_norm exponent must be positive".into()));
        }
        check_vector(&offset, "power_norm offset")?;
        let dim = nonzero_dim(offset.len())?;
        Ok(Self { kind: ModelKind::PowerNorm(PowerNorm { exponent, offset }), dim, growth: None })
    }

    pub fn data_assimilation(
        observation: DMatrix<f64>,
        measurements: SampledSignal,
        velocity: VelocityField,
    ) -> Result<Self> {
        let dim = nonzero_dim(velocity.dim())?;
        if observation.nrows() > 0 && observation.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: observation.ncols() });
        }
        if measurements.dim() != observation.nrows() {
            return Err(Error::DimensionMismatch {
                expected: observation.nrows(),
                got: measurements.dim(),
            });
        }
        if observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("observation operator has non-finite entries".into()));
        }
        let kind = ModelKind::DataAssimilation(DataAssimilation {
            observation: if observation.nrows() == 0 { DMatrix::zeros(0, dim) } else { observation },
            measurements,
            velocity,
        });
        Ok(Self { kind, dim, growth: None })
    }

    /// `|P - V|^2` with constant `V`: the data-assimilation model with no
    /// observations and a constant law of motion.
    pub fn constant_drift(v: Vec<f64>) -> Result<Self> {
        check_vector(&v, "drift")?;
        Self::data_assimilation(DMatrix::zeros(0, v.len()), SampledSignal::zero(0), VelocityField::constant(v))
    }

    pub fn radial(profile: RadialProfile, velocity: VelocityField) -> Result<Self> {
        match profile {
            RadialProfile::Shift { beta } if !(beta.is_finite() && beta >= 0.0) => {
                return Err(Error::InvalidModel("radial shift beta must be nonnegative".into()));
            }
            RadialProfile::Power { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                return Err(Error::InvalidModel("radial power gamma must be positive".into()));
            }
            _ => {}
        }
        let dim = nonzero_dim(velocity.dim())?;
        Ok(Self { kind: ModelKind::Radial(Radial { profile, velocity }), dim, growth: None })
    }

    pub fn min_of_norms(centers: Vec<Vec<f64>>, exponent: f64) -> Result<Self> {
        let Some(first) = centers.first() else {
            return Err(Error::InvalidModel("min_of_norms needs at least one centre".into()));
        };
        let dim = nonzero_dim(first.len())?;
        for c in &centers {
            if c.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.len() });
            }
            check_vector(c, "min_of_norms centre")?;
        }
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidModel("min_of_norms exponent must be positive".into()));
        }
        Ok(Self { kind: ModelKind::Custom(Custom::MinOfNorms { centers, exponent }), dim, growth: None })
    }

    pub fn tabulated(offset: Vec<f64>, table: Vec<(f64, f64)>) -> Result<Self> {
        check_vector(&offset, "tabulated offset")?;
        let dim = nonzero_dim(offset.len())?;
        match table.first() {
            Some(&(0.0, _)) => {}
            _ => return Err(Error::InvalidModel("tabulated profile must start at r = 0".into())),
        }
        for w in table.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidModel("tabulated radii must be strictly increasing".into()));
            }
        }
        if table.iter().any(|(r, g)| !r.is_finite() || !g.is_finite()) {
            return Err(Error::InvalidModel("tabulated profile has non-finite entries".into()));
        }
        Ok(Self { kind: ModelKind::Custom(Custom::Tabulated { offset, table }), dim, growth: None })
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        let dim = nonzero_dim(dim)?;
        Ok(Self { kind: ModelKind::Custom(Custom::Function { dim, f: Arc::new(f) }), dim, growth: None })
    }

    pub fn with_growth(mut self, growth: GrowthParams) -> Result<Self> {
        growth.validate()?;
        self.growth = Some(growth);
        Ok(self)
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn growth(&self) -> Option<&GrowthParams> {
        self.growth.as_ref()
    }

    /// Whether exact first and second derivatives are available.
    pub fn analytic_jets(&self) -> bool {
        !matches!(self.kind, ModelKind::Custom(_))
    }

    fn check_dims(&self, eta: &[f64], p: &[f64]) -> Result<()> {
        for v in [eta, p] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
            }
        }
        Ok(())
    }

    /// Evaluates `L(x, eta, P)`.
    pub fn eval(&self, x: f64, eta: &[f64], p: &[f64]) -> Result<f64> {
        self.check_dims(eta, p)?;
        let value = self.raw_eval(x, eta, p);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("Lagrangian at x = {x}")));
        }
        if value < 0.0 {
            return Err(Error::NegativeLagrangian { value, x });
        }
        Ok(value)
    }

    fn raw_eval(&self, x: f64, eta: &[f64], p: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::PowerNorm(m) => {
                let sq = dist_sq(p, &m.offset);
                if m.exponent == 2.0 {
                    sq
                } else {
                    sq.sqrt().powf(m.exponent)
                }
            }
            ModelKind::DataAssimilation(m) => {
                let (r, w) = m.residuals(x, eta, p);
                r.norm_squared() + w.norm_squared()
            }
            ModelKind::Radial(m) => {
                let v = m.velocity.eval(x, eta);
                let t = 0.5 * dist_sq(p, v.as_slice());
                m.profile.derivatives(t).0
            }
            ModelKind::Custom(Custom::MinOfNorms { centers, exponent }) => centers
                .iter()
                .map(|c| dist_sq(p, c).sqrt().powf(*exponent))
                .fold(f64::INFINITY, f64::min),
            ModelKind::Custom(Custom::Tabulated { offset, table }) => {
                tabulated_profile(table, dist_sq(p, offset).sqrt())
            }
            ModelKind::Custom(Custom::Function { f, .. }) => f(x, eta, p),
        }
    }

    /// Value and first derivatives; exact for built-in models.
    pub fn first_jet(&self, x: f64, eta: &[f64], p: &[f64]) -> Result<FirstJet> {
        self.check_dims(eta, p)?;
        let jet = match &self.kind {
            ModelKind::PowerNorm(m) => {
                let w = DVector::from_iterator(self.dim, p.iter().zip(&m.offset).map(|(a, b)| a - b));
                let rho = w.norm();
                let d_p = if rho > 0.0 {
                    w * (m.exponent * rho.powf(m.exponent - 2.0))
                } else {
                    DVector::zeros(self.dim)
                };
                FirstJet { value: self.eval(x, eta, p)?, d_p, d_eta: DVector::zeros(self.dim), d_x: 0.0 }
            }
            ModelKind::DataAssimilation(m) => {
                let (r, w) = m.residuals(x, eta, p);
                let dk = DVector::from_vec(m.measurements.slope(x));
                let dc = DVector::from_vec(m.velocity.drift.slope(x));
                let d_eta = -(m.observation.transpose() * &r) * 2.0 - (m.velocity.a.transpose() * &w) * 2.0;
                FirstJet {
                    value: r.norm_squared() + w.norm_squared(),
                    d_x: 2.0 * r.dot(&dk) - 2.0 * w.dot(&dc),
                    d_p: w * 2.0,
                    d_eta,
                }
            }
            ModelKind::Radial(m) => {
                let w = DVector::from_column_slice(p) - m.velocity.eval(x, eta);
                let (value, h1, _) = m.profile.derivatives(0.5 * w.norm_squared());
                let dc = DVector::from_vec(m.velocity.drift.slope(x));
                FirstJet {
                    value,
                    d_eta: -(m.velocity.a.transpose() * &w) * h1,
                    d_x: -h1 * w.dot(&dc),
                    d_p: w * h1,
                }
            }
            ModelKind::Custom(_) => return self.fd_first_jet(x, eta, p),
        };
        check_first_jet(&jet)?;
        if jet.value < 0.0 {
            return Err(Error::NegativeLagrangian { value: jet.value, x });
        }
        Ok(jet)
    }

    /// Full jet; exact for built-in models, finite differences otherwise.
    pub fn jet(&self, x: f64, eta: &[f64], p: &[f64]) -> Result<Jet> {
        self.check_dims(eta, p)?;
        let n = self.dim;
        let first = self.first_jet(x, eta, p)?;
        let jet = match &self.kind {
            ModelKind::PowerNorm(m) => {
                let w = DVector::from_iterator(n, p.iter().zip(&m.offset).map(|(a, b)| a - b));
                let rho = w.norm();
                let s = m.exponent;
                let d_pp = if rho > 0.0 {
                    DMatrix::identity(n, n) * (s * rho.powf(s - 2.0))
                        + (&w * w.transpose()) * (s * (s - 2.0) * rho.powf(s - 4.0))
                } else if s == 2.0 {
                    DMatrix::identity(n, n) * 2.0
                } else if s > 2.0 {
                    DMatrix::zeros(n, n)
                } else {
                    return Err(Error::NonFinite(format!("second derivative of |P - V0|^{s} at P = V0")));
                };
                Jet {
                    value: first.value,
                    d_p: first.d_p,
                    d_eta: first.d_eta,
                    d_x: first.d_x,
                    d_pp,
                    d_peta: DMatrix::zeros(n, n),
                    d_px: DVector::zeros(n),
                }
            }
            ModelKind::DataAssimilation(m) => Jet {
                value: first.value,
                d_p: first.d_p,
                d_eta: first.d_eta,
                d_x: first.d_x,
                d_pp: DMatrix::identity(n, n) * 2.0,
                d_peta: &m.velocity.a * -2.0,
                d_px: DVector::from_vec(m.velocity.drift.slope(x)) * -2.0,
            },
            ModelKind::Radial(m) => {
                let w = DVector::from_column_slice(p) - m.velocity.eval(x, eta);
                let (_, h1, h2) = m.profile.derivatives(0.5 * w.norm_squared());
                let dc = DVector::from_vec(m.velocity.drift.slope(x));
                let atw = m.velocity.a.transpose() * &w;
                Jet {
                    value: first.value,
                    d_p: first.d_p,
                    d_eta: first.d_eta,
                    d_x: first.d_x,
                    d_pp: (&w * w.transpose()) * h2 + DMatrix::identity(n, n) * h1,
                    d_peta: (&w * atw.transpose()) * -h2 - &m.velocity.a * h1,
                    d_px: &w * (-h2 * w.dot(&dc)) - dc * h1,
                }
            }
            ModelKind::Custom(_) => return self.fd_jet(x, eta, p),
        };
        check_jet(&jet)?;
        Ok(jet)
    }

    /// First derivatives by central differences with step
    /// `eps^(1/3) (1 + |arg|)` per coordinate.
    pub fn fd_first_jet(&self, x: f64, eta: &[f64], p: &[f64]) -> Result<FirstJet> {
        let n = self.dim;
        let value = self.eval(x, eta, p)?;
        let f = |x: f64, eta: &[f64], p: &[f64]| self.eval(x, eta, p);
        let mut d_p = DVector::zeros(n);
        let mut d_eta = DVector::zeros(n);
        let mut pp = p.to_vec();
        let mut ee = eta.to_vec();
        for i in 0..n {
            let h = step_first(p[i]);
            pp[i] = p[i] + h;
            let fp = f(x, eta, &pp)?;
            pp[i] = p[i] - h;
            let fm = f(x, eta, &pp)?;
            pp[i] = p[i];
            d_p[i] = (fp - fm) / (2.0 * h);

            let h = step_first(eta[i]);
            ee[i] = eta[i] + h;
            let fp = f(x, &ee, p)?;
            ee[i] = eta[i] - h;
            let fm = f(x, &ee, p)?;
            ee[i] = eta[i];
            d_eta[i] = (fp - fm) / (2.0 * h);
        }
        let h = step_first(x);
        let d_x = (f(x + h, eta, p)? - f(x - h, eta, p)?) / (2.0 * h);
        let jet = FirstJet { value, d_p, d_eta, d_x };
        check_first_jet(&jet)?;
        Ok(jet)
    }

    /// Full jet by central differences. Second derivatives use the step
    /// `eps^(1/4) (1 + |arg|)`; `d_pp` is symmetrised as `(M + M^T) / 2`.
    pub fn fd_jet(&self, x: f64, eta: &[f64], p: &[f64]) -> Result<Jet> {
        let n = self.dim;
        let first = self.fd_first_jet(x, eta, p)?;
        // Arguments are packed as z = (P, eta, x).
        let mut z: Vec<f64> = p.iter().chain(eta).copied().chain(std::iter::once(x)).collect();
        let base = z.clone();
        let f = |z: &[f64]| self.eval(z[2 * n], &z[n..2 * n], &z[..n]);
        let steps: Vec<f64> = base.iter().map(|&v| step_second(v)).collect();
        let mut second = |i: usize, j: usize| -> Result<f64> {
            let (hi, hj) = (steps[i], steps[j]);
            let mut eval_at = |si: f64, sj: f64| {
                z.copy_from_slice(&base);
                z[i] += si * hi;
                z[j] += sj * hj;
                f(&z)
            };
            let v = if i == j {
                (eval_at(1.0, 1.0)? - 2.0 * f(&base)? + eval_at(-1.0, -1.0)?) / (4.0 * hi * hi)
            } else {
                (eval_at(1.0, 1.0)? - eval_at(1.0, -1.0)? - eval_at(-1.0, 1.0)? + eval_at(-1.0, -1.0)?)
                    / (4.0 * hi * hj)
            };
            Ok(v)
        };
        let mut d_pp = DMatrix::zeros(n, n);
        let mut d_peta = DMatrix::zeros(n, n);
        let mut d_px = DVector::zeros(n);
        for i in 0..n {
            for j in 0..n {
                d_pp[(i, j)] = second(i, j)?;
                d_peta[(i, j)] = second(i, n + j)?;
            }
            d_px[i] = second(i, 2 * n)?;
        }
        let d_pp = (&d_pp + d_pp.transpose()) * 0.5;
        let jet = Jet {
            value: first.value,
            d_p: first.d_p,
            d_eta: first.d_eta,
            d_x: first.d_x,
            d_pp,
            d_peta,
            d_px,
        };
        check_jet(&jet)?;
        Ok(jet)
    }
}

impl DataAssimilation {
    /// `(k(x) - K eta, P - V(x, eta))`.
    pub fn residuals(&self, x: f64, eta: &[f64], p: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let k = DVector::from_vec(self.measurements.eval(x));
        let r = k - &self.observation * DVector::from_column_slice(eta);
        let w = DVector::from_column_slice(p) - self.velocity.eval(x, eta);
        (r, w)
    }
}

fn tabulated_profile(table: &[(f64, f64)], r: f64) -> f64 {
    if table.len() == 1 {
        return table[0].1;
    }
    let idx = table.partition_point(|&(ri, _)| ri < r).clamp(1, table.len() - 1);
    let (r0, g0) = table[idx - 1];
    let (r1, g1) = table[idx];
    g0 + (r - r0) * (g1 - g0) / (r1 - r0)
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn step_first(v: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + v.abs())
}

fn step_second(v: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + v.abs())
}

fn nonzero_dim(n: usize) -> Result<usize> {
    if n == 0 {
        Err(Error::InvalidModel("dimension N must be at least 1".into()))
    } else {
        Ok(n)
    }
}

fn check_vector(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{what} has non-finite entries")))
    }
}

fn check_first_jet(j: &FirstJet) -> Result<()> {
    let finite = j.value.is_finite()
        && j.d_x.is_finite()
        && j.d_p.iter().all(|v| v.is_finite())
        && j.d_eta.iter().all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite("first-order jet".into()))
    }
}

fn check_jet(j: &Jet) -> Result<()> {
    let finite = j.value.is_finite()
        && j.d_x.is_finite()
        && j.d_p.iter().chain(j.d_eta.iter()).chain(j.d_px.iter()).all(|v| v.is_finite())
        && j.d_pp.iter().chain(j.d_peta.iter()).all(|v| v.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite("jet".into()))
    }
}

/// Sampling box and budget for the hypothesis checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlan {
    pub num_triples: usize,
    pub x_range: (f64, f64),
    /// Per-coordinate bounds for `eta`.
    pub eta_range: (f64, f64),
    /// Per-coordinate bounds for `P`.
    pub p_range: (f64, f64),
    /// Number of equally spaced interior `lambda` values tested on every
    /// segment, on top of one random `lambda`.
    pub t_levels: usize,
    pub seed: u64,
}

impl SamplePlan {
    pub fn new(num_triples: usize, x_range: (f64, f64), box_half_width: f64, seed: u64) -> Self {
        Self {
            num_triples,
            x_range,
            eta_range: (-box_half_width, box_half_width),
            p_range: (-box_half_width, box_half_width),
            t_levels: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_triples == 0 {
            return Err(Error::InvalidOptions("sample plan needs num_triples >= 1".into()));
        }
        for (name, (lo, hi)) in [("x", self.x_range), ("eta", self.eta_range), ("P", self.p_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidOptions(format!("sample box for {name} must be finite with lo <= hi")));
            }
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn sample_vec(rng: &mut ChaCha8Rng, range: (f64, f64), n: usize) -> Vec<f64> {
    (0..n).map(|_| sample_range(rng, range)).collect()
}

/// A sampled violation of level-convexity along the segment `[p1, p2]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelConvexityWitness {
    pub x: f64,
    pub eta: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub lambda: f64,
    /// `L(x, eta, lambda p1 + (1 - lambda) p2)`
    pub combined: f64,
    /// `max(L(x, eta, p1), L(x, eta, p2))`
    pub endpoint_max: f64,
}

impl LevelConvexityWitness {
    pub fn excess(&self) -> f64 {
        self.combined - self.endpoint_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelConvexityReport {
    pub pass: bool,
    pub samples: usize,
    pub violations: usize,
    /// At most 32 stored witnesses, in sampling order.
    pub witnesses: Vec<LevelConvexityWitness>,
}

/// Default level-convexity tolerance at a given value scale.
pub fn level_convexity_tolerance(scale: f64) -> f64 {
    1e-9 * (1.0 + scale.abs())
}

/// Tests one segment. Returns a witness when
/// `L(lambda p1 + (1 - lambda) p2) > max(L(p1), L(p2)) + tol`.
pub fn level_convexity_violation(
    model: &LagrangianModel,
    x: f64,
    eta: &[f64],
    p1: &[f64],
    p2: &[f64],
    lambda: f64,
) -> Result<Option<LevelConvexityWitness>> {
    let endpoint_max = model.eval(x, eta, p1)?.max(model.eval(x, eta, p2)?);
    let mid: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
    let combined = model.eval(x, eta, &mid)?;
    if combined > endpoint_max + level_convexity_tolerance(endpoint_max) {
        Ok(Some(LevelConvexityWitness {
            x,
            eta: eta.to_vec(),
            p1: p1.to_vec(),
            p2: p2.to_vec(),
            lambda,
            combined,
            endpoint_max,
        }))
    } else {
        Ok(None)
    }
}

/// Samples segments `[P1, P2]` at random `(x, eta)` and looks for points whose
/// value exceeds the larger endpoint value. Passing is evidence, not proof.
pub fn check_level_convexity(model: &LagrangianModel, plan: &SamplePlan) -> Result<LevelConvexityReport> {
    plan.validate()?;
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut violations = 0;
    let mut witnesses = Vec::new();
    let mut samples = 0;
    for _ in 0..plan.num_triples {
        let x = sample_range(&mut rng, plan.x_range);
        let eta = sample_vec(&mut rng, plan.eta_range, n);
        let p1 = sample_vec(&mut rng, plan.p_range, n);
        let p2 = sample_vec(&mut rng, plan.p_range, n);
        let random_lambda: f64 = rng.gen();
        let levels = plan.t_levels;
        let lambdas = std::iter::once(random_lambda)
            .chain((1..=levels).map(|k| k as f64 / (levels + 1) as f64));
        for lambda in lambdas {
            samples += 1;
            if let Some(w) = level_convexity_violation(model, x, &eta, &p1, &p2, lambda)? {
                violations += 1;
                if witnesses.len() < MAX_WITNESSES {
                    witnesses.push(w);
                }
            }
        }
    }
    Ok(LevelConvexityReport { pass: violations == 0, samples, violations, witnesses })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthSide {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthWitness {
    pub side: GrowthSide,
    pub x: f64,
    pub eta: Vec<f64>,
    pub p: Vec<f64>,
    pub value: f64,
    /// Slack of the violated inequality (negative).
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthReport {
    pub pass: bool,
    pub samples: usize,
    /// Minimal observed `L - (C1 |P|^q - C2)`.
    pub lower_margin: f64,
    /// Minimal observed `h |P|^r + C3 - L`.
    pub upper_margin: f64,
    pub violations: usize,
    pub witnesses: Vec<GrowthWitness>,
}

/// Samples `(x, eta, P)` in the plan's box and checks both growth bounds.
pub fn check_growth_bounds(
    model: &LagrangianModel,
    growth: &GrowthParams,
    plan: &SamplePlan,
) -> Result<GrowthReport> {
    growth.validate()?;
    plan.validate()?;
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut lower_margin = f64::INFINITY;
    let mut upper_margin = f64::INFINITY;
    let mut violations = 0;
    let mut witnesses = Vec::new();
    for _ in 0..plan.num_triples {
        let x = sample_range(&mut rng, plan.x_range);
        let eta = sample_vec(&mut rng, plan.eta_range, n);
        let p = sample_vec(&mut rng, plan.p_range, n);
        let value = model.eval(x, &eta, &p)?;
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lower = value - (growth.c1 * norm.powf(growth.q) - growth.c2);
        let upper = growth.h.eval(x, &eta) * norm.powf(growth.r) + growth.c3 - value;
        lower_margin = lower_margin.min(lower);
        upper_margin = upper_margin.min(upper);
        let tol = level_convexity_tolerance(value);
        for (side, margin) in [(GrowthSide::Lower, lower), (GrowthSide::Upper, upper)] {
            if margin < -tol {
                violations += 1;
                if witnesses.len() < MAX_WITNESSES {
                    witnesses.push(GrowthWitness { side, x, eta: eta.clone(), p: p.clone(), value, margin });
                }
            }
        }
    }
    Ok(GrowthReport {
        pass: violations == 0,
        samples: plan.num_triples,
        lower_margin,
        upper_margin,
        violations,
        witnesses,
    })
}
