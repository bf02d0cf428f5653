//! JSON run configuration.
//!
//! ```json
//! {
//!   "lagrangian": { "kind": "power_norm", "exponent": 2.0 },
//!   "domain": [0.0, 1.0],
//!   "N": 2,
//!   "grid_points": 65,
//!   "boundary": { "b0": [0.0, 0.0], "b1": [1.0, 0.0] },
//!   "seed": 7,
//!   "output_dir": "out"
//! }
//! ```
//!
//! Unknown fields are rejected everywhere. Validation errors are reported as
//! `<field>: <problem>`.

use std::fmt;
use std::path::{Path as FsPath, PathBuf};

use serde::Deserialize;
use supmin_core::audit::AuditConfig;
use supmin_core::lagrangian::{Envelope, GrowthParams, RadialProfile, SamplePlan, SampledSignal, VelocityField};
use supmin_core::nalgebra::DMatrix;
use supmin_core::solver::{MultiStart, SolveOptions, SweepSchedule};
use supmin_core::{AffineMap, Grid, LagrangianModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

/// A vector-valued signal: either a constant array or `{"samples": [[x, [v...]], ...]}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SignalSpec {
    Constant(Vec<f64>),
    Sampled { samples: Vec<(f64, Vec<f64>)> },
}

impl SignalSpec {
    fn build(&self, field: &str) -> Result<SampledSignal, ConfigError> {
        match self {
            SignalSpec::Constant(v) => Ok(SampledSignal::constant(v.clone())),
            SignalSpec::Sampled { samples } => SampledSignal::new(samples.clone()).map_err(|e| invalid(field, e)),
        }
    }
}

/// `V(x, eta) = A eta + drift(x)`; `A` defaults to zero.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySpec {
    #[serde(default)]
    pub a: Option<Vec<Vec<f64>>>,
    pub drift: SignalSpec,
}

fn matrix(rows: &[Vec<f64>], cols: usize, field: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(field, format!("every row must have {cols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl VelocitySpec {
    fn build(&self, n: usize, field: &str) -> Result<VelocityField, ConfigError> {
        let drift = self.drift.build(&format!("{field}.drift"))?;
        let a = match &self.a {
            Some(rows) => matrix(rows, n, &format!("{field}.a"))?,
            None => DMatrix::zeros(n, n),
        };
        VelocityField::new(a, drift).map_err(|e| invalid(field, e))
    }
}

/// Growth bound constants with a constant envelope `h`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSpec {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub q: f64,
    pub r: f64,
    pub h: f64,
}

impl GrowthSpec {
    fn build(&self) -> Result<GrowthParams, ConfigError> {
        let params = GrowthParams { c1: self.c1, c2: self.c2, c3: self.c3, q: self.q, r: self.r, h: Envelope::Constant(self.h) };
        params.validate().map_err(|e| invalid("lagrangian.growth", e))?;
        if !(self.h.is_finite() && self.h >= 0.0) {
            return Err(invalid("lagrangian.growth", "h must be nonnegative"));
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNormSpec {
    pub exponent: f64,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    #[serde(default)]
    pub growth: Option<GrowthSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataAssimilationSpec {
    /// Rows of `K`; omitted for no observations.
    #[serde(default)]
    pub observation: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub measurements: Option<SignalSpec>,
    pub velocity: VelocitySpec,
    #[serde(default)]
    pub growth: Option<GrowthSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSpec {
    pub profile: ProfileSpec,
    pub velocity: VelocitySpec,
    #[serde(default)]
    pub growth: Option<GrowthSpec>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Identity,
    Shift { beta: f64 },
    Power { gamma: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CustomSpec {
    MinOfNorms(MinOfNormsSpec),
    Tabulated(TabulatedSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinOfNormsSpec {
    pub centers: Vec<Vec<f64>>,
    pub exponent: f64,
    #[serde(default)]
    pub growth: Option<GrowthSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedSpec {
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    /// `[[r, g(r)], ...]` starting at `r = 0`.
    pub table: Vec<(f64, f64)>,
    #[serde(default)]
    pub growth: Option<GrowthSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LagrangianSpec {
    PowerNorm(PowerNormSpec),
    DataAssimilation(DataAssimilationSpec),
    Radial(RadialSpec),
    Custom(CustomSpec),
}

fn dim_check(v: &[f64], n: usize, field: &str) -> Result<(), ConfigError> {
    if v.len() != n {
        return Err(invalid(field, format!("length must equal N = {n} (got {})", v.len())));
    }
    Ok(())
}

impl LagrangianSpec {
    fn growth(&self) -> Option<&GrowthSpec> {
        match self {
            LagrangianSpec::PowerNorm(s) => s.growth.as_ref(),
            LagrangianSpec::DataAssimilation(s) => s.growth.as_ref(),
            LagrangianSpec::Radial(s) => s.growth.as_ref(),
            LagrangianSpec::Custom(CustomSpec::MinOfNorms(s)) => s.growth.as_ref(),
            LagrangianSpec::Custom(CustomSpec::Tabulated(s)) => s.growth.as_ref(),
        }
    }

    pub fn build(&self, n: usize) -> Result<LagrangianModel, ConfigError> {
        let wrap = |e: supmin_core::Error| invalid("lagrangian", e);
        let model = match self {
            LagrangianSpec::PowerNorm(s) => {
                let offset = s.offset.clone().unwrap_or_else(|| vec![0.0; n]);
                dim_check(&offset, n, "lagrangian.offset")?;
                LagrangianModel::power_norm(s.exponent, offset).map_err(wrap)?
            }
            LagrangianSpec::DataAssimilation(s) => {
                let velocity = s.velocity.build(n, "lagrangian.velocity")?;
                let observation = match &s.observation {
                    Some(rows) => matrix(rows, n, "lagrangian.observation")?,
                    None => DMatrix::zeros(0, n),
                };
                let measurements = match &s.measurements {
                    Some(m) => m.build("lagrangian.measurements")?,
                    None => SampledSignal::zero(observation.nrows()),
                };
                LagrangianModel::data_assimilation(observation, measurements, velocity).map_err(wrap)?
            }
            LagrangianSpec::Radial(s) => {
                let profile = match s.profile {
                    ProfileSpec::Identity => RadialProfile::Identity,
                    ProfileSpec::Shift { beta } => RadialProfile::Shift { beta },
                    ProfileSpec::Power { gamma } => RadialProfile::Power { gamma },
                };
                LagrangianModel::radial(profile, s.velocity.build(n, "lagrangian.velocity")?).map_err(wrap)?
            }
            LagrangianSpec::Custom(CustomSpec::MinOfNorms(s)) => {
                LagrangianModel::min_of_norms(s.centers.clone(), s.exponent).map_err(wrap)?
            }
            LagrangianSpec::Custom(CustomSpec::Tabulated(s)) => {
                let offset = s.offset.clone().unwrap_or_else(|| vec![0.0; n]);
                dim_check(&offset, n, "lagrangian.offset")?;
                LagrangianModel::tabulated(offset, s.table.clone()).map_err(wrap)?
            }
        };
        if model.dim() != n {
            return Err(invalid("lagrangian", format!("model dimension {} does not match N = {n}", model.dim())));
        }
        match self.growth() {
            Some(g) => model.with_growth(g.build()?).map_err(|e| invalid("lagrangian.growth", e)),
            None => Ok(model),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
}

/// Sampling box for the hypothesis checks; `x` ranges over the domain.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSpec {
    pub num_triples: usize,
    pub box_half_width: f64,
    pub t_levels: usize,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self { num_triples: 1000, box_half_width: 2.0, t_levels: 3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiStartSpec {
    pub starts: usize,
    pub scale: f64,
}

impl Default for MultiStartSpec {
    fn default() -> Self {
        let d = MultiStart::default();
        Self { starts: d.starts, scale: d.scale }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lagrangian: LagrangianSpec,
    pub domain: (f64, f64),
    #[serde(rename = "N")]
    pub n: usize,
    pub grid_points: usize,
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub schedule: SweepSchedule,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub check: CheckSpec,
    #[serde(default)]
    pub multistart: MultiStartSpec,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Everything a run needs, built from a validated [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: LagrangianModel,
    pub grid: Grid,
    pub boundary: AffineMap,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &FsPath) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid("domain", "a < b required"));
        }
        if self.n < 1 {
            return Err(invalid("N", "N >= 1 required"));
        }
        if self.grid_points < 3 {
            return Err(invalid("grid_points", "grid_points >= 3 required"));
        }
        dim_check(&self.boundary.b0, self.n, "boundary.b0")?;
        dim_check(&self.boundary.b1, self.n, "boundary.b1")?;
        if self.boundary.b0.iter().chain(&self.boundary.b1).any(|v| !v.is_finite()) {
            return Err(invalid("boundary", "entries must be finite"));
        }
        self.schedule.validate().map_err(|e| invalid("schedule", e))?;
        self.solve.validate().map_err(|e| invalid("solve", e))?;
        self.audit.validate().map_err(|e| invalid("audit", e))?;
        self.plan().validate().map_err(|e| invalid("check", e))?;
        if self.multistart.starts < 1 || self.multistart.scale.is_nan() || self.multistart.scale < 0.0 {
            return Err(invalid("multistart", "starts >= 1 and scale >= 0 required"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir", "must not be empty"));
        }
        self.lagrangian.build(self.n)?;
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem, ConfigError> {
        let model = self.lagrangian.build(self.n)?;
        let grid = Grid::uniform(self.domain.0, self.domain.1, self.grid_points - 1).map_err(|e| invalid("grid_points", e))?;
        let boundary =
            AffineMap::new(self.boundary.b0.clone(), self.boundary.b1.clone()).map_err(|e| invalid("boundary", e))?;
        Ok(Problem { model, grid, boundary })
    }

    pub fn audit_config(&self) -> AuditConfig {
        AuditConfig { seed: self.seed, ..self.audit.clone() }
    }

    pub fn multistart(&self) -> MultiStart {
        MultiStart { starts: self.multistart.starts, scale: self.multistart.scale, seed: self.seed }
    }

    pub fn plan(&self) -> SamplePlan {
        let mut plan = SamplePlan::new(self.check.num_triples, self.domain, self.check.box_half_width, self.seed);
        plan.t_levels = self.check.t_levels;
        plan
    }
}
