//! Declarative experiment descriptions, the built-in catalog, and the runner
//! that turns a scenario into a trajectory table and an invariant summary.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::GeomError;
use crate::geodesics::euclidean::{charge_monitor, rn_rolling_flow, RnRollingState, RnRun};
use crate::geodesics::planar::{
    memory_term_sup, pendulum_residual, reduce_2d, Pendulum2DState, PendulumConstants, ReducedRun, RHO_FLOOR,
};
use crate::geodesics::{fmt, integrate_geodesic, GeodesicRun, RollingGeodesicState};
use crate::geom::{gauss_curvature, ChartMetric, ChartSpec, FnCurve};
use crate::ode::{integrate, FnSystem, IntegrateOptions};
use crate::rolling::{develop, from_row_major, noslip_notwist_residual, row_major, RollingConfiguration, RollingPath};
use crate::shooting::{endpoint_map, solve, InitialGuess, ShootingProblem, ShootingResult, SolverControls};
use crate::submersion::{
    compare_projection, CotangentState, FrameBundleTestbed, HeisenbergTestbed, ProjectionReport, ProjectionSample,
    RiemannianHamiltonian, SubmersionTestbed,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Parse(_) => 2,
            ScenarioError::Validation(_) => 3,
            ScenarioError::Numerical(_) => 4,
            ScenarioError::Io(_) => 1,
        }
    }
}

fn invalid(e: GeomError) -> ScenarioError {
    ScenarioError::Validation(e.to_string())
}

fn numerical(e: GeomError) -> ScenarioError {
    ScenarioError::Numerical(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    VerifyLift,
    Develop,
    Geodesic,
    #[serde(rename = "pendulum-2d")]
    Pendulum2d,
    RnRoll,
    Bvp,
}

impl ScenarioKind {
    pub fn id(self) -> &'static str {
        match self {
            ScenarioKind::VerifyLift => "verify-lift",
            ScenarioKind::Develop => "develop",
            ScenarioKind::Geodesic => "geodesic",
            ScenarioKind::Pendulum2d => "pendulum-2d",
            ScenarioKind::RnRoll => "rn-roll",
            ScenarioKind::Bvp => "bvp",
        }
    }
}

/// Target of a boundary value problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Target {
    /// Explicit configuration with standard frames rotated by `angle`.
    Configuration {
        x: Vec<f64>,
        #[serde(rename = "x̂", alias = "xh")]
        xh: Vec<f64>,
        #[serde(default)]
        angle: f64,
    },
    /// Endpoint of the normal geodesic with the given initial data.
    EndpointOf {
        angles: Vec<f64>,
        v0: Vec<f64>,
        /// Row-major `Λ₀`.
        #[serde(rename = "Λ0", alias = "lambda0")]
        lambda0: Vec<f64>,
    },
}

/// A single experiment. Field names follow the mathematical notation; ASCII
/// aliases (`Mh`, `xh`, `lambda`, `beta`, `Lambda`) are accepted on input.
/// Angles are in radians and points in chart units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<String>,
    #[serde(rename = "M̂", alias = "Mh", default, skip_serializing_if = "Option::is_none")]
    pub mh: Option<String>,
    /// `heisenberg` or `frame-bundle` (over the pair `M`, `M̂`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub testbed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(rename = "x̂", alias = "xh", default, skip_serializing_if = "Option::is_none")]
    pub xh: Option<Vec<f64>>,
    /// Rotation of the `M̂` frame against the coordinate frame.
    #[serde(default)]
    pub angle: f64,
    /// Fiber coordinates (verify-lift).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    /// Base covector (verify-lift).
    #[serde(rename = "λ", alias = "lambda", default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    /// Fiber covector (verify-lift).
    #[serde(rename = "β", alias = "beta", default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    /// Constant chart velocity of the rolled curve (develop).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    /// Row-major skew matrix.
    #[serde(rename = "Λ", alias = "Lambda", default, skip_serializing_if = "Option::is_none")]
    pub big_lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<SolverControls>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<InitialGuess>,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides of the monitored bounds.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
}

/// Overrides applied on top of a scenario, e.g. from command-line flags.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
}

impl Scenario {
    /// Parses JSON, or TOML when `toml` is set.
    pub fn parse(text: &str, toml: bool) -> Result<Self, ScenarioError> {
        if toml {
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
        } else {
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let toml = path.extension().is_some_and(|e| e == "toml");
        Self::parse(&text, toml).map_err(|e| match e {
            ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if let Some(t) = o.tol {
            self.tol = t;
        }
        if let Some(t) = o.t_end {
            self.t_end = t;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn chart(&self, field: &str, spec: &Option<String>) -> Result<ChartMetric, ScenarioError> {
        let s = spec
            .as_deref()
            .ok_or_else(|| ScenarioError::Validation(format!("`{field}` is required for kind {}", self.kind.id())))?;
        ChartSpec::parse(s)
            .and_then(|c| c.build())
            .map_err(|e| ScenarioError::Validation(format!("`{field}`: {e}")))
    }

    fn vector(&self, field: &str, v: &Option<Vec<f64>>, len: usize) -> Result<Vec<f64>, ScenarioError> {
        let v = v
            .as_ref()
            .ok_or_else(|| ScenarioError::Validation(format!("`{field}` is required for kind {}", self.kind.id())))?;
        if v.len() != len {
            return Err(ScenarioError::Validation(format!(
                "`{field}` must have {len} entries, got {}",
                v.len()
            )));
        }
        finite(field, v)?;
        Ok(v.clone())
    }

    fn configuration(&self) -> Result<RollingConfiguration, ScenarioError> {
        let m = self.chart("M", &self.m)?;
        let mh = self.chart("M̂", &self.mh)?;
        if m.dim() != mh.dim() {
            return Err(ScenarioError::Validation(format!(
                "`M` and `M̂` have dimensions {} and {}",
                m.dim(),
                mh.dim()
            )));
        }
        let n = m.dim();
        let x = self.vector("x", &self.x, n)?;
        let xh = self.vector("x̂", &self.xh, n)?;
        RollingConfiguration::standard(m, mh, &x, &xh, self.angle).map_err(invalid)
    }

    fn geodesic_state(&self) -> Result<RollingGeodesicState, ScenarioError> {
        let cfg = self.configuration()?;
        let n = cfg.dim();
        let u = self.vector("u", &self.u, n)?;
        let v = self.vector("v", &self.v, n)?;
        let l = match &self.big_lambda {
            Some(_) => self.vector("Λ", &self.big_lambda, n * n)?,
            None => vec![0.0; n * n],
        };
        let lambda = from_row_major(n, &l).map_err(invalid)?;
        RollingGeodesicState::new(cfg, &u, &v, lambda).map_err(invalid)
    }

    /// Checks everything that can be checked without integrating.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            return Err(ScenarioError::Validation(format!(
                "`name` must be a non-empty file-name-safe identifier, got `{}`",
                self.name
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(ScenarioError::Validation(format!("`T` must be positive and finite, got {}", self.t_end)));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return Err(ScenarioError::Validation(format!("`tol` must lie in (0, 1e-3], got {}", self.tol)));
        }
        finite("angle", &[self.angle])?;
        let known = tolerance_names(self.kind);
        for (k, v) in &self.tolerances {
            if !known.contains(&k.as_str()) {
                return Err(ScenarioError::Validation(format!(
                    "unknown tolerance `{k}` for kind {}; expected one of {}",
                    self.kind.id(),
                    known.join(", ")
                )));
            }
            if !(*v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::Validation(format!("tolerance `{k}` must be positive, got {v}")));
            }
        }
        self.prepare().map(|_| ())
    }

    fn prepare(&self) -> Result<Prepared, ScenarioError> {
        Ok(match self.kind {
            ScenarioKind::VerifyLift => {
                let tb = self.testbed.as_deref().ok_or_else(|| {
                    ScenarioError::Validation("`testbed` is required for kind verify-lift".into())
                })?;
                let (testbed, base): (Box<dyn SubmersionTestbed>, ChartMetric) = match tb {
                    "heisenberg" => (Box::new(HeisenbergTestbed), ChartMetric::euclidean(2)),
                    "frame-bundle" => {
                        let m = self.chart("M", &self.m)?;
                        let mh = self.chart("M̂", &self.mh)?;
                        (Box::new(FrameBundleTestbed::new(m.clone(), mh).map_err(invalid)?), m)
                    }
                    other => {
                        return Err(ScenarioError::Validation(format!(
                            "unknown testbed `{other}`; expected heisenberg or frame-bundle"
                        )))
                    }
                };
                let (n, nu) = (testbed.base_dim(), testbed.fiber_dim());
                let x = self.vector("x", &self.x, n)?;
                let y = self.vector("y", &self.y, nu)?;
                let a = self.vector("λ", &self.lambda, n)?;
                let b = self.vector("β", &self.beta, nu)?;
                base.check_point(&x).map_err(invalid)?;
                Prepared::Lift {
                    testbed,
                    h: RiemannianHamiltonian::new(base),
                    p0: CotangentState::new(&x, &y, &a, &b),
                }
            }
            ScenarioKind::Develop => {
                let cfg = self.configuration()?;
                let vel = self.vector("velocity", &self.velocity, cfg.dim())?;
                Prepared::Develop { cfg, velocity: vel }
            }
            ScenarioKind::Geodesic => Prepared::Geodesic(self.geodesic_state()?),
            ScenarioKind::Pendulum2d => {
                let s = self.geodesic_state()?;
                let c = &s.cfg;
                if c.dim() != 2 {
                    return Err(ScenarioError::Validation("pendulum-2d needs two-dimensional charts".into()));
                }
                let k = gauss_curvature(&c.m, c.x.as_slice()).map_err(invalid)?;
                let kh = gauss_curvature(&c.mh, c.xh.as_slice()).map_err(invalid)?;
                if (k - kh).abs() < RHO_FLOOR {
                    return Err(ScenarioError::Validation(format!(
                        "pendulum-2d needs the rolling distribution to be bracket generating at the start: \
                         the curvature gap κ − κ̂ = {:.3e} is not invertible (|κ − κ̂| < {RHO_FLOOR:e})",
                        k - kh
                    )));
                }
                let p = Pendulum2DState::from_geodesic_state(&s).map_err(invalid)?;
                Prepared::Pendulum(p)
            }
            ScenarioKind::RnRoll => {
                if self.angle != 0.0 {
                    return Err(ScenarioError::Validation("rn-roll uses the standard frame on ℝⁿ; `angle` must be 0".into()));
                }
                let s = self.geodesic_state()?;
                Prepared::Rn(RnRollingState::from_geodesic_state(&s).map_err(invalid)?)
            }
            ScenarioKind::Bvp => {
                let cfg0 = self.configuration()?;
                let n = cfg0.dim();
                let speed = self.speed.unwrap_or(1.0);
                let controls = self.controls.unwrap_or_default();
                let target = self
                    .target
                    .as_ref()
                    .ok_or_else(|| ScenarioError::Validation("`target` is required for kind bvp".into()))?;
                let cfg1 = match target {
                    Target::Configuration { x, xh, angle } => {
                        finite("target", x)?;
                        finite("target", xh)?;
                        RollingConfiguration::standard(cfg0.m.clone(), cfg0.mh.clone(), x, xh, *angle).map_err(invalid)?
                    }
                    Target::EndpointOf { angles, v0, lambda0 } => {
                        if angles.len() + 1 != n || v0.len() != n || lambda0.len() != n * n {
                            return Err(ScenarioError::Validation("`target.endpoint-of` has wrong dimensions".into()));
                        }
                        finite("target", angles)?;
                        finite("target", v0)?;
                        let l = from_row_major(n, lambda0).map_err(invalid)?;
                        endpoint_map(&cfg0, angles, v0, &l, self.t_end, speed, controls.integration_tol)
                            .map_err(invalid)?
                    }
                };
                let mut prob = ShootingProblem::new(cfg0, cfg1, self.t_end, speed).map_err(invalid)?;
                prob.controls = controls;
                prob.seed = self.seed;
                prob.guess = self.guess.clone();
                prob.validate().map_err(invalid)?;
                Prepared::Bvp(Box::new(prob))
            }
        })
    }

    /// Monitored bounds after applying the scenario's overrides.
    pub fn tolerance_set(&self) -> BTreeMap<String, f64> {
        let mut out = default_tolerances(self.kind, self.tol, self.controls.as_ref());
        for (k, v) in &self.tolerances {
            out.insert(k.clone(), *v);
        }
        out
    }
}

fn finite(field: &str, v: &[f64]) -> Result<(), ScenarioError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ScenarioError::Validation(format!("`{field}` must be finite")))
    }
}

fn tolerance_names(kind: ScenarioKind) -> Vec<&'static str> {
    match kind {
        ScenarioKind::VerifyLift => vec!["sup_error_lambda", "sup_error_beta", "sup_error_lift", "energy_drift"],
        ScenarioKind::Develop => vec!["slip", "twist", "isometry"],
        ScenarioKind::Geodesic => vec!["speed_drift", "skew", "frame_defect", "geodesic_residual", "vtilde", "charge"],
        ScenarioKind::Pendulum2d => vec![
            "pendulum_residual",
            "consistency",
            "mapped_rhs",
            "reduction_gap",
            "memory",
            "pendulum_theta",
        ],
        ScenarioKind::RnRoll => vec!["agreement"],
        ScenarioKind::Bvp => vec!["residual", "speed_drift", "geodesic_residual", "vtilde"],
    }
}

fn default_tolerances(kind: ScenarioKind, tol: f64, controls: Option<&SolverControls>) -> BTreeMap<String, f64> {
    let c = controls.copied().unwrap_or_default();
    let pairs: Vec<(&str, f64)> = match kind {
        ScenarioKind::VerifyLift => vec![
            ("sup_error_lambda", 1e-6),
            ("sup_error_beta", 1e-6),
            ("sup_error_lift", 1e-6),
            ("energy_drift", 100.0 * tol),
        ],
        ScenarioKind::Develop => vec![("slip", 1e-8), ("twist", 1e-8), ("isometry", 1e-8)],
        ScenarioKind::Geodesic => vec![
            ("speed_drift", 1e-8),
            ("skew", 1e-10),
            ("frame_defect", 1e-8),
            ("geodesic_residual", 100.0 * tol),
            ("vtilde", 1e-7),
            ("charge", 1e-6),
        ],
        ScenarioKind::Pendulum2d => vec![
            ("pendulum_residual", 1e-6),
            ("consistency", 100.0 * tol),
            ("mapped_rhs", 100.0 * tol),
            ("reduction_gap", 1e-6),
            ("memory", 1e-8),
            ("pendulum_theta", 1e-6),
        ],
        ScenarioKind::RnRoll => vec![("agreement", 1e-7)],
        ScenarioKind::Bvp => vec![
            ("residual", c.tolerance),
            ("speed_drift", 1e-8),
            ("geodesic_residual", 100.0 * c.integration_tol),
            ("vtilde", 1e-7),
        ],
    };
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

enum Prepared {
    Lift {
        testbed: Box<dyn SubmersionTestbed>,
        h: RiemannianHamiltonian,
        p0: CotangentState,
    },
    Develop {
        cfg: RollingConfiguration,
        velocity: Vec<f64>,
    },
    Geodesic(RollingGeodesicState),
    Pendulum(Pendulum2DState),
    Rn(RnRollingState),
    Bvp(Box<ShootingProblem>),
}

/// One measured quantity; `bound` is absent for informational values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

impl Check {
    pub fn bounded(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: Some(bound),
            pass: Some(value <= bound),
        }
    }

    pub fn info(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: None,
            pass: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Violated,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub scenario: String,
    pub kind: ScenarioKind,
    pub scenario_hash: String,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub tol: f64,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated_at: Option<f64>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    pub details: serde_json::Value,
}

impl RunSummary {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Ok => 0,
            _ => 4,
        }
    }
}

/// The integrated objects behind a run.
#[derive(Debug, Clone)]
pub enum Artifact {
    Lift(ProjectionReport, Vec<ProjectionSample>),
    Path(RollingPath),
    Geodesic(GeodesicRun),
    Pendulum(ReducedRun, GeodesicRun),
    Rn(RnRun),
    Bvp(Box<ShootingResult>),
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    /// Trajectory table as CSV.
    pub table: String,
    pub artifact: Artifact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}`; expected csv or json")),
        }
    }
}

pub fn run(s: &Scenario) -> Result<RunOutput, ScenarioError> {
    s.validate()?;
    let bounds = s.tolerance_set();
    let b = |k: &str| bounds[k];
    let mut checks = Vec::new();
    let mut truncated_at = None;
    let (table, details, artifact) = match s.prepare()? {
        Prepared::Lift { testbed, h, p0 } => {
            let (rep, samples) = compare_projection(testbed.as_ref(), &h, &p0, s.t_end, s.tol, 1000).map_err(numerical)?;
            checks.push(Check::bounded("sup_error_lambda", rep.sup_error_lambda, b("sup_error_lambda")));
            checks.push(Check::bounded("sup_error_beta", rep.sup_error_beta, b("sup_error_beta")));
            checks.push(Check::bounded("sup_error_lift", rep.sup_error_lift, b("sup_error_lift")));
            checks.push(Check::bounded("energy_drift", rep.energy_drift_lifted, b("energy_drift")));
            if rep.truncated {
                truncated_at = samples.last().map(|p| p.t);
            }
            let details = serde_json::json!({ "testbed": rep.testbed, "H": rep.hamiltonian });
            (lift_table(&samples), details, Artifact::Lift(rep, samples))
        }
        Prepared::Develop { cfg, velocity } => {
            let curve = FnCurve::line(cfg.x.as_slice(), &velocity, s.t_end);
            let path = develop(&cfg, &curve, s.tol).map_err(numerical)?;
            let res = noslip_notwist_residual(&path).map_err(numerical)?;
            let iso = (0..path.nodes.len())
                .map(|k| path.node_configuration(k).isometry_defect())
                .collect::<Result<Vec<_>, _>>()
                .map_err(numerical)?
                .into_iter()
                .fold(0.0, f64::max);
            checks.push(Check::bounded("slip", res.slip, b("slip")));
            checks.push(Check::bounded("twist", res.twist, b("twist")));
            checks.push(Check::bounded("isometry", iso, b("isometry")));
            truncated_at = path.truncation.as_ref().map(|t| t.t);
            let end = path.final_configuration();
            let details = serde_json::json!({
                "final": end.to_record().map_err(numerical)?,
                "nodes": path.nodes.len(),
                "projections": path.projections,
            });
            let mut buf = Vec::new();
            path.write_csv(&mut buf).map_err(|e| ScenarioError::Numerical(e.to_string()))?;
            (String::from_utf8(buf).expect("utf-8 csv"), details, Artifact::Path(path))
        }
        Prepared::Geodesic(s0) => {
            let run = integrate_geodesic(&s0, s.t_end, s.tol).map_err(numerical)?;
            truncated_at = run.truncation().map(|t| t.t);
            geodesic_checks(&run, &bounds, &mut checks)?;
            if run.dim() == 2 && run.mh.spec == Some(ChartSpec::Euclidean { n: 2 }) {
                let rep = charge_monitor(&run).map_err(numerical)?;
                checks.push(Check::bounded("charge", rep.max_error, b("charge")));
            }
            let speed = s0.speed();
            checks.push(Check::info("length", speed * run.t_end()));
            checks.push(Check::info("energy", 0.5 * speed * speed * run.t_end()));
            let details = serde_json::json!({
                "accepted_steps": run.trajectory.stats.accepted,
                "rejected_steps": run.trajectory.stats.rejected,
                "projections": run.projections,
                "final": run.final_state().cfg.to_record().map_err(numerical)?,
            });
            (geodesic_table(&run)?, details, Artifact::Geodesic(run))
        }
        Prepared::Pendulum(p0) => pendulum_run(s, &p0, &bounds, &mut checks, &mut truncated_at)?,
        Prepared::Rn(r0) => {
            let run = rn_rolling_flow(&r0, s.t_end, s.tol).map_err(numerical)?;
            if run.is_truncated() {
                truncated_at = Some(run.general.t_end().min(run.form_a.t_end()).min(run.form_b.t_end()));
            }
            let ag = run.agreement(&r0.m, 1000).map_err(numerical)?;
            checks.push(Check::bounded("agreement", ag.max(), b("agreement")));
            checks.push(Check::info("a_vs_b", ag.a_vs_b));
            checks.push(Check::info("a_vs_general", ag.a_vs_general));
            checks.push(Check::info("b_vs_general", ag.b_vs_general));
            let y = run.development(run.general.t_end());
            let details = serde_json::json!({ "development_end": y.as_slice() });
            (geodesic_table(&run.general)?, details, Artifact::Rn(run))
        }
        Prepared::Bvp(prob) => {
            let res = solve(&prob).map_err(numerical)?;
            let residual = res.residual.unwrap_or(f64::INFINITY);
            checks.push(Check::bounded("residual", residual, b("residual")));
            checks.push(Check::bounded(
                "iterations",
                res.iterations as f64,
                prob.controls.max_iterations as f64,
            ));
            checks.push(Check::info("length", res.length));
            checks.push(Check::info("energy", res.energy));
            let table = match &res.run {
                Some(run) => {
                    truncated_at = run.truncation().map(|t| t.t);
                    geodesic_checks(run, &bounds, &mut checks)?;
                    geodesic_table(run)?
                }
                None => String::new(),
            };
            let mut rec = serde_json::to_value(&res).expect("result serializes");
            if let Some(o) = rec.as_object_mut() {
                o.remove("invariants");
                o.remove("trajectory_csv");
            }
            (table, rec, Artifact::Bvp(Box::new(res)))
        }
    };
    let violated = checks.iter().any(|c| c.pass == Some(false));
    let status = if truncated_at.is_some() {
        RunStatus::Truncated
    } else if violated {
        RunStatus::Violated
    } else {
        RunStatus::Ok
    };
    let bvp_failed = matches!(&artifact, Artifact::Bvp(r) if !r.converged());
    let status = if bvp_failed && status == RunStatus::Ok {
        RunStatus::Violated
    } else {
        status
    };
    Ok(RunOutput {
        summary: RunSummary {
            version: VERSION.into(),
            scenario: s.name.clone(),
            kind: s.kind,
            scenario_hash: s.hash(),
            t_end: s.t_end,
            tol: s.tol,
            seed: s.seed,
            tolerances: bounds,
            status,
            truncated_at,
            checks,
            trajectory: None,
            details,
        },
        table,
        artifact,
    })
}

fn geodesic_checks(
    run: &GeodesicRun,
    bounds: &BTreeMap<String, f64>,
    checks: &mut Vec<Check>,
) -> Result<(), ScenarioError> {
    let (thm, vt) = run.residual_pair().map_err(numerical)?;
    checks.push(Check::bounded("speed_drift", run.speed_drift(), bounds["speed_drift"]));
    if let Some(&sk) = bounds.get("skew") {
        checks.push(Check::bounded("skew", run.skew_defect(), sk));
    }
    if let Some(&fd) = bounds.get("frame_defect") {
        checks.push(Check::bounded("frame_defect", run.frame_defect(), fd));
    }
    checks.push(Check::bounded("geodesic_residual", thm.max(), bounds["geodesic_residual"]));
    checks.push(Check::bounded("vtilde", vt.max(), bounds["vtilde"]));
    Ok(())
}

fn geodesic_table(run: &GeodesicRun) -> Result<String, ScenarioError> {
    let mut buf = Vec::new();
    run.write_csv(&mut buf).map_err(|e| ScenarioError::Numerical(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("utf-8 csv"))
}

fn lift_table(samples: &[ProjectionSample]) -> String {
    let Some(first) = samples.first() else {
        return String::new();
    };
    let (n, nu) = (first.lifted.x.len(), first.lifted.y.len());
    let mut head = vec!["t".to_string()];
    head.extend((0..n).map(|i| format!("x{i}")));
    head.extend((0..nu).map(|i| format!("y{i}")));
    head.extend((0..n).map(|i| format!("lambda{i}")));
    head.extend((0..nu).map(|i| format!("beta{i}")));
    head.extend(["err_lambda", "err_beta", "err_lift"].map(String::from));
    let mut out = head.join(",") + "\n";
    for p in samples {
        let (up, down) = (&p.lifted, &p.projected);
        let el = (&up.x - &down.x).amax().max((&up.a - &down.a).amax());
        let eb = (&up.b - &down.b).amax();
        let ey = (&up.y - &down.y).amax();
        let mut row = vec![p.t];
        row.extend(up.x.iter().chain(up.y.iter()).chain(up.a.iter()).chain(up.b.iter()));
        row.extend([el, eb, ey]);
        out += &row.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(",");
        out.push('\n');
    }
    out
}

/// `θ` of the mathematical pendulum `ρθ̈ = A sin(θ − φ)` started from the
/// reduced initial data, sampled at `times`.
pub fn mathematical_pendulum(
    k: &PendulumConstants,
    rho: f64,
    theta0: f64,
    theta_dot0: f64,
    times: &[f64],
    tol: f64,
) -> Vec<f64> {
    let (amp, phase) = (k.amplitude / rho, k.pendulum_phase());
    let sys = FnSystem {
        dim: 2,
        f: move |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = amp * (y[0] - phase).sin();
            Ok(())
        },
    };
    let t_end = times.last().copied().unwrap_or(0.0);
    let tr = integrate(&sys, 0.0, &[theta0, theta_dot0], t_end, &IntegrateOptions::with_tol(tol));
    times.iter().map(|&t| tr.sample(t)[0]).collect()
}

type RunParts = (String, serde_json::Value, Artifact);

fn pendulum_run(
    s: &Scenario,
    p0: &Pendulum2DState,
    bounds: &BTreeMap<String, f64>,
    checks: &mut Vec<Check>,
    truncated_at: &mut Option<f64>,
) -> Result<RunParts, ScenarioError> {
    let k = PendulumConstants::fit(p0).map_err(invalid)?;
    let red = reduce_2d(p0, s.t_end, s.tol).map_err(numerical)?;
    let gen = integrate_geodesic(&p0.to_geodesic_state(), s.t_end, s.tol).map_err(numerical)?;
    if red.is_truncated() || gen.is_truncated() {
        *truncated_at = Some(red.trajectory.t_end().min(gen.t_end()));
    }
    let horizon = red.pendulum_horizon();
    let nodes = red.nodes().map_err(numerical)?;
    let b = |k: &str| bounds[k];
    let pr = pendulum_residual(&red, &k).map_err(numerical)?;
    checks.push(Check::bounded("pendulum_residual", pr, b("pendulum_residual")));
    checks.push(Check::bounded(
        "consistency",
        red.consistency_residual().map_err(numerical)?,
        b("consistency"),
    ));
    checks.push(Check::bounded(
        "mapped_rhs",
        red.mapped_rhs_residual().map_err(numerical)?,
        b("mapped_rhs"),
    ));
    // base curves of the reduced and the general flow
    let t_common = red.trajectory.t_end().min(gen.t_end());
    let mut gap: f64 = 0.0;
    for i in 0..=1000 {
        let t = t_common * i as f64 / 1000.0;
        let g = gen.state_at(t);
        gap = gap
            .max((red.base_point(t) - &g.cfg.x).amax())
            .max((red.base_point_hat(t) - &g.cfg.xh).amax());
    }
    checks.push(Check::bounded("reduction_gap", gap, b("reduction_gap")));
    let within: Vec<_> = nodes.iter().filter(|n| n.t <= horizon).collect();
    let constant = |f: &dyn Fn(&&crate::geodesics::planar::ReducedSample) -> f64| {
        let v0 = f(&within[0]);
        within.iter().all(|n| (f(n) - v0).abs() <= 1e-9 * (1.0 + v0.abs()))
    };
    let memory = memory_term_sup(&red).map_err(numerical)?;
    let ratio_constant = !within.is_empty()
        && within.iter().all(|n| n.kappa.abs() > 1e-12)
        && constant(&|n| n.kappa_hat / n.kappa);
    let kappa_hat_zero = within.iter().all(|n| n.kappa_hat.abs() <= 1e-12);
    if ratio_constant || kappa_hat_zero {
        checks.push(Check::bounded("memory", memory, b("memory")));
    } else {
        checks.push(Check::info("memory", memory));
    }
    let both_constant = !within.is_empty() && constant(&|n| n.kappa) && constant(&|n| n.kappa_hat);
    let mut theta_err = None;
    if both_constant {
        let n0 = within[0];
        let rho = 1.0 / (n0.kappa - n0.kappa_hat);
        let times: Vec<f64> = (0..=2000).map(|i| horizon.min(t_common) * i as f64 / 2000.0).collect();
        let th = mathematical_pendulum(&k, rho, p0.theta, p0.l / rho, &times, 1e-12);
        let mut e: f64 = 0.0;
        for (t, th) in times.iter().zip(&th) {
            e = e.max((red.sample(*t).map_err(numerical)?.theta - th).abs());
        }
        checks.push(Check::bounded("pendulum_theta", e, b("pendulum_theta")));
        theta_err = Some((times, th));
    }
    checks.push(Check::info(
        "closed_form_error",
        red.closed_form_error(&k).map_err(numerical)?,
    ));
    checks.push(Check::info("pendulum_horizon", horizon));
    let details = serde_json::json!({
        "amplitude": k.amplitude,
        "phi0": k.phi0,
        "pendulum_phase": k.pendulum_phase(),
        "singular_windows": red.singular_windows,
    });
    let table = pendulum_table(&red, &k, theta_err.as_ref().map(|_| p0))?;
    Ok((table, details, Artifact::Pendulum(red, gen)))
}

/// Node table of a reduced run; `pendulum` holds `θ − θ_pendulum` when the
/// curvatures are constant.
fn pendulum_table(red: &ReducedRun, k: &PendulumConstants, pend: Option<&Pendulum2DState>) -> Result<String, ScenarioError> {
    let nodes = red.nodes().map_err(numerical)?;
    let reference = pend.map(|p0| {
        let n0 = &nodes[0];
        let rho = 1.0 / (n0.kappa - n0.kappa_hat);
        let times: Vec<f64> = nodes.iter().map(|n| n.t).collect();
        mathematical_pendulum(k, rho, p0.theta, p0.l / rho, &times, 1e-12)
    });
    let mut out = String::from(
        "t,x0,x1,xh0,xh1,theta,lambda10,u0,u1,v0,v1,speed,thm44,pendulum,slip,twist,b1,b2,memory,kappa,kappa_hat\n",
    );
    for (i, n) in nodes.iter().enumerate() {
        let x = red.base_point(n.t);
        let xh = red.base_point_hat(n.t);
        let (sn, cs) = n.theta.sin_cos();
        let a = red.a;
        let mut cells: Vec<String> = vec![fmt(n.t)];
        cells.extend(x.iter().chain(xh.iter()).map(|v| fmt(*v)));
        cells.push(fmt(n.theta));
        cells.push(fmt(-n.l));
        for v in [a * cs, a * sn, n.b1 * cs - n.b2 * sn, n.b1 * sn + n.b2 * cs, a] {
            cells.push(fmt(v));
        }
        cells.push(String::new());
        cells.push(match &reference {
            Some(r) => fmt(n.theta - r[i]),
            None => String::new(),
        });
        cells.push(String::new());
        cells.push(String::new());
        for v in [n.b1, n.b2, n.f, n.kappa, n.kappa_hat] {
            cells.push(fmt(v));
        }
        out += &cells.join(",");
        out.push('\n');
    }
    Ok(out)
}

/// `{columns, rows}` form of a CSV table; empty cells become `null`.
pub fn table_json(csv: &str) -> serde_json::Value {
    let mut lines = csv.lines();
    let columns: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    let rows: Vec<Vec<Option<f64>>> = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().ok()).collect())
        .collect();
    serde_json::json!({ "columns": columns, "rows": rows })
}

/// Writes `<name>.csv|json` and `<name>.summary.json` into `dir`; the
/// summary is written last through a temporary file and a rename.
pub fn write_outputs(out: &mut RunOutput, dir: &Path, format: Format) -> Result<Vec<PathBuf>, ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    let name = out.summary.scenario.clone();
    let mut written = Vec::new();
    if !out.table.is_empty() {
        let (file, body) = match format {
            Format::Csv => (format!("{name}.csv"), out.table.clone()),
            Format::Json => (
                format!("{name}.trajectory.json"),
                serde_json::to_string_pretty(&table_json(&out.table)).expect("table serializes") + "\n",
            ),
        };
        let path = dir.join(&file);
        std::fs::write(&path, body).map_err(io)?;
        out.summary.trajectory = Some(file);
        written.push(path);
    }
    let path = dir.join(format!("{name}.summary.json"));
    let tmp = dir.join(format!(".{name}.summary.json.tmp"));
    let body = serde_json::to_string_pretty(&out.summary).expect("summary serializes") + "\n";
    std::fs::write(&tmp, body).map_err(io)?;
    std::fs::rename(&tmp, &path).map_err(io)?;
    written.push(path);
    Ok(written)
}

fn lam(l: f64) -> Vec<f64> {
    row_major(&DMatrix::from_row_slice(2, 2, &[0.0, l, -l, 0.0]))
}

fn base(name: &str, kind: ScenarioKind, t_end: f64, tol: f64) -> Scenario {
    Scenario {
        name: name.into(),
        kind,
        m: None,
        mh: None,
        testbed: None,
        x: None,
        xh: None,
        angle: 0.0,
        y: None,
        lambda: None,
        beta: None,
        velocity: None,
        u: None,
        v: None,
        big_lambda: None,
        target: None,
        speed: None,
        controls: None,
        guess: None,
        t_end,
        tol,
        seed: 0,
        tolerances: BTreeMap::new(),
    }
}

struct Roll<'a> {
    m: &'a str,
    mh: &'a str,
    x: [f64; 2],
    xh: [f64; 2],
    u: [f64; 2],
    v: [f64; 2],
    l: f64,
}

fn rolled(name: &str, kind: ScenarioKind, t_end: f64, tol: f64, r: Roll) -> Scenario {
    Scenario {
        m: Some(r.m.into()),
        mh: Some(r.mh.into()),
        x: Some(r.x.to_vec()),
        xh: Some(r.xh.to_vec()),
        u: Some(r.u.to_vec()),
        v: Some(r.v.to_vec()),
        big_lambda: Some(lam(r.l)),
        ..base(name, kind, t_end, tol)
    }
}

/// Built-in scenarios.
pub fn catalog() -> Vec<Scenario> {
    use ScenarioKind::*;
    let mut out = vec![
        Scenario {
            testbed: Some("heisenberg".into()),
            x: Some(vec![0.3, -0.2]),
            y: Some(vec![0.1]),
            lambda: Some(vec![0.6, 0.4]),
            beta: Some(vec![0.8]),
            ..base("heisenberg-lift", VerifyLift, 5.0, 1e-9)
        },
        Scenario {
            testbed: Some("frame-bundle".into()),
            m: Some("sphere(1)".into()),
            mh: Some("euclidean(2)".into()),
            x: Some(vec![1.2, 0.3]),
            y: Some(vec![0.2, 0.0, 0.0, 0.1]),
            lambda: Some(vec![0.6, 0.4]),
            beta: Some(vec![0.3, -0.2, 0.5, 0.25]),
            ..base("sphere-frame-bundle-lift", VerifyLift, 5.0, 1e-9)
        },
        Scenario {
            m: Some("sphere(1)".into()),
            mh: Some("euclidean(2)".into()),
            x: Some(vec![PI / 2.0, 0.0]),
            xh: Some(vec![0.0, 0.0]),
            velocity: Some(vec![0.0, 1.0]),
            ..base("sphere-great-circle", Develop, 2.0 * PI, 1e-11)
        },
        Scenario {
            m: Some("sphere(1)".into()),
            mh: Some("euclidean(2)".into()),
            x: Some(vec![PI / 4.0, 0.0]),
            xh: Some(vec![0.0, 0.0]),
            velocity: Some(vec![0.0, 1.0]),
            ..base("sphere-latitude-loop", Develop, 2.0 * PI, 1e-11)
        },
        Scenario {
            m: Some("paraboloid(0.5)".into()),
            mh: Some("hyperbolic-disk(2)".into()),
            x: Some(vec![0.2, -0.1]),
            xh: Some(vec![0.1, 0.1]),
            angle: 0.4,
            velocity: Some(vec![0.3, 0.2]),
            ..base("paraboloid-on-hyperbolic-develop", Develop, 2.0, 1e-11)
        },
    ];
    let geo = [
        ("sphere-on-plane", "sphere(1)", "euclidean(2)", [1.0, 0.3], [0.0, 0.0], [0.8, 0.6], [-0.3, 0.4], 0.6),
        ("paraboloid-on-plane", "paraboloid(0.5)", "euclidean(2)", [0.2, -0.1], [0.0, 0.0], [0.6, 0.8], [0.5, -0.3], 0.7),
        ("torus-on-plane", "revolution(torus)", "euclidean(2)", [0.3, 0.2], [0.0, 0.0], [0.6, 0.8], [0.2, 0.1], -0.4),
        ("sphere-on-sphere", "sphere(1)", "sphere(2)", [1.4, 0.2], [1.5, 0.5], [0.6, 0.8], [-0.2, 0.3], 0.5),
        ("paraboloid-on-hyperbolic", "paraboloid(0.5)", "hyperbolic-disk(2)", [0.3, 0.1], [0.0, 0.0], [0.36, 0.48], [0.2, 0.4], 0.8),
    ];
    for (name, m, mh, x, xh, u, v, l) in geo {
        out.push(rolled(name, Geodesic, 10.0, 1e-10, Roll { m, mh, x, xh, u, v, l }));
    }
    let pend = [
        ("sphere-on-plane-pendulum", "sphere(1)", "euclidean(2)", [1.0, 0.5], [0.0, 0.0], 10.0),
        ("paraboloid-on-plane-pendulum", "paraboloid(0.5)", "euclidean(2)", [0.3, 0.1], [0.0, 0.0], 5.0),
        ("sphere-on-sphere-pendulum", "sphere(1)", "sphere(2)", [1.4, 0.2], [1.5, 0.5], 5.0),
        ("paraboloid-on-hyperbolic-pendulum", "paraboloid(0.5)", "hyperbolic-disk(2)", [0.3, 0.1], [0.0, 0.0], 5.0),
    ];
    // θ = 0.2, L = 0.4, b = (0.3, −0.6), a = 1
    let (c, sn) = (0.2f64.cos(), 0.2f64.sin());
    let (u, v) = ([c, sn], [0.3 * c + 0.6 * sn, 0.3 * sn - 0.6 * c]);
    for (name, m, mh, x, xh, t_end) in pend {
        out.push(rolled(name, Pendulum2d, t_end, 1e-11, Roll { m, mh, x, xh, u, v, l: 0.4 }));
    }
    out.push(rolled(
        "paraboloid-rn-roll",
        RnRoll,
        5.0,
        1e-11,
        Roll {
            m: "paraboloid(0.5)",
            mh: "euclidean(2)",
            x: [0.2, -0.1],
            xh: [0.0, 0.0],
            u: [0.6, 0.8],
            v: [0.5, -0.3],
            l: 0.7,
        },
    ));
    out.push(rolled(
        "sphere-rn-roll",
        RnRoll,
        5.0,
        1e-11,
        Roll {
            m: "sphere(1)",
            mh: "euclidean(2)",
            x: [1.2, 0.0],
            xh: [0.0, 0.0],
            u: [0.6, 0.8],
            v: [0.3, -0.2],
            l: 0.5,
        },
    ));
    let (th, v0, l) = (0.5, [0.2, -0.1], 0.4);
    out.push(Scenario {
        m: Some("sphere(1)".into()),
        mh: Some("euclidean(2)".into()),
        x: Some(vec![1.2, 0.3]),
        xh: Some(vec![0.0, 0.0]),
        target: Some(Target::EndpointOf {
            angles: vec![th],
            v0: v0.to_vec(),
            lambda0: lam(l),
        }),
        speed: Some(1.0),
        guess: Some(InitialGuess {
            angles: vec![th + 1e-2],
            v0: vec![v0[0] - 1e-2, v0[1] + 1e-2],
            lambda0: lam(l + 1e-2),
        }),
        ..base("sphere-on-plane-bvp", Bvp, 2.0, 1e-11)
    });
    out
}

pub fn catalog_entry(name: &str) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.name == name)
}

/// Catalog scenario by name, or a scenario file.
pub fn resolve(reference: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(reference);
    if path.is_file() {
        return Scenario::load(path);
    }
    catalog_entry(reference).ok_or_else(|| {
        let names: Vec<String> = catalog().into_iter().map(|s| s.name).collect();
        ScenarioError::Validation(format!(
            "`{reference}` is neither a scenario file nor a catalog entry; catalog: {}",
            names.join(", ")
        ))
    })
}
