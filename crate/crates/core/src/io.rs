//! JSON file formats: reference paths, agent predictions, planning problems,
//! constraint specs for symbolic moment expressions, and plan outputs.
//!
//! Paths inside a problem file are resolved against the problem file's
//! directory. Every format rejects unknown keys.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distmoments::{DistError, GaussianMixture, MixtureComponent, PredictionSpec};
use crate::harness::{AgentSpec, BatchFormulation, Footprint, HarnessError, Scenario};
use crate::mpcc::{arc_length_scale, CostParams, EgoState, PathError, ReferencePath, VehicleParams};
use crate::planner::{PlanError, PlanProblem, PlanResult, SolverConfig};
use crate::polyalg::{
    mean_variance_expressions, parse_polynomial, DependencyStructure, Dialect, MomentExpression, ParseError,
    PolyError, Polynomial, VarKind,
};
use crate::riskbounds::ConcKind;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {err}")]
    Read { path: PathBuf, err: std::io::Error },
    #[error("cannot write {path}: {err}")]
    Write { path: PathBuf, err: std::io::Error },
    #[error("{path}: {err}")]
    Json { path: PathBuf, err: serde_json::Error },
    #[error("polynomial, line {}, column {}: {}", .0.line, .0.column, .0.message)]
    Parse(ParseError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Read and deserialize a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|err| IoError::Read {
        path: path.to_path_buf(),
        err,
    })?;
    serde_json::from_str(&text).map_err(|err| IoError::Json {
        path: path.to_path_buf(),
        err,
    })
}

/// Pretty-print `value` to `path`, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).map_err(|err| IoError::Json {
        path: path.to_path_buf(),
        err,
    })?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let wrap = |err| IoError::Write {
        path: path.to_path_buf(),
        err,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    fs::write(path, text).map_err(wrap)
}

/// Cubic path coefficients per power of the parameter.
///
/// With `prescaled = false` the coefficients are over `[0, 1]` and are
/// rescaled to approximate arc length on load. With `prescaled = true`
/// they are used as given over `[0, length]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathFile {
    pub cx: [f64; 4],
    pub cy: [f64; 4],
    pub prescaled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
}

impl PathFile {
    pub fn to_path(&self) -> Result<ReferencePath, IoError> {
        if self.prescaled {
            let length = self
                .length
                .ok_or_else(|| IoError::Invalid("prescaled path needs `length`".into()))?;
            Ok(ReferencePath::new(self.cx, self.cy, length)?)
        } else {
            if self.length.is_some() {
                return Err(IoError::Invalid("`length` is only allowed on prescaled paths".into()));
            }
            Ok(arc_length_scale(&ReferencePath::unit(self.cx, self.cy)?)?)
        }
    }

    pub fn from_path(path: &ReferencePath) -> Self {
        PathFile {
            cx: path.cx(),
            cy: path.cy(),
            prescaled: true,
            length: Some(path.length()),
        }
    }
}

/// An agent's prediction: mixture components at `t = 0` and after `steps`
/// intervals, linearly interpolated in between. Weights must agree between
/// the endpoints; `trunc_k` is read from the `start` list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub start: Vec<MixtureComponent>,
    pub end: Vec<MixtureComponent>,
    pub steps: usize,
    #[serde(default)]
    pub footprint: Footprint,
}

fn mixture(components: &[MixtureComponent]) -> Result<GaussianMixture, DistError> {
    for c in components {
        c.gaussian().validate()?;
    }
    GaussianMixture::new(
        components.iter().map(|c| c.weight).collect(),
        components.iter().map(MixtureComponent::gaussian).collect(),
    )
}

impl PredictionFile {
    /// Agent whose `end` is the state after `horizon` intervals. A file
    /// covering more steps is cut at `horizon`; fewer steps is an error.
    pub fn agent(&self, horizon: usize) -> Result<AgentSpec, IoError> {
        if self.steps == 0 {
            return Err(IoError::Invalid("prediction `steps` must be positive".into()));
        }
        if self.steps < horizon {
            return Err(IoError::Invalid(format!(
                "prediction covers {} steps, problem needs {horizon}",
                self.steps
            )));
        }
        if self.start.len() != self.end.len() {
            return Err(DistError::ComponentCountMismatch(self.start.len(), self.end.len()).into());
        }
        for (i, (a, b)) in self.start.iter().zip(&self.end).enumerate() {
            if a.weight != b.weight {
                return Err(DistError::WeightMismatch(i).into());
            }
            if b.trunc_k.is_some_and(|k| Some(k) != a.trunc_k) {
                return Err(IoError::Invalid(format!("component {i}: `trunc_k` differs between endpoints")));
            }
        }
        let start = mixture(&self.start)?;
        let mut end = mixture(&self.end)?;
        if horizon < self.steps {
            let s = horizon as f64 / self.steps as f64;
            for (e, a) in end.components.iter_mut().zip(&start.components) {
                *e = a.lerp(e, s);
            }
        }
        if !(self.footprint.length > 0.0 && self.footprint.width > 0.0) {
            return Err(IoError::Invalid("footprint dimensions must be positive".into()));
        }
        Ok(AgentSpec {
            footprint: self.footprint,
            start,
            end,
            trunc_k: if self.start.iter().all(|c| c.trunc_k.is_none()) {
                Vec::new()
            } else {
                self.start.iter().map(|c| c.trunc_k).collect()
            },
        })
    }

    pub fn from_agent(agent: &AgentSpec, steps: usize) -> Self {
        let list = |g: &GaussianMixture, with_k: bool| {
            g.weights
                .iter()
                .zip(&g.components)
                .enumerate()
                .map(|(i, (&weight, c))| MixtureComponent {
                    weight,
                    mean: c.mean,
                    cov: c.cov,
                    trunc_k: if with_k { agent.trunc_k.get(i).copied().flatten() } else { None },
                })
                .collect()
        };
        PredictionFile {
            start: list(&agent.start, true),
            end: list(&agent.end, false),
            steps,
            footprint: agent.footprint,
        }
    }
}

/// Limits as `[lower, upper]` pairs; omitted entries keep the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering_rate: Option<[f64; 2]>,
}

fn default_horizon() -> usize {
    50
}

fn default_dt() -> f64 {
    0.1
}

fn default_trunc_k() -> f64 {
    2.0
}

fn default_formulation() -> BatchFormulation {
    BatchFormulation::Gmm
}

/// A planning problem. `path` and `agents` name a path file and prediction
/// files. Without `initial` the ego starts at the path origin, aligned with
/// it, at the reference speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub path: PathBuf,
    pub agents: Vec<PathBuf>,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<EgoState>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub conc: ConcKind,
    #[serde(default = "default_formulation")]
    pub formulation: BatchFormulation,
    /// Truncation in standard deviations for components without their own.
    #[serde(default = "default_trunc_k")]
    pub trunc_k: f64,
    #[serde(default)]
    pub ego: Footprint,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub bounds: BoundsFile,
    #[serde(default)]
    pub solver: SolverConfig,
}

/// A problem file with its referenced files loaded.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub file: ProblemFile,
    pub scenario: Scenario,
}

impl LoadedProblem {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let file: ProblemFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        LoadedProblem::resolve(file, base)
    }

    /// Load the files named in `file` relative to `base`.
    pub fn resolve(file: ProblemFile, base: &Path) -> Result<Self, IoError> {
        let path = read_json::<PathFile>(&base.join(&file.path))?.to_path()?;
        let agents = file
            .agents
            .iter()
            .map(|a| read_json::<PredictionFile>(&base.join(a))?.agent(file.horizon))
            .collect::<Result<Vec<_>, _>>()?;
        let initial = file.initial.unwrap_or_else(|| {
            let (x, y) = path.point(0.0);
            EgoState {
                x,
                y,
                theta: path.heading(0.0),
                v: file.cost.v_ref,
                delta: 0.0,
                s: 0.0,
            }
        });
        let scenario = Scenario {
            seed: 0,
            perturbation: 0.0,
            path,
            initial,
            ego: file.ego,
            agents,
            trunc_k: file.trunc_k,
        };
        Ok(LoadedProblem { file, scenario })
    }

    /// Check ranges that the planner does not see until solve time.
    pub fn validate(&self) -> Result<(), IoError> {
        let f = &self.file;
        if !(f.eps > 0.0 && f.eps < 1.0) {
            return Err(IoError::Invalid(format!("eps must lie in (0, 1), got {}", f.eps)));
        }
        if !(f.trunc_k > 0.0) {
            return Err(IoError::Invalid(format!("trunc_k must be positive, got {}", f.trunc_k)));
        }
        if !(f.ego.length > 0.0 && f.ego.width > 0.0) {
            return Err(IoError::Invalid("ego footprint dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn truncated(&self) -> bool {
        self.file.formulation == BatchFormulation::TruncatedGmm
    }

    /// Agent predictions as the planner sees them.
    pub fn predictions(&self) -> Result<Vec<PredictionSpec>, IoError> {
        Ok(self.scenario.predictions(self.file.horizon, self.truncated())?)
    }

    pub fn plan_problem(&self) -> Result<PlanProblem, IoError> {
        self.validate()?;
        let f = &self.file;
        let mut p = self
            .scenario
            .problem_with_horizon(f.eps, f.formulation, f.conc, f.horizon)?;
        p.dt = f.dt;
        p.cost = f.cost;
        p.vehicle = f.vehicle;
        let b = &f.bounds;
        if let Some([lo, hi]) = b.speed {
            (p.x_min[3], p.x_max[3]) = (lo, hi);
        }
        if let Some([lo, hi]) = b.steering {
            (p.x_min[4], p.x_max[4]) = (lo, hi);
        }
        if let Some([lo, hi]) = b.acceleration {
            (p.u_min[0], p.u_max[0]) = (lo, hi);
        }
        if let Some([lo, hi]) = b.steering_rate {
            (p.u_min[1], p.u_max[1]) = (lo, hi);
        }
        p.validate()?;
        Ok(p)
    }
}

/// Write one row per knot: `t, x, y, theta, v, delta, s_traveled, u_a,
/// u_delta, risk_bound_t`. The last knot has no control and its control
/// cells are empty.
pub fn write_trajectory_csv(path: &Path, result: &PlanResult, dt: f64) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|err| IoError::Write {
            path: dir.to_path_buf(),
            err,
        })?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "x",
        "y",
        "theta",
        "v",
        "delta",
        "s_traveled",
        "u_a",
        "u_delta",
        "risk_bound_t",
    ])?;
    for (k, x) in result.states.iter().enumerate() {
        let (ua, ud) = match result.controls.get(k) {
            Some(u) => (u.accel.to_string(), u.steer_rate.to_string()),
            None => (String::new(), String::new()),
        };
        let risk = result.risk.get(k).map_or(String::new(), |r| r.total.to_string());
        w.write_record([
            (k as f64 * dt).to_string(),
            x.x.to_string(),
            x.y.to_string(),
            x.theta.to_string(),
            x.v.to_string(),
            x.delta.to_string(),
            x.s.to_string(),
            ua,
            ud,
            risk,
        ])?;
    }
    w.flush().map_err(|err| IoError::Write {
        path: path.to_path_buf(),
        err,
    })?;
    Ok(())
}

/// A polynomial constraint over named variables. Names in `random` are
/// random, every other name is deterministic. Dependence among the random
/// variables is given by `blocks` (groups that are mutually independent)
/// or `independent`; by default all random variables are dependent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressSpec {
    pub polynomial: String,
    #[serde(default)]
    pub random: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub independent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<String>,
}

/// Mean and second-moment expressions for a constraint.
#[derive(Clone, Debug)]
pub struct Expressed {
    pub polynomial: Polynomial,
    pub mean: MomentExpression,
    pub second_moment: MomentExpression,
}

impl ExpressSpec {
    pub fn dialect(&self) -> Result<Dialect, IoError> {
        match &self.dialect {
            None => Ok(Dialect::PlainInfix),
            Some(d) => d.parse().map_err(|_| IoError::Invalid(format!("unknown dialect `{d}`"))),
        }
    }

    pub fn dependencies(&self) -> Result<DependencyStructure, IoError> {
        match (&self.blocks, self.independent) {
            (Some(_), true) => Err(IoError::Invalid("give either `blocks` or `independent`, not both".into())),
            (Some(b), false) => Ok(DependencyStructure::from_blocks(b.clone())?),
            (None, true) => Ok(DependencyStructure::independent(&self.random)),
            (None, false) => Ok(DependencyStructure::fully_dependent()),
        }
    }

    pub fn express(&self) -> Result<Expressed, IoError> {
        if let Some(det) = &self.deterministic {
            if let Some(n) = det.iter().find(|n| self.random.contains(n)) {
                return Err(IoError::Invalid(format!("`{n}` is listed as random and deterministic")));
            }
        }
        let kind = |name: &str| {
            if self.random.iter().any(|r| r == name) {
                VarKind::Random
            } else {
                VarKind::Deterministic
            }
        };
        let polynomial = parse_polynomial(&self.polynomial, &kind).map_err(IoError::Parse)?;
        if let Some(det) = &self.deterministic {
            for v in polynomial.roster().vars() {
                if !self.random.contains(&v.name) && !det.contains(&v.name) {
                    return Err(IoError::Invalid(format!("variable `{}` is not declared", v.name)));
                }
            }
        }
        let deps = self.dependencies()?;
        let (mean, second_moment) = mean_variance_expressions(&polynomial, &deps);
        Ok(Expressed {
            polynomial,
            mean,
            second_moment,
        })
    }
}
