//! Chance-constrained contouring-control NLP and its SQP solver.
//!
//! The horizon has `T` knots `x_0..x_{T−1}` with `x_0` fixed to the initial
//! state and `T − 1` controls, one per interval. Risk rows are imposed at every
//! knot; those at knot 0 depend on no decision variable and are only checked.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodyframe::{
    ellipsoid_from_geometry, point_constraint, AgentGeometry, BoundConstraint, CollisionEllipsoid,
    ConstraintModel, GeometryError, Pose,
};
use crate::distmoments::{DistError, MixturePrediction, PredictionSpec, PLANNER_ORDER};
use crate::mpcc::{
    control_cost, idx, rk4_step, rk4_step_jacobian, state_cost, state_cost_derivatives, ControlJac,
    ControlVec, Control, CostParams, EgoState, ReferencePath, StateJac, StateVec, VehicleParams,
};
use crate::riskbounds::{conc_from_raw, ConcKind, RiskAllocation, RiskError};

type Block = SMatrix<f64, 8, 8>;

/// Risk rows are `ln((S + η)/(ε + η)) ≤ 0` with `η = RISK_FLOOR · ε`, so
/// `∂S = (S + η) ∂row`.
pub const RISK_FLOOR: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("horizon must have at least 2 knots, got {0}")]
    HorizonTooShort(usize),
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("obstacle {obstacle} prediction has {len} steps, need at least {need}")]
    PredictionTooShort { obstacle: usize, len: usize, need: usize },
    #[error("allocation grid is {steps}x{agents}, expected {want_steps}x{want_agents}")]
    AllocationShape {
        steps: usize,
        agents: usize,
        want_steps: usize,
        want_agents: usize,
    },
    #[error("bound {0} has lower > upper")]
    BoundsOrder(String),
    #[error("initial state is not finite")]
    BadInitialState,
    #[error("cost parameters are invalid")]
    BadCost,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

/// How the agent enters the constraints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Moment-based mixture risk bound per knot and circle.
    #[default]
    Stochastic,
    /// Exclude each component mean from the collision ellipse.
    Deterministic,
}

/// One agent circle: its collision ellipse and the prediction of its centre.
#[derive(Clone, Debug)]
pub struct Obstacle {
    pub agent: usize,
    pub ellipsoid: CollisionEllipsoid,
    pub prediction: MixturePrediction,
}

/// Expand an agent prediction into one [`Obstacle`] per covering circle.
/// `headings[t]` orients the circles at step `t`.
pub fn circle_obstacles(
    agent: usize,
    spec: &PredictionSpec,
    geometry: &AgentGeometry,
    headings: &[f64],
    ego_half_length: f64,
    ego_half_width: f64,
) -> Result<Vec<Obstacle>, PlanError> {
    let ellipsoid = ellipsoid_from_geometry(ego_half_length, ego_half_width, geometry.radius)?;
    (0..geometry.num_circles())
        .map(|c| {
            let offsets: Vec<Vec<[f64; 2]>> = spec
                .steps
                .iter()
                .enumerate()
                .map(|(t, s)| {
                    let h = headings.get(t).copied().unwrap_or(0.0);
                    vec![geometry.center_offsets(h)[c]; s.components.len()]
                })
                .collect();
            Ok(Obstacle {
                agent,
                ellipsoid,
                prediction: spec.shifted(&offsets).moments(PLANNER_ORDER)?,
            })
        })
        .collect()
}

/// Per-knot level `eps` for each agent, shared equally by its circles.
pub fn split_allocation(eps: f64, horizon: usize, obstacles: &[Obstacle]) -> Result<RiskAllocation, PlanError> {
    let agents = obstacles.iter().map(|o| o.agent + 1).max().unwrap_or(0);
    let mut count = vec![0usize; agents];
    for o in obstacles {
        count[o.agent] += 1;
    }
    let row: Vec<f64> = obstacles.iter().map(|o| eps / count[o.agent] as f64).collect();
    let distinct = count.iter().filter(|&&c| c > 0).count();
    Ok(RiskAllocation::new(
        vec![row; horizon],
        eps * (horizon * distinct) as f64,
    )?)
}

/// Default limits: `v ∈ [0, 15]`, `δ ∈ [−0.6, 0.6]`, `u_a ∈ [−4, 2]`,
/// `u_δ ∈ [−1, 1]`; position, heading and progress unbounded.
pub fn default_state_bounds() -> ([f64; 6], [f64; 6]) {
    let inf = f64::INFINITY;
    (
        [-inf, -inf, -inf, 0.0, -0.6, -inf],
        [inf, inf, inf, 15.0, 0.6, inf],
    )
}

pub fn default_control_bounds() -> ([f64; 2], [f64; 2]) {
    ([-4.0, -1.0], [2.0, 1.0])
}

#[derive(Clone, Debug)]
pub struct PlanProblem {
    /// Number of knots `T`.
    pub horizon: usize,
    pub dt: f64,
    pub initial: EgoState,
    pub path: ReferencePath,
    pub obstacles: Vec<Obstacle>,
    /// `T × obstacles` per-knot risk budgets.
    pub allocation: RiskAllocation,
    pub conc: ConcKind,
    pub formulation: Formulation,
    pub cost: CostParams,
    pub x_min: [f64; 6],
    pub x_max: [f64; 6],
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub vehicle: VehicleParams,
}

impl PlanProblem {
    /// Problem with default horizon, costs, limits and VP bound, and a
    /// per-knot budget `eps` for every agent.
    pub fn new(
        initial: EgoState,
        path: ReferencePath,
        obstacles: Vec<Obstacle>,
        eps: f64,
    ) -> Result<Self, PlanError> {
        let horizon = 50;
        let (x_min, x_max) = default_state_bounds();
        let (u_min, u_max) = default_control_bounds();
        let p = PlanProblem {
            horizon,
            dt: 0.1,
            initial,
            path,
            allocation: split_allocation(eps, horizon, &obstacles)?,
            obstacles,
            conc: ConcKind::Vp,
            formulation: Formulation::Stochastic,
            cost: CostParams::default(),
            x_min,
            x_max,
            u_min,
            u_max,
            vehicle: VehicleParams::default(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Reset the allocation to `eps` per knot and agent.
    pub fn set_epsilon(&mut self, eps: f64) -> Result<(), PlanError> {
        self.allocation = split_allocation(eps, self.horizon, &self.obstacles)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.horizon < 2 {
            return Err(PlanError::HorizonTooShort(self.horizon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PlanError::BadTimeStep(self.dt));
        }
        if !self.initial.to_vec().iter().all(|v| v.is_finite()) {
            return Err(PlanError::BadInitialState);
        }
        if !self.cost.is_valid() {
            return Err(PlanError::BadCost);
        }
        for (o, ob) in self.obstacles.iter().enumerate() {
            if ob.prediction.len() < self.horizon {
                return Err(PlanError::PredictionTooShort {
                    obstacle: o,
                    len: ob.prediction.len(),
                    need: self.horizon,
                });
            }
        }
        let a = &self.allocation;
        if a.steps() != self.horizon || a.agents() != self.obstacles.len() {
            return Err(PlanError::AllocationShape {
                steps: a.steps(),
                agents: a.agents(),
                want_steps: self.horizon,
                want_agents: self.obstacles.len(),
            });
        }
        for j in 0..6 {
            if self.x_min[j] > self.x_max[j] || self.x_min[j].is_nan() || self.x_max[j].is_nan() {
                return Err(PlanError::BoundsOrder(format!("state {j}")));
            }
        }
        for j in 0..2 {
            if !(self.u_min[j] <= self.u_max[j]) || !self.u_min[j].is_finite() || !self.u_max[j].is_finite() {
                return Err(PlanError::BoundsOrder(format!("control {j}")));
            }
        }
        Ok(())
    }
}

/// What an inequality row constrains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowKind {
    /// `ln((S + η)/(ε + η)) ≤ 0` with `S = Σᵢ wᵢ Conc_i`, `η = 10⁻³ ε`.
    Risk { obstacle: usize },
    ConcStar { obstacle: usize, component: usize },
    /// `1 − Q(a(μᵢ)) ≤ 0`.
    MeanExclusion { obstacle: usize, component: usize },
    StateUpper { index: usize },
    StateLower { index: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct Row {
    pub knot: usize,
    pub kind: RowKind,
    pub value: f64,
    pub grad: StateVec,
}

impl Row {
    fn relaxable(&self) -> bool {
        !matches!(self.kind, RowKind::StateUpper { .. } | RowKind::StateLower { .. })
    }
}

/// Row and variable counts of the assembled NLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlpLayout {
    pub knots: usize,
    pub state_vars: usize,
    pub control_vars: usize,
    pub dynamics_rows: usize,
    pub risk_rows: usize,
    pub conc_star_rows: usize,
    pub mean_rows: usize,
}

impl NlpLayout {
    pub fn num_vars(&self) -> usize {
        self.state_vars + self.control_vars
    }

    pub fn inequality_rows(&self) -> usize {
        self.risk_rows + self.conc_star_rows + self.mean_rows
    }
}

/// A trajectory in the NLP's variables; `states[0]` is the initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct NlpPoint {
    pub states: Vec<StateVec>,
    pub controls: Vec<ControlVec>,
}

/// The assembled NLP: bound moment models for every knot, obstacle and
/// component, plus evaluation of cost, dynamics and inequalities with their
/// first derivatives.
pub struct Nlp<'a> {
    problem: &'a PlanProblem,
    /// Models bound to moments taken about each component's mean, which
    /// is stored alongside; evaluating at the shifted pose avoids
    /// cancellation far from the origin.
    bound: Vec<Vec<Vec<(BoundConstraint, [f64; 2])>>>,
    means: Vec<Vec<Vec<[f64; 2]>>>,
    layout: NlpLayout,
}

pub fn assemble_nlp(problem: &PlanProblem) -> Result<Nlp<'_>, PlanError> {
    problem.validate()?;
    let t = problem.horizon;
    let models: Vec<ConstraintModel> = problem
        .obstacles
        .iter()
        .map(|o| ConstraintModel::new(o.ellipsoid))
        .collect();
    let mut bound = Vec::with_capacity(t);
    let mut means = Vec::with_capacity(t);
    for k in 0..t {
        let mut bk = Vec::with_capacity(models.len());
        let mut mk = Vec::with_capacity(models.len());
        for (o, model) in problem.obstacles.iter().zip(&models) {
            let step = o.prediction.step(k);
            bk.push(
                step.tables
                    .iter()
                    .map(|tab| {
                        let m = tab.mean();
                        let c = [m[0], m[1]];
                        model.bind(&tab.shifted(&[-c[0], -c[1]])).map(|b| (b, c))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            );
            mk.push(
                step.tables
                    .iter()
                    .map(|tab| {
                        let m = tab.mean();
                        [m[0], m[1]]
                    })
                    .collect(),
            );
        }
        bound.push(bk);
        means.push(mk);
    }
    let comps: usize = problem
        .obstacles
        .iter()
        .map(|o| o.prediction.num_components())
        .sum();
    let stochastic = problem.formulation == Formulation::Stochastic;
    let layout = NlpLayout {
        knots: t,
        state_vars: 6 * (t - 1),
        control_vars: 2 * (t - 1),
        dynamics_rows: 6 * (t - 1),
        risk_rows: if stochastic { t * problem.obstacles.len() } else { 0 },
        conc_star_rows: if stochastic { t * comps } else { 0 },
        mean_rows: if stochastic { 0 } else { t * comps },
    };
    Ok(Nlp {
        problem,
        bound,
        means,
        layout,
    })
}

fn pose_of(x: &StateVec) -> Pose {
    Pose::new(x[idx::X], x[idx::Y], x[idx::THETA])
}

fn centred(pose: &Pose, c: &[f64; 2]) -> Pose {
    Pose::new(pose.x - c[0], pose.y - c[1], pose.theta)
}

fn lift(g: [f64; 3]) -> StateVec {
    StateVec::new(g[0], g[1], g[2], 0.0, 0.0, 0.0)
}

/// Bound values at one knot, for reporting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KnotRisk {
    /// `Σᵢ wᵢ Conc_i` per obstacle.
    pub per_obstacle: Vec<f64>,
    /// `Conc_i` per obstacle and component.
    pub per_component: Vec<Vec<f64>>,
    pub conc_star: Vec<Vec<f64>>,
    /// Sum over obstacles: the Boole bound on collision at this knot.
    pub total: f64,
}

impl<'a> Nlp<'a> {
    pub fn layout(&self) -> NlpLayout {
        self.layout
    }

    pub fn problem(&self) -> &PlanProblem {
        self.problem
    }

    /// Constant-control rollout from the initial state, with controls
    /// clipped to their bounds.
    pub fn initial_guess(&self, control: [f64; 2]) -> NlpPoint {
        let p = self.problem;
        let u = ControlVec::new(
            control[0].clamp(p.u_min[0], p.u_max[0]),
            control[1].clamp(p.u_min[1], p.u_max[1]),
        );
        let controls = vec![u; p.horizon - 1];
        NlpPoint {
            states: self.rollout(&controls),
            controls,
        }
    }

    pub fn rollout(&self, controls: &[ControlVec]) -> Vec<StateVec> {
        let p = self.problem;
        let mut xs = Vec::with_capacity(controls.len() + 1);
        xs.push(p.initial.to_vec());
        for u in controls {
            let next = rk4_step(xs.last().expect("non-empty"), u, p.dt, &p.vehicle);
            xs.push(next);
        }
        xs
    }

    /// Per-component bound values at knot `k`.
    pub fn knot_risk(&self, k: usize, x: &StateVec) -> KnotRisk {
        let pose = pose_of(x);
        let mut out = KnotRisk::default();
        for (o, ob) in self.problem.obstacles.iter().enumerate() {
            let w = &ob.prediction.step(k).weights;
            let mut per = Vec::new();
            let mut stars = Vec::new();
            let mut s = 0.0;
            for (i, (b, c)) in self.bound[k][o].iter().enumerate() {
                let m = b.eval(&centred(&pose, c));
                let c = conc_from_raw(m.mean, m.second, self.problem.conc);
                per.push(c.value);
                stars.push(c.conc_star);
                s += w[i] * c.value;
            }
            out.per_obstacle.push(s);
            out.per_component.push(per);
            out.conc_star.push(stars);
            out.total += s;
        }
        out
    }

    /// Inequality rows that depend on knot `k`'s pose.
    pub fn knot_rows(&self, k: usize, x: &StateVec, out: &mut Vec<Row>) {
        let pose = pose_of(x);
        let p = self.problem;
        for (o, ob) in p.obstacles.iter().enumerate() {
            match p.formulation {
                Formulation::Stochastic => {
                    let w = &ob.prediction.step(k).weights;
                    let mut s = 0.0;
                    let mut ds = StateVec::zeros();
                    for (i, (b, c)) in self.bound[k][o].iter().enumerate() {
                        let m = b.eval(&centred(&pose, c));
                        let c = conc_from_raw(m.mean, m.second, p.conc);
                        let dm = lift(m.d_mean);
                        let d2 = lift(m.d_second);
                        s += w[i] * c.value;
                        ds += (dm * c.d_value[0] + d2 * c.d_value[1]) * w[i];
                        out.push(Row {
                            knot: k,
                            kind: RowKind::ConcStar {
                                obstacle: o,
                                component: i,
                            },
                            value: c.conc_star,
                            grad: dm * c.d_conc_star[0] + d2 * c.d_conc_star[1],
                        });
                    }
                    let eps = p.allocation.get(k, o);
                    let eta = RISK_FLOOR * eps;
                    let sp = s.max(0.0) + eta;
                    out.push(Row {
                        knot: k,
                        kind: RowKind::Risk { obstacle: o },
                        value: (sp / (eps + eta)).ln(),
                        grad: ds / sp,
                    });
                }
                Formulation::Deterministic => {
                    for (i, &mu) in self.means[k][o].iter().enumerate() {
                        let (v, g) = point_constraint(&ob.ellipsoid, &pose, mu);
                        out.push(Row {
                            knot: k,
                            kind: RowKind::MeanExclusion {
                                obstacle: o,
                                component: i,
                            },
                            value: -v,
                            grad: -lift(g),
                        });
                    }
                }
            }
        }
    }

    fn bound_rows(&self, k: usize, x: &StateVec, out: &mut Vec<Row>) {
        let p = self.problem;
        for j in 0..6 {
            if p.x_max[j].is_finite() {
                let mut g = StateVec::zeros();
                g[j] = 1.0;
                out.push(Row {
                    knot: k,
                    kind: RowKind::StateUpper { index: j },
                    value: x[j] - p.x_max[j],
                    grad: g,
                });
            }
            if p.x_min[j].is_finite() {
                let mut g = StateVec::zeros();
                g[j] = -1.0;
                out.push(Row {
                    knot: k,
                    kind: RowKind::StateLower { index: j },
                    value: p.x_min[j] - x[j],
                    grad: g,
                });
            }
        }
    }

    pub fn cost(&self, pt: &NlpPoint) -> f64 {
        let p = self.problem;
        pt.states
            .iter()
            .map(|x| state_cost(x, &p.cost, &p.path))
            .sum::<f64>()
            + pt.controls.iter().map(|u| control_cost(u, &p.cost)).sum::<f64>()
    }

    /// Flatten `(x_1..x_{T−1}, u_0..u_{T−2})`.
    pub fn pack(&self, pt: &NlpPoint) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.layout.num_vars());
        for x in &pt.states[1..] {
            z.extend(x.iter());
        }
        for u in &pt.controls {
            z.extend(u.iter());
        }
        z
    }

    pub fn unpack(&self, z: &[f64]) -> NlpPoint {
        let n = self.layout.knots - 1;
        let mut states = vec![self.problem.initial.to_vec()];
        for k in 0..n {
            states.push(StateVec::from_column_slice(&z[6 * k..6 * k + 6]));
        }
        let off = 6 * n;
        let controls = (0..n)
            .map(|k| ControlVec::from_column_slice(&z[off + 2 * k..off + 2 * k + 2]))
            .collect();
        NlpPoint { states, controls }
    }

    pub fn cost_gradient(&self, pt: &NlpPoint) -> Vec<f64> {
        let p = self.problem;
        let n = self.layout.knots - 1;
        let mut g = vec![0.0; self.layout.num_vars()];
        for k in 1..=n {
            let (_, gx, _) = state_cost_derivatives(&pt.states[k], &p.cost, &p.path);
            g[6 * (k - 1)..6 * k].copy_from_slice(gx.as_slice());
        }
        let r = p.cost.r_matrix();
        for (k, u) in pt.controls.iter().enumerate() {
            let gu = (r + r.transpose()) * u;
            g[6 * n + 2 * k..6 * n + 2 * k + 2].copy_from_slice(gu.as_slice());
        }
        g
    }

    /// `x_{k+1} − f_RK4(x_k, u_k)` stacked over intervals.
    pub fn dynamics_residual(&self, pt: &NlpPoint) -> Vec<f64> {
        let p = self.problem;
        let mut r = Vec::with_capacity(self.layout.dynamics_rows);
        for k in 0..pt.controls.len() {
            let f = rk4_step(&pt.states[k], &pt.controls[k], p.dt, &p.vehicle);
            r.extend((pt.states[k + 1] - f).iter());
        }
        r
    }

    pub fn dynamics_jacobian(&self, pt: &NlpPoint) -> DMatrix<f64> {
        let p = self.problem;
        let n = self.layout.knots - 1;
        let mut j = DMatrix::zeros(self.layout.dynamics_rows, self.layout.num_vars());
        for k in 0..n {
            let (_, a, b) = rk4_step_jacobian(&pt.states[k], &pt.controls[k], p.dt, &p.vehicle);
            for r in 0..6 {
                j[(6 * k + r, 6 * k + r)] = 1.0;
                if k > 0 {
                    for c in 0..6 {
                        j[(6 * k + r, 6 * (k - 1) + c)] = -a[(r, c)];
                    }
                }
                for c in 0..2 {
                    j[(6 * k + r, 6 * n + 2 * k + c)] = -b[(r, c)];
                }
            }
        }
        j
    }

    /// Risk, Conc* and mean-exclusion rows at every knot, knot 0 included.
    pub fn inequalities(&self, pt: &NlpPoint) -> Vec<Row> {
        let mut rows = Vec::new();
        for (k, x) in pt.states.iter().enumerate() {
            self.knot_rows(k, x, &mut rows);
        }
        rows
    }

    pub fn inequality_jacobian(&self, rows: &[Row]) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(rows.len(), self.layout.num_vars());
        for (i, r) in rows.iter().enumerate() {
            if r.knot > 0 {
                for c in 0..6 {
                    j[(i, 6 * (r.knot - 1) + c)] = r.grad[c];
                }
            }
        }
        j
    }

    /// Lower and upper variable bounds in packed order.
    pub fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.problem;
        let n = self.layout.knots - 1;
        let mut lo = Vec::with_capacity(self.layout.num_vars());
        let mut hi = Vec::with_capacity(self.layout.num_vars());
        for _ in 0..n {
            lo.extend(p.x_min);
            hi.extend(p.x_max);
        }
        for _ in 0..n {
            lo.extend(p.u_min);
            hi.extend(p.u_max);
        }
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub kkt_tol: f64,
    /// Allowed violation of any inequality row at a converged point.
    pub feas_tol: f64,
    pub initial_control: [f64; 2],
    /// Relax risk rows by a shared penalised slack. Voids the risk guarantee.
    pub soft_constraints: bool,
    pub soft_penalty: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 200,
            kkt_tol: 1e-6,
            feas_tol: 1e-9,
            initial_control: [0.0, 0.0],
            soft_constraints: false,
            soft_penalty: 1e4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub dynamics: f64,
    pub state_bounds: f64,
    pub control_bounds: f64,
    pub risk: f64,
    pub conc_star: f64,
    pub mean_exclusion: f64,
    pub stationarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub status: SolveStatus,
    /// `T` states; the first is the initial state.
    pub states: Vec<EgoState>,
    /// `T − 1` controls.
    pub controls: Vec<Control>,
    pub risk: Vec<KnotRisk>,
    /// `Σ_t Σ_obstacles` bound values.
    pub total_risk_bound: f64,
    pub cost: f64,
    pub iterations: usize,
    pub solve_time_ms: f64,
    pub residuals: Residuals,
    pub formulation: Formulation,
    pub conc: ConcKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_slack: Option<f64>,
}

impl PlanResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn state_vecs(&self) -> Vec<StateVec> {
        self.states.iter().map(EgoState::to_vec).collect()
    }

    pub fn control_vecs(&self) -> Vec<ControlVec> {
        self.controls.iter().map(Control::to_vec).collect()
    }
}

/// Iterate data without derivatives.
struct Eval {
    xs: Vec<StateVec>,
    cost: f64,
    rows: Vec<Row>,
}

/// First-order data at an iterate.
struct Derivs {
    a: Vec<StateJac>,
    b: Vec<ControlJac>,
    /// Row block `6k..6k+6` is `∂x_k/∂u`.
    sens: DMatrix<f64>,
    gx: Vec<StateVec>,
    gu: Vec<ControlVec>,
    gn: Vec<StateJac>,
}

struct Sqp<'n, 'a> {
    nlp: &'n Nlp<'a>,
    cfg: &'n SolverConfig,
    n: usize,
    m: usize,
    soft: bool,
}

struct QpOut {
    d: DVector<f64>,
    dsigma: f64,
    theta: f64,
    row_mult: Vec<f64>,
    hd_norm: f64,
    quad: f64,
}

impl<'n, 'a> Sqp<'n, 'a> {
    fn eval(&self, u: &[ControlVec]) -> Eval {
        let p = self.nlp.problem;
        let xs = self.nlp.rollout(u);
        let cost = xs.iter().map(|x| state_cost(x, &p.cost, &p.path)).sum::<f64>()
            + u.iter().map(|v| control_cost(v, &p.cost)).sum::<f64>();
        let mut rows = Vec::new();
        for (k, x) in xs.iter().enumerate().skip(1) {
            self.nlp.knot_rows(k, x, &mut rows);
            self.nlp.bound_rows(k, x, &mut rows);
        }
        Eval { xs, cost, rows }
    }

    fn derivs(&self, e: &Eval, u: &[ControlVec]) -> Derivs {
        let p = self.nlp.problem;
        let (n, m) = (self.n, self.m);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut sens = DMatrix::zeros(6 * (n + 1), m);
        for k in 0..n {
            let (_, ak, bk) = rk4_step_jacobian(&e.xs[k], &u[k], p.dt, &p.vehicle);
            if k > 0 {
                let prev = sens.view((6 * k, 0), (6, 2 * k)).clone_owned();
                let next = ak * prev;
                sens.view_mut((6 * (k + 1), 0), (6, 2 * k)).copy_from(&next);
            }
            sens.view_mut((6 * (k + 1), 2 * k), (6, 2)).copy_from(&bk);
            a.push(ak);
            b.push(bk);
        }
        let r = p.cost.r_matrix();
        let mut gx = Vec::with_capacity(n + 1);
        let mut gn = Vec::with_capacity(n + 1);
        for x in &e.xs {
            let (_, g, h) = state_cost_derivatives(x, &p.cost, &p.path);
            gx.push(g);
            gn.push(h);
        }
        let gu = u.iter().map(|v| (r + r.transpose()) * v).collect();
        Derivs {
            a,
            b,
            sens,
            gx,
            gu,
            gn,
        }
    }

    fn initial_blocks(&self, d: &Derivs) -> Vec<Block> {
        let r = self.nlp.problem.cost.r_matrix();
        let r2 = r + r.transpose();
        (0..=self.n)
            .map(|k| {
                let mut h = Block::zeros();
                let gn = d.gn[k];
                let scale = gn.diagonal().amax().max(1.0);
                h.fixed_view_mut::<6, 6>(0, 0)
                    .copy_from(&(gn + StateJac::identity() * (1e-3 * scale)));
                h.fixed_view_mut::<2, 2>(6, 6).copy_from(&r2);
                h
            })
            .collect()
    }

    /// Reduced gradient of the cost in the controls.
    fn reduced_gradient(&self, d: &Derivs) -> DVector<f64> {
        let n = self.n;
        let mut g = DVector::zeros(self.m);
        let mut lam = d.gx[n];
        for k in (0..n).rev() {
            let gk = d.gu[k] + d.b[k].transpose() * lam;
            g[2 * k] = gk[0];
            g[2 * k + 1] = gk[1];
            lam = d.gx[k] + d.a[k].transpose() * lam;
        }
        g
    }

    fn reduced_hessian(&self, d: &Derivs, blocks: &[Block]) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut h = DMatrix::zeros(m, m);
        for k in 0..=n {
            let cols = (2 * k + 2).min(m);
            let mut e = DMatrix::zeros(8, cols);
            if k > 0 {
                e.view_mut((0, 0), (6, 2 * k))
                    .copy_from(&d.sens.view((6 * k, 0), (6, 2 * k)));
            }
            if k < n {
                e[(6, 2 * k)] = 1.0;
                e[(7, 2 * k + 1)] = 1.0;
            }
            let bk = DMatrix::from_column_slice(8, 8, blocks[k].as_slice());
            let w = &bk * &e;
            let contrib = e.transpose() * w;
            let mut v = h.view_mut((0, 0), (cols, cols));
            v += contrib;
        }
        let sym = (&h + h.transpose()) * 0.5;
        sym + DMatrix::identity(m, m) * 1e-10
    }

    /// Solve the condensed QP. `values` replaces row values (for second-order
    /// correction); `homotopy` scales violated rows by a relaxation variable.
    #[allow(clippy::too_many_arguments)]
    fn solve_qp(
        &self,
        u: &[ControlVec],
        sigma: f64,
        e: &Eval,
        d: &Derivs,
        hr: &DMatrix<f64>,
        g: &DVector<f64>,
        values: &[f64],
        homotopy: bool,
    ) -> Option<QpOut> {
        let p = self.nlp.problem;
        let m = self.m;
        let si = m;
        let ti = m + usize::from(self.soft);
        let nv = ti + usize::from(homotopy);
        let big = 1e6 * (1.0 + e.cost.abs());

        let mut q = DMatrix::zeros(nv, nv);
        q.view_mut((0, 0), (m, m)).copy_from(hr);
        let mut c = vec![0.0; nv];
        c[..m].copy_from_slice(g.as_slice());
        if self.soft {
            q[(si, si)] = 1e-6;
            c[si] = self.cfg.soft_penalty;
        }
        if homotopy {
            q[(ti, ti)] = big;
            c[ti] = -big;
        }

        let mut amat: Vec<f64> = Vec::new();
        let mut bvec: Vec<f64> = Vec::new();
        let push = |coef: &[(usize, f64)], rhs: f64, amat: &mut Vec<f64>, bvec: &mut Vec<f64>| {
            let start = amat.len();
            amat.resize(start + nv, 0.0);
            for &(i, v) in coef {
                amat[start + i] += v;
            }
            bvec.push(rhs);
        };
        for (k, uk) in u.iter().enumerate() {
            for j in 0..2 {
                push(&[(2 * k + j, 1.0)], p.u_max[j] - uk[j], &mut amat, &mut bvec);
                push(&[(2 * k + j, -1.0)], uk[j] - p.u_min[j], &mut amat, &mut bvec);
            }
        }
        if self.soft {
            push(&[(si, -1.0)], sigma, &mut amat, &mut bvec);
        }
        if homotopy {
            push(&[(ti, -1.0)], 0.0, &mut amat, &mut bvec);
            push(&[(ti, 1.0)], 1.0, &mut amat, &mut bvec);
        }
        let first_row = bvec.len();
        for (r, &val) in e.rows.iter().zip(values) {
            let start = amat.len();
            amat.resize(start + nv, 0.0);
            let cols = 2 * r.knot;
            let s = d.sens.view((6 * r.knot, 0), (6, cols));
            let a = r.grad.transpose() * s;
            amat[start..start + cols].copy_from_slice(a.as_slice());
            let relax = self.soft && r.relaxable();
            let eff = if relax { val - sigma } else { val };
            if relax {
                amat[start + si] = -1.0;
            }
            if homotopy && eff > 0.0 {
                amat[start + ti] = eff;
                bvec.push(0.0);
            } else {
                bvec.push(-eff);
            }
        }

        let mut qm = q.transpose().as_slice().to_vec();
        let sol = quadprog::solve_qp(&mut qm, &c, &amat, &bvec, 0, false).ok()?;
        let x = DVector::from_column_slice(&sol.sol);
        let dvec = x.rows(0, m).into_owned();
        let hd = hr * &dvec;
        Some(QpOut {
            hd_norm: hd.amax(),
            quad: 0.5 * dvec.dot(&hd),
            d: dvec,
            dsigma: if self.soft { x[si] } else { 0.0 },
            theta: if homotopy { x[ti] } else { 1.0 },
            row_mult: sol.lagr[first_row..].to_vec(),
        })
    }

    fn violation(&self, rows: &[Row], values: &[f64], sigma: f64) -> f64 {
        rows.iter()
            .zip(values)
            .map(|(r, &v)| {
                let eff = if self.soft && r.relaxable() { v - sigma } else { v };
                eff.max(0.0)
            })
            .sum()
    }

    fn merit(&self, e: &Eval, sigma: f64, nu: f64) -> f64 {
        let vals: Vec<f64> = e.rows.iter().map(|r| r.value).collect();
        let soft = if self.soft { self.cfg.soft_penalty * sigma } else { 0.0 };
        e.cost + soft + nu * self.violation(&e.rows, &vals, sigma)
    }

    /// Dynamics multipliers from the adjoint recursion.
    fn adjoint(&self, e: &Eval, d: &Derivs, mu: &[f64]) -> Vec<StateVec> {
        let n = self.n;
        let mut gx: Vec<StateVec> = d.gx.clone();
        for (r, &w) in e.rows.iter().zip(mu) {
            if w != 0.0 {
                gx[r.knot] += r.grad * w;
            }
        }
        let mut lam = vec![StateVec::zeros(); n + 1];
        lam[n] = gx[n];
        for k in (1..n).rev() {
            lam[k] = gx[k] + d.a[k].transpose() * lam[k + 1];
        }
        lam
    }

    /// Per-stage Lagrangian Hessians by central differences of the analytic
    /// block gradient, projected onto the positive semidefinite cone.
    fn lagrangian_blocks(
        &self,
        e: &Eval,
        u: &[ControlVec],
        lam: &[StateVec],
        mu: &[f64],
    ) -> Vec<Block> {
        let p = self.nlp.problem;
        let n = self.n;
        let r2 = p.cost.r_matrix() + p.cost.r_matrix().transpose();
        let mut knot_mu: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        let mut any = vec![false; n + 1];
        for (r, &w) in e.rows.iter().zip(mu) {
            if !matches!(r.kind, RowKind::StateUpper { .. } | RowKind::StateLower { .. }) {
                knot_mu[r.knot].push(w);
                any[r.knot] |= w != 0.0;
            }
        }
        (0..=n)
            .into_par_iter()
            .map(|k| {
                let grad = |z: &SMatrix<f64, 8, 1>| -> SMatrix<f64, 8, 1> {
                    let x: StateVec = z.fixed_rows::<6>(0).into_owned();
                    let (_, mut gx, _) = state_cost_derivatives(&x, &p.cost, &p.path);
                    if any[k] {
                        let mut rows = Vec::new();
                        self.nlp.knot_rows(k, &x, &mut rows);
                        for (r, &w) in rows.iter().zip(&knot_mu[k]) {
                            gx += r.grad * w;
                        }
                    }
                    let mut out = SMatrix::<f64, 8, 1>::zeros();
                    if k < n {
                        let uk = ControlVec::new(z[6], z[7]);
                        let (_, a, b) = rk4_step_jacobian(&x, &uk, p.dt, &p.vehicle);
                        gx += a.transpose() * lam[k + 1];
                        let gu = r2 * uk + b.transpose() * lam[k + 1];
                        out[6] = gu[0];
                        out[7] = gu[1];
                    }
                    out.fixed_rows_mut::<6>(0).copy_from(&gx);
                    out
                };
                let mut z = SMatrix::<f64, 8, 1>::zeros();
                z.fixed_rows_mut::<6>(0).copy_from(&e.xs[k]);
                if k < n {
                    z[6] = u[k][0];
                    z[7] = u[k][1];
                }
                let dim = if k < n { 8 } else { 6 };
                let mut h = Block::zeros();
                for i in 0..dim {
                    let step = 1e-5 * (1.0 + z[i].abs());
                    let mut zp = z;
                    let mut zm = z;
                    zp[i] += step;
                    zm[i] -= step;
                    h.set_column(i, &((grad(&zp) - grad(&zm)) / (2.0 * step)));
                }
                if k == n {
                    h.fixed_view_mut::<2, 2>(6, 6).copy_from(&r2);
                }
                project_psd(&((h + h.transpose()) * 0.5))
            })
            .collect()
    }

    fn run(&self) -> (Vec<ControlVec>, f64, SolveStatus, usize, f64) {
        let cfg = self.cfg;
        let guess = self.nlp.initial_guess(cfg.initial_control);
        let mut u = guess.controls;
        let mut sigma = 0.0;
        let mut e = self.eval(&u);
        if self.soft {
            sigma = e
                .rows
                .iter()
                .filter(|r| r.relaxable())
                .map(|r| r.value)
                .fold(0.0, f64::max);
        }
        let mut d = self.derivs(&e, &u);
        let mut blocks = self.initial_blocks(&d);
        let mut nu = 1.0f64;
        let mut stationarity = f64::INFINITY;
        let mut failures = 0;

        for iter in 0..cfg.max_iter {
            let g = self.reduced_gradient(&d);
            let hr = self.reduced_hessian(&d, &blocks);
            let values: Vec<f64> = e.rows.iter().map(|r| r.value).collect();
            let mut qp = self.solve_qp(&u, sigma, &e, &d, &hr, &g, &values, false);
            let mut homotopy = false;
            if qp.is_none() {
                homotopy = true;
                qp = self.solve_qp(&u, sigma, &e, &d, &hr, &g, &values, true);
            }
            let Some(qp) = qp else {
                return (u, sigma, SolveStatus::Infeasible, iter, stationarity);
            };

            let viol_now = self.violation(&e.rows, &values, sigma);
            let gscale = 1.0 + g.amax();
            stationarity = qp.hd_norm / gscale;
            let compl = e
                .rows
                .iter()
                .zip(&qp.row_mult)
                .map(|(r, &w)| (w * r.value).abs())
                .fold(0.0, f64::max)
                / gscale;
            let max_viol = e
                .rows
                .iter()
                .map(|r| {
                    if self.soft && r.relaxable() {
                        r.value - sigma
                    } else {
                        r.value
                    }
                })
                .fold(0.0, f64::max);
            if !homotopy
                && max_viol <= cfg.feas_tol
                && stationarity <= cfg.kkt_tol
                && compl <= cfg.kkt_tol
            {
                let status = if self.soft && sigma > cfg.feas_tol {
                    SolveStatus::Infeasible
                } else {
                    SolveStatus::Converged
                };
                return (u, sigma, status, iter, stationarity);
            }
            if homotopy && qp.theta <= 1e-10 && qp.d.amax() <= 1e-12 {
                return (u, sigma, SolveStatus::Infeasible, iter, stationarity);
            }

            // Linearised violation after the step.
            let lin_vals: Vec<f64> = e
                .rows
                .iter()
                .map(|r| {
                    let cols = 2 * r.knot;
                    let s = d.sens.view((6 * r.knot, 0), (6, cols));
                    let a = r.grad.transpose() * s;
                    let relax = self.soft && r.relaxable();
                    r.value + a.dot(&qp.d.rows(0, cols).transpose()) - if relax { qp.dsigma } else { 0.0 }
                })
                .collect();
            let viol_lin = self.violation(&e.rows, &lin_vals, sigma);
            let max_mult = qp.row_mult.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let lin_obj = g.dot(&qp.d) + if self.soft { cfg.soft_penalty * qp.dsigma } else { 0.0 };
            nu = nu.max(1.1 * max_mult + 1e-3);
            if viol_now - viol_lin > 1e-14 {
                let need = (lin_obj + qp.quad) / (0.9 * (viol_now - viol_lin));
                if need > nu {
                    nu = need * 1.05;
                }
            }
            let dphi = lin_obj + nu * (viol_lin - viol_now);
            let phi0 = self.merit(&e, sigma, nu);
            // Allowance for rounding in the merit value near convergence.
            let noise = 10.0 * f64::EPSILON * (1.0 + phi0.abs());

            let step = |alpha: f64, dir: &DVector<f64>, ds: f64| -> (Vec<ControlVec>, f64) {
                let p = self.nlp.problem;
                let un: Vec<ControlVec> = u
                    .iter()
                    .enumerate()
                    .map(|(k, uk)| {
                        let v = uk + ControlVec::new(dir[2 * k], dir[2 * k + 1]) * alpha;
                        ControlVec::new(
                            v[0].clamp(p.u_min[0], p.u_max[0]),
                            v[1].clamp(p.u_min[1], p.u_max[1]),
                        )
                    })
                    .collect();
                (un, (sigma + alpha * ds).max(0.0))
            };

            let mut accepted: Option<(Vec<ControlVec>, f64, Eval)> = None;
            let (u1, s1) = step(1.0, &qp.d, qp.dsigma);
            let e1 = self.eval(&u1);
            if self.merit(&e1, s1, nu) <= phi0 + 1e-4 * dphi.min(0.0) + noise {
                accepted = Some((u1, s1, e1));
            } else if !homotopy {
                // Second-order correction against curvature of active rows.
                let soc_vals: Vec<f64> = e1
                    .rows
                    .iter()
                    .zip(e.rows.iter().zip(&lin_vals))
                    .map(|(r1, (r0, &lin))| r1.value - (lin - r0.value))
                    .collect();
                if let Some(corr) = self.solve_qp(&u, sigma, &e, &d, &hr, &g, &soc_vals, false) {
                    let (u2, s2) = step(1.0, &corr.d, corr.dsigma);
                    let e2 = self.eval(&u2);
                    if self.merit(&e2, s2, nu) <= phi0 + 1e-4 * dphi.min(0.0) + noise {
                        accepted = Some((u2, s2, e2));
                    }
                }
            }
            if accepted.is_none() {
                let mut alpha = 0.5;
                while alpha > 1e-10 {
                    let (ua, sa) = step(alpha, &qp.d, qp.dsigma);
                    let ea = self.eval(&ua);
                    if self.merit(&ea, sa, nu) <= phi0 + 1e-4 * alpha * dphi.min(0.0) + noise {
                        accepted = Some((ua, sa, ea));
                        break;
                    }
                    alpha *= 0.5;
                }
            }
            let Some((un, sn, en)) = accepted else {
                failures += 1;
                if failures >= 2 {
                    let status = if max_viol <= cfg.feas_tol {
                        SolveStatus::MaxIterations
                    } else {
                        SolveStatus::Infeasible
                    };
                    return (u, sigma, status, iter + 1, stationarity);
                }
                blocks = self.initial_blocks(&d);
                continue;
            };
            failures = 0;

            let dn = self.derivs(&en, &un);
            let lam = self.adjoint(&en, &dn, &qp.row_mult);
            blocks = self.lagrangian_blocks(&en, &un, &lam, &qp.row_mult);
            u = un;
            sigma = sn;
            e = en;
            d = dn;
        }
        let max_viol = e.rows.iter().map(|r| r.value).fold(0.0, f64::max);
        let status = if max_viol <= cfg.feas_tol {
            SolveStatus::MaxIterations
        } else {
            SolveStatus::Infeasible
        };
        (u, sigma, status, cfg.max_iter, stationarity)
    }
}

/// Clamp eigenvalues from below so the block is positive semidefinite with
/// a small relative floor.
fn project_psd(h: &Block) -> Block {
    let eig = h.symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1.0);
    let floor = 1e-8 * top;
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    eig.eigenvectors * Block::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Solve the chance-constrained NLP from the constant-control guess.
pub fn solve(problem: &PlanProblem, config: &SolverConfig) -> Result<PlanResult, PlanError> {
    let start = Instant::now();
    let nlp = assemble_nlp(problem)?;
    let n = problem.horizon - 1;
    let sqp = Sqp {
        nlp: &nlp,
        cfg: config,
        n,
        m: 2 * n,
        soft: config.soft_constraints,
    };

    // Rows at knot 0 are fixed by the initial state.
    let mut rows0 = Vec::new();
    nlp.knot_rows(0, &problem.initial.to_vec(), &mut rows0);
    let infeasible0 = rows0.iter().any(|r| r.value > config.feas_tol) && !config.soft_constraints;

    let (controls, sigma, status, iterations, stationarity) = if infeasible0 {
        let guess = nlp.initial_guess(config.initial_control);
        (guess.controls, 0.0, SolveStatus::Infeasible, 0, f64::INFINITY)
    } else {
        sqp.run()
    };
    let states = nlp.rollout(&controls);
    let pt = NlpPoint {
        states: states.clone(),
        controls: controls.clone(),
    };
    let risk: Vec<KnotRisk> = states
        .iter()
        .enumerate()
        .map(|(k, x)| nlp.knot_risk(k, x))
        .collect();
    let report = feasibility_of(&nlp, &pt);
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    Ok(PlanResult {
        status,
        states: states.iter().map(EgoState::from_vec).collect(),
        controls: controls.iter().map(Control::from_vec).collect(),
        total_risk_bound: risk.iter().map(|r| r.total).sum(),
        risk,
        cost: nlp.cost(&pt),
        iterations,
        solve_time_ms: elapsed,
        residuals: Residuals {
            stationarity,
            ..report.residuals()
        },
        formulation: problem.formulation,
        conc: problem.conc,
        soft_slack: config.soft_constraints.then_some(sigma),
    })
}

/// Independent re-evaluation of every constraint on a trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `‖x_{k+1} − f_RK4(x_k, u_k)‖∞`, including `x_0` against the initial state.
    pub dynamics: f64,
    pub state_bounds: f64,
    pub control_bounds: f64,
    /// Largest `Σᵢ wᵢ Conc_i − ε_t` over knots and obstacles.
    pub risk_excess: f64,
    pub max_conc_star: f64,
    pub mean_exclusion: f64,
    /// `(knot, obstacle, component)` with `Conc* > 10⁻⁹`.
    pub invalid_components: Vec<(usize, usize, usize)>,
    /// All residuals within `10⁻⁶`, risk within `10⁻⁹` and every Conc* valid.
    pub feasible: bool,
}

impl FeasibilityReport {
    fn residuals(&self) -> Residuals {
        Residuals {
            dynamics: self.dynamics,
            state_bounds: self.state_bounds,
            control_bounds: self.control_bounds,
            risk: self.risk_excess.max(0.0),
            conc_star: self.max_conc_star.max(0.0),
            mean_exclusion: self.mean_exclusion.max(0.0),
            stationarity: 0.0,
        }
    }
}

fn feasibility_of(nlp: &Nlp<'_>, pt: &NlpPoint) -> FeasibilityReport {
    let p = nlp.problem;
    let mut rep = FeasibilityReport {
        risk_excess: f64::NEG_INFINITY,
        max_conc_star: f64::NEG_INFINITY,
        ..Default::default()
    };
    let x0 = p.initial.to_vec();
    rep.dynamics = pt.states.first().map_or(f64::INFINITY, |x| (x - x0).amax());
    if pt.states.len() != p.horizon || pt.controls.len() + 1 != p.horizon {
        rep.dynamics = f64::INFINITY;
        return rep;
    }
    rep.dynamics = rep
        .dynamics
        .max(nlp.dynamics_residual(pt).iter().fold(0.0, |a, v| a.max(v.abs())));
    for x in &pt.states[1..] {
        for j in 0..6 {
            rep.state_bounds = rep
                .state_bounds
                .max(x[j] - p.x_max[j])
                .max(p.x_min[j] - x[j]);
        }
    }
    for u in &pt.controls {
        for j in 0..2 {
            rep.control_bounds = rep
                .control_bounds
                .max(u[j] - p.u_max[j])
                .max(p.u_min[j] - u[j]);
        }
    }
    for (k, x) in pt.states.iter().enumerate() {
        let kr = nlp.knot_risk(k, x);
        if p.formulation == Formulation::Stochastic {
            for (o, s) in kr.per_obstacle.iter().enumerate() {
                rep.risk_excess = rep.risk_excess.max(s - p.allocation.get(k, o));
            }
            for (o, stars) in kr.conc_star.iter().enumerate() {
                for (i, &c) in stars.iter().enumerate() {
                    rep.max_conc_star = rep.max_conc_star.max(c);
                    if c > 1e-9 {
                        rep.invalid_components.push((k, o, i));
                    }
                }
            }
        } else {
            let pose = pose_of(x);
            for (o, ob) in p.obstacles.iter().enumerate() {
                for mu in &nlp.means[k][o] {
                    let (v, _) = point_constraint(&ob.ellipsoid, &pose, *mu);
                    rep.mean_exclusion = rep.mean_exclusion.max(-v);
                }
            }
        }
    }
    if p.obstacles.is_empty() || p.formulation == Formulation::Deterministic {
        rep.risk_excess = rep.risk_excess.max(0.0);
        rep.max_conc_star = rep.max_conc_star.max(0.0);
        if p.formulation == Formulation::Deterministic {
            rep.risk_excess = 0.0;
            rep.max_conc_star = 0.0;
        }
    }
    rep.feasible = rep.dynamics <= 1e-6
        && rep.state_bounds <= 1e-6
        && rep.control_bounds <= 1e-6
        && rep.risk_excess <= 1e-9
        && rep.invalid_components.is_empty()
        && rep.mean_exclusion <= 1e-6;
    rep
}

/// Re-check a result against its problem without trusting its status.
pub fn check_feasibility(result: &PlanResult, problem: &PlanProblem) -> Result<FeasibilityReport, PlanError> {
    let nlp = assemble_nlp(problem)?;
    let pt = NlpPoint {
        states: result.state_vecs(),
        controls: result.control_vecs(),
    };
    Ok(feasibility_of(&nlp, &pt))
}
