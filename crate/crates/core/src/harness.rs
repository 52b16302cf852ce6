//! U-turn scenarios, Monte Carlo validation of planned trajectories, batch
//! experiments and static plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodyframe::{agent_circles, ellipsoid_from_geometry, AgentGeometry};
use crate::distmoments::{DistError, GaussianMixture, GaussianSpec, PredictionSpec};
use crate::mpcc::{arc_length_scale, EgoState, ReferencePath};
use crate::planner::{
    circle_obstacles, solve, Formulation, PlanError, PlanProblem, PlanResult, SolveStatus,
    SolverConfig,
};
use crate::riskbounds::ConcKind;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("could not build a non-degenerate path after {0} attempts")]
    DegeneratePath(usize),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty epsilon grid or scenario list")]
    EmptyBatch,
}

/// Rectangle footprint of a vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Footprint {
            length: 4.5,
            width: 1.8,
        }
    }
}

/// An agent described by mixture endpoints at `t = 0` and `t = T·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub footprint: Footprint,
    pub start: GaussianMixture,
    pub end: GaussianMixture,
    /// Per-component truncation in standard deviations; `None` entries
    /// (and a missing list) fall back to the scenario default.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trunc_k: Vec<Option<f64>>,
}

impl AgentSpec {
    /// Linearly interpolated prediction with `horizon + 1` steps.
    pub fn prediction(&self, horizon: usize) -> Result<PredictionSpec, DistError> {
        PredictionSpec::interpolate(&self.start, &self.end, horizon)
    }

    /// Heading along the displacement of the mixture mean.
    pub fn heading(&self) -> f64 {
        let m = |g: &GaussianMixture| {
            g.weights
                .iter()
                .zip(&g.components)
                .fold([0.0, 0.0], |a, (w, c)| [a[0] + w * c.mean[0], a[1] + w * c.mean[1]])
        };
        let (a, b) = (m(&self.start), m(&self.end));
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        if dx == 0.0 && dy == 0.0 {
            0.0
        } else {
            dy.atan2(dx)
        }
    }

    pub fn geometry(&self) -> AgentGeometry {
        agent_circles(self.footprint.length, self.footprint.width)
            .expect("footprint validated on construction")
    }
}

/// Mixture mean at each step.
pub fn mixture_means(spec: &PredictionSpec) -> Vec<[f64; 2]> {
    spec.steps
        .iter()
        .map(|s| {
            s.weights
                .iter()
                .zip(&s.components)
                .fold([0.0, 0.0], |a, (w, c)| {
                    let m = c.base().mean;
                    [a[0] + w * m[0], a[1] + w * m[1]]
                })
        })
        .collect()
}

/// How the agent prediction enters a batch run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchFormulation {
    Deterministic,
    Gmm,
    TruncatedGmm,
}

impl BatchFormulation {
    pub fn name(self) -> &'static str {
        match self {
            BatchFormulation::Deterministic => "deterministic",
            BatchFormulation::Gmm => "gmm",
            BatchFormulation::TruncatedGmm => "truncated_gmm",
        }
    }
}

/// Base U-turn in the unit parameter: `(0,0)` heading `+x`, apex near
/// `(15, 7.5)`, exit at `(0, 15)` heading `−x`.
pub const UTURN_CX: [f64; 4] = [0.0, 60.0, -60.0, 0.0];
pub const UTURN_CY: [f64; 4] = [0.0, 0.0, 45.0, -30.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub perturbation: f64,
    pub path: ReferencePath,
    pub initial: EgoState,
    pub ego: Footprint,
    pub agents: Vec<AgentSpec>,
    /// Per-knot truncation in standard deviations for the truncated variant.
    pub trunc_k: f64,
}

fn iso(mean: [f64; 2], sd: f64) -> GaussianSpec {
    GaussianSpec::isotropic(mean, sd)
}

/// Oncoming vehicle approaching the apex from outside the turn, either
/// continuing straight or veering away.
pub fn canonical_agent() -> AgentSpec {
    AgentSpec {
        footprint: Footprint::default(),
        start: GaussianMixture::new(
            vec![0.7, 0.3],
            vec![iso([34.0, 9.0], 0.02), iso([34.0, 9.0], 0.02)],
        )
        .expect("valid mixture"),
        end: GaussianMixture::new(
            vec![0.7, 0.3],
            vec![iso([20.0, 9.0], 0.06), iso([23.0, 12.5], 0.06)],
        )
        .expect("valid mixture"),
        trunc_k: Vec::new(),
    }
}

/// U-turn scenario with coefficients scaled by `1 + U(−scale, scale)`.
/// Zero scale gives the canonical scenario.
pub fn make_uturn_scenario(seed: u64, scale: f64) -> Result<Scenario, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ATTEMPTS: usize = 32;
    for _ in 0..ATTEMPTS {
        let mut cx = UTURN_CX;
        let mut cy = UTURN_CY;
        if scale > 0.0 {
            for c in cx.iter_mut().chain(cy.iter_mut()) {
                *c *= 1.0 + rng.random_range(-scale..=scale);
            }
        }
        let Ok(unit) = ReferencePath::unit(cx, cy) else {
            continue;
        };
        let Ok(path) = arc_length_scale(&unit) else {
            continue;
        };
        let theta = path.heading(0.0);
        let (x, y) = path.point(0.0);
        return Ok(Scenario {
            seed,
            perturbation: scale,
            initial: EgoState {
                x,
                y,
                theta,
                v: 5.0,
                delta: 0.0,
                s: 0.0,
            },
            path,
            ego: Footprint::default(),
            agents: vec![canonical_agent()],
            trunc_k: 2.0,
        });
    }
    Err(HarnessError::DegeneratePath(ATTEMPTS))
}

pub fn canonical_scenario() -> Scenario {
    make_uturn_scenario(0, 0.0).expect("base U-turn is regular")
}

impl Scenario {
    /// Agent predictions over `horizon` intervals, truncated when asked.
    pub fn predictions(&self, horizon: usize, truncate: bool) -> Result<Vec<PredictionSpec>, HarnessError> {
        self.agents
            .iter()
            .map(|a| {
                let p = a.prediction(horizon)?;
                if !truncate {
                    return Ok(p);
                }
                let ks: Vec<f64> = (0..p.num_components())
                    .map(|i| a.trunc_k.get(i).copied().flatten().unwrap_or(self.trunc_k))
                    .collect();
                Ok(p.truncated_per_component(&ks)?)
            })
            .collect()
    }

    pub fn problem(
        &self,
        eps: f64,
        formulation: BatchFormulation,
        conc: ConcKind,
    ) -> Result<PlanProblem, HarnessError> {
        self.problem_with_horizon(eps, formulation, conc, 50)
    }

    /// As [`Scenario::problem`] with `horizon` knots; predictions cover the
    /// same interval count.
    pub fn problem_with_horizon(
        &self,
        eps: f64,
        formulation: BatchFormulation,
        conc: ConcKind,
        horizon: usize,
    ) -> Result<PlanProblem, HarnessError> {
        let truncate = formulation == BatchFormulation::TruncatedGmm;
        let preds = self.predictions(horizon, truncate)?;
        let mut obstacles = Vec::new();
        for (i, (a, p)) in self.agents.iter().zip(&preds).enumerate() {
            let headings = vec![a.heading(); p.len()];
            obstacles.extend(circle_obstacles(
                i,
                p,
                &a.geometry(),
                &headings,
                0.5 * self.ego.length,
                0.5 * self.ego.width,
            )?);
        }
        let mut prob = PlanProblem::new(self.initial, self.path.clone(), obstacles, eps)?;
        if horizon != prob.horizon {
            prob.horizon = horizon;
            prob.set_epsilon(eps)?;
            prob.validate()?;
        }
        prob.conc = conc;
        if formulation == BatchFormulation::Deterministic {
            prob.formulation = Formulation::Deterministic;
        }
        Ok(prob)
    }
}

/// Empirical collision probability at one knot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub hits: u64,
    pub samples: u64,
}

/// Estimate `P(Q(a_t) ≤ 1 for some circle)` at every knot of `states` by
/// sampling the agent centre and placing its circles along `heading`.
/// Each knot draws from its own generator seeded by `(seed, t)`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_risk(
    prediction: &PredictionSpec,
    geometry: &AgentGeometry,
    heading: f64,
    states: &[EgoState],
    ego: Footprint,
    samples: u64,
    seed: u64,
) -> Result<Vec<McEstimate>, HarnessError> {
    let q = ellipsoid_from_geometry(0.5 * ego.length, 0.5 * ego.width, geometry.radius)
        .map_err(PlanError::from)?;
    let offsets = geometry.center_offsets(heading);
    states
        .par_iter()
        .enumerate()
        .map(|(t, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let step = &prediction.steps[t];
            let pose = crate::bodyframe::Pose::new(x.x, x.y, x.theta);
            let mut hits = 0u64;
            for _ in 0..samples {
                let c = step.sample(&mut rng)?;
                if offsets
                    .iter()
                    .any(|o| q.quadratic_form(pose.to_body([c[0] + o[0], c[1] + o[1]])) <= 1.0)
                {
                    hits += 1;
                }
            }
            let p = hits as f64 / samples as f64;
            Ok(McEstimate {
                probability: p,
                std_error: (p * (1.0 - p) / samples as f64).sqrt(),
                hits,
                samples,
            })
        })
        .collect()
}

/// Smallest distance from the ego position to any agent's mixture mean.
pub fn min_clearance(states: &[EgoState], predictions: &[PredictionSpec]) -> f64 {
    let mut best = f64::INFINITY;
    for p in predictions {
        let means = mixture_means(p);
        for (x, m) in states.iter().zip(&means) {
            best = best.min((x.x - m[0]).hypot(x.y - m[1]));
        }
    }
    best
}

/// Batch experiment settings as written in batch spec files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub seeds: Vec<u64>,
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_formulations")]
    pub formulations: Vec<BatchFormulation>,
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default)]
    pub conc: ConcKind,
    /// Monte Carlo samples per step for validating converged stochastic
    /// runs; 0 disables validation.
    #[serde(default)]
    pub mc_samples: u64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_formulations() -> Vec<BatchFormulation> {
    vec![BatchFormulation::Gmm, BatchFormulation::TruncatedGmm]
}

fn default_perturbation() -> f64 {
    0.1
}

/// `n` log-spaced values over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| 10f64.powf(lo.log10() + (hi.log10() - lo.log10()) * i as f64 / (n - 1) as f64))
        .collect()
}

impl BatchSpec {
    /// `scenarios` seeds `0..scenarios` with `n_eps` values in `[1e-4, 1e-2]`.
    pub fn desk(scenarios: usize, n_eps: usize) -> Self {
        BatchSpec {
            seeds: (0..scenarios as u64).collect(),
            eps_grid: log_grid(1e-4, 1e-2, n_eps),
            formulations: default_formulations(),
            perturbation: default_perturbation(),
            conc: ConcKind::Vp,
            mc_samples: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub max_probability: f64,
    /// Largest `(p̂ − bound_t)/SE`; sound when ≤ 3 at every knot.
    pub max_excess_se: f64,
    pub sound: bool,
}

/// One solve of the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub eps: f64,
    pub formulation: BatchFormulation,
    pub status: SolveStatus,
    pub cost: f64,
    pub iterations: usize,
    pub solve_time_ms: f64,
    pub min_clearance: f64,
    pub total_risk_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<McSummary>,
}

/// Aggregates for one ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsMetrics {
    pub eps: f64,
    pub runs: usize,
    pub success_gmm: f64,
    pub success_truncated: f64,
    pub success_deterministic: f64,
    /// Mean of truncated/GMM cost over scenarios where both converged.
    pub mean_cost_ratio: Option<f64>,
    pub ratio_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub runs: Vec<RunRecord>,
    pub per_eps: Vec<EpsMetrics>,
    pub mean_solve_time_ms: f64,
    pub median_solve_time_ms: f64,
    pub convergence_rate: f64,
    /// Every Monte Carlo-validated run was sound.
    pub all_sound: bool,
}

/// Run one (scenario, ε, formulation) solve, recording failures instead of
/// propagating them.
pub fn run_one(
    scenario: &Scenario,
    eps: f64,
    formulation: BatchFormulation,
    conc: ConcKind,
    solver: &SolverConfig,
    mc_samples: u64,
) -> (RunRecord, Option<PlanResult>) {
    let mut rec = RunRecord {
        seed: scenario.seed,
        eps,
        formulation,
        status: SolveStatus::Infeasible,
        cost: f64::NAN,
        iterations: 0,
        solve_time_ms: 0.0,
        min_clearance: f64::NAN,
        total_risk_bound: f64::NAN,
        error: None,
        monte_carlo: None,
    };
    let outcome = scenario
        .problem(eps, formulation, conc)
        .and_then(|p| Ok(solve(&p, solver)?));
    let res = match outcome {
        Ok(r) => r,
        Err(e) => {
            rec.error = Some(e.to_string());
            return (rec, None);
        }
    };
    rec.status = res.status;
    rec.cost = res.cost;
    rec.iterations = res.iterations;
    rec.solve_time_ms = res.solve_time_ms;
    rec.total_risk_bound = res.total_risk_bound;
    let truncate = formulation == BatchFormulation::TruncatedGmm;
    if let Ok(preds) = scenario.predictions(50, truncate) {
        rec.min_clearance = min_clearance(&res.states, &preds);
        if mc_samples > 0 && res.converged() && formulation != BatchFormulation::Deterministic {
            rec.monte_carlo = validate_plan(scenario, &res, &preds, mc_samples, scenario.seed).ok();
        }
    }
    (rec, Some(res))
}

/// Compare per-knot empirical collision probability with the per-knot
/// Boole bound `Σ_circles Σᵢ wᵢ Conc_i`.
pub fn validate_plan(
    scenario: &Scenario,
    result: &PlanResult,
    predictions: &[PredictionSpec],
    samples: u64,
    seed: u64,
) -> Result<McSummary, HarnessError> {
    let mut summary = McSummary {
        max_probability: 0.0,
        max_excess_se: f64::NEG_INFINITY,
        sound: true,
    };
    let mut first = 0;
    for (i, (a, p)) in scenario.agents.iter().zip(predictions).enumerate() {
        let geo = a.geometry();
        let est = monte_carlo_risk(p, &geo, a.heading(), &result.states, scenario.ego, samples, seed.wrapping_add(i as u64))?;
        let circles = geo.num_circles();
        for (t, e) in est.iter().enumerate() {
            let bound: f64 = result.risk[t].per_obstacle[first..first + circles].iter().sum();
            summary.max_probability = summary.max_probability.max(e.probability);
            let se = e.std_error.max(1.0 / samples as f64);
            let excess = (e.probability - bound) / se;
            summary.max_excess_se = summary.max_excess_se.max(excess);
            if excess > 3.0 {
                summary.sound = false;
            }
        }
        first += circles;
    }
    Ok(summary)
}

fn aggregate(runs: Vec<RunRecord>, eps_grid: &[f64]) -> BatchMetrics {
    let conv = |r: &RunRecord| r.status == SolveStatus::Converged;
    let per_eps = eps_grid
        .iter()
        .map(|&eps| {
            let at: Vec<&RunRecord> = runs.iter().filter(|r| r.eps == eps).collect();
            let rate = |f: BatchFormulation| {
                let sel: Vec<_> = at.iter().filter(|r| r.formulation == f).collect();
                if sel.is_empty() {
                    f64::NAN
                } else {
                    sel.iter().filter(|r| conv(r)).count() as f64 / sel.len() as f64
                }
            };
            let mut ratios = Vec::new();
            for g in at.iter().filter(|r| r.formulation == BatchFormulation::Gmm && conv(r)) {
                if let Some(t) = at.iter().find(|r| {
                    r.formulation == BatchFormulation::TruncatedGmm && r.seed == g.seed && conv(r)
                }) {
                    ratios.push(t.cost / g.cost);
                }
            }
            EpsMetrics {
                eps,
                runs: at.len(),
                success_gmm: rate(BatchFormulation::Gmm),
                success_truncated: rate(BatchFormulation::TruncatedGmm),
                success_deterministic: rate(BatchFormulation::Deterministic),
                mean_cost_ratio: (!ratios.is_empty())
                    .then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
                ratio_pairs: ratios.len(),
            }
        })
        .collect();
    let mut times: Vec<f64> = runs.iter().map(|r| r.solve_time_ms).collect();
    times.sort_by(f64::total_cmp);
    let median = if times.is_empty() {
        f64::NAN
    } else if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
    };
    BatchMetrics {
        mean_solve_time_ms: times.iter().sum::<f64>() / times.len().max(1) as f64,
        median_solve_time_ms: median,
        convergence_rate: runs.iter().filter(|r| conv(r)).count() as f64 / runs.len().max(1) as f64,
        all_sound: runs
            .iter()
            .all(|r| r.monte_carlo.as_ref().is_none_or(|m| m.sound)),
        per_eps,
        runs,
    }
}

/// Full cross product of scenarios, ε and formulations. Scenarios run in
/// parallel; records are reduced in a fixed order.
pub fn batch_experiment(spec: &BatchSpec) -> Result<BatchMetrics, HarnessError> {
    if spec.seeds.is_empty() || spec.eps_grid.is_empty() {
        return Err(HarnessError::EmptyBatch);
    }
    let runs: Vec<RunRecord> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut out = Vec::new();
            match make_uturn_scenario(seed, spec.perturbation) {
                Ok(sc) => {
                    for &eps in &spec.eps_grid {
                        for &f in &spec.formulations {
                            out.push(run_one(&sc, eps, f, spec.conc, &spec.solver, spec.mc_samples).0);
                        }
                    }
                }
                Err(e) => {
                    for &eps in &spec.eps_grid {
                        for &f in &spec.formulations {
                            out.push(RunRecord {
                                seed,
                                eps,
                                formulation: f,
                                status: SolveStatus::Infeasible,
                                cost: f64::NAN,
                                iterations: 0,
                                solve_time_ms: 0.0,
                                min_clearance: f64::NAN,
                                total_risk_bound: f64::NAN,
                                error: Some(e.to_string()),
                                monte_carlo: None,
                            });
                        }
                    }
                }
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(aggregate(runs, &spec.eps_grid))
}

/// Write `runs/*.json`, `aggregate.csv`, `metadata.json` and
/// `plots/metrics.svg` under `dir`. The CSV omits timings so identical seeds
/// give identical bytes.
pub fn write_batch(dir: &Path, spec: &BatchSpec, metrics: &BatchMetrics) -> Result<(), HarnessError> {
    fs::create_dir_all(dir.join("runs"))?;
    fs::create_dir_all(dir.join("plots"))?;
    for r in &metrics.runs {
        let name = format!("seed{}_eps{:.3e}_{}.json", r.seed, r.eps, r.formulation.name());
        fs::write(dir.join("runs").join(name), serde_json::to_string_pretty(r)?)?;
    }
    let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    w.write_record([
        "eps",
        "runs",
        "success_gmm",
        "success_truncated_gmm",
        "success_deterministic",
        "mean_cost_ratio",
        "ratio_pairs",
    ])?;
    let f = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.6}") };
    for m in &metrics.per_eps {
        w.write_record([
            format!("{:.6e}", m.eps),
            m.runs.to_string(),
            f(m.success_gmm),
            f(m.success_truncated),
            f(m.success_deterministic),
            m.mean_cost_ratio.map_or(String::new(), |v| format!("{v:.6}")),
            m.ratio_pairs.to_string(),
        ])?;
    }
    w.flush()?;
    let meta = serde_json::json!({
        "eps_grid": spec.eps_grid,
        "seeds": spec.seeds,
        "formulations": spec.formulations,
        "perturbation": spec.perturbation,
        "conc": spec.conc,
        "success_definition": "status == converged under the solver settings below",
        "solver": spec.solver,
        "median_solve_time_ms": metrics.median_solve_time_ms,
        "convergence_rate": metrics.convergence_rate,
    });
    fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
    fs::write(dir.join("plots").join("metrics.svg"), metrics_svg(metrics))?;
    Ok(())
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    w: f64,
    h: f64,
    pad: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.pad + (x - self.x0) / (self.x1 - self.x0) * (self.w - 2.0 * self.pad)
    }

    fn py(&self, y: f64) -> f64 {
        self.h - self.pad - (y - self.y0) / (self.y1 - self.y0) * (self.h - 2.0 * self.pad)
    }

    fn header(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = self.w,
            h = self.h
        );
        let _ = write!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let (l, r, t, b) = (self.pad, self.w - self.pad, self.pad, self.h - self.pad);
        let _ = write!(
            s,
            r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#
        );
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
            self.w / 2.0,
            self.pad / 2.0,
            title
        );
        let _ = write!(
            s,
            r#"<text x="{l}" y="{:.1}" font-size="10">{:.3}</text><text x="{r}" y="{:.1}" font-size="10" text-anchor="end">{:.3}</text>"#,
            b + 14.0,
            self.x0,
            b + 14.0,
            self.x1
        );
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{b}" font-size="10" text-anchor="end">{:.3}</text><text x="{:.1}" y="{t}" font-size="10" text-anchor="end">{:.3}</text>"#,
            l - 4.0,
            self.y0,
            l - 4.0,
            self.y1
        );
        s
    }

    fn polyline(&self, pts: &[(f64, f64)], color: &str, width: f64) -> String {
        if pts.is_empty() {
            return String::new();
        }
        let d: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        format!(
            r#"<polyline points="{}" stroke="{color}" stroke-width="{width}" fill="none"/>"#,
            d.join(" ")
        )
    }
}

/// Success rates and mean cost ratio against `log10 ε`.
pub fn metrics_svg(metrics: &BatchMetrics) -> String {
    let xs: Vec<f64> = metrics.per_eps.iter().map(|m| m.eps.log10()).collect();
    let (x0, x1) = match (
        xs.iter().copied().reduce(f64::min),
        xs.iter().copied().reduce(f64::max),
    ) {
        (Some(a), Some(b)) if b > a => (a, b),
        (Some(a), _) => (a - 1.0, a + 1.0),
        _ => (-4.0, -2.0),
    };
    let ratio_max = metrics
        .per_eps
        .iter()
        .filter_map(|m| m.mean_cost_ratio)
        .fold(1.2f64, f64::max);
    let fr = Frame {
        x0,
        x1,
        y0: 0.0,
        y1: ratio_max,
        w: 640.0,
        h: 400.0,
        pad: 50.0,
    };
    let mut s = fr.header("success rate and cost ratio vs log10 eps");
    let series = |f: &dyn Fn(&EpsMetrics) -> Option<f64>| -> Vec<(f64, f64)> {
        metrics
            .per_eps
            .iter()
            .filter_map(|m| f(m).filter(|v| v.is_finite()).map(|v| (m.eps.log10(), v)))
            .collect()
    };
    s += &fr.polyline(&series(&|m| Some(m.success_gmm)), "tab:blue", 2.0).replace("tab:blue", "#1f77b4");
    s += &fr.polyline(&series(&|m| Some(m.success_truncated)), "#ff7f0e", 2.0);
    s += &fr.polyline(&series(&|m| m.mean_cost_ratio), "#2ca02c", 2.0);
    s += r##"<text x="60" y="70" font-size="11" fill="#1f77b4">success GMM</text>"##;
    s += r##"<text x="60" y="84" font-size="11" fill="#ff7f0e">success truncated GMM</text>"##;
    s += r##"<text x="60" y="98" font-size="11" fill="#2ca02c">mean cost ratio truncated/GMM</text>"##;
    s += "</svg>\n";
    s
}

/// Trajectories over the reference path with 2σ ellipses of every agent
/// component at every fifth step.
pub fn trajectory_svg(
    path: &ReferencePath,
    trajectories: &[(&str, &[EgoState])],
    predictions: &[PredictionSpec],
) -> String {
    let mut pts: Vec<(f64, f64)> = path.sample(200);
    for (_, tr) in trajectories {
        pts.extend(tr.iter().map(|x| (x.x, x.y)));
    }
    for p in predictions {
        for s in &p.steps {
            for c in &s.components {
                pts.push((c.base().mean[0], c.base().mean[1]));
            }
        }
    }
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |a, &(x, y)| (a.0.min(x), a.1.max(x), a.2.min(y), a.3.max(y)),
    );
    if !(x1 > x0) {
        (x0, x1) = (x0 - 1.0, x0 + 1.0);
    }
    if !(y1 > y0) {
        (y0, y1) = (y0 - 1.0, y0 + 1.0);
    }
    // Equal axis scaling.
    let span = (x1 - x0).max(y1 - y0) * 1.1;
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let fr = Frame {
        x0: cx - span / 2.0,
        x1: cx + span / 2.0,
        y0: cy - span / 2.0,
        y1: cy + span / 2.0,
        w: 600.0,
        h: 600.0,
        pad: 40.0,
    };
    let mut s = fr.header("planned trajectories");
    s += &fr.polyline(&path.sample(200), "#999999", 1.0);
    let colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];
    for (i, (name, tr)) in trajectories.iter().enumerate() {
        let c = colors[i % colors.len()];
        let line: Vec<(f64, f64)> = tr.iter().map(|x| (x.x, x.y)).collect();
        s += &fr.polyline(&line, c, 2.0);
        let _ = write!(
            s,
            r#"<text x="50" y="{}" font-size="11" fill="{c}">{name}</text>"#,
            60 + 14 * i
        );
    }
    let scale = (fr.w - 2.0 * fr.pad) / span;
    for p in predictions {
        for s_t in p.steps.iter().step_by(5) {
            for c in &s_t.components {
                let g = c.base();
                let m = g.cov_matrix();
                let eig = m.symmetric_eigen();
                let (l0, l1) = (eig.eigenvalues[0].max(0.0), eig.eigenvalues[1].max(0.0));
                let v = eig.eigenvectors.column(0);
                let ang = -v[1].atan2(v[0]).to_degrees();
                let _ = write!(
                    s,
                    "<ellipse cx=\"{:.2}\" cy=\"{:.2}\" rx=\"{:.3}\" ry=\"{:.3}\" transform=\"rotate({:.2} {:.2} {:.2})\" stroke=\"#555555\" fill=\"none\" stroke-width=\"0.8\"/>",
                    fr.px(g.mean[0]),
                    fr.py(g.mean[1]),
                    (2.0 * l0.sqrt() * scale).max(0.5),
                    (2.0 * l1.sqrt() * scale).max(0.5),
                    ang,
                    fr.px(g.mean[0]),
                    fr.py(g.mean[1]),
                );
            }
        }
    }
    s += "</svg>\n";
    s
}
