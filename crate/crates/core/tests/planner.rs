use proptest::prelude::*;
use riskplan::distmoments::{GaussianMixture, GaussianSpec, PredictionSpec};
use riskplan::harness::{canonical_scenario, min_clearance, mixture_means, BatchFormulation};
use riskplan::mpcc::{ControlVec, EgoState, ReferencePath, StateVec};
use riskplan::planner::*;
use riskplan::riskbounds::ConcKind;

fn canonical(eps: f64, f: BatchFormulation) -> PlanProblem {
    canonical_scenario().problem(eps, f, ConcKind::Vp).unwrap()
}

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-4 * (1.0 + fd.abs().max(an.abs()))
}

fn point_near_guess(nlp: &Nlp<'_>, noise: &[f64]) -> Vec<f64> {
    let mut z = nlp.pack(&nlp.initial_guess([0.0, 0.0]));
    for (v, n) in z.iter_mut().zip(noise) {
        *v += n;
    }
    z
}

fn column_fd<F: Fn(&[f64]) -> Vec<f64>>(f: &F, z: &[f64], i: usize) -> Vec<f64> {
    let h = 1e-6;
    let mut zp = z.to_vec();
    let mut zm = z.to_vec();
    zp[i] += h;
    zm[i] -= h;
    f(&zp)
        .iter()
        .zip(f(&zm))
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nlp_derivatives_match_finite_differences(
        noise in prop::collection::vec(-0.3..0.3f64, 392),
        formulation in prop::sample::select(vec![BatchFormulation::Gmm, BatchFormulation::Deterministic]),
    ) {
        let problem = canonical(0.0005, formulation);
        let nlp = assemble_nlp(&problem).unwrap();
        prop_assert_eq!(nlp.layout().num_vars(), 392);
        let z = point_near_guess(&nlp, &noise);
        let pt = nlp.unpack(&z);

        let grad = nlp.cost_gradient(&pt);
        let dyn_jac = nlp.dynamics_jacobian(&pt);
        let rows = nlp.inequalities(&pt);
        let mut ineq_jac = nlp.inequality_jacobian(&rows);

        let cost = |z: &[f64]| vec![nlp.cost(&nlp.unpack(z))];
        let dynamics = |z: &[f64]| nlp.dynamics_residual(&nlp.unpack(z));
        // Risk rows are compared in the linear form S − ε; the solver's log
        // form amplifies rounding in tiny S beyond what a 1e−6 step resolves.
        let ineq = |z: &[f64]| {
            let pt = nlp.unpack(z);
            let risk: Vec<KnotRisk> = pt.states.iter().enumerate().map(|(k, x)| nlp.knot_risk(k, x)).collect();
            nlp.inequalities(&pt)
                .iter()
                .map(|r| match r.kind {
                    RowKind::Risk { obstacle } => risk[r.knot].per_obstacle[obstacle],
                    _ => r.value,
                })
                .collect::<Vec<_>>()
        };
        let base = ineq(&z);
        for (r, row) in rows.iter().enumerate() {
            if let RowKind::Risk { obstacle } = row.kind {
                let eps = problem.allocation.get(row.knot, obstacle);
                let scale = base[r].max(0.0) + RISK_FLOOR * eps;
                for c in 0..z.len() {
                    ineq_jac[(r, c)] *= scale;
                }
            }
        }
        for i in 0..z.len() {
            let fd = column_fd(&cost, &z, i);
            prop_assert!(close(fd[0], grad[i]), "cost d/dz{}: {} vs {}", i, fd[0], grad[i]);
            for (r, v) in column_fd(&dynamics, &z, i).iter().enumerate() {
                prop_assert!(close(*v, dyn_jac[(r, i)]), "dynamics ({}, {})", r, i);
            }
            for (r, v) in column_fd(&ineq, &z, i).iter().enumerate() {
                prop_assert!(close(*v, ineq_jac[(r, i)]), "row {:?} d/dz{}: {} vs {}", rows[r].kind, i, v, ineq_jac[(r, i)]);
            }
        }
    }
}

#[test]
fn canonical_layout_counts() {
    let problem = canonical(0.0005, BatchFormulation::Gmm);
    let layout = assemble_nlp(&problem).unwrap().layout();
    // Three covering circles, two mixture components each.
    assert_eq!(layout.risk_rows, 50 * 3);
    assert_eq!(layout.conc_star_rows, 50 * 3 * 2);
    assert_eq!(layout.dynamics_rows, 49 * 6);
}

#[test]
fn no_agents_reduces_to_path_following() {
    let mut problem = canonical(0.0005, BatchFormulation::Gmm);
    problem.obstacles.clear();
    problem.allocation = split_allocation(0.0005, problem.horizon, &[]).unwrap();
    let nlp = assemble_nlp(&problem).unwrap();
    assert_eq!(nlp.layout().inequality_rows(), 0);
    let r = solve(&problem, &SolverConfig::default()).unwrap();
    assert!(r.converged());
    let free = solve(&canonical(0.0005, BatchFormulation::Deterministic), &SolverConfig::default()).unwrap();
    assert!(r.cost <= free.cost + 1e-6);
}

#[test]
fn point_mass_agent_gives_hard_exclusion() {
    let path = ReferencePath::new([0.0, 1.0, 0.0, 0.0], [0.0; 4], 100.0).unwrap();
    let g = GaussianMixture::new(vec![1.0], vec![GaussianSpec::isotropic([20.0, 0.0], 0.0)]).unwrap();
    let spec = PredictionSpec::interpolate(&g, &g, 50).unwrap();
    let geometry = riskplan::bodyframe::agent_circles(2.0, 2.0).unwrap();
    let obstacles = circle_obstacles(0, &spec, &geometry, &vec![0.0; 51], 2.25, 0.9).unwrap();
    let initial = EgoState { x: 0.0, y: 0.0, theta: 0.0, v: 5.0, delta: 0.0, s: 0.0 };
    let problem = PlanProblem::new(initial, path, obstacles, 0.01).unwrap();
    let nlp = assemble_nlp(&problem).unwrap();
    // Outside the ellipse the bound vanishes; inside Conc* is positive.
    let far = nlp.knot_risk(3, &StateVec::new(0.0, 0.0, 0.0, 5.0, 0.0, 0.0));
    assert!(far.total.abs() < 1e-12);
    assert!(far.conc_star[0][0] < 0.0);
    let on = nlp.knot_risk(3, &StateVec::new(20.0, 0.0, 0.0, 5.0, 0.0, 0.0));
    assert!(on.conc_star[0][0] > 0.0);
}

#[test]
fn initial_guess_satisfies_dynamics() {
    let problem = canonical(0.0005, BatchFormulation::Gmm);
    let nlp = assemble_nlp(&problem).unwrap();
    let guess = nlp.initial_guess([0.0, 0.0]);
    assert!(nlp.dynamics_residual(&guess).iter().all(|r| *r == 0.0));
    assert!(guess.controls.iter().all(|u| *u == ControlVec::zeros()));
    // Zero steering and acceleration from a straight heading coasts straight.
    let last = guess.states.last().unwrap();
    assert!((last[2] - problem.initial.theta).abs() < 1e-12);
    assert!((last[3] - 5.0).abs() < 1e-12);
}

fn assert_invariants(r: &PlanResult, problem: &PlanProblem) {
    assert!(r.converged(), "{:?}", r.status);
    assert!(r.residuals.dynamics <= 1e-6);
    assert!(r.residuals.state_bounds <= 1e-6 && r.residuals.control_bounds <= 1e-6);
    for (t, k) in r.risk.iter().enumerate() {
        for (o, s) in k.per_obstacle.iter().enumerate() {
            assert!(*s <= problem.allocation.get(t, o) + 1e-9, "risk {s} at t={t}");
        }
        assert!(k.conc_star.iter().flatten().all(|c| *c <= 1e-9));
    }
    let total: f64 = r.risk.iter().map(|k| k.per_obstacle.iter().sum::<f64>()).sum();
    assert!((r.total_risk_bound - total).abs() <= 1e-12 * (1.0 + total));
    assert!(r.total_risk_bound <= problem.allocation.total() + 1e-9);
    let report = check_feasibility(r, problem).unwrap();
    assert!(report.feasible, "{report:?}");
}

#[test]
fn converged_plans_satisfy_result_invariants() {
    for (eps, f, conc) in [
        (0.0005, BatchFormulation::Gmm, ConcKind::Vp),
        (0.0005, BatchFormulation::TruncatedGmm, ConcKind::Vp),
        (0.001, BatchFormulation::Gmm, ConcKind::Cantelli),
        (0.001, BatchFormulation::Gmm, ConcKind::Gauss),
    ] {
        let problem = canonical_scenario().problem(eps, f, conc).unwrap();
        let r = solve(&problem, &SolverConfig::default()).unwrap();
        assert_invariants(&r, &problem);
    }
}

#[test]
fn solve_is_deterministic() {
    let problem = canonical(0.0005, BatchFormulation::Gmm);
    let a = solve(&problem, &SolverConfig::default()).unwrap();
    let b = solve(&problem, &SolverConfig::default()).unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.controls, b.controls);
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.cost.to_bits(), b.cost.to_bits());
}

#[test]
fn cost_is_non_increasing_in_eps() {
    let mut last = f64::INFINITY;
    for eps in [2.5e-4, 5e-4, 1e-3, 2e-3, 4e-3] {
        let r = solve(&canonical(eps, BatchFormulation::Gmm), &SolverConfig::default()).unwrap();
        assert!(r.converged());
        assert!(r.cost <= last + 1e-6 * (1.0 + last), "eps {eps}: {} after {last}", r.cost);
        last = r.cost;
    }
}

#[test]
fn tighter_budget_keeps_more_clearance_and_truncation_is_cheaper() {
    let preds = canonical_scenario().predictions(50, false).unwrap();
    let tight = solve(&canonical(0.0005, BatchFormulation::Gmm), &SolverConfig::default()).unwrap();
    let loose = solve(&canonical(0.00075, BatchFormulation::Gmm), &SolverConfig::default()).unwrap();
    assert!(tight.converged() && loose.converged());
    assert!(min_clearance(&tight.states, &preds) >= min_clearance(&loose.states, &preds));
    let trunc = solve(&canonical(0.0005, BatchFormulation::TruncatedGmm), &SolverConfig::default()).unwrap();
    assert!(trunc.converged());
    assert!(trunc.cost <= tight.cost);
}

#[test]
fn feasibility_check_flags_tampered_results() {
    let problem = canonical(0.0005, BatchFormulation::Gmm);
    let r = solve(&problem, &SolverConfig::default()).unwrap();
    assert!(check_feasibility(&r, &problem).unwrap().feasible);

    let mut bent = r.clone();
    bent.states[10].y += 0.05;
    let rep = check_feasibility(&bent, &problem).unwrap();
    assert!(rep.dynamics > 0.04 && !rep.feasible);

    // Parking the ego on the agent's mean makes Conc* positive there.
    let mut crash = r.clone();
    let means = mixture_means(&canonical_scenario().predictions(50, false).unwrap()[0]);
    crash.states[20].x = means[20][0];
    crash.states[20].y = means[20][1];
    let rep = check_feasibility(&crash, &problem).unwrap();
    assert!(rep.invalid_components.iter().any(|&(k, _, _)| k == 20));
    assert!(!rep.feasible);
}

#[test]
fn knot_zero_violation_is_reported_infeasible() {
    let mut problem = canonical(0.0005, BatchFormulation::Gmm);
    let means = mixture_means(&canonical_scenario().predictions(50, false).unwrap()[0]);
    problem.initial.x = means[0][0];
    problem.initial.y = means[0][1];
    let r = solve(&problem, &SolverConfig::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
    assert_eq!(r.iterations, 0);
}

#[test]
fn prediction_tables_must_cover_the_horizon() {
    let mut problem = canonical(0.0005, BatchFormulation::Gmm);
    problem.horizon = 60;
    assert!(matches!(
        assemble_nlp(&problem),
        Err(PlanError::PredictionTooShort { .. } | PlanError::AllocationShape { .. })
    ));
}
