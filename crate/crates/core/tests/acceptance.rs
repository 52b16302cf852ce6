//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,5` runs a subset. With `ACCEPTANCE_STRICT=1` the
//! process exits non-zero when any criterion fails; otherwise failures are
//! reported but do not fail the test run.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use riskplan::distmoments::gaussian_moments_nd;
use riskplan::harness::{
    batch_experiment, canonical_scenario, make_uturn_scenario, min_clearance, monte_carlo_risk, BatchFormulation,
    BatchMetrics, BatchSpec,
};
use riskplan::mpcc::{rk4_step, ControlVec, StateVec, VehicleParams};
use riskplan::planner::{assemble_nlp, solve, KnotRisk, RowKind, SolverConfig, RISK_FLOOR};
use riskplan::polyalg::{
    expectation, mean_variance_expressions, parse_polynomial, render, DependencyStructure, Dialect, MultiIndex,
    Polynomial, Roster, VarKind,
};
use riskplan::riskbounds::{aggregate_moments, conc, mixture_bound_unchecked, ConcKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------
// 1. Moment engine against Monte Carlo

struct RandomPoly {
    dim: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

fn random_poly(rng: &mut ChaCha8Rng) -> RandomPoly {
    let dim = rng.random_range(1..=3usize);
    let degree = rng.random_range(1..=4u32);
    let n_terms = rng.random_range(1..=6usize);
    let mut terms = Vec::new();
    for t in 0..n_terms {
        // The first term has full degree so the polynomial's degree is `degree`.
        let total = if t == 0 { degree } else { rng.random_range(0..=degree) };
        let mut e = vec![0u32; dim];
        for _ in 0..total {
            e[rng.random_range(0..dim)] += 1;
        }
        terms.push((e, rng.random_range(-2.0..2.0)));
    }
    RandomPoly { dim, terms }
}

fn names(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("w{i}")).collect()
}

fn to_polynomial(p: &RandomPoly) -> Polynomial {
    let n = names(p.dim);
    let refs: Vec<&str> = n.iter().map(String::as_str).collect();
    let roster = Roster::with_kinds(&refs, &[]).unwrap();
    Polynomial::from_terms(&roster, p.terms.iter().map(|(e, c)| (MultiIndex::new(e.clone()), *c))).unwrap()
}

/// Exact mean, variance and fourth central moment of `p` over independent
/// standard normals.
fn analytic(p: &RandomPoly) -> (f64, f64, f64) {
    let poly = to_polynomial(p);
    let deps = DependencyStructure::independent(&names(p.dim));
    let table = gaussian_moments_nd(&vec![0.0; p.dim], &DMatrix::identity(p.dim, p.dim), 16).unwrap();
    let none = HashMap::new();
    let (e1, e2) = mean_variance_expressions(&poly, &deps);
    let mean = e1.evaluate(&table, &none).unwrap();
    let var = e2.evaluate(&table, &none).unwrap() - mean * mean;
    let centred = poly.try_sub(&Polynomial::constant(poly.roster(), mean)).unwrap();
    let m4 = expectation(&centred.pow(4), &deps).evaluate(&table, &none).unwrap();
    (mean, var, m4)
}

/// Sample `p` over `samples` independent standard normal draws and return
/// the z-scores of the sample mean and sample variance against the exact
/// standard errors.
fn mc_z(p: &RandomPoly, mean: f64, var: f64, m4: f64, samples: u64, seed: u64) -> (f64, f64) {
    let mut mc = ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    let mut pw = [[1.0f64; 5]; 3];
    for _ in 0..samples {
        for row in pw.iter_mut().take(p.dim) {
            let x: f64 = mc.sample(StandardNormal);
            row[1] = x;
            row[2] = x * x;
            row[3] = row[2] * x;
            row[4] = row[2] * row[2];
        }
        let mut v = 0.0;
        for (e, c) in &p.terms {
            let mut t = *c;
            for (i, &ei) in e.iter().enumerate() {
                t *= pw[i][ei as usize];
            }
            v += t;
        }
        // Shift by the analytic mean to keep the sums well conditioned.
        let q = v - mean;
        s1 += q;
        s2 += q * q;
    }
    let n = samples as f64;
    let mc_mean = mean + s1 / n;
    let mc_var = (s2 / n - (s1 / n).powi(2)) * n / (n - 1.0);
    let z = |d: f64, se: f64| if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY };
    (
        z(mc_mean - mean, (var / n).sqrt()),
        z(mc_var - var, ((m4 - var * var) / n).sqrt()),
    )
}

fn criterion_1() -> Outcome {
    const POLYS: usize = 200;
    const SAMPLES: u64 = 10_000_000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    let mut zs = Vec::with_capacity(2 * POLYS);
    let mut failures = Vec::new();
    for k in 0..POLYS {
        let p = random_poly(&mut rng);
        let (mean, var, m4) = analytic(&p);
        let (zm, zv) = mc_z(&p, mean, var, m4, SAMPLES, 1000 + k as u64);
        zs.extend([zm, zv]);
        if zm.abs() > 3.0 || zv.abs() > 3.0 {
            // Informational only: a fresh stream for the same polynomial.
            let (rm, rv) = mc_z(&p, mean, var, m4, SAMPLES, 0xBEEF_0000 + k as u64);
            failures.push(format!("#{k} z = ({zm:.2}, {zv:.2}), fresh stream ({rm:.2}, {rv:.2})"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = zs.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    let rms = (zs.iter().map(|z| z * z).sum::<f64>() / zs.len() as f64).sqrt();
    // Two-sided tail mass beyond 3 for a standard normal.
    let expected = zs.len() as f64 * 2.6998e-3;
    let pass = failures.is_empty() && secs < 300.0;
    outcome(
        pass,
        format!(
            "{POLYS} polynomials, {SAMPLES} samples each, runtime {secs:.0} s; {} of {} z-scores beyond 3 \
             (expected {expected:.2} for exact moments), rms z {rms:.3}, worst {worst:.2}{}",
            failures.len(),
            zs.len(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Sum-of-squares worked example

fn criterion_2() -> Outcome {
    let random = |n: &str| if n.starts_with('w') { VarKind::Random } else { VarKind::Deterministic };
    let p = parse_polynomial("(w1^2 + w2^2)^2", &random).unwrap();
    let dependent = render(&expectation(&p, &DependencyStructure::fully_dependent()), Dialect::PlainInfix);
    let golden = "E[w1^4] + 2*E[w1^2*w2^2] + E[w2^4]";
    let table = gaussian_moments_nd(&[0.0, 0.0], &DMatrix::identity(2, 2), 4).unwrap();
    let none = HashMap::new();
    let q = parse_polynomial("w1^2 + w2^2", &random).unwrap();
    let (_, second) = mean_variance_expressions(&q, &DependencyStructure::independent(&["w1", "w2"]));
    let v_dep = expectation(&p, &DependencyStructure::fully_dependent()).evaluate(&table, &none).unwrap();
    let v_ind = second.evaluate(&table, &none).unwrap();
    // Var(chi-square with 2 dof) = 4 plus squared mean 4.
    let pass = dependent == golden && v_dep == 8.0 && v_ind == 8.0;
    outcome(pass, format!("rendered `{dependent}`; value {v_dep} (dependent), {v_ind} (independent)"))
}

// ---------------------------------------------------------------------------
// 3. Boundary values

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut all = true;
    for (kind, k, want) in [
        (ConcKind::Cantelli, 0.0, 1.0),
        (ConcKind::Vp, (5.0f64 / 3.0).sqrt(), 1.0 / 6.0),
        (ConcKind::Gauss, 2.0 / 3.0, 0.5),
    ] {
        for sigma in [1e-3, 0.1, 1.0, 7.5, 1e3] {
            let b = conc(k * sigma, sigma * sigma, kind).unwrap();
            let err = (b.value - want).abs();
            worst = worst.max(err);
            all &= err <= 1e-12 && b.conc_star.abs() <= 1e-12 * sigma.max(1.0);
        }
    }
    outcome(all, format!("Cantelli 1, VP 1/6, Gauss 1/2 at Conc* = 0; max error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 4. Component-wise mixture bound and convexity

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0004);
    const DRAWS: usize = 1000;
    let mut holds = [0usize; 2];
    let mut strict = [0usize; 2];
    for _ in 0..DRAWS {
        let n = rng.random_range(2..=6);
        let raw: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let sd: f64 = rng.random_range(0.05..3.0);
                // Every component mean satisfies the VP validity margin.
                let mean = (5.0f64 / 3.0).sqrt() * sd + rng.random_range(0.0..6.0);
                (rng.random_range(0.05..1.0), mean, sd * sd)
            })
            .collect();
        let total: f64 = raw.iter().map(|c| c.0).sum();
        let comps: Vec<_> = raw.into_iter().map(|(w, m, v)| (w / total, m, v)).collect();
        let (m, v) = aggregate_moments(&comps);
        for (i, kind) in [ConcKind::Cantelli, ConcKind::Vp].into_iter().enumerate() {
            let split = mixture_bound_unchecked(&comps, kind).unwrap().value;
            let agg = conc(m, v, kind).unwrap().value;
            if split <= agg {
                holds[i] += 1;
            }
            if split < agg {
                strict[i] += 1;
            }
        }
    }
    let mut violations = 0;
    for _ in 0..10_000 {
        let phi = |x: f64, y: f64| x * x / y;
        let (ax, ay) = (rng.random_range(-10.0..10.0), rng.random_range(1e-3..10.0));
        let (bx, by) = (rng.random_range(-10.0..10.0), rng.random_range(1e-3..10.0));
        let l: f64 = rng.random();
        let lhs = phi(l * ax + (1.0 - l) * bx, l * ay + (1.0 - l) * by);
        let rhs = l * phi(ax, ay) + (1.0 - l) * phi(bx, by);
        if lhs > rhs + 1e-12 * rhs.abs().max(1.0) {
            violations += 1;
        }
    }
    let min_strict = (0.999 * DRAWS as f64).ceil() as usize;
    let pass = holds == [DRAWS; 2] && strict.iter().all(|&s| s >= min_strict) && violations == 0;
    outcome(
        pass,
        format!(
            "holds Cantelli {}/{DRAWS}, VP {}/{DRAWS}; strict {} and {}; convexity violations {violations}/10000",
            holds[0], holds[1], strict[0], strict[1]
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. End-to-end soundness

fn soundness(formulation: BatchFormulation, kind: ConcKind) -> (usize, usize, f64, bool) {
    const EPS: f64 = 0.0005;
    const SAMPLES: u64 = 1_000_000;
    let (mut plans, mut tried) = (0, 0);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut seed = 0;
    while plans < 10 && tried < 40 {
        tried += 1;
        let sc = make_uturn_scenario(seed, 0.1).unwrap();
        seed += 1;
        let r = solve(&sc.problem(EPS, formulation, kind).unwrap(), &SolverConfig::default()).unwrap();
        if !r.converged() {
            continue;
        }
        plans += 1;
        let preds = sc.predictions(50, formulation == BatchFormulation::TruncatedGmm).unwrap();
        for (i, (a, p)) in sc.agents.iter().zip(&preds).enumerate() {
            let est = monte_carlo_risk(p, &a.geometry(), a.heading(), &r.states, sc.ego, SAMPLES, 77 + i as u64).unwrap();
            for e in est {
                worst = worst.max(e.probability);
                ok &= e.probability <= EPS;
            }
        }
    }
    (plans, tried, worst, ok && plans == 10)
}

fn criterion_5() -> Outcome {
    let (pc, tc, wc, okc) = soundness(BatchFormulation::Gmm, ConcKind::Cantelli);
    let (pv, tv, wv, okv) = soundness(BatchFormulation::TruncatedGmm, ConcKind::Vp);
    outcome(
        okc && okv,
        format!(
            "eps 0.0005, 1e6 samples/step; Cantelli on GMM: {pc} plans ({tc} tried), max p = {wc:.2e}; \
             VP on truncated GMM: {pv} plans ({tv} tried), max p = {wv:.2e}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Clearance ordering on the canonical scenario

fn criterion_6() -> Outcome {
    let sc = canonical_scenario();
    let preds = sc.predictions(50, false).unwrap();
    let clearance = |eps: f64, f: BatchFormulation| {
        let r = solve(&sc.problem(eps, f, ConcKind::Vp).unwrap(), &SolverConfig::default()).unwrap();
        (r.converged(), min_clearance(&r.states, &preds))
    };
    let (c1, a) = clearance(0.0005, BatchFormulation::Gmm);
    let (c2, b) = clearance(0.00075, BatchFormulation::Gmm);
    let (c3, d) = clearance(0.0005, BatchFormulation::Deterministic);
    outcome(
        c1 && c2 && c3 && a > b && b > d,
        format!("min clearance: eps 0.0005 {a:.3} m, eps 0.00075 {b:.3} m, deterministic {d:.3} m"),
    )
}

// ---------------------------------------------------------------------------
// 7 and 8. Desk-scale batch

fn desk_batch() -> BatchMetrics {
    batch_experiment(&BatchSpec::desk(20, 5)).unwrap()
}

fn criterion_7(m: &BatchMetrics) -> Outcome {
    let mut pass = true;
    let mut cells = Vec::new();
    for e in &m.per_eps {
        pass &= e.success_truncated >= e.success_gmm;
        // Costs of equal plans agree to rounding; allow one part in a million.
        if let Some(r) = e.mean_cost_ratio {
            pass &= r <= 1.0 + 1e-6;
        }
        cells.push(format!(
            "eps {:.2e}: gmm {:.2}, trunc {:.2}, ratio {}",
            e.eps,
            e.success_gmm,
            e.success_truncated,
            e.mean_cost_ratio.map_or("-".into(), |r| format!("{r:.4}"))
        ));
    }
    outcome(pass, format!("20 scenarios x 5 eps; {}", cells.join("; ")))
}

fn criterion_8(m: &BatchMetrics) -> Outcome {
    outcome(
        m.median_solve_time_ms < 2000.0 && m.convergence_rate >= 0.9,
        format!(
            "median solve time {:.0} ms (mean {:.0} ms), convergence {:.3} over {} runs",
            m.median_solve_time_ms,
            m.mean_solve_time_ms,
            m.convergence_rate,
            m.runs.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Derivatives and integrator order

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-4 * (1.0 + fd.abs().max(an.abs()))
}

fn column_fd<F: Fn(&[f64]) -> Vec<f64>>(f: &F, z: &[f64], i: usize) -> Vec<f64> {
    let h = 1e-6;
    let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
    zp[i] += h;
    zm[i] -= h;
    f(&zp).iter().zip(f(&zm)).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

fn criterion_9() -> Outcome {
    let sc = canonical_scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0009);
    let mut bad = 0usize;
    let mut checked = 0usize;
    for point in 0..100 {
        let f = if point % 2 == 0 { BatchFormulation::Gmm } else { BatchFormulation::Deterministic };
        let problem = sc.problem(0.0005, f, ConcKind::Vp).unwrap();
        let nlp = assemble_nlp(&problem).unwrap();
        let mut z = nlp.pack(&nlp.initial_guess([0.0, 0.0]));
        for v in z.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let pt = nlp.unpack(&z);
        let grad = nlp.cost_gradient(&pt);
        let dj = nlp.dynamics_jacobian(&pt);
        let rows = nlp.inequalities(&pt);
        let mut ij = nlp.inequality_jacobian(&rows);
        let cost = |z: &[f64]| vec![nlp.cost(&nlp.unpack(z))];
        let dynamics = |z: &[f64]| nlp.dynamics_residual(&nlp.unpack(z));
        // Risk rows in linear form: the log row's Jacobian times (S + η).
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
                let scale = base[r].max(0.0) + RISK_FLOOR * problem.allocation.get(row.knot, obstacle);
                for c in 0..z.len() {
                    ij[(r, c)] *= scale;
                }
            }
        }
        for i in 0..z.len() {
            let fd = column_fd(&cost, &z, i);
            checked += 1;
            bad += usize::from(!close(fd[0], grad[i]));
            for (r, v) in column_fd(&dynamics, &z, i).iter().enumerate() {
                checked += 1;
                bad += usize::from(!close(*v, dj[(r, i)]));
            }
            for (r, v) in column_fd(&ineq, &z, i).iter().enumerate() {
                checked += 1;
                bad += usize::from(!close(*v, ij[(r, i)]));
            }
        }
    }
    let p = VehicleParams::default();
    let x0 = StateVec::new(1.0, -2.0, 0.5, 8.0, 0.3, 0.0);
    let u = ControlVec::new(-1.0, 0.5);
    let integrate = |steps: usize| {
        let h = 1.0 / steps as f64;
        (0..steps).fold(x0, |x, _| rk4_step(&x, &u, h, &p))
    };
    let truth = integrate(20_000);
    let factor = (integrate(10) - truth).norm() / (integrate(20) - truth).norm();
    outcome(
        bad == 0 && (12.0..=20.0).contains(&factor),
        format!("{checked} derivative entries at 100 points, {bad} beyond 1e-4; RK4 halving factor {factor:.2}"),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let want = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        if want(n) {
            let r = f();
            println!("{} {n}. {name}: {}", if r.pass { "PASS" } else { "FAIL" }, r.detail);
            results.push((n, name, r));
        }
    };
    run(1, "moment engine vs Monte Carlo", &criterion_1);
    run(2, "sum-of-squares worked example", &criterion_2);
    run(3, "boundary values", &criterion_3);
    run(4, "component-wise mixture bound and convexity", &criterion_4);
    run(5, "end-to-end risk soundness", &criterion_5);
    run(6, "clearance ordering", &criterion_6);
    if want(7) || want(8) {
        let m = desk_batch();
        run(7, "truncated vs GMM at desk scale", &|| criterion_7(&m));
        run(8, "solve time and convergence", &|| criterion_8(&m));
    }
    run(9, "derivatives and RK4 order", &criterion_9);
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} criteria, {} passed, {} failed", results.len(), results.len() - failed, failed);
    if failed == 0 || std::env::var_os("ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
