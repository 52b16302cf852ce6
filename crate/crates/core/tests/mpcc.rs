use proptest::prelude::*;
use riskplan::mpcc::*;

fn uturn() -> ReferencePath {
    arc_length_scale(
        &ReferencePath::unit([0.0, 30.0, -30.0, 0.0], [0.0, 0.0, 24.0, -16.0]).unwrap(),
    )
    .unwrap()
}

fn polyline_length(p: &ReferencePath, n: usize) -> f64 {
    p.sample(n)
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum()
}

#[test]
fn straight_line_three_four_five() {
    let p = ReferencePath::unit([1.0, 3.0, 0.0, 0.0], [2.0, 4.0, 0.0, 0.0]).unwrap();
    let s = arc_length_scale(&p).unwrap();
    assert!((s.length() - 5.0).abs() < 1e-10);
    let (x, y) = s.point(5.0);
    assert!((x - 4.0).abs() < 1e-12 && (y - 6.0).abs() < 1e-12);
    let (dx, dy) = s.tangent(2.0);
    assert!((dx.hypot(dy) - 1.0).abs() < 1e-12);
}

#[test]
fn curve_length_matches_polyline() {
    let p = uturn();
    let poly = polyline_length(&p, 10_000);
    assert!((p.length() - poly).abs() < 0.01 * poly);
    assert!((p.curve_length().unwrap() - p.length()).abs() < 1e-6);
}

#[test]
fn rk4_tracks_fine_euler() {
    let p = VehicleParams::default();
    let x0 = StateVec::new(0.0, 0.0, 0.3, 6.0, 0.1, 0.0);
    let u = ControlVec::new(0.8, -0.3);
    let dt = 0.1;
    let mut x = x0;
    for _ in 0..10 {
        x = rk4_step(&x, &u, dt, &p);
    }
    let mut e = x0;
    let n = 100_000;
    let h = 1.0 / n as f64;
    for _ in 0..n {
        e += bicycle_derivative(&e, &u, &p) * h;
    }
    assert!((x - e).amax() < 1e-4, "{}", (x - e).amax());
}

#[test]
fn rk4_is_fourth_order() {
    let p = VehicleParams::default();
    let x0 = StateVec::new(1.0, -2.0, 0.5, 8.0, 0.3, 0.0);
    let u = ControlVec::new(-1.0, 0.5);
    let integrate = |steps: usize| {
        let h = 1.0 / steps as f64;
        (0..steps).fold(x0, |x, _| rk4_step(&x, &u, h, &p))
    };
    let truth = integrate(20_000);
    let e1 = (integrate(10) - truth).norm();
    let e2 = (integrate(20) - truth).norm();
    let factor = e1 / e2;
    assert!((12.0..=20.0).contains(&factor), "factor {factor}");
}

#[test]
fn contouring_errors_rotate_with_the_path() {
    let base = ReferencePath::new([0.0, 1.0, 0.0, 0.0], [0.0; 4], 10.0).unwrap();
    let x = StateVec::new(5.0, 0.3, 0.0, 0.0, 0.0, 4.0);
    let want = contouring_errors(&x, &base);
    for phi in [0.3, 1.2, -2.5, 3.0] {
        let (s, c) = f64::sin_cos(phi);
        let path = ReferencePath::new([0.0, c, 0.0, 0.0], [0.0, s, 0.0, 0.0], 10.0).unwrap();
        let xr = StateVec::new(c * 5.0 - s * 0.3, s * 5.0 + c * 0.3, phi, 0.0, 0.0, 4.0);
        let got = contouring_errors(&xr, &path);
        assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
    }
}

fn state_strategy() -> impl Strategy<Value = StateVec> {
    (
        -20.0..20.0f64,
        -20.0..20.0f64,
        -3.0..3.0f64,
        0.0..12.0f64,
        -0.6..0.6f64,
        0.0..30.0f64,
    )
        .prop_map(|(a, b, c, d, e, f)| StateVec::new(a, b, c, d, e, f))
}

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-4 * (1.0 + fd.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rk4_jacobians_match_finite_differences(
        x in state_strategy(), ua in -4.0..2.0f64, ud in -1.0..1.0f64
    ) {
        let p = VehicleParams::default();
        let u = ControlVec::new(ua, ud);
        let (next, jx, ju) = rk4_step_jacobian(&x, &u, 0.1, &p);
        prop_assert!((next - rk4_step(&x, &u, 0.1, &p)).amax() == 0.0);
        let h = 1e-6;
        for k in 0..6 {
            let mut e = StateVec::zeros();
            e[k] = h;
            let fd = (rk4_step(&(x + e), &u, 0.1, &p) - rk4_step(&(x - e), &u, 0.1, &p)) / (2.0 * h);
            for r in 0..6 {
                prop_assert!(close(fd[r], jx[(r, k)]), "dx{r}/dx{k}: {} vs {}", fd[r], jx[(r, k)]);
            }
        }
        for k in 0..2 {
            let mut e = ControlVec::zeros();
            e[k] = h;
            let fd = (rk4_step(&x, &(u + e), 0.1, &p) - rk4_step(&x, &(u - e), 0.1, &p)) / (2.0 * h);
            for r in 0..6 {
                prop_assert!(close(fd[r], ju[(r, k)]));
            }
        }
    }

    #[test]
    fn cost_gradient_matches_finite_differences(x in state_strategy()) {
        let path = uturn();
        let c = CostParams::default();
        let (v, g, gn) = state_cost_derivatives(&x, &c, &path);
        prop_assert!((v - state_cost(&x, &c, &path)).abs() <= 1e-12 * (1.0 + v));
        let h = 1e-6;
        for k in 0..6 {
            let mut e = StateVec::zeros();
            e[k] = h;
            let fd = (state_cost(&(x + e), &c, &path) - state_cost(&(x - e), &c, &path)) / (2.0 * h);
            prop_assert!(close(fd, g[k]), "k={k}: {fd} vs {}", g[k]);
        }
        prop_assert!(gn.symmetric_eigenvalues().min() >= -1e-9);
    }
}
