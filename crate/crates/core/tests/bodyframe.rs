use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskplan::bodyframe::*;
use riskplan::distmoments::{ComponentDist, GaussianSpec, TruncatedGaussianSpec};

fn rot(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Mean and variance of aᵀQa − 1 for Gaussian a, from the standard
/// quadratic-form identities.
fn gaussian_oracle(q: &CollisionEllipsoid, pose: &Pose, g: &GaussianSpec) -> (f64, f64) {
    let qm = q.matrix();
    let r = rot(pose.theta);
    let mu = r.transpose() * (g.mean_vector() - Vector2::new(pose.x, pose.y));
    let sig = r.transpose() * g.cov_matrix() * r;
    let qs = qm * sig;
    let mean = qs.trace() + (mu.transpose() * qm * mu)[(0, 0)] - 1.0;
    let var = 2.0 * (qs * qs).trace() + 4.0 * (mu.transpose() * qm * sig * qm * mu)[(0, 0)];
    (mean, var)
}

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (-10.0..10.0f64, -10.0..10.0f64, -7.0..7.0f64).prop_map(|(x, y, t)| Pose::new(x, y, t))
}

fn gaussian_strategy() -> impl Strategy<Value = GaussianSpec> {
    (-8.0..8.0f64, -8.0..8.0f64, 0.1..2.0f64, 0.1..2.0f64, -0.9..0.9f64).prop_map(
        |(mx, my, sx, sy, rho)| GaussianSpec {
            mean: [mx, my],
            cov: [[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]],
        },
    )
}

fn ellipsoid_strategy() -> impl Strategy<Value = CollisionEllipsoid> {
    (0.5..3.0f64, 0.3..1.5f64, 0.0..2.0f64)
        .prop_map(|(a, b, r)| ellipsoid_from_geometry(a, b, r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_quadratic_form_oracle(
        q in ellipsoid_strategy(), pose in pose_strategy(), g in gaussian_strategy()
    ) {
        let (m, v) = constraint_mean_variance(&q, &pose, &g.moments(4).unwrap()).unwrap();
        let (om, ov) = gaussian_oracle(&q, &pose, &g);
        prop_assert!((m - om).abs() < 1e-9 * (1.0 + om.abs()), "{m} vs {om}");
        prop_assert!((v - ov).abs() < 1e-8 * (1.0 + ov.abs()), "{v} vs {ov}");
    }

    #[test]
    fn isotropic_ellipsoid_is_rotation_invariant(
        scale in 0.1..2.0f64, pose in pose_strategy(), g in gaussian_strategy(), theta in -7.0..7.0f64
    ) {
        let q = CollisionEllipsoid::new([[scale, 0.0], [0.0, scale]]).unwrap();
        let t = g.moments(4).unwrap();
        let a = constraint_mean_variance(&q, &pose, &t).unwrap();
        let b = constraint_mean_variance(&q, &Pose { theta, ..pose }, &t).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-9 * (1.0 + a.0.abs()));
        prop_assert!((a.1 - b.1).abs() < 1e-8 * (1.0 + a.1.abs()));
    }

    #[test]
    fn translation_equivariance(
        q in ellipsoid_strategy(), pose in pose_strategy(), g in gaussian_strategy(),
        dx in -5.0..5.0f64, dy in -5.0..5.0f64
    ) {
        let a = constraint_mean_variance(&q, &pose, &g.moments(4).unwrap()).unwrap();
        let moved = Pose::new(pose.x + dx, pose.y + dy, pose.theta);
        let b = constraint_mean_variance(&q, &moved, &g.shifted([dx, dy]).moments(4).unwrap()).unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-8 * (1.0 + a.0.abs()));
        prop_assert!((a.1 - b.1).abs() < 1e-7 * (1.0 + a.1.abs()));
    }

    #[test]
    fn ellipsoid_is_positive_definite(a in 1e-3..1e3f64, b in 1e-3..1e3f64, r in 0.0..1e3f64) {
        let q = ellipsoid_from_geometry(a, b, r).unwrap().q();
        prop_assert!(q[0][0] > 0.0 && q[1][1] > 0.0 && q[0][1] == 0.0);
    }

    #[test]
    fn moment_gradients_match_finite_differences(
        q in ellipsoid_strategy(), pose in pose_strategy(), g in gaussian_strategy()
    ) {
        let bound = ConstraintModel::new(q).bind(&g.moments(4).unwrap()).unwrap();
        let m = bound.eval(&pose);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = [pose.x, pose.y, pose.theta];
            let mut n = p;
            p[k] += h;
            n[k] -= h;
            let mp = bound.eval(&Pose::new(p[0], p[1], p[2]));
            let mn = bound.eval(&Pose::new(n[0], n[1], n[2]));
            let fd_mean = (mp.mean - mn.mean) / (2.0 * h);
            let fd_second = (mp.second - mn.second) / (2.0 * h);
            prop_assert!((fd_mean - m.d_mean[k]).abs() <= 1e-4 * (1.0 + fd_mean.abs()));
            prop_assert!((fd_second - m.d_second[k]).abs() <= 1e-4 * (1.0 + fd_second.abs()));
        }
        let (v, gp) = point_constraint(&q, &pose, g.mean);
        for k in 0..3 {
            let mut p = [pose.x, pose.y, pose.theta];
            let mut n = p;
            p[k] += h;
            n[k] -= h;
            let fd = (point_constraint(&q, &Pose::new(p[0], p[1], p[2]), g.mean).0
                - point_constraint(&q, &Pose::new(n[0], n[1], n[2]), g.mean).0) / (2.0 * h);
            prop_assert!((fd - gp[k]).abs() <= 1e-4 * (1.0 + fd.abs()), "{v}");
        }
    }
}

#[test]
fn circles_cover_the_agent_rectangle() {
    for (l, w) in [(2.0, 2.0), (4.0, 2.0), (4.5, 1.8), (10.0, 2.5), (2.1, 2.0)] {
        let geo = agent_circles(l, w).unwrap();
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let px = -l / 2.0 + l * i as f64 / n as f64;
                let py = -w / 2.0 + w * j as f64 / n as f64;
                let covered = geo
                    .offsets
                    .iter()
                    .any(|&d| (px - d).hypot(py) <= geo.radius + 1e-12);
                assert!(covered, "L={l} W={w} point ({px}, {py})");
            }
        }
    }
}

#[test]
fn monte_carlo_agreement() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let q = ellipsoid_from_geometry(2.4, 1.0, 1.3).unwrap();
    let cases = [
        (Pose::new(1.0, -0.5, 0.4), GaussianSpec::new([3.0, 1.0], [[0.8, 0.3], [0.3, 0.5]]).unwrap()),
        (Pose::new(-2.0, 4.0, 2.8), GaussianSpec::new([0.0, 2.0], [[1.5, -0.4], [-0.4, 0.7]]).unwrap()),
    ];
    for (pose, g) in cases {
        for comp in [
            ComponentDist::Gaussian(g.clone()),
            ComponentDist::Truncated(TruncatedGaussianSpec::at_sigmas(&g, 2.0).unwrap()),
        ] {
            let (m, v) = constraint_mean_variance(&q, &pose, &comp.moments(4).unwrap()).unwrap();
            let n = 1_000_000;
            let (mut s, mut s2) = (0.0, 0.0);
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                let p = comp.sample(&mut rng).unwrap();
                let x = q.quadratic_form(pose.to_body(p)) - 1.0;
                s += x;
                s2 += x * x;
                vals.push(x);
            }
            let nf = n as f64;
            let mean = s / nf;
            let var = s2 / nf - mean * mean;
            let se_mean = (var / nf).sqrt();
            let m4: f64 = vals.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
            let se_var = ((m4 - var * var) / nf).sqrt();
            assert!((mean - m).abs() < 3.0 * se_mean, "{mean} vs {m}");
            assert!((var - v).abs() < 3.0 * se_var, "{var} vs {v}");
        }
    }
}

#[test]
fn rendered_expressions_mention_fourth_moments() {
    let model = ConstraintModel::new(ellipsoid_from_geometry(2.0, 1.0, 1.0).unwrap());
    let (mean, second) = model.rendered(riskplan::polyalg::Dialect::PlainInfix);
    assert!(mean.contains("E[g_x^2]") && !mean.contains("E[g_x^3]"));
    assert!(second.contains("E[g_x^4]") && second.contains("E[g_x^2*g_y^2]"));
    assert_eq!(model.second_moment_expression().max_moment_degree(), 4);
}
