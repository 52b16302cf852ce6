//! Collision-ellipsoid constraint in the ego body frame and its moments.
//!
//! An agent circle centre `g` collides with the ego at pose `(x, y, θ)` when
//! `a = R(θ)ᵀ(g − (x, y))` satisfies `aᵀQa ≤ 1`. The constraint value
//! `aᵀQa − 1` is a quadratic polynomial in `g` whose coefficients are
//! polynomials in `(x, y, cos θ, sin θ)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::distmoments::{MomentTable, PLANNER_ORDER};
use crate::polyalg::{
    mean_variance_expressions, render, CompiledPoly, DependencyStructure, Dialect,
    MomentExpression, PolyError, Polynomial, Roster,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("{0} must be positive and finite, got {1}")]
    NonPositive(&'static str, f64),
    #[error("agent length {length} is smaller than width {width}")]
    Degenerate { length: f64, width: f64 },
    #[error("ellipsoid matrix is not symmetric")]
    NotSymmetric,
    #[error("ellipsoid matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("circle offsets must be finite and non-empty")]
    BadOffsets,
    #[error("moment table must be 2-dimensional of order >= {PLANNER_ORDER}, got dimension {0} order {1}")]
    BadTable(usize, u32),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Planar ego pose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }

    /// Heading wrapped to `(−π, π]`, for display only.
    pub fn wrapped_heading(&self) -> f64 {
        let mut t = self.theta % (2.0 * PI);
        if t <= -PI {
            t += 2.0 * PI;
        } else if t > PI {
            t -= 2.0 * PI;
        }
        t
    }

    /// `R(θ)ᵀ(p − position)`.
    pub fn to_body(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

/// `{a : aᵀQa ≤ 1}` in the ego body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEllipsoid {
    q: [[f64; 2]; 2],
}

impl CollisionEllipsoid {
    pub fn new(q: [[f64; 2]; 2]) -> Result<Self, GeometryError> {
        if (q[0][1] - q[1][0]).abs() > 1e-12 {
            return Err(GeometryError::NotSymmetric);
        }
        let det = q[0][0] * q[1][1] - q[0][1] * q[1][0];
        if !(q[0][0] > 0.0 && det > 0.0) || q.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NotPositiveDefinite);
        }
        Ok(CollisionEllipsoid { q })
    }

    pub fn q(&self) -> [[f64; 2]; 2] {
        self.q
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.q[0][0], self.q[0][1], self.q[1][0], self.q[1][1])
    }

    /// `aᵀQa` for a body-frame point.
    pub fn quadratic_form(&self, a: [f64; 2]) -> f64 {
        let q = &self.q;
        q[0][0] * a[0] * a[0] + (q[0][1] + q[1][0]) * a[0] * a[1] + q[1][1] * a[1] * a[1]
    }
}

/// Circles of one radius placed along an agent's longitudinal axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentGeometry {
    pub radius: f64,
    pub offsets: Vec<f64>,
}

impl AgentGeometry {
    pub fn new(radius: f64, offsets: Vec<f64>) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::NonPositive("radius", radius));
        }
        if offsets.is_empty() || offsets.iter().any(|o| !o.is_finite()) {
            return Err(GeometryError::BadOffsets);
        }
        Ok(AgentGeometry { radius, offsets })
    }

    pub fn num_circles(&self) -> usize {
        self.offsets.len()
    }

    /// Offset vectors of the circle centres for an agent heading.
    pub fn center_offsets(&self, heading: f64) -> Vec<[f64; 2]> {
        let (s, c) = heading.sin_cos();
        self.offsets.iter().map(|&d| [d * c, d * s]).collect()
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64, GeometryError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(GeometryError::NonPositive(name, v))
    }
}

/// `Q = diag(1/(a+r)², 1/(b+r)²)` for ego half-length `a`, half-width `b`
/// and agent circle radius `r`.
pub fn ellipsoid_from_geometry(a: f64, b: f64, r: f64) -> Result<CollisionEllipsoid, GeometryError> {
    positive("ego half-length", a)?;
    positive("ego half-width", b)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(GeometryError::NonPositive("circle radius", r));
    }
    let (ra, rb) = (a + r, b + r);
    CollisionEllipsoid::new([[1.0 / (ra * ra), 0.0], [0.0, 1.0 / (rb * rb)]])
}

/// Circles covering an `L × W` agent rectangle.
///
/// Centres sit at `{−(L−W)/2, 0, (L−W)/2}` (one centre when `L = W`). The
/// radius is the farthest rectangle point from its nearest centre, reached
/// either at a corner or midway between centres on the long edge.
pub fn agent_circles(length: f64, width: f64) -> Result<AgentGeometry, GeometryError> {
    positive("agent length", length)?;
    positive("agent width", width)?;
    if length < width {
        return Err(GeometryError::Degenerate { length, width });
    }
    let d = 0.5 * (length - width);
    let half_w = 0.5 * width;
    let corner = half_w * std::f64::consts::SQRT_2;
    let between = (half_w * half_w + 0.25 * d * d).sqrt();
    let offsets = if d == 0.0 { vec![0.0] } else { vec![-d, 0.0, d] };
    AgentGeometry::new(corner.max(between), offsets)
}

const RANDOM: [&str; 2] = ["g_x", "g_y"];
const POSE: [&str; 4] = ["x_t", "y_t", "c", "s"];

fn roster() -> Roster {
    Roster::with_kinds(&RANDOM, &POSE).expect("fixed roster")
}

/// `Q(R(θ)ᵀ(g − y)) − 1` with random `(g_x, g_y)` and deterministic
/// `(x_t, y_t, c, s)` standing for position, `cos θ` and `sin θ`.
pub fn symbolic_constraint(q: &CollisionEllipsoid) -> Polynomial {
    let r = roster();
    let v = |n: &str| Polynomial::variable(&r, n).expect("roster variable");
    let (gx, gy, xt, yt, c, s) = (v("g_x"), v("g_y"), v("x_t"), v("y_t"), v("c"), v("s"));
    let dx = &gx - &xt;
    let dy = &gy - &yt;
    let a1 = &(&c * &dx) + &(&s * &dy);
    let a2 = &(&c * &dy) - &(&s * &dx);
    // Build Q(a) over body-frame symbols and substitute a = Rᵀ(g − y).
    let ar = Roster::with_kinds(&[], &["a1", "a2"]).expect("fixed roster");
    let b1 = Polynomial::variable(&ar, "a1").unwrap();
    let b2 = Polynomial::variable(&ar, "a2").unwrap();
    let m = q.q();
    let form = b1.pow(2).scale(m[0][0])
        + (&b1 * &b2).scale(m[0][1] + m[1][0])
        + b2.pow(2).scale(m[1][1])
        - Polynomial::constant(&ar, 1.0);
    let mut subs = BTreeMap::new();
    subs.insert("a1".to_string(), a1);
    subs.insert("a2".to_string(), a2);
    form.substitute(&subs)
        .and_then(|p| p.over(&r))
        .expect("substitution over a fixed roster")
}

/// The constraint polynomial at a concrete pose: quadratic in `(g_x, g_y)`.
pub fn body_frame_constraint(q: &CollisionEllipsoid, pose: &Pose) -> Polynomial {
    let p = symbolic_constraint(q);
    let gr = Roster::with_kinds(&RANDOM, &[]).expect("fixed roster");
    let (s, c) = pose.theta.sin_cos();
    let mut subs = BTreeMap::new();
    for (name, val) in POSE.iter().zip([pose.x, pose.y, c, s]) {
        subs.insert(name.to_string(), Polynomial::constant(&gr, val));
    }
    p.substitute(&subs)
        .and_then(|p| p.over(&gr))
        .expect("pose substitution")
}

/// Constraint mean and raw second moment with gradients in `(x, y, θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintMoments {
    pub mean: f64,
    pub second: f64,
    pub d_mean: [f64; 3],
    pub d_second: [f64; 3],
}

impl ConstraintMoments {
    pub fn variance(&self) -> f64 {
        (self.second - self.mean * self.mean).max(0.0)
    }
}

/// Pre-derived `E[p]` and `E[p²]` for one ellipsoid, ready to be bound to
/// numeric agent moments.
#[derive(Clone, Debug)]
pub struct ConstraintModel {
    ellipsoid: CollisionEllipsoid,
    mean_expr: MomentExpression,
    second_expr: MomentExpression,
}

impl ConstraintModel {
    pub fn new(ellipsoid: CollisionEllipsoid) -> Self {
        let p = symbolic_constraint(&ellipsoid);
        let (mean_expr, second_expr) = mean_variance_expressions(&p, &DependencyStructure::default());
        ConstraintModel {
            ellipsoid,
            mean_expr,
            second_expr,
        }
    }

    pub fn ellipsoid(&self) -> &CollisionEllipsoid {
        &self.ellipsoid
    }

    pub fn mean_expression(&self) -> &MomentExpression {
        &self.mean_expr
    }

    pub fn second_moment_expression(&self) -> &MomentExpression {
        &self.second_expr
    }

    /// `(E[p], E[p²])` rendered as text.
    pub fn rendered(&self, dialect: Dialect) -> (String, String) {
        (render(&self.mean_expr, dialect), render(&self.second_expr, dialect))
    }

    /// Substitute one agent's moment table.
    pub fn bind(&self, table: &MomentTable) -> Result<BoundConstraint, GeometryError> {
        if table.dimension() != 2 || table.order() < PLANNER_ORDER {
            return Err(GeometryError::BadTable(table.dimension(), table.order()));
        }
        Ok(BoundConstraint {
            mean: CompiledPoly::new(&self.mean_expr.bind(table)?),
            second: CompiledPoly::new(&self.second_expr.bind(table)?),
        })
    }
}

/// Constraint moments as compiled polynomials in `(x_t, y_t, c, s)`.
#[derive(Clone, Debug)]
pub struct BoundConstraint {
    mean: CompiledPoly,
    second: CompiledPoly,
}

impl BoundConstraint {
    pub fn eval(&self, pose: &Pose) -> ConstraintMoments {
        let (s, c) = pose.theta.sin_cos();
        let args = [pose.x, pose.y, c, s];
        let mut g = [0.0; 4];
        let mean = self.mean.eval_grad(&args, &mut g);
        let d_mean = [g[0], g[1], -s * g[2] + c * g[3]];
        let second = self.second.eval_grad(&args, &mut g);
        let d_second = [g[0], g[1], -s * g[2] + c * g[3]];
        ConstraintMoments {
            mean,
            second,
            d_mean,
            d_second,
        }
    }
}

/// Mean and variance of `Q(a) − 1` for an agent described by `table`.
pub fn constraint_mean_variance(
    q: &CollisionEllipsoid,
    pose: &Pose,
    table: &MomentTable,
) -> Result<(f64, f64), GeometryError> {
    let m = ConstraintModel::new(*q).bind(table)?.eval(pose);
    Ok((m.mean, m.variance()))
}

/// `Q(a(p)) − 1` for a known point `p`, with its gradient in `(x, y, θ)`.
pub fn point_constraint(q: &CollisionEllipsoid, pose: &Pose, p: [f64; 2]) -> (f64, [f64; 3]) {
    let (s, c) = pose.theta.sin_cos();
    let a = pose.to_body(p);
    let m = q.matrix();
    // ∇_a (aᵀQa) = (Q + Qᵀ)a.
    let ga = (m + m.transpose()) * nalgebra::Vector2::new(a[0], a[1]);
    let (dx, dy) = (p[0] - pose.x, p[1] - pose.y);
    // ∂a/∂x = (−c, s), ∂a/∂y = (−s, −c), ∂a/∂θ = (−s dx + c dy, −c dx − s dy).
    let grad = [
        ga[0] * -c + ga[1] * s,
        ga[0] * -s + ga[1] * -c,
        ga[0] * (-s * dx + c * dy) + ga[1] * (-c * dx - s * dy),
    ];
    (q.quadratic_form(a) - 1.0, grad)
}
