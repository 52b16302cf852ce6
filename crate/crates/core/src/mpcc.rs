//! Reference paths, contouring errors, kinematic bicycle dynamics with RK4
//! discretisation, and the tracking stage cost.

use nalgebra::{Matrix2, SMatrix, SVector};
use serde::{Deserialize, Serialize};

pub type StateVec = SVector<f64, 6>;
pub type ControlVec = SVector<f64, 2>;
pub type StateJac = SMatrix<f64, 6, 6>;
pub type ControlJac = SMatrix<f64, 6, 2>;

/// Index of each state component in [`StateVec`].
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const THETA: usize = 2;
    pub const V: usize = 3;
    pub const DELTA: usize = 4;
    pub const S: usize = 5;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("path length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("path coefficients must be finite")]
    NonFinite,
    #[error("path tangent vanishes near s = {0}")]
    ZeroTangent(f64),
    #[error("arc-length quadrature did not converge")]
    Quadrature,
}

/// Cubic reference path `(x_ref(s), y_ref(s))` for `s ∈ [0, length]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    cx: [f64; 4],
    cy: [f64; 4],
    length: f64,
}

fn cubic(c: &[f64; 4], s: f64) -> f64 {
    ((c[3] * s + c[2]) * s + c[1]) * s + c[0]
}

fn cubic_d1(c: &[f64; 4], s: f64) -> f64 {
    (3.0 * c[3] * s + 2.0 * c[2]) * s + c[1]
}

fn cubic_d2(c: &[f64; 4], s: f64) -> f64 {
    6.0 * c[3] * s + 2.0 * c[2]
}

impl ReferencePath {
    /// Coefficients are per power of `s`: `x_ref(s) = Σ cx[k] s^k`.
    pub fn new(cx: [f64; 4], cy: [f64; 4], length: f64) -> Result<Self, PathError> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(PathError::BadLength(length));
        }
        if cx.iter().chain(&cy).any(|c| !c.is_finite()) {
            return Err(PathError::NonFinite);
        }
        let p = ReferencePath { cx, cy, length };
        let scale = cx.iter().chain(&cy).fold(0.0f64, |a, c| a.max(c.abs())).max(1e-300);
        for i in 0..=1000 {
            let s = length * i as f64 / 1000.0;
            let (dx, dy) = p.tangent(s);
            if dx.hypot(dy) <= 1e-9 * scale {
                return Err(PathError::ZeroTangent(s));
            }
        }
        Ok(p)
    }

    /// Path over the unit parameter interval, before arc-length scaling.
    pub fn unit(cx: [f64; 4], cy: [f64; 4]) -> Result<Self, PathError> {
        ReferencePath::new(cx, cy, 1.0)
    }

    pub fn cx(&self) -> [f64; 4] {
        self.cx
    }

    pub fn cy(&self) -> [f64; 4] {
        self.cy
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Whether `s` lies in the nominal domain `[0, length]`. Evaluation
    /// outside it extrapolates the cubic.
    pub fn in_domain(&self, s: f64) -> bool {
        (0.0..=self.length).contains(&s)
    }

    pub fn point(&self, s: f64) -> (f64, f64) {
        (cubic(&self.cx, s), cubic(&self.cy, s))
    }

    pub fn tangent(&self, s: f64) -> (f64, f64) {
        (cubic_d1(&self.cx, s), cubic_d1(&self.cy, s))
    }

    pub fn curvature_vector(&self, s: f64) -> (f64, f64) {
        (cubic_d2(&self.cx, s), cubic_d2(&self.cy, s))
    }

    /// `Θ(s) = atan2(y_ref'(s), x_ref'(s))`.
    pub fn heading(&self, s: f64) -> f64 {
        let (dx, dy) = self.tangent(s);
        dy.atan2(dx)
    }

    /// `dΘ/ds`.
    pub fn heading_rate(&self, s: f64) -> f64 {
        let (dx, dy) = self.tangent(s);
        let (ddx, ddy) = self.curvature_vector(s);
        (dx * ddy - dy * ddx) / (dx * dx + dy * dy)
    }

    /// Length of the curve over its parameter domain.
    pub fn curve_length(&self) -> Result<f64, PathError> {
        let speed = |s: f64| {
            let (dx, dy) = self.tangent(s);
            dx.hypot(dy)
        };
        adaptive_simpson(&speed, 0.0, self.length, 1e-8).ok_or(PathError::Quadrature)
    }

    /// Points along the path for plotting.
    pub fn sample(&self, n: usize) -> Vec<(f64, f64)> {
        (0..=n)
            .map(|i| self.point(self.length * i as f64 / n as f64))
            .collect()
    }
}

/// Rescale a unit-parameter path so its parameter runs over `[0, L]` where
/// `L` is its curve length: `c_k ← c_k / L^k`. The new parameter is only
/// approximately arc length.
pub fn arc_length_scale(path: &ReferencePath) -> Result<ReferencePath, PathError> {
    let l = path.curve_length()?;
    let scale = |c: [f64; 4]| {
        let mut out = c;
        for (k, v) in out.iter_mut().enumerate() {
            *v = c[k] * (path.length / l).powi(k as i32);
        }
        out
    };
    ReferencePath::new(scale(path.cx), scale(path.cy), l)
}

pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Option<f64> {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let err = left + right - whole;
        if !err.is_finite() {
            return None;
        }
        if err.abs() <= 15.0 * tol {
            return Some(left + right + err / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?,
        )
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// Ego vehicle state; `s` is the distance travelled along the path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub delta: f64,
    pub s: f64,
}

impl EgoState {
    pub fn to_vec(&self) -> StateVec {
        StateVec::new(self.x, self.y, self.theta, self.v, self.delta, self.s)
    }

    pub fn from_vec(v: &StateVec) -> Self {
        EgoState {
            x: v[0],
            y: v[1],
            theta: v[2],
            v: v[3],
            delta: v[4],
            s: v[5],
        }
    }
}

/// Acceleration and steering rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub steer_rate: f64,
}

impl Control {
    pub fn to_vec(&self) -> ControlVec {
        ControlVec::new(self.accel, self.steer_rate)
    }

    pub fn from_vec(v: &ControlVec) -> Self {
        Control {
            accel: v[0],
            steer_rate: v[1],
        }
    }
}

/// Distances from the centre of gravity to the front and rear axles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub lf: f64,
    pub lr: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams { lf: 1.35, lr: 1.35 }
    }
}

/// Stage-cost weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub c_d: f64,
    pub c_l: f64,
    pub c_v: f64,
    pub r: [[f64; 2]; 2],
    pub v_ref: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            c_d: 20.0,
            c_l: 1.0,
            c_v: 1.0,
            r: [[1.0, 0.0], [0.0, 100.0]],
            v_ref: 5.0,
        }
    }
}

impl CostParams {
    pub fn r_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.r[0][0], self.r[0][1], self.r[1][0], self.r[1][1])
    }

    pub fn is_valid(&self) -> bool {
        let r = self.r_matrix();
        self.c_d >= 0.0
            && self.c_l >= 0.0
            && self.c_v >= 0.0
            && (r[(0, 1)] - r[(1, 0)]).abs() <= 1e-12
            && r[(0, 0)] > 0.0
            && r.determinant() > 0.0
    }
}

/// Slip angle `β = atan(l_r/(l_f+l_r) · tan δ)` and `dβ/dδ`.
pub fn slip_angle(delta: f64, p: &VehicleParams) -> (f64, f64) {
    let k = p.lr / (p.lf + p.lr);
    let t = delta.tan();
    let beta = (k * t).atan();
    let c = delta.cos();
    (beta, k / (c * c * (1.0 + k * k * t * t)))
}

/// Continuous-time kinematic bicycle model.
pub fn bicycle_derivative(x: &StateVec, u: &ControlVec, p: &VehicleParams) -> StateVec {
    let (beta, _) = slip_angle(x[idx::DELTA], p);
    let v = x[idx::V];
    let h = x[idx::THETA] + beta;
    StateVec::new(
        v * h.cos(),
        v * h.sin(),
        v / p.lr * beta.sin(),
        u[0],
        u[1],
        v,
    )
}

/// Jacobians of [`bicycle_derivative`] in state and control.
pub fn bicycle_jacobian(x: &StateVec, _u: &ControlVec, p: &VehicleParams) -> (StateJac, ControlJac) {
    let (beta, db) = slip_angle(x[idx::DELTA], p);
    let v = x[idx::V];
    let h = x[idx::THETA] + beta;
    let (sh, ch) = h.sin_cos();
    let mut a = StateJac::zeros();
    a[(0, idx::THETA)] = -v * sh;
    a[(1, idx::THETA)] = v * ch;
    a[(0, idx::V)] = ch;
    a[(1, idx::V)] = sh;
    a[(2, idx::V)] = beta.sin() / p.lr;
    a[(5, idx::V)] = 1.0;
    a[(0, idx::DELTA)] = -v * sh * db;
    a[(1, idx::DELTA)] = v * ch * db;
    a[(2, idx::DELTA)] = v / p.lr * beta.cos() * db;
    let mut b = ControlJac::zeros();
    b[(idx::V, 0)] = 1.0;
    b[(idx::DELTA, 1)] = 1.0;
    (a, b)
}

/// One classical RK4 step with the control held over the interval.
pub fn rk4_step(x: &StateVec, u: &ControlVec, dt: f64, p: &VehicleParams) -> StateVec {
    let k1 = bicycle_derivative(x, u, p);
    let k2 = bicycle_derivative(&(x + k1 * (0.5 * dt)), u, p);
    let k3 = bicycle_derivative(&(x + k2 * (0.5 * dt)), u, p);
    let k4 = bicycle_derivative(&(x + k3 * dt), u, p);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// RK4 step with its exact Jacobians `∂x⁺/∂x` and `∂x⁺/∂u`.
pub fn rk4_step_jacobian(
    x: &StateVec,
    u: &ControlVec,
    dt: f64,
    p: &VehicleParams,
) -> (StateVec, StateJac, ControlJac) {
    let i6 = StateJac::identity();
    let x1 = *x;
    let k1 = bicycle_derivative(&x1, u, p);
    let (a1, b1) = bicycle_jacobian(&x1, u, p);
    let x2 = x + k1 * (0.5 * dt);
    let k2 = bicycle_derivative(&x2, u, p);
    let (a2, b2) = bicycle_jacobian(&x2, u, p);
    let x3 = x + k2 * (0.5 * dt);
    let k3 = bicycle_derivative(&x3, u, p);
    let (a3, b3) = bicycle_jacobian(&x3, u, p);
    let x4 = x + k3 * dt;
    let k4 = bicycle_derivative(&x4, u, p);
    let (a4, b4) = bicycle_jacobian(&x4, u, p);

    let dk1x = a1;
    let dk2x = a2 * (i6 + dk1x * (0.5 * dt));
    let dk3x = a3 * (i6 + dk2x * (0.5 * dt));
    let dk4x = a4 * (i6 + dk3x * dt);
    let dk1u = b1;
    let dk2u = a2 * dk1u * (0.5 * dt) + b2;
    let dk3u = a3 * dk2u * (0.5 * dt) + b3;
    let dk4u = a4 * dk3u * dt + b4;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let jx = i6 + (dk1x + dk2x * 2.0 + dk3x * 2.0 + dk4x) * (dt / 6.0);
    let ju = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (dt / 6.0);
    (next, jx, ju)
}

/// Contouring deviation `D` and lag error `L` at the state's own `s`.
pub fn contouring_errors(x: &StateVec, path: &ReferencePath) -> (f64, f64) {
    let s = x[idx::S];
    let (xr, yr) = path.point(s);
    let th = path.heading(s);
    let (st, ct) = th.sin_cos();
    let (xb, yb) = (x[idx::X] - xr, x[idx::Y] - yr);
    (st * xb - ct * yb, -ct * xb - st * yb)
}

/// `(D, L)` and their gradients in the full state.
pub fn contouring_errors_jacobian(x: &StateVec, path: &ReferencePath) -> ((f64, f64), [StateVec; 2]) {
    let s = x[idx::S];
    let (xr, yr) = path.point(s);
    let (dxr, dyr) = path.tangent(s);
    let th = path.heading(s);
    let dth = path.heading_rate(s);
    let (st, ct) = th.sin_cos();
    let (xb, yb) = (x[idx::X] - xr, x[idx::Y] - yr);
    let d = st * xb - ct * yb;
    let l = -ct * xb - st * yb;
    let mut gd = StateVec::zeros();
    gd[idx::X] = st;
    gd[idx::Y] = -ct;
    gd[idx::S] = ct * dth * xb - st * dxr + st * dth * yb + ct * dyr;
    let mut gl = StateVec::zeros();
    gl[idx::X] = -ct;
    gl[idx::Y] = -st;
    gl[idx::S] = st * dth * xb + ct * dxr - ct * dth * yb + st * dyr;
    ((d, l), [gd, gl])
}

/// State part of the stage cost: `c_D D² + c_L L² + c_v (v − v*)²`.
pub fn state_cost(x: &StateVec, c: &CostParams, path: &ReferencePath) -> f64 {
    let (d, l) = contouring_errors(x, path);
    let dv = x[idx::V] - c.v_ref;
    c.c_d * d * d + c.c_l * l * l + c.c_v * dv * dv
}

pub fn control_cost(u: &ControlVec, c: &CostParams) -> f64 {
    (u.transpose() * c.r_matrix() * u)[(0, 0)]
}

/// `c(x, u) = c_D D² + c_L L² + uᵀRu + c_v (v − v*)²`.
pub fn stage_cost(x: &StateVec, u: &ControlVec, c: &CostParams, path: &ReferencePath) -> f64 {
    state_cost(x, c, path) + control_cost(u, c)
}

/// State cost with gradient and Gauss–Newton Hessian `2 JᵀWJ` of the
/// residuals `(D, L, v − v*)`.
pub fn state_cost_derivatives(
    x: &StateVec,
    c: &CostParams,
    path: &ReferencePath,
) -> (f64, StateVec, StateJac) {
    let ((d, l), [gd, gl]) = contouring_errors_jacobian(x, path);
    let dv = x[idx::V] - c.v_ref;
    let mut gv = StateVec::zeros();
    gv[idx::V] = 1.0;
    let value = c.c_d * d * d + c.c_l * l * l + c.c_v * dv * dv;
    let grad = gd * (2.0 * c.c_d * d) + gl * (2.0 * c.c_l * l) + gv * (2.0 * c.c_v * dv);
    let gn = gd * gd.transpose() * (2.0 * c.c_d)
        + gl * gl.transpose() * (2.0 * c.c_l)
        + gv * gv.transpose() * (2.0 * c.c_v);
    (value, grad, gn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_axis() -> ReferencePath {
        ReferencePath::new([0.0, 1.0, 0.0, 0.0], [0.0; 4], 10.0).unwrap()
    }

    #[test]
    fn straight_path_heading_and_scaling() {
        let p = ReferencePath::unit([0.0, 3.0, 0.0, 0.0], [0.0, 4.0, 0.0, 0.0]).unwrap();
        assert!((p.heading(0.3) - 4f64.atan2(3.0)).abs() < 1e-15);
        let s = arc_length_scale(&p).unwrap();
        assert!((s.length() - 5.0).abs() < 1e-12);
        assert!((s.cx()[1] - 0.6).abs() < 1e-12);
        assert_eq!(p.point(0.0), (0.0, 0.0));
        let u = arc_length_scale(&ReferencePath::unit([0.0, 1.0, 0.0, 0.0], [0.0; 4]).unwrap()).unwrap();
        assert!((u.length() - 1.0).abs() < 1e-12 && (u.cx()[1] - 1.0).abs() < 1e-12);
        assert_eq!(x_axis().heading(4.0), 0.0);
    }

    #[test]
    fn rejects_degenerate_paths() {
        assert!(matches!(
            ReferencePath::new([0.0; 4], [0.0; 4], 1.0),
            Err(PathError::ZeroTangent(_))
        ));
        assert!(matches!(
            ReferencePath::new([0.0, 1.0, 0.0, 0.0], [0.0; 4], 0.0),
            Err(PathError::BadLength(_))
        ));
    }

    #[test]
    fn contouring_examples() {
        let p = x_axis();
        let x = StateVec::new(5.0, 0.3, 0.0, 0.0, 0.0, 4.0);
        let (d, l) = contouring_errors(&x, &p);
        assert!((d + 0.3).abs() < 1e-15 && (l + 1.0).abs() < 1e-15);
        let on = StateVec::new(4.0, 0.0, 0.0, 0.0, 0.0, 4.0);
        assert_eq!(contouring_errors(&on, &p), (0.0, 0.0));
    }

    #[test]
    fn bicycle_examples() {
        let p = VehicleParams::default();
        let x = StateVec::new(0.0, 0.0, 0.0, 10.0, 0.0, 0.0);
        let f = bicycle_derivative(&x, &ControlVec::zeros(), &p);
        assert_eq!(f, StateVec::new(10.0, 0.0, 0.0, 0.0, 0.0, 10.0));
        assert_eq!(
            bicycle_derivative(&StateVec::zeros(), &ControlVec::zeros(), &p),
            StateVec::zeros()
        );
        let (b, _) = slip_angle(0.2, &p);
        assert!((b - (0.5 * 0.2f64.tan()).atan()).abs() < 1e-15);
        assert!((b - 0.1010101).abs() < 1e-7);
        let n = rk4_step(&x, &ControlVec::zeros(), 0.1, &p);
        assert!((n[0] - 1.0).abs() < 1e-15 && (n[5] - 1.0).abs() < 1e-15);
        assert_eq!(rk4_step(&StateVec::zeros(), &ControlVec::zeros(), 0.1, &p), StateVec::zeros());
    }

    #[test]
    fn cost_examples() {
        let c = CostParams::default();
        let p = x_axis();
        let on = StateVec::new(2.0, 0.0, 0.0, c.v_ref, 0.0, 2.0);
        assert_eq!(stage_cost(&on, &ControlVec::zeros(), &c, &p), 0.0);
        let off = StateVec::new(2.0, -1.0, 0.0, c.v_ref, 0.0, 2.0);
        assert!((stage_cost(&off, &ControlVec::zeros(), &c, &p) - 20.0).abs() < 1e-12);
        assert!((stage_cost(&on, &ControlVec::new(0.0, 0.1), &c, &p) - 1.0).abs() < 1e-12);
        assert!(c.is_valid());
    }
}
