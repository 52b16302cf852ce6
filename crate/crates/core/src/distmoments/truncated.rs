use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::gaussian::GaussianSpec;
use super::table::{binomial, MomentTable};
use super::DistError;

/// Smallest admissible probability of the truncation box.
pub const MIN_BOX_MASS: f64 = 1e-12;

const QUAD_START: usize = 40;
const QUAD_MAX: usize = 640;
const QUAD_TOL: f64 = 1e-8;

/// Axis-aligned box `[lower, upper]` in the global frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBox {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

/// A Gaussian conditioned on lying in an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedGaussianSpec {
    pub base: GaussianSpec,
    #[serde(rename = "box")]
    pub bounds: TruncationBox,
}

impl TruncatedGaussianSpec {
    pub fn new(base: GaussianSpec, lower: [f64; 2], upper: [f64; 2]) -> Result<Self, DistError> {
        let t = TruncatedGaussianSpec {
            base,
            bounds: TruncationBox { lower, upper },
        };
        t.validate()?;
        Ok(t)
    }

    /// Box `mean ± k·σ` per axis.
    pub fn at_sigmas(base: &GaussianSpec, k: f64) -> Result<Self, DistError> {
        if !(k > 0.0) {
            return Err(DistError::InvalidTruncation(k));
        }
        let s = base.std_devs();
        let m = base.mean;
        TruncatedGaussianSpec::new(
            base.clone(),
            [m[0] - k * s[0], m[1] - k * s[1]],
            [m[0] + k * s[0], m[1] + k * s[1]],
        )
    }

    pub fn validate(&self) -> Result<(), DistError> {
        self.base.validate()?;
        let b = &self.bounds;
        let s = self.base.std_devs();
        for i in 0..2 {
            // A zero-width side is only meaningful for a degenerate axis.
            let ok = b.lower[i] < b.upper[i] || (b.lower[i] == b.upper[i] && s[i] == 0.0);
            if !ok {
                return Err(DistError::EmptyBox);
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let b = &self.bounds;
        (0..2).all(|i| p[i] >= b.lower[i] && p[i] <= b.upper[i])
    }

    pub fn moments(&self, order: u32) -> Result<MomentTable, DistError> {
        truncated_gaussian_moments(self, order)
    }
}

fn std_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ(b) − Φ(a)` without cancellation in the far tails.
pub(crate) fn std_interval_mass(a: f64, b: f64) -> f64 {
    let r = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a / r) - erfc(b / r))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / r) - erfc(-a / r))
    } else {
        1.0 - 0.5 * (erfc(-a / r) + erfc(b / r))
    }
}

/// Raw moments `E[z^k]`, `k ≤ order`, of a standard normal truncated to `[a, b]`.
pub(crate) fn std_truncated_1d(a: f64, b: f64, order: u32) -> Result<Vec<f64>, DistError> {
    let z = std_interval_mass(a, b);
    if !(z > MIN_BOX_MASS) {
        return Err(DistError::NegligibleMass(z));
    }
    let (fa, fb) = (std_pdf(a), std_pdf(b));
    let mut m = vec![1.0];
    if order >= 1 {
        m.push((fa - fb) / z);
    }
    for k in 2..=order as usize {
        let pa = if fa == 0.0 { 0.0 } else { a.powi(k as i32 - 1) * fa };
        let pb = if fb == 0.0 { 0.0 } else { b.powi(k as i32 - 1) * fb };
        m.push((k - 1) as f64 * m[k - 2] + (pa - pb) / z);
    }
    Ok(m)
}

/// Raw moments of `N(μ, σ²)` truncated to `[lo, hi]`.
fn truncated_1d(mu: f64, sigma: f64, lo: f64, hi: f64, order: u32) -> Result<Vec<f64>, DistError> {
    if sigma == 0.0 {
        if mu < lo || mu > hi {
            return Err(DistError::NegligibleMass(0.0));
        }
        return Ok((0..=order).map(|k| mu.powi(k as i32)).collect());
    }
    let zm = std_truncated_1d((lo - mu) / sigma, (hi - mu) / sigma, order)?;
    Ok((0..=order)
        .map(|k| {
            (0..=k)
                .map(|j| binomial(k, j) * mu.powi((k - j) as i32) * sigma.powi(j as i32) * zm[j as usize])
                .sum()
        })
        .collect())
}

/// Box mass under the base distribution.
pub fn box_mass(spec: &TruncatedGaussianSpec) -> f64 {
    let s = spec.base.std_devs();
    let m = spec.base.mean;
    let b = &spec.bounds;
    let axis = |i: usize| {
        if s[i] == 0.0 {
            f64::from(u8::from(m[i] >= b.lower[i] && m[i] <= b.upper[i]))
        } else {
            std_interval_mass((b.lower[i] - m[i]) / s[i], (b.upper[i] - m[i]) / s[i])
        }
    };
    if spec.base.cov[0][1] == 0.0 {
        axis(0) * axis(1)
    } else {
        quadrature(spec, 1, QUAD_START).map(|(mass, _)| mass).unwrap_or(0.0)
    }
}

pub fn truncated_gaussian_moments(
    spec: &TruncatedGaussianSpec,
    order: u32,
) -> Result<MomentTable, DistError> {
    spec.validate()?;
    let base = &spec.base;
    let b = &spec.bounds;
    let s = base.std_devs();
    if base.cov[0][1] == 0.0 {
        let mx = truncated_1d(base.mean[0], s[0], b.lower[0], b.upper[0], order)?;
        let my = truncated_1d(base.mean[1], s[1], b.lower[1], b.upper[1], order)?;
        return MomentTable::from_fn(2, order, |idx| mx[idx.get(0) as usize] * my[idx.get(1) as usize]);
    }
    // A singular correlated covariance concentrates on a line; refuse rather
    // than integrate a delta.
    let det = base.cov_matrix().determinant();
    if det <= 1e-14 * (base.cov[0][0] * base.cov[1][1]).max(f64::MIN_POSITIVE) {
        return Err(DistError::SingularCorrelated);
    }
    if (0..2).any(|i| !b.lower[i].is_finite() || !b.upper[i].is_finite()) {
        // Unbounded sides: clip at 12σ, beyond which the density is below
        // double precision relevance.
        let mut clipped = spec.clone();
        for i in 0..2 {
            clipped.bounds.lower[i] = b.lower[i].max(base.mean[i] - 12.0 * s[i]);
            clipped.bounds.upper[i] = b.upper[i].min(base.mean[i] + 12.0 * s[i]);
            if clipped.bounds.lower[i] >= clipped.bounds.upper[i] {
                return Err(DistError::NegligibleMass(0.0));
            }
        }
        return truncated_gaussian_moments(&clipped, order);
    }
    let mut n = QUAD_START;
    let (mass, mut prev) = quadrature(spec, order, n)?;
    if !(mass > MIN_BOX_MASS) {
        return Err(DistError::NegligibleMass(mass));
    }
    while n < QUAD_MAX {
        n *= 2;
        let (_, next) = quadrature(spec, order, n)?;
        let diff = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev = next;
        if diff < QUAD_TOL {
            let entries = super::table_entries(order, &prev);
            return MomentTable::new(2, order, entries);
        }
    }
    Err(DistError::QuadratureNonConvergence(QUAD_MAX))
}

/// Box moments from a fixed `n × n` Gauss–Legendre rule, bypassing both the
/// diagonal fast path and refinement. Finite boxes only.
pub fn quadrature_moments(
    spec: &TruncatedGaussianSpec,
    order: u32,
    n: usize,
) -> Result<MomentTable, DistError> {
    spec.validate()?;
    let (_, v) = quadrature(spec, order, n)?;
    MomentTable::new(2, order, super::table_entries(order, &v))
}

/// Tensor Gauss–Legendre estimate of the box mass and normalised moments,
/// returned in `MultiIndex::all_up_to(2, order)` order.
fn quadrature(
    spec: &TruncatedGaussianSpec,
    order: u32,
    n: usize,
) -> Result<(f64, Vec<f64>), DistError> {
    let base = &spec.base;
    let b = &spec.bounds;
    let prec: Matrix2<f64> = base
        .cov_matrix()
        .try_inverse()
        .ok_or(DistError::SingularCorrelated)?;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * base.cov_matrix().determinant().sqrt());
    let (nodes, weights) = gauss_legendre(n);
    let map = |i: usize| {
        let half = 0.5 * (b.upper[i] - b.lower[i]);
        let mid = 0.5 * (b.upper[i] + b.lower[i]);
        let xs: Vec<f64> = nodes.iter().map(|t| mid + half * t).collect();
        let ws: Vec<f64> = weights.iter().map(|w| w * half).collect();
        (xs, ws)
    };
    let (xs, wx) = map(0);
    let (ys, wy) = map(1);
    let idx = crate::polyalg::MultiIndex::all_up_to(2, order);
    let mut acc = vec![0.0; idx.len()];
    let mut mass = 0.0;
    let o = order as usize;
    let mut px = vec![1.0; o + 1];
    let mut py = vec![1.0; o + 1];
    for (x, wxi) in xs.iter().zip(&wx) {
        let dx = x - base.mean[0];
        for k in 1..=o {
            px[k] = px[k - 1] * x;
        }
        for (y, wyj) in ys.iter().zip(&wy) {
            let dy = y - base.mean[1];
            let q = prec[(0, 0)] * dx * dx + 2.0 * prec[(0, 1)] * dx * dy + prec[(1, 1)] * dy * dy;
            let f = wxi * wyj * norm * (-0.5 * q).exp();
            if f == 0.0 {
                continue;
            }
            mass += f;
            for k in 1..=o {
                py[k] = py[k - 1] * y;
            }
            for (a, m) in acc.iter_mut().zip(&idx) {
                *a += f * px[m.get(0) as usize] * py[m.get(1) as usize];
            }
        }
    }
    if !(mass > MIN_BOX_MASS) {
        return Err(DistError::NegligibleMass(mass));
    }
    Ok((mass, acc.into_iter().map(|a| a / mass).collect()))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rules_integrate_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((q - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn one_dimensional_recurrence_limits() {
        let m = std_truncated_1d(f64::NEG_INFINITY, f64::INFINITY, 4).unwrap();
        assert!((m[2] - 1.0).abs() < 1e-15 && (m[4] - 3.0).abs() < 1e-14);
        // Half-normal mean is sqrt(2/pi).
        let h = std_truncated_1d(0.0, f64::INFINITY, 1).unwrap();
        assert!((h[1] - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn far_tail_mass_is_accurate() {
        let z = std_interval_mass(10.0, 11.0);
        assert!(z > 7e-24 && z < 8e-24);
        assert!(matches!(
            std_truncated_1d(40.0, 41.0, 2),
            Err(DistError::NegligibleMass(_))
        ));
    }

    #[test]
    fn correlated_quadrature_matches_fast_path_when_uncorrelated() {
        let base = GaussianSpec::new([0.5, -0.2], [[1.0, 1e-300], [1e-300, 2.0]]).unwrap();
        let spec = TruncatedGaussianSpec::new(base.clone(), [-1.0, -2.0], [2.0, 1.0]).unwrap();
        let quad = spec.moments(4).unwrap();
        let mut diag = spec.clone();
        diag.base.cov = [[1.0, 0.0], [0.0, 2.0]];
        let exact = diag.moments(4).unwrap();
        for (k, v) in exact.entries() {
            assert!((quad.get(k).unwrap() - v).abs() < 1e-9, "{k}");
        }
    }

    #[test]
    fn empty_box_and_far_box() {
        let base = GaussianSpec::isotropic([0.0, 0.0], 1.0);
        assert!(matches!(
            TruncatedGaussianSpec::new(base.clone(), [1.0, 0.0], [0.0, 1.0]),
            Err(DistError::EmptyBox)
        ));
        let far = TruncatedGaussianSpec::new(base, [50.0, 50.0], [51.0, 51.0]).unwrap();
        assert!(matches!(far.moments(4), Err(DistError::NegligibleMass(_))));
    }
}
