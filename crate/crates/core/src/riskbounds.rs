//! Concentration-inequality tail bounds, mixture bounding and risk allocation.
//!
//! All bounds are for `P(X ≤ 0)` where `X` is a scalar constraint value with
//! mean `μ` and variance `σ²`; a constraint is satisfied when `X > 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RiskError {
    #[error("variance must be non-negative and finite, got {0}")]
    NegativeVariance(f64),
    #[error("mean must be finite, got {0}")]
    NonFiniteMean(f64),
    #[error("Gauss bound is undefined at zero mean")]
    UndefinedGaussBound,
    #[error("bound hypothesis Conc* <= 0 fails for components {0:?}")]
    HypothesisViolated(Vec<usize>),
    #[error("bound {0} is invalid (Conc* > 0)")]
    InvalidBound(usize),
    #[error("mixture weights must be non-negative and sum to 1 (sum {0})")]
    InvalidWeights(f64),
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("invalid risk budget {0}")]
    InvalidBudget(f64),
    #[error("allocation grid must have at least one step and equal-length rows")]
    EmptyAllocation,
    #[error("allocation total {total} exceeds budget {budget}")]
    OverBudget { total: f64, budget: f64 },
    #[error("allocation entries must be non-negative")]
    NegativeEpsilon,
    #[error("unknown inequality '{0}' (expected cantelli, vp or gauss)")]
    UnknownKind(String),
}

/// Which concentration inequality to apply.
///
/// `Vp` assumes the constraint value is unimodal; `Gauss` additionally
/// assumes it is symmetric about its mode. Neither is checked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcKind {
    Cantelli,
    #[default]
    Vp,
    Gauss,
}

impl ConcKind {
    pub const ALL: [ConcKind; 3] = [ConcKind::Cantelli, ConcKind::Vp, ConcKind::Gauss];

    pub fn requires_unimodal(self) -> bool {
        !matches!(self, ConcKind::Cantelli)
    }

    pub fn requires_symmetric(self) -> bool {
        matches!(self, ConcKind::Gauss)
    }

    /// Multiplier `k` in `Conc* = −μ + k·σ`.
    pub fn sigma_factor(self) -> f64 {
        match self {
            ConcKind::Cantelli => 0.0,
            ConcKind::Vp => (5.0f64 / 3.0).sqrt(),
            ConcKind::Gauss => 2.0 / 3.0,
        }
    }
}

impl fmt::Display for ConcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConcKind::Cantelli => "cantelli",
            ConcKind::Vp => "vp",
            ConcKind::Gauss => "gauss",
        })
    }
}

impl FromStr for ConcKind {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self, RiskError> {
        match s.to_ascii_lowercase().as_str() {
            "cantelli" => Ok(ConcKind::Cantelli),
            "vp" | "vysochanskij-petunin" => Ok(ConcKind::Vp),
            "gauss" => Ok(ConcKind::Gauss),
            _ => Err(RiskError::UnknownKind(s.to_string())),
        }
    }
}

/// Tail bound with its validity margin. `valid` holds iff `conc_star ≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskBound {
    pub value: f64,
    pub conc_star: f64,
    pub valid: bool,
}

impl RiskBound {
    fn new(value: f64, conc_star: f64) -> Self {
        RiskBound {
            value: value.clamp(0.0, 1.0),
            conc_star,
            valid: conc_star <= 0.0,
        }
    }

    /// Why the bound may not be used, if it may not.
    pub fn diagnostic(&self) -> Option<String> {
        (!self.valid).then(|| {
            format!(
                "Conc* = {:.6e} > 0: the mean is too close to (or beyond) the boundary for this inequality to bound P(X <= 0)",
                self.conc_star
            )
        })
    }
}

fn check_moments(mean: f64, variance: f64) -> Result<(), RiskError> {
    if !mean.is_finite() {
        return Err(RiskError::NonFiniteMean(mean));
    }
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(RiskError::NegativeVariance(variance));
    }
    Ok(())
}

/// Bound on `P(X ≤ 0)` from the mean and variance of `X`.
pub fn conc(mean: f64, variance: f64, kind: ConcKind) -> Result<RiskBound, RiskError> {
    check_moments(mean, variance)?;
    let m2 = mean * mean;
    let value = match kind {
        ConcKind::Cantelli | ConcKind::Vp if variance + m2 == 0.0 => 1.0,
        ConcKind::Cantelli => variance / (variance + m2),
        ConcKind::Vp => 4.0 / 9.0 * variance / (variance + m2),
        ConcKind::Gauss if mean == 0.0 => return Err(RiskError::UndefinedGaussBound),
        ConcKind::Gauss => 2.0 / 9.0 * variance / m2,
    };
    Ok(RiskBound::new(value, conc_star(mean, variance, kind)))
}

pub fn conc_star(mean: f64, variance: f64, kind: ConcKind) -> f64 {
    -mean + kind.sigma_factor() * variance.max(0.0).sqrt()
}

/// Bound value on the `Conc* = 0` boundary.
pub fn conc_boundary_value(kind: ConcKind) -> f64 {
    match kind {
        ConcKind::Cantelli => 1.0,
        ConcKind::Vp => 1.0 / 6.0,
        ConcKind::Gauss => 0.5,
    }
}

/// Unclamped bound and validity margin with gradients, parameterised by the
/// mean `μ` and raw second moment `m2 = E[X²]` (so `σ² = m2 − μ²`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcDerivatives {
    pub value: f64,
    pub d_value: [f64; 2],
    pub conc_star: f64,
    pub d_conc_star: [f64; 2],
}

/// Smooth form of [`conc`] for optimisers. Cantelli and VP reduce to
/// `c·(1 − μ²/m2)`; Gauss to `(2/9)(m2/μ² − 1)`.
pub fn conc_from_raw(mean: f64, m2: f64, kind: ConcKind) -> ConcDerivatives {
    let (value, d_value) = match kind {
        ConcKind::Cantelli | ConcKind::Vp => {
            let c = if kind == ConcKind::Vp { 4.0 / 9.0 } else { 1.0 };
            if m2 <= 0.0 {
                (c, [0.0, 0.0])
            } else {
                let r = mean / m2;
                (c * (1.0 - mean * r), [-2.0 * c * r, c * r * r])
            }
        }
        ConcKind::Gauss => {
            let k = 2.0 / 9.0;
            let mu2 = mean * mean;
            (
                k * (m2 / mu2 - 1.0),
                [-2.0 * k * m2 / (mu2 * mean), k / mu2],
            )
        }
    };
    let var = (m2 - mean * mean).max(0.0);
    let f = kind.sigma_factor();
    let sigma = var.sqrt();
    let (conc_star, d_conc_star) = if f == 0.0 {
        (-mean, [-1.0, 0.0])
    } else if sigma > 0.0 {
        let ds = 0.5 / sigma;
        (-mean + f * sigma, [-1.0 + f * ds * (-2.0 * mean), f * ds])
    } else {
        (-mean, [-1.0, 0.0])
    };
    ConcDerivatives {
        value,
        d_value,
        conc_star,
        d_conc_star,
    }
}

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<(), RiskError> {
    let mut sum = 0.0;
    let mut n = 0;
    for w in weights {
        if !(w >= 0.0) {
            return Err(RiskError::InvalidWeights(w));
        }
        sum += w;
        n += 1;
    }
    if n == 0 {
        return Err(RiskError::EmptyMixture);
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(RiskError::InvalidWeights(sum));
    }
    Ok(())
}

/// Component-wise mixture bound `Σ w_i Conc(X_i)`, reporting validity instead
/// of failing. `conc_star` is the worst component margin.
pub fn mixture_bound_unchecked(
    components: &[(f64, f64, f64)],
    kind: ConcKind,
) -> Result<RiskBound, RiskError> {
    check_weights(components.iter().map(|c| c.0))?;
    let mut value = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for &(w, mean, var) in components {
        let b = conc(mean, var, kind)?;
        value += w * b.value;
        worst = worst.max(b.conc_star);
    }
    Ok(RiskBound::new(value, worst))
}

/// Component-wise mixture bound; every component must satisfy `Conc* ≤ 0`.
pub fn mixture_bound(
    components: &[(f64, f64, f64)],
    kind: ConcKind,
) -> Result<RiskBound, RiskError> {
    let b = mixture_bound_unchecked(components, kind)?;
    if !b.valid {
        let bad = components
            .iter()
            .enumerate()
            .filter(|(_, c)| conc_star(c.1, c.2, kind) > 0.0)
            .map(|(i, _)| i)
            .collect();
        return Err(RiskError::HypothesisViolated(bad));
    }
    Ok(b)
}

/// Mean and variance of a scalar mixture from component `(w, μ, σ²)`.
pub fn aggregate_moments(components: &[(f64, f64, f64)]) -> (f64, f64) {
    let mean: f64 = components.iter().map(|c| c.0 * c.1).sum();
    let m2: f64 = components.iter().map(|c| c.0 * (c.2 + c.1 * c.1)).sum();
    (mean, (m2 - mean * mean).max(0.0))
}

/// Union bound over events: the clamped sum of valid bounds.
pub fn aggregate_boole(bounds: &[RiskBound]) -> Result<f64, RiskError> {
    if let Some(i) = bounds.iter().position(|b| !b.valid) {
        return Err(RiskError::InvalidBound(i));
    }
    Ok(bounds.iter().map(|b| b.value).sum::<f64>().min(1.0))
}

/// Per-step, per-agent risk levels `ε[t][i]` and the budget they share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskAllocation {
    epsilon: Vec<Vec<f64>>,
    budget: f64,
}

impl RiskAllocation {
    pub fn new(epsilon: Vec<Vec<f64>>, budget: f64) -> Result<Self, RiskError> {
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(RiskError::InvalidBudget(budget));
        }
        if epsilon.is_empty() || epsilon.iter().any(|r| r.len() != epsilon[0].len()) {
            return Err(RiskError::EmptyAllocation);
        }
        if epsilon.iter().flatten().any(|e| !(*e >= 0.0)) {
            return Err(RiskError::NegativeEpsilon);
        }
        let a = RiskAllocation { epsilon, budget };
        if a.total() > budget + 1e-12 {
            return Err(RiskError::OverBudget {
                total: a.total(),
                budget,
            });
        }
        Ok(a)
    }

    /// `ε = budget / (T · n_a)` everywhere.
    pub fn uniform(budget: f64, steps: usize, agents: usize) -> Result<Self, RiskError> {
        if steps == 0 || agents == 0 {
            return Err(RiskError::EmptyAllocation);
        }
        if !(budget > 0.0 && budget <= 1.0) {
            return Err(RiskError::InvalidBudget(budget));
        }
        let e = budget / (steps * agents) as f64;
        RiskAllocation::new(vec![vec![e; agents]; steps], budget)
    }

    /// Constant per-step level `eps`; the budget is `eps · T · n_a`, which may
    /// exceed 1 (a vacuous union bound). `agents = 0` gives an empty grid.
    pub fn per_step(eps: f64, steps: usize, agents: usize) -> Result<Self, RiskError> {
        if steps == 0 {
            return Err(RiskError::EmptyAllocation);
        }
        RiskAllocation::new(vec![vec![eps; agents]; steps], eps * (steps * agents) as f64)
    }

    pub fn steps(&self) -> usize {
        self.epsilon.len()
    }

    pub fn agents(&self) -> usize {
        self.epsilon[0].len()
    }

    pub fn get(&self, t: usize, agent: usize) -> f64 {
        self.epsilon[t][agent]
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn total(&self) -> f64 {
        self.epsilon.iter().flatten().sum()
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.epsilon
    }
}

/// `uniform` as a free function.
pub fn uniform_allocation(budget: f64, steps: usize, agents: usize) -> Result<RiskAllocation, RiskError> {
    RiskAllocation::uniform(budget, steps, agents)
}
