use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gaussian::GaussianSpec;
use super::table::MomentTable;
use super::truncated::TruncatedGaussianSpec;
use super::{check_weights, mixture_moments, DistError, PLANNER_ORDER};

/// Weighted Gaussian mixture at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianSpec>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianSpec>) -> Result<Self, DistError> {
        let m = GaussianMixture {
            weights,
            components,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        check_weights(&self.weights)?;
        if self.weights.len() != self.components.len() {
            return Err(DistError::ComponentCountMismatch(
                self.weights.len(),
                self.components.len(),
            ));
        }
        self.components.iter().try_for_each(GaussianSpec::validate)
    }
}

/// One mixture component: a Gaussian, optionally box-truncated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentDist {
    Gaussian(GaussianSpec),
    Truncated(TruncatedGaussianSpec),
}

impl ComponentDist {
    pub fn base(&self) -> &GaussianSpec {
        match self {
            ComponentDist::Gaussian(g) => g,
            ComponentDist::Truncated(t) => &t.base,
        }
    }

    pub fn moments(&self, order: u32) -> Result<MomentTable, DistError> {
        match self {
            ComponentDist::Gaussian(g) => g.moments(order),
            ComponentDist::Truncated(t) => t.moments(order),
        }
    }

    /// Translate the whole distribution (and its box) by `offset`.
    pub fn shifted(&self, offset: [f64; 2]) -> ComponentDist {
        match self {
            ComponentDist::Gaussian(g) => ComponentDist::Gaussian(g.shifted(offset)),
            ComponentDist::Truncated(t) => {
                let mut t = t.clone();
                t.base = t.base.shifted(offset);
                for i in 0..2 {
                    t.bounds.lower[i] += offset[i];
                    t.bounds.upper[i] += offset[i];
                }
                ComponentDist::Truncated(t)
            }
        }
    }

    /// Draw one sample. Truncated components use rejection against the box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; 2], DistError> {
        match self {
            ComponentDist::Gaussian(g) => Ok(sample_gaussian(g, rng)),
            ComponentDist::Truncated(t) => {
                for _ in 0..1_000_000 {
                    let p = sample_gaussian(&t.base, rng);
                    if t.contains(p) {
                        return Ok(p);
                    }
                }
                Err(DistError::NegligibleMass(super::box_mass(t)))
            }
        }
    }
}

fn sample_gaussian<R: Rng + ?Sized>(g: &GaussianSpec, rng: &mut R) -> [f64; 2] {
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let [[a, b], [_, c]] = g.cov;
    let l00 = a.max(0.0).sqrt();
    let l10 = if l00 > 0.0 { b / l00 } else { 0.0 };
    let l11 = (c - l10 * l10).max(0.0).sqrt();
    [g.mean[0] + l00 * z0, g.mean[1] + l10 * z0 + l11 * z1]
}

/// Mixture of possibly truncated components at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub components: Vec<ComponentDist>,
}

impl MixtureSpec {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; 2], DistError> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last = self.components.len() - 1;
        for (i, (w, c)) in self.weights.iter().zip(&self.components).enumerate() {
            acc += w;
            if u < acc || i == last {
                return c.sample(rng);
            }
        }
        unreachable!("mixture has at least one component")
    }
}

/// Distribution parameters at times `0..=T`; index 0 is the present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSpec {
    pub steps: Vec<MixtureSpec>,
}

impl PredictionSpec {
    /// Linear interpolation of means and covariances from `start` (t = 0)
    /// to `end` (t = T), giving `T + 1` steps.
    pub fn interpolate(
        start: &GaussianMixture,
        end: &GaussianMixture,
        steps: usize,
    ) -> Result<Self, DistError> {
        start.validate()?;
        end.validate()?;
        if steps == 0 {
            return Err(DistError::NoSteps);
        }
        if start.components.len() != end.components.len() {
            return Err(DistError::ComponentCountMismatch(
                start.components.len(),
                end.components.len(),
            ));
        }
        if let Some(i) = (0..start.weights.len())
            .find(|&i| (start.weights[i] - end.weights[i]).abs() > 1e-12)
        {
            return Err(DistError::WeightMismatch(i));
        }
        let steps = (0..=steps)
            .map(|t| {
                let s = t as f64 / steps as f64;
                MixtureSpec {
                    weights: start.weights.clone(),
                    components: start
                        .components
                        .iter()
                        .zip(&end.components)
                        .map(|(a, b)| {
                            // Exact endpoint at s = 1 rather than a + 1·(b − a).
                            let g = if t == 0 {
                                a.clone()
                            } else if s == 1.0 {
                                b.clone()
                            } else {
                                a.lerp(b, s)
                            };
                            ComponentDist::Gaussian(g)
                        })
                        .collect(),
                }
            })
            .collect();
        Ok(PredictionSpec { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.steps.first().map_or(0, |s| s.components.len())
    }

    /// Replace every component by its truncation to `mean ± k·σ` per axis.
    pub fn truncated(&self, k: f64) -> Result<Self, DistError> {
        self.truncated_per_component(&vec![k; self.num_components()])
    }

    /// Truncate component `i` to `mean ± ks[i]·σ` per axis.
    pub fn truncated_per_component(&self, ks: &[f64]) -> Result<Self, DistError> {
        if ks.len() != self.num_components() {
            return Err(DistError::ComponentCountMismatch(ks.len(), self.num_components()));
        }
        if let Some(&k) = ks.iter().find(|&&k| !(k > 0.0)) {
            return Err(DistError::InvalidTruncation(k));
        }
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let components = s
                    .components
                    .iter()
                    .zip(ks)
                    .map(|(c, &k)| TruncatedGaussianSpec::at_sigmas(c.base(), k).map(ComponentDist::Truncated))
                    .collect::<Result<_, _>>()?;
                Ok(MixtureSpec {
                    weights: s.weights.clone(),
                    components,
                })
            })
            .collect::<Result<_, DistError>>()?;
        Ok(PredictionSpec { steps })
    }

    /// Translate component `i` at step `t` by `offsets[t][i]`.
    pub fn shifted(&self, offsets: &[Vec<[f64; 2]>]) -> Self {
        PredictionSpec {
            steps: self
                .steps
                .iter()
                .zip(offsets)
                .map(|(s, o)| MixtureSpec {
                    weights: s.weights.clone(),
                    components: s
                        .components
                        .iter()
                        .zip(o)
                        .map(|(c, &off)| c.shifted(off))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn moments(&self, order: u32) -> Result<MixturePrediction, DistError> {
        let steps = self
            .steps
            .iter()
            .map(|s| {
                Ok(MixtureStep {
                    weights: s.weights.clone(),
                    tables: s
                        .components
                        .iter()
                        .map(|c| c.moments(order))
                        .collect::<Result<_, DistError>>()?,
                })
            })
            .collect::<Result<_, DistError>>()?;
        MixturePrediction::new(steps)
    }
}

/// Weights and per-component moment tables at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureStep {
    pub weights: Vec<f64>,
    pub tables: Vec<MomentTable>,
}

impl MixtureStep {
    pub fn mixture_table(&self) -> Result<MomentTable, DistError> {
        mixture_moments(&self.weights, &self.tables)
    }
}

/// Per-timestep mixture moments; index 0 is the present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePrediction {
    steps: Vec<MixtureStep>,
}

impl MixturePrediction {
    pub fn new(steps: Vec<MixtureStep>) -> Result<Self, DistError> {
        let p = MixturePrediction { steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let Some(first) = self.steps.first() else {
            return Err(DistError::NoSteps);
        };
        let n = first.weights.len();
        for s in &self.steps {
            check_weights(&s.weights)?;
            if s.weights.len() != n {
                return Err(DistError::ComponentCountMismatch(n, s.weights.len()));
            }
            if s.tables.len() != n {
                return Err(DistError::ComponentCountMismatch(n, s.tables.len()));
            }
            for t in &s.tables {
                if t.order() < PLANNER_ORDER {
                    return Err(DistError::OrderTooLow(t.order(), PLANNER_ORDER));
                }
                t.validate()?;
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> &[MixtureStep] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &MixtureStep {
        &self.steps[t]
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.steps[0].weights.len()
    }
}

/// Order-4 moments of a linearly interpolated Gaussian-mixture prediction.
pub fn interpolate_prediction(
    start: &GaussianMixture,
    end: &GaussianMixture,
    steps: usize,
) -> Result<MixturePrediction, DistError> {
    PredictionSpec::interpolate(start, end, steps)?.moments(PLANNER_ORDER)
}

/// Order-4 moments after truncating each component at `mean ± k·σ`.
pub fn truncate_prediction(pred: &PredictionSpec, k: f64) -> Result<MixturePrediction, DistError> {
    pred.truncated(k)?.moments(PLANNER_ORDER)
}

/// A component as written in prediction files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunc_k: Option<f64>,
}

impl MixtureComponent {
    pub fn gaussian(&self) -> GaussianSpec {
        GaussianSpec {
            mean: self.mean,
            cov: self.cov,
        }
    }
}
