use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DistError;
use crate::polyalg::{MomentSource, MultiIndex};

/// Raw moments `E[w^α]` of a random vector for every `|α| ≤ order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct MomentTable {
    dimension: usize,
    order: u32,
    entries: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    dimension: usize,
    order: u32,
    entries: Vec<(Vec<u32>, f64)>,
}

impl From<MomentTable> for TableRepr {
    fn from(t: MomentTable) -> Self {
        TableRepr {
            dimension: t.dimension,
            order: t.order,
            entries: t
                .entries
                .into_iter()
                .map(|(k, v)| (k.exponents().to_vec(), v))
                .collect(),
        }
    }
}

impl TryFrom<TableRepr> for MomentTable {
    type Error = DistError;

    fn try_from(r: TableRepr) -> Result<Self, DistError> {
        let entries = r
            .entries
            .into_iter()
            .map(|(k, v)| (MultiIndex::new(k), v))
            .collect();
        MomentTable::new(r.dimension, r.order, entries)
    }
}

pub(crate) const PSD_TOL: f64 = 1e-9;

impl MomentTable {
    /// Validate and wrap a complete set of moments.
    pub fn new(
        dimension: usize,
        order: u32,
        entries: BTreeMap<MultiIndex, f64>,
    ) -> Result<Self, DistError> {
        let t = MomentTable {
            dimension,
            order,
            entries,
        };
        t.validate()?;
        Ok(t)
    }

    /// Fill every index of degree ≤ `order` from `f`.
    pub fn from_fn(
        dimension: usize,
        order: u32,
        mut f: impl FnMut(&MultiIndex) -> f64,
    ) -> Result<Self, DistError> {
        let entries = MultiIndex::all_up_to(dimension, order)
            .into_iter()
            .map(|idx| {
                let v = f(&idx);
                (idx, v)
            })
            .collect();
        MomentTable::new(dimension, order, entries)
    }

    /// Moments of a point mass at `point`.
    pub fn point_mass(point: &[f64], order: u32) -> Self {
        MomentTable::from_fn(point.len(), order, |idx| {
            idx.exponents()
                .iter()
                .zip(point)
                .map(|(&k, &x)| x.powi(k as i32))
                .product()
        })
        .expect("point-mass moments are always valid")
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn get(&self, index: &MultiIndex) -> Option<f64> {
        self.entries.get(index).copied()
    }

    /// Moment by exponent list, e.g. `m(&[2, 1])` for `E[x²y]`.
    pub fn m(&self, exponents: &[u32]) -> f64 {
        self.entries
            .get(&MultiIndex::new(exponents.to_vec()))
            .copied()
            .unwrap_or(f64::NAN)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dimension)
            .map(|i| self.m(MultiIndex::unit(self.dimension, i).exponents()))
            .collect()
    }

    /// `E[ww^T] − E[w]E[w]^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        DMatrix::from_fn(self.dimension, self.dimension, |i, j| {
            let idx = MultiIndex::unit(self.dimension, i).add(&MultiIndex::unit(self.dimension, j));
            self.m(idx.exponents()) - mu[i] * mu[j]
        })
    }

    /// Central moment `E[(w − μ)^α]`.
    pub fn central(&self, exponents: &[u32]) -> f64 {
        let mu = self.mean();
        let shifted = self.shifted(&mu.iter().map(|m| -m).collect::<Vec<_>>());
        shifted.m(exponents)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        for idx in MultiIndex::all_up_to(self.dimension, self.order) {
            match self.entries.get(&idx) {
                None => return Err(DistError::IncompleteTable(idx)),
                Some(v) if !v.is_finite() => return Err(DistError::NonFiniteMoment(idx)),
                _ => {}
            }
        }
        if let Some(k) = self
            .entries
            .keys()
            .find(|k| k.dim() != self.dimension || k.degree() > self.order)
        {
            return Err(DistError::UnexpectedEntry(k.clone()));
        }
        let m0 = self.entries[&MultiIndex::zeros(self.dimension)];
        if (m0 - 1.0).abs() > 1e-9 {
            return Err(DistError::ZeroIndexNotOne(m0));
        }
        if self.order >= 2 && self.dimension > 0 {
            let cov = self.covariance();
            let scale = cov.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
            let eig = cov.symmetric_eigenvalues();
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < -PSD_TOL * scale {
                return Err(DistError::NotPositiveSemidefinite(min));
            }
        }
        Ok(())
    }

    /// Moments of `w + offset`.
    pub fn shifted(&self, offset: &[f64]) -> MomentTable {
        assert_eq!(offset.len(), self.dimension);
        let entries = MultiIndex::all_up_to(self.dimension, self.order)
            .into_iter()
            .map(|alpha| {
                let v = sub_indices(&alpha)
                    .into_iter()
                    .map(|beta| {
                        let mut c = self.entries[&beta];
                        for i in 0..self.dimension {
                            let (a, b) = (alpha.get(i), beta.get(i));
                            c *= binomial(a, b) * offset[i].powi((a - b) as i32);
                        }
                        c
                    })
                    .sum();
                (alpha, v)
            })
            .collect();
        MomentTable {
            dimension: self.dimension,
            order: self.order,
            entries,
        }
    }
}

impl MomentSource for MomentTable {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn moment(&self, index: &MultiIndex) -> Option<f64> {
        self.get(index)
    }
}

/// Every `β ≤ α` componentwise.
pub(crate) fn sub_indices(alpha: &MultiIndex) -> Vec<MultiIndex> {
    let mut out = vec![Vec::new()];
    for &a in alpha.exponents() {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<u32>| {
                (0..=a).map(move |b| {
                    let mut p = prefix.clone();
                    p.push(b);
                    p
                })
            })
            .collect();
    }
    out.into_iter().map(MultiIndex::new).collect()
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
