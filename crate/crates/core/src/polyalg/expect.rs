use std::collections::{BTreeMap, HashMap};

use super::{MultiIndex, PolyError, Polynomial, Roster, VarKind};

/// Anything that can supply raw moments `E[w^α]` of a random vector.
pub trait MomentSource {
    fn dimension(&self) -> usize;
    fn moment(&self, index: &MultiIndex) -> Option<f64>;
}

/// Partition of the random variables into mutually independent blocks.
///
/// The default is a single block holding every random variable, which is
/// always correct.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependencyStructure {
    blocks: Option<Vec<Vec<String>>>,
}

impl DependencyStructure {
    pub fn fully_dependent() -> Self {
        DependencyStructure { blocks: None }
    }

    /// Every listed variable in its own block.
    pub fn independent<S: AsRef<str>>(names: &[S]) -> Self {
        DependencyStructure {
            blocks: Some(
                names
                    .iter()
                    .map(|n| vec![n.as_ref().to_string()])
                    .collect(),
            ),
        }
    }

    pub fn from_blocks(blocks: Vec<Vec<String>>) -> Result<Self, PolyError> {
        let mut seen = std::collections::HashSet::new();
        for name in blocks.iter().flatten() {
            if !seen.insert(name.clone()) {
                return Err(PolyError::OverlappingBlocks(name.clone()));
            }
        }
        Ok(DependencyStructure {
            blocks: Some(blocks),
        })
    }

    /// Blocks as coordinate lists over `random`. Variables not mentioned by
    /// any block are gathered into one extra block.
    pub fn coordinate_blocks(&self, random: &Roster) -> Vec<Vec<usize>> {
        let all: Vec<usize> = (0..random.len()).collect();
        let Some(blocks) = &self.blocks else {
            return if all.is_empty() { vec![] } else { vec![all] };
        };
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut covered = vec![false; random.len()];
        for b in blocks {
            let coords: Vec<usize> = b.iter().filter_map(|n| random.index_of(n)).collect();
            for &c in &coords {
                covered[c] = true;
            }
            if !coords.is_empty() {
                out.push(coords);
            }
        }
        let rest: Vec<usize> = all.into_iter().filter(|&i| !covered[i]).collect();
        if !rest.is_empty() {
            out.push(rest);
        }
        out
    }
}

/// `E[p(w, x)]` written as `Σ_α c_α(x) · E[w^α]`, where each `c_α` is a
/// polynomial in the deterministic variables `x`.
#[derive(Clone, Debug)]
pub struct MomentExpression {
    random: Roster,
    deterministic: Roster,
    blocks: Vec<Vec<usize>>,
    terms: BTreeMap<MultiIndex, Polynomial>,
}

impl MomentExpression {
    pub fn random_vars(&self) -> &Roster {
        &self.random
    }

    pub fn deterministic_vars(&self) -> &Roster {
        &self.deterministic
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Terms in ascending graded-lex order of the moment index.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&MultiIndex, &Polynomial)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, index: &MultiIndex) -> Option<&Polynomial> {
        self.terms.get(index)
    }

    pub fn max_moment_degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    /// Split `E[w^α]` into block-local factors (each zero outside its block).
    /// The zero index yields no factors.
    pub fn factors(&self, index: &MultiIndex) -> Vec<MultiIndex> {
        self.blocks
            .iter()
            .map(|b| index.mask(b))
            .filter(|f| !f.is_zero())
            .collect()
    }

    /// Same expression with every variable block merged into one.
    pub fn unfactored(&self) -> MomentExpression {
        let mut e = self.clone();
        let all: Vec<usize> = (0..self.random.len()).collect();
        e.blocks = if all.is_empty() { vec![] } else { vec![all] };
        e
    }

    fn moment_value(&self, index: &MultiIndex, moments: &dyn MomentSource) -> Result<f64, PolyError> {
        self.factors(index).iter().try_fold(1.0, |acc, f| {
            moments
                .moment(f)
                .map(|m| acc * m)
                .ok_or_else(|| PolyError::MissingMoment(f.clone()))
        })
    }

    fn check_dimension(&self, moments: &dyn MomentSource) -> Result<(), PolyError> {
        if !self.terms.keys().all(MultiIndex::is_zero) && moments.dimension() != self.random.len()
        {
            return Err(PolyError::DimensionMismatch {
                expected: self.random.len(),
                found: moments.dimension(),
            });
        }
        Ok(())
    }

    /// Substitute numeric moments, leaving a polynomial in the deterministic
    /// variables.
    pub fn bind(&self, moments: &dyn MomentSource) -> Result<Polynomial, PolyError> {
        self.check_dimension(moments)?;
        let mut out = Polynomial::zero(&self.deterministic);
        for (idx, coef) in &self.terms {
            let m = self.moment_value(idx, moments)?;
            out = out.try_add(&coef.scale(m))?;
        }
        Ok(out)
    }

    pub fn evaluate(
        &self,
        moments: &dyn MomentSource,
        det_values: &HashMap<String, f64>,
    ) -> Result<f64, PolyError> {
        self.check_dimension(moments)?;
        let mut total = 0.0;
        for (idx, coef) in &self.terms {
            let c = coef.eval_named(det_values)?;
            total += c * self.moment_value(idx, moments)?;
        }
        Ok(total)
    }

    pub fn scale(&self, s: f64) -> MomentExpression {
        let mut e = self.clone();
        e.terms = self
            .terms
            .iter()
            .map(|(k, v)| (k.clone(), v.scale(s)))
            .filter(|(_, v)| !v.is_zero())
            .collect();
        e
    }
}

/// Rewrite `E[p]` as a linear combination of moments of the random variables
/// of `p`, factoring moments across independent blocks.
pub fn expectation(p: &Polynomial, deps: &DependencyStructure) -> MomentExpression {
    let roster = p.roster();
    let rnd = roster.indices_of_kind(VarKind::Random);
    let det = roster.indices_of_kind(VarKind::Deterministic);
    let random = roster.subset(&rnd);
    let deterministic = roster.subset(&det);
    let mut terms: BTreeMap<MultiIndex, Polynomial> = BTreeMap::new();
    for (idx, c) in p.terms() {
        let alpha = idx.select(&rnd);
        let beta = idx.select(&det);
        let entry = terms
            .entry(alpha)
            .or_insert_with(|| Polynomial::zero(&deterministic));
        entry.add_term(beta, c);
    }
    terms.retain(|_, v| !v.is_zero());
    MomentExpression {
        blocks: deps.coordinate_blocks(&random),
        random,
        deterministic,
        terms,
    }
}

/// Expressions for `E[p]` and `E[p²]`; the variance is `E[p²] − E[p]²`.
pub fn mean_variance_expressions(
    p: &Polynomial,
    deps: &DependencyStructure,
) -> (MomentExpression, MomentExpression) {
    (expectation(p, deps), expectation(&p.pow(2), deps))
}
