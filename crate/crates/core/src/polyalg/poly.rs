use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::{MultiIndex, PolyError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Random,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

impl Variable {
    pub fn random(name: impl Into<String>) -> Self {
        Variable {
            name: name.into(),
            kind: VarKind::Random,
        }
    }

    pub fn deterministic(name: impl Into<String>) -> Self {
        Variable {
            name: name.into(),
            kind: VarKind::Deterministic,
        }
    }
}

/// Ordered list of distinct variables a polynomial is written over.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Roster {
    vars: Vec<Variable>,
}

impl Roster {
    pub fn new(vars: Vec<Variable>) -> Result<Self, PolyError> {
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].iter().any(|u| u.name == v.name) {
                return Err(PolyError::DuplicateVariable(v.name.clone()));
            }
        }
        Ok(Roster { vars })
    }

    /// Roster with `random` names first, then `deterministic` names.
    pub fn with_kinds(random: &[&str], deterministic: &[&str]) -> Result<Self, PolyError> {
        let vars = random
            .iter()
            .map(|n| Variable::random(*n))
            .chain(deterministic.iter().map(|n| Variable::deterministic(*n)))
            .collect();
        Roster::new(vars)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn indices_of_kind(&self, kind: VarKind) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].kind == kind)
            .collect()
    }

    pub fn subset(&self, coords: &[usize]) -> Roster {
        Roster {
            vars: coords.iter().map(|&i| self.vars[i].clone()).collect(),
        }
    }

    /// Union keeping `self` order and appending unseen variables of `other`.
    /// Returns the union and, for each variable of `other`, its position in it.
    pub fn union(&self, other: &Roster) -> Result<(Roster, Vec<usize>), PolyError> {
        let mut vars = self.vars.clone();
        let mut map = Vec::with_capacity(other.len());
        for v in &other.vars {
            match vars.iter().position(|u| u.name == v.name) {
                Some(i) => {
                    if vars[i].kind != v.kind {
                        return Err(PolyError::KindConflict(v.name.clone()));
                    }
                    map.push(i);
                }
                None => {
                    map.push(vars.len());
                    vars.push(v.clone());
                }
            }
        }
        Ok((Roster { vars }, map))
    }
}

/// Sparse multivariate polynomial with real coefficients.
///
/// Exact zero coefficients are never stored; no epsilon pruning is done.
#[derive(Clone, Debug)]
pub struct Polynomial {
    roster: Roster,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(roster: &Roster) -> Self {
        Polynomial {
            roster: roster.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(roster: &Roster, c: f64) -> Self {
        let mut p = Polynomial::zero(roster);
        p.add_term(MultiIndex::zeros(roster.len()), c);
        p
    }

    pub fn variable(roster: &Roster, name: &str) -> Result<Self, PolyError> {
        let i = roster
            .index_of(name)
            .ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
        let mut p = Polynomial::zero(roster);
        p.add_term(MultiIndex::unit(roster.len(), i), 1.0);
        Ok(p)
    }

    pub fn from_terms(
        roster: &Roster,
        terms: impl IntoIterator<Item = (MultiIndex, f64)>,
    ) -> Result<Self, PolyError> {
        let mut p = Polynomial::zero(roster);
        for (idx, c) in terms {
            if idx.dim() != roster.len() {
                return Err(PolyError::DimensionMismatch {
                    expected: roster.len(),
                    found: idx.dim(),
                });
            }
            p.add_term(idx, c);
        }
        Ok(p)
    }

    pub(crate) fn add_term(&mut self, idx: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(idx);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(k, v)| (k, *v))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn coefficient(&self, idx: &MultiIndex) -> f64 {
        self.terms.get(idx).copied().unwrap_or(0.0)
    }

    /// Coefficient of the monomial given as `(name, exponent)` pairs.
    pub fn coefficient_of(&self, monomial: &[(&str, u32)]) -> f64 {
        let mut e = vec![0; self.roster.len()];
        for (name, k) in monomial {
            match self.roster.index_of(name) {
                Some(i) => e[i] += k,
                None => return 0.0,
            }
        }
        self.coefficient(&MultiIndex::new(e))
    }

    /// Whether the polynomial only involves deterministic variables.
    pub fn is_deterministic(&self) -> bool {
        let rnd = self.roster.indices_of_kind(VarKind::Random);
        self.terms
            .keys()
            .all(|idx| rnd.iter().all(|&i| idx.get(i) == 0))
    }

    /// Re-express over a larger roster given the position of each own variable.
    fn embed(&self, roster: &Roster, map: &[usize]) -> Polynomial {
        let mut out = Polynomial::zero(roster);
        for (idx, c) in &self.terms {
            let mut e = vec![0; roster.len()];
            for (i, &k) in idx.exponents().iter().enumerate() {
                if k > 0 {
                    e[map[i]] += k;
                }
            }
            out.add_term(MultiIndex::new(e), *c);
        }
        out
    }

    fn unify(&self, other: &Polynomial) -> Result<(Polynomial, Polynomial), PolyError> {
        if self.roster == other.roster {
            return Ok((self.clone(), other.clone()));
        }
        let (roster, map) = self.roster.union(&other.roster)?;
        let own: Vec<usize> = (0..self.roster.len()).collect();
        Ok((self.embed(&roster, &own), other.embed(&roster, &map)))
    }

    /// Re-express over `roster`, which must contain every variable that
    /// occurs in `self`; unused variables may be dropped.
    pub fn over(&self, roster: &Roster) -> Result<Polynomial, PolyError> {
        let mut map = Vec::with_capacity(self.roster.len());
        for (j, v) in self.roster.vars().iter().enumerate() {
            match roster.index_of(&v.name) {
                Some(i) if roster.vars()[i].kind != v.kind => {
                    return Err(PolyError::KindConflict(v.name.clone()))
                }
                Some(i) => map.push(i),
                None if self.terms.keys().all(|idx| idx.get(j) == 0) => map.push(usize::MAX),
                None => return Err(PolyError::UnknownVariable(v.name.clone())),
            }
        }
        Ok(self.embed(roster, &map))
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        let (mut a, b) = self.unify(other)?;
        for (idx, c) in b.terms {
            a.add_term(idx, c);
        }
        Ok(a)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        let (a, b) = self.unify(other)?;
        Ok(a.mul_same(&b))
    }

    fn mul_same(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(&self.roster);
        for (ia, ca) in &self.terms {
            for (ib, cb) in &other.terms {
                out.add_term(ia.add(ib), ca * cb);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(&self.roster);
        for (idx, c) in &self.terms {
            out.add_term(idx.clone(), c * s);
        }
        out
    }

    /// `p^m` by repeated squaring; `p^0 = 1`.
    pub fn pow(&self, m: u32) -> Polynomial {
        let mut result = Polynomial::constant(&self.roster, 1.0);
        let mut base = self.clone();
        let mut e = m;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul_same(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_same(&base);
            }
        }
        result
    }

    /// Compose: replace each assigned variable by its polynomial.
    pub fn substitute(
        &self,
        assignment: &BTreeMap<String, Polynomial>,
    ) -> Result<Polynomial, PolyError> {
        let mut roster = self.roster.clone();
        for (name, sub) in assignment {
            if self.roster.index_of(name).is_none() {
                return Err(PolyError::UnknownVariable(name.clone()));
            }
            roster = roster.union(sub.roster())?.0;
        }
        let subs: Vec<Option<Polynomial>> = self
            .roster
            .vars()
            .iter()
            .map(|v| assignment.get(&v.name).map(|s| s.over(&roster)).transpose())
            .collect::<Result<_, _>>()?;
        let mut power_cache: HashMap<(usize, u32), Polynomial> = HashMap::new();
        let mut out = Polynomial::zero(&roster);
        for (idx, c) in &self.terms {
            let mut pass = vec![0; roster.len()];
            let mut term = Polynomial::constant(&roster, *c);
            for (i, &k) in idx.exponents().iter().enumerate() {
                if k == 0 {
                    continue;
                }
                match &subs[i] {
                    Some(s) => {
                        let pw = power_cache.entry((i, k)).or_insert_with(|| s.pow(k));
                        term = term.mul_same(pw);
                    }
                    None => {
                        let j = roster.index_of(&self.roster.vars()[i].name).unwrap();
                        pass[j] += k;
                    }
                }
            }
            let mono = Polynomial::from_terms(&roster, [(MultiIndex::new(pass), 1.0)])?;
            out = out.try_add(&term.mul_same(&mono))?;
        }
        Ok(out)
    }

    /// Evaluate with values given in roster order.
    pub fn eval(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.roster.len());
        self.terms
            .iter()
            .map(|(idx, c)| {
                idx.exponents()
                    .iter()
                    .zip(values)
                    .fold(*c, |acc, (&k, &v)| acc * v.powi(k as i32))
            })
            .sum()
    }

    /// Evaluate with values looked up by variable name.
    pub fn eval_named(&self, values: &HashMap<String, f64>) -> Result<f64, PolyError> {
        let vals = self
            .roster
            .vars()
            .iter()
            .map(|v| {
                values
                    .get(&v.name)
                    .copied()
                    .ok_or_else(|| PolyError::MissingValue(v.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.eval(&vals))
    }

    /// Partial derivative with respect to the variable at roster position `i`.
    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(&self.roster);
        for (idx, c) in &self.terms {
            let k = idx.get(i);
            if k == 0 {
                continue;
            }
            let mut e = idx.exponents().to_vec();
            e[i] -= 1;
            out.add_term(MultiIndex::new(e), c * k as f64);
        }
        out
    }

    /// Terms keyed by variable names, independent of roster order.
    fn named_terms(&self) -> BTreeMap<Vec<(String, u32)>, f64> {
        self.terms
            .iter()
            .map(|(idx, c)| {
                let mut key: Vec<(String, u32)> = idx
                    .exponents()
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| (self.roster.vars()[i].name.clone(), k))
                    .collect();
                key.sort();
                (key, *c)
            })
            .collect()
    }

    /// Coefficient-wise comparison up to `tol`, ignoring roster order.
    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        let a = self.named_terms();
        let b = other.named_terms();
        let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
        let close = keys.into_iter().all(|k| {
            let x = a.get(k).copied().unwrap_or(0.0);
            let y = b.get(k).copied().unwrap_or(0.0);
            (x - y).abs() <= tol
        });
        close
    }
}

impl PartialEq for Polynomial {
    fn eq(&self, other: &Self) -> bool {
        self.named_terms() == other.named_terms()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::render::render_polynomial(
            self,
            super::Dialect::PlainInfix,
        ))
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $call:ident) => {
        impl $tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                self.$call(rhs).expect("conflicting variable kinds")
            }
        }
        impl $tr<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                (&self).$call(&rhs).expect("conflicting variable kinds")
            }
        }
    };
}

binop!(Add, add, try_add);
binop!(Sub, sub, try_sub);
binop!(Mul, mul, try_mul);

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w() -> Roster {
        Roster::with_kinds(&["w1", "w2"], &[]).unwrap()
    }

    fn var(r: &Roster, n: &str) -> Polynomial {
        Polynomial::variable(r, n).unwrap()
    }

    #[test]
    fn difference_of_squares() {
        let r = w();
        let (a, b) = (var(&r, "w1"), var(&r, "w2"));
        let p = (&a + &b) * (&a - &b);
        assert_eq!(p.num_terms(), 2);
        assert_eq!(p.coefficient_of(&[("w1", 2)]), 1.0);
        assert_eq!(p.coefficient_of(&[("w2", 2)]), -1.0);
        assert_eq!(p.coefficient_of(&[("w1", 1), ("w2", 1)]), 0.0);
    }

    #[test]
    fn multiply_by_one() {
        let r = w();
        let p = var(&r, "w1").pow(2) + var(&r, "w2").pow(2);
        assert_eq!(&p * &Polynomial::constant(&r, 1.0), p);
    }

    #[test]
    fn binomial_square() {
        let r = w();
        let p = (var(&r, "w1") + var(&r, "w2")).pow(2);
        assert_eq!(p.coefficient_of(&[("w1", 2)]), 1.0);
        assert_eq!(p.coefficient_of(&[("w1", 1), ("w2", 1)]), 2.0);
        assert_eq!(p.coefficient_of(&[("w2", 2)]), 1.0);
        assert_eq!(p.degree(), 2);
    }

    #[test]
    fn worked_square_example() {
        let r = w();
        let p = var(&r, "w1").pow(2) + var(&r, "w2").pow(2);
        let sq = p.pow(2);
        assert_eq!(sq.num_terms(), 3);
        assert_eq!(sq.coefficient_of(&[("w1", 4)]), 1.0);
        assert_eq!(sq.coefficient_of(&[("w1", 2), ("w2", 2)]), 2.0);
        assert_eq!(sq.coefficient_of(&[("w2", 4)]), 1.0);
    }

    #[test]
    fn power_edge_cases() {
        let r = w();
        let p = var(&r, "w1") + var(&r, "w2");
        assert_eq!(p.pow(0), Polynomial::constant(&r, 1.0));
        let q = var(&r, "w1").scale(2.0).pow(3);
        assert_eq!(q.num_terms(), 1);
        assert_eq!(q.coefficient_of(&[("w1", 3)]), 8.0);
    }

    #[test]
    fn substitution_expands() {
        let r = Roster::with_kinds(&["w1"], &[]).unwrap();
        let p = var(&r, "w1").pow(2);
        let r2 = Roster::with_kinds(&["g_x"], &["x_t"]).unwrap();
        let shift = var(&r2, "g_x") - var(&r2, "x_t");
        let mut asg = BTreeMap::new();
        asg.insert("w1".to_string(), shift);
        let q = p.substitute(&asg).unwrap();
        assert_eq!(q.coefficient_of(&[("g_x", 2)]), 1.0);
        assert_eq!(q.coefficient_of(&[("g_x", 1), ("x_t", 1)]), -2.0);
        assert_eq!(q.coefficient_of(&[("x_t", 2)]), 1.0);
        assert_eq!(q.num_terms(), 3);
    }

    #[test]
    fn substitution_identity_and_zero() {
        let r = w();
        let p = var(&r, "w1") + var(&r, "w2");
        assert_eq!(p.substitute(&BTreeMap::new()).unwrap(), p);
        let mut asg = BTreeMap::new();
        asg.insert("w1".to_string(), Polynomial::zero(&r));
        asg.insert("w2".to_string(), Polynomial::zero(&r));
        assert!(p.substitute(&asg).unwrap().is_zero());
    }

    #[test]
    fn substitution_rejects_unknown_and_conflicts() {
        let r = w();
        let p = var(&r, "w1");
        let mut asg = BTreeMap::new();
        asg.insert("zz".to_string(), Polynomial::zero(&r));
        assert!(matches!(
            p.substitute(&asg),
            Err(PolyError::UnknownVariable(_))
        ));
        let bad = Roster::with_kinds(&[], &["w2"]).unwrap();
        let mut asg = BTreeMap::new();
        asg.insert("w1".to_string(), Polynomial::variable(&bad, "w2").unwrap());
        assert!(matches!(p.substitute(&asg), Err(PolyError::KindConflict(_))));
    }

    #[test]
    fn derivative_and_eval() {
        let r = w();
        let p = var(&r, "w1").pow(3) * var(&r, "w2") + Polynomial::constant(&r, 2.0);
        assert_eq!(p.eval(&[2.0, 3.0]), 26.0);
        let d = p.derivative(0);
        assert_eq!(d.eval(&[2.0, 3.0]), 36.0);
    }

    #[test]
    fn exact_cancellation_prunes() {
        let r = w();
        let p = var(&r, "w1") - var(&r, "w1");
        assert!(p.is_zero());
        let tiny = var(&r, "w1").scale(1e-300);
        assert_eq!(tiny.num_terms(), 1);
    }
}
