use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Exponent tuple identifying a monomial `w^α = Π w_i^{α_i}`.
///
/// Ordering is graded lexicographic: total degree first, then the exponent
/// tuples compared lexicographically. Rendering walks terms in descending
/// order so `w1^4` precedes `w1^2*w2^2`, which precedes `w2^4`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn unit(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u32 {
        self.0[i]
    }

    /// Exponent-wise sum (the index of a product of monomials).
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Keep only the listed coordinates, in the listed order.
    pub fn select(&self, coords: &[usize]) -> MultiIndex {
        MultiIndex(coords.iter().map(|&i| self.0[i]).collect())
    }

    /// Zero every coordinate not in `coords`.
    pub fn mask(&self, coords: &[usize]) -> MultiIndex {
        let mut e = vec![0; self.dim()];
        for &i in coords {
            e[i] = self.0[i];
        }
        MultiIndex(e)
    }

    /// Whether `self ≤ other` componentwise.
    pub fn divides(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// All multi-indices of the given dimension with total degree ≤ `order`,
    /// in ascending graded-lex order.
    pub fn all_up_to(dim: usize, order: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; dim];
        fn rec(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if pos == cur.len() {
                out.push(MultiIndex(cur.clone()));
                return;
            }
            for e in 0..=left {
                cur[pos] = e;
                rec(pos + 1, left - e, cur, out);
            }
            cur[pos] = 0;
        }
        rec(0, order, &mut cur, &mut out);
        out.sort();
        out
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_lex_order() {
        let a = MultiIndex::new(vec![4, 0]);
        let b = MultiIndex::new(vec![2, 2]);
        let c = MultiIndex::new(vec![0, 4]);
        let d = MultiIndex::new(vec![3, 0]);
        assert!(a > b && b > c && c > d);
    }

    #[test]
    fn enumerate_counts() {
        // C(n + k, k) indices of degree ≤ k in n variables.
        assert_eq!(MultiIndex::all_up_to(2, 4).len(), 15);
        assert_eq!(MultiIndex::all_up_to(3, 4).len(), 35);
        assert_eq!(MultiIndex::all_up_to(1, 0).len(), 1);
        let all = MultiIndex::all_up_to(2, 3);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert!(all[0].is_zero());
    }
}
