//! Symbolic multivariate polynomials and the rewrite of `E[p(w)^m]` into a
//! linear combination of raw moments `E[w^α]`.
//!
//! Variables carry a random/deterministic tag. [`expectation`] keeps
//! deterministic variables inside the coefficients, so an expression such as
//! the body-frame collision polynomial can be derived once and later bound to
//! numeric moments and evaluated at any ego pose.

mod compiled;
mod expect;
mod index;
mod parse;
mod poly;
mod render;

pub use compiled::CompiledPoly;
pub use expect::{
    expectation, mean_variance_expressions, DependencyStructure, MomentExpression, MomentSource,
};
pub use index::MultiIndex;
pub use parse::{decode_moment_token, parse_polynomial, ParseError};
pub use poly::{Polynomial, Roster, VarKind, Variable};
pub use render::{moment_token, render, render_polynomial, Dialect};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolyError {
    #[error("variable '{0}' appears twice in the roster")]
    DuplicateVariable(String),
    #[error("variable '{0}' is tagged both random and deterministic")]
    KindConflict(String),
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("variable '{0}' is listed in more than one independence block")]
    OverlappingBlocks(String),
    #[error("multi-index has {found} entries, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("moment table has no entry for index {0}")]
    MissingMoment(MultiIndex),
    #[error("no value supplied for deterministic variable '{0}'")]
    MissingValue(String),
}

/// `p(w)^m` (operation alias of [`Polynomial::pow`]).
pub fn poly_pow(p: &Polynomial, m: u32) -> Polynomial {
    p.pow(m)
}

/// Exact product after roster unification.
pub fn poly_mul(p: &Polynomial, q: &Polynomial) -> Result<Polynomial, PolyError> {
    p.try_mul(q)
}
