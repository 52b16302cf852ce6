use serde::{Deserialize, Serialize};

use super::{MomentExpression, MultiIndex, Polynomial, Roster};

/// Output flavour for rendered expressions.
///
/// `PlainInfix` writes `E[w1^2*w2^3]` and `x^2`; `CLike` writes moment tokens
/// as identifiers (`E_w1_2_x_w2_3`) and powers as `pow(x,2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    PlainInfix,
    CLike,
}

impl std::str::FromStr for Dialect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" | "plain-infix" => Ok(Dialect::PlainInfix),
            "c" | "c-like" => Ok(Dialect::CLike),
            other => Err(format!("unknown dialect '{other}'")),
        }
    }
}

fn number(c: f64) -> String {
    format!("{c}")
}

/// Identifier for a single moment `E[w^α]` in the C-like dialect.
pub fn moment_token(roster: &Roster, index: &MultiIndex) -> String {
    let parts: Vec<String> = index
        .exponents()
        .iter()
        .enumerate()
        .filter(|(_, &k)| k > 0)
        .map(|(i, &k)| format!("{}_{}", roster.vars()[i].name, k))
        .collect();
    format!("E_{}", parts.join("_x_"))
}

fn monomial(roster: &Roster, index: &MultiIndex, dialect: Dialect) -> Vec<String> {
    index
        .exponents()
        .iter()
        .enumerate()
        .filter(|(_, &k)| k > 0)
        .map(|(i, &k)| {
            let name = &roster.vars()[i].name;
            match (k, dialect) {
                (1, _) => name.clone(),
                (_, Dialect::PlainInfix) => format!("{name}^{k}"),
                (_, Dialect::CLike) => format!("pow({name},{k})"),
            }
        })
        .collect()
}

fn moment_factor(roster: &Roster, index: &MultiIndex, dialect: Dialect) -> String {
    match dialect {
        Dialect::CLike => moment_token(roster, index),
        Dialect::PlainInfix => {
            let inner: Vec<String> = index
                .exponents()
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(i, &k)| {
                    let name = &roster.vars()[i].name;
                    if k == 1 {
                        name.clone()
                    } else {
                        format!("{name}^{k}")
                    }
                })
                .collect();
            format!("E[{}]", inner.join("*"))
        }
    }
}

/// Join signed terms: the first keeps its sign, the rest use ` + ` / ` - `.
fn join_terms(terms: Vec<(bool, String)>) -> String {
    if terms.is_empty() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, (neg, body)) in terms.into_iter().enumerate() {
        match (i, neg) {
            (0, true) => {
                out.push('-');
                out.push_str(&body);
            }
            (0, false) => out.push_str(&body),
            (_, true) => {
                out.push_str(" - ");
                out.push_str(&body);
            }
            (_, false) => {
                out.push_str(" + ");
                out.push_str(&body);
            }
        }
    }
    out
}

/// A coefficient times a list of symbolic factors, sign pulled out.
fn scaled_product(c: f64, factors: Vec<String>) -> (bool, String) {
    let neg = c < 0.0;
    let mag = c.abs();
    let body = if factors.is_empty() {
        number(mag)
    } else if mag == 1.0 {
        factors.join("*")
    } else {
        format!("{}*{}", number(mag), factors.join("*"))
    };
    (neg, body)
}

/// Render a polynomial with terms in descending graded-lex order.
pub fn render_polynomial(p: &Polynomial, dialect: Dialect) -> String {
    let terms = p
        .terms()
        .rev()
        .map(|(idx, c)| scaled_product(c, monomial(p.roster(), idx, dialect)))
        .collect();
    join_terms(terms)
}

/// Render `Σ c_α(x) E[w^α]`. Independent blocks render as products of
/// block-local moments.
pub fn render(expr: &MomentExpression, dialect: Dialect) -> String {
    let random = expr.random_vars();
    let det = expr.deterministic_vars();
    let mut terms = Vec::new();
    for (idx, coef) in expr.terms().rev() {
        let moments: Vec<String> = expr
            .factors(idx)
            .iter()
            .map(|f| moment_factor(random, f, dialect))
            .collect();
        if coef.num_terms() == 1 {
            let (midx, c) = coef.terms().next().unwrap();
            let mut factors = monomial(det, midx, dialect);
            factors.extend(moments);
            terms.push(scaled_product(c, factors));
        } else {
            let inner = format!("({})", render_polynomial(coef, dialect));
            if moments.is_empty() {
                terms.push((false, inner));
            } else {
                terms.push((false, format!("{}*{}", inner, moments.join("*"))));
            }
        }
    }
    join_terms(terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyalg::{expectation, DependencyStructure};

    fn example() -> MomentExpression {
        let r = Roster::with_kinds(&["w1", "w2"], &[]).unwrap();
        let p = Polynomial::variable(&r, "w1").unwrap().pow(2)
            + Polynomial::variable(&r, "w2").unwrap().pow(2);
        expectation(&p.pow(2), &DependencyStructure::default())
    }

    #[test]
    fn token_naming() {
        let r = Roster::with_kinds(&["w1", "w2"], &[]).unwrap();
        assert_eq!(moment_token(&r, &MultiIndex::new(vec![2, 0])), "E_w1_2");
        assert_eq!(
            moment_token(&r, &MultiIndex::new(vec![2, 3])),
            "E_w1_2_x_w2_3"
        );
    }

    #[test]
    fn worked_example_renders() {
        let e = example();
        assert_eq!(
            render(&e, Dialect::PlainInfix),
            "E[w1^4] + 2*E[w1^2*w2^2] + E[w2^4]"
        );
        assert_eq!(
            render(&e, Dialect::CLike),
            "E_w1_4 + 2*E_w1_2_x_w2_2 + E_w2_4"
        );
    }

    #[test]
    fn zero_renders_as_zero() {
        let e = example().scale(0.0);
        assert_eq!(render(&e, Dialect::PlainInfix), "0");
        assert_eq!(render(&e, Dialect::CLike), "0");
    }

    #[test]
    fn coefficient_polynomials_and_factoring() {
        let r = Roster::with_kinds(&["w1", "w2"], &["x"]).unwrap();
        let w1 = Polynomial::variable(&r, "w1").unwrap();
        let w2 = Polynomial::variable(&r, "w2").unwrap();
        let x = Polynomial::variable(&r, "x").unwrap();
        let p = (&x + &Polynomial::constant(&r, 1.0)) * w1.pow(2) * w2.clone() - x.pow(2).scale(3.0);
        let e = expectation(&p, &DependencyStructure::independent(&["w1", "w2"]));
        assert_eq!(
            render(&e, Dialect::PlainInfix),
            "(x + 1)*E[w1^2]*E[w2] - 3*x^2"
        );
        assert_eq!(
            render(&e, Dialect::CLike),
            "(x + 1)*E_w1_2*E_w2_1 - 3*pow(x,2)"
        );
    }
}
