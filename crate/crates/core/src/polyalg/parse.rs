use super::render::moment_token;
use super::{MultiIndex, PolyError, Polynomial, Roster, VarKind, Variable};

/// Parse error with a 1-based line/column position.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Parse infix polynomial text such as `(w1 + 2*x)^2 - pow(y,3)/4`.
///
/// `kind_of` decides whether an identifier is random or deterministic.
/// Moment atoms `E[w1^2*w2]` are accepted and become deterministic symbols
/// named by their C-like token (`E_w1_2_x_w2_1`), so rendered moment
/// expressions in either dialect parse back into evaluable polynomials.
pub fn parse_polynomial(
    text: &str,
    kind_of: &dyn Fn(&str) -> VarKind,
) -> Result<Polynomial, ParseError> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
        kind_of,
    };
    let poly = p.expr()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.error(format!("unexpected '{}'", p.chars[p.pos])));
    }
    Ok(poly)
}

/// Recover the multi-index of a C-like moment token over `random`.
pub fn decode_moment_token(token: &str, random: &Roster) -> Option<MultiIndex> {
    let mut rest = token.strip_prefix("E_")?;
    let mut e = vec![0u32; random.len()];
    // Names may contain underscores (`g_x`), so match roster names greedily
    // rather than splitting on the separator.
    let mut names: Vec<(usize, &str)> = random
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.name.as_str()))
        .collect();
    names.sort_by_key(|(_, n)| std::cmp::Reverse(n.len()));
    loop {
        let (i, after) = names.iter().find_map(|&(i, n)| {
            let after = rest.strip_prefix(n)?.strip_prefix('_')?;
            after.starts_with(|c: char| c.is_ascii_digit()).then_some((i, after))
        })?;
        let digits = after.find(|c: char| !c.is_ascii_digit()).unwrap_or(after.len());
        e[i] += after[..digits].parse::<u32>().ok()?;
        rest = &after[digits..];
        if rest.is_empty() {
            return Some(MultiIndex::new(e));
        }
        rest = rest.strip_prefix("_x_")?;
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    kind_of: &'a dyn Fn(&str) -> VarKind,
}

fn lift(e: PolyError) -> String {
    e.to_string()
}

impl Parser<'_> {
    fn error(&self, message: String) -> ParseError {
        let mut line = 1;
        let mut column = 1;
        for &c in &self.chars[..self.pos.min(self.chars.len())] {
            if c == '\n' {
                line += 1;
                column = 1;
            } else {
                column += 1;
            }
        }
        ParseError {
            line,
            column,
            message,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    fn wrap<T>(&self, r: Result<T, PolyError>) -> Result<T, ParseError> {
        r.map_err(|e| self.error(lift(e)))
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = self.wrap(acc.try_add(&rhs))?;
                }
                Some('-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = self.wrap(acc.try_sub(&rhs))?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = self.wrap(acc.try_mul(&rhs))?;
                }
                Some('/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    if rhs.degree() != 0 || rhs.is_zero() {
                        return Err(self.error("division only by a nonzero constant".into()));
                    }
                    let c = rhs.eval(&vec![0.0; rhs.roster().len()]);
                    acc = acc.scale(1.0 / c);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let k = self.exponent()?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<u32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a non-negative integer exponent".into()));
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse()
            .map_err(|_| self.error(format!("exponent '{s}' out of range")))
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let n = self.chars.len();
        while self.pos < n && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == '.') {
            self.pos += 1;
        }
        if self.pos < n && (self.chars[self.pos] == 'e' || self.chars[self.pos] == 'E') {
            let mut look = self.pos + 1;
            if look < n && (self.chars[look] == '+' || self.chars[look] == '-') {
                look += 1;
            }
            if look < n && self.chars[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < n && self.chars[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse().map_err(|_| {
            self.pos = start;
            self.error(format!("malformed number '{s}'"))
        })
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn single(&self, name: &str, kind: VarKind) -> Result<Polynomial, ParseError> {
        let roster = self.wrap(Roster::new(vec![Variable {
            name: name.to_string(),
            kind,
        }]))?;
        self.wrap(Polynomial::variable(&roster, name))
    }

    fn atom(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let v = self.number()?;
                Ok(Polynomial::constant(&Roster::default(), v))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let name = self.ident();
                if name == "E" && self.chars.get(self.pos) == Some(&'[') {
                    self.pos += 1;
                    return self.moment_atom();
                }
                if name == "pow" && self.peek() == Some('(') {
                    self.pos += 1;
                    let base = self.expr()?;
                    self.expect(',')?;
                    let k = self.exponent()?;
                    self.expect(')')?;
                    return Ok(base.pow(k));
                }
                let kind = (self.kind_of)(&name);
                self.single(&name, kind)
            }
            Some(c) => Err(self.error(format!("unexpected '{c}'"))),
            None => Err(self.error("unexpected end of input".into())),
        }
    }

    fn moment_atom(&mut self) -> Result<Polynomial, ParseError> {
        let inner = self.expr()?;
        self.expect(']')?;
        let mut terms = inner.terms();
        let (idx, c) = match (terms.next(), terms.next()) {
            (Some((idx, c)), None) => (idx.clone(), c),
            _ => return Err(self.error("moment argument must be a single monomial".into())),
        };
        if c != 1.0 || idx.is_zero() {
            return Err(self.error("moment argument must be a monic monomial".into()));
        }
        let token = moment_token(inner.roster(), &idx);
        self.single(&token, VarKind::Deterministic)
    }
}
