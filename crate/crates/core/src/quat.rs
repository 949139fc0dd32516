//! Arithmetic in a definite quaternion order presented by a multiplication
//! table.
//!
//! The endomorphism ring of a supersingular curve enters the pipeline only
//! through a basis (conventionally 1, i, F, iF), a 4x4x4 structure-constant
//! table, and the standard involution. We keep all coefficients as exact
//! rationals; denominators are only ever inverted after mapping into a ring
//! where their invertibility has been checked. Polarization matrices over the
//! order are validated for Hermitian symmetry here, and small expressions in
//! the generators ("3", "(1+i)*F") are parsed for the config front-end.

use num_rational::Ratio;
use thiserror::Error;

pub type Rat = Ratio<i64>;

/// A quaternion element in coordinates over the fixed 4-element basis.
pub type QuatElem = Vec<Rat>;

pub const QDIM: usize = 4;

#[derive(Debug, Error)]
pub enum QuatError {
    #[error("multiplication table must be {QDIM}x{QDIM}x{QDIM}, conjugation {QDIM}x{QDIM}")]
    Shape,
    #[error("basis element 0 does not act as the identity")]
    Identity,
    #[error("multiplication table is not associative at basis triple ({0},{1},{2})")]
    Associative(usize, usize, usize),
    #[error("conjugation is not an involution on basis element {0}")]
    Involution(usize),
    #[error("conjugation fails conj(xy) = conj(y) conj(x) at basis pair ({0},{1})")]
    AntiAutomorphism(usize, usize),
    #[error("x conj(x) is not a scalar: basis pair ({0},{1}) leaves a component {2}")]
    NormNotScalar(usize, usize, usize),
    #[error("x + conj(x) is not a scalar for basis element {0}")]
    TraceNotScalar(usize),
    #[error("designated Frobenius element squares to {0} * 1, expected -p = -{1}")]
    FrobeniusSquare(Rat, u64),
    #[error("parse error in order expression `{0}`: {1}")]
    Parse(String, String),
    #[error("division by a non-scalar or zero element in order expression")]
    BadDivisor,
}

/// A quaternion order with a designated Frobenius basis element.
///
/// `table[a][b]` holds the coordinates of `e_a * e_b`; `conj[a]` the
/// coordinates of the conjugate of `e_a`. `frob` indexes the basis element
/// playing the role of the Frobenius isogeny (it must square to -p).
#[derive(Debug, Clone)]
pub struct QuatOrder {
    pub p: u64,
    pub names: Vec<String>,
    pub table: Vec<Vec<QuatElem>>,
    pub conj: Vec<QuatElem>,
    pub frob: usize,
}

impl QuatOrder {
    /// The standard order for p = 3 mod 4: B = (-1, -p), basis 1, i, F, iF
    /// with i^2 = -1, F^2 = -p, Fi = -iF. This is the shape every shipped
    /// configuration uses; the config layer may also supply its own table.
    pub fn standard(p: u64) -> Self {
        assert!(p % 4 == 3, "the packaged table assumes i^2 = -1, Fi = -iF");
        let r = |x: i64| Rat::from_integer(x);
        let e = |j: usize, c: i64| -> QuatElem {
            let mut v = vec![r(0); QDIM];
            v[j] = r(c);
            v
        };
        let pp = p as i64;
        // rows: left factor; cols: right factor; basis order 1, i, F, iF
        let table = vec![
            vec![e(0, 1), e(1, 1), e(2, 1), e(3, 1)],
            vec![e(1, 1), e(0, -1), e(3, 1), e(2, -1)],
            vec![e(2, 1), e(3, -1), e(0, -pp), e(1, pp)],
            vec![e(3, 1), e(2, 1), e(1, -pp), e(0, -pp)],
        ];
        let conj = vec![e(0, 1), e(1, -1), e(2, -1), e(3, -1)];
        let order = QuatOrder {
            p,
            names: ["1", "i", "F", "iF"].iter().map(|s| s.to_string()).collect(),
            table,
            conj,
            frob: 2,
        };
        order.validate().expect("packaged table is consistent");
        order
    }

    pub fn zero(&self) -> QuatElem {
        vec![Rat::from_integer(0); QDIM]
    }

    pub fn one(&self) -> QuatElem {
        self.scalar(Rat::from_integer(1))
    }

    pub fn scalar(&self, c: Rat) -> QuatElem {
        let mut v = self.zero();
        v[0] = c;
        v
    }

    pub fn basis(&self, j: usize) -> QuatElem {
        let mut v = self.zero();
        v[j] = Rat::from_integer(1);
        v
    }

    pub fn add(&self, a: &QuatElem, b: &QuatElem) -> QuatElem {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn sub(&self, a: &QuatElem, b: &QuatElem) -> QuatElem {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn neg(&self, a: &QuatElem) -> QuatElem {
        a.iter().map(|x| -x).collect()
    }

    pub fn scale(&self, c: Rat, a: &QuatElem) -> QuatElem {
        a.iter().map(|x| x * c).collect()
    }

    pub fn mul(&self, a: &QuatElem, b: &QuatElem) -> QuatElem {
        let mut out = self.zero();
        for (ia, ca) in a.iter().enumerate() {
            if ca.numer() == &0 {
                continue;
            }
            for (ib, cb) in b.iter().enumerate() {
                if cb.numer() == &0 {
                    continue;
                }
                let c = ca * cb;
                for (j, t) in self.table[ia][ib].iter().enumerate() {
                    out[j] += c * t;
                }
            }
        }
        out
    }

    pub fn conjugate(&self, a: &QuatElem) -> QuatElem {
        let mut out = self.zero();
        for (ia, ca) in a.iter().enumerate() {
            for (j, t) in self.conj[ia].iter().enumerate() {
                out[j] += ca * t;
            }
        }
        out
    }

    pub fn is_zero(&self, a: &QuatElem) -> bool {
        a.iter().all(|x| x.numer() == &0)
    }

    pub fn is_scalar(&self, a: &QuatElem) -> bool {
        a.iter().skip(1).all(|x| x.numer() == &0)
    }

    /// Reduced norm x conj(x); validation guarantees the product is scalar.
    pub fn nrd(&self, a: &QuatElem) -> Rat {
        let prod = self.mul(a, &self.conjugate(a));
        debug_assert!(self.is_scalar(&prod));
        prod[0]
    }

    /// Reduced trace x + conj(x).
    pub fn trd(&self, a: &QuatElem) -> Rat {
        let s = self.add(a, &self.conjugate(a));
        debug_assert!(self.is_scalar(&s));
        s[0]
    }

    /// Structural sanity of the table: identity, associativity, the standard
    /// involution axioms, scalarity of norms and traces, and the designated
    /// Frobenius relation F^2 = -p.
    pub fn validate(&self) -> Result<(), QuatError> {
        if self.table.len() != QDIM
            || self.table.iter().any(|r| r.len() != QDIM)
            || self
                .table
                .iter()
                .flatten()
                .any(|v| v.len() != QDIM)
            || self.conj.len() != QDIM
            || self.conj.iter().any(|v| v.len() != QDIM)
            || self.names.len() != QDIM
            || self.frob >= QDIM
        {
            return Err(QuatError::Shape);
        }
        for b in 0..QDIM {
            if self.table[0][b] != self.basis(b) || self.table[b][0] != self.basis(b) {
                return Err(QuatError::Identity);
            }
        }
        for a in 0..QDIM {
            for b in 0..QDIM {
                for c in 0..QDIM {
                    let lhs = self.mul(&self.mul(&self.basis(a), &self.basis(b)), &self.basis(c));
                    let rhs = self.mul(&self.basis(a), &self.mul(&self.basis(b), &self.basis(c)));
                    if lhs != rhs {
                        return Err(QuatError::Associative(a, b, c));
                    }
                }
            }
        }
        for a in 0..QDIM {
            if self.conjugate(&self.conjugate(&self.basis(a))) != self.basis(a) {
                return Err(QuatError::Involution(a));
            }
            let tr = self.add(&self.basis(a), &self.conj[a].clone());
            if !self.is_scalar(&tr) {
                return Err(QuatError::TraceNotScalar(a));
            }
        }
        for a in 0..QDIM {
            for b in 0..QDIM {
                let lhs = self.conjugate(&self.mul(&self.basis(a), &self.basis(b)));
                let rhs = self.mul(&self.conjugate(&self.basis(b)), &self.conjugate(&self.basis(a)));
                if lhs != rhs {
                    return Err(QuatError::AntiAutomorphism(a, b));
                }
            }
        }
        // x conj(x) scalar for all x: the e_b-component of x conj(x) is a
        // bilinear form in the coordinates of x; it vanishes identically iff
        // its symmetrization does.
        for comp in 1..QDIM {
            for a in 0..QDIM {
                for c in 0..QDIM {
                    let fac = self.mul(&self.basis(a), &self.conjugate(&self.basis(c)));
                    let fca = self.mul(&self.basis(c), &self.conjugate(&self.basis(a)));
                    if fac[comp] + fca[comp] != Rat::from_integer(0) {
                        return Err(QuatError::NormNotScalar(a, c, comp));
                    }
                }
            }
        }
        let f2 = self.mul(&self.basis(self.frob), &self.basis(self.frob));
        let want = self.scalar(Rat::from_integer(-(self.p as i64)));
        if f2 != want {
            if self.is_scalar(&f2) {
                return Err(QuatError::FrobeniusSquare(f2[0], self.p));
            }
            return Err(QuatError::FrobeniusSquare(Rat::from_integer(0), self.p));
        }
        Ok(())
    }

    /// Conjugate-transpose symmetry of a g x g matrix over the order.
    pub fn is_hermitian(&self, m: &[Vec<QuatElem>]) -> bool {
        let g = m.len();
        if m.iter().any(|row| row.len() != g) {
            return false;
        }
        for r in 0..g {
            for c in 0..g {
                if self.conjugate(&m[r][c]) != m[c][r] {
                    return false;
                }
            }
        }
        true
    }

    pub fn elem_str(&self, a: &QuatElem) -> String {
        let mut parts: Vec<String> = Vec::new();
        for (j, c) in a.iter().enumerate() {
            if c.numer() == &0 {
                continue;
            }
            let cs = if c.denom() == &1 {
                format!("{}", c.numer())
            } else {
                format!("{}/{}", c.numer(), c.denom())
            };
            if j == 0 {
                parts.push(cs);
            } else if *c == Rat::from_integer(1) {
                parts.push(self.names[j].clone());
            } else if *c == Rat::from_integer(-1) {
                parts.push(format!("-{}", self.names[j]));
            } else {
                parts.push(format!("{}*{}", cs, self.names[j]));
            }
        }
        if parts.is_empty() {
            "0".to_string()
        } else {
            parts.join(" + ").replace("+ -", "- ")
        }
    }

    /// Parse an expression over the basis names with + - * / and parentheses.
    /// Juxtaposition multiplies ("(1+i)F"); division requires a nonzero
    /// scalar divisor.
    pub fn parse(&self, src: &str) -> Result<QuatElem, QuatError> {
        let mut p = ExprParser {
            order: self,
            src,
            chars: src.char_indices().peekable(),
        };
        let v = p.expr()?;
        p.skip_ws();
        if let Some(&(i, c)) = p.chars.peek() {
            return Err(QuatError::Parse(
                src.to_string(),
                format!("unexpected `{}` at byte {}", c, i),
            ));
        }
        Ok(v)
    }
}

struct ExprParser<'a> {
    order: &'a QuatOrder,
    src: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
}

impl<'a> ExprParser<'a> {
    fn err(&self, msg: impl Into<String>) -> QuatError {
        QuatError::Parse(self.src.to_string(), msg.into())
    }

    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some(&(_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn expr(&mut self) -> Result<QuatElem, QuatError> {
        self.skip_ws();
        let mut neg = false;
        if matches!(self.chars.peek(), Some(&(_, '-'))) {
            self.chars.next();
            neg = true;
        } else if matches!(self.chars.peek(), Some(&(_, '+'))) {
            self.chars.next();
        }
        let mut acc = self.term()?;
        if neg {
            acc = self.order.neg(&acc);
        }
        loop {
            self.skip_ws();
            match self.chars.peek() {
                Some(&(_, '+')) => {
                    self.chars.next();
                    let t = self.term()?;
                    acc = self.order.add(&acc, &t);
                }
                Some(&(_, '-')) => {
                    self.chars.next();
                    let t = self.term()?;
                    acc = self.order.sub(&acc, &t);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    /// A term is a product of factors; `*` is optional, `/` divides by a
    /// scalar factor.
    fn term(&mut self) -> Result<QuatElem, QuatError> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            match self.chars.peek() {
                Some(&(_, '*')) => {
                    self.chars.next();
                    let f = self.factor()?;
                    acc = self.order.mul(&acc, &f);
                }
                Some(&(_, '/')) => {
                    self.chars.next();
                    let f = self.factor()?;
                    if !self.order.is_scalar(&f) || f[0].numer() == &0 {
                        return Err(QuatError::BadDivisor);
                    }
                    acc = self.order.scale(f[0].recip(), &acc);
                }
                Some(&(_, c)) if c.is_alphanumeric() || c == '(' => {
                    let f = self.factor()?;
                    acc = self.order.mul(&acc, &f);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<QuatElem, QuatError> {
        self.skip_ws();
        match self.chars.peek().copied() {
            Some((_, '(')) => {
                self.chars.next();
                let v = self.expr()?;
                self.skip_ws();
                match self.chars.next() {
                    Some((_, ')')) => Ok(v),
                    _ => Err(self.err("missing closing parenthesis")),
                }
            }
            Some((_, '-')) => {
                self.chars.next();
                let v = self.factor()?;
                Ok(self.order.neg(&v))
            }
            Some((_, c)) if c.is_ascii_digit() => {
                let mut n: i64 = 0;
                while let Some(&(_, d)) = self.chars.peek() {
                    if let Some(v) = d.to_digit(10) {
                        n = n
                            .checked_mul(10)
                            .and_then(|x| x.checked_add(v as i64))
                            .ok_or_else(|| self.err("integer literal overflows"))?;
                        self.chars.next();
                    } else {
                        break;
                    }
                }
                Ok(self.order.scalar(Rat::from_integer(n)))
            }
            Some((_, c)) if c.is_alphanumeric() || c == '_' => {
                let mut name = String::new();
                while let Some(&(_, d)) = self.chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        name.push(d);
                        self.chars.next();
                    } else {
                        break;
                    }
                }
                // longest-match against basis names so "iF" parses as one
                // symbol when the table names it, falling back to letterwise
                // products ("iF" = i * F) otherwise
                if let Some(j) = self.order.names.iter().position(|n| n == &name) {
                    return Ok(self.order.basis(j));
                }
                let mut acc = self.order.one();
                for ch in name.chars() {
                    let s = ch.to_string();
                    match self.order.names.iter().position(|n| n == &s) {
                        Some(j) => acc = self.order.mul(&acc, &self.order.basis(j)),
                        None => return Err(self.err(format!("unknown symbol `{}`", name))),
                    }
                }
                Ok(acc)
            }
            other => Err(self.err(format!("unexpected input {:?}", other.map(|x| x.1)))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(x: i64) -> Rat {
        Rat::from_integer(x)
    }

    #[test]
    fn standard_table_is_consistent() {
        for p in [3u64, 7, 11, 19] {
            let o = QuatOrder::standard(p);
            assert!(o.validate().is_ok());
            // norm form: x0^2 + x1^2 + p x2^2 + p x3^2
            let x = vec![r(1), r(2), r(3), r(4)];
            assert_eq!(o.nrd(&x), r(1 + 4 + 9 * p as i64 + 16 * p as i64));
            assert_eq!(o.trd(&x), r(2));
        }
    }

    #[test]
    fn norm_is_multiplicative() {
        let o = QuatOrder::standard(3);
        let x = vec![r(1), r(-2), r(0), r(1)];
        let y = vec![r(3), r(1), r(1), r(0)];
        assert_eq!(o.nrd(&o.mul(&x, &y)), o.nrd(&x) * o.nrd(&y));
    }

    #[test]
    fn frobenius_commutation() {
        // F i = conj(i) F = -i F in the standard table
        let o = QuatOrder::standard(3);
        let f = o.basis(o.frob);
        let i = o.basis(1);
        assert_eq!(o.mul(&f, &i), o.neg(&o.mul(&i, &f)));
        assert_eq!(o.mul(&f, &f), o.scalar(r(-3)));
    }

    #[test]
    fn parser_round_trips() {
        let o = QuatOrder::standard(3);
        let e = o.parse("(1+i)*F").unwrap();
        assert_eq!(e, o.add(&o.basis(2), &o.basis(3)));
        // juxtaposition and the named symbol agree
        assert_eq!(o.parse("iF").unwrap(), o.basis(3));
        assert_eq!(o.parse("i F").unwrap(), o.basis(3));
        assert_eq!(o.parse("-(1+i)F").unwrap(), o.neg(&e));
        assert_eq!(o.parse("3").unwrap(), o.scalar(r(3)));
        assert_eq!(o.parse("(1 - i)/2 * 2").unwrap(), o.sub(&o.one(), &o.basis(1)));
        assert!(o.parse("2q").is_err());
        assert!(o.parse("1/(1+i)").is_err());
        assert!(o.parse("(1+i").is_err());
    }

    #[test]
    fn hermitian_detection() {
        let o = QuatOrder::standard(3);
        let three = o.scalar(r(3));
        let a = o.parse("(1+i)F").unwrap();
        let h = vec![
            vec![three.clone(), a.clone()],
            vec![o.neg(&a), three.clone()],
        ];
        // conj((1+i)F) = conj(F) conj(1+i) = -F(1-i) = -(F - Fi) = -(F + iF)
        assert!(o.is_hermitian(&h));
        let bad = vec![vec![three.clone(), a.clone()], vec![a.clone(), three]];
        assert!(!o.is_hermitian(&bad));
    }
}
