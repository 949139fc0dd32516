//! Elliptic curves over small finite fields, with the pieces the section
//! layer needs: exact point arithmetic, rational endomorphisms tied to a
//! quaternion order, the function field in closed form, Weil pairings,
//! torsion frames, and (in [`formal`]) the formal group at the origin.
//!
//! Curves are short Weierstrass `y^2 = x^3 + a2 x^2 + a4 x + a6`. The
//! quadratic term is kept because completing the cube divides by 3 and the
//! base fields here have characteristic 3. Characteristic 2 is out of scope
//! (the field layer already refuses it).
//!
//! The fields are tiny, so "enumerate and check" is a legitimate algorithm:
//! point counting is a literal scan, torsion is filtered from the full point
//! list, and halving solves `[2]Q = P` by search. None of this appears on a
//! hot path; the expensive parts downstream are symbolic, not arithmetic.

use crate::ffield::{Fq, FqElem, NilElem, NilRing, Ring};
use crate::quat::{QuatElem, QuatOrder};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("curve is singular (cubic has a repeated root)")]
    Singular,
    #[error("endomorphism data rejected: {0}")]
    Endo(String),
    #[error("quaternion element is not integral: {0}")]
    NotIntegral(String),
    #[error("torsion structure unavailable: {0}")]
    Torsion(String),
    #[error("divisor data rejected: {0}")]
    Divisor(String),
    #[error("pairing evaluation failed: {0}")]
    Pairing(String),
}

// ======================================================================
// Dense polynomials over Fq
// ======================================================================
//
// Little-endian coefficient vectors, no trailing zeros, zero = empty.
// These are context-passing free functions like everything else in the
// tower; the function field below composes them heavily.

pub type FPoly = Vec<FqElem>;

pub fn poly_trim(f: &Fq, mut a: FPoly) -> FPoly {
    while a.last().map(|c| f.is_zero(c)).unwrap_or(false) {
        a.pop();
    }
    a
}

pub fn poly_zero() -> FPoly {
    Vec::new()
}

pub fn poly_const(f: &Fq, c: FqElem) -> FPoly {
    poly_trim(f, vec![c])
}

pub fn poly_x(f: &Fq) -> FPoly {
    vec![f.zero(), f.one()]
}

/// Degree with the convention deg 0 = -1 (fits the valuation bookkeeping).
pub fn poly_deg(a: &FPoly) -> i64 {
    a.len() as i64 - 1
}

pub fn poly_add(f: &Fq, a: &FPoly, b: &FPoly) -> FPoly {
    let mut out = vec![f.zero(); a.len().max(b.len())];
    for (i, c) in a.iter().enumerate() {
        out[i] = f.add(&out[i], c);
    }
    for (i, c) in b.iter().enumerate() {
        out[i] = f.add(&out[i], c);
    }
    poly_trim(f, out)
}

pub fn poly_neg(f: &Fq, a: &FPoly) -> FPoly {
    a.iter().map(|c| f.neg(c)).collect()
}

pub fn poly_sub(f: &Fq, a: &FPoly, b: &FPoly) -> FPoly {
    poly_add(f, a, &poly_neg(f, b))
}

pub fn poly_scale(f: &Fq, a: &FPoly, c: &FqElem) -> FPoly {
    poly_trim(f, a.iter().map(|x| f.mul(x, c)).collect())
}

pub fn poly_mul(f: &Fq, a: &FPoly, b: &FPoly) -> FPoly {
    if a.is_empty() || b.is_empty() {
        return poly_zero();
    }
    let mut out = vec![f.zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] = f.add(&out[i + j], &f.mul(x, y));
        }
    }
    poly_trim(f, out)
}

/// Quotient and remainder; divisor must be nonzero.
pub fn poly_divrem(f: &Fq, a: &FPoly, b: &FPoly) -> (FPoly, FPoly) {
    assert!(!b.is_empty(), "division by the zero polynomial");
    let db = b.len() - 1;
    let lb_inv = f.inv(&b[db]).expect("leading coefficient is a unit");
    let mut rem = a.clone();
    let mut quo = vec![f.zero(); a.len().saturating_sub(db)];
    while rem.len() > db || (rem.len() == b.len() && !rem.is_empty() && db == 0) {
        if rem.len() < b.len() {
            break;
        }
        let shift = rem.len() - b.len();
        let c = f.mul(rem.last().unwrap(), &lb_inv);
        quo[shift] = f.add(&quo[shift], &c);
        for (j, bc) in b.iter().enumerate() {
            rem[shift + j] = f.sub(&rem[shift + j], &f.mul(&c, bc));
        }
        rem = poly_trim(f, rem);
    }
    (poly_trim(f, quo), rem)
}

pub fn poly_gcd_monic(f: &Fq, a: &FPoly, b: &FPoly) -> FPoly {
    let (mut r0, mut r1) = (a.clone(), b.clone());
    while !r1.is_empty() {
        let (_, r) = poly_divrem(f, &r0, &r1);
        r0 = r1;
        r1 = r;
    }
    poly_monic(f, &r0)
}

pub fn poly_monic(f: &Fq, a: &FPoly) -> FPoly {
    match a.last() {
        None => poly_zero(),
        Some(lc) => {
            let inv = f.inv(lc).expect("field leading coefficient");
            poly_scale(f, a, &inv)
        }
    }
}

pub fn poly_eval(f: &Fq, a: &FPoly, x: &FqElem) -> FqElem {
    let mut acc = f.zero();
    for c in a.iter().rev() {
        acc = f.add(&f.mul(&acc, x), c);
    }
    acc
}

pub fn poly_deriv(f: &Fq, a: &FPoly) -> FPoly {
    let mut out = Vec::new();
    for (i, c) in a.iter().enumerate().skip(1) {
        out.push(f.mul(&f.from_int(i as i64), c));
    }
    poly_trim(f, out)
}

/// Multiplicity of the root x0 (0 if not a root).
pub fn poly_root_multiplicity(f: &Fq, a: &FPoly, x0: &FqElem) -> u32 {
    assert!(!a.is_empty());
    let lin = vec![f.neg(x0), f.one()];
    let mut m = 0;
    let mut cur = a.clone();
    loop {
        let (q, r) = poly_divrem(f, &cur, &lin);
        if !r.is_empty() {
            return m;
        }
        m += 1;
        cur = q;
    }
}

/// a(x0 + u) as a polynomial in u (Taylor shift by brute substitution).
pub fn poly_shift(f: &Fq, a: &FPoly, x0: &FqElem) -> FPoly {
    let mut out = poly_zero();
    let lin = vec![x0.clone(), f.one()]; // x0 + u
    for c in a.iter().rev() {
        out = poly_mul(f, &out, &lin);
        out = poly_add(f, &out, &poly_const(f, c.clone()));
    }
    out
}

// ======================================================================
// Curves and points
// ======================================================================

/// `y^2 = x^3 + a2 x^2 + a4 x + a6` over a fixed field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Curve {
    pub f: Fq,
    pub a2: FqElem,
    pub a4: FqElem,
    pub a6: FqElem,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Point {
    Inf,
    Aff(FqElem, FqElem),
}

impl Curve {
    pub fn new(f: Fq, a2: FqElem, a4: FqElem, a6: FqElem) -> Result<Self, CurveError> {
        let c = Curve { f, a2, a4, a6 };
        // Nonsingular iff the cubic is squarefree: gcd(rhs, rhs') = 1. This
        // is the right test in characteristic 3 as well since deg rhs' can
        // drop but a repeated root always survives into the gcd.
        let rhs = c.rhs_poly();
        let d = poly_gcd_monic(&c.f, &rhs, &poly_deriv(&c.f, &rhs));
        if poly_deg(&d) != 0 {
            return Err(CurveError::Singular);
        }
        Ok(c)
    }

    pub fn rhs_poly(&self) -> FPoly {
        poly_trim(
            &self.f,
            vec![self.a6.clone(), self.a4.clone(), self.a2.clone(), self.f.one()],
        )
    }

    pub fn rhs(&self, x: &FqElem) -> FqElem {
        poly_eval(&self.f, &self.rhs_poly(), x)
    }

    pub fn on_curve(&self, p: &Point) -> bool {
        match p {
            Point::Inf => true,
            Point::Aff(x, y) => self.f.mul(y, y) == self.rhs(x),
        }
    }

    pub fn neg(&self, p: &Point) -> Point {
        match p {
            Point::Inf => Point::Inf,
            Point::Aff(x, y) => Point::Aff(x.clone(), self.f.neg(y)),
        }
    }

    pub fn add(&self, p: &Point, q: &Point) -> Point {
        let f = &self.f;
        let (x1, y1) = match p {
            Point::Inf => return q.clone(),
            Point::Aff(x, y) => (x, y),
        };
        let (x2, y2) = match q {
            Point::Inf => return p.clone(),
            Point::Aff(x, y) => (x, y),
        };
        let lambda = if x1 == x2 {
            if *y1 == f.neg(y2) {
                return Point::Inf;
            }
            // Tangent: (3x^2 + 2 a2 x + a4) / (2y).
            let num = f.add(
                &f.add(
                    &f.mul(&f.from_int(3), &f.mul(x1, x1)),
                    &f.mul(&f.from_int(2), &f.mul(&self.a2, x1)),
                ),
                &self.a4,
            );
            let den = f.mul(&f.from_int(2), y1);
            f.mul(&num, &f.inv(&den).expect("tangent at a 2-torsion point"))
        } else {
            let num = f.sub(y2, y1);
            let den = f.sub(x2, x1);
            f.mul(&num, &f.inv(&den).unwrap())
        };
        let x3 = f.sub(&f.sub(&f.sub(&f.mul(&lambda, &lambda), &self.a2), x1), x2);
        let y3 = f.sub(&f.mul(&lambda, &f.sub(x1, &x3)), y1);
        Point::Aff(x3, y3)
    }

    pub fn sub(&self, p: &Point, q: &Point) -> Point {
        self.add(p, &self.neg(q))
    }

    pub fn mul(&self, n: i64, p: &Point) -> Point {
        let (mut n, base) = if n < 0 { ((-n) as u64, self.neg(p)) } else { (n as u64, p.clone()) };
        let mut acc = Point::Inf;
        let mut pow = base;
        while n > 0 {
            if n & 1 == 1 {
                acc = self.add(&acc, &pow);
            }
            pow = self.add(&pow, &pow);
            n >>= 1;
        }
        acc
    }

    /// Every rational point, the origin first, affine points in field
    /// enumeration order. The fields in play have at most a few thousand
    /// elements, so this is the backbone of torsion and halving queries.
    pub fn all_points(&self) -> Vec<Point> {
        let mut out = vec![Point::Inf];
        for x in self.f.all_elements() {
            let v = self.rhs(&x);
            if self.f.is_zero(&v) {
                out.push(Point::Aff(x, self.f.zero()));
            } else if let Some(y) = self.f.sqrt(&v) {
                let yn = self.f.neg(&y);
                let (lo, hi) = if y <= yn { (y, yn) } else { (yn, y) };
                out.push(Point::Aff(x.clone(), lo));
                out.push(Point::Aff(x, hi));
            }
        }
        out
    }

    pub fn count_points(&self) -> u64 {
        self.all_points().len() as u64
    }

    /// Trace of Frobenius: q + 1 - #E(F_q).
    pub fn trace(&self) -> i64 {
        self.f.order() as i64 + 1 - self.count_points() as i64
    }

    /// Base change along the canonical embedding into a larger field
    /// (degree of `dst` must be a multiple of the base degree).
    pub fn embed_to(&self, dst: &Fq) -> Curve {
        let root = self.f.embedding_root(dst);
        Curve {
            f: dst.clone(),
            a2: self.f.embed_elem(dst, &root, &self.a2),
            a4: self.f.embed_elem(dst, &root, &self.a4),
            a6: self.f.embed_elem(dst, &root, &self.a6),
        }
    }

    /// Newton-slope test: all slopes of the characteristic polynomial of
    /// Frobenius equal 1/2, verified over the base field and its quadratic
    /// extension (point counts are exact, so this is a proof, not a
    /// heuristic).
    pub fn is_supersingular(&self) -> bool {
        let vp = |a: i64| -> u32 {
            if a == 0 {
                return u32::MAX;
            }
            let mut a = a.unsigned_abs();
            let mut v = 0;
            while a % self.f.p == 0 {
                a /= self.f.p;
                v += 1;
            }
            v
        };
        let k1 = self.f.k as u32;
        if vp(self.trace()).saturating_mul(2) < k1 {
            return false;
        }
        let ext = Fq::new(self.f.p, self.f.k * 2);
        let up = self.embed_to(&ext);
        vp(up.trace()).saturating_mul(2) >= 2 * k1
    }

    pub fn torsion_points(&self, n: i64) -> Vec<Point> {
        self.all_points()
            .into_iter()
            .filter(|p| self.mul(n, p) == Point::Inf)
            .collect()
    }

    /// Smallest m >= 1 with [m]P = O.
    pub fn point_order(&self, p: &Point) -> u64 {
        let mut acc = p.clone();
        let mut m = 1;
        while acc != Point::Inf {
            acc = self.add(&acc, p);
            m += 1;
        }
        m
    }

    /// A rational point with [2]Q = P, if one exists.
    pub fn halve(&self, p: &Point) -> Option<Point> {
        self.all_points().into_iter().find(|q| self.mul(2, q) == *p)
    }

    /// A basis (P, Q) of E[n] with e_n(P, Q) of exact order n. Requires the
    /// full n-torsion to be rational.
    pub fn torsion_basis(&self, n: i64) -> Result<(Point, Point), CurveError> {
        let tors = self.torsion_points(n);
        if tors.len() as i64 != n * n {
            return Err(CurveError::Torsion(format!(
                "E[{}] is not fully rational here ({} points)",
                n,
                tors.len()
            )));
        }
        let p = tors
            .iter()
            .find(|t| self.point_order(t) == n as u64)
            .cloned()
            .ok_or_else(|| CurveError::Torsion("no point of full order".into()))?;
        for q in &tors {
            if self.point_order(q) != n as u64 {
                continue;
            }
            let z = self.weil_pairing(&p, q, n)?;
            if root_of_unity_order(&self.f, &z) == n as u64 {
                return Ok((p, q.clone()));
            }
        }
        Err(CurveError::Torsion("no symplectic partner found".into()))
    }

    // ------------------------------------------------------------------
    // Weil pairing
    // ------------------------------------------------------------------

    /// e_n(P, Q) via functions with divisors n(P+S) - n(S), n(Q+T) - n(T)
    /// and cross-evaluation; offsets are scanned deterministically until the
    /// four evaluation points avoid every zero and pole.
    pub fn weil_pairing(&self, p: &Point, q: &Point, n: i64) -> Result<FqElem, CurveError> {
        if self.mul(n, p) != Point::Inf || self.mul(n, q) != Point::Inf {
            return Err(CurveError::Pairing("arguments are not n-torsion".into()));
        }
        if *p == Point::Inf || *q == Point::Inf {
            return Ok(self.f.one());
        }
        let pts = self.all_points();
        for s in &pts {
            let ps = self.add(p, s);
            if ps == Point::Inf || *s == Point::Inf {
                continue;
            }
            for t in &pts {
                let qt = self.add(q, t);
                if qt == Point::Inf || *t == Point::Inf {
                    continue;
                }
                // Supports {P+S, S} and {Q+T, T} must be disjoint.
                if ps == qt || ps == *t || *s == qt || *s == *t {
                    continue;
                }
                let fa = match self.function_with_divisor(&[(ps.clone(), n), (s.clone(), -n)]) {
                    Some(g) => g,
                    None => continue,
                };
                let fb = match self.function_with_divisor(&[(qt.clone(), n), (t.clone(), -n)]) {
                    Some(g) => g,
                    None => continue,
                };
                let num1 = fa.eval(self, &qt);
                let num2 = fa.eval(self, t);
                let num3 = fb.eval(self, &ps);
                let num4 = fb.eval(self, s);
                match (num1, num2, num3, num4) {
                    (Some(a1), Some(a2), Some(b1), Some(b2)) => {
                        if self.f.is_zero(&a1)
                            || self.f.is_zero(&a2)
                            || self.f.is_zero(&b1)
                            || self.f.is_zero(&b2)
                        {
                            continue;
                        }
                        let lhs = self.f.mul(&a1, &self.f.inv(&a2).unwrap());
                        let rhs = self.f.mul(&b1, &self.f.inv(&b2).unwrap());
                        return Ok(self.f.mul(&lhs, &self.f.inv(&rhs).unwrap()));
                    }
                    _ => continue,
                }
            }
        }
        Err(CurveError::Pairing("no admissible offsets".into()))
    }

    // ------------------------------------------------------------------
    // Functions from divisors
    // ------------------------------------------------------------------

    /// The vertical line x - x(P); divisor (P) + (-P) - 2(O).
    pub fn vertical(&self, p: &Point) -> EFunc {
        match p {
            Point::Inf => EFunc::one(&self.f),
            Point::Aff(x, _) => EFunc {
                a: vec![self.f.neg(x), self.f.one()],
                b: poly_zero(),
                den: vec![self.f.one()],
            },
        }
    }

    /// The line through P and Q (tangent if P = Q, vertical if Q = -P);
    /// divisor (P) + (Q) + (-(P+Q)) - 3(O), degenerating correctly.
    pub fn line(&self, p: &Point, q: &Point) -> EFunc {
        let f = &self.f;
        let (x1, y1) = match p {
            Point::Inf => return self.vertical(q),
            Point::Aff(x, y) => (x, y),
        };
        let (x2, y2) = match q {
            Point::Inf => return self.vertical(p),
            Point::Aff(x, y) => (x, y),
        };
        let lambda = if x1 == x2 {
            if *y1 == f.neg(y2) {
                return self.vertical(p);
            }
            let num = f.add(
                &f.add(
                    &f.mul(&f.from_int(3), &f.mul(x1, x1)),
                    &f.mul(&f.from_int(2), &f.mul(&self.a2, x1)),
                ),
                &self.a4,
            );
            f.mul(&num, &f.inv(&f.mul(&f.from_int(2), y1)).unwrap())
        } else {
            f.mul(&f.sub(y2, y1), &f.inv(&f.sub(x2, x1)).unwrap())
        };
        // y - (lambda (x - x1) + y1)
        let mu = f.sub(y1, &f.mul(&lambda, x1));
        EFunc {
            a: poly_trim(f, vec![f.neg(&mu), f.neg(&lambda)]),
            b: vec![f.one()],
            den: vec![f.one()],
        }
        .normalized(self)
    }

    /// A function with the given principal divisor, or None if the divisor
    /// is not principal (degree nonzero or nonzero sum on the curve).
    pub fn function_with_divisor(&self, divisor: &[(Point, i64)]) -> Option<EFunc> {
        use std::collections::BTreeMap;
        let mut mults: BTreeMap<Point, i64> = BTreeMap::new();
        for (p, n) in divisor {
            *mults.entry(p.clone()).or_insert(0) += n;
        }
        let deg: i64 = mults.values().sum();
        if deg != 0 {
            return None;
        }
        let mut sum = Point::Inf;
        for (p, n) in &mults {
            sum = self.add(&sum, &self.mul(*n, p));
        }
        if sum != Point::Inf {
            return None;
        }

        let mut acc = EFunc::one(&self.f);
        // Clear negative finite multiplicities: dividing by the vertical at
        // P trades -(P) for (-P) - 2(O) in what remains to be built.
        loop {
            let neg = mults
                .iter()
                .find(|(p, n)| **p != Point::Inf && **n < 0)
                .map(|(p, n)| (p.clone(), *n));
            let (p, n) = match neg {
                Some(v) => v,
                None => break,
            };
            let vert = self.vertical(&p).inv(self).unwrap();
            let k = if p == self.neg(&p) { (-n + 1) / 2 } else { -n };
            for _ in 0..k {
                acc = acc.mul(self, &vert);
            }
            *mults.get_mut(&p).unwrap() += if p == self.neg(&p) { 2 * k } else { k };
            *mults.entry(self.neg(&p)).or_insert(0) += if p == self.neg(&p) { 0 } else { k };
            *mults.entry(Point::Inf).or_insert(0) -= 2 * k;
            mults.retain(|_, v| *v != 0);
        }

        // Fold the remaining effective part with chords and verticals.
        let mut queue: Vec<Point> = Vec::new();
        for (p, n) in &mults {
            if *p == Point::Inf {
                continue;
            }
            debug_assert!(*n > 0);
            for _ in 0..*n {
                queue.push(p.clone());
            }
        }
        let mut s = Point::Inf;
        for p in queue {
            if s == Point::Inf {
                s = p;
                continue;
            }
            let t = self.add(&s, &p);
            acc = acc.mul(self, &self.line(&s, &p));
            if t != Point::Inf {
                acc = acc.mul(self, &self.vertical(&t).inv(self).unwrap());
            }
            s = t;
        }
        debug_assert_eq!(s, Point::Inf);
        Some(acc)
    }
}

/// Multiplicative order of a root of unity (scans; the groups are tiny).
pub fn root_of_unity_order(f: &Fq, z: &FqElem) -> u64 {
    assert!(!f.is_zero(z));
    let mut acc = z.clone();
    let mut m = 1;
    while !f.is_one(&acc) {
        acc = f.mul(&acc, z);
        m += 1;
    }
    m
}

// ======================================================================
// Rational endomorphisms
// ======================================================================

/// An endomorphism of the shape (x, y) -> (u(x)/v(x), y s(x)/t(x)).
/// Everything we need beyond scalars is of this form: the extra
/// automorphism of the j = 1728 family and its composites with Frobenius.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct XYMap {
    pub x_num: FPoly,
    pub x_den: FPoly,
    pub y_num: FPoly,
    pub y_den: FPoly,
}

impl XYMap {
    pub fn eval(&self, c: &Curve, p: &Point) -> Point {
        match p {
            Point::Inf => Point::Inf,
            Point::Aff(x, y) => {
                let f = &c.f;
                let xd = poly_eval(f, &self.x_den, x);
                let yd = poly_eval(f, &self.y_den, x);
                if f.is_zero(&xd) || f.is_zero(&yd) {
                    // Kernel points of an isogeny in lowest terms.
                    return Point::Inf;
                }
                let xn = poly_eval(f, &self.x_num, x);
                let yn = poly_eval(f, &self.y_num, x);
                Point::Aff(
                    f.mul(&xn, &f.inv(&xd).unwrap()),
                    f.mul(y, &f.mul(&yn, &f.inv(&yd).unwrap())),
                )
            }
        }
    }
}

/// A curve together with evaluators for the quaternion order: the rational
/// automorphism `i`, Frobenius `F`, and integral combinations of 1, i, F,
/// iF acting on points. Products mean composition, (ab)(P) = a(b(P)), and
/// `validate` confirms that convention against the multiplication table on
/// every rational point.
#[derive(Clone, Debug)]
pub struct EndoFrame {
    pub curve: Curve,
    pub imap: XYMap,
    pub order: QuatOrder,
}

impl EndoFrame {
    pub fn new(curve: Curve, imap: XYMap, order: QuatOrder) -> Result<Self, CurveError> {
        let fr = EndoFrame { curve, imap, order };
        fr.validate()?;
        Ok(fr)
    }

    pub fn frobenius_point(&self, p: &Point) -> Point {
        match p {
            Point::Inf => Point::Inf,
            Point::Aff(x, y) => {
                Point::Aff(self.curve.f.frobenius(x), self.curve.f.frobenius(y))
            }
        }
    }

    /// Action of the basis element with the given index (1, i, F, iF).
    pub fn eval_basis(&self, idx: usize, p: &Point) -> Point {
        match idx {
            0 => p.clone(),
            1 => self.imap.eval(&self.curve, p),
            2 => self.frobenius_point(p),
            3 => self.imap.eval(&self.curve, &self.frobenius_point(p)),
            _ => panic!("basis index out of range"),
        }
    }

    /// Action of an integral quaternion element on a point.
    pub fn eval_quat(&self, w: &QuatElem, p: &Point) -> Result<Point, CurveError> {
        let mut acc = Point::Inf;
        for (idx, c) in w.iter().enumerate() {
            if !c.is_integer() {
                return Err(CurveError::NotIntegral(self.order.elem_str(w)));
            }
            let n = *c.numer();
            let term = self.curve.mul(n, &self.eval_basis(idx, p));
            acc = self.curve.add(&acc, &term);
        }
        Ok(acc)
    }

    /// Evaluate a column of integral quaternion elements: the homomorphism
    /// E -> E^g, P -> (w_1(P), ..., w_g(P)).
    pub fn eval_column(&self, col: &[QuatElem], p: &Point) -> Result<Vec<Point>, CurveError> {
        col.iter().map(|w| self.eval_quat(w, p)).collect()
    }

    fn validate(&self) -> Result<(), CurveError> {
        if !(self.curve.f.in_subfield(&self.curve.a2, 1)
            && self.curve.f.in_subfield(&self.curve.a4, 1)
            && self.curve.f.in_subfield(&self.curve.a6, 1))
        {
            return Err(CurveError::Endo(
                "Frobenius is only an endomorphism for prime-field coefficients".into(),
            ));
        }
        let pts = self.curve.all_points();
        for p in &pts {
            let ip = self.imap.eval(&self.curve, p);
            if !self.curve.on_curve(&ip) {
                return Err(CurveError::Endo("automorphism leaves the curve".into()));
            }
            // Additivity of the map on a generating set of samples would be
            // implied by it being a morphism fixing O; cheap to check whole.
            if *p == Point::Inf && ip != Point::Inf {
                return Err(CurveError::Endo("automorphism moves the origin".into()));
            }
        }
        // Composition against the multiplication table on every point:
        // (e_a e_b)(P) must equal e_a(e_b(P)).
        for a in 0..4 {
            for b in 0..4 {
                let prod = &self.order.table[a][b];
                for p in &pts {
                    let lhs = self.eval_quat(prod, p)?;
                    let rhs = self.eval_basis(a, &self.eval_basis(b, p));
                    if lhs != rhs {
                        return Err(CurveError::Endo(format!(
                            "table product {}*{} disagrees with composition",
                            self.order.names[a], self.order.names[b]
                        )));
                    }
                }
            }
        }
        // Additivity of i on all pairs (it is a homomorphism, not just a
        // curve map). Quadratic in #E but the groups are tiny.
        for p in &pts {
            for q in &pts {
                let lhs = self.imap.eval(&self.curve, &self.curve.add(p, q));
                let rhs = self.curve.add(
                    &self.imap.eval(&self.curve, p),
                    &self.imap.eval(&self.curve, q),
                );
                if lhs != rhs {
                    return Err(CurveError::Endo("automorphism is not additive".into()));
                }
            }
        }
        Ok(())
    }
}

// ======================================================================
// The function field
// ======================================================================

/// An element (a(x) + b(x) y) / den(x) of the function field, reduced so
/// that gcd(a, b, den) = 1 and den is monic. The y-degree stays below 2 by
/// the curve equation; the x-only denominator is enough because 1/(a + by)
/// rationalizes through the conjugate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EFunc {
    pub a: FPoly,
    pub b: FPoly,
    pub den: FPoly,
}

impl EFunc {
    pub fn zero(f: &Fq) -> Self {
        EFunc { a: poly_zero(), b: poly_zero(), den: vec![f.one()] }
    }

    pub fn one(f: &Fq) -> Self {
        EFunc { a: vec![f.one()], b: poly_zero(), den: vec![f.one()] }
    }

    pub fn constant(f: &Fq, c: &FqElem) -> Self {
        EFunc { a: poly_const(f, c.clone()), b: poly_zero(), den: vec![f.one()] }
    }

    pub fn x_poly(f: &Fq, a: FPoly) -> Self {
        EFunc { a: poly_trim(f, a), b: poly_zero(), den: vec![f.one()] }
    }

    pub fn x(f: &Fq) -> Self {
        EFunc { a: poly_x(f), b: poly_zero(), den: vec![f.one()] }
    }

    pub fn y(f: &Fq) -> Self {
        EFunc { a: poly_zero(), b: vec![f.one()], den: vec![f.one()] }
    }

    pub fn is_zero(&self) -> bool {
        self.a.is_empty() && self.b.is_empty()
    }

    fn normalized(mut self, c: &Curve) -> Self {
        let f = &c.f;
        if self.is_zero() {
            return EFunc::zero(f);
        }
        let g1 = poly_gcd_monic(f, &self.a, &self.b);
        let g = poly_gcd_monic(f, &g1, &self.den);
        if poly_deg(&g) > 0 {
            self.a = poly_divrem(f, &self.a, &g).0;
            self.b = poly_divrem(f, &self.b, &g).0;
            self.den = poly_divrem(f, &self.den, &g).0;
        }
        let lc = self.den.last().expect("nonzero denominator").clone();
        let lc_inv = f.inv(&lc).unwrap();
        self.a = poly_scale(f, &self.a, &lc_inv);
        self.b = poly_scale(f, &self.b, &lc_inv);
        self.den = poly_scale(f, &self.den, &lc_inv);
        self
    }

    pub fn add(&self, c: &Curve, o: &EFunc) -> EFunc {
        let f = &c.f;
        EFunc {
            a: poly_add(
                f,
                &poly_mul(f, &self.a, &o.den),
                &poly_mul(f, &o.a, &self.den),
            ),
            b: poly_add(
                f,
                &poly_mul(f, &self.b, &o.den),
                &poly_mul(f, &o.b, &self.den),
            ),
            den: poly_mul(f, &self.den, &o.den),
        }
        .normalized(c)
    }

    pub fn neg(&self, c: &Curve) -> EFunc {
        EFunc {
            a: poly_neg(&c.f, &self.a),
            b: poly_neg(&c.f, &self.b),
            den: self.den.clone(),
        }
    }

    pub fn sub(&self, c: &Curve, o: &EFunc) -> EFunc {
        self.add(c, &o.neg(c))
    }

    pub fn mul(&self, c: &Curve, o: &EFunc) -> EFunc {
        let f = &c.f;
        let rhs = c.rhs_poly();
        // (a1 + b1 y)(a2 + b2 y) with y^2 = rhs(x).
        let a = poly_add(
            f,
            &poly_mul(f, &self.a, &o.a),
            &poly_mul(f, &poly_mul(f, &self.b, &o.b), &rhs),
        );
        let b = poly_add(
            f,
            &poly_mul(f, &self.a, &o.b),
            &poly_mul(f, &self.b, &o.a),
        );
        EFunc { a, b, den: poly_mul(f, &self.den, &o.den) }.normalized(c)
    }

    pub fn scale(&self, c: &Curve, k: &FqElem) -> EFunc {
        EFunc {
            a: poly_scale(&c.f, &self.a, k),
            b: poly_scale(&c.f, &self.b, k),
            den: self.den.clone(),
        }
        .normalized(c)
    }

    /// The conjugate a - b y (the hyperelliptic involution pullback).
    pub fn conj(&self, c: &Curve) -> EFunc {
        EFunc { a: self.a.clone(), b: poly_neg(&c.f, &self.b), den: self.den.clone() }
    }

    /// Norm to k(x): (a^2 - b^2 rhs) / den^2 as a ratio of x-polynomials
    /// (returned as numerator, denominator).
    pub fn norm_x(&self, c: &Curve) -> (FPoly, FPoly) {
        let f = &c.f;
        let n = poly_sub(
            f,
            &poly_mul(f, &self.a, &self.a),
            &poly_mul(f, &poly_mul(f, &self.b, &self.b), &c.rhs_poly()),
        );
        (n, poly_mul(f, &self.den, &self.den))
    }

    pub fn inv(&self, c: &Curve) -> Option<EFunc> {
        if self.is_zero() {
            return None;
        }
        let f = &c.f;
        // 1 / ((a + by)/den) = den (a - by) / (a^2 - b^2 rhs).
        let n = poly_sub(
            f,
            &poly_mul(f, &self.a, &self.a),
            &poly_mul(f, &poly_mul(f, &self.b, &self.b), &c.rhs_poly()),
        );
        debug_assert!(!n.is_empty(), "norm of a nonzero function vanished");
        Some(
            EFunc {
                a: poly_mul(f, &self.den, &self.a),
                b: poly_neg(f, &poly_mul(f, &self.den, &self.b)),
                den: n,
            }
            .normalized(c),
        )
    }

    pub fn div(&self, c: &Curve, o: &EFunc) -> Option<EFunc> {
        Some(self.mul(c, &o.inv(c)?))
    }

    /// Plain evaluation; None at the origin, at poles, and at affine points
    /// where the reduced denominator vanishes (use [`EFunc::eval_resolved`]
    /// when a removable 0/0 must be pushed through).
    pub fn eval(&self, c: &Curve, p: &Point) -> Option<FqElem> {
        match p {
            Point::Inf => None,
            Point::Aff(x, y) => {
                let f = &c.f;
                let d = poly_eval(f, &self.den, x);
                if f.is_zero(&d) {
                    return None;
                }
                let n = f.add(&poly_eval(f, &self.a, x), &f.mul(&poly_eval(f, &self.b, x), y));
                Some(f.mul(&n, &f.inv(&d).unwrap()))
            }
        }
    }

    /// Order of vanishing at a point (negative at poles). The function must
    /// be nonzero.
    pub fn ord_at(&self, c: &Curve, p: &Point) -> i64 {
        assert!(!self.is_zero(), "order of the zero function");
        ord_num_pair(c, &self.a, &self.b, p) - ord_num_pair(c, &self.den, &poly_zero(), p)
    }

    /// Evaluation that resolves removable singularities by local expansion
    /// in a uniformizer. Returns None exactly at genuine poles and at the
    /// origin (the origin has its own chart in the formal layer).
    pub fn eval_resolved(&self, c: &Curve, p: &Point) -> Option<FqElem> {
        let f = &c.f;
        match p {
            Point::Inf => None,
            Point::Aff(x0, y0) => {
                let d = poly_eval(f, &self.den, x0);
                if !f.is_zero(&d) {
                    return self.eval(c, p);
                }
                let ord = self.ord_at(c, p);
                if ord < 0 {
                    return None;
                }
                if ord > 0 {
                    return Some(f.zero());
                }
                // ord = 0 with a vanishing reduced denominator: expand both
                // parts in the local parameter and divide leading terms.
                let prec = 2 * (self.den.len() + self.a.len() + self.b.len() + 3) as u32;
                let ser = NilRing::new(f.clone(), vec![prec]);
                let u = ser.var(0);
                let (xs, ys) = local_expansion(c, x0, y0, &ser, &u);
                let num = ser.add(
                    &eval_poly_series(f, &ser, &self.a, &xs),
                    &ser.mul(&eval_poly_series(f, &ser, &self.b, &xs), &ys),
                );
                let den = eval_poly_series(f, &ser, &self.den, &xs);
                let vd = series_valuation(&ser, &den)?;
                let vn = series_valuation(&ser, &num).unwrap_or(prec);
                debug_assert_eq!(vn as i64 - vd as i64, 0, "local expansion disagrees with ord");
                let top = f.mul(
                    &ser.coeff(&num, &[vd]),
                    &f.inv(&ser.coeff(&den, &[vd]))?,
                );
                Some(top)
            }
        }
    }

    /// f(X, Y) for substitutions X, Y in the function field.
    pub fn compose(&self, c: &Curve, xm: &EFunc, ym: &EFunc) -> EFunc {
        let pa = eval_poly_efunc(c, &self.a, xm);
        let pb = eval_poly_efunc(c, &self.b, xm);
        let pd = eval_poly_efunc(c, &self.den, xm);
        let num = pa.add(c, &pb.mul(c, ym));
        num.mul(c, &pd.inv(c).expect("denominator composes to zero"))
    }

    /// Pullback along translation by P: (t_P^* f)(Q) = f(Q + P).
    pub fn translate(&self, c: &Curve, p: &Point) -> EFunc {
        match p {
            Point::Inf => self.clone(),
            Point::Aff(x0, y0) => {
                let f = &c.f;
                // lambda = (y - y0)/(x - x0) for the moving point (x, y).
                let lambda = EFunc {
                    a: poly_const(f, f.neg(y0)),
                    b: vec![f.one()],
                    den: vec![f.neg(x0), f.one()],
                };
                let xs = lambda
                    .mul(c, &lambda)
                    .sub(c, &EFunc::constant(f, &c.a2))
                    .sub(c, &EFunc::x(f))
                    .sub(c, &EFunc::constant(f, x0));
                let ys = lambda.mul(c, &EFunc::x(f).sub(c, &xs)).sub(c, &EFunc::y(f));
                self.compose(c, &xs, &ys)
            }
        }
    }

    /// Pullback along an (x, y) -> (u(x), y s(x)) endomorphism.
    pub fn endo_pullback(&self, c: &Curve, m: &XYMap) -> EFunc {
        let f = &c.f;
        let xs = EFunc::x_poly(f, m.x_num.clone())
            .div(c, &EFunc::x_poly(f, m.x_den.clone()))
            .expect("x-map denominator is nonzero");
        let ymul = EFunc::x_poly(f, m.y_num.clone())
            .div(c, &EFunc::x_poly(f, m.y_den.clone()))
            .expect("y-map denominator is nonzero");
        let ys = EFunc::y(f).mul(c, &ymul);
        self.compose(c, &xs, &ys)
    }

    /// Pullback along the p^e-power Frobenius isogeny: x -> x^{p^e},
    /// y -> y^{p^e} = y rhs(x)^{(p^e - 1)/2}.
    pub fn frob_pullback(&self, c: &Curve, e: u32) -> EFunc {
        let f = &c.f;
        let pe = f.p.pow(e);
        let mut xp = vec![f.zero(); pe as usize + 1];
        xp[pe as usize] = f.one();
        let xs = EFunc::x_poly(f, poly_trim(f, xp));
        let rh = c.rhs_poly();
        let mut acc = vec![f.one()];
        for _ in 0..(pe - 1) / 2 {
            acc = poly_mul(f, &acc, &rh);
        }
        let ys = EFunc { a: poly_zero(), b: acc, den: vec![f.one()] };
        self.compose(c, &xs, &ys)
    }
}

/// Horner evaluation of an x-polynomial at a function-field element.
fn eval_poly_efunc(c: &Curve, poly: &FPoly, x: &EFunc) -> EFunc {
    let mut acc = EFunc::zero(&c.f);
    for coef in poly.iter().rev() {
        acc = acc.mul(c, x).add(c, &EFunc::constant(&c.f, coef));
    }
    acc
}

/// Order of vanishing of a + b y at a point. Handles the three charts:
/// generic affine (uniformizer x - x0), 2-torsion (uniformizer y, where
/// x - x0 has order 2), and the origin (orders -2 and -3 for x and y; the
/// two parities never cancel).
fn ord_num_pair(c: &Curve, a: &FPoly, b: &FPoly, p: &Point) -> i64 {
    let f = &c.f;
    assert!(!(a.is_empty() && b.is_empty()), "order of the zero function");
    match p {
        Point::Inf => {
            let mut v = i64::MIN;
            if !a.is_empty() {
                v = v.max(2 * poly_deg(a));
            }
            if !b.is_empty() {
                v = v.max(2 * poly_deg(b) + 3);
            }
            -v
        }
        Point::Aff(x0, y0) => {
            let e: i64 = if f.is_zero(y0) { 2 } else { 1 };
            // Strip the common power of (x - x0).
            let ka = if a.is_empty() { u32::MAX } else { poly_root_multiplicity(f, a, x0) };
            let kb = if b.is_empty() { u32::MAX } else { poly_root_multiplicity(f, b, x0) };
            let m = ka.min(kb);
            let lin = vec![f.neg(x0), f.one()];
            let mut aa = a.clone();
            let mut bb = b.clone();
            for _ in 0..m {
                if !aa.is_empty() {
                    aa = poly_divrem(f, &aa, &lin).0;
                }
                if !bb.is_empty() {
                    bb = poly_divrem(f, &bb, &lin).0;
                }
            }
            let mut v = e * m as i64;
            let val = f.add(&poly_eval(f, &aa, x0), &f.mul(&poly_eval(f, &bb, x0), y0));
            if !f.is_zero(&val) {
                return v;
            }
            if f.is_zero(y0) {
                // a part vanishes to order >= 2, b y part to order exactly 1.
                v += 1;
                return v;
            }
            // Generic chart: the conjugate does not vanish here, so the
            // order is read off the norm as an x-polynomial.
            let norm = poly_sub(
                f,
                &poly_mul(f, &aa, &aa),
                &poly_mul(f, &poly_mul(f, &bb, &bb), &c.rhs_poly()),
            );
            v += poly_root_multiplicity(f, &norm, x0) as i64;
            v
        }
    }
}

/// Truncated expansion (x(u), y(u)) around an affine point in the local
/// parameter: u = x - x0 off 2-torsion, u = y at 2-torsion.
fn local_expansion(
    c: &Curve,
    x0: &FqElem,
    y0: &FqElem,
    ser: &NilRing<Fq>,
    u: &NilElem<Fq>,
) -> (NilElem<Fq>, NilElem<Fq>) {
    let f = &c.f;
    let rhs = c.rhs_poly();
    if !f.is_zero(y0) {
        // x = x0 + u, y = y0 sqrt(rhs(x0 + u)/y0^2).
        let xs = ser.add(&ser.scalar(x0.clone()), u);
        let rv = eval_poly_series(f, ser, &rhs, &xs);
        let y0sq_inv = f.inv(&f.mul(y0, y0)).unwrap();
        let unit = ser.map_coeffs(&rv, |c| f.mul(c, &y0sq_inv));
        let root = ser.unit_sqrt(&unit).expect("unit square root exists");
        let ys = ser.map_coeffs(&root, |c| f.mul(c, y0));
        (xs, ys)
    } else {
        // 2-torsion: solve rhs(x) = u^2 by Hensel from the simple root x0.
        let u2 = ser.mul(u, u);
        let dr = poly_deriv(f, &rhs);
        let mut xs = ser.scalar(x0.clone());
        for _ in 0..ser.nilpotency_order() {
            let fv = ser.sub(&eval_poly_series(f, ser, &rhs, &xs), &u2);
            let dv = eval_poly_series(f, ser, &dr, &xs);
            let dinv = series_inv(ser, &dv).expect("derivative is a unit at a simple root");
            xs = ser.sub(&xs, &ser.mul(&fv, &dinv));
        }
        (xs, u.clone())
    }
}

fn eval_poly_series(f: &Fq, ser: &NilRing<Fq>, poly: &FPoly, x: &NilElem<Fq>) -> NilElem<Fq> {
    let mut acc = ser.scalar(f.zero());
    for c in poly.iter().rev() {
        acc = ser.add(&ser.mul(&acc, x), &ser.scalar(c.clone()));
    }
    acc
}

/// Smallest u-exponent with a nonzero coefficient (1-variable series).
fn series_valuation(ser: &NilRing<Fq>, a: &NilElem<Fq>) -> Option<u32> {
    let _ = ser;
    a.iter().find(|(_, c)| !c.iter().all(|&w| w == 0)).map(|(e, _)| e[0])
}

/// Inverse of a series with unit constant term.
fn series_inv(ser: &NilRing<Fq>, a: &NilElem<Fq>) -> Option<NilElem<Fq>> {
    let f = ser.base.clone();
    let c0 = ser.constant_term(a);
    let c0_inv = f.inv(&c0)?;
    // Newton: b <- b(2 - a b), doubling correct coefficients each pass.
    let mut b = ser.scalar(c0_inv);
    let two = ser.scalar(f.from_int(2));
    let mut prec = 1u32;
    while prec < ser.nilpotency_order() {
        let t = ser.sub(&two, &ser.mul(a, &b));
        b = ser.mul(&b, &t);
        prec *= 2;
    }
    Some(b)
}

// ======================================================================
// The function field as a Ring (for series with function coefficients)
// ======================================================================

/// Wrapper making k(E) usable as a coefficient ring: the formal layer
/// expands translations as Laurent series whose coefficients are functions
/// of the translation point.
#[derive(Clone, Debug)]
pub struct FnField(pub Curve);

impl Ring for FnField {
    type Elem = EFunc;

    fn zero(&self) -> EFunc {
        EFunc::zero(&self.0.f)
    }
    fn one(&self) -> EFunc {
        EFunc::one(&self.0.f)
    }
    fn add(&self, a: &EFunc, b: &EFunc) -> EFunc {
        a.add(&self.0, b)
    }
    fn neg(&self, a: &EFunc) -> EFunc {
        a.neg(&self.0)
    }
    fn mul(&self, a: &EFunc, b: &EFunc) -> EFunc {
        a.mul(&self.0, b)
    }
    fn inv(&self, a: &EFunc) -> Option<EFunc> {
        a.inv(&self.0)
    }
    fn characteristic(&self) -> u64 {
        self.0.f.p
    }
    fn is_zero(&self, a: &EFunc) -> bool {
        a.is_zero()
    }
}

// ======================================================================
// Generic affine chord-tangent (nilpotent coefficient rings)
// ======================================================================

/// Addition of affine points with coordinates in an arbitrary ring, used
/// when translating by "honest point + nilpotent displacement". The slope
/// is computed with whichever denominator is a unit:
/// (y2-y1)/(x2-x1) or the conjugate form with denominator y1+y2. Returns
/// None when neither chart applies (caller must move to the origin chart).
pub fn generic_affine_add<R: Ring>(
    r: &R,
    a2: &R::Elem,
    a4: &R::Elem,
    p: (&R::Elem, &R::Elem),
    q: (&R::Elem, &R::Elem),
) -> Option<(R::Elem, R::Elem)> {
    let (x1, y1) = p;
    let (x2, y2) = q;
    let dx = r.sub(x2, x1);
    let lambda = if let Some(dxi) = r.inv(&dx) {
        r.mul(&r.sub(y2, y1), &dxi)
    } else {
        // (y2-y1)(y2+y1) = (x2-x1)(x1^2+x1x2+x2^2 + a2(x1+x2) + a4)
        let ysum = r.add(y1, y2);
        let ysi = r.inv(&ysum)?;
        let num = r.add(
            &r.add(
                &r.add(&r.mul(x1, x1), &r.mul(x1, x2)),
                &r.mul(x2, x2),
            ),
            &r.add(&r.mul(a2, &r.add(x1, x2)), a4),
        );
        r.mul(&num, &ysi)
    };
    let x3 = r.sub(&r.sub(&r.sub(&r.mul(&lambda, &lambda), a2), x1), x2);
    let y3 = r.sub(&r.mul(&lambda, &r.sub(x1, &x3)), y1);
    Some((x3, y3))
}

// ======================================================================
// The formal group at the origin
// ======================================================================

pub mod formal {
    use super::*;

    /// Truncated Laurent series over a ring: known coefficients on the
    /// window [lead, lead + c.len()). Operations track the window honestly,
    /// so precision loss from cancelling principal parts is visible rather
    /// than silent.
    #[derive(Clone, Debug)]
    pub struct Laur<R: Ring> {
        pub lead: i32,
        pub c: Vec<R::Elem>,
    }

    // Structural comparisons (derives would wrongly bound R itself).
    impl<R: Ring> PartialEq for Laur<R> {
        fn eq(&self, other: &Self) -> bool {
            self.lead == other.lead && self.c == other.c
        }
    }
    impl<R: Ring> Eq for Laur<R> {}
    impl<R: Ring> PartialOrd for Laur<R> {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl<R: Ring> Ord for Laur<R> {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.lead.cmp(&other.lead).then_with(|| self.c.cmp(&other.c))
        }
    }

    impl<R: Ring> Laur<R> {
        pub fn from_coeffs(lead: i32, c: Vec<R::Elem>) -> Self {
            Laur { lead, c }
        }

        pub fn end(&self) -> i32 {
            self.lead + self.c.len() as i32
        }

        pub fn coeff(&self, r: &R, n: i32) -> R::Elem {
            assert!(n < self.end(), "coefficient outside the known window");
            if n < self.lead {
                r.zero()
            } else {
                self.c[(n - self.lead) as usize].clone()
            }
        }

        /// Drop known-zero leading coefficients (the window end is kept).
        pub fn trim(mut self, r: &R) -> Self {
            while !self.c.is_empty() && r.is_zero(&self.c[0]) {
                self.c.remove(0);
                self.lead += 1;
            }
            self
        }

        pub fn is_known_zero(&self, r: &R) -> bool {
            self.c.iter().all(|x| r.is_zero(x))
        }

        pub fn add(&self, r: &R, o: &Laur<R>) -> Laur<R> {
            let lead = self.lead.min(o.lead);
            let end = self.end().min(o.end());
            let mut c = vec![r.zero(); (end - lead).max(0) as usize];
            for (n, slot) in c.iter_mut().enumerate() {
                let idx = lead + n as i32;
                let mut v = r.zero();
                if idx >= self.lead && idx < self.end() {
                    v = r.add(&v, &self.c[(idx - self.lead) as usize]);
                }
                if idx >= o.lead && idx < o.end() {
                    v = r.add(&v, &o.c[(idx - o.lead) as usize]);
                }
                *slot = v;
            }
            Laur { lead, c }
        }

        pub fn neg(&self, r: &R) -> Laur<R> {
            Laur { lead: self.lead, c: self.c.iter().map(|x| r.neg(x)).collect() }
        }

        pub fn sub(&self, r: &R, o: &Laur<R>) -> Laur<R> {
            self.add(r, &o.neg(r))
        }

        pub fn scale(&self, r: &R, k: &R::Elem) -> Laur<R> {
            Laur { lead: self.lead, c: self.c.iter().map(|x| r.mul(x, k)).collect() }
        }

        pub fn shift(&self, by: i32) -> Laur<R> {
            Laur { lead: self.lead + by, c: self.c.clone() }
        }

        pub fn mul(&self, r: &R, o: &Laur<R>) -> Laur<R> {
            // Trim first: coefficients below the lead are implicitly zero,
            // so this only widens the result window.
            let a = self.clone().trim(r);
            let b = o.clone().trim(r);
            let lead = a.lead + b.lead;
            let end = (a.end() + b.lead).min(b.end() + a.lead);
            let len = (end - lead).max(0) as usize;
            let mut c = vec![r.zero(); len];
            for (i, x) in a.c.iter().enumerate() {
                for (j, y) in b.c.iter().enumerate() {
                    if i + j < len {
                        c[i + j] = r.add(&c[i + j], &r.mul(x, y));
                    }
                }
            }
            Laur { lead, c }
        }

        /// Inverse. If the lowest known coefficient is a unit the valuation
        /// is pinned exactly and the classical recursion applies. Otherwise
        /// the series splits as S = P + U at the first unit coefficient;
        /// when the prefix P has nilpotent coefficients,
        ///   S^{-1} = U^{-1} (1 - P U^{-1} + (P U^{-1})^2 - ...)
        /// terminates. P is exactly known (zero above its window inside S),
        /// so multiplying by it keeps the full window of the other factor.
        pub fn inv(&self, r: &R) -> Option<Laur<R>> {
            let t = self.clone().trim(r);
            t.c.first()?;
            let j = t.c.iter().position(|x| r.inv(x).is_some())?;
            let u = Laur { lead: t.lead + j as i32, c: t.c[j..].to_vec() };
            let uinv = u.unit_lead_inv(r)?;
            if j == 0 {
                return Some(uinv);
            }
            let pre: Vec<(i32, R::Elem)> = t.c[..j]
                .iter()
                .enumerate()
                .filter(|(_, x)| !r.is_zero(x))
                .map(|(m, x)| (t.lead + m as i32, x.clone()))
                .collect();
            if pre.is_empty() {
                return Some(uinv);
            }
            let mul_pre = |x: &Laur<R>| -> Laur<R> {
                let e0 = pre[0].0;
                let mut acc =
                    Laur { lead: x.lead + e0, c: vec![r.zero(); x.c.len()] };
                for (e, cf) in &pre {
                    acc = acc.add(r, &x.scale(r, cf).shift(*e));
                }
                acc
            };
            let mut sum = uinv.clone();
            let mut term = uinv.clone();
            for _ in 0..64 {
                term = mul_pre(&term).mul(r, &uinv).neg(r);
                if term.is_known_zero(r) {
                    // Guard against spurious vanishing from window loss.
                    let check = self.mul(r, &sum);
                    let one = Laur { lead: 0, c: vec![r.one()] };
                    if check.sub(r, &one).is_known_zero(r) && check.end() > 0 {
                        return Some(sum);
                    }
                    return None;
                }
                sum = sum.add(r, &term);
            }
            None
        }

        fn unit_lead_inv(&self, r: &R) -> Option<Laur<R>> {
            let t = self.clone().trim(r);
            let c0 = t.c.first()?;
            let c0i = r.inv(c0)?;
            let len = t.c.len();
            let mut d = vec![r.zero(); len];
            d[0] = c0i.clone();
            for m in 1..len {
                let mut s = r.zero();
                for i in 1..=m {
                    s = r.add(&s, &r.mul(&t.c[i], &d[m - i]));
                }
                d[m] = r.neg(&r.mul(&c0i, &s));
            }
            Some(Laur { lead: -t.lead, c: d })
        }

        pub fn map<S: Ring>(&self, f: impl Fn(&R::Elem) -> S::Elem) -> Laur<S> {
            Laur { lead: self.lead, c: self.c.iter().map(f).collect() }
        }
    }

    /// Horner evaluation of an x-polynomial (coefficients already lifted
    /// into R) on a Laurent series.
    pub fn eval_poly_on_laur<R: Ring>(r: &R, poly: &[R::Elem], x: &Laur<R>) -> Laur<R> {
        let window = x.c.len();
        let mut acc = Laur::from_coeffs(x.lead.min(0), vec![r.zero(); window]);
        for c in poly.iter().rev() {
            acc = acc.mul(r, x);
            let cl = Laur::from_coeffs(acc.lead, {
                let mut v = vec![r.zero(); acc.c.len()];
                if acc.lead <= 0 && (acc.end()) > 0 {
                    v[(-acc.lead) as usize] = c.clone();
                } else if acc.lead > 0 {
                    // constant sits below the window; widen down to 0
                    let extra = acc.lead as usize;
                    let mut w = vec![r.zero(); extra + acc.c.len()];
                    w[0] = c.clone();
                    acc = Laur { lead: 0, c: w };
                    continue;
                }
                v
            });
            acc = acc.add(r, &cl);
        }
        acc
    }

    /// w(z) with x = z/w, y = -1/w: the unique series solution of
    /// w = z^3 + a2 z^2 w + a4 z w^2 + a6 w^3, as coefficients of z^3..
    pub fn w_series(cu: &Curve, window: usize) -> Laur<Fq> {
        let f = &cu.f;
        let mk = |lead: i32, c: Vec<FqElem>| Laur::<Fq>::from_coeffs(lead, c);
        let z3 = mk(3, {
            let mut v = vec![f.zero(); window];
            v[0] = f.one();
            v
        });
        let mut w = z3.clone();
        for _ in 0..window {
            // w <- z^3 + a2 z^2 w + a4 z w^2 + a6 w^3
            let w2 = w.mul(f, &w);
            let w3 = w2.mul(f, &w);
            let t1 = w.scale(f, &cu.a2).shift(2);
            let t2 = w2.scale(f, &cu.a4).shift(1);
            let t3 = w3.scale(f, &cu.a6);
            let mut nw = z3.add(f, &t1).add(f, &t2).add(f, &t3);
            // The recursion only produces correct coefficients up to the
            // shortest window; keep the full target window by padding (the
            // padded tail becomes correct on later passes).
            while nw.c.len() < window {
                nw.c.push(f.zero());
            }
            nw.c.truncate(window);
            w = nw;
        }
        w
    }

    /// The Laurent expansions x(z) = z^{-2}(1 + ...), y(z) = -z^{-3}(1 + ...).
    pub fn xy_series(cu: &Curve, window: usize) -> (Laur<Fq>, Laur<Fq>) {
        let f = &cu.f;
        let w = w_series(cu, window);
        let wi = w.inv(f).expect("w has unit leading coefficient");
        let z = Laur::from_coeffs(1, {
            let mut v = vec![f.zero(); window];
            v[0] = f.one();
            v
        });
        let x = z.mul(f, &wi);
        let y = wi.neg(f);
        (x, y)
    }

    /// Expansion of a function-field element at the origin.
    pub fn efunc_at_origin(cu: &Curve, g: &EFunc, window: usize) -> Laur<Fq> {
        let f = &cu.f;
        let (x, y) = xy_series(cu, window);
        let pa = eval_poly_on_laur(f, &g.a, &x);
        let pb = eval_poly_on_laur(f, &g.b, &x);
        let pd = eval_poly_on_laur(f, &g.den, &x);
        let num = pa.add(f, &pb.mul(f, &y));
        num.mul(f, &pd.inv(f).expect("denominator expands to a nonzero series"))
    }

    /// Value at the origin: None at a pole, 0 above the axis.
    pub fn eval_at_origin(cu: &Curve, g: &EFunc) -> Option<FqElem> {
        if g.is_zero() {
            return Some(cu.f.zero());
        }
        let window = 2 * (g.a.len() + g.b.len() + g.den.len()) + 12;
        let s = efunc_at_origin(cu, g, window).trim(&cu.f);
        let ord = g.ord_at(cu, &Point::Inf);
        debug_assert!(s.lead as i64 == ord, "series valuation disagrees with ord");
        if ord > 0 {
            Some(cu.f.zero())
        } else if ord == 0 {
            Some(s.c[0].clone())
        } else {
            None
        }
    }

    /// The formal group law F(z1, z2) in the given two-variable nilpotent
    /// ring (coefficients correct within its truncation).
    pub fn group_law(cu: &Curve, nil: &NilRing<Fq>) -> NilElem<Fq> {
        let f = &cu.f;
        assert!(nil.exps.len() == 2);
        let window = (nil.exps[0] + nil.exps[1]) as usize + 4;
        let w = w_series(cu, window);
        let z1 = nil.var(0);
        let z2 = nil.var(1);
        // lambda = (w(z2) - w(z1))/(z2 - z1) term by term:
        // (z2^m - z1^m)/(z2 - z1) = sum_{a+b=m-1} z1^a z2^b.
        let mut lambda = nil.scalar(f.zero());
        for (i, cm) in w.c.iter().enumerate() {
            let m = w.lead as usize + i;
            if f.is_zero(cm) {
                continue;
            }
            for a in 0..m {
                let b = m - 1 - a;
                if a < nil.exps[0] as usize && b < nil.exps[1] as usize {
                    lambda = nil.add(
                        &lambda,
                        &nil.monomial(vec![a as u32, b as u32], cm.clone()),
                    );
                }
            }
        }
        // nu = w(z1) - lambda z1
        let w_z1 = {
            let mut acc = nil.scalar(f.zero());
            for (i, cm) in w.c.iter().enumerate() {
                let m = w.lead as usize + i;
                if !f.is_zero(cm) && m < nil.exps[0] as usize {
                    acc = nil.add(&acc, &nil.monomial(vec![m as u32, 0], cm.clone()));
                }
            }
            acc
        };
        let nu = nil.sub(&w_z1, &nil.mul(&lambda, &z1));
        // Cubic in z from substituting w = lambda z + nu:
        //   A = 1 + a2 l + a4 l^2 + a6 l^3,  B = nu (a2 + 2 a4 l + 3 a6 l^2)
        let l2 = nil.mul(&lambda, &lambda);
        let sc = |c: &FqElem| nil.scalar(c.clone());
        let a_coef = nil.add(
            &nil.add(&nil.one(), &nil.mul(&sc(&cu.a2), &lambda)),
            &nil.add(
                &nil.mul(&sc(&cu.a4), &l2),
                &nil.mul(&sc(&cu.a6), &nil.mul(&l2, &lambda)),
            ),
        );
        let b_coef = nil.mul(
            &nu,
            &nil.add(
                &sc(&cu.a2),
                &nil.add(
                    &nil.mul(&sc(&f.mul(&f.from_int(2), &cu.a4)), &lambda),
                    &nil.mul(&sc(&f.mul(&f.from_int(3), &cu.a6)), &l2),
                ),
            ),
        );
        let a_inv = series_inv(nil, &a_coef).expect("unit cubic coefficient");
        // z1 + z2 + z3' = -B/A and the sum is -z3'.
        nil.add(&nil.add(&z1, &z2), &nil.mul(&b_coef, &a_inv))
    }

    /// Coefficients of x(P + z) and y(P + z) as functions of P: the
    /// translation series X = sum A_j(x,y) z^j, Y = sum B_j(x,y) z^j with
    /// polynomial coefficients (poles at the origin only).
    pub fn translation_series(cu: &Curve, terms: usize) -> (Vec<EFunc>, Vec<EFunc>) {
        let r = FnField(cu.clone());
        let f = &cu.f;
        let window = terms + 6;
        let (xs, ys) = xy_series(cu, window);
        let xs_l: Laur<FnField> = xs.map(|c| EFunc::constant(f, c));
        let ys_l: Laur<FnField> = ys.map(|c| EFunc::constant(f, c));
        let lift = |g: EFunc| Laur::<FnField>::from_coeffs(0, {
            let mut v = vec![r.zero(); window];
            v[0] = g;
            v
        });
        let xp = lift(EFunc::x(f));
        let yp = lift(EFunc::y(f));
        // lambda = (y(z) - y_P)/(x(z) - x_P); leading term z^{-3}/z^{-2}.
        let dx = xs_l.sub(&r, &xp);
        let lambda = ys_l.sub(&r, &yp).mul(&r, &dx.inv(&r).expect("x(z) - x has unit lead"));
        let a2 = lift(EFunc::constant(f, &cu.a2));
        let x3 = lambda
            .mul(&r, &lambda)
            .sub(&r, &a2)
            .sub(&r, &xp)
            .sub(&r, &xs_l)
            .trim(&r);
        assert!(x3.lead >= 0, "translated x must be regular at z = 0");
        let y3 = lambda.mul(&r, &xp.sub(&r, &x3)).sub(&r, &yp).trim(&r);
        assert!(y3.lead >= 0, "translated y must be regular at z = 0");
        let grab = |s: &Laur<FnField>| -> Vec<EFunc> {
            assert!(s.end() >= terms as i32, "window too small");
            (0..terms as i32).map(|n| s.coeff(&r, n)).collect()
        };
        (grab(&x3), grab(&y3))
    }

    /// z-coordinate series of an (x, y) -> (u(x)/v(x), y s(x)/t(x))
    /// endomorphism: z drilled through the rational map.
    pub fn endo_z_series(cu: &Curve, m: &XYMap, window: usize) -> Laur<Fq> {
        let f = &cu.f;
        let (xs, ys) = xy_series(cu, window + 6);
        let ev = |p: &FPoly| eval_poly_on_laur(f, p, &xs);
        let xn = ev(&m.x_num);
        let xd = ev(&m.x_den);
        let yn = ev(&m.y_num);
        let yd = ev(&m.y_den);
        // z o m = -x(m)/y(m) = -(xn/xd) * yd / (y * yn)
        let num = xn.mul(f, &yd).neg(f);
        let den = xd.mul(f, &yn).mul(f, &ys);
        let out = num.mul(f, &den.inv(f).expect("endomorphism fixes the origin")).trim(f);
        assert!(out.lead >= 1, "endomorphism must fix the origin");
        out
    }
}

// ======================================================================
// Torsion frames
// ======================================================================

/// Symplectic level data on E^g[N]: dual bases of two maximally isotropic
/// subspaces under the H-twisted Weil pairing, with halving points one
/// level up and a pinned primitive root of unity.
#[derive(Clone, Debug)]
pub struct TorsionFrame {
    pub n: i64,
    pub zeta: FqElem,
    pub x: Vec<Vec<Point>>,
    pub y: Vec<Vec<Point>>,
    pub x_half: Vec<Vec<Point>>,
    pub y_half: Vec<Vec<Point>>,
}

impl EndoFrame {
    /// gamma(M) applied to a point tuple: matrix multiplication as
    /// composition, componentwise sums.
    pub fn apply_matrix(
        &self,
        m: &[Vec<QuatElem>],
        x: &[Point],
    ) -> Result<Vec<Point>, CurveError> {
        let mut out = Vec::with_capacity(m.len());
        for row in m {
            assert_eq!(row.len(), x.len(), "matrix shape mismatch");
            let mut acc = Point::Inf;
            for (w, p) in row.iter().zip(x.iter()) {
                acc = self.curve.add(&acc, &self.eval_quat(w, p)?);
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// The commutator pairing on E^g[N]: [x, y] = prod_r e_N(x_r, (gamma(H) y)_r).
    pub fn commutator_pairing(
        &self,
        gram: &[Vec<QuatElem>],
        x: &[Point],
        y: &[Point],
        n: i64,
    ) -> Result<FqElem, CurveError> {
        let hy = self.apply_matrix(gram, y)?;
        let mut acc = self.curve.f.one();
        for (xr, hr) in x.iter().zip(hy.iter()) {
            let e = self.curve.weil_pairing(xr, hr, n)?;
            acc = self.curve.f.mul(&acc, &e);
        }
        Ok(acc)
    }

    /// Deterministic symplectic reduction of E^g[N](k) under the H-twisted
    /// pairing, normalized so that [x_i, y_j] = zeta^{delta_ij}, plus
    /// halving points in E^g[2N](k).
    pub fn torsion_frame(
        &self,
        gram: &[Vec<QuatElem>],
        n: i64,
        zeta: &FqElem,
    ) -> Result<TorsionFrame, CurveError> {
        let g = gram.len();
        let f = &self.curve.f;
        if root_of_unity_order(f, zeta) != n as u64 {
            return Err(CurveError::Torsion("zeta is not a primitive root".into()));
        }
        // Rationality of E[2N]; report the minimal extension degree if not.
        for m in [n, 2 * n] {
            let tors = self.curve.torsion_points(m);
            if (tors.len() as i64) < m * m {
                let mut d = 2;
                loop {
                    let ext = Fq::new(f.p, f.k * d);
                    let up = self.curve.embed_to(&ext);
                    if up.torsion_points(m).len() as i64 == m * m {
                        return Err(CurveError::Torsion(format!(
                            "E[{}] needs a degree-{} extension",
                            m,
                            d * f.k
                        )));
                    }
                    d += 1;
                }
            }
        }
        // Enumerate E^g[N](k) as tuples over a basis of E[N](k).
        let (p1, q1) = self.curve.torsion_basis(n)?;
        let mut tuples: Vec<Vec<Point>> = vec![Vec::new()];
        for _ in 0..g {
            let mut next = Vec::new();
            for t in &tuples {
                for a in 0..n {
                    for b in 0..n {
                        let pt = self
                            .curve
                            .add(&self.curve.mul(a, &p1), &self.curve.mul(b, &q1));
                        let mut t2 = t.clone();
                        t2.push(pt);
                        next.push(t2);
                    }
                }
            }
            tuples = next;
        }
        let is_zero_tuple = |t: &[Point]| t.iter().all(|p| *p == Point::Inf);
        let order_n = |t: &[Point]| {
            t.iter().any(|p| {
                let o = self.curve.point_order(p);
                o == n as u64
            })
        };
        let mut basis_x: Vec<Vec<Point>> = Vec::new();
        let mut basis_y: Vec<Vec<Point>> = Vec::new();
        let mut pool = tuples;
        for _ in 0..g {
            // Find a hyperbolic pair inside the current pool.
            let mut found = None;
            'outer: for xc in pool.iter().filter(|t| !is_zero_tuple(t) && order_n(t)) {
                for yc in pool.iter().filter(|t| !is_zero_tuple(t)) {
                    let z = self.commutator_pairing(gram, xc, yc, n)?;
                    if root_of_unity_order(f, &z) == n as u64 {
                        // Normalize so the pairing is exactly zeta.
                        let mut e = 1i64;
                        let mut acc = z.clone();
                        while acc != *zeta {
                            acc = f.mul(&acc, &z);
                            e += 1;
                            if e > n {
                                break;
                            }
                        }
                        if e > n || gcd_i64(e, n) != 1 {
                            continue;
                        }
                        let yc2: Vec<Point> =
                            yc.iter().map(|p| self.curve.mul(e, p)).collect();
                        found = Some((xc.clone(), yc2));
                        break 'outer;
                    }
                }
            }
            let (xi, yi) = found
                .ok_or_else(|| CurveError::Torsion("no hyperbolic pair found".into()))?;
            // Keep only the orthogonal complement of the found pair.
            let mut next_pool = Vec::new();
            for t in pool {
                let a = self.commutator_pairing(gram, &t, &xi, n)?;
                let b = self.commutator_pairing(gram, &t, &yi, n)?;
                if f.is_one(&a) && f.is_one(&b) {
                    next_pool.push(t);
                }
            }
            pool = next_pool;
            basis_x.push(xi);
            basis_y.push(yi);
        }
        // Halving points, componentwise.
        let halve_tuple = |t: &[Point]| -> Result<Vec<Point>, CurveError> {
            t.iter()
                .map(|p| {
                    self.curve
                        .halve(p)
                        .ok_or_else(|| CurveError::Torsion("point does not halve".into()))
                })
                .collect()
        };
        let x_half = basis_x.iter().map(|t| halve_tuple(t)).collect::<Result<Vec<_>, _>>()?;
        let y_half = basis_y.iter().map(|t| halve_tuple(t)).collect::<Result<Vec<_>, _>>()?;
        let frame = TorsionFrame {
            n,
            zeta: zeta.clone(),
            x: basis_x,
            y: basis_y,
            x_half,
            y_half,
        };
        // The commutator matrix must be the standard symplectic form.
        for (i, xi) in frame.x.iter().enumerate() {
            for (j, yj) in frame.y.iter().enumerate() {
                let e = self.commutator_pairing(gram, xi, yj, n)?;
                let want = if i == j { zeta.clone() } else { f.one() };
                if e != want {
                    return Err(CurveError::Torsion("frame failed its own audit".into()));
                }
            }
            for xj in frame.x.iter() {
                if !f.is_one(&self.commutator_pairing(gram, xi, xj, n)?) {
                    return Err(CurveError::Torsion("V1 is not isotropic".into()));
                }
            }
        }
        for yi in frame.y.iter() {
            for yj in frame.y.iter() {
                if !f.is_one(&self.commutator_pairing(gram, yi, yj, n)?) {
                    return Err(CurveError::Torsion("V2 is not isotropic".into()));
                }
            }
        }
        Ok(frame)
    }
}

impl TorsionFrame {
    /// The induced basis of E^g[2]: (N/2) x_i then (N/2) y_i.
    pub fn two_basis(&self, c: &Curve) -> Vec<Vec<Point>> {
        let h = self.n / 2;
        self.x
            .iter()
            .chain(self.y.iter())
            .map(|t| t.iter().map(|p| c.mul(h, p)).collect())
            .collect()
    }
}

fn gcd_i64(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

// ======================================================================
// Completely decomposed divisors
// ======================================================================

/// One component: the abelian subvariety ker(gamma(row)) with multiplicity
/// p^weight, plus kernel columns spanning it (used for validation and by
/// the section layer to parameterize the component).
#[derive(Clone, Debug)]
pub struct DivisorComponent {
    pub row: Vec<QuatElem>,
    pub columns: Vec<Vec<QuatElem>>,
    pub weight: u32,
}

/// A completely decomposed divisor: sum of p^{n_i} (A_i + shift).
#[derive(Clone, Debug)]
pub struct CDDivisor {
    pub comps: Vec<DivisorComponent>,
    pub shift: Vec<Point>,
}

impl CDDivisor {
    pub fn g(&self) -> usize {
        self.comps
            .first()
            .map(|c| c.row.len())
            .unwrap_or(self.shift.len())
    }

    pub fn translated(&self, c: &Curve, by: &[Point]) -> CDDivisor {
        CDDivisor {
            comps: self.comps.clone(),
            shift: self
                .shift
                .iter()
                .zip(by.iter())
                .map(|(s, b)| c.add(s, b))
                .collect(),
        }
    }

    /// Hermitian class matrix of one component (the divisor class of the
    /// subvariety in terms of its kernel columns). Covers the two shapes
    /// the configurations use: a coordinate hyperplane-type kernel in any
    /// dimension, and an arbitrary single-column kernel for g = 2.
    fn component_class(
        ord: &QuatOrder,
        comp: &DivisorComponent,
        g: usize,
    ) -> Result<Vec<Vec<QuatElem>>, CurveError> {
        let zero = ord.zero();
        // Coordinate-type: row = unit * e_r^t, columns = {e_j : j != r}.
        let nonzero: Vec<usize> = (0..g).filter(|&j| !ord.is_zero(&comp.row[j])).collect();
        if nonzero.len() == 1 && ord.nrd(&comp.row[nonzero[0]]) == num_rational::Ratio::from_integer(1) {
            let r = nonzero[0];
            let mut t = vec![vec![zero.clone(); g]; g];
            t[r][r] = ord.one();
            return Ok(t);
        }
        if g == 2 && comp.columns.len() == 1 {
            let psi = &comp.columns[0];
            let n1 = ord.scalar(ord.nrd(&psi[0]));
            let n2 = ord.scalar(ord.nrd(&psi[1]));
            let c12 = ord.neg(&ord.mul(&psi[1], &ord.conjugate(&psi[0])));
            let c21 = ord.neg(&ord.mul(&psi[0], &ord.conjugate(&psi[1])));
            return Ok(vec![vec![n2, c12], vec![c21, n1]]);
        }
        Err(CurveError::Divisor(
            "no class formula for this component shape".into(),
        ))
    }

    /// Full validation: integral entries, columns inside the kernel, the
    /// divisor class sums to the hermitian matrix (so the divisor induces
    /// the polarization), and general position on the 2-torsion.
    pub fn validate(
        &self,
        frame: &EndoFrame,
        gram: &[Vec<QuatElem>],
    ) -> Result<(), CurveError> {
        let ord = &frame.order;
        let g = self.g();
        if self.shift.len() != g {
            return Err(CurveError::Divisor("shift has the wrong length".into()));
        }
        for comp in &self.comps {
            if comp.row.len() != g {
                return Err(CurveError::Divisor("row has the wrong length".into()));
            }
            for w in comp.row.iter().chain(comp.columns.iter().flatten()) {
                if w.iter().any(|c| !c.is_integer()) {
                    return Err(CurveError::Divisor(format!(
                        "non-integral entry {}",
                        ord.elem_str(w)
                    )));
                }
            }
            // Row annihilates every kernel column.
            for col in &comp.columns {
                if col.len() != g {
                    return Err(CurveError::Divisor("column has the wrong length".into()));
                }
                let mut acc = ord.zero();
                for (w, v) in comp.row.iter().zip(col.iter()) {
                    acc = ord.add(&acc, &ord.mul(w, v));
                }
                if !ord.is_zero(&acc) {
                    return Err(CurveError::Divisor(
                        "kernel column is not annihilated by the row".into(),
                    ));
                }
            }
        }
        // Sum of weighted component classes = the hermitian matrix.
        let mut total = vec![vec![ord.zero(); g]; g];
        for comp in &self.comps {
            let t = Self::component_class(ord, comp, g)?;
            let pw = ord.scalar(num_rational::Ratio::from_integer(
                (ord.p as i64).pow(comp.weight),
            ));
            for r in 0..g {
                for s in 0..g {
                    total[r][s] = ord.add(&total[r][s], &ord.mul(&pw, &t[r][s]));
                }
            }
        }
        if total != *gram {
            return Err(CurveError::Divisor(
                "divisor class does not induce the polarization".into(),
            ));
        }
        // General position: common kernel of all rows meets E^g[2] trivially.
        let t2 = frame.curve.torsion_points(2);
        let mut tuples: Vec<Vec<Point>> = vec![Vec::new()];
        for _ in 0..g {
            let mut next = Vec::new();
            for t in &tuples {
                for p in &t2 {
                    let mut t_new = t.clone();
                    t_new.push(p.clone());
                    next.push(t_new);
                }
            }
            tuples = next;
        }
        for t in &tuples {
            if t.iter().all(|p| *p == Point::Inf) {
                continue;
            }
            let in_all = self.comps.iter().try_fold(true, |acc, comp| {
                let v = frame.apply_matrix(&[comp.row.clone()], t)?;
                Ok::<bool, CurveError>(acc && v == vec![Point::Inf])
            })?;
            if in_all {
                return Err(CurveError::Divisor(
                    "components share a nonzero 2-torsion point".into(),
                ));
            }
        }
        Ok(())
    }

    /// Multiplicity of the divisor at an exact point: weighted count of
    /// components whose kernel contains x - shift.
    pub fn multiplicity_at(
        &self,
        frame: &EndoFrame,
        x: &[Point],
    ) -> Result<u64, CurveError> {
        let moved: Vec<Point> = x
            .iter()
            .zip(self.shift.iter())
            .map(|(p, s)| frame.curve.sub(p, s))
            .collect();
        let mut m = 0u64;
        for comp in &self.comps {
            let v = frame.apply_matrix(&[comp.row.clone()], &moved)?;
            if v == vec![Point::Inf] {
                m += (frame.curve.f.p as u64).pow(comp.weight);
            }
        }
        Ok(m)
    }

    /// The parity-valued quadratic function x -> (-1)^{m(x) - m(0)} on the
    /// rational 2-torsion.
    pub fn e_star(&self, frame: &EndoFrame, x: &[Point]) -> Result<i64, CurveError> {
        let m0 = self.multiplicity_at(frame, &vec![Point::Inf; self.g()])?;
        let mx = self.multiplicity_at(frame, x)?;
        Ok(if (m0 + mx) % 2 == 0 { 1 } else { -1 })
    }
}

impl EndoFrame {
    /// The unique 2-torsion point P such that t_P^{-1}(divisor) has its
    /// quadratic form in normal form ((-1)^{a^t b} on the frame basis).
    /// Returns P and the translated divisor.
    pub fn normalizing_point(
        &self,
        d: &CDDivisor,
        tf: &TorsionFrame,
    ) -> Result<(Vec<Point>, CDDivisor), CurveError> {
        let g = d.g();
        let two_basis = tf.two_basis(&self.curve);
        debug_assert_eq!(two_basis.len(), 2 * g);
        let t2 = self.curve.torsion_points(2);
        let mut candidates: Vec<Vec<Point>> = vec![Vec::new()];
        for _ in 0..g {
            let mut next = Vec::new();
            for t in &candidates {
                for p in &t2 {
                    let mut t_new = t.clone();
                    t_new.push(p.clone());
                    next.push(t_new);
                }
            }
            candidates = next;
        }
        let mut hits = Vec::new();
        for p in &candidates {
            // t_P^{-1}(D) = D - P.
            let minus_p: Vec<Point> = p.iter().map(|q| self.curve.neg(q)).collect();
            let moved = d.translated(&self.curve, &minus_p);
            if self.e_star_is_normal(&moved, &two_basis)? {
                hits.push((p.clone(), moved));
            }
        }
        match hits.len() {
            1 => Ok(hits.pop_unwrap()),
            0 => Err(CurveError::Divisor("no normalizing translate exists".into())),
            k => Err(CurveError::Divisor(format!(
                "normalizing translate is not unique ({} found)",
                k
            ))),
        }
    }

    fn e_star_is_normal(
        &self,
        d: &CDDivisor,
        two_basis: &[Vec<Point>],
    ) -> Result<bool, CurveError> {
        let g = d.g();
        for bits in 0..(1u32 << (2 * g)) {
            let mut x = vec![Point::Inf; g];
            let mut a = vec![0u32; g];
            let mut b = vec![0u32; g];
            for i in 0..2 * g {
                if bits >> i & 1 == 1 {
                    for (slot, basis_pt) in x.iter_mut().zip(two_basis[i].iter()) {
                        *slot = self.curve.add(slot, basis_pt);
                    }
                    if i < g {
                        a[i] = 1;
                    } else {
                        b[i - g] = 1;
                    }
                }
            }
            let want: i64 = if a.iter().zip(b.iter()).map(|(u, v)| u * v).sum::<u32>() % 2 == 0 {
                1
            } else {
                -1
            };
            if d.e_star(self, &x)? != want {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// The 2-torsion translate making two divisors rationally equivalent,
    /// found by verified search: `verify` is the function-construction
    /// oracle from the section layer.
    pub fn rational_equiv_translate(
        &self,
        g: usize,
        mut verify: impl FnMut(&[Point]) -> Result<bool, CurveError>,
    ) -> Result<Vec<Point>, CurveError> {
        let t2 = self.curve.torsion_points(2);
        let mut candidates: Vec<Vec<Point>> = vec![Vec::new()];
        for _ in 0..g {
            let mut next = Vec::new();
            for t in &candidates {
                for p in &t2 {
                    let mut t_new = t.clone();
                    t_new.push(p.clone());
                    next.push(t_new);
                }
            }
            candidates = next;
        }
        for p in candidates {
            if verify(&p)? {
                return Ok(p);
            }
        }
        Err(CurveError::Divisor(
            "no 2-torsion translate achieves rational equivalence".into(),
        ))
    }
}

trait PopUnwrap<T> {
    fn pop_unwrap(self) -> T;
}
impl<T> PopUnwrap<T> for Vec<T> {
    fn pop_unwrap(mut self) -> T {
        self.pop().expect("nonempty")
    }
}
