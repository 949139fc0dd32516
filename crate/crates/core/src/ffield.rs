//! Finite fields, p-adic coefficient rings and nilpotent coordinate rings.
//!
//! Everything downstream is exact, so the representations here are chosen
//! for transparency over speed: field elements are little-endian coefficient
//! vectors over the prime field, nilpotent ring elements are sparse monomial
//! maps. The fields we actually touch are tiny (q <= 3^8 in the shipped
//! configurations), which keeps exhaustive scans (root finding, non-residue
//! search, torsion enumeration) cheap.
//!
//! The ring tower:
//!
//! * [`Zpn`] - the ring Z/p^N, used when solving ghost component systems
//!   where exact division by p must be tracked.
//! * [`Fq`] - the field F_{p^k} with a deterministic modulus.
//! * [`GaloisRing`] - the unramified lift of F_{p^k} to Z/p^N coefficients,
//!   i.e. W_N(F_{p^k}) in coordinates; used by the Witt-vector oracle.
//! * [`NilRing`] - k[x_0,...,x_{m-1}] / (x_j^{e_j}), the coordinate rings of
//!   the infinitesimal group schemes the comodule layer works over.

use std::collections::BTreeMap;
use std::fmt;

/// Commutative ring with explicitly passed context.
///
/// Elements do not carry a pointer back to their ring; every operation takes
/// the ring as `self`. This keeps elements `Ord`-able and cheap to store in
/// maps, at the price of the caller promising to never mix contexts. Debug
/// assertions catch the common mistakes (wrong vector length, out-of-range
/// residue).
pub trait Ring: Clone + fmt::Debug {
    type Elem: Clone + PartialEq + Eq + Ord + fmt::Debug;

    fn zero(&self) -> Self::Elem;
    fn one(&self) -> Self::Elem;
    fn add(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn neg(&self, a: &Self::Elem) -> Self::Elem;
    fn mul(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    /// Multiplicative inverse, `None` for non-units.
    fn inv(&self, a: &Self::Elem) -> Option<Self::Elem>;
    /// The additive order of 1 (p for char-p rings, p^N for Z/p^N lifts).
    fn characteristic(&self) -> u64;

    fn sub(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem {
        self.add(a, &self.neg(b))
    }
    fn is_zero(&self, a: &Self::Elem) -> bool {
        *a == self.zero()
    }
    fn is_one(&self, a: &Self::Elem) -> bool {
        *a == self.one()
    }
    /// Image of an integer under the unique map Z -> R.
    fn from_int(&self, n: i64) -> Self::Elem {
        let ch = self.characteristic() as i64;
        let mut r = n % ch;
        if r < 0 {
            r += ch;
        }
        let mut acc = self.zero();
        let one = self.one();
        // Tiny characteristics only; repeated addition is fine.
        for _ in 0..r {
            acc = self.add(&acc, &one);
        }
        acc
    }
    fn pow(&self, a: &Self::Elem, e: u64) -> Self::Elem {
        let mut base = a.clone();
        let mut e = e;
        let mut acc = self.one();
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(&acc, &base);
            }
            base = self.mul(&base, &base);
            e >>= 1;
        }
        acc
    }
    fn sum<I: IntoIterator<Item = Self::Elem>>(&self, it: I) -> Self::Elem {
        it.into_iter().fold(self.zero(), |a, b| self.add(&a, &b))
    }
    fn product<I: IntoIterator<Item = Self::Elem>>(&self, it: I) -> Self::Elem {
        it.into_iter().fold(self.one(), |a, b| self.mul(&a, &b))
    }
}

/// Rings of characteristic p^N in which division by p can be performed on
/// multiples of p, losing one level of precision. The ghost-component solver
/// is generic over this.
pub trait PadicRing: Ring {
    fn p(&self) -> u64;
    fn precision(&self) -> u32;
    /// a / p for a divisible by p. Panics otherwise: callers rely on exact
    /// divisibility as a correctness check, not as a recoverable condition.
    fn div_p_exact(&self, a: &Self::Elem) -> Self::Elem;
}

// ======================================================================
// Z/p^N
// ======================================================================

/// The ring Z/p^N, N >= 1. For N = 1 this is the prime field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Zpn {
    pub p: u64,
    pub n: u32,
    modulus: u64,
}

impl Zpn {
    pub fn new(p: u64, n: u32) -> Self {
        assert!(p >= 2 && n >= 1);
        let modulus = p.checked_pow(n).expect("p^N overflows u64");
        Zpn { p, n, modulus }
    }
    pub fn modulus(&self) -> u64 {
        self.modulus
    }
}

impl Ring for Zpn {
    type Elem = u64;

    fn zero(&self) -> u64 {
        0
    }
    fn one(&self) -> u64 {
        1 % self.modulus
    }
    fn add(&self, a: &u64, b: &u64) -> u64 {
        (a + b) % self.modulus
    }
    fn neg(&self, a: &u64) -> u64 {
        if *a == 0 {
            0
        } else {
            self.modulus - a
        }
    }
    fn mul(&self, a: &u64, b: &u64) -> u64 {
        ((*a as u128 * *b as u128) % self.modulus as u128) as u64
    }
    fn inv(&self, a: &u64) -> Option<u64> {
        // Extended Euclid on (a, p^N); units are exactly the prime-to-p residues.
        let (g, x, _) = ext_gcd(*a as i128, self.modulus as i128);
        if g != 1 {
            return None;
        }
        let m = self.modulus as i128;
        Some(((x % m + m) % m) as u64)
    }
    fn characteristic(&self) -> u64 {
        self.modulus
    }
    fn from_int(&self, n: i64) -> u64 {
        let m = self.modulus as i64;
        (((n % m) + m) % m) as u64
    }
}

impl PadicRing for Zpn {
    fn p(&self) -> u64 {
        self.p
    }
    fn precision(&self) -> u32 {
        self.n
    }
    fn div_p_exact(&self, a: &u64) -> u64 {
        assert!(a % self.p == 0, "div_p_exact: {} not divisible by {}", a, self.p);
        a / self.p
    }
}

fn ext_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

// ======================================================================
// F_{p^k}
// ======================================================================

/// The field F_{p^k}, elements stored as little-endian coefficient vectors
/// of length k over F_p, reduced modulo a monic irreducible `modulus` of
/// degree k (length k+1, leading coefficient 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fq {
    pub p: u64,
    pub k: usize,
    pub modulus: Vec<u64>,
}

pub type FqElem = Vec<u64>;

impl Fq {
    /// Field with the deterministic modulus: the first monic irreducible of
    /// degree k in the enumeration where candidate index m encodes the lower
    /// coefficients as base-p digits (coefficient of x^i = digit i).
    pub fn new(p: u64, k: usize) -> Self {
        assert!(k >= 1, "degree must be positive");
        assert!(is_prime_u64(p), "characteristic must be prime");
        assert!(p % 2 == 1, "characteristic 2 is out of scope");
        if k == 1 {
            return Fq { p, k, modulus: vec![0, 1] };
        }
        let total = p.checked_pow(k as u32).expect("p^k overflows u64");
        for idx in 0..total {
            let mut m = vec![0u64; k + 1];
            let mut t = idx;
            for c in m.iter_mut().take(k) {
                *c = t % p;
                t /= p;
            }
            m[k] = 1;
            if poly_is_irreducible(p, &m) {
                return Fq { p, k, modulus: m };
            }
        }
        unreachable!("no irreducible polynomial of degree {} over F_{}", k, p);
    }

    /// Field with a caller-pinned modulus (monic, degree k, irreducible).
    pub fn with_modulus(p: u64, modulus: Vec<u64>) -> Self {
        assert!(is_prime_u64(p) && p % 2 == 1);
        let k = modulus.len() - 1;
        assert!(k >= 1 && modulus[k] == 1, "modulus must be monic");
        assert!(modulus.iter().all(|&c| c < p));
        assert!(poly_is_irreducible(p, &modulus), "modulus must be irreducible");
        Fq { p, k, modulus }
    }

    pub fn order(&self) -> u64 {
        self.p.pow(self.k as u32)
    }

    /// The class of x (a generator of the field over F_p as a ring, not
    /// necessarily of the multiplicative group). Panics for k = 1.
    pub fn gen(&self) -> FqElem {
        assert!(self.k > 1);
        let mut v = vec![0; self.k];
        v[1] = 1;
        v
    }

    pub fn from_coeffs(&self, c: &[u64]) -> FqElem {
        assert!(c.len() <= self.k);
        let mut v: Vec<u64> = c.iter().map(|x| x % self.p).collect();
        v.resize(self.k, 0);
        v
    }

    /// Element with index `i` in the canonical enumeration (base-p digits,
    /// coefficient of x^j = digit j). Inverse of [`Fq::elem_index`].
    pub fn elem_from_index(&self, i: u64) -> FqElem {
        assert!(i < self.order());
        let mut v = vec![0; self.k];
        let mut t = i;
        for c in v.iter_mut() {
            *c = t % self.p;
            t /= self.p;
        }
        v
    }

    pub fn elem_index(&self, a: &FqElem) -> u64 {
        let mut idx = 0u64;
        for &c in a.iter().rev() {
            idx = idx * self.p + c;
        }
        idx
    }

    /// All q elements in canonical order. q is tiny everywhere we use this.
    pub fn all_elements(&self) -> impl Iterator<Item = FqElem> + '_ {
        (0..self.order()).map(move |i| self.elem_from_index(i))
    }

    pub fn frobenius(&self, a: &FqElem) -> FqElem {
        self.pow(a, self.p)
    }

    /// a^(p^d).
    pub fn frobenius_power(&self, a: &FqElem, d: u32) -> FqElem {
        let mut r = a.clone();
        for _ in 0..d {
            r = self.frobenius(&r);
        }
        r
    }

    /// Does a lie in the subfield F_{p^d}? (d must divide k.)
    pub fn in_subfield(&self, a: &FqElem, d: u32) -> bool {
        assert!(self.k as u32 % d == 0);
        self.frobenius_power(a, d) == *a
    }

    /// Euler criterion. Zero counts as a square.
    pub fn is_square(&self, a: &FqElem) -> bool {
        if self.is_zero(a) {
            return true;
        }
        self.is_one(&self.pow(a, (self.order() - 1) / 2))
    }

    /// Deterministic square root: Tonelli-Shanks with the first
    /// quadratic non-residue in canonical order as the auxiliary element.
    /// Of the two roots, returns the one with the smaller canonical index.
    pub fn sqrt(&self, a: &FqElem) -> Option<FqElem> {
        if self.is_zero(a) {
            return Some(self.zero());
        }
        let q = self.order();
        if !self.is_square(a) {
            return None;
        }
        // q - 1 = 2^s * t with t odd
        let mut t = q - 1;
        let mut s = 0u32;
        while t % 2 == 0 {
            t /= 2;
            s += 1;
        }
        let mut r = if s == 1 {
            self.pow(a, (q + 1) / 4)
        } else {
            let nr = self
                .all_elements()
                .find(|e| !self.is_zero(e) && !self.is_square(e))
                .expect("odd q > 1 has a non-residue");
            let mut c = self.pow(&nr, t);
            let mut r = self.pow(a, (t + 1) / 2);
            let mut tpow = self.pow(a, t);
            let mut m = s;
            while !self.is_one(&tpow) {
                // Find least 0 < i < m with tpow^(2^i) = 1.
                let mut i = 0u32;
                let mut probe = tpow.clone();
                while !self.is_one(&probe) {
                    probe = self.mul(&probe, &probe);
                    i += 1;
                    assert!(i < m, "sqrt: order bookkeeping broke");
                }
                let b = self.pow(&c, 1 << (m - i - 1));
                r = self.mul(&r, &b);
                c = self.mul(&b, &b);
                tpow = self.mul(&tpow, &c);
                m = i;
            }
            r
        };
        debug_assert_eq!(self.mul(&r, &r), *a);
        let other = self.neg(&r);
        if self.elem_index(&other) < self.elem_index(&r) {
            r = other;
        }
        Some(r)
    }

    /// Roots in this field of a univariate polynomial with coefficients
    /// here (little-endian), found by scanning the whole field.
    pub fn roots(&self, poly: &[FqElem]) -> Vec<FqElem> {
        self.all_elements()
            .filter(|x| {
                let mut acc = self.zero();
                for c in poly.iter().rev() {
                    acc = self.add(&self.mul(&acc, x), c);
                }
                self.is_zero(&acc)
            })
            .collect()
    }

    /// An embedding F_{p^k} -> F_{p^K} (self into `dst`, k | K, same p),
    /// realized by mapping the generator to the first root of our modulus
    /// in `dst`. Returns the image of the generator; apply with
    /// [`Fq::embed_elem`].
    pub fn embedding_root(&self, dst: &Fq) -> FqElem {
        assert_eq!(self.p, dst.p);
        assert!(dst.k % self.k == 0);
        let m: Vec<FqElem> = self
            .modulus
            .iter()
            .map(|&c| dst.from_coeffs(&[c]))
            .collect();
        dst.roots(&m).into_iter().next().expect("modulus splits in the extension")
    }

    pub fn embed_elem(&self, dst: &Fq, root: &FqElem, a: &FqElem) -> FqElem {
        let mut acc = dst.zero();
        for &c in a.iter().rev() {
            acc = dst.add(&dst.mul(&acc, root), &dst.from_coeffs(&[c]));
        }
        acc
    }

    /// Pretty printer: `2*t^3 + t + 1` style, `t` the generator class.
    pub fn elem_str(&self, a: &FqElem) -> String {
        let mut parts: Vec<String> = Vec::new();
        for (i, &c) in a.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            let s = match (i, c) {
                (0, c) => format!("{}", c),
                (1, 1) => "t".to_string(),
                (1, c) => format!("{}*t", c),
                (i, 1) => format!("t^{}", i),
                (i, c) => format!("{}*t^{}", c, i),
            };
            parts.push(s);
        }
        if parts.is_empty() {
            "0".to_string()
        } else {
            parts.join(" + ")
        }
    }
}

impl Ring for Fq {
    type Elem = FqElem;

    fn zero(&self) -> FqElem {
        vec![0; self.k]
    }
    fn one(&self) -> FqElem {
        let mut v = vec![0; self.k];
        v[0] = 1 % self.p;
        v
    }
    fn add(&self, a: &FqElem, b: &FqElem) -> FqElem {
        debug_assert!(a.len() == self.k && b.len() == self.k);
        a.iter().zip(b).map(|(x, y)| (x + y) % self.p).collect()
    }
    fn neg(&self, a: &FqElem) -> FqElem {
        a.iter().map(|&x| if x == 0 { 0 } else { self.p - x }).collect()
    }
    fn mul(&self, a: &FqElem, b: &FqElem) -> FqElem {
        debug_assert!(a.len() == self.k && b.len() == self.k);
        if self.k == 1 {
            return vec![(a[0] * b[0]) % self.p];
        }
        let mut prod = vec![0u64; 2 * self.k - 1];
        for (i, &x) in a.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                prod[i + j] = (prod[i + j] + x * y) % self.p;
            }
        }
        poly_rem(self.p, &mut prod, &self.modulus);
        prod.resize(self.k, 0);
        prod
    }
    fn inv(&self, a: &FqElem) -> Option<FqElem> {
        if self.is_zero(a) {
            return None;
        }
        // a^(q-2); the fields are small enough that Euclid buys nothing.
        Some(self.pow(a, self.order() - 2))
    }
    fn characteristic(&self) -> u64 {
        self.p
    }
    fn from_int(&self, n: i64) -> FqElem {
        let p = self.p as i64;
        let r = ((n % p) + p) % p;
        self.from_coeffs(&[r as u64])
    }
}

/// Remainder of `a` (little-endian, arbitrary length) modulo monic `m`.
fn poly_rem(p: u64, a: &mut Vec<u64>, m: &[u64]) {
    let dm = m.len() - 1;
    while a.len() > dm {
        let lead = *a.last().unwrap() % p;
        let da = a.len() - 1;
        if lead != 0 {
            for i in 0..dm {
                let sub = (lead * m[i]) % p;
                let idx = da - dm + i;
                a[idx] = (a[idx] + p * p - sub) % p;
            }
        }
        a.pop();
        while a.len() > dm && *a.last().unwrap() == 0 {
            if a.len() == dm {
                break;
            }
            a.pop();
        }
    }
    a.resize(dm, 0);
}

fn poly_mul_mod(p: u64, a: &[u64], b: &[u64], m: &[u64]) -> Vec<u64> {
    let mut prod = vec![0u64; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            prod[i + j] = (prod[i + j] + x * y) % p;
        }
    }
    poly_rem(p, &mut prod, m);
    prod
}

/// x^(p^e) mod m, by repeated p-th powering of the class of x.
fn poly_x_frob_power(p: u64, e: u32, m: &[u64]) -> Vec<u64> {
    let k = m.len() - 1;
    let mut x = vec![0u64; k];
    if k == 1 {
        // x reduces to a constant; irrelevant for k = 1 callers.
        x[0] = 0;
    } else {
        x[1] = 1;
    }
    let mut r = x;
    for _ in 0..e {
        // r^p by square-and-multiply on the exponent p.
        let mut acc = vec![0u64; m.len() - 1];
        acc[0] = 1;
        let mut base = r.clone();
        let mut t = p;
        while t > 0 {
            if t & 1 == 1 {
                acc = poly_mul_mod(p, &acc, &base, m);
            }
            base = poly_mul_mod(p, &base, &base, m);
            t >>= 1;
        }
        r = acc;
    }
    r
}

fn poly_gcd(p: u64, a: &[u64], b: &[u64]) -> Vec<u64> {
    let norm = |v: &[u64]| -> Vec<u64> {
        let mut v = v.to_vec();
        while v.len() > 1 && *v.last().unwrap() == 0 {
            v.pop();
        }
        if v.is_empty() {
            v.push(0);
        }
        v
    };
    let mut a = norm(a);
    let mut b = norm(b);
    while !(b.len() == 1 && b[0] == 0) {
        // a mod b with b made monic first.
        let lead = *b.last().unwrap();
        let linv = mod_inv_u64(lead, p);
        let bm: Vec<u64> = b.iter().map(|&c| (c * linv) % p).collect();
        let mut r = a.clone();
        poly_rem(p, &mut r, &bm);
        a = b;
        b = norm(&r);
    }
    a
}

fn mod_inv_u64(a: u64, p: u64) -> u64 {
    let (g, x, _) = ext_gcd(a as i128, p as i128);
    assert!(g == 1);
    (((x % p as i128) + p as i128) % p as i128) as u64
}

/// Rabin test: m (monic, degree k) is irreducible over F_p iff
/// x^(p^k) = x mod m and gcd(x^(p^(k/d)) - x, m) = 1 for every prime d | k.
fn poly_is_irreducible(p: u64, m: &[u64]) -> bool {
    let k = (m.len() - 1) as u32;
    if k == 1 {
        return true;
    }
    let sub_x = |mut v: Vec<u64>| -> Vec<u64> {
        if v.len() > 1 {
            v[1] = (v[1] + p - 1) % p;
        }
        v
    };
    let top = sub_x(poly_x_frob_power(p, k, m));
    if !top.iter().all(|&c| c == 0) {
        return false;
    }
    let mut rem = k;
    let mut d = 2;
    let mut primes = Vec::new();
    while d * d <= rem {
        if rem % d == 0 {
            primes.push(d);
            while rem % d == 0 {
                rem /= d;
            }
        }
        d += 1;
    }
    if rem > 1 {
        primes.push(rem);
    }
    for d in primes {
        let g = poly_gcd(p, &sub_x(poly_x_frob_power(p, k / d, m)), m);
        if g.len() > 1 {
            return false;
        }
    }
    true
}

pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

// ======================================================================
// Galois rings: unramified lifts of F_{p^k} to Z/p^N coefficients
// ======================================================================

/// (Z/p^N)[x] / (m(x)) with m the modulus of an [`Fq`] lifted verbatim.
/// This is W_N(F_{p^k}) in coordinates; we only need it as the target of
/// Teichmueller lifts when solving ghost systems, never as a front-end type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GaloisRing {
    pub zp: Zpn,
    pub k: usize,
    pub modulus: Vec<u64>,
}

pub type GaloisElem = Vec<u64>;

impl GaloisRing {
    pub fn new(field: &Fq, precision: u32) -> Self {
        GaloisRing {
            zp: Zpn::new(field.p, precision),
            k: field.k,
            modulus: field.modulus.clone(),
        }
    }

    /// Coefficientwise reduction to the residue field.
    pub fn reduce(&self, field: &Fq, a: &GaloisElem) -> FqElem {
        debug_assert_eq!(field.k, self.k);
        a.iter().map(|&c| c % field.p).collect()
    }

    /// Some lift of a residue-field element (coefficients taken verbatim).
    pub fn lift(&self, a: &FqElem) -> GaloisElem {
        a.clone()
    }

    /// The Teichmueller lift: the unique lift fixed by x -> x^q. Computed by
    /// iterating q-th powers of an arbitrary lift until stationary; each step
    /// doubles the precision to which the limit is attained.
    pub fn teichmueller(&self, field: &Fq, a: &FqElem) -> GaloisElem {
        let q = field.order();
        let mut t = self.lift(a);
        for _ in 0..(self.zp.n + 1) {
            let next = self.pow(&t, q);
            if next == t {
                break;
            }
            t = next;
        }
        debug_assert_eq!(self.pow(&t, q), t);
        t
    }

    /// p-adic valuation; returns the full precision for 0.
    pub fn val_p(&self, a: &GaloisElem) -> u32 {
        let mut v = 0;
        let mut x = a.clone();
        let field = self.residue_field();
        while v < self.zp.n {
            if !self.reduce(&field, &x).iter().all(|&c| c == 0) {
                return v;
            }
            x = self.div_p_exact(&x);
            v += 1;
        }
        self.zp.n
    }

    /// Coefficientwise reduction mod p^s (the canonical image in GR(p^s)).
    pub fn reduce_mod(&self, a: &GaloisElem, s: u32) -> GaloisElem {
        debug_assert!(s <= self.zp.n);
        let m = self.zp.p.pow(s);
        a.iter().map(|&c| c % m).collect()
    }

    /// Multiplication by p^e.
    pub fn scale_p_pow(&self, a: &GaloisElem, e: u32) -> GaloisElem {
        let f = self.zp.from_int(self.zp.p.pow(e) as i64);
        a.iter().map(|&c| self.zp.mul(&c, &f)).collect()
    }

    pub fn residue_field(&self) -> Fq {
        Fq {
            p: self.zp.p,
            k: self.k,
            modulus: self.modulus.clone(),
        }
    }

    /// Teichmueller digits: the unique residues d_i with a = sum p^i [d_i].
    pub fn teich_digits(&self, field: &Fq, a: &GaloisElem) -> Vec<FqElem> {
        let mut digits = Vec::with_capacity(self.zp.n as usize);
        let mut x = a.clone();
        for _ in 0..self.zp.n {
            let d = self.reduce(field, &x);
            x = self.div_p_exact(&self.sub(&x, &self.teichmueller(field, &d)));
            digits.push(d);
        }
        digits
    }

    /// The canonical Frobenius lift sigma^e, acting as d -> d^{p^e} on
    /// Teichmueller digits. e may exceed the residue degree; it is reduced.
    pub fn frobenius(&self, field: &Fq, a: &GaloisElem, e: u32) -> GaloisElem {
        let digits = self.teich_digits(field, a);
        let mut out = self.zero();
        for (i, d) in digits.iter().enumerate() {
            let t = self.teichmueller(field, &field.frobenius_power(d, e % field.k as u32));
            out = self.add(&out, &self.scale_p_pow(&t, i as u32));
        }
        out
    }
}

impl Ring for GaloisRing {
    type Elem = GaloisElem;

    fn zero(&self) -> GaloisElem {
        vec![0; self.k]
    }
    fn one(&self) -> GaloisElem {
        let mut v = vec![0; self.k];
        v[0] = 1;
        v
    }
    fn add(&self, a: &GaloisElem, b: &GaloisElem) -> GaloisElem {
        a.iter().zip(b).map(|(x, y)| self.zp.add(x, y)).collect()
    }
    fn neg(&self, a: &GaloisElem) -> GaloisElem {
        a.iter().map(|x| self.zp.neg(x)).collect()
    }
    fn mul(&self, a: &GaloisElem, b: &GaloisElem) -> GaloisElem {
        if self.k == 1 {
            return vec![self.zp.mul(&a[0], &b[0])];
        }
        let mut prod = vec![0u64; 2 * self.k - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                prod[i + j] = self.zp.add(&prod[i + j], &self.zp.mul(&x, &y));
            }
        }
        // The modulus is monic with coefficients < p, so reduction is the
        // same schoolbook loop as over the field, now mod p^N.
        let m = &self.modulus;
        let dm = self.k;
        while prod.len() > dm {
            let lead = *prod.last().unwrap();
            let da = prod.len() - 1;
            if lead != 0 {
                for i in 0..dm {
                    let sub = self.zp.mul(&lead, &m[i]);
                    prod[da - dm + i] = self.zp.sub(&prod[da - dm + i], &sub);
                }
            }
            prod.pop();
        }
        prod.resize(dm, 0);
        prod
    }
    fn inv(&self, a: &GaloisElem) -> Option<GaloisElem> {
        // Units are elements whose residue is non-zero; invert by Newton
        // lifting of the residue-field inverse.
        let field = Fq {
            p: self.zp.p,
            k: self.k,
            modulus: self.modulus.clone(),
        };
        let res = self.reduce(&field, a);
        let r0 = field.inv(&res)?;
        let mut x = self.lift(&r0);
        for _ in 0..self.zp.n + 1 {
            // x <- x(2 - ax)
            let two = self.from_int(2);
            let t = self.sub(&two, &self.mul(a, &x));
            x = self.mul(&x, &t);
        }
        debug_assert!(self.is_one(&self.mul(a, &x)));
        Some(x)
    }
    fn characteristic(&self) -> u64 {
        self.zp.modulus()
    }
    fn from_int(&self, n: i64) -> GaloisElem {
        let mut v = vec![0; self.k];
        v[0] = self.zp.from_int(n);
        v
    }
}

impl PadicRing for GaloisRing {
    fn p(&self) -> u64 {
        self.zp.p
    }
    fn precision(&self) -> u32 {
        self.zp.n
    }
    fn div_p_exact(&self, a: &GaloisElem) -> GaloisElem {
        a.iter().map(|c| self.zp.div_p_exact(c)).collect()
    }
}

// ======================================================================
// Nilpotent coordinate rings
// ======================================================================

/// B[x_0,...,x_{m-1}] / (x_j^{e_j}), elements as sparse monomial maps.
/// Monomials whose exponent in some variable reaches e_j are identically
/// zero and are dropped on the fly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NilRing<B: Ring> {
    pub base: B,
    pub exps: Vec<u32>,
}

pub type NilElem<B> = BTreeMap<Vec<u32>, <B as Ring>::Elem>;

impl<B: Ring> NilRing<B> {
    pub fn new(base: B, exps: Vec<u32>) -> Self {
        assert!(exps.iter().all(|&e| e >= 1));
        NilRing { base, exps }
    }

    pub fn nvars(&self) -> usize {
        self.exps.len()
    }

    /// 1 + sum over variables of (e_j - 1): the least s with N^s = 0 for N
    /// the ideal of constants-free elements.
    pub fn nilpotency_order(&self) -> u32 {
        1 + self.exps.iter().map(|e| e - 1).sum::<u32>()
    }

    pub fn scalar(&self, c: B::Elem) -> NilElem<B> {
        let mut m = BTreeMap::new();
        if !self.base.is_zero(&c) {
            m.insert(vec![0; self.nvars()], c);
        }
        m
    }

    pub fn var(&self, j: usize) -> NilElem<B> {
        let mut e = vec![0; self.nvars()];
        e[j] = 1;
        self.monomial(e, self.base.one())
    }

    pub fn monomial(&self, exp: Vec<u32>, c: B::Elem) -> NilElem<B> {
        assert_eq!(exp.len(), self.nvars());
        let mut m = BTreeMap::new();
        if !self.base.is_zero(&c) && exp.iter().zip(&self.exps).all(|(a, b)| a < b) {
            m.insert(exp, c);
        }
        m
    }

    pub fn coeff(&self, a: &NilElem<B>, exp: &[u32]) -> B::Elem {
        a.get(exp).cloned().unwrap_or_else(|| self.base.zero())
    }

    pub fn constant_term(&self, a: &NilElem<B>) -> B::Elem {
        self.coeff(a, &vec![0; self.nvars()])
    }

    /// The augmentation-ideal part (constant term removed).
    pub fn nil_part(&self, a: &NilElem<B>) -> NilElem<B> {
        let mut b = a.clone();
        b.remove(&vec![0u32; self.nvars()]);
        b
    }

    fn insert_add(&self, m: &mut NilElem<B>, exp: Vec<u32>, c: B::Elem) {
        if self.base.is_zero(&c) {
            return;
        }
        if !exp.iter().zip(&self.exps).all(|(a, b)| a < b) {
            return;
        }
        match m.remove(&exp) {
            None => {
                m.insert(exp, c);
            }
            Some(old) => {
                let s = self.base.add(&old, &c);
                if !self.base.is_zero(&s) {
                    m.insert(exp, s);
                }
            }
        }
    }

    pub fn map_coeffs<F: Fn(&B::Elem) -> B::Elem>(&self, a: &NilElem<B>, f: F) -> NilElem<B> {
        let mut out = BTreeMap::new();
        for (e, c) in a {
            let v = f(c);
            if !self.base.is_zero(&v) {
                out.insert(e.clone(), v);
            }
        }
        out
    }

    /// Substitute ring elements for the variables. Used to push elements
    /// along maps of coordinate rings (Frobenius twists, specializations).
    pub fn substitute(&self, a: &NilElem<B>, images: &[NilElem<B>]) -> NilElem<B> {
        assert_eq!(images.len(), self.nvars());
        let mut out: NilElem<B> = BTreeMap::new();
        for (e, c) in a {
            let mut term = self.scalar(c.clone());
            for (j, &ej) in e.iter().enumerate() {
                for _ in 0..ej {
                    term = self.mul(&term, &images[j]);
                }
            }
            for (me, mc) in term {
                self.insert_add(&mut out, me, mc);
            }
        }
        out
    }

    pub fn elem_str(&self, a: &NilElem<B>, fmt_c: impl Fn(&B::Elem) -> String) -> String {
        if a.is_empty() {
            return "0".to_string();
        }
        let mut parts = Vec::new();
        for (e, c) in a {
            let mut s = fmt_c(c);
            for (j, &ej) in e.iter().enumerate() {
                if ej == 1 {
                    s.push_str(&format!("*x{}", j));
                } else if ej > 1 {
                    s.push_str(&format!("*x{}^{}", j, ej));
                }
            }
            parts.push(s);
        }
        parts.join(" + ")
    }
}

impl<B: Ring> Ring for NilRing<B> {
    type Elem = NilElem<B>;

    fn zero(&self) -> NilElem<B> {
        BTreeMap::new()
    }
    fn one(&self) -> NilElem<B> {
        self.scalar(self.base.one())
    }
    fn add(&self, a: &NilElem<B>, b: &NilElem<B>) -> NilElem<B> {
        let mut out = a.clone();
        for (e, c) in b {
            self.insert_add(&mut out, e.clone(), c.clone());
        }
        out
    }
    fn neg(&self, a: &NilElem<B>) -> NilElem<B> {
        a.iter().map(|(e, c)| (e.clone(), self.base.neg(c))).collect()
    }
    fn mul(&self, a: &NilElem<B>, b: &NilElem<B>) -> NilElem<B> {
        let mut out = BTreeMap::new();
        for (ea, ca) in a {
            for (eb, cb) in b {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                if !e.iter().zip(&self.exps).all(|(x, bound)| x < bound) {
                    continue;
                }
                self.insert_add(&mut out, e, self.base.mul(ca, cb));
            }
        }
        out
    }
    fn inv(&self, a: &NilElem<B>) -> Option<NilElem<B>> {
        // Units are exactly the elements with unit constant term:
        // a = c(1 - n) with n nilpotent, a^-1 = c^-1 (1 + n + n^2 + ...).
        let c = self.constant_term(a);
        let cinv = self.base.inv(&c)?;
        let cinv = self.scalar(cinv);
        let n = self.neg(&self.mul(&cinv, &self.nil_part(a)));
        let mut acc = self.one();
        let mut pow = self.one();
        for _ in 1..self.nilpotency_order() {
            pow = self.mul(&pow, &n);
            if pow.is_empty() {
                break;
            }
            acc = self.add(&acc, &pow);
        }
        Some(self.mul(&cinv, &acc))
    }
    fn characteristic(&self) -> u64 {
        self.base.characteristic()
    }
    fn from_int(&self, n: i64) -> NilElem<B> {
        self.scalar(self.base.from_int(n))
    }
}

impl<B: PadicRing> PadicRing for NilRing<B> {
    fn p(&self) -> u64 {
        self.base.p()
    }
    fn precision(&self) -> u32 {
        self.base.precision()
    }
    fn div_p_exact(&self, a: &NilElem<B>) -> NilElem<B> {
        a.iter()
            .map(|(e, c)| (e.clone(), self.base.div_p_exact(c)))
            .collect()
    }
}

impl NilRing<Fq> {
    /// Square root of a unit whose constant term is a square, by Newton
    /// iteration s <- (s + a/s)/2 (p is odd). Of the two roots, the one whose
    /// constant term is the canonical field square root.
    pub fn unit_sqrt(&self, a: &NilElem<Fq>) -> Option<NilElem<Fq>> {
        let c = self.constant_term(a);
        if self.base.is_zero(&c) {
            return None;
        }
        let c0 = self.base.sqrt(&c)?;
        let mut s = self.scalar(c0);
        let half = self.scalar(self.base.inv(&self.base.from_int(2)).unwrap());
        // Quadratic convergence: error ideal power doubles per step.
        let mut steps = 0u32;
        let mut reach = 1u32;
        while reach < self.nilpotency_order() {
            reach *= 2;
            steps += 1;
        }
        for _ in 0..steps {
            let sinv = self.inv(&s).expect("iterate stays a unit");
            s = self.mul(&half, &self.add(&s, &self.mul(a, &sinv)));
        }
        debug_assert_eq!(self.mul(&s, &s), *a);
        Some(s)
    }

    /// Lift coefficientwise to the Galois ring version of the same
    /// coordinate ring (for ghost-component computations).
    pub fn lift_to(&self, target: &NilRing<GaloisRing>, a: &NilElem<Fq>) -> NilElem<GaloisRing> {
        assert_eq!(self.exps, target.exps);
        a.iter()
            .map(|(e, c)| (e.clone(), target.base.lift(c)))
            .collect()
    }

    pub fn reduce_from(
        &self,
        source: &NilRing<GaloisRing>,
        a: &NilElem<GaloisRing>,
    ) -> NilElem<Fq> {
        assert_eq!(self.exps, source.exps);
        let mut out = BTreeMap::new();
        for (e, c) in a {
            let r = source.base.reduce(&self.base, c);
            if !self.base.is_zero(&r) {
                out.insert(e.clone(), r);
            }
        }
        out
    }
}

// ======================================================================

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f9_has_modulus_x2_plus_1() {
        let f9 = Fq::new(3, 2);
        assert_eq!(f9.modulus, vec![1, 0, 1]);
        let u = f9.gen();
        assert_eq!(f9.mul(&u, &u), f9.from_int(-1));
    }

    #[test]
    fn f81_deterministic_modulus_is_irreducible() {
        let f = Fq::new(3, 4);
        assert_eq!(f.modulus, vec![2, 1, 0, 0, 1]); // x^4 + x + 2
        assert_eq!(f.order(), 81);
        // Field sanity: every non-zero element is invertible.
        for a in f.all_elements() {
            if f.is_zero(&a) {
                continue;
            }
            let inv = f.inv(&a).unwrap();
            assert!(f.is_one(&f.mul(&a, &inv)));
        }
    }

    #[test]
    fn subfield_of_f81_has_nine_elements() {
        let f = Fq::new(3, 4);
        let n = f.all_elements().filter(|a| f.in_subfield(a, 2)).count();
        assert_eq!(n, 9);
    }

    #[test]
    fn sqrt_of_minus_one_exists_in_f9_and_f81() {
        for k in [2usize, 4] {
            let f = Fq::new(3, k);
            let m1 = f.from_int(-1);
            let u = f.sqrt(&m1).expect("q = 1 mod 4 here");
            assert_eq!(f.mul(&u, &u), m1);
        }
    }

    #[test]
    fn sqrt_roundtrip_everywhere() {
        for (p, k) in [(3u64, 2usize), (3, 4), (5, 2), (101, 1), (7, 2)] {
            let f = Fq::new(p, k);
            let mut squares = 0;
            for a in f.all_elements() {
                let sq = f.mul(&a, &a);
                let r = f.sqrt(&sq).unwrap();
                assert_eq!(f.mul(&r, &r), sq);
                if !f.is_zero(&a) && f.is_square(&a) {
                    squares += 1;
                }
            }
            assert_eq!(squares as u64, (f.order() - 1) / 2);
        }
    }

    #[test]
    fn embedding_f81_into_f3_8_is_a_ring_map() {
        let f81 = Fq::new(3, 4);
        let big = Fq::new(3, 8);
        let root = f81.embedding_root(&big);
        let a = f81.from_coeffs(&[1, 2, 0, 1]);
        let b = f81.from_coeffs(&[2, 2, 1, 0]);
        let ea = f81.embed_elem(&big, &root, &a);
        let eb = f81.embed_elem(&big, &root, &b);
        assert_eq!(
            f81.embed_elem(&big, &root, &f81.mul(&a, &b)),
            big.mul(&ea, &eb)
        );
        assert_eq!(
            f81.embed_elem(&big, &root, &f81.add(&a, &b)),
            big.add(&ea, &eb)
        );
    }

    #[test]
    fn zpn_exact_division_tracks_precision() {
        let z = Zpn::new(3, 4); // Z/81
        assert_eq!(z.div_p_exact(&27), 9);
        assert_eq!(z.inv(&2), Some(41)); // 2*41 = 82 = 1 mod 81
        assert_eq!(z.inv(&3), None);
    }

    #[test]
    fn galois_ring_teichmueller_is_fixed_by_q_power() {
        let f9 = Fq::new(3, 2);
        let gr = GaloisRing::new(&f9, 4);
        for a in f9.all_elements() {
            let t = gr.teichmueller(&f9, &a);
            assert_eq!(gr.pow(&t, 9), t);
            assert_eq!(gr.reduce(&f9, &t), a);
        }
    }

    #[test]
    fn nilring_inverse_geometric_series() {
        let f3 = Fq::new(3, 1);
        let a = NilRing::new(f3.clone(), vec![3, 3]); // x0^3 = x1^3 = 0
        let e = a.add(&a.one(), &a.var(0)); // 1 + x0
        let inv = a.inv(&e).unwrap();
        assert!(a.is_one(&a.mul(&e, &inv)));
        // 1/(1+x0) = 1 - x0 + x0^2
        let expect = a.add(
            &a.add(&a.one(), &a.monomial(vec![1, 0], f3.from_int(-1))),
            &a.monomial(vec![2, 0], f3.one()),
        );
        assert_eq!(inv, expect);
        assert!(a.inv(&a.var(1)).is_none());
    }

    #[test]
    fn nilring_unit_sqrt_small_cases() {
        let f3 = Fq::new(3, 1);
        // eps^2 = 0: sqrt(1 + eps) = 1 + 2 eps.
        let a2 = NilRing::new(f3.clone(), vec![2]);
        let s = a2.unit_sqrt(&a2.add(&a2.one(), &a2.var(0))).unwrap();
        let expect = a2.add(&a2.one(), &a2.monomial(vec![1], f3.from_int(2)));
        assert_eq!(s, expect);
        // eps^3 = 0: sqrt(1 + eps) = 1 + 2 eps + eps^2.
        let a3 = NilRing::new(f3.clone(), vec![3]);
        let s = a3.unit_sqrt(&a3.add(&a3.one(), &a3.var(0))).unwrap();
        let expect = a3.add(
            &a3.add(&a3.one(), &a3.monomial(vec![1], f3.from_int(2))),
            &a3.monomial(vec![2], f3.one()),
        );
        assert_eq!(s, expect);
    }

    #[test]
    fn teichmueller_digits_and_frobenius() {
        let f9 = Fq::new(3, 2);
        let gr = GaloisRing::new(&f9, 3);
        // digits round-trip on every element with small coordinates
        for idx in 0..40u64 {
            let a: GaloisElem = vec![idx % 27, (idx * 7 + 3) % 27];
            let digits = gr.teich_digits(&f9, &a);
            let mut back = gr.zero();
            for (i, d) in digits.iter().enumerate() {
                back = gr.add(&back, &gr.scale_p_pow(&gr.teichmueller(&f9, d), i as u32));
            }
            assert_eq!(back, a);
        }
        // sigma is a ring homomorphism with sigma^k = id
        let a: GaloisElem = vec![5, 11];
        let b: GaloisElem = vec![20, 2];
        let sab = gr.frobenius(&f9, &gr.mul(&a, &b), 1);
        let sa_sb = gr.mul(&gr.frobenius(&f9, &a, 1), &gr.frobenius(&f9, &b, 1));
        assert_eq!(sab, sa_sb);
        assert_eq!(
            gr.frobenius(&f9, &gr.add(&a, &b), 1),
            gr.add(&gr.frobenius(&f9, &a, 1), &gr.frobenius(&f9, &b, 1))
        );
        assert_eq!(gr.frobenius(&f9, &gr.frobenius(&f9, &a, 1), 1), a);
        // valuation bookkeeping
        assert_eq!(gr.val_p(&gr.from_int(6)), 1);
        assert_eq!(gr.val_p(&gr.from_int(9)), 2);
        assert_eq!(gr.val_p(&gr.zero()), 3);
        assert_eq!(gr.val_p(&a), 0);
    }

    #[test]
    fn nilring_substitute_is_a_ring_map_on_samples() {
        let f3 = Fq::new(3, 1);
        let a = NilRing::new(f3.clone(), vec![3, 3]);
        let images = vec![
            a.add(&a.var(0), &a.var(1)),
            a.mul(&a.var(0), &a.var(1)),
        ];
        let x = a.add(&a.one(), &a.var(0));
        let y = a.add(&a.var(1), &a.monomial(vec![1, 1], f3.from_int(2)));
        let lhs = a.substitute(&a.mul(&x, &y), &images);
        let rhs = a.mul(&a.substitute(&x, &images), &a.substitute(&y, &images));
        assert_eq!(lhs, rhs);
    }
}
