//! Module-theoretic description of the kernel data: the ambient modules of
//! E^g[F^n] in chain coordinates, kernels of polarization matrices acting
//! through a validated representation of the endomorphism order, the induced
//! residue pairing, and the Witt-group covers that feed the section layer.
//!
//! Coordinates. For a supersingular E over F_p with F^2 = -p the module of
//! E[F^n] is W_ceil(n/2)(k) delta + W_floor(n/2)(k) F delta; an element of
//! the ambient module of E^g[F^n] is a vector of 2g truncated Witt vectors
//! (delta- and F delta-slots per factor). Internally every slot is carried
//! in Galois-ring coordinates GR(p^n, k) = W_n(F_{p^k}) via the Teichmueller
//! digit expansion, where the ring is a chain ring with maximal ideal (p)
//! and all linear algebra reduces to valuation-aware elimination. The config
//! front-end speaks Witt coordinates; [`WittGrIso`] translates.
//!
//! The representation Psi sends the order into 2x2 matrices over W_2n(k)
//! (level 2n so that the pairing, which divides by p^n, stays exact). It is
//! validated against the order's multiplication table, the Frobenius
//! relation Psi(F)^2 = -p, and the adjunction Psi(x)^T J = J Psi(conj x)
//! that makes polarization forms alternating.

use crate::ffield::{Fq, FqElem, GaloisElem, GaloisRing, PadicRing, Ring};
use crate::mat::Mat;
use crate::quat::{QuatElem, QuatOrder, QDIM};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DieuError {
    #[error("Psi must assign a 2x2 matrix of length-2n Witt vectors to each basis element")]
    PsiShape,
    #[error("Psi(1) is not the identity")]
    PsiIdentity,
    #[error("Psi is not multiplicative at basis pair ({0},{1})")]
    PsiProduct(usize, usize),
    #[error("Psi(F)^2 != -p")]
    PsiFrobenius,
    #[error("adjunction Psi(x)^T J = J Psi(conj x) fails at basis element {0}")]
    PsiAdjoint(usize),
    #[error("coefficient denominator {0} is not invertible mod p")]
    Denominator(i64),
    #[error("polarization matrix must be g x g and Hermitian")]
    GramShape,
    #[error("matrix action does not respect slot truncations at entry ({0},{1})")]
    SlotLeak(usize, usize),
    #[error("pairing value is not divisible by p^n; kernel lift is inconsistent")]
    PairingNotIntegral,
    #[error("vector lies outside the submodule")]
    NotInSubmodule,
    #[error("submodule is not a direct summand (pivot valuation {0} > 0); no coordinate splitting")]
    NotASummand(u32),
    #[error("no cover construction for this subgroup shape: {0}")]
    CoverUnsupported(String),
}

// ======================================================================
// Witt coordinates <-> Galois ring coordinates
// ======================================================================

/// The isomorphism W_n(F_q) = GR(p^n, k), w -> sum_i p^i [w_i^{p^-i}].
/// Both directions are digit-by-digit exact; `tests` pin the ring-map
/// property against the universal Witt tables.
#[derive(Clone, Debug)]
pub struct WittGrIso {
    pub f: Fq,
    pub gr: GaloisRing,
}

impl WittGrIso {
    pub fn new(f: &Fq, len: u32) -> Self {
        WittGrIso {
            f: f.clone(),
            gr: GaloisRing::new(f, len),
        }
    }

    fn inv_frob(&self, a: &FqElem, i: usize) -> FqElem {
        let k = self.f.k as u32;
        self.f.frobenius_power(a, (k - (i as u32 % k)) % k)
    }

    pub fn to_gr(&self, w: &[FqElem]) -> GaloisElem {
        assert_eq!(w.len() as u32, self.gr.zp.n);
        let mut out = self.gr.zero();
        for (i, wi) in w.iter().enumerate() {
            let t = self.gr.teichmueller(&self.f, &self.inv_frob(wi, i));
            out = self.gr.add(&out, &self.gr.scale_p_pow(&t, i as u32));
        }
        out
    }

    pub fn to_witt(&self, x: &GaloisElem) -> Vec<FqElem> {
        self.gr
            .teich_digits(&self.f, x)
            .iter()
            .enumerate()
            .map(|(i, d)| self.f.frobenius_power(d, i as u32 % self.f.k as u32))
            .collect()
    }
}

// ======================================================================
// Submodules of a truncated ambient module, in Howell canonical form
// ======================================================================

/// A submodule of the direct sum of GR/p^{s_j}, presented by its canonical
/// generating rows: pivot entries are exact powers p^v in strictly
/// increasing columns, entries above a pivot are reduced mod p^v, entries
/// below are zero, and the row set is closed under annihilator shifts.
/// Equality of submodules is literal equality of rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Submodule {
    pub ring: GaloisRing,
    pub slots: Vec<u32>,
    pub rows: Vec<Vec<GaloisElem>>,
    /// (column, valuation) per row, aligned with `rows`
    pub pivots: Vec<(usize, u32)>,
}

fn reduce_slots(ring: &GaloisRing, slots: &[u32], v: &[GaloisElem]) -> Vec<GaloisElem> {
    v.iter()
        .zip(slots)
        .map(|(x, &s)| ring.reduce_mod(x, s))
        .collect()
}

fn div_p_pow(ring: &GaloisRing, x: &GaloisElem, v: u32) -> GaloisElem {
    let mut out = x.clone();
    for _ in 0..v {
        out = ring.div_p_exact(&out);
    }
    out
}

impl Submodule {
    /// Howell canonical form of the span of `gens`.
    pub fn from_generators(ring: &GaloisRing, slots: &[u32], gens: &[Vec<GaloisElem>]) -> Self {
        let dim = slots.len();
        let mut work: Vec<Vec<GaloisElem>> = gens
            .iter()
            .map(|g| {
                assert_eq!(g.len(), dim);
                reduce_slots(ring, slots, g)
            })
            .filter(|g| g.iter().any(|x| !ring.is_zero(x)))
            .collect();
        let mut rows: Vec<Vec<GaloisElem>> = Vec::new();
        let mut pivots: Vec<(usize, u32)> = Vec::new();
        for col in 0..dim {
            let s = slots[col];
            let pick = work
                .iter()
                .enumerate()
                .filter_map(|(i, w)| {
                    let v = ring.val_p(&w[col]).min(s);
                    if v < s {
                        Some((i, v))
                    } else {
                        None
                    }
                })
                .min_by_key(|&(_, v)| v);
            let Some((idx, v)) = pick else { continue };
            let mut w = work.swap_remove(idx);
            // normalize the pivot to exactly p^v
            let unit = div_p_pow(ring, &w[col], v);
            let uinv = ring.inv(&unit).expect("valuation-v entry has unit cofactor");
            w = reduce_slots(
                ring,
                slots,
                &w.iter().map(|x| ring.mul(x, &uinv)).collect::<Vec<_>>(),
            );
            // eliminate this column from the rest of the worklist
            for other in work.iter_mut() {
                let ov = ring.val_p(&other[col]).min(s);
                if ov >= s {
                    continue;
                }
                let q = div_p_pow(ring, &other[col], v);
                for (j, x) in other.iter_mut().enumerate() {
                    *x = ring.reduce_mod(&ring.sub(x, &ring.mul(&q, &w[j])), slots[j]);
                }
            }
            // annihilator shift keeps the row set Howell-closed
            if v > 0 || s < ring.zp.n {
                let shift: Vec<GaloisElem> = w
                    .iter()
                    .zip(slots)
                    .map(|(x, &sj)| ring.reduce_mod(&ring.scale_p_pow(x, s - v), sj))
                    .collect();
                if shift.iter().any(|x| !ring.is_zero(x)) {
                    work.push(shift);
                }
            }
            work.retain(|g| g.iter().any(|x| !ring.is_zero(x)));
            rows.push(w);
            pivots.push((col, v));
        }
        // back-substitution: entries above a pivot reduced mod p^v
        for r in 0..rows.len() {
            let (c, v) = pivots[r];
            for r2 in 0..r {
                let x = rows[r2][c].clone();
                let rem = ring.reduce_mod(&x, v);
                let q = div_p_pow(ring, &ring.sub(&x, &rem), v);
                if ring.is_zero(&q) {
                    continue;
                }
                let row_r = rows[r].clone();
                for (j, y) in rows[r2].iter_mut().enumerate() {
                    *y = ring.reduce_mod(&ring.sub(y, &ring.mul(&q, &row_r[j])), slots[j]);
                }
            }
        }
        Submodule {
            ring: ring.clone(),
            slots: slots.to_vec(),
            rows,
            pivots,
        }
    }

    /// k-length: each row generates a cyclic piece GR/p^{s_col - v}.
    pub fn length(&self) -> u32 {
        self.pivots
            .iter()
            .map(|&(c, v)| self.slots[c] - v)
            .sum()
    }

    /// Reduce `v` against the rows; returns (coefficients, remainder).
    pub fn reduce_vector(&self, v: &[GaloisElem]) -> (Vec<GaloisElem>, Vec<GaloisElem>) {
        let ring = &self.ring;
        let mut rest = reduce_slots(ring, &self.slots, v);
        let mut coeffs = Vec::with_capacity(self.rows.len());
        for (row, &(c, pv)) in self.rows.iter().zip(&self.pivots) {
            let x = rest[c].clone();
            let rem = ring.reduce_mod(&x, pv);
            let q = div_p_pow(ring, &ring.sub(&x, &rem), pv);
            if !ring.is_zero(&q) {
                for (j, y) in rest.iter_mut().enumerate() {
                    *y = ring.reduce_mod(&ring.sub(y, &ring.mul(&q, &row[j])), self.slots[j]);
                }
            }
            coeffs.push(q);
        }
        (coeffs, rest)
    }

    pub fn contains(&self, v: &[GaloisElem]) -> bool {
        let (_, rest) = self.reduce_vector(v);
        rest.iter().all(|x| self.ring.is_zero(x))
    }

    pub fn is_subset_of(&self, other: &Submodule) -> bool {
        self.rows.iter().all(|r| other.contains(r))
    }

    /// Additive generators: p^i x^j row for all rows; any additive map is
    /// determined on the submodule by these.
    pub fn additive_generators(&self) -> Vec<Vec<GaloisElem>> {
        let ring = &self.ring;
        let mut gens = Vec::new();
        for row in &self.rows {
            for i in 0..ring.zp.n {
                for j in 0..ring.k {
                    let mut c = ring.zero();
                    c[j] = ring.zp.p.pow(i);
                    let g: Vec<GaloisElem> = row
                        .iter()
                        .zip(&self.slots)
                        .map(|(x, &s)| ring.reduce_mod(&ring.mul(x, &c), s))
                        .collect();
                    if g.iter().any(|x| !ring.is_zero(x)) {
                        gens.push(g);
                    }
                }
            }
        }
        gens
    }
}

// ======================================================================
// Exact kernels over the Galois ring (free modules)
// ======================================================================

/// Kernel of a matrix over GR(p^n, k) by two-sided elimination with
/// minimal-valuation pivots. Row operations preserve the kernel; column
/// operations are accumulated so solutions can be pulled back.
fn kernel_free(ring: &GaloisRing, a: &[Vec<GaloisElem>]) -> Vec<Vec<GaloisElem>> {
    let nrows = a.len();
    let ncols = if nrows == 0 { 0 } else { a[0].len() };
    if nrows == 0 {
        return (0..ncols)
            .map(|j| {
                let mut e = vec![ring.zero(); ncols];
                e[j] = ring.one();
                e
            })
            .collect();
    }
    let prec = ring.zp.n;
    let mut m: Vec<Vec<GaloisElem>> = a.to_vec();
    let mut colt: Vec<Vec<GaloisElem>> = (0..ncols)
        .map(|j| {
            let mut e = vec![ring.zero(); ncols];
            e[j] = ring.one();
            e
        })
        .collect(); // colt[j] = expression of working column j in original coordinates
    let steps = nrows.min(ncols);
    let mut diag_vals: Vec<u32> = Vec::new();
    for k in 0..steps {
        let mut best: Option<(usize, usize, u32)> = None;
        for i in k..nrows {
            for j in k..ncols {
                let v = ring.val_p(&m[i][j]);
                if v < prec && best.map_or(true, |(_, _, bv)| v < bv) {
                    best = Some((i, j, v));
                }
            }
        }
        let Some((bi, bj, v)) = best else { break };
        m.swap(k, bi);
        for row in m.iter_mut() {
            row.swap(k, bj);
        }
        colt.swap(k, bj);
        let unit = div_p_pow(ring, &m[k][k], v);
        let uinv = ring.inv(&unit).expect("minimal-valuation pivot has unit cofactor");
        for x in m[k].iter_mut() {
            *x = ring.mul(x, &uinv);
        }
        for i in 0..nrows {
            if i == k || ring.val_p(&m[i][k]) >= prec {
                continue;
            }
            let q = div_p_pow(ring, &m[i][k], v);
            let row_k = m[k].clone();
            for (j, x) in m[i].iter_mut().enumerate() {
                *x = ring.sub(x, &ring.mul(&q, &row_k[j]));
            }
        }
        for j in k + 1..ncols {
            if ring.val_p(&m[k][j]) >= prec {
                continue;
            }
            let q = div_p_pow(ring, &m[k][j], v);
            for row in m.iter_mut() {
                let t = ring.mul(&q, &row[k]);
                row[j] = ring.sub(&row[j], &t);
            }
            let ck = colt[k].clone();
            for (x, y) in colt[j].iter_mut().zip(&ck) {
                *x = ring.sub(x, &ring.mul(&q, y));
            }
        }
        diag_vals.push(v);
    }
    let mut gens = Vec::new();
    for (t, &v) in diag_vals.iter().enumerate() {
        if v > 0 {
            gens.push(
                colt[t]
                    .iter()
                    .map(|x| ring.scale_p_pow(x, prec - v))
                    .collect(),
            );
        }
    }
    for t in diag_vals.len()..ncols {
        gens.push(colt[t].clone());
    }
    gens
}

// ======================================================================
// The Dieudonne context
// ======================================================================

/// Witt-coordinate matrix entry for Psi input: a length-2n Witt vector.
pub type WittVec = Vec<FqElem>;

/// A single V^a [scalar] F^b term of a homomorphism between Witt group
/// schemes, with the scalar in Witt coordinates of W_n(k).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WittEndoTerm {
    pub v_shift: usize,
    pub scalar: WittVec,
    pub f_power: usize,
}

/// One covering Witt group W_{m,n} -> H together with its composite into
/// each E-factor, expressed as a sum of [`WittEndoTerm`]s into W_{n,n}.
#[derive(Clone, Debug)]
pub struct CoverMap {
    pub m: usize,
    pub factor_terms: Vec<Vec<WittEndoTerm>>,
}

pub struct DieudonneCtx {
    pub f: Fq,
    pub g: usize,
    pub n: u32,
    pub quat: QuatOrder,
    /// Psi on the order basis, 2x2 over GR(p^{2n}, k)
    pub psi: Vec<Mat<GaloisRing>>,
    pub gr2: GaloisRing,
    pub grn: GaloisRing,
    pub iso2: WittGrIso,
    pub ison: WittGrIso,
}

impl DieudonneCtx {
    /// Slot truncations of the ambient module of E^g[F^level], flattened as
    /// (delta, F delta) per factor.
    pub fn slots_level(g: usize, level: u32) -> Vec<u32> {
        let mut s = Vec::with_capacity(2 * g);
        for _ in 0..g {
            s.push(level.div_ceil(2));
            s.push(level / 2);
        }
        s
    }

    pub fn ambient_slots(&self) -> Vec<u32> {
        Self::slots_level(self.g, self.n)
    }

    pub fn new(
        f: Fq,
        g: usize,
        n: u32,
        quat: QuatOrder,
        psi_witt: &[Vec<Vec<WittVec>>],
    ) -> Result<Self, DieuError> {
        let iso2 = WittGrIso::new(&f, 2 * n);
        if psi_witt.len() != QDIM
            || psi_witt
                .iter()
                .any(|m| m.len() != 2 || m.iter().any(|r| r.len() != 2))
            || psi_witt
                .iter()
                .flatten()
                .flatten()
                .any(|w| w.len() as u32 != 2 * n)
        {
            return Err(DieuError::PsiShape);
        }
        let gr2 = iso2.gr.clone();
        let psi: Vec<Mat<GaloisRing>> = psi_witt
            .iter()
            .map(|m| {
                Mat::from_fn(&gr2, 2, 2, |r, c| iso2.to_gr(&m[r][c]))
            })
            .collect();
        let ctx = DieudonneCtx {
            ison: WittGrIso::new(&f, n),
            grn: GaloisRing::new(&f, n),
            f,
            g,
            n,
            quat,
            psi,
            gr2,
            iso2,
        };
        ctx.validate_psi()?;
        Ok(ctx)
    }

    /// The packaged representation for the standard order of B = (-1,-p):
    /// Psi(i) = diag([z], -[z]) for a Teichmueller fourth root of unity and
    /// Psi(F) = [[0,-p],[1,0]]; both are exact at every level.
    pub fn with_standard_psi(f: Fq, g: usize, n: u32, zeta4: &FqElem) -> Result<Self, DieuError> {
        let quat = QuatOrder::standard(f.p);
        let iso2 = WittGrIso::new(&f, 2 * n);
        let gr2 = &iso2.gr;
        let tz = gr2.teichmueller(&f, zeta4);
        assert!(
            gr2.is_one(&gr2.neg(&gr2.mul(&tz, &tz))),
            "zeta4 must square to -1"
        );
        let zero = gr2.zero();
        let one = gr2.one();
        let psi_i = vec![
            vec![tz.clone(), zero.clone()],
            vec![zero.clone(), gr2.neg(&tz)],
        ];
        let psi_f = vec![
            vec![zero.clone(), gr2.from_int(-(f.p as i64))],
            vec![one.clone(), zero.clone()],
        ];
        let psi_1 = vec![
            vec![one.clone(), zero.clone()],
            vec![zero.clone(), one.clone()],
        ];
        let mul2 = |a: &Vec<Vec<GaloisElem>>, b: &Vec<Vec<GaloisElem>>| -> Vec<Vec<GaloisElem>> {
            let mut out = vec![vec![gr2.zero(); 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    for t in 0..2 {
                        let m = gr2.mul(&a[r][t], &b[t][c]);
                        out[r][c] = gr2.add(&out[r][c], &m);
                    }
                }
            }
            out
        };
        let psi_if = mul2(&psi_i, &psi_f);
        let witt = |m: &Vec<Vec<GaloisElem>>| -> Vec<Vec<WittVec>> {
            m.iter()
                .map(|row| row.iter().map(|x| iso2.to_witt(x)).collect())
                .collect()
        };
        let psi_witt = vec![witt(&psi_1), witt(&psi_i), witt(&psi_f), witt(&psi_if)];
        Self::new(f, g, n, quat, &psi_witt)
    }

    fn rat_in_gr(&self, r: &crate::quat::Rat) -> Result<GaloisElem, DieuError> {
        let num = self.gr2.from_int(*r.numer());
        let den = self.gr2.from_int(*r.denom());
        let dinv = self.gr2.inv(&den).ok_or(DieuError::Denominator(*r.denom()))?;
        Ok(self.gr2.mul(&num, &dinv))
    }

    /// Psi extended linearly to arbitrary order elements.
    pub fn psi_of(&self, x: &QuatElem) -> Result<Mat<GaloisRing>, DieuError> {
        let mut out = Mat::zero(&self.gr2, 2, 2);
        for (a, c) in x.iter().enumerate() {
            if c.numer() == &0 {
                continue;
            }
            let s = self.rat_in_gr(c)?;
            for r in 0..2 {
                for cc in 0..2 {
                    let t = self.gr2.mul(&s, self.psi[a].at(r, cc));
                    *out.at_mut(r, cc) = self.gr2.add(out.at(r, cc), &t);
                }
            }
        }
        Ok(out)
    }

    fn validate_psi(&self) -> Result<(), DieuError> {
        let gr = &self.gr2;
        if self.psi[0] != Mat::identity(gr, 2) {
            return Err(DieuError::PsiIdentity);
        }
        for a in 0..QDIM {
            for b in 0..QDIM {
                let lhs = self.psi[a].mul(gr, &self.psi[b]);
                let rhs = self.psi_of(&self.quat.table[a][b])?;
                if lhs != rhs {
                    return Err(DieuError::PsiProduct(a, b));
                }
            }
        }
        let f2 = self.psi[self.quat.frob].mul(gr, &self.psi[self.quat.frob]);
        let want = Mat::identity(gr, 2).scale(gr, &gr.from_int(-(self.f.p as i64)));
        if f2 != want {
            return Err(DieuError::PsiFrobenius);
        }
        // adjunction against J = [[0,1],[-1,0]]: Psi(x)^T J = J Psi(conj x)
        let j = Mat::from_fn(gr, 2, 2, |r, c| {
            if r == 0 && c == 1 {
                gr.one()
            } else if r == 1 && c == 0 {
                gr.from_int(-1)
            } else {
                gr.zero()
            }
        });
        for a in 0..QDIM {
            let lhs = self.psi[a].transpose().mul(gr, &j);
            let rhs = j.mul(gr, &self.psi_of(&self.quat.conjugate(&self.quat.basis(a)))?);
            if lhs != rhs {
                return Err(DieuError::PsiAdjoint(a));
            }
        }
        Ok(())
    }

    /// Block matrix of Psi over a g x g Hermitian matrix over the order;
    /// 2g x 2g over GR(p^{2n}).
    pub fn psi_block(&self, gram: &[Vec<QuatElem>]) -> Result<Mat<GaloisRing>, DieuError> {
        if gram.len() != self.g
            || gram.iter().any(|r| r.len() != self.g)
            || !self.quat.is_hermitian(gram)
        {
            return Err(DieuError::GramShape);
        }
        let mut out = Mat::zero(&self.gr2, 2 * self.g, 2 * self.g);
        for br in 0..self.g {
            for bc in 0..self.g {
                let blk = self.psi_of(&gram[br][bc])?;
                for r in 0..2 {
                    for c in 0..2 {
                        *out.at_mut(2 * br + r, 2 * bc + c) = blk.at(r, c).clone();
                    }
                }
            }
        }
        Ok(out)
    }

    /// Frobenius on ambient coordinates at the stated level: per factor
    /// (a, b) -> (-p sigma(b), sigma(a)), from F delta = F delta and
    /// F^2 delta = -p delta.
    pub fn f_action(&self, ring: &GaloisRing, v: &[GaloisElem]) -> Vec<GaloisElem> {
        let mut out = Vec::with_capacity(v.len());
        for f in 0..self.g {
            let a = &v[2 * f];
            let b = &v[2 * f + 1];
            let sb = ring.frobenius(&self.f, b, 1);
            let sa = ring.frobenius(&self.f, a, 1);
            out.push(ring.neg(&ring.scale_p_pow(&sb, 1)));
            out.push(sa);
        }
        out
    }

    /// Verschiebung: per factor (a, b) -> (p sigma^{-1}(b), -sigma^{-1}(a)).
    pub fn v_action(&self, ring: &GaloisRing, v: &[GaloisElem]) -> Vec<GaloisElem> {
        let e = (self.f.k as u32) - 1;
        let mut out = Vec::with_capacity(v.len());
        for f in 0..self.g {
            let a = &v[2 * f];
            let b = &v[2 * f + 1];
            let sb = ring.frobenius(&self.f, b, e);
            let sa = ring.frobenius(&self.f, a, e);
            out.push(ring.scale_p_pow(&sb, 1));
            out.push(ring.neg(&sa));
        }
        out
    }

    /// The module of the kernel of the polarization determined by `gram`,
    /// as a submodule of the ambient module of E^g[F^n]. Rows of the matrix
    /// act as congruences mod p^{t_i}, which over GR(p^n) is the exact
    /// equation p^{n-t_i} (A x)_i = 0; column truncations are valid because
    /// of the slot-leak check.
    pub fn kernel_module(&self, gram: &[Vec<QuatElem>]) -> Result<Submodule, DieuError> {
        let slots = self.ambient_slots();
        let a2 = self.psi_block(gram)?;
        let dim = 2 * self.g;
        // reduce to level n
        let an: Vec<Vec<GaloisElem>> = (0..dim)
            .map(|r| {
                (0..dim)
                    .map(|c| self.grn.reduce_mod(a2.at(r, c), self.n))
                    .collect()
            })
            .collect();
        for (r, row) in an.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                let need = slots[r].saturating_sub(slots[c]);
                if self.grn.val_p(x) < need {
                    return Err(DieuError::SlotLeak(r, c));
                }
            }
        }
        let scaled: Vec<Vec<GaloisElem>> = an
            .iter()
            .zip(&slots)
            .map(|(row, &t)| {
                row.iter()
                    .map(|x| self.grn.scale_p_pow(x, self.n - t))
                    .collect()
            })
            .collect();
        let mut gens = kernel_free(&self.grn, &scaled);
        for (j, &s) in slots.iter().enumerate() {
            let mut e = vec![self.grn.zero(); dim];
            e[j] = self.grn.scale_p_pow(&self.grn.one(), s);
            gens.push(e);
        }
        Ok(Submodule::from_generators(&self.grn, &slots, &gens))
    }

    /// Module of the common kernel of a family of weighted row maps
    /// E^g -> E, x |-> F^w (sum_j gamma(r_j) x_j), intersected with
    /// E^g[F^n].  Each row contributes the 2 x 2g block
    /// Psi(F)^w [Psi(r_1) | ... | Psi(r_g)]; the kernel of the stacked
    /// matrix on the slot-truncated ambient module is returned in the same
    /// canonical form as [`Self::kernel_module`].
    pub fn row_kernel_module(
        &self,
        rows: &[(Vec<QuatElem>, u32)],
    ) -> Result<Submodule, DieuError> {
        let slots = self.ambient_slots();
        let dim = 2 * self.g;
        let image_slots = Self::slots_level(1, self.n);
        let mut blocks: Vec<Vec<GaloisElem>> = Vec::with_capacity(2 * rows.len());
        let mut row_slots: Vec<u32> = Vec::with_capacity(2 * rows.len());
        for (row, w) in rows {
            if row.len() != self.g {
                return Err(DieuError::GramShape);
            }
            let fw = self.psi[2].pow(&self.gr2, *w);
            let cells: Vec<Mat<GaloisRing>> = row
                .iter()
                .map(|e| Ok(fw.mul(&self.gr2, &self.psi_of(e)?)))
                .collect::<Result<_, DieuError>>()?;
            for r in 0..2 {
                blocks.push(
                    (0..dim)
                        .map(|c| self.grn.reduce_mod(cells[c / 2].at(r, c % 2), self.n))
                        .collect(),
                );
                row_slots.push(image_slots[r]);
            }
        }
        for (r, row) in blocks.iter().enumerate() {
            for (c, x) in row.iter().enumerate() {
                let need = row_slots[r].saturating_sub(slots[c]);
                if self.grn.val_p(x) < need {
                    return Err(DieuError::SlotLeak(r, c));
                }
            }
        }
        let scaled: Vec<Vec<GaloisElem>> = blocks
            .iter()
            .zip(&row_slots)
            .map(|(row, &t)| {
                row.iter()
                    .map(|x| self.grn.scale_p_pow(x, self.n - t))
                    .collect()
            })
            .collect();
        let mut gens = kernel_free(&self.grn, &scaled);
        for (j, &s) in slots.iter().enumerate() {
            let mut e = vec![self.grn.zero(); dim];
            e[j] = self.grn.scale_p_pow(&self.grn.one(), s);
            gens.push(e);
        }
        Ok(Submodule::from_generators(&self.grn, &slots, &gens))
    }

    /// The residue pairing behind the polarization: both arguments are
    /// carried into the module of E^g[F^{2n}] along multiplication by F^n,
    /// paired through J Psi(gram), and the value -- provably divisible by
    /// p^n and independent of the coordinate lifts -- is divided down to an
    /// element of W_n(k).
    pub fn pairing(
        &self,
        gram: &[Vec<QuatElem>],
        x: &[GaloisElem],
        y: &[GaloisElem],
    ) -> Result<GaloisElem, DieuError> {
        let a2 = self.psi_block(gram)?;
        let dim = 2 * self.g;
        let lift = |v: &[GaloisElem]| -> Vec<GaloisElem> {
            let mut out = v.to_vec();
            for _ in 0..self.n {
                out = self.f_action(&self.gr2, &out);
            }
            out
        };
        let xx = lift(x);
        let yy = lift(y);
        let mut w = vec![self.gr2.zero(); dim];
        for r in 0..dim {
            for c in 0..dim {
                let t = self.gr2.mul(a2.at(r, c), &yy[c]);
                w[r] = self.gr2.add(&w[r], &t);
            }
        }
        // J per factor: (Jw)_{2f} = w_{2f+1}, (Jw)_{2f+1} = -w_{2f}
        let mut acc = self.gr2.zero();
        for f in 0..self.g {
            let t1 = self.gr2.mul(&xx[2 * f], &w[2 * f + 1]);
            let t2 = self.gr2.mul(&xx[2 * f + 1], &w[2 * f]);
            acc = self.gr2.add(&acc, &self.gr2.sub(&t1, &t2));
        }
        if self.gr2.val_p(&acc) < self.n {
            return Err(DieuError::PairingNotIntegral);
        }
        Ok(self.grn.reduce_mod(&div_p_pow(&self.gr2, &acc, self.n), self.n))
    }

    /// Isotropy of a submodule under the polarization pairing, tested on
    /// all pairs of additive generators (the pairing is bi-additive but not
    /// W-bilinear, so generator pairs alone would not suffice).
    pub fn is_isotropic(
        &self,
        gram: &[Vec<QuatElem>],
        sub: &Submodule,
    ) -> Result<bool, DieuError> {
        let gens = sub.additive_generators();
        for x in &gens {
            for y in &gens {
                if !self.grn.is_zero(&self.pairing(gram, x, y)?) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Maximal isotropic: contained in the kernel module, isotropic, and of
    /// exactly half the kernel's length.
    pub fn is_maximal_isotropic(
        &self,
        gram: &[Vec<QuatElem>],
        sub: &Submodule,
    ) -> Result<bool, DieuError> {
        let kernel = self.kernel_module(gram)?;
        if !sub.is_subset_of(&kernel) {
            return Ok(false);
        }
        if 2 * sub.length() != kernel.length() {
            return Ok(false);
        }
        self.is_isotropic(gram, sub)
    }

    /// Coordinate splitting along a submodule whose pivots are unit
    /// (valuation 0): ambient = submodule + span of non-pivot coordinates.
    /// Returns the canonical projection pair for `v`.
    pub fn split(
        &self,
        sub: &Submodule,
        v: &[GaloisElem],
    ) -> Result<(Vec<GaloisElem>, Vec<GaloisElem>), DieuError> {
        if let Some(&(_, pv)) = sub.pivots.iter().find(|&&(_, pv)| pv > 0) {
            return Err(DieuError::NotASummand(pv));
        }
        let (coeffs, rest) = sub.reduce_vector(v);
        // remainder is supported away from the pivot columns
        debug_assert!(sub
            .pivots
            .iter()
            .all(|&(c, _)| self.grn.is_zero(&rest[c])));
        let mut proj = vec![self.grn.zero(); v.len()];
        for (q, row) in coeffs.iter().zip(&sub.rows) {
            for (j, x) in row.iter().enumerate() {
                let t = self.grn.mul(q, x);
                proj[j] = self
                    .grn
                    .reduce_mod(&self.grn.add(&proj[j], &t), sub.slots[j]);
            }
        }
        Ok((proj, rest))
    }

    /// Covering Witt groups for the subgroup with module `sub`. Each
    /// canonical generator row yields one cover; n = 1 subgroups are
    /// covered by alpha_p-type groups whose factor maps are the plain
    /// scalars of the row.
    pub fn witt_cover(&self, sub: &Submodule) -> Result<Vec<CoverMap>, DieuError> {
        if self.n != 1 {
            return Err(DieuError::CoverUnsupported(format!(
                "covers are constructed for n = 1 kernels; this context has n = {}",
                self.n
            )));
        }
        let mut covers = Vec::new();
        for (row, &(_, v)) in sub.rows.iter().zip(&sub.pivots) {
            if v != 0 {
                return Err(DieuError::CoverUnsupported(
                    "generator with non-unit pivot".to_string(),
                ));
            }
            let mut factor_terms = Vec::with_capacity(self.g);
            for f in 0..self.g {
                let coord = &row[2 * f];
                if self.grn.is_zero(coord) {
                    factor_terms.push(Vec::new());
                } else {
                    factor_terms.push(vec![WittEndoTerm {
                        v_shift: 0,
                        scalar: self.ison.to_witt(coord),
                        f_power: 0,
                    }]);
                }
            }
            covers.push(CoverMap { m: 1, factor_terms });
        }
        Ok(covers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Rat;
    use crate::witt::WittCtx;

    fn f81() -> Fq {
        Fq::new(3, 4)
    }

    fn zeta4(f: &Fq) -> FqElem {
        // order-4 element of the multiplicative group
        let g = f.gen();
        let z = f.pow(&g, (f.order() - 1) / 4);
        assert!(f.is_one(&f.neg(&f.mul(&z, &z))));
        z
    }

    /// The running g = 2 polarization: gram = [[p, (1+i)F], [-(1+i)F, p]].
    fn mb_gram(o: &QuatOrder) -> Vec<Vec<QuatElem>> {
        let a = o.parse("(1+i)F").unwrap();
        vec![
            vec![o.scalar(Rat::from_integer(3)), a.clone()],
            vec![o.neg(&a), o.scalar(Rat::from_integer(3))],
        ]
    }

    fn mb_ctx() -> DieudonneCtx {
        let f = f81();
        let z = zeta4(&f);
        DieudonneCtx::with_standard_psi(f, 2, 1, &z).unwrap()
    }

    #[test]
    fn witt_gr_iso_is_a_ring_map() {
        let f9 = Fq::new(3, 2);
        let iso = WittGrIso::new(&f9, 2);
        let w = WittCtx::new(f9.clone(), 2);
        let elems: Vec<_> = f9.all_elements().collect();
        for t in 0..25u64 {
            let a = vec![
                elems[(t * 3 + 1) as usize % 9].clone(),
                elems[(t * 5 + 2) as usize % 9].clone(),
            ];
            let b = vec![
                elems[(t * 7 + 4) as usize % 9].clone(),
                elems[(t + 6) as usize % 9].clone(),
            ];
            let lhs = iso.to_gr(&w.add(&a, &b));
            let rhs = iso.gr.add(&iso.to_gr(&a), &iso.to_gr(&b));
            assert_eq!(lhs, rhs);
            let lhs = iso.to_gr(&w.mul(&a, &b));
            let rhs = iso.gr.mul(&iso.to_gr(&a), &iso.to_gr(&b));
            assert_eq!(lhs, rhs);
            assert_eq!(iso.to_witt(&iso.to_gr(&a)), a);
        }
        assert_eq!(iso.to_gr(&w.one()), iso.gr.one());
    }

    #[test]
    fn standard_psi_validates() {
        let ctx = mb_ctx();
        // multiplicativity, F^2 = -p and the J-adjunction all ran in new();
        // spot-check one product by hand: Psi(iF) = Psi(i) Psi(F)
        let gr = &ctx.gr2;
        let prod = ctx.psi[1].mul(gr, &ctx.psi[2]);
        assert_eq!(prod, ctx.psi[3]);
    }

    #[test]
    fn psi_rejects_wrong_frobenius_normalization() {
        let f = f81();
        let z = zeta4(&f);
        let good = DieudonneCtx::with_standard_psi(f.clone(), 1, 1, &z).unwrap();
        // corrupt Psi(F) by a unit scalar: multiplicativity at (F,F) breaks
        let iso2 = &good.iso2;
        let mut psi_witt: Vec<Vec<Vec<WittVec>>> = good
            .psi
            .iter()
            .map(|m| {
                (0..2)
                    .map(|r| (0..2).map(|c| iso2.to_witt(m.at(r, c))).collect())
                    .collect()
            })
            .collect();
        let two = good.gr2.from_int(2);
        for r in 0..2 {
            for c in 0..2 {
                let x = iso2.to_gr(&psi_witt[2][r][c]);
                psi_witt[2][r][c] = iso2.to_witt(&good.gr2.mul(&x, &two));
            }
        }
        let err = DieudonneCtx::new(f, 1, 1, QuatOrder::standard(3), &psi_witt);
        assert!(matches!(
            err,
            Err(DieuError::PsiProduct(_, _)) | Err(DieuError::PsiFrobenius)
        ));
    }

    #[test]
    fn frobenius_verschiebung_structure() {
        let ctx = mb_ctx();
        let gr = &ctx.gr2;
        let v: Vec<GaloisElem> = vec![
            gr.from_int(4),
            vec![1, 2, 0, 1],
            vec![5, 0, 3, 2],
            gr.from_int(7),
        ];
        let fv = ctx.f_action(gr, &ctx.v_action(gr, &v));
        let vf = ctx.v_action(gr, &ctx.f_action(gr, &v));
        let pv: Vec<GaloisElem> = v.iter().map(|x| gr.scale_p_pow(x, 1)).collect();
        assert_eq!(fv, pv);
        assert_eq!(vf, pv);
        // F^2 = -p sigma^2
        let ff = ctx.f_action(gr, &ctx.f_action(gr, &v));
        let want: Vec<GaloisElem> = v
            .iter()
            .map(|x| gr.neg(&gr.scale_p_pow(&gr.frobenius(&ctx.f, x, 2), 1)))
            .collect();
        assert_eq!(ff, want);
    }

    #[test]
    fn kernel_of_identity_is_zero() {
        let ctx = mb_ctx();
        let o = &ctx.quat;
        let gram = vec![
            vec![o.one(), o.zero()],
            vec![o.zero(), o.one()],
        ];
        let k = ctx.kernel_module(&gram).unwrap();
        assert_eq!(k.length(), 0);
        assert!(k.rows.is_empty());
    }

    #[test]
    fn kernel_of_p_times_identity_has_length_2g() {
        // level n = 2: E^g[p] = E^g[F^2] is everything
        let f = f81();
        let z = zeta4(&f);
        for g in [1usize, 2, 3] {
            let ctx = DieudonneCtx::with_standard_psi(f.clone(), g, 2, &z).unwrap();
            let o = &ctx.quat;
            let gram: Vec<Vec<QuatElem>> = (0..g)
                .map(|r| {
                    (0..g)
                        .map(|c| {
                            if r == c {
                                o.scalar(Rat::from_integer(3))
                            } else {
                                o.zero()
                            }
                        })
                        .collect()
                })
                .collect();
            let k = ctx.kernel_module(&gram).unwrap();
            assert_eq!(k.length(), 2 * g as u32);
        }
    }

    #[test]
    fn mb_kernel_has_length_two_and_all_lines_are_maximal_isotropic() {
        let ctx = mb_ctx();
        let gram = mb_gram(&ctx.quat);
        let k = ctx.kernel_module(&gram).unwrap();
        assert_eq!(k.length(), 2);
        // ambient delta-coordinates are free mod p; the kernel is everything
        let slots = ctx.ambient_slots();
        assert_eq!(slots, vec![1, 0, 1, 0]);

        let grn = &ctx.grn;
        let mut n_f9 = 0usize;
        let mut lines: Vec<Vec<GaloisElem>> = Vec::new();
        for a in ctx.f.all_elements() {
            lines.push(vec![
                grn.one(),
                grn.zero(),
                grn.lift(&a),
                grn.zero(),
            ]);
        }
        lines.push(vec![grn.zero(), grn.zero(), grn.one(), grn.zero()]);
        assert_eq!(lines.len(), 82); // P^1(F_81)
        for line in &lines {
            let sub = Submodule::from_generators(grn, &ctx.ambient_slots(), &[line.clone()]);
            assert_eq!(sub.length(), 1);
            assert!(ctx.is_maximal_isotropic(&gram, &sub).unwrap());
            let lam = &line[2];
            let ratio_in_f9 = grn.is_zero(&line[0])
                || ctx.f.in_subfield(&grn.reduce(&ctx.f, lam), 2);
            if ratio_in_f9 {
                n_f9 += 1;
            }
        }
        // the decomposable locus: exactly P^1(F_9) many lines
        assert_eq!(n_f9, 10);
    }

    #[test]
    fn pairing_is_independent_of_coordinate_lifts() {
        let ctx = mb_ctx();
        let gram = mb_gram(&ctx.quat);
        let grn = &ctx.grn;
        let lam = grn.lift(&ctx.f.gen());
        let x = vec![grn.one(), grn.zero(), lam.clone(), grn.zero()];
        let y = vec![grn.from_int(2), grn.zero(), grn.one(), grn.zero()];
        let base = ctx.pairing(&gram, &x, &y).unwrap();
        // slot-0 coordinates are pure junk; the value must not move
        for junk in [1u64, 2, 5, 7] {
            let mut x2 = x.clone();
            let mut y2 = y.clone();
            x2[1] = vec![junk, junk + 1, 0, 3];
            y2[3] = vec![2 * junk % 3, 0, junk, 1];
            assert_eq!(ctx.pairing(&gram, &x2, &y2).unwrap(), base);
        }
        // bi-additivity on the nose
        let xs = vec![
            grn.add(&x[0], &y[0]),
            grn.zero(),
            grn.add(&x[2], &y[2]),
            grn.zero(),
        ];
        let lhs = ctx.pairing(&gram, &xs, &y).unwrap();
        let rhs = grn.add(
            &ctx.pairing(&gram, &x, &y).unwrap(),
            &ctx.pairing(&gram, &y, &y).unwrap(),
        );
        assert_eq!(lhs, rhs);
        // alternating
        assert!(grn.is_zero(&ctx.pairing(&gram, &x, &x).unwrap()));
        // and non-degenerate between distinct lines
        assert!(!grn.is_zero(&base));
    }

    #[test]
    fn howell_form_is_canonical() {
        let f9 = Fq::new(3, 2);
        let ring = GaloisRing::new(&f9, 2);
        let slots = vec![2u32, 2, 1];
        let g1 = vec![ring.from_int(1), ring.from_int(3), ring.from_int(2)];
        let g2 = vec![ring.from_int(0), ring.from_int(3), ring.from_int(1)];
        let a = Submodule::from_generators(&ring, &slots, &[g1.clone(), g2.clone()]);
        // same module from recombined generators
        let g1b = {
            let mut v = vec![ring.zero(); 3];
            for j in 0..3 {
                v[j] = ring.add(&g1[j], &ring.mul(&ring.from_int(4), &g2[j]));
            }
            v
        };
        let g2b = {
            let mut v = vec![ring.zero(); 3];
            for j in 0..3 {
                v[j] = ring.add(&ring.mul(&ring.from_int(7), &g1[j]), &g2[j]);
            }
            v
        };
        // a unimodular recombination: [[1,3],[1,1]] has det -2, a unit mod 9
        let g2c = {
            let mut v = vec![ring.zero(); 3];
            for j in 0..3 {
                v[j] = ring.add(&g1[j], &g2[j]);
            }
            v
        };
        let g1c = {
            let mut v = vec![ring.zero(); 3];
            for j in 0..3 {
                v[j] = ring.add(&g1[j], &ring.mul(&ring.from_int(3), &g2[j]));
            }
            v
        };
        let b = Submodule::from_generators(&ring, &slots, &[g1c, g2c]);
        assert_eq!(a, b);
        let c = Submodule::from_generators(&ring, &slots, &[g1b, g2b, g1, g2]);
        assert_eq!(a, c);
        // membership and length agree with direct counting: enumerate
        let mut count = 0u32;
        let dim = 3usize;
        let total: u64 = 9 * 9 * 3;
        for idx in 0..total {
            let mut v = Vec::with_capacity(dim);
            let mut t = idx;
            for &s in &slots {
                let m = 3u64.pow(s);
                v.push(ring.from_int((t % m) as i64));
                t /= m;
            }
            if a.contains(&v) {
                count += 1;
            }
        }
        assert_eq!(count, 3u32.pow(a.length()));
    }

    #[test]
    fn kernel_free_matches_enumeration() {
        let f3 = Fq::new(3, 1);
        let ring = GaloisRing::new(&f3, 2);
        let a = vec![
            vec![ring.from_int(3), ring.from_int(1), ring.from_int(4)],
            vec![ring.from_int(0), ring.from_int(3), ring.from_int(6)],
        ];
        let gens = kernel_free(&ring, &a);
        let slots = vec![2u32; 3];
        let sub = Submodule::from_generators(&ring, &slots, &gens);
        let mut count = 0u32;
        for x0 in 0..9u64 {
            for x1 in 0..9u64 {
                for x2 in 0..9u64 {
                    let v = vec![
                        ring.from_int(x0 as i64),
                        ring.from_int(x1 as i64),
                        ring.from_int(x2 as i64),
                    ];
                    let mut ok = true;
                    for row in &a {
                        let mut acc = ring.zero();
                        for (x, c) in v.iter().zip(row) {
                            acc = ring.add(&acc, &ring.mul(x, c));
                        }
                        if !ring.is_zero(&acc) {
                            ok = false;
                        }
                    }
                    if ok {
                        assert!(sub.contains(&v), "kernel misses {:?}", v);
                        count += 1;
                    } else {
                        assert!(!sub.contains(&v), "kernel overshoots {:?}", v);
                    }
                }
            }
        }
        assert_eq!(count, 3u32.pow(sub.length()));
    }

    #[test]
    fn row_kernels_of_the_divisor_families() {
        let ctx = mb_ctx();
        let o = &ctx.quat;
        let grn = &ctx.grn;
        let one = o.scalar(Rat::from_integer(1));
        let zero = o.scalar(Rat::from_integer(0));
        let a = o.parse("1 - i").unwrap();
        let mf = o.parse("-F").unwrap();
        let ff = o.parse("F").unwrap();
        // first family: rows (1,0) and (1-i,-F); common kernel 0 x E[F]
        let d_rows = vec![
            (vec![one.clone(), zero.clone()], 0u32),
            (vec![a.clone(), mf], 0u32),
        ];
        let m0 = ctx.row_kernel_module(&d_rows).unwrap();
        let e2 = vec![grn.zero(), grn.zero(), grn.one(), grn.zero()];
        let exp0 = Submodule::from_generators(grn, &ctx.ambient_slots(), &[e2]);
        assert!(m0.is_subset_of(&exp0) && exp0.is_subset_of(&m0));
        // second family: rows (0,1) and (F,1-i); common kernel E[F] x 0
        let d1_rows = vec![
            (vec![zero.clone(), one.clone()], 0u32),
            (vec![ff, a], 0u32),
        ];
        let m1 = ctx.row_kernel_module(&d1_rows).unwrap();
        let e0 = vec![grn.one(), grn.zero(), grn.zero(), grn.zero()];
        let exp1 = Submodule::from_generators(grn, &ctx.ambient_slots(), &[e0]);
        assert!(m1.is_subset_of(&exp1) && exp1.is_subset_of(&m1));
        // the two lines together span the module of ker eta = E^2[F]
        let gram = mb_gram(o);
        let kernel = ctx.kernel_module(&gram).unwrap();
        assert!(m0.is_subset_of(&kernel) && m1.is_subset_of(&kernel));
        let mut gens = m0.rows.clone();
        gens.extend(m1.rows.clone());
        let joint = Submodule::from_generators(grn, &ctx.ambient_slots(), &gens);
        assert!(joint.is_subset_of(&kernel) && kernel.is_subset_of(&joint));
        // a weighted row F^1 (1,0) swallows the first factor's E[F]
        let weighted = vec![(vec![one, zero], 1u32)];
        let mw = ctx.row_kernel_module(&weighted).unwrap();
        assert!(exp1.is_subset_of(&mw));
        assert_eq!(mw.length(), 2);
    }

    #[test]
    fn splitting_decomposes_coordinates() {
        let ctx = mb_ctx();
        let gram = mb_gram(&ctx.quat);
        let grn = &ctx.grn;
        let lam = grn.lift(&ctx.f.gen());
        let line = vec![grn.one(), grn.zero(), lam, grn.zero()];
        let sub = Submodule::from_generators(grn, &ctx.ambient_slots(), &[line]);
        let _ = gram;
        let v = vec![grn.from_int(2), grn.zero(), grn.from_int(1), grn.zero()];
        let (proj, rest) = ctx.split(&sub, &v).unwrap();
        // decomposition is exact
        for j in 0..4 {
            let sum = grn.reduce_mod(&grn.add(&proj[j], &rest[j]), ctx.ambient_slots()[j]);
            assert_eq!(sum, grn.reduce_mod(&v[j], ctx.ambient_slots()[j]));
        }
        assert!(sub.contains(&proj));
        // remainder lives on the complementary coordinate
        assert!(grn.is_zero(&rest[0]));
        assert!(!grn.is_zero(&rest[2]));
    }

    #[test]
    fn covers_for_rank_one_kernels() {
        let ctx = mb_ctx();
        let grn = &ctx.grn;
        let lam = grn.lift(&ctx.f.gen());
        let line = vec![grn.one(), grn.zero(), lam.clone(), grn.zero()];
        let sub = Submodule::from_generators(grn, &ctx.ambient_slots(), &[line]);
        let covers = ctx.witt_cover(&sub).unwrap();
        assert_eq!(covers.len(), 1);
        assert_eq!(covers[0].m, 1);
        assert_eq!(covers[0].factor_terms[0].len(), 1);
        let t0 = &covers[0].factor_terms[0][0];
        assert_eq!((t0.v_shift, t0.f_power), (0, 0));
        assert!(ctx.f.is_one(&t0.scalar[0]));
        let t1 = &covers[0].factor_terms[1][0];
        assert_eq!(t1.scalar[0], ctx.f.gen());
    }
}
