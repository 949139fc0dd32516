//! Small dense matrices over the coefficient rings.
//!
//! Nothing here is performance-sensitive: dimensions are single digits for
//! the quaternion and Dieudonne-module work, and a few hundred for the
//! bicharacter rank checks. Row reduction is only available over fields.

use crate::ffield::{Fq, FqElem, Ring};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mat<R: Ring> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<R::Elem>,
}

impl<R: Ring> Mat<R> {
    pub fn new(rows: usize, cols: usize, data: Vec<R::Elem>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn zero(ring: &R, rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![ring.zero(); rows * cols],
        }
    }

    pub fn identity(ring: &R, n: usize) -> Self {
        let mut m = Self::zero(ring, n, n);
        for i in 0..n {
            *m.at_mut(i, i) = ring.one();
        }
        m
    }

    pub fn from_fn(ring: &R, rows: usize, cols: usize, f: impl Fn(usize, usize) -> R::Elem) -> Self {
        let _ = ring;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn at(&self, i: usize, j: usize) -> &R::Elem {
        &self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut R::Elem {
        &mut self.data[i * self.cols + j]
    }

    pub fn add(&self, ring: &R, other: &Self) -> Self {
        assert!(self.rows == other.rows && self.cols == other.cols);
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| ring.add(a, b))
                .collect(),
        }
    }

    pub fn neg(&self, ring: &R) -> Self {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| ring.neg(a)).collect(),
        }
    }

    pub fn sub(&self, ring: &R, other: &Self) -> Self {
        self.add(ring, &other.neg(ring))
    }

    pub fn mul(&self, ring: &R, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zero(ring, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if ring.is_zero(a) {
                    continue;
                }
                for j in 0..other.cols {
                    let t = ring.mul(a, other.at(k, j));
                    *out.at_mut(i, j) = ring.add(out.at(i, j), &t);
                }
            }
        }
        out
    }

    pub fn scale(&self, ring: &R, c: &R::Elem) -> Self {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| ring.mul(a, c)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.at(i, j).clone());
            }
        }
        Mat {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn is_zero(&self, ring: &R) -> bool {
        self.data.iter().all(|a| ring.is_zero(a))
    }

    pub fn apply(&self, ring: &R, v: &[R::Elem]) -> Vec<R::Elem> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                ring.sum(
                    (0..self.cols).map(|j| ring.mul(self.at(i, j), &v[j])),
                )
            })
            .collect()
    }

    pub fn pow(&self, ring: &R, e: u32) -> Self {
        assert_eq!(self.rows, self.cols);
        let mut acc = Self::identity(ring, self.rows);
        for _ in 0..e {
            acc = acc.mul(ring, self);
        }
        acc
    }
}

/// Row-echelon data over a field: rank, pivot columns and the reduced matrix.
pub struct Echelon {
    pub rank: usize,
    pub pivots: Vec<usize>,
    pub reduced: Mat<Fq>,
}

impl Mat<Fq> {
    pub fn echelon(&self, f: &Fq) -> Echelon {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0usize;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let piv = (r..m.rows).find(|&i| !f.is_zero(m.at(i, c)));
            let Some(piv) = piv else { continue };
            for j in 0..m.cols {
                let tmp = m.at(piv, j).clone();
                *m.at_mut(piv, j) = m.at(r, j).clone();
                *m.at_mut(r, j) = tmp;
            }
            let inv = f.inv(m.at(r, c)).unwrap();
            for j in 0..m.cols {
                *m.at_mut(r, j) = f.mul(m.at(r, j), &inv);
            }
            for i in 0..m.rows {
                if i != r && !f.is_zero(m.at(i, c)) {
                    let factor = m.at(i, c).clone();
                    for j in 0..m.cols {
                        let t = f.mul(&factor, m.at(r, j));
                        *m.at_mut(i, j) = f.sub(m.at(i, j), &t);
                    }
                }
            }
            pivots.push(c);
            r += 1;
        }
        Echelon {
            rank: r,
            pivots,
            reduced: m,
        }
    }

    pub fn rank(&self, f: &Fq) -> usize {
        self.echelon(f).rank
    }

    /// Basis of the right kernel.
    pub fn kernel(&self, f: &Fq) -> Vec<Vec<FqElem>> {
        let ech = self.echelon(f);
        let mut basis = Vec::new();
        let pivot_set: Vec<usize> = ech.pivots.clone();
        for c in 0..self.cols {
            if pivot_set.contains(&c) {
                continue;
            }
            let mut v = vec![f.zero(); self.cols];
            v[c] = f.one();
            for (r, &pc) in pivot_set.iter().enumerate() {
                v[pc] = f.neg(ech.reduced.at(r, c));
            }
            basis.push(v);
        }
        basis
    }

    /// One solution of self * x = b, if any.
    pub fn solve(&self, f: &Fq, b: &[FqElem]) -> Option<Vec<FqElem>> {
        assert_eq!(b.len(), self.rows);
        let mut aug = Mat::zero(f, self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *aug.at_mut(i, j) = self.at(i, j).clone();
            }
            *aug.at_mut(i, self.cols) = b[i].clone();
        }
        let ech = aug.echelon(f);
        if ech.pivots.contains(&self.cols) {
            return None; // inconsistent: pivot in the augmented column
        }
        let mut x = vec![f.zero(); self.cols];
        for (r, &pc) in ech.pivots.iter().enumerate() {
            x[pc] = ech.reduced.at(r, self.cols).clone();
        }
        Some(x)
    }

    pub fn inverse(&self, f: &Fq) -> Option<Mat<Fq>> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut aug = Mat::zero(f, n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                *aug.at_mut(i, j) = self.at(i, j).clone();
            }
            *aug.at_mut(i, n + i) = f.one();
        }
        let ech = aug.echelon(f);
        if ech.rank < n || ech.pivots[..n] != (0..n).collect::<Vec<_>>()[..] {
            return None;
        }
        let mut out = Mat::zero(f, n, n);
        for i in 0..n {
            for j in 0..n {
                *out.at_mut(i, j) = ech.reduced.at(i, n + j).clone();
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffield::Fq;

    #[test]
    fn solve_and_kernel_agree() {
        let f = Fq::new(3, 2);
        let m = Mat::new(
            2,
            3,
            vec![
                f.from_int(1),
                f.from_int(2),
                f.from_int(0),
                f.from_int(0),
                f.from_int(1),
                f.from_int(1),
            ],
        );
        assert_eq!(m.rank(&f), 2);
        let ker = m.kernel(&f);
        assert_eq!(ker.len(), 1);
        for v in &ker {
            assert!(m.apply(&f, v).iter().all(|c| f.is_zero(c)));
        }
        let b = vec![f.from_int(1), f.from_int(2)];
        let x = m.solve(&f, &b).unwrap();
        assert_eq!(m.apply(&f, &x), b);
    }

    #[test]
    fn inverse_roundtrip() {
        let f = Fq::new(5, 1);
        let m = Mat::new(
            2,
            2,
            vec![f.from_int(2), f.from_int(3), f.from_int(1), f.from_int(3)],
        );
        let inv = m.inverse(&f).unwrap();
        assert_eq!(m.mul(&f, &inv), Mat::identity(&f, 2));
        let sing = Mat::new(
            2,
            2,
            vec![f.from_int(1), f.from_int(2), f.from_int(2), f.from_int(4)],
        );
        assert!(sing.inverse(&f).is_none());
    }
}
