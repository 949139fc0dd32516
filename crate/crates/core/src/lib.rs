//! Exact arithmetic for theta nullvalues of supersingular principally
//! polarized abelian varieties.
//!
//! The input is a variety presented as a quotient E^g / H, where E is a
//! supersingular elliptic curve over a finite field k of characteristic p
//! and H is a finite subgroup scheme handed to us through its Dieudonne
//! module. The output is the full table of algebraic theta nullvalues of
//! level (2, 4) for the quotient, computed exactly in k (with the fourth
//! root of unity adjoined when needed), plus derived data: the vanishing
//! profile and, for g = 2 Jacobians, Rosenhain invariants.
//!
//! Layering, bottom to top:
//!
//! * [`ffield`] - finite fields F_{p^k} and nilpotent coordinate rings.
//! * [`witt`] - truncated Witt vectors over arbitrary coefficient rings,
//!   Artin-Hasse exponentials and the residue pairing.
//! * [`comod`] - comodules over the coordinate rings of the kernels of
//!   Frobenius powers; invariant vectors.
//! * [`dieudonne`] - Dieudonne modules of E^g[F^n], kernels of matrices of
//!   quaternions, isotropy tests, Witt covers.
//! * [`ecurve`] - elliptic curves, endomorphism rings, torsion frames,
//!   divisors on E^g presented by quaternion rows, formal groups.
//! * [`sections`] - the function-field engine: sections of the line bundle
//!   attached to a polarization, translation operators (exact and formal),
//!   descent of sections along H.
//! * [`thetanull`] - finite Heisenberg groups, theta structures, the
//!   nullvalue tables, duplication, Rosenhain invariants.
//! * [`cli`] - run configuration, validation, pipeline orchestration and
//!   JSON output. The `supertheta` binary is a thin wrapper over this.

pub mod cli;
pub mod comod;
pub mod mat;
pub mod quat;
pub mod dieudonne;
pub mod ecurve;
pub mod ffield;
pub mod sections;
pub mod thetanull;
pub mod witt;
