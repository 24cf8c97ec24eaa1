//! Exact connectivity probabilities of the wired uniform spanning tree (UST)
//! and boundary-visit probabilities of the loop-erased random walk (LERW) on
//! square-grid graphs, together with their conformally covariant continuum
//! counterparts.
//!
//! The library is organized around a determinant formula: connectivity
//! probabilities are inverse Fomin-type sums
//! `Z_α = Σ_{β ⪰ α} M⁻¹_{α,β} Δ_β` where `M⁻¹` counts cover-inclusive Dyck
//! tilings and `Δ_β` are link-pattern determinants of the discrete excursion
//! kernel. The modules:
//!
//! * [`combinatorics`] — Dyck paths / link patterns, the dominance and
//!   parenthesis-reversal orders, nested and cover-inclusive Dyck tilings,
//!   weighted incidence matrices, and the encoding of boundary-visit orders
//!   into link patterns.
//! * [`lattice`] — square-grid approximations of rectilinear domains,
//!   discrete harmonic measure, and excursion-kernel matrices (exact rational
//!   or floating point).
//! * [`exact`] — the determinant formulas themselves: `Δ_β`, `Z_α`,
//!   boundary-visit probabilities via the direct ratio and via the discrete
//!   replacing algorithm, and the free-UST boundary-touching-subtree formula.
//! * [`montecarlo`] — Wilson's-algorithm UST sampling, loop erasure, and
//!   event estimators used as a stochastic cross-check.
//! * [`continuum`] — the continuum kernel `(y−x)⁻²` with derivatives, pure
//!   partition functions `𝒵_α`, boundary-visit amplitudes `ζ_ω` via the
//!   continuous replacing algorithm, Möbius covariance, PDE residual checks,
//!   collapse-limit extrapolation, and the rectangle ↔ half-plane elliptic
//!   conformal map.
//! * [`oracle`] — brute-force ground truth: exhaustive spanning-tree
//!   enumeration and exact rational harmonic measure on tiny graphs.
//!
//! # Example
//!
//! The `N = 2` incidence matrix of the Dyck-path order and its inverse, with
//! unit tile weights:
//!
//! ```
//! use num::{BigRational, One};
//! use ustlerw::combinatorics::incidence_matrices;
//!
//! let (m, minv) = incidence_matrices(2, &|_| BigRational::one()).unwrap();
//! // canonical order: "()()" (unnested) first, "(())" (rainbow) last
//! assert_eq!(m.entry_i64(0, 1), Some(-1));
//! assert_eq!(minv.entry_i64(0, 1), Some(1));
//! ```

pub mod combinatorics;
pub mod continuum;
pub mod exact;
pub mod lattice;
pub mod linalg;
pub mod montecarlo;
pub mod oracle;
