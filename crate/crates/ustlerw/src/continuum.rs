//! Continuum side of the scaling limits: the boundary excursion kernel `𝒦`
//! with its derivatives, pure partition functions `𝒵_α`, boundary-visit
//! amplitudes `ζ_ω` via the continuous replacing algorithm, Möbius-covariance
//! helpers, finite-difference residuals of the second- and third-order null
//! PDEs, Richardson-extrapolated collapse limits, and the Jacobi-elliptic
//! conformal map from a rectangle to the upper half-plane.

use crate::combinatorics::{
    visit_structure, wedge_ops, CombinatoricsError, LinkObject, VisitOrder, WedgeKind,
};
use crate::exact::{z_expansion, ExactError};
use crate::lattice::KernelMatrix;
use crate::linalg::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContinuumError {
    #[error("points must be in counterclockwise (strictly increasing, up to one cyclic wrap) order")]
    Unordered,
    #[error("marked points must be pairwise distinct")]
    CoincidentPoints,
    #[error("expected {0} points, got {1}")]
    SizeMismatch(usize, usize),
    #[error("Möbius map must have positive determinant ad − bc")]
    BadMobius,
    #[error("Möbius map has a pole at or between the given points")]
    MobiusPole,
    #[error("finite-difference step {0} too large for minimal point gap {1}")]
    StepTooLarge(f64, f64),
    #[error("extrapolation did not converge; level estimates {0:?}")]
    NotConverged(Vec<f64>),
    #[error("extrapolation needs at least {0} levels")]
    TooFewLevels(usize),
    #[error("visit index {0} out of range 1..={1}")]
    BadVisitIndex(usize, usize),
    #[error("aspect ratio {0} outside the supported range [0.2, 5]")]
    BadAspect(f64),
    #[error("point ({0}, {1}) is not on the rectangle boundary")]
    NotOnBoundary(f64, f64),
    #[error("point ({0}, {1}) lies within a corner-exclusion zone")]
    CornerZone(f64, f64),
    #[error(transparent)]
    Combinatorics(#[from] CombinatoricsError),
    #[error(transparent)]
    Exact(#[from] ExactError),
}

type Result<T> = std::result::Result<T, ContinuumError>;

/// The SLE parameter of the loop-erased random walk / uniform spanning tree.
pub const KAPPA: f64 = 2.0;
/// Conformal weight of the plain marked points (entry, exit, link endpoints).
pub const H_BOUNDARY: f64 = 1.0;
/// Conformal weight of the boundary-visit points.
pub const H_VISIT: f64 = 3.0;
/// Gap exponent of a vanishing link: `𝒵_α ~ (x_{j+1}−x_j)^{DELTA_LINK}`.
pub const DELTA_LINK: f64 = -2.0;
/// Gap exponent per collapsed pair in the definition of `ζ_ω`.
pub const DELTA_VISIT: f64 = 1.0;

// ---------------------------------------------------------------------------
// The excursion kernel and its derivatives
// ---------------------------------------------------------------------------

/// The half-plane boundary excursion kernel `𝒦(x, y) = (y − x)⁻²` and its
/// partial derivatives `∂₁^{dx} ∂₂^{dy} 𝒦` for `dx, dy ∈ {0, 1}`:
///
/// ```text
/// 𝒦     = (y−x)⁻²      ∂₁𝒦    =  2 (y−x)⁻³
/// ∂₂𝒦   = −2 (y−x)⁻³    ∂₁∂₂𝒦 = −6 (y−x)⁻⁴
/// ```
pub fn deriv_kernel<T: Scalar>(x: &T, y: &T, dx: u8, dy: u8) -> T {
    let d = y.clone() - x.clone();
    let d2 = d.clone() * d.clone();
    match (dx, dy) {
        (0, 0) => T::one() / d2,
        (1, 0) => T::from_i64(2) / (d2 * d),
        (0, 1) => T::from_i64(-2) / (d2 * d),
        (1, 1) => T::from_i64(-6) / (d2.clone() * d2),
        _ => panic!("derivative orders must be 0 or 1"),
    }
}

fn check_increasing<T: PartialOrd>(xs: &[T]) -> Result<()> {
    if xs.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(ContinuumError::Unordered)
    }
}

fn kernel_matrix_unchecked<T: Scalar>(xs: &[T]) -> KernelMatrix<T> {
    let n = xs.len();
    let values = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        T::zero()
                    } else {
                        deriv_kernel(&xs[i], &xs[j], 0, 0)
                    }
                })
                .collect()
        })
        .collect();
    KernelMatrix {
        edges: (0..n).collect(),
        values,
    }
}

/// The plain kernel matrix `𝒦(x_i, x_j)` over strictly increasing points.
pub fn kernel_matrix<T: Scalar + PartialOrd>(xs: &[T]) -> Result<KernelMatrix<T>> {
    check_increasing(xs)?;
    Ok(kernel_matrix_unchecked(xs))
}

/// The pure partition function `𝒵_α(x) = Σ_{β ⪰ α} M⁻¹_{α,β} Δ_β(𝒦)` at
/// strictly increasing boundary points `x_1 < … < x_{2N}`.
///
/// ```
/// use ustlerw::combinatorics::{rainbow, unnested};
/// use ustlerw::continuum::pure_partition_function;
///
/// let xs = [0.0, 1.0, 2.0, 3.0];
/// let z = pure_partition_function::<f64>(&unnested(2), &xs).unwrap();
/// assert!((z - 15.0 / 16.0).abs() < 1e-12);
/// let z = pure_partition_function::<f64>(&rainbow(2), &xs).unwrap();
/// assert!((z - 7.0 / 144.0).abs() < 1e-12);
/// ```
pub fn pure_partition_function<T: Scalar + PartialOrd>(alpha: &LinkObject, xs: &[T]) -> Result<T> {
    if xs.len() != 2 * alpha.n() {
        return Err(ContinuumError::SizeMismatch(2 * alpha.n(), xs.len()));
    }
    let kernel = kernel_matrix(xs)?;
    Ok(z_expansion(alpha, &kernel)?.value)
}

// ---------------------------------------------------------------------------
// Boundary-visit amplitudes via the continuous replacing algorithm
// ---------------------------------------------------------------------------

/// Number of cyclic descents of a sequence; a configuration read off in
/// counterclockwise label order is admissible iff this equals one (a strictly
/// increasing sequence up to one cyclic rotation).
fn cyclic_descents<T: PartialOrd>(seq: &[T]) -> usize {
    let m = seq.len();
    (0..m).filter(|&i| seq[i] >= seq[(i + 1) % m]).count()
}

/// The boundary-visit amplitude `ζ_ω(x_in; x̂_1, …, x̂_{N'}; x_out)`: the
/// iterated limit of `Π_s (x_{j_s+1} − x_{j_s})⁻¹ · 𝒵_{α(ω)}` as each label
/// pair housing a visit collapses, evaluated in closed form by the replacing
/// algorithm. Both labels of the pair of visit `s` carry the coordinate
/// `x̂_s`; the pair-internal kernel entries are zeroed and the second slot of
/// each pair holds the corresponding partial derivative of `𝒦`.
///
/// `hats` is indexed by visit time (the `s`-th entry is the `s`-th visited
/// point). The configuration must be admissible: all points distinct, and in
/// counterclockwise cyclic order compatible with `ω`.
///
/// ```
/// use ustlerw::combinatorics::VisitOrder;
/// use ustlerw::continuum::zeta_omega;
/// let omega: VisitOrder = "+".parse().unwrap();
/// let z = zeta_omega(&omega, &0.0, &[1.0], &2.0).unwrap();
/// assert!((z - 4.0).abs() < 1e-12);
/// ```
pub fn zeta_omega<T: Scalar + PartialOrd>(
    omega: &VisitOrder,
    x_in: &T,
    hats: &[T],
    x_out: &T,
) -> Result<T> {
    let np = omega.n_visits();
    if hats.len() != np {
        return Err(ContinuumError::SizeMismatch(np, hats.len()));
    }
    let vs = visit_structure(omega);
    let total = 2 * (np + 1);

    // pairwise-distinct marked points
    let mut marked: Vec<&T> = vec![x_in, x_out];
    marked.extend(hats.iter());
    for i in 0..marked.len() {
        for j in i + 1..marked.len() {
            if marked[i] == marked[j] {
                return Err(ContinuumError::CoincidentPoints);
            }
        }
    }

    // coordinate and derivative order per counterclockwise label
    let mut coord: Vec<&T> = vec![x_in; total + 1];
    let mut deriv = vec![0u8; total + 1];
    let mut pair_of = vec![usize::MAX; total + 1];
    coord[vs.in_label] = x_in;
    coord[vs.out_label] = x_out;
    for (s, &(lo, hi)) in vs.pairs.iter().enumerate() {
        coord[lo] = &hats[s];
        coord[hi] = &hats[s];
        deriv[hi] = 1;
        pair_of[lo] = s;
        pair_of[hi] = s;
    }

    // cyclic admissibility: label order must read the points counterclockwise
    let reduced: Vec<&T> = (1..=total)
        .filter(|&l| deriv[l] == 0)
        .map(|l| coord[l])
        .collect();
    if cyclic_descents(&reduced) != 1 {
        return Err(ContinuumError::Unordered);
    }

    let values: Vec<Vec<T>> = (1..=total)
        .map(|i| {
            (1..=total)
                .map(|j| {
                    if i == j || (pair_of[i] != usize::MAX && pair_of[i] == pair_of[j]) {
                        T::zero()
                    } else {
                        deriv_kernel(coord[i], coord[j], deriv[i], deriv[j])
                    }
                })
                .collect()
        })
        .collect();
    let replaced = KernelMatrix {
        edges: (0..total).collect(),
        values,
    };
    Ok(z_expansion(&vs.alpha, &replaced)?.value)
}

// ---------------------------------------------------------------------------
// Möbius covariance
// ---------------------------------------------------------------------------

/// A Möbius transformation `μ(x) = (ax + b)/(cx + d)` with `ad − bc > 0`
/// (orientation-preserving on the real line).
#[derive(Clone, Copy, Debug)]
pub struct Mobius {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mobius {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        if a * d - b * c > 0.0 {
            Ok(Mobius { a, b, c, d })
        } else {
            Err(ContinuumError::BadMobius)
        }
    }

    pub fn identity() -> Self {
        Mobius {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (self.a * x + self.b) / (self.c * x + self.d)
    }

    /// `μ′(x) = (ad − bc)/(cx + d)²`, strictly positive away from the pole.
    pub fn deriv(&self, x: f64) -> f64 {
        let q = self.c * x + self.d;
        (self.a * self.d - self.b * self.c) / (q * q)
    }

    fn pole(&self) -> Option<f64> {
        (self.c != 0.0).then(|| -self.d / self.c)
    }
}

/// Applies `μ` to a point configuration and returns the image points together
/// with the covariance factor `Π_i μ′(x_i)^{w_i}` for the given conformal
/// weights (`H_BOUNDARY` for plain points, `H_VISIT` for visit points).
/// Errors if the pole of `μ` lies among or between the points (the image
/// order would break).
pub fn apply_mobius(mu: &Mobius, xs: &[f64], weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    if weights.len() != xs.len() {
        return Err(ContinuumError::SizeMismatch(xs.len(), weights.len()));
    }
    if let Some(p) = mu.pole() {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if p >= lo - 1e-12 && p <= hi + 1e-12 {
            return Err(ContinuumError::MobiusPole);
        }
    }
    let images = xs.iter().map(|&x| mu.apply(x)).collect();
    let factor = xs
        .iter()
        .zip(weights)
        .map(|(&x, &w)| mu.deriv(x).powf(w))
        .product();
    Ok((images, factor))
}

// ---------------------------------------------------------------------------
// Finite-difference stencils and PDE residuals
// ---------------------------------------------------------------------------

/// Default finite-difference step as a fraction of the minimal point gap.
pub const FD_STEP_FACTOR: f64 = 1e-3;

fn shifted(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, t: f64) -> f64 {
    let mut y = x.to_vec();
    y[i] += t;
    f(&y)
}

/// Fourth-order central first derivative (5-point stencil, center unused).
fn d1(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let s = |t: f64| shifted(f, x, i, t);
    (s(-2.0 * h) - 8.0 * s(-h) + 8.0 * s(h) - s(2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second derivative (5-point stencil).
fn d2(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let s = |t: f64| shifted(f, x, i, t);
    (-s(-2.0 * h) + 16.0 * s(-h) - 30.0 * f(x) + 16.0 * s(h) - s(2.0 * h)) / (12.0 * h * h)
}

/// Fourth-order central third derivative (7-point stencil).
fn d3(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let s = |t: f64| shifted(f, x, i, t);
    (s(-3.0 * h) - 8.0 * s(-2.0 * h) + 13.0 * s(-h) - 13.0 * s(h) + 8.0 * s(2.0 * h)
        - s(3.0 * h))
        / (8.0 * h * h * h)
}

/// Mixed second derivative `∂_i ∂_j` by nesting the first-derivative stencil.
fn d1d1(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, j: usize, h: f64) -> f64 {
    let g = |y: &[f64]| d1(f, y, j, h);
    d1(&g, x, i, h)
}

fn min_pair_gap(xs: &[f64]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            gap = gap.min((xs[i] - xs[j]).abs());
        }
    }
    gap
}

fn normalized_residual(terms: &[f64]) -> f64 {
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    if scale == 0.0 {
        0.0
    } else {
        terms.iter().sum::<f64>() / scale
    }
}

fn check_step(x: &[f64], h: f64) -> Result<()> {
    let gap = min_pair_gap(x);
    if h > gap / 10.0 {
        Err(ContinuumError::StepTooLarge(h, gap))
    } else {
        Ok(())
    }
}

/// Finite-difference residual of the second-order null-field operator
///
/// ```text
/// 𝒟^{(j)} = ∂_j² − 2 Σ_{k≠j} [ w_k (x_k − x_j)⁻² − (x_k − x_j)⁻¹ ∂_k ]
/// ```
///
/// acting on `f`, normalized by the sum of the magnitudes of its terms.
/// `weights` carries the conformal weight of each variable.
pub fn second_order_residual(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    weights: &[f64],
    j: usize,
    h: f64,
) -> Result<f64> {
    if weights.len() != x.len() {
        return Err(ContinuumError::SizeMismatch(x.len(), weights.len()));
    }
    check_step(x, h)?;
    let f0 = f(x);
    let mut terms = vec![d2(f, x, j, h)];
    for k in 0..x.len() {
        if k == j {
            continue;
        }
        let d = x[k] - x[j];
        terms.push(2.0 * d1(f, x, k, h) / d);
        terms.push(-2.0 * weights[k] * f0 / (d * d));
    }
    Ok(normalized_residual(&terms))
}

/// Finite-difference residual of the third-order null-field operator
///
/// ```text
/// 𝒟̂^{(s)} = ∂_s³ − 8 ℒ̂_{−2} ∂_s + 12 ℒ̂_{−3},
/// ℒ̂_{−n} = Σ_{k≠s} [ (n−1) w_k (x_k − x_s)^{−n} − (x_k − x_s)^{−(n−1)} ∂_k ],
/// ```
///
/// normalized like [`second_order_residual`].
pub fn third_order_residual(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    weights: &[f64],
    s: usize,
    h: f64,
) -> Result<f64> {
    if weights.len() != x.len() {
        return Err(ContinuumError::SizeMismatch(x.len(), weights.len()));
    }
    check_step(x, h)?;
    let f0 = f(x);
    let ds = d1(f, x, s, h);
    let mut terms = vec![d3(f, x, s, h)];
    for k in 0..x.len() {
        if k == s {
            continue;
        }
        let d = x[k] - x[s];
        terms.push(-8.0 * weights[k] * ds / (d * d));
        terms.push(8.0 * d1d1(f, x, k, s, h) / d);
        terms.push(24.0 * weights[k] * f0 / (d * d * d));
        terms.push(-12.0 * d1(f, x, k, h) / (d * d));
    }
    Ok(normalized_residual(&terms))
}

/// Residual of the second-order PDE of `𝒵_α` at variable `j ∈ 1..=2N`
/// (1-based, matching the boundary labels), with the default step.
pub fn z_pde_residual(alpha: &LinkObject, xs: &[f64], j: usize) -> Result<f64> {
    if j < 1 || j > xs.len() {
        return Err(ContinuumError::BadVisitIndex(j, xs.len()));
    }
    check_increasing(xs)?;
    let h = FD_STEP_FACTOR * min_pair_gap(xs);
    let alpha = alpha.clone();
    let f = move |y: &[f64]| pure_partition_function::<f64>(&alpha, y).unwrap_or(f64::NAN);
    second_order_residual(&f, xs, &vec![H_BOUNDARY; xs.len()], j - 1, h)
}

/// A variable of the `ζ_ω` PDE system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZetaVariable {
    /// The entry point `x_in` (second-order equation).
    In,
    /// The `s`-th visit point, 1-based (third-order equation).
    Visit(usize),
    /// The exit point `x_out` (second-order equation).
    Out,
}

/// Residual of the null PDE of `ζ_ω` at the given variable: second-order at
/// `x_in`/`x_out` (weight `H_BOUNDARY`), third-order at the visit points
/// (weight `H_VISIT`), with the default step.
pub fn zeta_pde_residual(
    omega: &VisitOrder,
    x_in: f64,
    hats: &[f64],
    x_out: f64,
    var: ZetaVariable,
) -> Result<f64> {
    let np = omega.n_visits();
    if hats.len() != np {
        return Err(ContinuumError::SizeMismatch(np, hats.len()));
    }
    let mut coords = Vec::with_capacity(np + 2);
    coords.push(x_in);
    coords.extend_from_slice(hats);
    coords.push(x_out);
    let mut weights = vec![H_VISIT; np + 2];
    weights[0] = H_BOUNDARY;
    weights[np + 1] = H_BOUNDARY;
    let h = FD_STEP_FACTOR * min_pair_gap(&coords);
    let omega = omega.clone();
    let f = move |y: &[f64]| {
        zeta_omega::<f64>(&omega, &y[0], &y[1..=np], &y[np + 1]).unwrap_or(f64::NAN)
    };
    match var {
        ZetaVariable::In => second_order_residual(&f, &coords, &weights, 0, h),
        ZetaVariable::Out => second_order_residual(&f, &coords, &weights, np + 1, h),
        ZetaVariable::Visit(s) => {
            if s < 1 || s > np {
                return Err(ContinuumError::BadVisitIndex(s, np));
            }
            third_order_residual(&f, &coords, &weights, s, h)
        }
    }
}

// ---------------------------------------------------------------------------
// Collapse limits and asymptotics
// ---------------------------------------------------------------------------

/// Diagnostics of a Richardson-extrapolated collapse limit.
#[derive(Clone, Debug)]
pub struct CollapseDiagnostics {
    /// The scaled evaluations `ε_k^{−exponent} · f(ε_k)` on the geometric
    /// schedule `ε_k = ε₀ / 2^k`.
    pub estimates: Vec<f64>,
    /// The extrapolated limit.
    pub value: f64,
    /// Difference between the last two extrapolation orders (error proxy).
    pub spread: f64,
}

/// Richardson-extrapolated limit `lim_{ε→0} ε^{−exponent} f(ε)` on the
/// geometric schedule `ε_k = ε₀/2^k`, `k = 0..levels`. The signed `exponent`
/// is the leading gap power of `f`: `+1` per collapsed visit pair
/// ([`DELTA_VISIT`]), `−2` for a vanishing link ([`DELTA_LINK`]), `−3` for
/// the boundary-visit cascades. Non-convergent sequences are flagged.
pub fn collapse_limit(
    f: &dyn Fn(f64) -> f64,
    exponent: f64,
    eps0: f64,
    levels: usize,
) -> Result<CollapseDiagnostics> {
    if levels < 4 {
        return Err(ContinuumError::TooFewLevels(4));
    }
    let estimates: Vec<f64> = (0..levels)
        .map(|k| {
            let e = eps0 / 2f64.powi(k as i32);
            e.powf(-exponent) * f(e)
        })
        .collect();
    if estimates.iter().any(|v| !v.is_finite()) {
        return Err(ContinuumError::NotConverged(estimates));
    }
    let scale = estimates.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let d_first = (estimates[1] - estimates[0]).abs();
    let d_last = (estimates[levels - 1] - estimates[levels - 2]).abs();
    if d_last > d_first * 1.000001 + 1e-12 * scale {
        return Err(ContinuumError::NotConverged(estimates));
    }
    // Richardson table assuming an expansion in integer powers of ε.
    let mut table: Vec<Vec<f64>> = vec![Vec::new(); levels];
    for k in 0..levels {
        table[k].push(estimates[k]);
        for m in 1..=k {
            let pow = 2f64.powi(m as i32);
            let t = (pow * table[k][m - 1] - table[k - 1][m - 1]) / (pow - 1.0);
            table[k].push(t);
        }
    }
    let value = table[levels - 1][levels - 1];
    let spread = (value - table[levels - 1][levels - 2]).abs();
    Ok(CollapseDiagnostics {
        estimates,
        value,
        spread,
    })
}

/// Extrapolated vanishing-link limit `lim (x_{j+1}−x_j)² 𝒵_α` as the labels
/// `j, j+1` collapse symmetrically onto their midpoint (`j` 1-based).
pub fn asy2_collapse(
    alpha: &LinkObject,
    xs: &[f64],
    j: usize,
    levels: usize,
) -> Result<CollapseDiagnostics> {
    let n2 = 2 * alpha.n();
    if xs.len() != n2 {
        return Err(ContinuumError::SizeMismatch(n2, xs.len()));
    }
    if j < 1 || j >= n2 {
        return Err(ContinuumError::BadVisitIndex(j, n2 - 1));
    }
    check_increasing(xs)?;
    let xi = 0.5 * (xs[j - 1] + xs[j]);
    let mut room = min_pair_gap(xs);
    if j >= 2 {
        room = room.min(xi - xs[j - 2]);
    }
    if j + 1 <= n2 - 1 {
        room = room.min(xs[j + 1] - xi);
    }
    let alpha = alpha.clone();
    let xs = xs.to_vec();
    let f = move |e: f64| {
        let mut y = xs.clone();
        y[j - 1] = xi - e / 2.0;
        y[j] = xi + e / 2.0;
        pure_partition_function::<f64>(&alpha, &y).unwrap_or(f64::NAN)
    };
    collapse_limit(&f, DELTA_LINK, room / 8.0, levels)
}

/// The vanishing-link reference value: `𝒵` of the link-removed pattern at
/// the remaining coordinates when the up-wedge `∧_j` belongs to `α`, and `0`
/// otherwise (the empty pattern has `𝒵_∅ ≡ 1`).
pub fn asy2_reference(alpha: &LinkObject, xs: &[f64], j: usize) -> Result<f64> {
    let info = wedge_ops(alpha, j)?;
    if info.kind != WedgeKind::Up {
        return Ok(0.0);
    }
    let removed = info.removed.expect("up-wedge always has a removal");
    let rest: Vec<f64> = xs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i + 1 != j && i + 1 != j + 1)
        .map(|(_, &v)| v)
        .collect();
    Ok(pure_partition_function::<f64>(&removed, &rest)?)
}

/// A boundary-visit cascade to extrapolate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsymptoticsCase {
    /// Collapse visit point `s` (1-based, nearest to the entry point on its
    /// side) onto `x_in`.
    FirstVisit { s: usize },
    /// Collapse the spatially adjacent visit points `s` and `t` (1-based
    /// visit-time indices) onto their midpoint.
    ConsecutiveVisits { s: usize, t: usize },
}

/// Extrapolated cascade constant `lim |gap|³ ζ_ω / ζ_{ω′}`: equals `2` when
/// the visit collapsing onto `x_in` is the first visit, `10` when the two
/// collapsing visit points are successively visited, and `0` in the
/// mismatched cases. The reduced order `ω′` drops the collapsed visit (the
/// later one of a pair), with the surviving coordinate at the limit point.
pub fn asymptotics_constant(
    omega: &VisitOrder,
    x_in: f64,
    hats: &[f64],
    x_out: f64,
    case: AsymptoticsCase,
    levels: usize,
) -> Result<f64> {
    let np = omega.n_visits();
    if hats.len() != np {
        return Err(ContinuumError::SizeMismatch(np, hats.len()));
    }
    let check = |s: usize| -> Result<()> {
        if s < 1 || s > np {
            Err(ContinuumError::BadVisitIndex(s, np))
        } else {
            Ok(())
        }
    };
    let mut all = vec![x_in, x_out];
    all.extend_from_slice(hats);
    let omega_cl = omega.clone();
    let hats_v = hats.to_vec();
    match case {
        AsymptoticsCase::FirstVisit { s } => {
            check(s)?;
            let sign = (hats[s - 1] - x_in).signum();
            let dist = (hats[s - 1] - x_in).abs();
            let f = move |e: f64| {
                let mut h = hats_v.clone();
                h[s - 1] = x_in + sign * e;
                zeta_omega::<f64>(&omega_cl, &x_in, &h, &x_out).unwrap_or(f64::NAN)
            };
            let limit = collapse_limit(&f, -3.0, dist / 8.0, levels)?.value;
            let omega_red = VisitOrder(
                omega
                    .0
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i + 1 != s)
                    .map(|(_, &v)| v)
                    .collect(),
            );
            let hats_red: Vec<f64> = hats
                .iter()
                .enumerate()
                .filter(|&(i, _)| i + 1 != s)
                .map(|(_, &v)| v)
                .collect();
            let reference = zeta_omega::<f64>(&omega_red, &x_in, &hats_red, &x_out)?;
            Ok(limit / reference)
        }
        AsymptoticsCase::ConsecutiveVisits { s, t } => {
            check(s)?;
            check(t)?;
            if s == t {
                return Err(ContinuumError::BadVisitIndex(t, np));
            }
            let mid = 0.5 * (hats[s - 1] + hats[t - 1]);
            let sign = (hats[t - 1] - hats[s - 1]).signum();
            let mut room = (hats[t - 1] - hats[s - 1]).abs();
            for (i, &v) in all.iter().enumerate() {
                if i >= 2 && (i + 1 - 2 == s || i + 1 - 2 == t) {
                    continue;
                }
                room = room.min((v - mid).abs());
            }
            let f = move |e: f64| {
                let mut h = hats_v.clone();
                h[s - 1] = mid - sign * e / 2.0;
                h[t - 1] = mid + sign * e / 2.0;
                zeta_omega::<f64>(&omega_cl, &x_in, &h, &x_out).unwrap_or(f64::NAN)
            };
            let limit = collapse_limit(&f, -3.0, room / 8.0, levels)?.value;
            let omega_red = VisitOrder(
                omega
                    .0
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i + 1 != t)
                    .map(|(_, &v)| v)
                    .collect(),
            );
            let mut hats_red: Vec<f64> = hats
                .iter()
                .enumerate()
                .filter(|&(i, _)| i + 1 != t)
                .map(|(_, &v)| v)
                .collect();
            let s_red = if t < s { s - 1 } else { s };
            hats_red[s_red - 1] = mid;
            let reference = zeta_omega::<f64>(&omega_red, &x_in, &hats_red, &x_out)?;
            Ok(limit / reference)
        }
    }
}

/// Recomputes `ζ_ω` as the iterated collapse limit of `𝒵_{α(ω)}`, processing
/// the visit pairs one at a time in the given visit-index order (nested
/// Richardson extrapolations); cross-checks the replacing algorithm.
pub fn zeta_by_collapse(
    omega: &VisitOrder,
    x_in: f64,
    hats: &[f64],
    x_out: f64,
    order: &[usize],
    levels: usize,
) -> Result<f64> {
    let np = omega.n_visits();
    if hats.len() != np {
        return Err(ContinuumError::SizeMismatch(np, hats.len()));
    }
    let mut seen = vec![false; np + 1];
    for &s in order {
        if s < 1 || s > np || seen[s] {
            return Err(ContinuumError::BadVisitIndex(s, np));
        }
        seen[s] = true;
    }
    if order.len() != np {
        return Err(ContinuumError::SizeMismatch(np, order.len()));
    }
    let vs = visit_structure(omega);
    let gaps = vec![0.0; np];
    iterated_collapse(&vs, x_in, hats, x_out, order, &gaps, levels)
}

/// Recomputes `ζ_ω` by collapsing all visit pairs simultaneously with one
/// common gap `ε` (scaled by `ε⁻¹` per pair). Numerically better conditioned
/// than the nested iterated limit of [`zeta_by_collapse`] and equal to it for
/// these rational functions.
pub fn zeta_by_simultaneous_collapse(
    omega: &VisitOrder,
    x_in: f64,
    hats: &[f64],
    x_out: f64,
    levels: usize,
) -> Result<f64> {
    let np = omega.n_visits();
    if hats.len() != np {
        return Err(ContinuumError::SizeMismatch(np, hats.len()));
    }
    let vs = visit_structure(omega);
    let base = coords_with_gaps(&vs, x_in, hats, x_out, &vec![0.0; np]);
    let mut room = f64::INFINITY;
    for (s, &(lo, hi)) in vs.pairs.iter().enumerate() {
        for label in 1..base.len() {
            if label == lo || label == hi {
                continue;
            }
            room = room.min((base[label] - hats[s]).abs());
        }
    }
    let f = |e: f64| z_with_gaps_exact(&vs, x_in, hats, x_out, &vec![e; np]);
    Ok(collapse_limit(&f, np as f64 * DELTA_VISIT, room / 8.0, levels)?.value)
}

/// Evaluates `𝒵_{α(ω)}` at a near-collapsed configuration in exact rational
/// arithmetic (the pair-internal kernel entries blow up as `gap⁻²` while the
/// value is of order `gap` per pair, so float determinants lose all digits
/// for small gaps). The dyadic gaps and `f64` centers convert exactly.
fn z_with_gaps_exact(
    vs: &crate::combinatorics::VisitStructure,
    x_in: f64,
    hats: &[f64],
    x_out: f64,
    gaps: &[f64],
) -> f64 {
    use num::{BigRational, ToPrimitive, Zero};
    let rat = |v: f64| BigRational::from_float(v).expect("finite coordinate");
    let total = 2 * (hats.len() + 1);
    let mut xs = vec![BigRational::zero(); total + 1];
    xs[vs.in_label] = rat(x_in);
    xs[vs.out_label] = rat(x_out);
    for (s, &(lo, hi)) in vs.pairs.iter().enumerate() {
        let center = rat(hats[s]);
        let half_gap = rat(gaps[s] / 2.0);
        xs[lo] = center.clone() - half_gap.clone();
        xs[hi] = center + half_gap;
    }
    let kernel = kernel_matrix_unchecked(&xs[1..]);
    match z_expansion(&vs.alpha, &kernel) {
        Ok(z) => z.value.to_f64().unwrap_or(f64::NAN),
        Err(_) => f64::NAN,
    }
}

fn coords_with_gaps(
    vs: &crate::combinatorics::VisitStructure,
    x_in: f64,
    hats: &[f64],
    x_out: f64,
    gaps: &[f64],
) -> Vec<f64> {
    let total = 2 * (hats.len() + 1);
    let mut xs = vec![0.0; total + 1];
    xs[vs.in_label] = x_in;
    xs[vs.out_label] = x_out;
    for (s, &(lo, hi)) in vs.pairs.iter().enumerate() {
        xs[lo] = hats[s] - gaps[s] / 2.0;
        xs[hi] = hats[s] + gaps[s] / 2.0;
    }
    xs
}

fn iterated_collapse(
    vs: &crate::combinatorics::VisitStructure,
    x_in: f64,
    hats: &[f64],
    x_out: f64,
    order: &[usize],
    gaps: &[f64],
    levels: usize,
) -> Result<f64> {
    let Some((&s, rest)) = order.split_first() else {
        return Ok(z_with_gaps_exact(vs, x_in, hats, x_out, gaps));
    };
    // room: distance from this pair's center to every other current coordinate
    let xs = coords_with_gaps(vs, x_in, hats, x_out, gaps);
    let (lo, hi) = vs.pairs[s - 1];
    let center = hats[s - 1];
    let mut room = f64::INFINITY;
    for label in 1..xs.len() {
        if label == lo || label == hi {
            continue;
        }
        room = room.min((xs[label] - center).abs());
    }
    let f = |e: f64| {
        let mut g = gaps.to_vec();
        g[s - 1] = e;
        iterated_collapse(vs, x_in, hats, x_out, rest, &g, levels).unwrap_or(f64::NAN)
    };
    Ok(collapse_limit(&f, DELTA_VISIT, room / 8.0, levels)?.value)
}

// ---------------------------------------------------------------------------
// Jacobi elliptic functions and the rectangle ↔ half-plane map
// ---------------------------------------------------------------------------

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let am = 0.5 * (a + b);
        let gm = (a * b).sqrt();
        a = am;
        b = gm;
    }
    a
}

/// The complete elliptic integral `K(k)` via the arithmetic–geometric mean.
pub fn elliptic_k(k: f64) -> f64 {
    let kp = (1.0 - k * k).sqrt();
    std::f64::consts::PI / (2.0 * agm(1.0, kp))
}

/// Jacobi elliptic functions `(sn, cn, dn)(u; k)` by the descending Landen
/// transformation (AGM method).
pub fn jacobi_scd(u: f64, k: f64) -> (f64, f64, f64) {
    if k.abs() < 1e-12 {
        return (u.sin(), u.cos(), 1.0);
    }
    let mut a = vec![1.0f64];
    let mut c = vec![k];
    let mut b = (1.0 - k * k).sqrt();
    while *c.last().unwrap() > 1e-16 && a.len() < 32 {
        let an = *a.last().unwrap();
        a.push(0.5 * (an + b));
        c.push(0.5 * (an - b));
        b = (an * b).sqrt();
    }
    let n = a.len() - 1;
    let mut phi = 2f64.powi(n as i32) * a[n] * u;
    let mut phi_prev = phi;
    for i in (1..=n).rev() {
        phi_prev = phi;
        phi = 0.5 * (phi + ((c[i] / a[i]) * phi.sin()).asin());
    }
    let sn = phi.sin();
    let cn = phi.cos();
    let dn = cn / (phi_prev - phi).cos();
    (sn, cn, dn)
}

/// Rectangle boundary edges, counterclockwise from the origin corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RectEdge {
    Bottom,
    Right,
    Top,
    Left,
}

/// The conformal map `φ` from the rectangle `(0, aspect) × (0, 1)` onto the
/// upper half-plane, `φ(z) = sn(λz; k)²` with `K(k)/K(k′) = aspect`: the
/// bottom edge maps onto `[0, 1]`, the right edge onto `[1, 1/k²]`, the top
/// and left edges onto the remaining boundary through `∞` (at the top-left
/// corner). `φ` is strictly increasing along the counterclockwise boundary.
#[derive(Clone, Copy, Debug)]
pub struct ConformalMap {
    /// Width/height ratio of the rectangle `(0, aspect) × (0, 1)`.
    pub aspect: f64,
    /// Elliptic modulus solving `K(k)/K(k′) = aspect`.
    pub k: f64,
    /// `K(k)` and `K(k′)`.
    pub big_k: f64,
    pub big_kp: f64,
    lambda: f64,
}

/// Half-width of the excluded zones around the rectangle corners (and the
/// top-left pole of `φ`), in rectangle units.
pub const CORNER_EXCLUSION: f64 = 1e-3;

/// Solves the elliptic modulus from the aspect ratio by bisection and builds
/// the rectangle → half-plane map.
pub fn rectangle_halfplane_map(aspect: f64) -> Result<ConformalMap> {
    if !(0.2..=5.0).contains(&aspect) {
        return Err(ContinuumError::BadAspect(aspect));
    }
    let ratio = |k: f64| {
        let kp = (1.0 - k * k).sqrt();
        elliptic_k(k) / elliptic_k(kp)
    };
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < aspect {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = 0.5 * (lo + hi);
    let big_k = elliptic_k(k);
    let big_kp = elliptic_k((1.0 - k * k).sqrt());
    Ok(ConformalMap {
        aspect,
        k,
        big_k,
        big_kp,
        lambda: big_k / aspect,
    })
}

impl ConformalMap {
    fn kp(&self) -> f64 {
        (1.0 - self.k * self.k).sqrt()
    }

    /// Classifies a boundary point into (edge, along-edge parameter), with
    /// corner-exclusion zones.
    fn classify(&self, p: (f64, f64)) -> Result<(RectEdge, f64)> {
        let (x, y) = p;
        let w = self.aspect;
        let tol = 1e-9;
        let corners = [(0.0, 0.0), (w, 0.0), (w, 1.0), (0.0, 1.0)];
        for &(cx, cy) in &corners {
            if (x - cx).hypot(y - cy) < CORNER_EXCLUSION {
                return Err(ContinuumError::CornerZone(x, y));
            }
        }
        if y.abs() < tol && (0.0..=w).contains(&x) {
            Ok((RectEdge::Bottom, x))
        } else if (x - w).abs() < tol && (0.0..=1.0).contains(&y) {
            Ok((RectEdge::Right, y))
        } else if (y - 1.0).abs() < tol && (0.0..=w).contains(&x) {
            Ok((RectEdge::Top, x))
        } else if x.abs() < tol && (0.0..=1.0).contains(&y) {
            Ok((RectEdge::Left, y))
        } else {
            Err(ContinuumError::NotOnBoundary(x, y))
        }
    }

    /// The boundary trace `φ(p)` at a rectangle boundary point.
    pub fn phi(&self, p: (f64, f64)) -> Result<f64> {
        let (edge, t) = self.classify(p)?;
        let k = self.k;
        let v = self.lambda * t;
        Ok(match edge {
            RectEdge::Bottom => {
                let (sn, _, _) = jacobi_scd(v, k);
                sn * sn
            }
            RectEdge::Right => {
                let (_, _, dn) = jacobi_scd(v, self.kp());
                1.0 / (dn * dn)
            }
            RectEdge::Top => {
                let (sn, _, _) = jacobi_scd(v, k);
                1.0 / (k * k * sn * sn)
            }
            RectEdge::Left => {
                let (sn, cn, _) = jacobi_scd(v, self.kp());
                -(sn / cn) * (sn / cn)
            }
        })
    }

    /// The boundary derivative modulus `|φ′(p)|` (equal to the tangential
    /// derivative of the boundary trace).
    pub fn phi_prime(&self, p: (f64, f64)) -> Result<f64> {
        let (edge, t) = self.classify(p)?;
        let k = self.k;
        let kp = self.kp();
        let l = self.lambda;
        let v = l * t;
        Ok(match edge {
            RectEdge::Bottom => {
                let (sn, cn, dn) = jacobi_scd(v, k);
                2.0 * l * (sn * cn * dn).abs()
            }
            RectEdge::Right => {
                let (sn, cn, dn) = jacobi_scd(v, kp);
                2.0 * l * kp * kp * (sn * cn).abs() / (dn * dn * dn)
            }
            RectEdge::Top => {
                let (sn, cn, dn) = jacobi_scd(v, k);
                2.0 * l * (cn * dn).abs() / (k * k * sn * sn * sn).abs()
            }
            RectEdge::Left => {
                let (sn, cn, dn) = jacobi_scd(v, kp);
                2.0 * l * (sn * dn).abs() / cn.abs().powi(3)
            }
        })
    }

    /// The continuum prediction for the `δ⁻²`-scaled discrete excursion
    /// kernel between boundary points: `(1/π) |φ′(p₁)| |φ′(p₂)| 𝒦(φ(p₁), φ(p₂))`.
    pub fn kernel_prediction(&self, p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
        let (f1, f2) = (self.phi(p1)?, self.phi(p2)?);
        let d1 = self.phi_prime(p1)?;
        let d2 = self.phi_prime(p2)?;
        Ok(d1 * d2 * deriv_kernel(&f1, &f2, 0, 0) / std::f64::consts::PI)
    }

    /// The continuum prediction for the `δ^{−2N}`-scaled connectivity
    /// partition function: `π^{−N} Π_j |φ′(p_j)| · 𝒵_α(φ(p))`.
    pub fn z_prediction(&self, alpha: &LinkObject, ps: &[(f64, f64)]) -> Result<f64> {
        let images: Vec<f64> = ps.iter().map(|&p| self.phi(p)).collect::<Result<_>>()?;
        let jacobian: f64 = ps
            .iter()
            .map(|&p| self.phi_prime(p))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .product();
        let z = pure_partition_function::<f64>(alpha, &images)?;
        Ok(std::f64::consts::PI.powi(-(alpha.n() as i32)) * jacobian * z)
    }

    /// The continuum prediction for the `δ^{−3N'}`-scaled boundary-visit
    /// probability: `π^{−N'} Π_s |φ′(p̂_s)|³ · ζ_ω(φ(p)) / 𝒦(φ(p_in), φ(p_out))`.
    pub fn visit_prediction(
        &self,
        omega: &VisitOrder,
        p_in: (f64, f64),
        hat_ps: &[(f64, f64)],
        p_out: (f64, f64),
    ) -> Result<f64> {
        let x_in = self.phi(p_in)?;
        let x_out = self.phi(p_out)?;
        let hats: Vec<f64> = hat_ps.iter().map(|&p| self.phi(p)).collect::<Result<_>>()?;
        let jacobian: f64 = hat_ps
            .iter()
            .map(|&p| self.phi_prime(p).map(|d| d.powi(3)))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .product();
        let zeta = zeta_omega::<f64>(omega, &x_in, &hats, &x_out)?;
        let np = omega.n_visits() as i32;
        Ok(std::f64::consts::PI.powi(-np) * jacobian * zeta
            / deriv_kernel(&x_in, &x_out, 0, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{enumerate_dyck_paths, rainbow, unnested};
    use num::BigRational;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    fn rats(vals: &[i64]) -> Vec<BigRational> {
        vals.iter().map(|&v| rat(v, 1)).collect()
    }

    #[test]
    fn deriv_kernel_values_and_symmetries() {
        assert_eq!(deriv_kernel::<f64>(&0.0, &1.0, 0, 0), 1.0);
        assert_eq!(deriv_kernel::<f64>(&1.0, &2.0, 1, 0), 2.0);
        assert_eq!(deriv_kernel::<f64>(&0.0, &1.0, 0, 1), -2.0);
        assert_eq!(deriv_kernel::<f64>(&1.0, &2.0, 1, 1), -6.0);
        let (x, y) = (0.3, 1.7);
        // mixed-partial symmetry and the ∂₁ ↔ ∂₂ antisymmetry
        assert_eq!(
            deriv_kernel::<f64>(&x, &y, 1, 1),
            deriv_kernel::<f64>(&y, &x, 1, 1)
        );
        assert_eq!(
            deriv_kernel::<f64>(&x, &y, 1, 0),
            deriv_kernel::<f64>(&y, &x, 0, 1)
        );
        assert_eq!(
            deriv_kernel::<f64>(&x, &y, 1, 0),
            -deriv_kernel::<f64>(&x, &y, 0, 1)
        );
        // finite-difference consistency of ∂₁
        let h = 1e-5;
        let fd = (deriv_kernel::<f64>(&(x + h), &y, 0, 0) - deriv_kernel::<f64>(&(x - h), &y, 0, 0))
            / (2.0 * h);
        assert!((fd - deriv_kernel::<f64>(&x, &y, 1, 0)).abs() < 1e-7);
    }

    #[test]
    fn pure_partition_function_rational_spot_values() {
        let one = pure_partition_function(&unnested(1), &rats(&[0, 1])).unwrap();
        assert_eq!(one, rat(1, 1));
        let u = pure_partition_function(&unnested(2), &rats(&[0, 1, 2, 3])).unwrap();
        assert_eq!(u, rat(15, 16));
        let r = pure_partition_function(&rainbow(2), &rats(&[0, 1, 2, 3])).unwrap();
        assert_eq!(r, rat(7, 144));
    }

    #[test]
    fn partition_functions_positive_on_random_configurations() {
        // deterministic pseudo-random ordered configurations
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            for n in 1..=4usize {
                let mut xs: Vec<f64> = (0..2 * n).map(|_| 10.0 * next()).collect();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if xs.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                    continue;
                }
                for alpha in enumerate_dyck_paths(n).unwrap() {
                    let z = pure_partition_function::<f64>(&alpha, &xs).unwrap();
                    assert!(z > 0.0, "Z_{} at {:?} = {}", alpha.parens(), xs, z);
                }
            }
        }
    }

    #[test]
    fn unordered_points_rejected() {
        let err = pure_partition_function::<f64>(&unnested(1), &[1.0, 0.0]);
        assert!(matches!(err, Err(ContinuumError::Unordered)));
    }

    #[test]
    fn zeta_spot_value_exact() {
        let omega: VisitOrder = "+".parse().unwrap();
        let z = zeta_omega(&omega, &rat(0, 1), &[rat(1, 1)], &rat(2, 1)).unwrap();
        assert_eq!(z, rat(4, 1));
    }

    #[test]
    fn zeta_single_visit_closed_form() {
        // ζ_(+)(a; m; b) = 2 (b−a) (m−a)⁻³ (b−m)⁻³, by expanding the two
        // replaced determinants
        let omega: VisitOrder = "+".parse().unwrap();
        for &(a, m, b) in &[(0.0, 1.0, 2.0), (0.0, 1.0, 3.0), (-1.0, 0.5, 2.5)] {
            let z = zeta_omega::<f64>(&omega, &a, &[m], &b).unwrap();
            let closed = 2.0 * (b - a) / ((m - a).powi(3) * (b - m).powi(3));
            assert!((z - closed).abs() < 1e-12 * closed.abs());
        }
    }

    /// Label-order coordinates (label value itself, pairs equal) are always
    /// admissible for any ω.
    fn canonical_config(omega: &VisitOrder) -> (f64, Vec<f64>, f64) {
        let vs = visit_structure(omega);
        let hats = vs.pairs.iter().map(|&(lo, _)| lo as f64).collect();
        (1.0, hats, vs.out_label as f64)
    }

    #[test]
    fn zeta_positive_for_all_small_orders() {
        for np in 1..=3usize {
            for bits in 0..(1u32 << np) {
                let signs: Vec<i8> = (0..np)
                    .map(|s| if bits >> s & 1 == 0 { 1 } else { -1 })
                    .collect();
                let omega = VisitOrder(signs);
                let (x_in, hats, x_out) = canonical_config(&omega);
                let z = zeta_omega::<f64>(&omega, &x_in, &hats, &x_out).unwrap();
                assert!(z > 0.0, "ζ_{} = {}", omega, z);
            }
        }
    }

    #[test]
    fn zeta_rejects_coincident_and_misordered_points() {
        let omega: VisitOrder = "+".parse().unwrap();
        assert!(matches!(
            zeta_omega::<f64>(&omega, &0.0, &[0.0], &2.0),
            Err(ContinuumError::CoincidentPoints)
        ));
        // a + visit must sit between entry and exit in cyclic order
        assert!(matches!(
            zeta_omega::<f64>(&omega, &0.0, &[3.0], &2.0),
            Err(ContinuumError::Unordered)
        ));
    }

    #[test]
    fn zeta_matches_iterated_collapse_of_z() {
        let omega: VisitOrder = "+".parse().unwrap();
        let direct = zeta_omega::<f64>(&omega, &0.0, &[1.0], &2.0).unwrap();
        let collapsed = zeta_by_collapse(&omega, 0.0, &[1.0], 2.0, &[1], 6).unwrap();
        assert!((direct - collapsed).abs() < 1e-6 * direct);

        let omega2: VisitOrder = "++".parse().unwrap();
        let direct2 = zeta_omega::<f64>(&omega2, &0.0, &[1.0, 2.2], &3.4).unwrap();
        // both processing orders of the iterated limit must agree
        for order in [[1usize, 2], [2, 1]] {
            let c = zeta_by_collapse(&omega2, 0.0, &[1.0, 2.2], 3.4, &order, 6).unwrap();
            assert!(
                (direct2 - c).abs() < 1e-9 * direct2,
                "order {:?}: {} vs {}",
                order,
                c,
                direct2
            );
        }
        // collapsing both pairs with a single gap is well conditioned
        let c = zeta_by_simultaneous_collapse(&omega2, 0.0, &[1.0, 2.2], 3.4, 6).unwrap();
        assert!((direct2 - c).abs() < 1e-6 * direct2, "{} vs {}", c, direct2);
    }

    #[test]
    fn mobius_covariance_of_z() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let weights = [H_BOUNDARY; 4];
        // scaling: homogeneity of degree −2N
        let mu = Mobius::new(2.0, 0.0, 0.0, 1.0).unwrap();
        let (images, factor) = apply_mobius(&mu, &xs, &weights).unwrap();
        assert_eq!(factor, 16.0);
        for alpha in enumerate_dyck_paths(2).unwrap() {
            let z = pure_partition_function::<f64>(&alpha, &xs).unwrap();
            let zi = pure_partition_function::<f64>(&alpha, &images).unwrap();
            assert!((z - factor * zi).abs() < 1e-12 * z);
        }
        // translation invariance
        let mu = Mobius::new(1.0, 5.0, 0.0, 1.0).unwrap();
        let (images, factor) = apply_mobius(&mu, &xs, &weights).unwrap();
        assert_eq!(factor, 1.0);
        let z = pure_partition_function::<f64>(&unnested(2), &xs).unwrap();
        let zi = pure_partition_function::<f64>(&unnested(2), &images).unwrap();
        assert!((z - zi).abs() < 1e-12 * z);
        // a generic hyperbolic map with the pole outside the configuration
        let mu = Mobius::new(2.0, 1.0, 1.0, 4.0).unwrap();
        let (images, factor) = apply_mobius(&mu, &xs, &weights).unwrap();
        for alpha in enumerate_dyck_paths(2).unwrap() {
            let z = pure_partition_function::<f64>(&alpha, &xs).unwrap();
            let zi = pure_partition_function::<f64>(&alpha, &images).unwrap();
            assert!((z - factor * zi).abs() < 1e-10 * z);
        }
    }

    #[test]
    fn mobius_covariance_of_zeta() {
        let omega: VisitOrder = "++".parse().unwrap();
        let (x_in, hats, x_out) = (0.0, vec![1.0, 2.0], 3.0);
        let mu = Mobius::new(2.0, 1.0, 1.0, 4.0).unwrap();
        let mut xs = vec![x_in];
        xs.extend(&hats);
        xs.push(x_out);
        let weights = [H_BOUNDARY, H_VISIT, H_VISIT, H_BOUNDARY];
        let (images, factor) = apply_mobius(&mu, &xs, &weights).unwrap();
        let z = zeta_omega::<f64>(&omega, &x_in, &hats, &x_out).unwrap();
        let zi = zeta_omega::<f64>(&omega, &images[0], &images[1..3], &images[3]).unwrap();
        assert!(
            (z - factor * zi).abs() < 1e-9 * z,
            "{} vs {}",
            z,
            factor * zi
        );
    }

    #[test]
    fn mobius_rejects_bad_determinant_and_pole() {
        assert!(matches!(
            Mobius::new(1.0, 0.0, 0.0, -1.0),
            Err(ContinuumError::BadMobius)
        ));
        let mu = Mobius::new(1.0, -2.0, 1.0, -1.0).unwrap(); // pole at x = 1
        assert!(matches!(
            apply_mobius(&mu, &[0.0, 2.0], &[1.0, 1.0]),
            Err(ContinuumError::MobiusPole)
        ));
    }

    #[test]
    fn z_pde_residuals_small_with_quadratic_decay() {
        // N = 1: the single-kernel case satisfies the equation essentially
        // exactly
        let r = z_pde_residual(&unnested(1), &[0.0, 1.0], 1).unwrap();
        assert!(r.abs() < 1e-10, "N=1 residual {}", r);
        // N = 2 at a generic configuration: all four variables
        let xs = [0.0, 0.7, 1.9, 3.1];
        for alpha in enumerate_dyck_paths(2).unwrap() {
            for j in 1..=4 {
                let r = z_pde_residual(&alpha, &xs, j).unwrap();
                assert!(
                    r.abs() < 1e-6,
                    "residual {} for {} at variable {}",
                    r,
                    alpha.parens(),
                    j
                );
            }
        }
        // decay at least quadratic in the step while truncation dominates
        let alpha = unnested(2);
        let f = |y: &[f64]| pure_partition_function::<f64>(&alpha, y).unwrap();
        let w = [H_BOUNDARY; 4];
        let h1 = 0.05;
        let r1 = second_order_residual(&f, &xs, &w, 1, h1).unwrap().abs();
        let r2 = second_order_residual(&f, &xs, &w, 1, h1 / 2.0).unwrap().abs();
        assert!(r2 * 4.0 <= r1 * 1.01, "decay ratio {} / {}", r1, r2);
    }

    #[test]
    fn zeta_pde_residuals_small() {
        let omega: VisitOrder = "+".parse().unwrap();
        let (x_in, hats, x_out) = (0.0, vec![0.9], 2.1);
        for var in [ZetaVariable::In, ZetaVariable::Out, ZetaVariable::Visit(1)] {
            let r = zeta_pde_residual(&omega, x_in, &hats, x_out, var).unwrap();
            assert!(r.abs() < 1e-4, "residual {} at {:?}", r, var);
        }
        let omega2: VisitOrder = "++".parse().unwrap();
        let (x_in, hats, x_out) = (0.0, vec![1.0, 2.2], 3.5);
        for var in [
            ZetaVariable::In,
            ZetaVariable::Out,
            ZetaVariable::Visit(1),
            ZetaVariable::Visit(2),
        ] {
            let r = zeta_pde_residual(&omega2, x_in, &hats, x_out, var).unwrap();
            assert!(r.abs() < 1e-4, "residual {} at {:?}", r, var);
        }
    }

    #[test]
    fn pde_step_guard() {
        let f = |y: &[f64]| y[0] * y[1];
        let err = second_order_residual(&f, &[0.0, 1.0], &[1.0, 1.0], 0, 0.5);
        assert!(matches!(err, Err(ContinuumError::StepTooLarge(_, _))));
    }

    #[test]
    fn collapse_limit_known_values() {
        // f(ε) = ε⁻²(7 + 3ε): the scaled limit is 7
        let d = collapse_limit(&|e| (7.0 + 3.0 * e) / (e * e), -2.0, 0.25, 4).unwrap();
        assert!((d.value - 7.0).abs() < 1e-9);
        // diverging input is flagged
        assert!(matches!(
            collapse_limit(&|e| 1.0 / e, 0.0, 0.25, 4),
            Err(ContinuumError::NotConverged(_))
        ));
    }

    #[test]
    fn asy2_collapse_matches_link_removal() {
        // N = 1: lim (x₂−x₁)² 𝒵 = 1 = 𝒵_∅
        let d = asy2_collapse(&unnested(1), &[0.0, 1.0], 1, 6).unwrap();
        assert!((d.value - 1.0).abs() < 1e-9);
        // N = 2 rainbow, inner pair: reduces to the single-link 𝒵
        let xs = [0.0, 1.0, 2.0, 3.0];
        let d = asy2_collapse(&rainbow(2), &xs, 2, 6).unwrap();
        let reference = asy2_reference(&rainbow(2), &xs, 2).unwrap();
        assert!((reference - 1.0 / 9.0).abs() < 1e-15);
        assert!(
            (d.value - reference).abs() < 1e-6 * reference,
            "{} vs {}",
            d.value,
            reference
        );
        // N = 2 unnested at j = 2: no up-wedge, the limit vanishes
        let d = asy2_collapse(&unnested(2), &xs, 2, 6).unwrap();
        let scale = pure_partition_function::<f64>(&unnested(2), &xs).unwrap();
        assert_eq!(asy2_reference(&unnested(2), &xs, 2).unwrap(), 0.0);
        assert!(d.value.abs() < 1e-6 * scale, "zero branch {}", d.value);
    }

    #[test]
    fn first_visit_asymptotics_constant() {
        // nonzero branch: collapsing the first visit onto the entry point
        let omega: VisitOrder = "++".parse().unwrap();
        let c = asymptotics_constant(
            &omega,
            0.0,
            &[1.0, 2.0],
            3.0,
            AsymptoticsCase::FirstVisit { s: 1 },
            6,
        )
        .unwrap();
        assert!((c - 2.0).abs() < 0.02 * 2.0, "first-visit constant {}", c);
        // zero branch: the nearest point on the clockwise side is the second
        // visit
        let omega: VisitOrder = "+-".parse().unwrap();
        let c = asymptotics_constant(
            &omega,
            0.0,
            &[1.0, -0.5],
            2.0,
            AsymptoticsCase::FirstVisit { s: 2 },
            6,
        )
        .unwrap();
        assert!(c.abs() < 1e-6, "zero branch {}", c);
    }

    #[test]
    fn consecutive_visit_asymptotics_constant() {
        // nonzero branch: two successively visited points collapse
        let omega: VisitOrder = "++".parse().unwrap();
        let c = asymptotics_constant(
            &omega,
            0.0,
            &[1.0, 2.0],
            3.0,
            AsymptoticsCase::ConsecutiveVisits { s: 1, t: 2 },
            6,
        )
        .unwrap();
        assert!((c - 10.0).abs() < 0.02 * 10.0, "consecutive constant {}", c);
        // zero branch: spatially adjacent but not successively visited
        let omega: VisitOrder = "+-+".parse().unwrap();
        let c = asymptotics_constant(
            &omega,
            0.0,
            &[1.0, -1.0, 2.0],
            3.0,
            AsymptoticsCase::ConsecutiveVisits { s: 1, t: 3 },
            6,
        )
        .unwrap();
        assert!(c.abs() < 1e-6, "zero branch {}", c);
    }

    #[test]
    fn elliptic_and_jacobi_identities() {
        // K(1/√2) = Γ(1/4)² / (4 √π)
        let k = 1.0 / 2f64.sqrt();
        assert!((elliptic_k(k) - 1.854_074_677_301_372).abs() < 1e-12);
        // sn² + cn² = 1, dn² + k² sn² = 1, sn(K) = 1
        for &u in &[0.1, 0.4, 0.9, 1.3] {
            let (sn, cn, dn) = jacobi_scd(u, k);
            assert!((sn * sn + cn * cn - 1.0).abs() < 1e-12);
            assert!((dn * dn + k * k * sn * sn - 1.0).abs() < 1e-12);
        }
        let big_k = elliptic_k(k);
        let (sn, _, _) = jacobi_scd(big_k, k);
        assert!((sn - 1.0).abs() < 1e-10);
        // sn(K/2)² = 1/(1 + k′)
        let kp = (1.0 - k * k).sqrt();
        let (sn, _, _) = jacobi_scd(big_k / 2.0, k);
        assert!((sn * sn - 1.0 / (1.0 + kp)).abs() < 1e-12);
    }

    #[test]
    fn square_map_modulus_and_monotonicity() {
        let map = rectangle_halfplane_map(1.0).unwrap();
        assert!((map.k - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        // φ strictly increasing along the bottom edge at 100 points
        let mut prev = f64::NEG_INFINITY;
        for i in 1..=100 {
            let x = i as f64 / 101.0;
            let v = map.phi((x, 0.0)).unwrap();
            assert!(v > prev);
            prev = v;
        }
        // and continuing to increase along the right edge
        for i in 1..=50 {
            let y = i as f64 / 51.0;
            let v = map.phi((1.0, y)).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(prev < 1.0 / (map.k * map.k) + 1e-9);
    }

    #[test]
    fn map_derivative_matches_finite_differences() {
        let map = rectangle_halfplane_map(1.0).unwrap();
        let h = 1e-6;
        for &x in &[0.2, 0.5, 0.8] {
            let fd = (map.phi((x + h, 0.0)).unwrap() - map.phi((x - h, 0.0)).unwrap()) / (2.0 * h);
            let an = map.phi_prime((x, 0.0)).unwrap();
            assert!((fd - an).abs() < 1e-6 * an, "bottom {}: {} vs {}", x, fd, an);
        }
        for &y in &[0.3, 0.6] {
            let fd =
                (map.phi((1.0, y + h)).unwrap() - map.phi((1.0, y - h)).unwrap()) / (2.0 * h);
            let an = map.phi_prime((1.0, y)).unwrap();
            assert!((fd - an).abs() < 1e-5 * an, "right {}: {} vs {}", y, fd, an);
        }
    }

    #[test]
    fn map_guards() {
        assert!(matches!(
            rectangle_halfplane_map(0.1),
            Err(ContinuumError::BadAspect(_))
        ));
        let map = rectangle_halfplane_map(1.0).unwrap();
        assert!(matches!(
            map.phi((1e-5, 0.0)),
            Err(ContinuumError::CornerZone(_, _))
        ));
        assert!(matches!(
            map.phi((0.5, 0.5)),
            Err(ContinuumError::NotOnBoundary(_, _))
        ));
    }
}



