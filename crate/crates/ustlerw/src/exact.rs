//! Determinant formulas: link-pattern determinants `Δ_β` of the excursion
//! kernel, inverse Fomin sums `Z_α = Σ_{β ⪰ α} M⁻¹_{α,β} Δ_β`, boundary-visit
//! probabilities (both as a ratio of partition functions and via the discrete
//! replacing algorithm), and the boundary-touching-subtree formula for the
//! free spanning tree.

use crate::combinatorics::{
    cover_counts_row, enumerate_dyck_paths, unnested, visit_structure, LinkObject, VisitOrder,
};
use crate::lattice::{GridModel, KernelMatrix, LatticeError, Role};
use crate::linalg::{determinant, Scalar};
use num::{BigInt, BigRational, Zero};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("kernel matrix has size {0}, expected {1}")]
    KernelSize(usize, usize),
    #[error(transparent)]
    Combinatorics(#[from] crate::combinatorics::CombinatoricsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("marked edges are not in counterclockwise label order")]
    NotCcwOrdered,
    #[error("grid must carry exactly one 'in' and one 'out' marked point")]
    MissingInOut,
    #[error("visit order has {0} signs but the grid has {1} visit points")]
    VisitCountMismatch(usize, usize),
    #[error("entry-to-exit kernel vanishes; conditional probability undefined")]
    ZeroDenominator,
    #[error("face {0:?} is not a boundary face with exactly two flanking boundary edges")]
    BadBoundaryFace(i64, i64),
    #[error("boundary faces must be distinct, non-neighboring, and in ccw order")]
    BadFaceConfiguration,
    #[error("the free-tree formula is implemented for unit conductances only")]
    NonUnitConductance,
}

type Result<T> = std::result::Result<T, ExactError>;

/// The link-pattern determinant `Δ_β(K) = det(K(e_{a_k}, e_{b_ℓ}))` with the
/// left-to-right orientation of the links of `β`. `kernel.values` is indexed
/// by labels (0-based).
pub fn lp_determinant<T: Scalar>(beta: &LinkObject, kernel: &KernelMatrix<T>) -> Result<T> {
    let n2 = 2 * beta.n();
    if kernel.size() != n2 {
        return Err(ExactError::KernelSize(kernel.size(), n2));
    }
    let links = beta.links();
    let m: Vec<Vec<T>> = links
        .iter()
        .map(|&(a, _)| {
            links
                .iter()
                .map(|&(_, b)| kernel.values[a - 1][b - 1].clone())
                .collect()
        })
        .collect();
    Ok(determinant(m))
}

/// One term of an inverse Fomin sum.
#[derive(Clone, Debug)]
pub struct ZTerm<T> {
    pub beta: LinkObject,
    /// Number of cover-inclusive Dyck tilings `M⁻¹_{α,β}` (zero terms are
    /// omitted from the expansion).
    pub tilings: BigInt,
    pub det: T,
}

/// The partition function `Z_α` together with its per-`β` contributions.
#[derive(Clone, Debug)]
pub struct ZExpansion<T> {
    pub alpha: LinkObject,
    pub value: T,
    pub terms: Vec<ZTerm<T>>,
}

/// Evaluates the inverse Fomin sum `Z_α = Σ_{β ⪰ α} M⁻¹_{α,β} Δ_β(K)`.
pub fn z_expansion<T: Scalar>(alpha: &LinkObject, kernel: &KernelMatrix<T>) -> Result<ZExpansion<T>> {
    let paths = enumerate_dyck_paths(alpha.n())?;
    let counts = cover_counts_row(alpha, &paths)?;
    let mut value = T::zero();
    let mut terms = Vec::new();
    for (beta, count) in paths.into_iter().zip(counts) {
        if count.is_zero() {
            continue;
        }
        let det = lp_determinant(&beta, kernel)?;
        let coeff = T::from_rational(&BigRational::from_integer(count.clone()));
        value = value + coeff * det.clone();
        terms.push(ZTerm {
            beta,
            tilings: count,
            det,
        });
    }
    Ok(ZExpansion {
        alpha: alpha.clone(),
        value,
        terms,
    })
}

fn rational_of(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

/// Checks that the given grid boundary edges appear in strictly increasing
/// ccw order (up to one cyclic rotation), as required of the labels
/// `e_1, …, e_{2N}`.
fn check_ccw_order(g: &GridModel, edges: &[usize]) -> Result<()> {
    let l = g.boundary_ccw.len();
    let idx: Vec<usize> = edges
        .iter()
        .map(|&e| g.ccw_index_of(e).ok_or(ExactError::NotCcwOrdered))
        .collect::<Result<_>>()?;
    if idx.is_empty() {
        return Ok(());
    }
    let base = idx[0];
    let rel: Vec<usize> = idx.iter().map(|&k| (k + l - base) % l).collect();
    if rel.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(ExactError::NotCcwOrdered)
    }
}

/// The probability of the connectivity event `∩_ℓ {e_{a_ℓ} ⇝ e_{b_ℓ}}` for
/// marked boundary edges `edges` (grid edge ids in ccw label order) and the
/// link pattern `alpha`, from the inverse Fomin sum. With non-unit
/// conductances the partition function is divided by the source-edge
/// conductances `Π_ℓ c(e_{a_ℓ})`.
///
/// ```
/// use ustlerw::combinatorics::unnested;
/// use ustlerw::exact::connectivity_probability;
/// use ustlerw::lattice::{build_grid, excursion_kernel_rational, DomainSpec};
///
/// // a single link: the branch from e₁'s interior end exits through e₂,
/// // so Z reduces to the excursion-kernel entry itself
/// let g = build_grid(&DomainSpec::rectangle(1.0, 1.0, 0.25)).unwrap();
/// let edges = vec![g.boundary_ccw[0], g.boundary_ccw[5]];
/// let k = excursion_kernel_rational(&g, &edges).unwrap();
/// let z = connectivity_probability(&g, &edges, &unnested(1), &k).unwrap();
/// assert_eq!(z.value, k.values[0][1]);
/// ```
pub fn connectivity_probability<T: Scalar>(
    g: &GridModel,
    edges: &[usize],
    alpha: &LinkObject,
    kernel: &KernelMatrix<T>,
) -> Result<ZExpansion<T>> {
    check_ccw_order(g, edges)?;
    let mut z = z_expansion(alpha, kernel)?;
    let mut denom = BigRational::from_integer(1.into());
    for &(a, _) in &alpha.links() {
        denom *= rational_of(g.conductance[edges[a - 1]]);
    }
    let denom = T::from_rational(&denom);
    z.value = z.value / denom;
    Ok(z)
}

/// The label data of a boundary-visit configuration resolved on a grid.
#[derive(Clone, Debug)]
pub struct VisitSetup {
    /// Grid boundary-edge ids in label order `e_1, …, e_{2N}` (entry edge
    /// first).
    pub labels: Vec<usize>,
    pub alpha: LinkObject,
    /// 0-based matrix index pairs `(j_s − 1, j_s)` of the flank slots.
    pub slot_pairs: Vec<(usize, usize)>,
    /// Grid edge ids of the unit-distance edges `ê_s`, in visit-time order.
    pub hat_edges: Vec<usize>,
    /// `Π_s c(ê_s) / (c(ê_{s;1}) c(ê_{s;2}))`.
    pub prefactor: BigRational,
    pub in_edge: usize,
    pub out_edge: usize,
}

/// Resolves the marked points of a grid (one `in`, one `out`, and the visit
/// points in visit-time order) against a visit order `ω`.
pub fn visit_setup(g: &GridModel, omega: &VisitOrder) -> Result<VisitSetup> {
    let ins = g.marked_with_role(Role::In);
    let outs = g.marked_with_role(Role::Out);
    let visits = g.marked_with_role(Role::Visit);
    if ins.len() != 1 || outs.len() != 1 {
        return Err(ExactError::MissingInOut);
    }
    if visits.len() != omega.n_visits() {
        return Err(ExactError::VisitCountMismatch(
            omega.n_visits(),
            visits.len(),
        ));
    }
    let vs = visit_structure(omega);
    let n2 = 2 * (omega.n_visits() + 1);
    let mut labels = vec![usize::MAX; n2];
    labels[vs.in_label - 1] = ins[0].edge;
    labels[vs.out_label - 1] = outs[0].edge;
    let mut hat_edges = Vec::new();
    let mut prefactor = BigRational::from_integer(1.into());
    for (s, mk) in visits.iter().enumerate() {
        let cell = mk.visit.expect("visit marked point carries a cell");
        let (lo, _) = vs.pairs[s];
        let e_lo = g.boundary_ccw[cell.flank_ccw.0];
        let e_hi = g.boundary_ccw[cell.flank_ccw.1];
        labels[lo - 1] = e_lo;
        labels[lo] = e_hi;
        hat_edges.push(cell.hat_edge);
        let c_hat = rational_of(g.conductance[cell.hat_edge]);
        let c1 = rational_of(g.conductance[e_lo]);
        let c2 = rational_of(g.conductance[e_hi]);
        prefactor *= c_hat / (c1 * c2);
    }
    check_ccw_order(g, &labels)?;
    Ok(VisitSetup {
        labels,
        alpha: vs.alpha,
        slot_pairs: vs.pairs.iter().map(|&(lo, hi)| (lo - 1, hi - 1)).collect(),
        hat_edges,
        prefactor,
        in_edge: ins[0].edge,
        out_edge: outs[0].edge,
    })
}

/// Boundary-visit probability as the direct ratio
/// `P = prefactor × Z_{α(ω)}(e_1, …, e_{2N}) / K(e_in, e_out)`.
pub fn visit_probability_direct<T: Scalar>(
    g: &GridModel,
    setup: &VisitSetup,
    kernel: &KernelMatrix<T>,
) -> Result<T> {
    let z = z_expansion(&setup.alpha, kernel)?;
    // Z_α is divided by the source conductances; K(e_in, e_out) in the
    // denominator is itself a partition function Z(e_in, e_out)/c(e_in), so
    // the c(e_in) factors cancel and only the visit-source factors remain.
    let mut denom = BigRational::from_integer(1.into());
    for &(a, _) in &setup.alpha.links() {
        if setup.labels[a - 1] != setup.in_edge {
            denom *= rational_of(g.conductance[setup.labels[a - 1]]);
        }
    }
    let i_in = setup
        .labels
        .iter()
        .position(|&e| e == setup.in_edge)
        .unwrap();
    let i_out = setup
        .labels
        .iter()
        .position(|&e| e == setup.out_edge)
        .unwrap();
    let k_in_out = kernel.values[i_in][i_out].clone();
    if k_in_out.is_zero() {
        return Err(ExactError::ZeroDenominator);
    }
    let pre = T::from_rational(&setup.prefactor);
    let den = T::from_rational(&denom);
    Ok(pre * (z.value / (k_in_out * den)))
}

/// Boundary-visit probability via the discrete replacing algorithm: the
/// kernel matrix has each second flank slot replaced by a tangential
/// difference quotient, and the inverse Fomin sum of the replaced matrix,
/// times `δ` per visit, reproduces `Z_{α(ω)}` exactly.
pub fn visit_probability_replacing<T: Scalar>(
    g: &GridModel,
    setup: &VisitSetup,
    kernel: &KernelMatrix<T>,
) -> Result<T> {
    let delta = T::from_rational(&rational_of(g.delta));
    let replaced = kernel.with_derivative_slots(&setup.slot_pairs, &delta)?;
    let z = z_expansion(&setup.alpha, &replaced)?;
    let mut z_value = z.value;
    for _ in 0..setup.slot_pairs.len() {
        z_value = z_value * delta.clone();
    }
    let mut denom = BigRational::from_integer(1.into());
    for &(a, _) in &setup.alpha.links() {
        if setup.labels[a - 1] != setup.in_edge {
            denom *= rational_of(g.conductance[setup.labels[a - 1]]);
        }
    }
    let i_in = setup
        .labels
        .iter()
        .position(|&e| e == setup.in_edge)
        .unwrap();
    let i_out = setup
        .labels
        .iter()
        .position(|&e| e == setup.out_edge)
        .unwrap();
    let k_in_out = kernel.values[i_in][i_out].clone();
    if k_in_out.is_zero() {
        return Err(ExactError::ZeroDenominator);
    }
    let pre = T::from_rational(&setup.prefactor);
    let den = T::from_rational(&denom);
    Ok(pre * (z_value / (k_in_out * den)))
}

/// The `2N` flanking boundary edges of the marked faces in label order for
/// the boundary-touching-subtree formula: enumeration is counterclockwise
/// starting right after `v*_1`, so `e_1` is the ccw-later flank of `v*_1`,
/// `e_{2N}` its ccw-earlier flank, and each unnested link spans the boundary
/// arc between consecutive marked faces. Faces are given as lower-left
/// lattice corners (distinct, non-neighboring, in ccw order); unit
/// conductances only.
pub fn free_subtree_edges(g: &GridModel, faces: &[(i64, i64)]) -> Result<Vec<usize>> {
    if g.conductance.iter().any(|&c| c != 1.0) {
        return Err(ExactError::NonUnitConductance);
    }
    let n = faces.len();
    if n == 0 {
        return Err(ExactError::BadFaceConfiguration);
    }
    let mut flanks = Vec::with_capacity(n);
    for &f in faces {
        let fl = g.face_flank_edges(f);
        if fl.len() != 2 || !g.is_boundary_face(f) {
            return Err(ExactError::BadBoundaryFace(f.0, f.1));
        }
        flanks.push(fl);
    }
    // non-neighboring: no two faces share a side
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (faces[i], faces[j]);
            if (a.0 - b.0).abs() + (a.1 - b.1).abs() <= 1 {
                return Err(ExactError::BadFaceConfiguration);
            }
        }
    }
    // rotate the flat per-face [earlier, later] list left by one so labels
    // start at the ccw-later flank of the first face
    let flat: Vec<usize> = flanks.into_iter().flatten().collect();
    check_ccw_order(g, &flat).map_err(|_| ExactError::BadFaceConfiguration)?;
    let mut edges = flat[1..].to_vec();
    edges.push(flat[0]);
    Ok(edges)
}

/// The probability that the free spanning tree on the dual (face) graph has
/// a boundary-touching subtree meeting the boundary exactly at the given
/// faces: `P = 2^N Z_unnested(e_1, …, e_{2N})` over the flank edges of
/// [`free_subtree_edges`]. Each of the `2^N` orientations of the `N`
/// separating wired-tree branches contributes `Z_unnested` equally.
pub fn free_subtree_probability<T: Scalar>(
    g: &GridModel,
    faces: &[(i64, i64)],
    kernel: &KernelMatrix<T>,
) -> Result<T> {
    if g.conductance.iter().any(|&c| c != 1.0) {
        return Err(ExactError::NonUnitConductance);
    }
    let n = faces.len();
    let alpha = unnested(n);
    let z = z_expansion(&alpha, kernel)?;
    let two_n = T::from_rational(&BigRational::from_integer(BigInt::from(1) << n));
    Ok(two_n * z.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_grid, excursion_kernel_rational, DomainSpec};
    use crate::oracle;
    use num::ToPrimitive;

    fn grid(delta: f64) -> GridModel {
        build_grid(&DomainSpec::rectangle(1.0, 1.0, delta)).unwrap()
    }

    #[test]
    fn single_link_z_is_kernel_entry() {
        let g = grid(1.0 / 3.0);
        let edges = vec![g.boundary_ccw[0], g.boundary_ccw[5]];
        let k = excursion_kernel_rational(&g, &edges).unwrap();
        let alpha = unnested(1);
        let z = connectivity_probability(&g, &edges, &alpha, &k).unwrap();
        assert_eq!(z.value, k.values[0][1]);
        let brute = oracle::connectivity_probability_bruteforce(&g, &edges, &alpha).unwrap();
        assert_eq!(z.value, brute);
    }

    #[test]
    fn two_link_connectivity_matches_bruteforce_exactly() {
        let g = grid(1.0 / 3.0);
        // four marked boundary edges spread around the square
        let edges: Vec<usize> = [0usize, 2, 4, 6]
            .iter()
            .map(|&k| g.boundary_ccw[k])
            .collect();
        let k = excursion_kernel_rational(&g, &edges).unwrap();
        for alpha in enumerate_dyck_paths(2).unwrap() {
            let z = connectivity_probability(&g, &edges, &alpha, &k).unwrap();
            let brute =
                oracle::connectivity_probability_bruteforce(&g, &edges, &alpha).unwrap();
            assert_eq!(z.value, brute, "alpha = {}", alpha.parens());
        }
    }

    #[test]
    fn fomin_consistency_det_is_m_weighted_sum_of_z() {
        // Δ_α(K) = Σ_β M_{α,β} Z_β with unit tile weights
        use crate::combinatorics::incidence_matrices;
        use num::One;
        let g = grid(1.0 / 3.0);
        let edges: Vec<usize> = [1usize, 3, 5, 7]
            .iter()
            .map(|&k| g.boundary_ccw[k])
            .collect();
        let k = excursion_kernel_rational(&g, &edges).unwrap();
        let paths = enumerate_dyck_paths(2).unwrap();
        let (m, _) = incidence_matrices(2, &|_| BigRational::one()).unwrap();
        let zs: Vec<BigRational> = paths
            .iter()
            .map(|a| z_expansion(a, &k).unwrap().value)
            .collect();
        for (i, alpha) in paths.iter().enumerate() {
            let det = lp_determinant(alpha, &k).unwrap();
            let mut acc = BigRational::zero();
            for (j, z) in zs.iter().enumerate() {
                acc += m.entry(i, j) * z;
            }
            assert_eq!(det, acc, "alpha = {}", alpha.parens());
        }
    }

    fn visit_grid(n_visits: usize) -> (GridModel, VisitOrder) {
        use crate::lattice::{MarkedPoint, Role};
        // unit square, δ = 1/4: boundary edges 0..=2 bottom, 3..=5 right,
        // 6..=8 top, 9..=11 left (ccw from the origin corner)
        let mut points = vec![
            MarkedPoint {
                x: 0.5,
                y: 0.0,
                role: Role::In,
            },
            MarkedPoint {
                x: 0.0,
                y: 0.5,
                role: Role::Out,
            },
        ];
        let omega = match n_visits {
            1 => {
                points.push(MarkedPoint {
                    x: 1.0,
                    y: 0.5,
                    role: Role::Visit,
                });
                VisitOrder(vec![1])
            }
            2 => {
                points.push(MarkedPoint {
                    x: 1.0,
                    y: 0.5,
                    role: Role::Visit,
                });
                points.push(MarkedPoint {
                    x: 0.5,
                    y: 1.0,
                    role: Role::Visit,
                });
                VisitOrder(vec![1, 1])
            }
            _ => unreachable!(),
        };
        let spec = DomainSpec::rectangle(1.0, 1.0, 0.25).with_points(points);
        (build_grid(&spec).unwrap(), omega)
    }

    #[test]
    fn visit_probability_matches_bruteforce_exactly() {
        let (g, omega) = visit_grid(1);
        let setup = visit_setup(&g, &omega).unwrap();
        let k = excursion_kernel_rational(&g, &setup.labels).unwrap();
        let p = visit_probability_direct(&g, &setup, &k).unwrap();
        let brute = oracle::visit_probability_bruteforce(
            &g,
            setup.in_edge,
            setup.out_edge,
            &setup.hat_edges,
        )
        .unwrap();
        assert_eq!(p, brute);
        assert!(p.to_f64().unwrap() > 0.0);
    }

    #[test]
    fn replacing_algorithm_is_exact() {
        for n_visits in [1, 2] {
            let (g, omega) = visit_grid(n_visits);
            let setup = visit_setup(&g, &omega).unwrap();
            let k = excursion_kernel_rational(&g, &setup.labels).unwrap();
            let direct = visit_probability_direct(&g, &setup, &k).unwrap();
            let replaced = visit_probability_replacing(&g, &setup, &k).unwrap();
            assert_eq!(direct, replaced, "n_visits = {n_visits}");
        }
    }

    #[test]
    fn free_subtree_single_face_matches_bruteforce() {
        let g = grid(0.25);
        // middle face on the bottom boundary
        let faces = [(1i64, 0i64)];
        let edges = free_subtree_edges(&g, &faces).unwrap();
        let k = excursion_kernel_rational(&g, &edges).unwrap();
        let p = free_subtree_probability(&g, &faces, &k).unwrap();
        let orients = oracle::free_subtree_orientation_probabilities(&g, &faces).unwrap();
        assert!(orients.iter().all(|q| *q == orients[0]));
        let sum: BigRational = orients.iter().sum();
        assert_eq!(p, sum);
    }

    #[test]
    fn free_subtree_two_faces_matches_bruteforce() {
        let g = grid(0.25);
        // middle faces of the bottom and top boundaries, ccw order
        let faces = [(1i64, 0i64), (2i64, 3i64)];
        let edges = free_subtree_edges(&g, &faces).unwrap();
        let k = excursion_kernel_rational(&g, &edges).unwrap();
        let p = free_subtree_probability(&g, &faces, &k).unwrap();
        let orients = oracle::free_subtree_orientation_probabilities(&g, &faces).unwrap();
        assert!(orients.iter().all(|q| *q == orients[0]));
        let sum: BigRational = orients.iter().sum();
        assert_eq!(p, sum);
    }

    #[test]
    fn wired_tree_complements_are_dual_spanning_trees() {
        let g = grid(1.0 / 3.0);
        let count = oracle::check_dual_spanning_trees(&g).unwrap();
        assert_eq!(count, 192);
    }

    #[test]
    fn neighboring_faces_rejected() {
        let g = grid(0.25);
        assert!(matches!(
            free_subtree_edges(&g, &[(1, 0), (2, 0)]),
            Err(ExactError::BadFaceConfiguration)
        ));
    }
}
