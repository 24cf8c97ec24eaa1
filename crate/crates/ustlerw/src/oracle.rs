//! Brute-force ground truth on tiny graphs: exhaustive (weighted) spanning
//! tree enumeration of the wired graph, exact connectivity- and
//! boundary-visit-event probabilities, and the oriented branch events behind
//! the free-spanning-tree boundary-touching subtree. All results are exact
//! rationals.

use crate::combinatorics::LinkObject;
use crate::lattice::GridModel;
use crate::linalg::determinant;
use num::{BigRational, One, Zero};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("graph too large for exhaustive enumeration: {0} interior vertices (max {1})")]
    TooLarge(usize, usize),
    #[error("tree enumeration exceeded the cap of {0} spanning trees")]
    TooManyTrees(u64),
    #[error("matrix-tree self-check failed: enumeration {0} vs determinant {1}")]
    MatrixTreeMismatch(String, String),
    #[error("marked edges must be distinct boundary edges")]
    BadMarkedEdges,
    #[error("pattern size {0} does not match {1} marked edges")]
    SizeMismatch(usize, usize),
    #[error("face {0:?} is not a face of the grid")]
    BadFace(i64, i64),
}

type Result<T> = std::result::Result<T, OracleError>;

pub const MAX_ORACLE_INTERIOR: usize = 20;
pub const MAX_ORACLE_TREES: u64 = 20_000_000;

/// The wired multigraph: interior vertices plus one wired vertex absorbing
/// all boundary edges (parallel edges to the wired vertex stay distinct).
pub struct WiredGraph {
    /// Number of vertices; the wired vertex is `n - 1`.
    pub n: usize,
    /// `(u, v, weight, grid edge id)`.
    pub edges: Vec<(usize, usize, BigRational, usize)>,
}

impl WiredGraph {
    pub fn from_grid(g: &GridModel) -> Result<Self> {
        let ni = g.n_interior();
        if ni > MAX_ORACLE_INTERIOR {
            return Err(OracleError::TooLarge(ni, MAX_ORACLE_INTERIOR));
        }
        let wired = ni;
        let mut edges = Vec::new();
        for (id, e) in g.edges.iter().enumerate() {
            let u = g.interior_index[e.a].unwrap_or(wired);
            let v = g.interior_index[e.b].unwrap_or(wired);
            let w = BigRational::from_float(g.conductance[id]).expect("finite conductance");
            edges.push((u, v, w, id));
        }
        Ok(WiredGraph {
            n: ni + 1,
            edges,
        })
    }

    /// Weighted spanning tree count by the matrix-tree theorem (reduced
    /// weighted Laplacian determinant, deleting the wired vertex).
    pub fn matrix_tree_count(&self) -> BigRational {
        let n = self.n - 1;
        let mut l = vec![vec![BigRational::zero(); n]; n];
        for (u, v, w, _) in &self.edges {
            let (u, v) = (*u, *v);
            if u < n {
                l[u][u] = &l[u][u] + w;
            }
            if v < n {
                l[v][v] = &l[v][v] + w;
            }
            if u < n && v < n {
                l[u][v] = &l[u][v] - w;
                l[v][u] = &l[v][u] - w;
            }
        }
        determinant(l)
    }

    /// Visits every spanning tree exactly once (as a sorted list of indices
    /// into `self.edges`), via include/exclude recursion with a
    /// connectivity-pruned exclude branch. Returns the number of trees.
    pub fn for_each_spanning_tree<F: FnMut(&[usize])>(&self, mut f: F) -> Result<u64> {
        let mut chosen: Vec<usize> = Vec::new();
        let mut count = 0u64;
        // union-find with explicit history for rollback
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                x = parent[x];
            }
            x
        }
        fn connected_using(
            n: usize,
            edges: &[(usize, usize, BigRational, usize)],
            from: usize,
            skip_first: bool,
            parent: &mut Vec<usize>,
        ) -> bool {
            // does the contracted graph plus the remaining edges connect?
            let snapshot = parent.clone();
            let mut comps = {
                let mut roots: Vec<usize> = (0..n).map(|v| find(parent, v)).collect();
                roots.sort_unstable();
                roots.dedup();
                roots.len()
            };
            let start = if skip_first { from + 1 } else { from };
            for e in &edges[start.min(edges.len())..] {
                let (ru, rv) = (find(parent, e.0), find(parent, e.1));
                if ru != rv {
                    parent[ru] = rv;
                    comps -= 1;
                    if comps == 1 {
                        break;
                    }
                }
            }
            *parent = snapshot;
            comps == 1
        }
        fn rec<F: FnMut(&[usize])>(
            wg: &WiredGraph,
            idx: usize,
            parent: &mut Vec<usize>,
            chosen: &mut Vec<usize>,
            count: &mut u64,
            f: &mut F,
        ) -> Result<()> {
            // fully merged: remaining edges are all excluded
            let all_one = {
                let r0 = find(parent, 0);
                (1..wg.n).all(|v| find(parent, v) == r0)
            };
            if all_one {
                *count += 1;
                if *count > MAX_ORACLE_TREES {
                    return Err(OracleError::TooManyTrees(MAX_ORACLE_TREES));
                }
                f(chosen);
                return Ok(());
            }
            if idx >= wg.edges.len() {
                return Ok(());
            }
            let (u, v, _, _) = wg.edges[idx];
            let (ru, rv) = (find(parent, u), find(parent, v));
            if ru == rv {
                // would close a cycle: forced exclude
                return rec(wg, idx + 1, parent, chosen, count, f);
            }
            // include branch
            parent[ru] = rv;
            chosen.push(idx);
            rec(wg, idx + 1, parent, chosen, count, f)?;
            chosen.pop();
            parent[ru] = ru;
            // exclude branch, pruned if the rest can no longer connect
            if connected_using(wg.n, &wg.edges, idx, true, parent) {
                rec(wg, idx + 1, parent, chosen, count, f)?;
            }
            Ok(())
        }
        rec(self, 0, &mut parent, &mut chosen, &mut count, &mut f)?;
        Ok(count)
    }

    pub fn tree_weight(&self, tree: &[usize]) -> BigRational {
        tree.iter()
            .map(|&i| &self.edges[i].2)
            .fold(BigRational::one(), |acc, w| acc * w)
    }

    /// Total weighted spanning-tree count by enumeration, self-checked
    /// against the matrix-tree theorem.
    pub fn checked_total_weight(&self) -> Result<(BigRational, u64)> {
        let mut total = BigRational::zero();
        let count = self.for_each_spanning_tree(|t| {
            total = &total + self.tree_weight(t);
        })?;
        let mt = self.matrix_tree_count();
        if total != mt {
            return Err(OracleError::MatrixTreeMismatch(
                total.to_string(),
                mt.to_string(),
            ));
        }
        Ok((total, count))
    }
}

/// For a spanning tree of the wired graph, the boundary edge via which the
/// branch from interior vertex `start` reaches the wired vertex, together
/// with the branch as a vertex path (wired vertex excluded).
fn branch_exit(
    wg: &WiredGraph,
    adj: &[Vec<(usize, usize)>], // per vertex: (edge index in wg.edges, other end)
    start: usize,
) -> (usize, Vec<usize>) {
    // BFS parent pointers from the wired vertex, then read off the path
    let wired = wg.n - 1;
    let mut parent_edge = vec![usize::MAX; wg.n];
    let mut parent_vtx = vec![usize::MAX; wg.n];
    let mut visited = vec![false; wg.n];
    let mut queue = std::collections::VecDeque::new();
    visited[wired] = true;
    queue.push_back(wired);
    while let Some(v) = queue.pop_front() {
        for &(e, w) in &adj[v] {
            if !visited[w] {
                visited[w] = true;
                parent_edge[w] = e;
                parent_vtx[w] = v;
                queue.push_back(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut v = start;
    let mut last_edge = usize::MAX;
    while v != wired {
        path.push(v);
        last_edge = parent_edge[v];
        v = parent_vtx[v];
    }
    (wg.edges[last_edge].3, path)
}

fn tree_adjacency(wg: &WiredGraph, tree: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); wg.n];
    for &i in tree {
        let (u, v, _, _) = wg.edges[i];
        adj[u].push((i, v));
        adj[v].push((i, u));
    }
    adj
}

/// Exact probability of the oriented branch event
/// `∩_ℓ { e_{a_ℓ} ⇝ e_{b_ℓ} }` by exhaustive enumeration: for each link, the
/// tree branch from the interior endpoint of the first edge must exit the
/// domain via the second edge.
pub fn branch_event_probability(
    g: &GridModel,
    oriented_links: &[(usize, usize)], // pairs of grid boundary-edge ids (from, via)
) -> Result<BigRational> {
    let wg = WiredGraph::from_grid(g)?;
    for &(a, b) in oriented_links {
        if !g.is_boundary_edge(a) || !g.is_boundary_edge(b) || a == b {
            return Err(OracleError::BadMarkedEdges);
        }
    }
    let starts: Vec<usize> = oriented_links
        .iter()
        .map(|&(a, _)| g.interior_index[g.interior_end(a)].unwrap())
        .collect();
    let mut hit = BigRational::zero();
    let mut total = BigRational::zero();
    wg.for_each_spanning_tree(|tree| {
        let w = wg.tree_weight(tree);
        total = &total + &w;
        let adj = tree_adjacency(&wg, tree);
        let ok = oriented_links.iter().zip(&starts).all(|(&(_, b), &s)| {
            let (exit, _) = branch_exit(&wg, &adj, s);
            exit == b
        });
        if ok {
            hit = &hit + &w;
        }
    })?;
    let mt = wg.matrix_tree_count();
    if total != mt {
        return Err(OracleError::MatrixTreeMismatch(
            total.to_string(),
            mt.to_string(),
        ));
    }
    Ok(hit / total)
}

/// Exact probability of the connectivity event for marked boundary edges
/// `edges` (given as grid edge ids in ccw order, labels `1..=2N`) and link
/// pattern `alpha`, with the canonical left-to-right orientation of each
/// link.
pub fn connectivity_probability_bruteforce(
    g: &GridModel,
    edges: &[usize],
    alpha: &LinkObject,
) -> Result<BigRational> {
    let links = alpha.links();
    if edges.len() != 2 * links.len() {
        return Err(OracleError::SizeMismatch(2 * links.len(), edges.len()));
    }
    let oriented: Vec<(usize, usize)> = links
        .iter()
        .map(|&(a, b)| (edges[a - 1], edges[b - 1]))
        .collect();
    branch_event_probability(g, &oriented)
}

/// Exact probability that the LERW branch from `e_in` to `e_out` (the wired
/// UST branch conditioned on `e_in ⇝ e_out`) traverses the given unit-distance
/// edges in the given order. `hat_edges[s]` is a grid edge id joining two
/// interior endpoints of boundary edges; direction of traversal is forced by
/// planarity, so only containment in order is checked via the branch path.
pub fn visit_probability_bruteforce(
    g: &GridModel,
    e_in: usize,
    e_out: usize,
    hat_edges: &[usize],
) -> Result<BigRational> {
    let wg = WiredGraph::from_grid(g)?;
    let start = g.interior_index[g.interior_end(e_in)].unwrap();
    // map grid edge id -> wired edge index
    let by_grid: HashMap<usize, usize> = wg
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| (e.3, i))
        .collect();
    let hats: Vec<usize> = hat_edges.iter().map(|e| by_grid[e]).collect();
    let mut hit = BigRational::zero();
    let mut cond = BigRational::zero();
    wg.for_each_spanning_tree(|tree| {
        let adj = tree_adjacency(&wg, tree);
        let (exit, path) = branch_exit(&wg, &adj, start);
        if exit != e_out {
            return;
        }
        let w = wg.tree_weight(tree);
        cond = &cond + &w;
        // positions of each hat edge along the branch, in traversal order
        let mut pos = Vec::new();
        for &h in &hats {
            let (u, v, _, _) = wg.edges[h];
            let found = path.windows(2).position(|p| {
                (p[0] == u && p[1] == v) || (p[0] == v && p[1] == u)
            });
            match found {
                Some(k) => pos.push(k),
                None => return,
            }
        }
        if pos.windows(2).all(|p| p[0] < p[1]) {
            hit = &hit + &w;
        }
    })?;
    if cond.is_zero() {
        return Ok(BigRational::zero());
    }
    Ok(hit / cond)
}

/// Exact probabilities, by exhaustive tree enumeration, of the `2^N`
/// oriented branch-connectivity events underlying the boundary-touching
/// subtree of the free spanning tree: for marked faces `v*_1, …, v*_N` with
/// flank edges labeled `e_1, …, e_{2N}` counterclockwise starting after
/// `v*_1`, orientation vector `b ∈ {0,1}^N` gives the event
/// `∩_k { e_{2k−1} ⇝ e_{2k} }` with the `k`-th link reversed when `b_k = 1`.
/// All `2^N` probabilities should be equal and their sum is the
/// boundary-touching-subtree probability.
pub fn free_subtree_orientation_probabilities(
    g: &GridModel,
    target_faces: &[(i64, i64)],
) -> Result<Vec<BigRational>> {
    let n = target_faces.len();
    let mut flat = Vec::with_capacity(2 * n);
    for &f in target_faces {
        let fl = g.face_flank_edges(f);
        if fl.len() != 2 {
            return Err(OracleError::BadFace(f.0, f.1));
        }
        flat.extend(fl);
    }
    // labels start at the ccw-later flank of the first face
    let mut labels = flat[1..].to_vec();
    labels.push(flat[0]);

    let wg = WiredGraph::from_grid(g)?;
    let starts: Vec<usize> = labels
        .iter()
        .map(|&e| g.interior_index[g.interior_end(e)].unwrap())
        .collect();
    let mut hits = vec![BigRational::zero(); 1 << n];
    let mut total = BigRational::zero();
    wg.for_each_spanning_tree(|tree| {
        let w = wg.tree_weight(tree);
        total = &total + &w;
        let adj = tree_adjacency(&wg, tree);
        let exits: Vec<usize> = starts.iter().map(|&s| branch_exit(&wg, &adj, s).0).collect();
        for (orient, hit) in hits.iter_mut().enumerate() {
            let ok = (0..n).all(|k| {
                let (i, j) = (2 * k, 2 * k + 1);
                let (from, to) = if orient >> k & 1 == 0 { (i, j) } else { (j, i) };
                exits[from] == labels[to]
            });
            if ok {
                *hit = &*hit + &w;
            }
        }
    })?;
    Ok(hits.into_iter().map(|h| h / &total).collect())
}

/// Validates, over all spanning trees of the wired graph, that the
/// complementary dual edge set `{e* : e ∉ 𝒯}` is a spanning tree of the
/// face-adjacency graph (the duality between wired and free spanning
/// trees). Returns the number of trees checked.
pub fn check_dual_spanning_trees(g: &GridModel) -> Result<u64> {
    let face_index: HashMap<(i64, i64), usize> = g
        .squares
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    let nf = g.squares.len();
    // the dual edge of each grid edge: the two faces flanking it
    let mut dual: Vec<(usize, usize)> = Vec::new();
    for e in &g.edges {
        let (pa, pb) = (g.verts[e.a], g.verts[e.b]);
        let (f1, f2) = if pa.1 == pb.1 {
            let i = pa.0.min(pb.0);
            ((i, pa.1), (i, pa.1 - 1))
        } else {
            let j = pa.1.min(pb.1);
            ((pa.0, j), (pa.0 - 1, j))
        };
        let (Some(&u), Some(&v)) = (face_index.get(&f1), face_index.get(&f2)) else {
            return Err(OracleError::BadFace(f1.0, f1.1));
        };
        dual.push((u, v));
    }
    let wg = WiredGraph::from_grid(g)?;
    let mut all_ok = true;
    let count = wg.for_each_spanning_tree(|tree| {
        let mut in_tree = vec![false; g.edges.len()];
        for &i in tree {
            in_tree[wg.edges[i].3] = true;
        }
        let mut parent: Vec<usize> = (0..nf).collect();
        fn find(p: &mut Vec<usize>, mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut edges_used = 0usize;
        let mut acyclic = true;
        for (gid, &(u, v)) in dual.iter().enumerate() {
            if in_tree[gid] {
                continue;
            }
            edges_used += 1;
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru == rv {
                acyclic = false;
            } else {
                parent[ru] = rv;
            }
        }
        if !(acyclic && edges_used == nf - 1) {
            all_ok = false;
        }
    })?;
    if !all_ok {
        return Err(OracleError::MatrixTreeMismatch(
            "dual complement is not always a spanning tree".into(),
            "duality".into(),
        ));
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_grid, DomainSpec};

    fn grid(delta: f64) -> GridModel {
        build_grid(&DomainSpec::rectangle(1.0, 1.0, delta)).unwrap()
    }

    #[test]
    fn two_by_two_interior_has_192_trees() {
        // δ = 1/3: 2×2 interior vertices in the unit square
        let g = grid(1.0 / 3.0);
        assert_eq!(g.n_interior(), 4);
        let wg = WiredGraph::from_grid(&g).unwrap();
        let (total, count) = wg.checked_total_weight().unwrap();
        assert_eq!(count, 192);
        assert_eq!(total, BigRational::from_integer(192.into()));
    }

    #[test]
    fn single_interior_vertex_has_four_trees() {
        let g = grid(0.5);
        let wg = WiredGraph::from_grid(&g).unwrap();
        let (total, count) = wg.checked_total_weight().unwrap();
        assert_eq!(count, 4);
        assert_eq!(total, BigRational::from_integer(4.into()));
    }

    #[test]
    fn single_link_event_is_harmonic_measure() {
        // branch from e° exits via e' with probability K(e, e') (= H_{e°}(e'))
        let g = grid(1.0 / 3.0);
        let e = g.boundary_ccw[0];
        let f = g.boundary_ccw[3];
        let p = branch_event_probability(&g, &[(e, f)]).unwrap();
        let h = crate::lattice::harmonic_field_rational(&g, f).unwrap();
        let k = g.interior_index[g.interior_end(e)].unwrap();
        assert_eq!(p, h[k]);
    }

    #[test]
    fn branch_event_orientation_symmetric() {
        let g = grid(1.0 / 3.0);
        let e = g.boundary_ccw[1];
        let f = g.boundary_ccw[5];
        let p1 = branch_event_probability(&g, &[(e, f)]).unwrap();
        let p2 = branch_event_probability(&g, &[(f, e)]).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn weighted_total_matches_matrix_tree() {
        let mut spec = DomainSpec::rectangle(1.0, 1.0, 1.0 / 3.0);
        spec.conductance = Some(crate::lattice::ConductanceSpec::Affine {
            a: 1.0,
            b: 0.5,
            c: 0.25,
        });
        let g = build_grid(&spec).unwrap();
        let wg = WiredGraph::from_grid(&g).unwrap();
        // checked_total_weight errors on mismatch
        wg.checked_total_weight().unwrap();
    }
}
