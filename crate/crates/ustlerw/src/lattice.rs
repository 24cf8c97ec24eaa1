//! Square-grid approximation of rectilinear Jordan domains, discrete harmonic
//! measure, and random-walk excursion kernels with optional edge
//! conductances.
//!
//! The approximation follows the closed-squares construction: take all closed
//! `δ`-squares contained in the domain, keep the largest connected component
//! `A` of them, and let the graph vertices be the lattice points of the
//! closure of `A`. A vertex is interior when all four incident squares belong
//! to `A`; edges join lattice neighbors at distance `δ` with at least one
//! interior endpoint; boundary edges join a boundary vertex to an interior
//! one and carry a canonical counterclockwise cyclic order.

use crate::linalg::{solve_dense, SparseSpd};
use num::{BigRational, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("polygon must be a simple axis-aligned polygon with ≥ 4 vertices")]
    BadPolygon,
    #[error("mesh size must be positive")]
    BadDelta,
    #[error("grid approximation has an empty interior at delta={0}")]
    EmptyInterior(f64),
    #[error("boundary contour is not a single cycle (pinched or multiply connected approximation)")]
    BadContour,
    #[error("marked point ({0}, {1}) is farther than 2δ from every boundary edge")]
    MarkedPointTooFar(f64, f64),
    #[error("marked point ({0}, {1}) is within 2δ of a polygon corner")]
    MarkedPointNearCorner(f64, f64),
    #[error("no admissible flanking boundary-edge pair near visit point ({0}, {1})")]
    NoVisitCell(f64, f64),
    #[error("conductances must be positive and finite")]
    BadConductance,
    #[error("exact solver limited to {0} interior vertices (got {1})")]
    ExactSolverTooLarge(usize, usize),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("derivative slots must name disjoint ccw-adjacent flanking pairs")]
    BadDerivativeSlots,
}

type Result<T> = std::result::Result<T, LatticeError>;

// ---------------------------------------------------------------------------
// Domain specification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    In,
    Out,
    Plain,
    Visit,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MarkedPoint {
    pub x: f64,
    pub y: f64,
    pub role: Role,
}

/// Edge conductances, evaluated at edge midpoints.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConductanceSpec {
    Uniform { value: f64 },
    /// `c(x, y) = a + b·x + c·y` at the edge midpoint.
    Affine { a: f64, b: f64, c: f64 },
}

impl ConductanceSpec {
    fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            ConductanceSpec::Uniform { value } => value,
            ConductanceSpec::Affine { a, b, c } => a + b * x + c * y,
        }
    }
}

/// A rectilinear domain with mesh size and marked boundary points; the JSON
/// form is the CLI input format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Axis-aligned simple polygon, counterclockwise or clockwise.
    pub polygon: Vec<[f64; 2]>,
    pub delta: f64,
    #[serde(default)]
    pub points: Vec<MarkedPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductance: Option<ConductanceSpec>,
}

impl DomainSpec {
    pub fn rectangle(width: f64, height: f64, delta: f64) -> Self {
        DomainSpec {
            polygon: vec![[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]],
            delta,
            points: vec![],
            conductance: None,
        }
    }

    pub fn with_points(mut self, points: Vec<MarkedPoint>) -> Self {
        self.points = points;
        self
    }
}

// ---------------------------------------------------------------------------
// Grid model
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
}

/// A resolved marked boundary point.
#[derive(Clone, Copy, Debug)]
pub struct MarkedEdge {
    pub role: Role,
    /// Index into the ccw boundary-edge order.
    pub ccw_index: usize,
    /// Edge id of the (first, for visits) boundary edge.
    pub edge: usize,
    /// For visit points: the ccw-adjacent flanking pair `(k, k+1)` of ccw
    /// indices and the edge `ê` joining their interior endpoints.
    pub visit: Option<VisitCell>,
}

#[derive(Clone, Copy, Debug)]
pub struct VisitCell {
    /// CCW indices of the flanking boundary edges, in ccw order.
    pub flank_ccw: (usize, usize),
    /// Edge id of `ê`, joining the flanks' interior endpoints.
    pub hat_edge: usize,
}

#[derive(Clone, Debug)]
pub struct GridModel {
    pub delta: f64,
    /// Lattice coordinates (multiples of δ) of every vertex.
    pub verts: Vec<(i64, i64)>,
    pub is_interior: Vec<bool>,
    /// Map from interior vertex id to a dense interior index.
    pub interior_index: Vec<Option<usize>>,
    pub interior: Vec<usize>,
    pub edges: Vec<Edge>,
    pub conductance: Vec<f64>,
    /// Incidence: per vertex, the (edge id, other endpoint) pairs.
    pub incident: Vec<Vec<(usize, usize)>>,
    /// Boundary edges as edge ids, in counterclockwise cyclic order.
    pub boundary_ccw: Vec<usize>,
    /// For a boundary edge id, its (boundary vertex, interior vertex).
    pub boundary_ends: HashMap<usize, (usize, usize)>,
    pub marked: Vec<MarkedEdge>,
    /// Lower-left lattice corners of the δ-squares forming the approximation
    /// (the faces of the graph).
    pub squares: Vec<(i64, i64)>,
    vertex_at: HashMap<(i64, i64), usize>,
}

impl GridModel {
    pub fn vertex_pos(&self, v: usize) -> (f64, f64) {
        let (ix, iy) = self.verts[v];
        (ix as f64 * self.delta, iy as f64 * self.delta)
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn vertex_at(&self, lattice: (i64, i64)) -> Option<usize> {
        self.vertex_at.get(&lattice).copied()
    }

    /// Interior endpoint `e°` of a boundary edge.
    pub fn interior_end(&self, edge: usize) -> usize {
        self.boundary_ends[&edge].1
    }

    pub fn boundary_end(&self, edge: usize) -> usize {
        self.boundary_ends[&edge].0
    }

    pub fn is_boundary_edge(&self, edge: usize) -> bool {
        self.boundary_ends.contains_key(&edge)
    }

    pub fn marked_with_role(&self, role: Role) -> Vec<&MarkedEdge> {
        self.marked.iter().filter(|m| m.role == role).collect()
    }

    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        self.incident[u]
            .iter()
            .find(|&&(_, w)| w == v)
            .map(|&(e, _)| e)
    }

    pub fn ccw_index_of(&self, edge: usize) -> Option<usize> {
        self.boundary_ccw.iter().position(|&e| e == edge)
    }

    /// The four sides of the face with lower-left lattice corner `sq`, as
    /// edge ids (only sides that are edges of the graph).
    pub fn face_sides(&self, sq: (i64, i64)) -> Vec<usize> {
        let (i, j) = sq;
        let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
        let mut out = Vec::new();
        for k in 0..4 {
            let (Some(&u), Some(&v)) = (
                self.vertex_at.get(&corners[k]),
                self.vertex_at.get(&corners[(k + 1) % 4]),
            ) else {
                continue;
            };
            if let Some(e) = self.edge_between(u, v) {
                out.push(e);
            }
        }
        out
    }

    /// A face is a boundary face when one of its corners is a boundary
    /// vertex.
    pub fn is_boundary_face(&self, sq: (i64, i64)) -> bool {
        let (i, j) = sq;
        [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            .iter()
            .any(|c| {
                self.vertex_at
                    .get(c)
                    .map(|&v| !self.is_interior[v])
                    .unwrap_or(false)
            })
    }

    /// The boundary edges among the sides of a face, sorted by ccw index.
    pub fn face_flank_edges(&self, sq: (i64, i64)) -> Vec<usize> {
        let mut flanks: Vec<usize> = self
            .face_sides(sq)
            .into_iter()
            .filter(|e| self.is_boundary_edge(*e))
            .collect();
        flanks.sort_by_key(|&e| self.ccw_index_of(e));
        flanks
    }

    /// Weighted vertex degree (sum of incident conductances).
    pub fn weighted_degree(&self, v: usize) -> f64 {
        self.incident[v]
            .iter()
            .map(|&(e, _)| self.conductance[e])
            .sum()
    }
}

fn dist2(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)
}

/// Even-odd point-in-polygon test (point assumed off the boundary).
fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let [x1, y1] = poly[i];
        let [x2, y2] = poly[(i + 1) % n];
        if (y1 > y) != (y2 > y) {
            let xint = x1 + (y - y1) / (y2 - y1) * (x2 - x1);
            if x < xint {
                inside = !inside;
            }
        }
    }
    inside
}

/// Does any polygon segment intersect the open square `(x0, x0+d) × (y0, y0+d)`?
fn segment_cuts_square(poly: &[[f64; 2]], x0: f64, y0: f64, d: f64) -> bool {
    let n = poly.len();
    for i in 0..n {
        let [x1, y1] = poly[i];
        let [x2, y2] = poly[(i + 1) % n];
        if (x1 - x2).abs() < f64::EPSILON {
            // vertical segment x = x1
            let (ylo, yhi) = (y1.min(y2), y1.max(y2));
            if x1 > x0 && x1 < x0 + d && ylo < y0 + d && yhi > y0 {
                return true;
            }
        } else {
            // horizontal segment y = y1
            let (xlo, xhi) = (x1.min(x2), x1.max(x2));
            if y1 > y0 && y1 < y0 + d && xlo < x0 + d && xhi > x0 {
                return true;
            }
        }
    }
    false
}

fn rot_ccw(d: (i64, i64)) -> (i64, i64) {
    (-d.1, d.0)
}

fn rot_cw(d: (i64, i64)) -> (i64, i64) {
    (d.1, -d.0)
}

/// Builds the square-grid approximation of the domain.
pub fn build_grid(spec: &DomainSpec) -> Result<GridModel> {
    let poly = &spec.polygon;
    if poly.len() < 4 {
        return Err(LatticeError::BadPolygon);
    }
    for i in 0..poly.len() {
        let [x1, y1] = poly[i];
        let [x2, y2] = poly[(i + 1) % poly.len()];
        let axis_aligned = (x1 - x2).abs() < f64::EPSILON || (y1 - y2).abs() < f64::EPSILON;
        if !axis_aligned || ((x1, y1) == (x2, y2)) {
            return Err(LatticeError::BadPolygon);
        }
    }
    let delta = spec.delta;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(LatticeError::BadDelta);
    }

    // 1. closed δ-squares contained in the domain
    let xs: Vec<f64> = poly.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = poly.iter().map(|p| p[1]).collect();
    let (xmin, xmax) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (ymin, ymax) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let i0 = (xmin / delta).floor() as i64 - 1;
    let i1 = (xmax / delta).ceil() as i64 + 1;
    let j0 = (ymin / delta).floor() as i64 - 1;
    let j1 = (ymax / delta).ceil() as i64 + 1;
    let mut squares: Vec<(i64, i64)> = Vec::new();
    for i in i0..i1 {
        for j in j0..j1 {
            let (x0, y0) = (i as f64 * delta, j as f64 * delta);
            let (cx, cy) = (x0 + delta / 2.0, y0 + delta / 2.0);
            if point_in_polygon(poly, cx, cy) && !segment_cuts_square(poly, x0, y0, delta) {
                squares.push((i, j));
            }
        }
    }
    if squares.is_empty() {
        return Err(LatticeError::EmptyInterior(delta));
    }
    squares.sort_unstable();
    let square_set: std::collections::HashSet<(i64, i64)> = squares.iter().copied().collect();

    // 2. largest connected component (ties: component of the lexicographically
    //    minimal square)
    let mut comp_id: HashMap<(i64, i64), usize> = HashMap::new();
    let mut comp_sizes: Vec<usize> = Vec::new();
    for &s in &squares {
        if comp_id.contains_key(&s) {
            continue;
        }
        let id = comp_sizes.len();
        let mut stack = vec![s];
        let mut size = 0usize;
        comp_id.insert(s, id);
        while let Some((i, j)) = stack.pop() {
            size += 1;
            for nb in [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)] {
                if square_set.contains(&nb) && !comp_id.contains_key(&nb) {
                    comp_id.insert(nb, id);
                    stack.push(nb);
                }
            }
        }
        comp_sizes.push(size);
    }
    let max_size = *comp_sizes.iter().max().unwrap();
    // squares are sorted, so the first square attaining max size is the
    // lexicographically minimal one among tied components
    let chosen = squares
        .iter()
        .map(|s| comp_id[s])
        .find(|&id| comp_sizes[id] == max_size)
        .unwrap();
    let comp: std::collections::HashSet<(i64, i64)> = squares
        .iter()
        .copied()
        .filter(|s| comp_id[s] == chosen)
        .collect();

    // 3. vertices and interior/boundary classification
    let mut vset: Vec<(i64, i64)> = comp
        .iter()
        .flat_map(|&(i, j)| [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)])
        .collect();
    vset.sort_unstable();
    vset.dedup();
    let vertex_at: HashMap<(i64, i64), usize> =
        vset.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let is_int = |&(i, j): &(i64, i64)| {
        comp.contains(&(i, j))
            && comp.contains(&(i - 1, j))
            && comp.contains(&(i, j - 1))
            && comp.contains(&(i - 1, j - 1))
    };
    let is_interior: Vec<bool> = vset.iter().map(is_int).collect();
    let interior: Vec<usize> = (0..vset.len()).filter(|&k| is_interior[k]).collect();
    if interior.is_empty() {
        return Err(LatticeError::EmptyInterior(delta));
    }
    let mut interior_index = vec![None; vset.len()];
    for (k, &v) in interior.iter().enumerate() {
        interior_index[v] = Some(k);
    }

    // 4. edges (distance δ, at least one interior endpoint)
    let mut edges = Vec::new();
    let mut conductance = Vec::new();
    let mut incident = vec![Vec::new(); vset.len()];
    for (a, &(i, j)) in vset.iter().enumerate() {
        for nb in [(i + 1, j), (i, j + 1)] {
            let Some(&b) = vertex_at.get(&nb) else { continue };
            if !is_interior[a] && !is_interior[b] {
                continue;
            }
            let id = edges.len();
            edges.push(Edge { a, b });
            let (xa, ya) = (i as f64 * delta, j as f64 * delta);
            let (xb, yb) = (nb.0 as f64 * delta, nb.1 as f64 * delta);
            let c = spec
                .conductance
                .map(|cs| cs.eval((xa + xb) / 2.0, (ya + yb) / 2.0))
                .unwrap_or(1.0);
            if !(c > 0.0) || !c.is_finite() {
                return Err(LatticeError::BadConductance);
            }
            conductance.push(c);
            incident[a].push((id, b));
            incident[b].push((id, a));
        }
    }
    let edge_between = |u: usize, v: usize| -> Option<usize> {
        incident[u]
            .iter()
            .find(|&&(_, w)| w == v)
            .map(|&(e, _)| e)
    };

    // 5. ccw boundary contour: directed unit segments with the component on
    //    the left, chained into a single cycle
    let mut seg_from: HashMap<(i64, i64), (i64, i64)> = HashMap::new();
    let mut n_segs = 0usize;
    for &(i, j) in &comp {
        // (start, dir) for each side of square (i, j) lying on the contour
        let sides = [
            ((i, j), (1, 0), (i, j - 1)),         // bottom: comp above, travel +x
            ((i + 1, j + 1), (-1, 0), (i, j + 1)), // top: comp below, travel −x
            ((i + 1, j), (0, 1), (i + 1, j)),      // right: comp west, travel +y
            ((i, j + 1), (0, -1), (i - 1, j)),     // left: comp east, travel −y
        ];
        for (start, dir, other) in sides {
            if comp.contains(&other) {
                continue;
            }
            if seg_from.insert(start, dir).is_some() {
                return Err(LatticeError::BadContour); // pinch point
            }
            n_segs += 1;
        }
    }
    let start = *seg_from.keys().min().ok_or(LatticeError::BadContour)?;
    let mut contour: Vec<((i64, i64), (i64, i64))> = Vec::new(); // (vertex, incoming dir)
    let mut cur = start;
    loop {
        let dir = *seg_from.get(&cur).ok_or(LatticeError::BadContour)?;
        let next = (cur.0 + dir.0, cur.1 + dir.1);
        contour.push((next, dir));
        cur = next;
        if cur == start {
            break;
        }
        if contour.len() > n_segs {
            return Err(LatticeError::BadContour);
        }
    }
    if contour.len() != n_segs {
        return Err(LatticeError::BadContour);
    }

    // 6. boundary edges in ccw order: at each contour vertex, sweep the four
    //    directions clockwise starting from the ccw rotation of the incoming
    //    direction, collecting interior neighbors
    let mut boundary_ccw = Vec::new();
    let mut boundary_ends = HashMap::new();
    for &(v, d_in) in &contour {
        let Some(&vid) = vertex_at.get(&v) else { continue };
        if is_interior[vid] {
            return Err(LatticeError::BadContour);
        }
        let mut dir = rot_ccw(d_in);
        for _ in 0..4 {
            let nb = (v.0 + dir.0, v.1 + dir.1);
            if let Some(&w) = vertex_at.get(&nb) {
                if is_interior[w] {
                    let e = edge_between(vid, w).expect("boundary edge must exist");
                    boundary_ccw.push(e);
                    boundary_ends.insert(e, (vid, w));
                }
            }
            dir = rot_cw(dir);
        }
    }

    let mut g = GridModel {
        delta,
        verts: vset,
        is_interior,
        interior_index,
        interior,
        edges,
        conductance,
        incident,
        boundary_ccw,
        boundary_ends,
        marked: Vec::new(),
        squares: {
            let mut s: Vec<(i64, i64)> = comp.iter().copied().collect();
            s.sort_unstable();
            s
        },
        vertex_at,
    };

    // 7. marked points
    let corners: Vec<(f64, f64)> = poly.iter().map(|p| (p[0], p[1])).collect();
    let mut marked = Vec::new();
    for mp in &spec.points {
        let p = (mp.x, mp.y);
        if corners.iter().any(|&c| dist2(p, c) < (2.0 * delta).powi(2)) {
            return Err(LatticeError::MarkedPointNearCorner(mp.x, mp.y));
        }
        let m = if mp.role == Role::Visit {
            resolve_visit_point(&g, p, mp.role)?
        } else {
            resolve_plain_point(&g, p, mp.role)?
        };
        marked.push(m);
    }
    g.marked = marked;
    Ok(g)
}

fn resolve_plain_point(g: &GridModel, p: (f64, f64), role: Role) -> Result<MarkedEdge> {
    let mut best: Option<(f64, usize)> = None;
    for (k, &e) in g.boundary_ccw.iter().enumerate() {
        let b = g.boundary_end(e);
        let d = dist2(p, g.vertex_pos(b));
        // strict improvement keeps the smaller ccw index on ties
        if best.map(|(bd, _)| d < bd).unwrap_or(true) {
            best = Some((d, k));
        }
    }
    let (d, k) = best.ok_or(LatticeError::MarkedPointTooFar(p.0, p.1))?;
    if d.sqrt() > 2.0 * g.delta + 1e-12 {
        return Err(LatticeError::MarkedPointTooFar(p.0, p.1));
    }
    Ok(MarkedEdge {
        role,
        ccw_index: k,
        edge: g.boundary_ccw[k],
        visit: None,
    })
}

fn resolve_visit_point(g: &GridModel, p: (f64, f64), role: Role) -> Result<MarkedEdge> {
    let nb = g.boundary_ccw.len();
    let mut best: Option<(f64, usize, usize)> = None; // (dist², ccw index k, hat edge)
    for k in 0..nb {
        let e1 = g.boundary_ccw[k];
        let e2 = g.boundary_ccw[(k + 1) % nb];
        let (b1, i1) = g.boundary_ends[&e1];
        let (b2, i2) = g.boundary_ends[&e2];
        // admissible visit cell: flanking interiors one lattice unit apart
        let (p1, p2) = (g.verts[i1], g.verts[i2]);
        let adjacent = (p1.0 - p2.0).abs() + (p1.1 - p2.1).abs() == 1;
        if !adjacent {
            continue;
        }
        let Some(hat) = g.incident[i1]
            .iter()
            .find(|&&(_, w)| w == i2)
            .map(|&(e, _)| e)
        else {
            continue;
        };
        let (q1, q2) = (g.vertex_pos(b1), g.vertex_pos(b2));
        let mid = ((q1.0 + q2.0) / 2.0, (q1.1 + q2.1) / 2.0);
        let d = dist2(p, mid);
        if best.map(|(bd, _, _)| d < bd).unwrap_or(true) {
            best = Some((d, k, hat));
        }
    }
    let (d, k, hat) = best.ok_or(LatticeError::NoVisitCell(p.0, p.1))?;
    if d.sqrt() > 2.0 * g.delta + 1e-12 {
        return Err(LatticeError::MarkedPointTooFar(p.0, p.1));
    }
    Ok(MarkedEdge {
        role,
        ccw_index: k,
        edge: g.boundary_ccw[k],
        visit: Some(VisitCell {
            flank_ccw: (k, (k + 1) % nb),
            hat_edge: hat,
        }),
    })
}

// ---------------------------------------------------------------------------
// Harmonic fields and kernels
// ---------------------------------------------------------------------------

pub const EXACT_SOLVER_MAX_INTERIOR: usize = 40;
pub const CG_TOLERANCE: f64 = 1e-12;

/// The harmonic field `v ↦ H_v(target)`: probability that the
/// conductance-weighted walk started at `v` first reaches the boundary by
/// traversing the boundary edge `target`. Values indexed by interior index.
pub fn harmonic_field_f64(g: &GridModel, target: usize) -> Result<Vec<f64>> {
    let n = g.n_interior();
    let (_, ti) = *g
        .boundary_ends
        .get(&target)
        .ok_or_else(|| LatticeError::Solver("target is not a boundary edge".into()))?;
    let mut diag = vec![0.0; n];
    let mut off = vec![Vec::new(); n];
    for (k, &v) in g.interior.iter().enumerate() {
        diag[k] = g.weighted_degree(v);
        for &(e, w) in &g.incident[v] {
            if let Some(wk) = g.interior_index[w] {
                off[k].push((wk, -g.conductance[e]));
            }
        }
    }
    let mut rhs = vec![0.0; n];
    rhs[g.interior_index[ti].unwrap()] = g.conductance[target];
    let sys = SparseSpd { diag, off };
    Ok(sys.solve_cg(&rhs, CG_TOLERANCE))
}

/// Exact rational harmonic field by dense elimination (small grids only).
pub fn harmonic_field_rational(g: &GridModel, target: usize) -> Result<Vec<BigRational>> {
    let n = g.n_interior();
    if n > EXACT_SOLVER_MAX_INTERIOR {
        return Err(LatticeError::ExactSolverTooLarge(
            EXACT_SOLVER_MAX_INTERIOR,
            n,
        ));
    }
    let (_, ti) = *g
        .boundary_ends
        .get(&target)
        .ok_or_else(|| LatticeError::Solver("target is not a boundary edge".into()))?;
    let rat = |x: f64| BigRational::from_float(x).expect("finite conductance");
    let mut a = vec![vec![BigRational::zero(); n]; n];
    for (k, &v) in g.interior.iter().enumerate() {
        a[k][k] = rat(g.weighted_degree(v));
        for &(e, w) in &g.incident[v] {
            if let Some(wk) = g.interior_index[w] {
                a[k][wk] = -rat(g.conductance[e]);
            }
        }
    }
    let mut rhs = vec![BigRational::zero(); n];
    rhs[g.interior_index[ti].unwrap()] = rat(g.conductance[target]);
    solve_dense(a, rhs).ok_or_else(|| LatticeError::Solver("singular Laplacian".into()))
}

/// A symmetric matrix of excursion-kernel values over a list of marked
/// boundary edges (optionally with tangential-derivative slots applied).
#[derive(Clone, Debug)]
pub struct KernelMatrix<T> {
    /// Boundary edge ids indexing rows/columns.
    pub edges: Vec<usize>,
    pub values: Vec<Vec<T>>,
}

impl<T: crate::linalg::Scalar> KernelMatrix<T> {
    pub fn size(&self) -> usize {
        self.edges.len()
    }

    /// Replaces index slots by discrete tangential derivatives: for each pair
    /// `(i, i+1)` of matrix indices (flanking boundary edges in ccw order),
    /// zero the pair-internal entries and replace the `i+1` row and column by
    /// the difference quotient `(K(e_{i+1}, ·) − K(e_i, ·)) / δ`.
    ///
    /// This is the kernel-level form of the discrete replacing algorithm: a
    /// determinant of the result, times `δ` per pair, equals the
    /// corresponding limit combination of the original determinants.
    pub fn with_derivative_slots(&self, pairs: &[(usize, usize)], delta: &T) -> Result<Self> {
        let n = self.size();
        let mut used = vec![false; n];
        for &(i, j) in pairs {
            if j != i + 1 || j >= n || used[i] || used[j] {
                return Err(LatticeError::BadDerivativeSlots);
            }
            used[i] = true;
            used[j] = true;
        }
        let mut out = self.values.clone();
        // zero pair-internal entries first (their coefficient in the inverse
        // Fomin sums vanishes, so this does not change the evaluated values)
        for &(i, j) in pairs {
            out[i][j] = T::zero();
            out[j][i] = T::zero();
        }
        // rows, then columns; mixed second differences arise automatically
        for &(i, j) in pairs {
            for col in 0..n {
                if col == i || col == j {
                    continue;
                }
                out[j][col] = (out[j][col].clone() - out[i][col].clone()) / delta.clone();
            }
        }
        for &(i, j) in pairs {
            for row in 0..n {
                if row == i || row == j {
                    continue;
                }
                out[row][j] = (out[row][j].clone() - out[row][i].clone()) / delta.clone();
            }
        }
        Ok(KernelMatrix {
            edges: self.edges.clone(),
            values: out,
        })
    }
}

/// Assembles the (conductance-weighted, symmetric) excursion-kernel matrix
/// `K(e, e') = c(e) · H_{e°}(e')` over the given boundary edges, in the f64
/// backend.
pub fn excursion_kernel_f64(g: &GridModel, edges: &[usize]) -> Result<KernelMatrix<f64>> {
    let n = edges.len();
    let mut values = vec![vec![0.0; n]; n];
    let fields: Vec<Vec<f64>> = edges
        .iter()
        .map(|&e| harmonic_field_f64(g, e))
        .collect::<Result<_>>()?;
    for i in 0..n {
        let ei = g.interior_end(edges[i]);
        let ci = g.conductance[edges[i]];
        for j in 0..n {
            if i == j {
                continue;
            }
            values[i][j] = ci * fields[j][g.interior_index[ei].unwrap()];
        }
    }
    Ok(KernelMatrix {
        edges: edges.to_vec(),
        values,
    })
}

/// Exact rational excursion-kernel matrix (small grids).
///
/// ```
/// use num::BigRational;
/// use ustlerw::lattice::{build_grid, excursion_kernel_rational, DomainSpec};
///
/// // unit square at δ = 1/2: a single interior vertex with four boundary
/// // edges, so the walk from any edge's interior end exits each other edge
/// // with probability 1/4
/// let g = build_grid(&DomainSpec::rectangle(1.0, 1.0, 0.5)).unwrap();
/// let edges = vec![g.boundary_ccw[0], g.boundary_ccw[2]];
/// let k = excursion_kernel_rational(&g, &edges).unwrap();
/// assert_eq!(k.values[0][1], BigRational::new(1.into(), 4.into()));
/// ```
pub fn excursion_kernel_rational(
    g: &GridModel,
    edges: &[usize],
) -> Result<KernelMatrix<BigRational>> {
    let n = edges.len();
    let mut values = vec![vec![BigRational::zero(); n]; n];
    let fields: Vec<Vec<BigRational>> = edges
        .iter()
        .map(|&e| harmonic_field_rational(g, e))
        .collect::<Result<_>>()?;
    for i in 0..n {
        let ei = g.interior_end(edges[i]);
        let ci = BigRational::from_float(g.conductance[edges[i]]).unwrap();
        for j in 0..n {
            if i == j {
                continue;
            }
            values[i][j] = &ci * &fields[j][g.interior_index[ei].unwrap()];
        }
    }
    Ok(KernelMatrix {
        edges: edges.to_vec(),
        values,
    })
}

impl KernelMatrix<BigRational> {
    pub fn to_f64(&self) -> KernelMatrix<f64> {
        KernelMatrix {
            edges: self.edges.clone(),
            values: self
                .values
                .iter()
                .map(|row| row.iter().map(|v| v.to_f64().unwrap()).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::One;

    fn unit_square(delta: f64) -> DomainSpec {
        DomainSpec::rectangle(1.0, 1.0, delta)
    }

    #[test]
    fn unit_square_half_mesh() {
        let g = build_grid(&unit_square(0.5)).unwrap();
        assert_eq!(g.n_interior(), 1);
        assert_eq!(g.boundary_ccw.len(), 4);
        assert_eq!(g.edges.len(), 4);
    }

    #[test]
    fn unit_square_quarter_mesh() {
        let g = build_grid(&unit_square(0.25)).unwrap();
        assert_eq!(g.n_interior(), 9);
        assert_eq!(g.boundary_ccw.len(), 12);
    }

    #[test]
    fn coarse_mesh_is_empty_interior() {
        assert!(matches!(
            build_grid(&unit_square(1.0)),
            Err(LatticeError::EmptyInterior(_))
        ));
    }

    #[test]
    fn ccw_order_visits_every_boundary_edge_once() {
        for delta in [0.5, 0.25, 0.125] {
            let g = build_grid(&unit_square(delta)).unwrap();
            let mut seen: Vec<usize> = g.boundary_ccw.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), g.boundary_ccw.len());
            assert_eq!(seen.len(), g.boundary_ends.len());
        }
    }

    #[test]
    fn l_shaped_domain_builds() {
        let spec = DomainSpec {
            polygon: vec![
                [0.0, 0.0],
                [2.0, 0.0],
                [2.0, 1.0],
                [1.0, 1.0],
                [1.0, 2.0],
                [0.0, 2.0],
            ],
            delta: 0.25,
            points: vec![],
            conductance: None,
        };
        let g = build_grid(&spec).unwrap();
        assert!(g.n_interior() > 0);
        // Euler-style sanity: single boundary cycle was already enforced.
        let mut seen = g.boundary_ccw.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), g.boundary_ccw.len());
    }

    #[test]
    fn single_vertex_harmonic_measure_is_quarter() {
        let g = build_grid(&unit_square(0.5)).unwrap();
        for &e in &g.boundary_ccw {
            let h = harmonic_field_rational(&g, e).unwrap();
            assert_eq!(h[0], BigRational::new(1.into(), 4.into()));
            let hf = harmonic_field_f64(&g, e).unwrap();
            assert!((hf[0] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_fields_sum_to_one() {
        let g = build_grid(&unit_square(0.25)).unwrap();
        let mut total = vec![BigRational::zero(); g.n_interior()];
        for &e in &g.boundary_ccw {
            let h = harmonic_field_rational(&g, e).unwrap();
            for (t, v) in total.iter_mut().zip(h) {
                *t = &*t + v;
            }
        }
        for t in total {
            assert!(t.is_one());
        }
    }

    #[test]
    fn rational_and_float_fields_agree() {
        let g = build_grid(&unit_square(0.25)).unwrap();
        let e = g.boundary_ccw[3];
        let hr = harmonic_field_rational(&g, e).unwrap();
        let hf = harmonic_field_f64(&g, e).unwrap();
        for (r, f) in hr.iter().zip(hf) {
            assert!((r.to_f64().unwrap() - f).abs() < 1e-11);
        }
    }

    #[test]
    fn kernel_is_symmetric_rational() {
        let spec = unit_square(0.25);
        let g = build_grid(&spec).unwrap();
        let edges: Vec<usize> = g.boundary_ccw.iter().copied().take(6).collect();
        let k = excursion_kernel_rational(&g, &edges).unwrap();
        for i in 0..k.size() {
            for j in 0..k.size() {
                assert_eq!(k.values[i][j], k.values[j][i], "i={i} j={j}");
            }
        }
    }

    #[test]
    fn weighted_kernel_is_symmetric_and_reduces_to_unweighted() {
        let mut spec = unit_square(0.25);
        spec.conductance = Some(ConductanceSpec::Affine {
            a: 1.0,
            b: 0.5,
            c: 0.25,
        });
        let g = build_grid(&spec).unwrap();
        let edges: Vec<usize> = g.boundary_ccw.iter().copied().take(5).collect();
        let k = excursion_kernel_rational(&g, &edges).unwrap();
        for i in 0..k.size() {
            for j in 0..k.size() {
                assert_eq!(k.values[i][j], k.values[j][i], "i={i} j={j}");
            }
        }

        let mut unit = unit_square(0.25);
        unit.conductance = Some(ConductanceSpec::Uniform { value: 1.0 });
        let g1 = build_grid(&unit).unwrap();
        let g0 = build_grid(&unit_square(0.25)).unwrap();
        let k1 = excursion_kernel_rational(&g1, &edges).unwrap();
        let k0 = excursion_kernel_rational(&g0, &edges).unwrap();
        assert_eq!(k1.values, k0.values);
    }

    #[test]
    fn marked_points_resolve_on_unit_square() {
        let spec = unit_square(0.125).with_points(vec![
            MarkedPoint {
                x: 0.5,
                y: 0.0,
                role: Role::In,
            },
            MarkedPoint {
                x: 1.0,
                y: 0.5,
                role: Role::Out,
            },
            MarkedPoint {
                x: 0.5,
                y: 1.0,
                role: Role::Visit,
            },
        ]);
        let g = build_grid(&spec).unwrap();
        assert_eq!(g.marked.len(), 3);
        let visit = g.marked[2];
        let cell = visit.visit.unwrap();
        // flanks are ccw-adjacent
        assert_eq!((cell.flank_ccw.0 + 1) % g.boundary_ccw.len(), cell.flank_ccw.1);
        // ê joins the two interior endpoints
        let e1 = g.boundary_ccw[cell.flank_ccw.0];
        let e2 = g.boundary_ccw[cell.flank_ccw.1];
        let hat = g.edges[cell.hat_edge];
        let ends = [hat.a, hat.b];
        assert!(ends.contains(&g.interior_end(e1)));
        assert!(ends.contains(&g.interior_end(e2)));
    }

    #[test]
    fn marked_point_near_corner_rejected() {
        let spec = unit_square(0.25).with_points(vec![MarkedPoint {
            x: 0.1,
            y: 0.0,
            role: Role::In,
        }]);
        assert!(matches!(
            build_grid(&spec),
            Err(LatticeError::MarkedPointNearCorner(_, _))
        ));
    }

    #[test]
    fn domain_spec_json_roundtrip() {
        let spec = unit_square(0.25).with_points(vec![MarkedPoint {
            x: 0.5,
            y: 0.0,
            role: Role::In,
        }]);
        let text = serde_json::to_string(&spec).unwrap();
        let back: DomainSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.polygon, spec.polygon);
        assert_eq!(back.points.len(), 1);
        assert_eq!(back.points[0].role, Role::In);
    }
}
