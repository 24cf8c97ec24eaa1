//! Monte Carlo cross-checks: Wilson's algorithm for the wired uniform
//! spanning tree, loop-erased random walks, a Doob-transformed walk for
//! boundary-visit events conditioned on the exit edge, and binomial
//! estimators with standard errors.
//!
//! Sampling is deterministic given a seed: samples are split across a fixed
//! number of counter-mode RNG streams, so results do not depend on the
//! number of worker threads.

use crate::combinatorics::{visit_structure, LinkObject, VisitOrder};
use crate::exact::{visit_setup, ExactError};
use crate::lattice::{harmonic_field_f64, GridModel, LatticeError, Role};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error("marked edges must be distinct boundary edges")]
    BadMarkedEdges,
    #[error("pattern size {0} does not match {1} marked edges")]
    SizeMismatch(usize, usize),
    #[error("sample count must be positive")]
    ZeroSamples,
}

type Result<T> = std::result::Result<T, MonteCarloError>;

/// Number of independent RNG streams the samples are split across; fixed so
/// that estimates are reproducible independently of the thread count.
pub const RNG_STREAMS: u64 = 64;

/// A binomial Monte Carlo estimate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub n: u64,
    pub hits: u64,
    pub p_hat: f64,
    /// Binomial standard error `sqrt(p̂(1−p̂)/n)`.
    pub stderr: f64,
    pub seed: u64,
}

impl Estimate {
    fn from_counts(n: u64, hits: u64, seed: u64) -> Self {
        let p_hat = hits as f64 / n as f64;
        let stderr = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
        Estimate {
            n,
            hits,
            p_hat,
            stderr,
            seed,
        }
    }
}

/// Chronological loop erasure of a vertex path: whenever a vertex repeats,
/// the cycle since its previous occurrence is erased.
pub fn loop_erase(path: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    for &v in path {
        if let Some(&p) = pos.get(&v) {
            for w in out.drain(p + 1..) {
                pos.remove(&w);
            }
        } else {
            pos.insert(v, out.len());
            out.push(v);
        }
    }
    out
}

/// One step of the conductance-weighted walk from an interior vertex; both
/// variants carry the grid edge id traversed.
#[derive(Clone, Copy, Debug)]
enum Step {
    /// Move to another interior vertex (interior index, grid edge id).
    ToInterior(usize, usize),
    /// Absorb through the given boundary edge (grid edge id).
    Absorb(usize),
}

/// A sampled wired UST, stored as parent pointers toward the wired boundary.
#[derive(Clone, Debug)]
pub struct WiredUst {
    /// For each interior index: the grid edge toward the boundary and the
    /// parent interior index (`None` when the edge is a boundary edge).
    pub parent: Vec<(usize, Option<usize>)>,
}

impl WiredUst {
    /// The boundary edge via which the tree branch from the interior vertex
    /// `start` (interior index) reaches the boundary.
    pub fn branch_exit(&self, start: usize) -> usize {
        let mut v = start;
        loop {
            let (edge, next) = self.parent[v];
            match next {
                Some(w) => v = w,
                None => return edge,
            }
        }
    }
}

/// Wilson's-algorithm sampler for the wired UST, with the walk tables
/// (cumulative conductance weights per interior vertex) precomputed.
pub struct UstSampler {
    n_interior: usize,
    /// Per interior index: `(cumulative weight, step)`.
    steps: Vec<Vec<(f64, Step)>>,
}

impl UstSampler {
    pub fn new(g: &GridModel) -> Self {
        let mut steps = Vec::with_capacity(g.n_interior());
        for &v in &g.interior {
            let mut row = Vec::with_capacity(g.incident[v].len());
            let mut acc = 0.0;
            for &(e, w) in &g.incident[v] {
                acc += g.conductance[e];
                let step = match g.interior_index[w] {
                    Some(wk) => Step::ToInterior(wk, e),
                    None => Step::Absorb(e),
                };
                row.push((acc, step));
            }
            steps.push(row);
        }
        UstSampler {
            n_interior: g.n_interior(),
            steps,
        }
    }

    fn step<R: Rng>(&self, v: usize, rng: &mut R) -> Step {
        let row = &self.steps[v];
        let total = row.last().unwrap().0;
        let r = rng.gen::<f64>() * total;
        for &(acc, step) in row {
            if r < acc {
                return step;
            }
        }
        row.last().unwrap().1
    }

    /// Samples a wired UST: loop-erased walks from each not-yet-covered
    /// interior vertex, rooted at the wired boundary.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> WiredUst {
        let n = self.n_interior;
        let mut parent = vec![(usize::MAX, None); n];
        let mut in_tree = vec![false; n];
        let mut pos = vec![usize::MAX; n];
        let mut stack: Vec<usize> = Vec::new();
        let mut step_edges: Vec<Step> = Vec::new();
        for start in 0..n {
            if in_tree[start] {
                continue;
            }
            stack.clear();
            step_edges.clear();
            stack.push(start);
            pos[start] = 0;
            let final_parent: Option<usize> = loop {
                let cur = *stack.last().unwrap();
                match self.step(cur, rng) {
                    Step::Absorb(e) => {
                        step_edges.push(Step::Absorb(e));
                        break None;
                    }
                    Step::ToInterior(w, e) => {
                        if in_tree[w] {
                            step_edges.push(Step::ToInterior(w, e));
                            break Some(w);
                        }
                        if pos[w] != usize::MAX {
                            // loop erasure: truncate back to w
                            while stack.len() > pos[w] + 1 {
                                let v = stack.pop().unwrap();
                                pos[v] = usize::MAX;
                                step_edges.pop();
                            }
                        } else {
                            step_edges.push(Step::ToInterior(w, e));
                            pos[w] = stack.len();
                            stack.push(w);
                        }
                    }
                }
            };
            // attach the erased branch to the tree
            for (i, &v) in stack.iter().enumerate() {
                in_tree[v] = true;
                pos[v] = usize::MAX;
                parent[v] = match step_edges[i] {
                    Step::Absorb(e) => (e, None),
                    Step::ToInterior(w, e) => {
                        let next = if i + 1 < stack.len() {
                            stack[i + 1]
                        } else {
                            final_parent.unwrap()
                        };
                        debug_assert!(i + 1 == stack.len() || w == next);
                        (e, Some(next))
                    }
                };
            }
        }
        WiredUst { parent }
    }
}

fn split_counts(n: u64) -> Vec<(u64, u64)> {
    (0..RNG_STREAMS)
        .map(|i| {
            let base = n / RNG_STREAMS;
            let extra = u64::from(i < n % RNG_STREAMS);
            (i, base + extra)
        })
        .filter(|&(_, c)| c > 0)
        .collect()
}

fn parallel_hits<F>(n: u64, seed: u64, is_hit: F) -> u64
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    split_counts(n)
        .par_iter()
        .map(|&(stream, count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            (0..count).filter(|_| is_hit(&mut rng)).count() as u64
        })
        .sum()
}

/// Estimates the connectivity-event probability
/// `P[∩_ℓ {e_{a_ℓ} ⇝ e_{b_ℓ}}]` for marked boundary edges `edges` (grid edge
/// ids in ccw label order) and the link pattern `alpha`, by Wilson sampling
/// of the wired UST.
///
/// ```
/// use ustlerw::combinatorics::unnested;
/// use ustlerw::exact::connectivity_probability;
/// use ustlerw::lattice::{build_grid, excursion_kernel_f64, DomainSpec};
/// use ustlerw::montecarlo::estimate_connectivity;
///
/// let g = build_grid(&DomainSpec::rectangle(1.0, 1.0, 0.25)).unwrap();
/// let edges = vec![g.boundary_ccw[0], g.boundary_ccw[5]];
/// let alpha = unnested(1);
/// let k = excursion_kernel_f64(&g, &edges).unwrap();
/// let z = connectivity_probability(&g, &edges, &alpha, &k).unwrap().value;
/// let est = estimate_connectivity(&g, &edges, &alpha, 20_000, 1).unwrap();
/// assert!((est.p_hat - z).abs() <= 4.0 * est.stderr);
/// ```
pub fn estimate_connectivity(
    g: &GridModel,
    edges: &[usize],
    alpha: &LinkObject,
    n: u64,
    seed: u64,
) -> Result<Estimate> {
    if n == 0 {
        return Err(MonteCarloError::ZeroSamples);
    }
    if edges.len() != 2 * alpha.n() {
        return Err(MonteCarloError::SizeMismatch(2 * alpha.n(), edges.len()));
    }
    let mut distinct = edges.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != edges.len() || edges.iter().any(|&e| !g.is_boundary_edge(e)) {
        return Err(MonteCarloError::BadMarkedEdges);
    }
    // (interior index of e_{a_ℓ}°, required exit edge e_{b_ℓ}) per link
    let links: Vec<(usize, usize)> = alpha
        .links()
        .iter()
        .map(|&(a, b)| {
            let start = g.interior_index[g.interior_end(edges[a - 1])].unwrap();
            (start, edges[b - 1])
        })
        .collect();
    let sampler = UstSampler::new(g);
    let hits = parallel_hits(n, seed, |rng| {
        let ust = sampler.sample(rng);
        links.iter().all(|&(s, b)| ust.branch_exit(s) == b)
    });
    Ok(Estimate::from_counts(n, hits, seed))
}

/// The conductance-weighted walk from `e_in°` Doob-conditioned to exit the
/// domain through `e_out`: interior steps are reweighted by the harmonic
/// field `h(v) = H_v(e_out)` and every other boundary edge is suppressed.
pub struct ConditionedWalk {
    /// Interior index of `e_in°`.
    start: usize,
    /// Grid vertex id per interior index (for reporting paths).
    vertex_of: Vec<usize>,
    /// Per interior index: `(cumulative weight, step)`; the only absorbing
    /// step is through `e_out`.
    steps: Vec<Vec<(f64, Step)>>,
}

impl ConditionedWalk {
    pub fn new(g: &GridModel, e_in: usize, e_out: usize) -> Result<Self> {
        if e_in == e_out || !g.is_boundary_edge(e_in) || !g.is_boundary_edge(e_out) {
            return Err(MonteCarloError::BadMarkedEdges);
        }
        let h = harmonic_field_f64(g, e_out)?;
        let mut steps = Vec::with_capacity(g.n_interior());
        for &v in &g.interior {
            let mut row = Vec::new();
            let mut acc = 0.0;
            for &(e, w) in &g.incident[v] {
                match g.interior_index[w] {
                    Some(wk) => {
                        let weight = g.conductance[e] * h[wk];
                        if weight > 0.0 {
                            acc += weight;
                            row.push((acc, Step::ToInterior(wk, e)));
                        }
                    }
                    None if e == e_out => {
                        acc += g.conductance[e];
                        row.push((acc, Step::Absorb(e)));
                    }
                    None => {}
                }
            }
            steps.push(row);
        }
        Ok(ConditionedWalk {
            start: g.interior_index[g.interior_end(e_in)].unwrap(),
            vertex_of: g.interior.clone(),
            steps,
        })
    }

    /// Samples the conditioned walk and returns its loop erasure — the wired
    /// UST branch from `e_in°` conditioned on `{e_in ⇝ e_out}` — as grid
    /// vertex ids from `e_in°` to `e_out°`.
    pub fn sample_lerw<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let n = self.steps.len();
        let mut pos = vec![usize::MAX; n];
        let mut stack = vec![self.start];
        pos[self.start] = 0;
        loop {
            let cur = *stack.last().unwrap();
            let row = &self.steps[cur];
            let total = row.last().expect("conditioned walk has no dead ends").0;
            let r = rng.gen::<f64>() * total;
            let step = row
                .iter()
                .find(|&&(acc, _)| r < acc)
                .map(|&(_, s)| s)
                .unwrap_or(row.last().unwrap().1);
            match step {
                Step::Absorb(_) => break,
                Step::ToInterior(w, _) => {
                    if pos[w] != usize::MAX {
                        while stack.len() > pos[w] + 1 {
                            let v = stack.pop().unwrap();
                            pos[v] = usize::MAX;
                        }
                    } else {
                        pos[w] = stack.len();
                        stack.push(w);
                    }
                }
            }
        }
        stack.into_iter().map(|k| self.vertex_of[k]).collect()
    }
}

/// Estimates the boundary-visit probability
/// `P[LERW from e_in to e_out uses ê_1, …, ê_{N'} in order and direction]`
/// for the visit order `ω`, by sampling the conditioned loop-erased walk.
/// The `s`-th hat edge must be traversed from the interior endpoint of its
/// ccw-earlier flank to that of its ccw-later flank for a `+` visit, and in
/// the opposite direction for a `−` visit, with the traversals occurring in
/// visit-time order.
pub fn estimate_visit(g: &GridModel, omega: &VisitOrder, n: u64, seed: u64) -> Result<Estimate> {
    if n == 0 {
        return Err(MonteCarloError::ZeroSamples);
    }
    let setup = visit_setup(g, omega)?;
    let vs = visit_structure(omega);
    // directed hat traversals (from, to) as grid vertex ids, visit-time order
    let visits = g.marked_with_role(Role::Visit);
    let mut directed = Vec::with_capacity(visits.len());
    for (s, mk) in visits.iter().enumerate() {
        let cell = mk.visit.expect("visit marked point carries a cell");
        let lo = g.interior_end(g.boundary_ccw[cell.flank_ccw.0]);
        let hi = g.interior_end(g.boundary_ccw[cell.flank_ccw.1]);
        if vs.first_flank_is_lower[s] {
            directed.push((lo, hi));
        } else {
            directed.push((hi, lo));
        }
    }
    let walk = ConditionedWalk::new(g, setup.in_edge, setup.out_edge)?;
    let hits = parallel_hits(n, seed, |rng| {
        let path = walk.sample_lerw(rng);
        let mut from = 0usize;
        for &(u, v) in &directed {
            let found = path[from..]
                .windows(2)
                .position(|w| w[0] == u && w[1] == v);
            match found {
                Some(k) => from += k + 1,
                None => return false,
            }
        }
        true
    });
    Ok(Estimate::from_counts(n, hits, seed))
}
