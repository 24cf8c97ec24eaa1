//! Catalan-object machinery: Dyck paths / link patterns, the dominance and
//! parenthesis-reversal partial orders, nested and cover-inclusive Dyck
//! tilings, weighted incidence matrices and their inverses, wedge operations,
//! and the encoding of boundary-visit orders into link patterns.
//!
//! Conventions: positions are 1-based in the external API (`1..=2N`), 0-based
//! internally; the offset is the single constant [`INDEX_BASE`]. The
//! canonical enumeration of Dyck paths is lexicographic on step sequences
//! with down-steps ordered before up-steps, so the completely unnested
//! pattern `()()…()` comes first and the rainbow `((…))` last; this is a
//! linear extension of the dominance order.

use num::{BigInt, BigRational, One, Zero};
use thiserror::Error;

/// External indices are 1-based; internal storage is 0-based.
pub const INDEX_BASE: usize = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CombinatoricsError {
    #[error("step sequence is not a Dyck path")]
    InvalidSteps,
    #[error("cannot parse {0:?} as a balanced parenthesis expression")]
    Parse(String),
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("size {0} outside supported range {1}..={2}")]
    SizeOutOfRange(usize, usize, usize),
    #[error("position {0} out of range 1..={1}")]
    PositionOutOfRange(usize, usize),
    #[error("dominance precondition violated: lower path not dominated by upper path")]
    NotDominated,
    #[error("link set is not a planar pair partition of 1..=2N")]
    InvalidLinks,
}

type Result<T> = std::result::Result<T, CombinatoricsError>;

// ---------------------------------------------------------------------------
// LinkObject
// ---------------------------------------------------------------------------

/// A Dyck path of `2N` steps, equivalently a planar link pattern on `2N`
/// points or a balanced parenthesis expression.
///
/// The `Ord` derived from the step sequence (`-1 < +1` lexicographically) is
/// exactly the canonical enumeration order.
///
/// ```
/// use ustlerw::combinatorics::{rainbow, unnested, LinkObject};
///
/// let a = unnested(2); // ()() — links (1,2), (3,4)
/// assert_eq!(a.parens(), "()()");
/// assert_eq!(a.links(), vec![(1, 2), (3, 4)]);
///
/// let b = rainbow(2); // (()) — links (1,4), (2,3)
/// assert_eq!(b, LinkObject::from_links(&[(2, 3), (1, 4)]).unwrap());
/// ```
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkObject {
    steps: Vec<i8>,
}

impl std::fmt::Debug for LinkObject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LinkObject({})", self.parens())
    }
}

impl std::fmt::Display for LinkObject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.parens())
    }
}

impl std::str::FromStr for LinkObject {
    type Err = CombinatoricsError;
    fn from_str(s: &str) -> Result<Self> {
        let mut steps = Vec::with_capacity(s.len());
        for ch in s.chars() {
            match ch {
                '(' => steps.push(1),
                ')' => steps.push(-1),
                c if c.is_whitespace() => {}
                _ => return Err(CombinatoricsError::Parse(s.to_owned())),
            }
        }
        LinkObject::new(steps).map_err(|_| CombinatoricsError::Parse(s.to_owned()))
    }
}

impl LinkObject {
    /// Builds a Dyck path from `+1`/`-1` steps. The empty path is allowed
    /// (it is the value of fully collapsed patterns).
    pub fn new(steps: Vec<i8>) -> Result<Self> {
        let mut h: i64 = 0;
        for &s in &steps {
            if s != 1 && s != -1 {
                return Err(CombinatoricsError::InvalidSteps);
            }
            h += s as i64;
            if h < 0 {
                return Err(CombinatoricsError::InvalidSteps);
            }
        }
        if h != 0 {
            return Err(CombinatoricsError::InvalidSteps);
        }
        Ok(LinkObject { steps })
    }

    /// Builds from a set of 1-based links; fails if the pairs are not a
    /// planar (non-crossing) pair partition of `1..=2N`.
    pub fn from_links(links: &[(usize, usize)]) -> Result<Self> {
        let two_n = 2 * links.len();
        let mut steps = vec![0i8; two_n];
        for &(a, b) in links {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if lo < 1 || hi > two_n || lo == hi {
                return Err(CombinatoricsError::InvalidLinks);
            }
            if steps[lo - INDEX_BASE] != 0 || steps[hi - INDEX_BASE] != 0 {
                return Err(CombinatoricsError::InvalidLinks);
            }
            steps[lo - INDEX_BASE] = 1;
            steps[hi - INDEX_BASE] = -1;
        }
        let obj = LinkObject::new(steps).map_err(|_| CombinatoricsError::InvalidLinks)?;
        // A valid height profile does not rule out crossing links; the
        // round-trip does.
        let mut canon: Vec<(usize, usize)> = links
            .iter()
            .map(|&(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        canon.sort_unstable();
        if obj.links() != canon {
            return Err(CombinatoricsError::InvalidLinks);
        }
        Ok(obj)
    }

    /// Number of links `N`.
    pub fn n(&self) -> usize {
        self.steps.len() / 2
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[i8] {
        &self.steps
    }

    /// Height `α(j)` after the first `j` steps, for `0 ≤ j ≤ 2N`.
    pub fn height(&self, j: usize) -> i64 {
        self.steps[..j].iter().map(|&s| s as i64).sum()
    }

    /// All heights `α(0), …, α(2N)`.
    pub fn heights(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.len() + 1);
        let mut h = 0i64;
        out.push(h);
        for &s in &self.steps {
            h += s as i64;
            out.push(h);
        }
        out
    }

    /// The matching-pair link pattern: `N` pairs `(opening, closing)` of
    /// 1-based positions, sorted by opening position.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let mut stack = Vec::new();
        let mut links = Vec::with_capacity(self.n());
        for (i, &s) in self.steps.iter().enumerate() {
            if s == 1 {
                stack.push(i + INDEX_BASE);
            } else {
                let a = stack.pop().expect("validated Dyck path");
                links.push((a, i + INDEX_BASE));
            }
        }
        links.sort_unstable();
        links
    }

    /// Left-to-right orientation: entrances `a_1 < … < a_N` are the openings,
    /// exits are the matched closings.
    pub fn oriented(&self) -> OrientedLinkPattern {
        OrientedLinkPattern {
            pairs: self.links(),
            canonical: true,
        }
    }

    pub fn parens(&self) -> String {
        self.steps
            .iter()
            .map(|&s| if s == 1 { '(' } else { ')' })
            .collect()
    }

    /// Link-pattern text form, e.g. `{1-4,2-3}`.
    pub fn link_string(&self) -> String {
        let body: Vec<String> = self
            .links()
            .iter()
            .map(|(a, b)| format!("{a}-{b}"))
            .collect();
        format!("{{{}}}", body.join(","))
    }

    /// True if positions `j, j+1` (1-based) carry the steps `+1, -1`.
    pub fn has_up_wedge(&self, j: usize) -> bool {
        j >= 1 && j < self.len() && self.steps[j - 1] == 1 && self.steps[j] == -1
    }

    /// True if positions `j, j+1` carry the steps `-1, +1`.
    pub fn has_down_wedge(&self, j: usize) -> bool {
        j >= 1 && j < self.len() && self.steps[j - 1] == -1 && self.steps[j] == 1
    }
}

/// An explicitly oriented link pattern: ordered pairs `(a_ℓ, b_ℓ)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrientedLinkPattern {
    pub pairs: Vec<(usize, usize)>,
    /// Left-to-right canonical form: `a_ℓ < b_ℓ` and `a_1 < … < a_N`.
    pub canonical: bool,
}

impl OrientedLinkPattern {
    pub fn underlying(&self) -> Result<LinkObject> {
        LinkObject::from_links(&self.pairs)
    }
}

// ---------------------------------------------------------------------------
// Enumeration and the two partial orders
// ---------------------------------------------------------------------------

pub const MAX_ENUM_N: usize = 8;

/// Catalan number `C_N`.
pub fn catalan(n: usize) -> u64 {
    let mut c: u128 = 1;
    for i in 0..n as u128 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c as u64
}

/// All Dyck paths of `2N` steps in the canonical enumeration order
/// (ascending lexicographic with `-1 < +1`; unnested first, rainbow last).
pub fn enumerate_dyck_paths(n: usize) -> Result<Vec<LinkObject>> {
    if n < 1 || n > MAX_ENUM_N {
        return Err(CombinatoricsError::SizeOutOfRange(n, 1, MAX_ENUM_N));
    }
    let mut out = Vec::with_capacity(catalan(n) as usize);
    let mut steps = Vec::with_capacity(2 * n);
    fn rec(steps: &mut Vec<i8>, ups: usize, height: i64, n: usize, out: &mut Vec<LinkObject>) {
        if steps.len() == 2 * n {
            out.push(LinkObject {
                steps: steps.clone(),
            });
            return;
        }
        // down-steps sort before up-steps
        if height > 0 {
            steps.push(-1);
            rec(steps, ups, height - 1, n, out);
            steps.pop();
        }
        if ups < n {
            steps.push(1);
            rec(steps, ups + 1, height + 1, n, out);
            steps.pop();
        }
    }
    rec(&mut steps, 0, 0, n, &mut out);
    Ok(out)
}

/// Index of `d` in the canonical enumeration (binary search; the enumeration
/// is sorted by construction).
pub fn dyck_index(paths: &[LinkObject], d: &LinkObject) -> Option<usize> {
    paths.binary_search(d).ok()
}

/// Dominance partial order: `a ≼ b` iff `a(j) ≤ b(j)` for all `j`.
pub fn dominance_leq(a: &LinkObject, b: &LinkObject) -> Result<bool> {
    if a.len() != b.len() {
        return Err(CombinatoricsError::SizeMismatch(a.len(), b.len()));
    }
    let mut ha = 0i64;
    let mut hb = 0i64;
    for j in 0..a.len() {
        ha += a.steps[j] as i64;
        hb += b.steps[j] as i64;
        if ha > hb {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Witness of the parenthesis-reversal relation `a ⪯̇ b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reversal {
    /// Permutation: `sigma[ℓ] = k` when the `b`-link through exit `b_ℓ` of
    /// `a` (left-to-right orientation) connects it to entrance `a_k`.
    pub sigma: Vec<usize>,
    /// `(-1)^m`.
    pub sign: i8,
    /// Number of reversed links: `b`-links whose smaller endpoint is a
    /// closing position of `a`.
    pub m: usize,
}

/// Parenthesis-reversal relation: present iff every link of `b` connects an
/// entrance (opening) of `a` to an exit (closing) of `a`.
pub fn reversal_leq(a: &LinkObject, b: &LinkObject) -> Result<Option<Reversal>> {
    if a.len() != b.len() {
        return Err(CombinatoricsError::SizeMismatch(a.len(), b.len()));
    }
    let n = a.n();
    let a_links = a.links();
    // position (0-based) -> link index of `a`, with openings/closings split
    let mut open_at = vec![usize::MAX; a.len()];
    let mut close_at = vec![usize::MAX; a.len()];
    for (k, &(o, c)) in a_links.iter().enumerate() {
        open_at[o - INDEX_BASE] = k;
        close_at[c - INDEX_BASE] = k;
    }
    let mut sigma = vec![usize::MAX; n];
    let mut m = 0usize;
    for &(u, v) in &b.links() {
        let (iu, iv) = (u - INDEX_BASE, v - INDEX_BASE);
        let (o, c) = match (a.steps[iu], a.steps[iv]) {
            (1, -1) => (iu, iv),
            (-1, 1) => {
                m += 1;
                (iv, iu)
            }
            _ => return Ok(None),
        };
        sigma[close_at[c]] = open_at[o];
    }
    let sign = if m % 2 == 0 { 1 } else { -1 };
    Ok(Some(Reversal { sigma, sign, m }))
}

// ---------------------------------------------------------------------------
// Dyck tilings
// ---------------------------------------------------------------------------

/// One Dyck tile: a ribbon of diagonally adjacent cells, one cell per column,
/// whose level profile is a Dyck path above its base level.
///
/// A cell `(j, l)` sits in column `j ∈ 1..2N-1` at level `l`; the skew
/// diagram of `a/b` has cells at every `(j, l)` with `a(j) < l < b(j)` and
/// `l ≡ a(j)+1 (mod 2)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DyckTile {
    /// Cells in column order; consecutive levels differ by ±1, the first and
    /// last cells sit at the minimal level of the tile.
    pub cells: Vec<(i64, i64)>,
}

impl DyckTile {
    /// Height `h_t` = level of the base row.
    pub fn height(&self) -> i64 {
        self.cells.first().map(|c| c.1).unwrap_or(0)
    }

    /// Placement abscissa `x_t` = leftmost column − 1.
    pub fn x(&self) -> i64 {
        self.cells.first().map(|c| c.0 - 1).unwrap_or(0)
    }

    /// Closed horizontal extent `[x_t, x'_t]`: the x-range of the tile shape
    /// (a point for an atomic square, width `2k` for a `2k`-step shape).
    pub fn extent(&self) -> (i64, i64) {
        (
            self.cells.first().unwrap().0 - 1,
            self.cells.last().unwrap().0 - 1,
        )
    }

    /// Open shadow `(x_t − 1, x'_t + 1)`.
    pub fn shadow(&self) -> (i64, i64) {
        let (lo, hi) = self.extent();
        (lo - 1, hi + 1)
    }

    /// Step sequence of the tile shape (empty for an atomic square).
    pub fn shape_steps(&self) -> Vec<i8> {
        self.cells
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) as i8)
            .collect()
    }

    fn level_in_column(&self, col: i64) -> Option<i64> {
        let first = self.cells.first()?.0;
        if col < first || col > self.cells.last().unwrap().0 {
            return None;
        }
        Some(self.cells[(col - first) as usize].1)
    }

    /// `self` covers `other` if some cell of `self` is an upward vertical
    /// translate of a cell of `other`.
    pub fn covers(&self, other: &DyckTile) -> bool {
        self.cells.iter().any(|&(j, l)| {
            other
                .level_in_column(j)
                .map(|lo| l > lo)
                .unwrap_or(false)
        })
    }

    /// Text form `(shape, x, h)` used by the CLI dumps.
    pub fn text(&self) -> String {
        let shape: String = self
            .shape_steps()
            .iter()
            .map(|&s| if s == 1 { '(' } else { ')' })
            .collect();
        format!("(\"{}\", {}, {})", shape, self.x(), self.height())
    }
}

/// A tiling of the skew Young diagram `lower/upper` by Dyck tiles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DyckTiling {
    pub lower: LinkObject,
    pub upper: LinkObject,
    pub tiles: Vec<DyckTile>,
}

impl DyckTiling {
    /// Cover-inclusive: whenever one tile covers another, the covering tile's
    /// horizontal extent is contained in the covered tile's extent.
    pub fn is_cover_inclusive(&self) -> bool {
        for (i, t1) in self.tiles.iter().enumerate() {
            for t2 in &self.tiles[i + 1..] {
                for (upper, lower) in [(t1, t2), (t2, t1)] {
                    if upper.covers(lower) {
                        let (a1, b1) = upper.extent();
                        let (a2, b2) = lower.extent();
                        if !(a2 <= a1 && b1 <= b2) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// Nested: shadows pairwise disjoint or strictly one inside the other,
    /// and in the latter case the wider tile covers the narrower one.
    pub fn is_nested(&self) -> bool {
        for (i, t1) in self.tiles.iter().enumerate() {
            for t2 in &self.tiles[i + 1..] {
                let (a1, b1) = t1.shadow();
                let (a2, b2) = t2.shadow();
                if b1 <= a2 || b2 <= a1 {
                    continue; // disjoint open intervals
                }
                let strict_one_in_two = a2 <= a1 && b1 <= b2 && (a1, b1) != (a2, b2);
                let strict_two_in_one = a1 <= a2 && b2 <= b1 && (a1, b1) != (a2, b2);
                let ok = (strict_one_in_two && t2.covers(t1))
                    || (strict_two_in_one && t1.covers(t2));
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    /// Product of `f(h_t)` over the tiles.
    pub fn weight(&self, f: &dyn Fn(i64) -> BigRational) -> BigRational {
        self.tiles
            .iter()
            .map(|t| f(t.height()))
            .fold(BigRational::one(), |acc, w| acc * w)
    }
}

/// Cells of the skew diagram `a/b`, sorted by (column, level).
fn skew_cells(a: &LinkObject, b: &LinkObject) -> Vec<(i64, i64)> {
    let ha = a.heights();
    let hb = b.heights();
    let mut cells = Vec::new();
    for j in 1..a.len() {
        let mut l = ha[j] + 1;
        while l < hb[j] {
            cells.push((j as i64, l));
            l += 2;
        }
    }
    cells
}

/// The unique nested tiling `T₀(a/b)` by top-layer peeling, or `None` when
/// `a ⋠̇ b`. Errors when `a ≼ b` fails.
pub fn nested_tiling(a: &LinkObject, b: &LinkObject) -> Result<Option<DyckTiling>> {
    if !dominance_leq(a, b)? {
        return Err(CombinatoricsError::NotDominated);
    }
    let ha = a.heights();
    let mut hcur = b.heights();
    let mut tiles = Vec::new();
    loop {
        // columns currently strictly between the two paths
        let cols: Vec<usize> = (1..a.len())
            .filter(|&j| hcur[j] >= ha[j] + 2)
            .collect();
        if cols.is_empty() {
            break;
        }
        // maximal runs of consecutive columns form the top-layer tiles
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut start = cols[0];
        let mut prev = cols[0];
        for &j in &cols[1..] {
            if j != prev + 1 {
                runs.push((start, prev));
                start = j;
            }
            prev = j;
        }
        runs.push((start, prev));
        for (u, v) in runs {
            let base = (u..=v).map(|j| hcur[j]).min().unwrap();
            if hcur[u] != base || hcur[v] != base {
                // the top layer of this component is not a Dyck ribbon
                return Ok(None);
            }
            let cells: Vec<(i64, i64)> = (u..=v).map(|j| (j as i64, hcur[j] - 1)).collect();
            tiles.push(DyckTile { cells });
            for j in u..=v {
                hcur[j] -= 2;
            }
        }
    }
    Ok(Some(DyckTiling {
        lower: a.clone(),
        upper: b.clone(),
        tiles,
    }))
}

/// Pairwise cover-inclusion check of a candidate tile against placed tiles.
fn cover_compatible(t: &DyckTile, placed: &[DyckTile]) -> bool {
    for p in placed {
        for (upper, lower) in [(t, p), (p, t)] {
            if upper.covers(lower) {
                let (a1, b1) = upper.extent();
                let (a2, b2) = lower.extent();
                if !(a2 <= a1 && b1 <= b2) {
                    return false;
                }
            }
        }
    }
    true
}

struct TilingSearch<'a> {
    cells: &'a [(i64, i64)],
    placed: Vec<DyckTile>,
    out: Vec<Vec<DyckTile>>,
}

impl TilingSearch<'_> {
    fn index_of(&self, c: &(i64, i64)) -> Option<usize> {
        self.cells.binary_search(c).ok()
    }

    /// Extends the partial tiling: the least uncovered cell (column-major
    /// order) is necessarily the leftmost, base-level cell of its tile, so
    /// enumerate every Dyck ribbon starting there.
    fn search(&mut self, covered: u128) {
        let Some(first_free) = (0..self.cells.len()).find(|&i| covered & (1 << i) == 0) else {
            self.out.push(self.placed.clone());
            return;
        };
        let base = self.cells[first_free].1;
        let mut ribbon = vec![first_free];
        self.place_if_complete(&ribbon, covered, base);
        self.extend_ribbon(&mut ribbon, covered, base);
    }

    /// A ribbon whose last cell is back at base level is a complete Dyck
    /// tile; try it and recurse.
    fn place_if_complete(&mut self, ribbon: &[usize], covered: u128, base: i64) {
        if self.cells[*ribbon.last().unwrap()].1 != base {
            return;
        }
        let tile = DyckTile {
            cells: ribbon.iter().map(|&i| self.cells[i]).collect(),
        };
        if cover_compatible(&tile, &self.placed) {
            let mut cov = covered;
            for &i in ribbon {
                cov |= 1 << i;
            }
            self.placed.push(tile);
            self.search(cov);
            self.placed.pop();
        }
    }

    fn extend_ribbon(&mut self, ribbon: &mut Vec<usize>, covered: u128, base: i64) {
        let (j, l) = self.cells[*ribbon.last().unwrap()];
        for dl in [1i64, -1] {
            let next = (j + 1, l + dl);
            if next.1 < base {
                continue;
            }
            if let Some(i) = self.index_of(&next) {
                if covered & (1 << i) != 0 {
                    continue;
                }
                ribbon.push(i);
                self.place_if_complete(ribbon, covered, base);
                self.extend_ribbon(ribbon, covered, base);
                ribbon.pop();
            }
        }
    }
}

/// All cover-inclusive tilings of `a/b`, by exhaustive ribbon decomposition
/// with the cover-inclusion predicate enforced during the search.
pub fn cover_inclusive_tilings(a: &LinkObject, b: &LinkObject) -> Result<Vec<DyckTiling>> {
    if !dominance_leq(a, b)? {
        return Err(CombinatoricsError::NotDominated);
    }
    let cells = skew_cells(a, b);
    assert!(cells.len() <= 128, "skew diagram too large for the search");
    let mut search = TilingSearch {
        cells: &cells,
        placed: Vec::new(),
        out: Vec::new(),
    };
    search.search(0);
    Ok(search
        .out
        .into_iter()
        .map(|tiles| DyckTiling {
            lower: a.clone(),
            upper: b.clone(),
            tiles,
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Incidence matrices
// ---------------------------------------------------------------------------

pub const MAX_MATRIX_N: usize = 6;

/// Weighted incidence matrix of the Dyck-path order (or its inverse), indexed
/// by the canonical enumeration of `DP_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix {
    pub n: usize,
    pub paths: Vec<LinkObject>,
    pub entries: Vec<Vec<BigRational>>,
}

impl IncidenceMatrix {
    pub fn size(&self) -> usize {
        self.paths.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> &BigRational {
        &self.entries[i][j]
    }

    /// Entry as `i64` when it is an integer in range (convenience for the
    /// unit-weight case).
    pub fn entry_i64(&self, i: usize, j: usize) -> Option<i64> {
        let e = &self.entries[i][j];
        if e.is_integer() {
            let v = e.to_integer();
            i64::try_from(v).ok()
        } else {
            None
        }
    }

    pub fn matmul(&self, other: &IncidenceMatrix) -> Vec<Vec<BigRational>> {
        let k = self.size();
        let mut out = vec![vec![BigRational::zero(); k]; k];
        for i in 0..k {
            for l in 0..k {
                if self.entries[i][l].is_zero() {
                    continue;
                }
                for j in 0..k {
                    if other.entries[l][j].is_zero() {
                        continue;
                    }
                    let add = &self.entries[i][l] * &other.entries[l][j];
                    out[i][j] = &out[i][j] + &add;
                }
            }
        }
        out
    }
}

/// The weighted incidence matrix `M` (nested tilings, tile weight `-f(h_t)`)
/// and its inverse `M⁻¹` (cover-inclusive tilings, tile weight `f(h_t)`).
pub fn incidence_matrices(
    n: usize,
    f: &dyn Fn(i64) -> BigRational,
) -> Result<(IncidenceMatrix, IncidenceMatrix)> {
    if n < 1 || n > MAX_MATRIX_N {
        return Err(CombinatoricsError::SizeOutOfRange(n, 1, MAX_MATRIX_N));
    }
    let paths = enumerate_dyck_paths(n)?;
    let k = paths.len();
    let mut m = vec![vec![BigRational::zero(); k]; k];
    let mut minv = vec![vec![BigRational::zero(); k]; k];
    for i in 0..k {
        for j in 0..k {
            if !dominance_leq(&paths[i], &paths[j])? {
                continue;
            }
            if let Some(t0) = nested_tiling(&paths[i], &paths[j])? {
                m[i][j] = t0
                    .tiles
                    .iter()
                    .map(|t| -f(t.height()))
                    .fold(BigRational::one(), |acc, w| acc * w);
            }
            let tilings = cover_inclusive_tilings(&paths[i], &paths[j])?;
            minv[i][j] = tilings
                .iter()
                .map(|t| t.weight(f))
                .fold(BigRational::zero(), |acc, w| acc + w);
        }
    }
    Ok((
        IncidenceMatrix {
            n,
            paths: paths.clone(),
            entries: m,
        },
        IncidenceMatrix {
            n,
            paths,
            entries: minv,
        },
    ))
}

/// Cover-inclusive tiling counts `#𝒞(a/β)` for all `β` in canonical order
/// (zero when dominance fails) — the unit-weight `M⁻¹` row of `a`.
pub fn cover_counts_row(a: &LinkObject, paths: &[LinkObject]) -> Result<Vec<BigInt>> {
    let mut row = Vec::with_capacity(paths.len());
    for b in paths {
        if dominance_leq(a, b)? {
            row.push(BigInt::from(cover_inclusive_tilings(a, b)?.len()));
        } else {
            row.push(BigInt::zero());
        }
    }
    Ok(row)
}

// ---------------------------------------------------------------------------
// Wedges
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WedgeKind {
    Up,
    Down,
    Slope,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WedgeInfo {
    pub kind: WedgeKind,
    /// The path with the two steps at `j, j+1` deleted (any wedge).
    pub removed: Option<LinkObject>,
    /// The down-wedge converted to an up-wedge (down-wedges only).
    pub lifted: Option<LinkObject>,
}

/// Classifies position `j ∈ 1..=2N-1` of `a` and returns the wedge-removed
/// and wedge-lifted companions where defined.
pub fn wedge_ops(a: &LinkObject, j: usize) -> Result<WedgeInfo> {
    if j < 1 || j >= a.len() {
        return Err(CombinatoricsError::PositionOutOfRange(j, a.len() - 1));
    }
    let kind = if a.has_up_wedge(j) {
        WedgeKind::Up
    } else if a.has_down_wedge(j) {
        WedgeKind::Down
    } else {
        WedgeKind::Slope
    };
    let removed = match kind {
        WedgeKind::Slope => None,
        _ => {
            let mut steps = a.steps.clone();
            steps.drain(j - 1..=j);
            Some(LinkObject::new(steps).expect("wedge removal preserves validity"))
        }
    };
    let lifted = match kind {
        WedgeKind::Down => {
            let mut steps = a.steps.clone();
            steps[j - 1] = 1;
            steps[j] = -1;
            Some(LinkObject::new(steps).expect("lift preserves validity"))
        }
        _ => None,
    };
    Ok(WedgeInfo {
        kind,
        removed,
        lifted,
    })
}

// ---------------------------------------------------------------------------
// Boundary-visit orders
// ---------------------------------------------------------------------------

/// A boundary-visit order `ω ∈ {+,−}^{N'}`: the sides (counterclockwise `+`
/// or clockwise `−` of the entry edge) of the successive boundary visits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitOrder(pub Vec<i8>);

impl std::str::FromStr for VisitOrder {
    type Err = CombinatoricsError;
    fn from_str(s: &str) -> Result<Self> {
        let mut signs = Vec::new();
        for ch in s.chars() {
            match ch {
                '+' => signs.push(1),
                '-' => signs.push(-1),
                c if c.is_whitespace() || c == ',' || c == '(' || c == ')' => {}
                _ => return Err(CombinatoricsError::Parse(s.to_owned())),
            }
        }
        Ok(VisitOrder(signs))
    }
}

impl std::fmt::Display for VisitOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &s in &self.0 {
            f.write_str(if s > 0 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl VisitOrder {
    pub fn n_visits(&self) -> usize {
        self.0.len()
    }
}

/// The link pattern `α(ω)` together with the bookkeeping needed by the exact
/// and Monte Carlo modules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitStructure {
    pub omega: VisitOrder,
    /// `α(ω) ∈ LP_{N'+1}` on labels `1..=2N` in counterclockwise order
    /// starting at the entry edge.
    pub alpha: LinkObject,
    /// Label of the entry edge (always 1) and of the exit edge.
    pub in_label: usize,
    pub out_label: usize,
    /// For visit `s` (in visit-time order), the consecutive label pair
    /// `(j_s, j_s + 1)` housing its two flanking edges in ccw order.
    pub pairs: Vec<(usize, usize)>,
    /// For visit `s`, whether the first-traversed flank carries the lower
    /// (ccw-earlier) label: true for `+` visits, false for `−` visits.
    pub first_flank_is_lower: Vec<bool>,
}

/// Builds `α(ω)`: labels are assigned counterclockwise starting at the entry
/// edge; `+` visits sit along the ccw arc in visit order, `−` visits along
/// the cw arc in visit order, and consecutive visits are chained by links.
///
/// ```
/// use ustlerw::combinatorics::{visit_structure, VisitOrder};
///
/// let omega: VisitOrder = "++".parse().unwrap();
/// let vs = visit_structure(&omega);
/// assert_eq!(vs.in_label, 1);
/// assert_eq!(vs.pairs, vec![(2, 3), (4, 5)]);
/// assert_eq!(vs.out_label, 6);
/// ```
pub fn visit_structure(w: &VisitOrder) -> VisitStructure {
    let np = w.0.len();
    let n = np + 1;
    let total = 2 * n;
    let p = w.0.iter().filter(|&&s| s > 0).count();
    let mut first = vec![0usize; np];
    let mut second = vec![0usize; np];
    let (mut kp, mut km) = (0usize, 0usize);
    for (s, &sign) in w.0.iter().enumerate() {
        if sign > 0 {
            kp += 1;
            first[s] = 2 * kp;
            second[s] = 2 * kp + 1;
        } else {
            km += 1;
            first[s] = total - 2 * (km - 1);
            second[s] = total - 2 * (km - 1) - 1;
        }
    }
    let out_label = 2 * p + 2;
    let mut links = Vec::with_capacity(n);
    let mut prev = 1usize;
    for s in 0..np {
        links.push((prev, first[s]));
        prev = second[s];
    }
    links.push((prev, out_label));
    let alpha = LinkObject::from_links(&links)
        .expect("visit-order construction always yields a planar pattern");
    let pairs: Vec<(usize, usize)> = first
        .iter()
        .zip(second.iter())
        .map(|(&f, &sec)| {
            let lo = f.min(sec);
            debug_assert_eq!(f.max(sec), lo + 1);
            (lo, lo + 1)
        })
        .collect();
    // invariant: no pair is linked to itself in α(ω)
    debug_assert!(pairs
        .iter()
        .all(|&(lo, _)| !alpha.links().contains(&(lo, lo + 1))));
    let first_flank_is_lower = w.0.iter().map(|&s| s > 0).collect();
    VisitStructure {
        omega: w.clone(),
        alpha,
        in_label: 1,
        out_label,
        pairs,
        first_flank_is_lower,
    }
}

/// The link pattern `α(ω)` alone.
pub fn visit_order_to_link_pattern(w: &VisitOrder) -> LinkObject {
    visit_structure(w).alpha
}

/// The completely unnested pattern `()()…()` of size `N`.
pub fn unnested(n: usize) -> LinkObject {
    let mut steps = Vec::with_capacity(2 * n);
    for _ in 0..n {
        steps.push(1);
        steps.push(-1);
    }
    LinkObject { steps }
}

/// The rainbow (fully nested) pattern `((…))` of size `N`.
pub fn rainbow(n: usize) -> LinkObject {
    let mut steps = vec![1i8; n];
    steps.extend(std::iter::repeat(-1i8).take(n));
    LinkObject { steps }
}

/// Permutation sign by counting inversions (test helper for the `sgn(σ) =
/// (−1)^m` characterization).
pub fn permutation_sign(sigma: &[usize]) -> i8 {
    let mut inv = 0usize;
    for i in 0..sigma.len() {
        for j in i + 1..sigma.len() {
            if sigma[i] > sigma[j] {
                inv += 1;
            }
        }
    }
    if inv % 2 == 0 {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lo(s: &str) -> LinkObject {
        s.parse().unwrap()
    }

    #[test]
    fn enumeration_counts_are_catalan() {
        assert_eq!(enumerate_dyck_paths(1).unwrap().len(), 1);
        assert_eq!(enumerate_dyck_paths(4).unwrap().len(), 14);
        assert_eq!(enumerate_dyck_paths(6).unwrap().len(), 132);
        assert!(enumerate_dyck_paths(0).is_err());
        assert!(enumerate_dyck_paths(9).is_err());
    }

    #[test]
    fn canonical_order_endpoints() {
        for n in 1..=5 {
            let paths = enumerate_dyck_paths(n).unwrap();
            assert_eq!(paths[0], unnested(n));
            assert_eq!(paths[paths.len() - 1], rainbow(n));
            let mut sorted = paths.clone();
            sorted.sort();
            assert_eq!(paths, sorted, "enumeration must be sorted");
        }
    }

    #[test]
    fn links_examples() {
        assert_eq!(lo("()()").links(), vec![(1, 2), (3, 4)]);
        assert_eq!(lo("(())").links(), vec![(1, 4), (2, 3)]);
        assert_eq!(lo("(()())").links(), vec![(1, 6), (2, 3), (4, 5)]);
    }

    #[test]
    fn links_roundtrip() {
        for n in 1..=5 {
            for d in enumerate_dyck_paths(n).unwrap() {
                assert_eq!(LinkObject::from_links(&d.links()).unwrap(), d);
            }
        }
    }

    #[test]
    fn crossing_links_rejected() {
        assert!(LinkObject::from_links(&[(1, 3), (2, 4)]).is_err());
    }

    #[test]
    fn dominance_examples() {
        assert!(dominance_leq(&lo("()()"), &lo("(())")).unwrap());
        assert!(dominance_leq(&lo("(())"), &lo("(())")).unwrap());
        assert!(!dominance_leq(&lo("(())"), &lo("()()")).unwrap());
        assert!(dominance_leq(&lo("()"), &lo("()()")).is_err());
    }

    #[test]
    fn reversal_paper_example() {
        let a = lo("(())(())()()()");
        let b = lo("(((())))((()))");
        let r = reversal_leq(&a, &b).unwrap().expect("related");
        assert_eq!(r.m, 3);
        assert_eq!(r.sign, -1);
        assert_eq!(permutation_sign(&r.sigma), -1);
    }

    #[test]
    fn reversal_identity_and_absent() {
        let a = lo("(())");
        let r = reversal_leq(&a, &a).unwrap().unwrap();
        assert_eq!(r.m, 0);
        assert_eq!(r.sign, 1);
        assert_eq!(r.sigma, vec![0, 1]);
        assert!(reversal_leq(&lo("(())"), &lo("()()")).unwrap().is_none());
    }

    #[test]
    fn reversal_sign_is_permutation_sign_exhaustive() {
        for n in 1..=5 {
            for a in enumerate_dyck_paths(n).unwrap() {
                for b in enumerate_dyck_paths(n).unwrap() {
                    if let Some(r) = reversal_leq(&a, &b).unwrap() {
                        assert!(dominance_leq(&a, &b).unwrap());
                        assert_eq!(r.sign, permutation_sign(&r.sigma));
                    }
                }
            }
        }
    }

    #[test]
    fn dominance_is_transitive_closure_of_reversal() {
        for n in 1..=5 {
            let paths = enumerate_dyck_paths(n).unwrap();
            let k = paths.len();
            // adjacency of the reversal relation
            let mut reach = vec![vec![false; k]; k];
            for i in 0..k {
                for j in 0..k {
                    reach[i][j] = reversal_leq(&paths[i], &paths[j]).unwrap().is_some();
                }
            }
            // Floyd–Warshall transitive closure
            for m in 0..k {
                for i in 0..k {
                    if !reach[i][m] {
                        continue;
                    }
                    for j in 0..k {
                        if reach[m][j] {
                            reach[i][j] = true;
                        }
                    }
                }
            }
            for i in 0..k {
                for j in 0..k {
                    assert_eq!(
                        reach[i][j],
                        dominance_leq(&paths[i], &paths[j]).unwrap(),
                        "n={n} i={i} j={j}"
                    );
                }
            }
        }
    }

    #[test]
    fn nested_tiling_examples() {
        let t = nested_tiling(&lo("(())"), &lo("(())")).unwrap().unwrap();
        assert!(t.tiles.is_empty());

        let t = nested_tiling(&lo("()()"), &lo("(())")).unwrap().unwrap();
        assert_eq!(t.tiles.len(), 1);
        assert_eq!(t.tiles[0].x(), 1);
        assert_eq!(t.tiles[0].height(), 1);
        assert!(t.tiles[0].shape_steps().is_empty());

        assert!(nested_tiling(&lo("(())"), &lo("()()")).is_err());
    }

    #[test]
    fn nested_tiling_iff_reversal_with_tile_count_m() {
        for n in 1..=5 {
            let paths = enumerate_dyck_paths(n).unwrap();
            for a in &paths {
                for b in &paths {
                    if !dominance_leq(a, b).unwrap() {
                        continue;
                    }
                    let rev = reversal_leq(a, b).unwrap();
                    let tiling = nested_tiling(a, b).unwrap();
                    assert_eq!(rev.is_some(), tiling.is_some(), "a={a} b={b}");
                    if let (Some(r), Some(t)) = (rev, tiling) {
                        assert_eq!(r.m, t.tiles.len(), "a={a} b={b}");
                        assert!(t.is_nested(), "a={a} b={b}");
                        assert!(t.tiles.iter().all(|tile| tile.height() >= 1));
                    }
                }
            }
        }
    }

    #[test]
    fn paper_reversal_example_has_nested_tiling_with_three_tiles() {
        let a = lo("(())(())()()()");
        let b = lo("(((())))((()))");
        let t = nested_tiling(&a, &b).unwrap().unwrap();
        assert_eq!(t.tiles.len(), 3);
    }

    #[test]
    fn cover_inclusive_examples() {
        let ts = cover_inclusive_tilings(&lo("(())"), &lo("(())")).unwrap();
        assert_eq!(ts.len(), 1);
        assert!(ts[0].tiles.is_empty());

        let ts = cover_inclusive_tilings(&lo("()()"), &lo("(())")).unwrap();
        assert_eq!(ts.len(), 1);

        // ()()() / ((())): three single cells or one wide tile
        let ts = cover_inclusive_tilings(&lo("()()()"), &lo("((()))")).unwrap();
        assert_eq!(ts.len(), 2);

        assert!(cover_inclusive_tilings(&lo("(())"), &lo("()()")).is_err());
    }

    #[test]
    fn all_generated_tilings_satisfy_predicates() {
        for n in 1..=4 {
            let paths = enumerate_dyck_paths(n).unwrap();
            for a in &paths {
                for b in &paths {
                    if !dominance_leq(a, b).unwrap() {
                        continue;
                    }
                    let cells = super::skew_cells(a, b);
                    for t in cover_inclusive_tilings(a, b).unwrap() {
                        assert!(t.is_cover_inclusive());
                        // tiles partition the skew diagram
                        let mut covered: Vec<(i64, i64)> =
                            t.tiles.iter().flat_map(|t| t.cells.clone()).collect();
                        covered.sort_unstable();
                        assert_eq!(covered, cells);
                    }
                }
            }
        }
    }

    #[test]
    fn incidence_matrices_n2_unit_weight() {
        let (m, minv) = incidence_matrices(2, &|_| BigRational::one()).unwrap();
        assert_eq!(m.entry_i64(0, 0), Some(1));
        assert_eq!(m.entry_i64(0, 1), Some(-1));
        assert_eq!(m.entry_i64(1, 0), Some(0));
        assert_eq!(m.entry_i64(1, 1), Some(1));
        assert_eq!(minv.entry_i64(0, 1), Some(1));
        assert_eq!(minv.entry_i64(1, 0), Some(0));
    }

    #[test]
    fn incidence_product_identity_small() {
        let f = |h: i64| BigRational::new((h + 1).into(), (h + 2).into());
        for n in 1..=3 {
            let (m, minv) = incidence_matrices(n, &f).unwrap();
            let prod = m.matmul(&minv);
            for i in 0..m.size() {
                for j in 0..m.size() {
                    let expect = if i == j {
                        BigRational::one()
                    } else {
                        BigRational::zero()
                    };
                    assert_eq!(prod[i][j], expect, "n={n} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn minv_minimal_row_n3_counts() {
        let (_, minv) = incidence_matrices(3, &|_| BigRational::one()).unwrap();
        let row: Vec<i64> = (0..5).map(|j| minv.entry_i64(0, j).unwrap()).collect();
        let mut sorted = row.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![1, 1, 1, 1, 2]);
        assert_eq!(row.iter().sum::<i64>(), 6);
    }

    #[test]
    fn cascade_recurrence_for_m() {
        // For β with an up-wedge at j: M_{α,β} is 0 when α has a slope at j,
        // M_{α̂,β̂} when α has an up-wedge, and −f(α(j)+1)·M_{α̂,β̂} when α
        // has a down-wedge (hats = wedge-removed paths).
        let weights: [&dyn Fn(i64) -> BigRational; 3] = [
            &|_| BigRational::one(),
            &|h| BigRational::new(h.into(), (h + 1).into()),
            &|h| BigRational::from_integer((2 * h - 1).into()),
        ];
        for f in weights {
            for n in 2..=5 {
                let paths = enumerate_dyck_paths(n).unwrap();
                let (m, _) = incidence_matrices(n.min(MAX_MATRIX_N), f).unwrap();
                let (m_small, _) = incidence_matrices(n - 1, f).unwrap();
                for (bi, b) in paths.iter().enumerate() {
                    for j in 1..2 * n {
                        if !b.has_up_wedge(j) {
                            continue;
                        }
                        let b_hat = wedge_ops(b, j).unwrap().removed.unwrap();
                        let bj = dyck_index(&m_small.paths, &b_hat).unwrap();
                        for (ai, a) in paths.iter().enumerate() {
                            let info = wedge_ops(a, j).unwrap();
                            let expect = match info.kind {
                                WedgeKind::Slope => BigRational::zero(),
                                WedgeKind::Up => {
                                    let ahat = info.removed.unwrap();
                                    let aj = dyck_index(&m_small.paths, &ahat).unwrap();
                                    m_small.entries[aj][bj].clone()
                                }
                                WedgeKind::Down => {
                                    let ahat = info.removed.unwrap();
                                    let aj = dyck_index(&m_small.paths, &ahat).unwrap();
                                    -f(a.height(j) + 1) * &m_small.entries[aj][bj]
                                }
                            };
                            assert_eq!(m.entries[ai][bi], expect, "a={a} b={b} j={j}");
                        }
                    }
                }
                if n >= 5 {
                    break; // n=5 with 3 weights is already plenty
                }
            }
        }
    }

    #[test]
    fn pairing_lemma_lift_counts() {
        // If α has no up-wedge at j and β has a down-wedge at j, then
        // α ≼ β ⇔ α ≼ lift_j(β), and the cover-inclusive counts agree.
        for n in 1..=4 {
            let paths = enumerate_dyck_paths(n).unwrap();
            for a in &paths {
                for b in &paths {
                    for j in 1..2 * n {
                        if a.has_up_wedge(j) || !b.has_down_wedge(j) {
                            continue;
                        }
                        let lifted = wedge_ops(b, j).unwrap().lifted.unwrap();
                        let d1 = dominance_leq(a, b).unwrap();
                        let d2 = dominance_leq(a, &lifted).unwrap();
                        assert_eq!(d1, d2, "a={a} b={b} j={j}");
                        if d1 {
                            assert_eq!(
                                cover_inclusive_tilings(a, b).unwrap().len(),
                                cover_inclusive_tilings(a, &lifted).unwrap().len(),
                                "a={a} b={b} j={j}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn wedge_examples() {
        let info = wedge_ops(&lo("(())"), 2).unwrap();
        assert_eq!(info.kind, WedgeKind::Up);
        assert_eq!(info.removed.unwrap(), lo("()"));
        assert!(info.lifted.is_none());

        let info = wedge_ops(&lo("()()"), 2).unwrap();
        assert_eq!(info.kind, WedgeKind::Down);
        assert_eq!(info.lifted.unwrap(), lo("(())"));
        assert_eq!(info.removed.unwrap(), lo("()"));

        let info = wedge_ops(&lo("(())"), 1).unwrap();
        assert_eq!(info.kind, WedgeKind::Slope);
        assert!(info.removed.is_none() && info.lifted.is_none());

        assert!(wedge_ops(&lo("()"), 2).is_err());
    }

    #[test]
    fn visit_order_examples() {
        let w: VisitOrder = "++-".parse().unwrap();
        let alpha = visit_order_to_link_pattern(&w);
        assert_eq!(alpha.links(), vec![(1, 2), (3, 4), (5, 8), (6, 7)]);

        let w: VisitOrder = "".parse().unwrap();
        assert_eq!(visit_order_to_link_pattern(&w).links(), vec![(1, 2)]);

        let w: VisitOrder = "+".parse().unwrap();
        assert_eq!(
            visit_order_to_link_pattern(&w).links(),
            vec![(1, 2), (3, 4)]
        );
    }

    #[test]
    fn visit_structure_bookkeeping() {
        let w: VisitOrder = "++-".parse().unwrap();
        let vs = visit_structure(&w);
        assert_eq!(vs.in_label, 1);
        assert_eq!(vs.out_label, 6);
        assert_eq!(vs.pairs, vec![(2, 3), (4, 5), (7, 8)]);
        assert_eq!(vs.first_flank_is_lower, vec![true, true, false]);
        // no collapsed pair is linked to itself (up-wedge absent at j_s)
        for &(lo, _) in &vs.pairs {
            assert!(!vs.alpha.links().contains(&(lo, lo + 1)));
        }
    }

    #[test]
    fn single_minus_visit_is_rainbow() {
        let w: VisitOrder = "-".parse().unwrap();
        assert_eq!(visit_order_to_link_pattern(&w), lo("(())"));
    }
}
