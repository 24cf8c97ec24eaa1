//! The `figure` subcommand: SVG renderings of a sampled wired UST, its
//! boundary branches, and cover-inclusive Dyck tilings.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, ensure, Context, Result};
use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ustlerw::combinatorics::{cover_inclusive_tilings, dominance_leq, rainbow, LinkObject};
use ustlerw::lattice::{build_grid, GridModel, Role};
use ustlerw::montecarlo::{UstSampler, WiredUst};

use crate::{load_domain, parse_pattern};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FigureKind {
    /// A sampled wired uniform spanning tree.
    Tree,
    /// The sampled tree with the branches from the marked points highlighted.
    Branches,
    /// All cover-inclusive Dyck tilings of a skew shape.
    Tiling,
}

const PALETTE: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

pub fn run(
    kind: FigureKind,
    domain: Option<&Path>,
    delta: Option<f64>,
    seed: u64,
    pattern: Option<String>,
    pattern2: Option<String>,
) -> Result<String> {
    match kind {
        FigureKind::Tree | FigureKind::Branches => {
            let path = domain.ok_or_else(|| anyhow!("--domain is required for this figure"))?;
            let spec = load_domain(path, delta)?;
            let g = build_grid(&spec)?;
            let sampler = UstSampler::new(&g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ust = sampler.sample(&mut rng);
            Ok(render_tree(&g, &ust, kind == FigureKind::Branches))
        }
        FigureKind::Tiling => {
            let lower = parse_pattern(
                &pattern.ok_or_else(|| anyhow!("--pattern is required for the tiling figure"))?,
            )?;
            let upper = match pattern2 {
                Some(p) => parse_pattern(&p)?,
                None => rainbow(lower.n()),
            };
            ensure!(
                dominance_leq(&lower, &upper).context("comparing the two patterns")?,
                "{} does not dominate {}; the skew shape is empty",
                upper.parens(),
                lower.parens()
            );
            render_tilings(&lower, &upper)
        }
    }
}

/// Maps domain coordinates to SVG user units (y axis flipped).
struct Frame {
    y_max: f64,
    scale: f64,
    pad: f64,
}

impl Frame {
    fn to_svg(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.pad + self.scale * p.0,
            self.pad + self.scale * (self.y_max - p.1),
        )
    }
}

fn svg_header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.1} {height:.1}\">\n"
    )
}

fn line(out: &mut String, a: (f64, f64), b: (f64, f64), color: &str, width: f64) {
    let _ = writeln!(
        out,
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
         stroke=\"{color}\" stroke-width=\"{width:.2}\" stroke-linecap=\"round\"/>",
        a.0, a.1, b.0, b.1
    );
}

fn render_tree(g: &GridModel, ust: &WiredUst, highlight_branches: bool) -> String {
    let (mut x_max, mut y_max) = (0.0f64, 0.0f64);
    for v in 0..g.verts.len() {
        let (x, y) = g.vertex_pos(v);
        x_max = x_max.max(x);
        y_max = y_max.max(y);
    }
    let scale = 600.0 / x_max.max(y_max);
    let frame = Frame {
        y_max,
        scale,
        pad: 20.0,
    };
    let mut out = svg_header(2.0 * frame.pad + scale * x_max, 2.0 * frame.pad + scale * y_max);

    // domain boundary: the ccw cycle of boundary vertices
    let boundary_pts: Vec<(f64, f64)> = g
        .boundary_ccw
        .iter()
        .map(|&e| frame.to_svg(g.vertex_pos(g.boundary_end(e))))
        .collect();
    for w in boundary_pts.windows(2) {
        line(&mut out, w[0], w[1], "#000000", 1.5);
    }
    if let (Some(&first), Some(&last)) = (boundary_pts.first(), boundary_pts.last()) {
        line(&mut out, last, first, "#000000", 1.5);
    }

    // the sampled tree: one outgoing edge per interior vertex
    let edge_seg = |e: usize| {
        let ustlerw::lattice::Edge { a, b } = g.edges[e];
        (frame.to_svg(g.vertex_pos(a)), frame.to_svg(g.vertex_pos(b)))
    };
    let tree_color = if highlight_branches { "#bbbbbb" } else { "#444444" };
    for &(e, _) in &ust.parent {
        let (a, b) = edge_seg(e);
        line(&mut out, a, b, tree_color, 1.2);
    }

    if highlight_branches {
        for (i, m) in g
            .marked
            .iter()
            .filter(|m| !matches!(m.role, Role::Visit))
            .enumerate()
        {
            let color = PALETTE[i % PALETTE.len()];
            let (a, b) = edge_seg(m.edge);
            line(&mut out, a, b, color, 3.0);
            let mut v = g.interior_index[g.interior_end(m.edge)]
                .expect("marked edge has an interior endpoint");
            loop {
                let (e, next) = ust.parent[v];
                let (a, b) = edge_seg(e);
                line(&mut out, a, b, color, 3.0);
                match next {
                    Some(w) => v = w,
                    None => break,
                }
            }
        }
    }

    out.push_str("</svg>\n");
    out
}

fn render_tilings(lower: &LinkObject, upper: &LinkObject) -> Result<String> {
    let tilings = cover_inclusive_tilings(lower, upper)?;
    ensure!(!tilings.is_empty(), "no cover-inclusive tilings");
    let two_n = lower.len() as f64;
    let h_max = upper.heights().into_iter().max().unwrap_or(0) as f64;
    let scale = 30.0;
    let pad = 20.0;
    let panel = scale * (two_n + 2.0);
    let width = 2.0 * pad + panel * tilings.len() as f64;
    let height = 2.0 * pad + scale * (h_max + 1.0);
    let mut out = svg_header(width, height);

    for (t_idx, tiling) in tilings.iter().enumerate() {
        let x_off = pad + panel * t_idx as f64;
        let to_svg =
            |j: f64, l: f64| -> (f64, f64) { (x_off + scale * j, pad + scale * (h_max - l)) };
        // tiles as outlined polygons: top chain over the cells, then the
        // bottom chain back
        for (i, tile) in tiling.tiles.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let cells = &tile.cells;
            let (first, l0) = cells[0];
            let (last, l1) = *cells.last().unwrap();
            let mut pts = vec![to_svg((first - 1) as f64, l0 as f64)];
            for &(c, l) in cells {
                pts.push(to_svg(c as f64, (l + 1) as f64));
            }
            pts.push(to_svg((last + 1) as f64, l1 as f64));
            for &(c, l) in cells.iter().rev() {
                pts.push(to_svg(c as f64, (l - 1) as f64));
            }
            let path: String = pts
                .iter()
                .map(|p| format!("{:.2},{:.2}", p.0, p.1))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                out,
                "  <polygon points=\"{path}\" fill=\"{color}\" fill-opacity=\"0.5\" \
                 stroke=\"#000000\" stroke-width=\"1.0\"/>"
            );
        }
        // the two Dyck paths
        for (steps_obj, width_px) in [(lower, 2.5), (upper, 2.5)] {
            let hs = steps_obj.heights();
            let pts: Vec<(f64, f64)> = hs
                .iter()
                .enumerate()
                .map(|(j, &h)| to_svg(j as f64, h as f64))
                .collect();
            for w in pts.windows(2) {
                line(&mut out, w[0], w[1], "#000000", width_px);
            }
        }
    }

    out.push_str("</svg>\n");
    Ok(out)
}
