//! `ustlerw` — command-line surface for the library: exact evaluation on
//! grids, Monte Carlo verification, continuum evaluations and checks,
//! convergence studies against the conformal-map prediction, and SVG figures.
//!
//! All numeric output is wrapped in a versioned JSON envelope carrying the
//! backend (`rational`, `f64`, or `f64+mc`) and, where applicable, the
//! tolerances the run was judged against. Every command is deterministic
//! given its full flag set including `--seed`.

mod checks;
mod figure;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use num::{BigRational, One, ToPrimitive};
use serde::Serialize;
use serde_json::{json, Value};

use ustlerw::combinatorics::{
    cover_inclusive_tilings, dominance_leq, enumerate_dyck_paths, incidence_matrices, LinkObject,
    VisitOrder,
};
use ustlerw::continuum::{pure_partition_function, rectangle_halfplane_map, zeta_omega};
use ustlerw::exact::{
    connectivity_probability, visit_probability_direct, visit_probability_replacing, visit_setup,
};
use ustlerw::lattice::{
    build_grid, excursion_kernel_f64, excursion_kernel_rational, DomainSpec, GridModel,
    MarkedPoint, Role,
};
use ustlerw::montecarlo::{estimate_connectivity, estimate_visit};

/// Version of the JSON output envelope.
const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "ustlerw",
    version,
    about = "Exact UST connectivity and LERW boundary-visit probabilities on grid graphs, \
             with Monte Carlo and continuum cross-checks"
)]
struct Cli {
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format; defaults to json (svg for `figure`).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads (default: the USTLERW_WORKERS environment variable,
    /// then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the Dyck-path incidence matrix M, its inverse, and the
    /// cover-inclusive tilings for N ≤ 4.
    Combinat {
        /// Number of links N.
        #[arg(long)]
        n: usize,
    },
    /// Exact connectivity partition function Z_α on a grid (rational
    /// backend); labels follow the counterclockwise boundary order of the
    /// marked points.
    Exact {
        /// Domain specification (JSON).
        #[arg(long)]
        domain: PathBuf,
        /// Mesh-size override.
        #[arg(long)]
        delta: Option<f64>,
        /// Link pattern as a balanced parenthesis string, e.g. "()()".
        #[arg(long)]
        pattern: String,
    },
    /// Exact LERW boundary-visit probability on a grid, via both the direct
    /// ratio and the discrete replacing algorithm (rational backend).
    Visit {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        /// Visit order as a sign string, e.g. "++-"; the domain's visit
        /// points are taken in visit-time order.
        #[arg(long)]
        omega: String,
    },
    /// Wilson-algorithm Monte Carlo estimate compared against the exact
    /// value (f64 backend for the exact side).
    Sample {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        /// Connectivity pattern (exclusive with --omega).
        #[arg(long)]
        pattern: Option<String>,
        /// Visit order (exclusive with --pattern).
        #[arg(long)]
        omega: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Continuum pure partition function 𝒵_α or boundary-visit amplitude
    /// ζ_ω at explicit boundary coordinates.
    Continuum {
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long)]
        omega: Option<String>,
        /// Comma-separated coordinates: 2N increasing values for --pattern;
        /// entry, visit points in visit-time order, exit for --omega.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        points: Vec<f64>,
    },
    /// Continuum verification suites: PDE residuals, Möbius covariance,
    /// vanishing-link limits, cascade-asymptotics constants, spot values.
    Check {
        #[arg(long, value_enum, default_value_t = checks::Suite::All)]
        suite: checks::Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// δ-sweep of normalized discrete quantities against the conformal-map
    /// prediction on a rectangle of height 1.
    Converge {
        #[arg(long)]
        domain: PathBuf,
        /// Comma-separated mesh sizes, e.g. 0.0625,0.03125,0.015625.
        #[arg(long, value_delimiter = ',')]
        delta: Vec<f64>,
        /// Connectivity pattern: compares δ^{−2N} Z_α to the prediction;
        /// with two marked points and no pattern the excursion kernel itself
        /// is compared.
        #[arg(long)]
        pattern: Option<String>,
        /// Visit order: compares the δ^{−3N'}-normalized visit probability.
        #[arg(long)]
        omega: Option<String>,
    },
    /// SVG figure of a sampled wired UST, its boundary branches, or a
    /// cover-inclusive Dyck tiling.
    Figure {
        #[arg(long, value_enum)]
        kind: figure::FigureKind,
        /// Domain specification (tree/branches kinds).
        #[arg(long)]
        domain: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Lower Dyck path of the tiling (tiling kind).
        #[arg(long)]
        pattern: Option<String>,
        /// Upper Dyck path of the tiling; defaults to the rainbow pattern.
        #[arg(long)]
        pattern2: Option<String>,
    },
}

/// What a subcommand produced, in every representation it supports.
struct Rendered {
    json: Option<Value>,
    csv: Option<String>,
    svg: Option<String>,
    /// Number of failed checks (nonzero exit when positive).
    failures: usize,
}

impl Rendered {
    fn json(v: Value) -> Self {
        Rendered {
            json: Some(v),
            csv: None,
            svg: None,
            failures: 0,
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("USTLERW_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(w) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("setting up the worker pool")?;
    }

    let default_format = match cli.command {
        Command::Figure { .. } => Format::Svg,
        _ => Format::Json,
    };
    let format = cli.format.unwrap_or(default_format);

    let rendered = match cli.command {
        Command::Combinat { n } => run_combinat(n)?,
        Command::Exact {
            domain,
            delta,
            pattern,
        } => run_exact(&domain, delta, &pattern)?,
        Command::Visit {
            domain,
            delta,
            omega,
        } => run_visit(&domain, delta, &omega)?,
        Command::Sample {
            domain,
            delta,
            pattern,
            omega,
            samples,
            seed,
        } => run_sample(&domain, delta, pattern, omega, samples, seed)?,
        Command::Continuum {
            pattern,
            omega,
            points,
        } => run_continuum(pattern, omega, &points)?,
        Command::Check { suite, seed } => {
            let rows = checks::run(suite, seed)?;
            let failures = rows.iter().filter(|r| !r.pass).count();
            Rendered {
                json: Some(envelope(
                    "check",
                    "f64",
                    json!({ "suite": format!("{suite:?}").to_lowercase(), "seed": seed }),
                    serde_json::to_value(&rows)?,
                )),
                csv: Some(rows_to_csv(&rows)?),
                svg: None,
                failures,
            }
        }
        Command::Converge {
            domain,
            delta,
            pattern,
            omega,
        } => run_converge(&domain, &delta, pattern, omega)?,
        Command::Figure {
            kind,
            domain,
            delta,
            seed,
            pattern,
            pattern2,
        } => Rendered {
            json: None,
            csv: None,
            svg: Some(figure::run(kind, domain.as_deref(), delta, seed, pattern, pattern2)?),
            failures: 0,
        },
    };

    let text = match format {
        Format::Json => serde_json::to_string_pretty(
            &rendered
                .json
                .ok_or_else(|| anyhow!("this command has no JSON form; use --format svg"))?,
        )? + "\n",
        Format::Csv => rendered
            .csv
            .ok_or_else(|| anyhow!("--format csv is only available for check and converge"))?,
        Format::Svg => rendered
            .svg
            .ok_or_else(|| anyhow!("--format svg is only available for figure"))?,
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing output to {}", path.display()))?,
        None => print!("{text}"),
    }
    if rendered.failures > 0 {
        bail!("{} check(s) failed", rendered.failures);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Versioned output envelope carrying backend metadata.
fn envelope(command: &str, backend: &str, parameters: Value, results: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "tool": { "name": "ustlerw", "version": env!("CARGO_PKG_VERSION") },
        "command": command,
        "backend": backend,
        "parameters": parameters,
        "results": results,
    })
}

fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub(crate) fn parse_pattern(s: &str) -> Result<LinkObject> {
    let mut steps = Vec::new();
    for ch in s.chars() {
        match ch {
            '(' => steps.push(1),
            ')' => steps.push(-1),
            c if c.is_whitespace() => {}
            _ => bail!("pattern must be a balanced parenthesis string, got {s:?}"),
        }
    }
    LinkObject::new(steps).with_context(|| format!("invalid pattern {s:?}"))
}

fn parse_omega(s: &str) -> Result<VisitOrder> {
    let omega: VisitOrder = s.parse().with_context(|| format!("invalid visit order {s:?}"))?;
    ensure!(omega.n_visits() > 0, "the visit order must be nonempty");
    Ok(omega)
}

fn load_domain(path: &Path, delta: Option<f64>) -> Result<DomainSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading domain file {}", path.display()))?;
    let mut spec: DomainSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(d) = delta {
        spec.delta = d;
    }
    Ok(spec)
}

/// Marked non-visit boundary edges in counterclockwise label order.
fn marked_edges_ccw(g: &GridModel) -> Vec<usize> {
    let mut marked: Vec<_> = g
        .marked
        .iter()
        .filter(|m| !matches!(m.role, Role::Visit))
        .collect();
    marked.sort_by_key(|m| m.ccw_index);
    marked.iter().map(|m| m.edge).collect()
}

fn rational_json(v: &BigRational) -> Value {
    json!({ "rational": v.to_string(), "float": v.to_f64() })
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn run_combinat(n: usize) -> Result<Rendered> {
    ensure!((1..=4).contains(&n), "combinat supports 1 ≤ n ≤ 4");
    let paths = enumerate_dyck_paths(n)?;
    let (m, minv) = incidence_matrices(n, &|_| BigRational::one())?;
    let dump = |mat: &ustlerw::combinatorics::IncidenceMatrix| -> Result<Vec<Vec<i64>>> {
        (0..mat.size())
            .map(|i| {
                (0..mat.size())
                    .map(|j| {
                        mat.entry_i64(i, j)
                            .ok_or_else(|| anyhow!("non-integer matrix entry"))
                    })
                    .collect()
            })
            .collect()
    };
    let mut tilings = Vec::new();
    for (i, a) in paths.iter().enumerate() {
        for (j, b) in paths.iter().enumerate() {
            if !dominance_leq(a, b)? {
                continue;
            }
            let ts = cover_inclusive_tilings(a, b)?;
            ensure!(
                ts.len() as i64 == minv.entry_i64(i, j).unwrap_or(-1),
                "tiling count disagrees with the inverse matrix entry"
            );
            tilings.push(json!({
                "lower": a.parens(),
                "upper": b.parens(),
                "count": ts.len(),
                "tilings": ts
                    .iter()
                    .map(|t| t.tiles.iter().map(|tile| tile.text()).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            }));
        }
    }
    Ok(Rendered::json(envelope(
        "combinat",
        "rational",
        json!({ "n": n }),
        json!({
            "order": paths.iter().map(|p| p.parens()).collect::<Vec<_>>(),
            "m": dump(&m)?,
            "m_inverse": dump(&minv)?,
            "tilings": tilings,
        }),
    )))
}

fn run_exact(domain: &Path, delta: Option<f64>, pattern: &str) -> Result<Rendered> {
    let spec = load_domain(domain, delta)?;
    let g = build_grid(&spec)?;
    let alpha = parse_pattern(pattern)?;
    let edges = marked_edges_ccw(&g);
    ensure!(
        edges.len() == 2 * alpha.n(),
        "the domain marks {} non-visit boundary points but pattern {} needs {}",
        edges.len(),
        alpha.parens(),
        2 * alpha.n()
    );
    let kernel = excursion_kernel_rational(&g, &edges)?;
    let z = connectivity_probability(&g, &edges, &alpha, &kernel)?;
    Ok(Rendered::json(envelope(
        "exact",
        "rational",
        json!({
            "domain": domain.display().to_string(),
            "delta": g.delta,
            "pattern": alpha.parens(),
        }),
        json!({
            "interior_vertices": g.n_interior(),
            "marked_edges": edges,
            "value": rational_json(&z.value),
        }),
    )))
}

fn run_visit(domain: &Path, delta: Option<f64>, omega: &str) -> Result<Rendered> {
    let spec = load_domain(domain, delta)?;
    let g = build_grid(&spec)?;
    let omega = parse_omega(omega)?;
    let setup = visit_setup(&g, &omega)?;
    let kernel = excursion_kernel_rational(&g, &setup.labels)?;
    let direct = visit_probability_direct(&g, &setup, &kernel)?;
    let replacing = visit_probability_replacing(&g, &setup, &kernel)?;
    let agree = direct == replacing;
    Ok(Rendered {
        failures: usize::from(!agree),
        json: Some(envelope(
            "visit",
            "rational",
            json!({
                "domain": domain.display().to_string(),
                "delta": g.delta,
                "omega": omega.to_string(),
            }),
            json!({
                "interior_vertices": g.n_interior(),
                "labels": setup.labels,
                "hat_edges": setup.hat_edges,
                "pattern": setup.alpha.parens(),
                "direct": rational_json(&direct),
                "replacing": rational_json(&replacing),
                "agree": agree,
            }),
        )),
        csv: None,
        svg: None,
    })
}

fn run_sample(
    domain: &Path,
    delta: Option<f64>,
    pattern: Option<String>,
    omega: Option<String>,
    samples: u64,
    seed: u64,
) -> Result<Rendered> {
    let spec = load_domain(domain, delta)?;
    let g = build_grid(&spec)?;
    let (estimate, exact, label) = match (pattern, omega) {
        (Some(p), None) => {
            let alpha = parse_pattern(&p)?;
            let edges = marked_edges_ccw(&g);
            ensure!(
                edges.len() == 2 * alpha.n(),
                "the domain marks {} non-visit boundary points but pattern {} needs {}",
                edges.len(),
                alpha.parens(),
                2 * alpha.n()
            );
            let kernel = excursion_kernel_f64(&g, &edges)?;
            let z = connectivity_probability(&g, &edges, &alpha, &kernel)?;
            let est = estimate_connectivity(&g, &edges, &alpha, samples, seed)?;
            (est, z.value, alpha.parens())
        }
        (None, Some(w)) => {
            let omega = parse_omega(&w)?;
            let setup = visit_setup(&g, &omega)?;
            let kernel = excursion_kernel_f64(&g, &setup.labels)?;
            let p = visit_probability_direct(&g, &setup, &kernel)?;
            let est = estimate_visit(&g, &omega, samples, seed)?;
            (est, p, omega.to_string())
        }
        _ => bail!("pass exactly one of --pattern or --omega"),
    };
    let abs_error = (estimate.p_hat - exact).abs();
    let sigmas = if estimate.stderr > 0.0 {
        abs_error / estimate.stderr
    } else if abs_error == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let pass = sigmas <= 4.0;
    Ok(Rendered {
        failures: usize::from(!pass),
        json: Some(envelope(
            "sample",
            "f64+mc",
            json!({
                "domain": domain.display().to_string(),
                "delta": g.delta,
                "event": label,
                "samples": samples,
                "seed": seed,
            }),
            json!({
                "estimate": serde_json::to_value(&estimate)?,
                "exact": exact,
                "abs_error": abs_error,
                "sigmas": sigmas,
                "tolerance_sigmas": 4.0,
                "pass": pass,
            }),
        )),
        csv: None,
        svg: None,
    })
}

fn run_continuum(
    pattern: Option<String>,
    omega: Option<String>,
    points: &[f64],
) -> Result<Rendered> {
    let (params, value) = match (pattern, omega) {
        (Some(p), None) => {
            let alpha = parse_pattern(&p)?;
            ensure!(
                points.len() == 2 * alpha.n(),
                "pattern {} needs {} coordinates, got {}",
                alpha.parens(),
                2 * alpha.n(),
                points.len()
            );
            let z = pure_partition_function::<f64>(&alpha, points)?;
            (json!({ "pattern": alpha.parens(), "points": points }), z)
        }
        (None, Some(w)) => {
            let omega = parse_omega(&w)?;
            let np = omega.n_visits();
            ensure!(
                points.len() == np + 2,
                "visit order {omega} needs {} coordinates (entry, {np} visit points, exit), got {}",
                np + 2,
                points.len()
            );
            let z = zeta_omega::<f64>(
                &omega,
                &points[0],
                &points[1..=np],
                &points[np + 1],
            )?;
            (json!({ "omega": omega.to_string(), "points": points }), z)
        }
        _ => bail!("pass exactly one of --pattern or --omega"),
    };
    Ok(Rendered::json(envelope(
        "continuum",
        "f64",
        params,
        json!({ "value": value }),
    )))
}

#[derive(Serialize)]
struct ConvergeRow {
    delta: f64,
    interior_vertices: usize,
    value: f64,
    prediction: f64,
    rel_error: f64,
}

/// The continuum boundary position of a marked edge: the position of its
/// boundary endpoint (within δ of the requested marked point).
fn boundary_position(g: &GridModel, edge: usize) -> (f64, f64) {
    let (bv, _) = g.boundary_ends[&edge];
    g.vertex_pos(bv)
}

fn nearest_point(points: &[&MarkedPoint], pos: (f64, f64)) -> (f64, f64) {
    let p = points
        .iter()
        .min_by(|a, b| {
            let da = (a.x - pos.0).powi(2) + (a.y - pos.1).powi(2);
            let db = (b.x - pos.0).powi(2) + (b.y - pos.1).powi(2);
            da.partial_cmp(&db).unwrap()
        })
        .expect("at least one marked point");
    (p.x, p.y)
}

fn run_converge(
    domain: &Path,
    deltas: &[f64],
    pattern: Option<String>,
    omega: Option<String>,
) -> Result<Rendered> {
    ensure!(!deltas.is_empty(), "pass at least one --delta value");
    let base = load_domain(domain, None)?;
    let xs: Vec<f64> = base.polygon.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = base.polygon.iter().map(|p| p[1]).collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    ensure!(
        base.polygon.len() == 4 && (y1 - y0 - 1.0).abs() < 1e-9,
        "converge requires a rectangular domain of height 1"
    );
    let aspect = x1 - x0;
    let map = rectangle_halfplane_map(aspect)?;
    // continuum positions in map coordinates (rectangle corner at the origin)
    let shift = |p: (f64, f64)| (p.0 - x0, p.1 - y0);

    let alpha = pattern.map(|p| parse_pattern(&p)).transpose()?;
    let omega = omega.map(|w| parse_omega(&w)).transpose()?;
    ensure!(
        alpha.is_none() || omega.is_none(),
        "pass at most one of --pattern or --omega"
    );

    let mut rows = Vec::new();
    for &d in deltas {
        let mut spec = base.clone();
        spec.delta = d;
        let g = build_grid(&spec)?;
        let (value, prediction) = if let Some(omega) = &omega {
            let setup = visit_setup(&g, omega)?;
            let kernel = excursion_kernel_f64(&g, &setup.labels)?;
            let p = visit_probability_direct(&g, &setup, &kernel)?;
            let p_in = base
                .points
                .iter()
                .find(|m| matches!(m.role, Role::In))
                .map(|m| shift((m.x, m.y)))
                .ok_or_else(|| anyhow!("the domain needs an `in` point"))?;
            let p_out = base
                .points
                .iter()
                .find(|m| matches!(m.role, Role::Out))
                .map(|m| shift((m.x, m.y)))
                .ok_or_else(|| anyhow!("the domain needs an `out` point"))?;
            let hats: Vec<(f64, f64)> = base
                .points
                .iter()
                .filter(|m| matches!(m.role, Role::Visit))
                .map(|m| shift((m.x, m.y)))
                .collect();
            let np = omega.n_visits() as i32;
            (
                p / d.powi(3 * np),
                map.visit_prediction(omega, p_in, &hats, p_out)?,
            )
        } else {
            let edges = marked_edges_ccw(&g);
            let targets: Vec<&MarkedPoint> = base
                .points
                .iter()
                .filter(|m| !matches!(m.role, Role::Visit))
                .collect();
            let ps: Vec<(f64, f64)> = edges
                .iter()
                .map(|&e| shift(nearest_point(&targets, boundary_position(&g, e))))
                .collect();
            if let Some(alpha) = &alpha {
                ensure!(
                    edges.len() == 2 * alpha.n(),
                    "the domain marks {} non-visit boundary points but pattern {} needs {}",
                    edges.len(),
                    alpha.parens(),
                    2 * alpha.n()
                );
                let kernel = excursion_kernel_f64(&g, &edges)?;
                let z = connectivity_probability(&g, &edges, alpha, &kernel)?;
                (
                    z.value / d.powi(2 * alpha.n() as i32),
                    map.z_prediction(alpha, &ps)?,
                )
            } else {
                ensure!(
                    edges.len() == 2,
                    "kernel comparison needs exactly two marked points"
                );
                let kernel = excursion_kernel_f64(&g, &edges)?;
                (
                    kernel.values[0][1] / (d * d),
                    map.kernel_prediction(ps[0], ps[1])?,
                )
            }
        };
        rows.push(ConvergeRow {
            delta: d,
            interior_vertices: g.n_interior(),
            value,
            prediction,
            rel_error: ((value - prediction) / prediction).abs(),
        });
    }
    let params = json!({
        "domain": domain.display().to_string(),
        "deltas": deltas,
        "pattern": alpha.as_ref().map(|a| a.parens()),
        "omega": omega.as_ref().map(|w| w.to_string()),
        "aspect": aspect,
    });
    Ok(Rendered {
        json: Some(envelope(
            "converge",
            "f64",
            params,
            serde_json::to_value(&rows)?,
        )),
        csv: Some(rows_to_csv(&rows)?),
        svg: None,
        failures: 0,
    })
}
