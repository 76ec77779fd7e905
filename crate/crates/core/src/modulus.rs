//! Discrete `p`-modulus of curve families.
//!
//! A family is given by an ambient (a cell grid in `Rⁿ` or a triangulated
//! image surface) and two terminal sets `E`, `F`. Densities are piecewise
//! constant per cell/triangle; path integrals use exact segment lengths
//! inside each cell. The optimisation
//!
//! ```text
//! minimise Σ_c a_c ρ_c^p   subject to   ∫_γ ρ ds ≥ 1 for all E→F paths γ
//! ```
//!
//! is solved by constraint generation: a dual coordinate-ascent solve over an
//! active path set, then a ρ-weighted shortest-path search for violated paths.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::ConstantForm;
use crate::graph::{merge_support, GraphBuilder, PathGraph};
use crate::grid::GridDomain;
use crate::jetcalc::{self, MapSpec};
use crate::surface::{self, SurfaceMesh};

/// Stencil radius used when none is given: offsets with max-norm ≤ 3 in the
/// plane (32 directions), face and diagonal neighbours in higher dimensions.
pub fn default_stencil_radius(dim: usize) -> usize {
    if dim <= 2 {
        3
    } else {
        1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Lo,
    Hi,
}

/// Terminal set of a family.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Selector {
    /// The face `x_axis = lo` or `x_axis = hi` of the box.
    Face { axis: usize, side: Side },
    /// The sphere `|x − center| = radius`; an empty center means the origin.
    Sphere { center: Vec<f64>, radius: f64 },
    /// Explicit grid cells (linear indices, axis 0 fastest).
    Cells { ids: Vec<usize> },
    /// Explicit mesh vertices.
    Vertices { ids: Vec<usize> },
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
enum SelectorFields {
    Face {
        axis: usize,
        side: Side,
    },
    Sphere {
        #[serde(default)]
        center: Vec<f64>,
        radius: f64,
    },
    Cells {
        ids: Vec<usize>,
    },
    Vertices {
        ids: Vec<usize>,
    },
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Fields(SelectorFields),
        }
        match Repr::deserialize(d)? {
            Repr::Name(name) => Selector::parse(&name).map_err(serde::de::Error::custom),
            Repr::Fields(f) => Ok(match f {
                SelectorFields::Face { axis, side } => Selector::Face { axis, side },
                SelectorFields::Sphere { center, radius } => Selector::Sphere { center, radius },
                SelectorFields::Cells { ids } => Selector::Cells { ids },
                SelectorFields::Vertices { ids } => Selector::Vertices { ids },
            }),
        }
    }
}

impl Selector {
    /// Named selectors: `left-edge`, `right-edge`, `bottom-edge`, `top-edge`,
    /// `circle r=<radius>` and `sphere r=<radius>` (centered at the origin).
    pub fn parse(name: &str) -> Result<Self> {
        let face = |axis, side| Ok(Selector::Face { axis, side });
        match name.trim() {
            "left-edge" => face(0, Side::Lo),
            "right-edge" => face(0, Side::Hi),
            "bottom-edge" => face(1, Side::Lo),
            "top-edge" => face(1, Side::Hi),
            other => {
                let rest = other
                    .strip_prefix("circle")
                    .or_else(|| other.strip_prefix("sphere"))
                    .ok_or_else(|| Error::InvalidFamily(format!("unknown selector {other:?}")))?;
                let r = rest
                    .trim()
                    .strip_prefix("r=")
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|r| *r > 0.0)
                    .ok_or_else(|| Error::InvalidFamily(format!("bad radius in selector {other:?}")))?;
                Ok(Selector::Sphere { center: Vec::new(), radius: r })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Ambient {
    Grid(GridDomain),
    Mesh(Arc<SurfaceMesh>),
}

/// All paths from `source` to `target` that stay in `ambient`.
#[derive(Clone, Debug)]
pub struct PathFamily {
    pub ambient: Ambient,
    pub source: Selector,
    pub target: Selector,
}

/// JSON form of a grid family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub grid: GridDomain,
    pub source: Selector,
    pub target: Selector,
}

impl TryFrom<FamilySpec> for PathFamily {
    type Error = Error;
    fn try_from(s: FamilySpec) -> Result<Self> {
        PathFamily::on_grid(s.grid, s.source, s.target)
    }
}

impl PathFamily {
    pub fn on_grid(grid: GridDomain, source: Selector, target: Selector) -> Result<Self> {
        grid.validate()?;
        let fam = PathFamily { ambient: Ambient::Grid(grid), source, target };
        fam.validate()?;
        Ok(fam)
    }

    pub fn on_mesh(mesh: Arc<SurfaceMesh>, source: Selector, target: Selector) -> Result<Self> {
        let fam = PathFamily { ambient: Ambient::Mesh(mesh), source, target };
        fam.validate()?;
        Ok(fam)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: FamilySpec = serde_json::from_str(text)?;
        spec.try_into()
    }

    fn validate(&self) -> Result<()> {
        for sel in [&self.source, &self.target] {
            let n = self.dim();
            match sel {
                Selector::Face { axis, .. } if *axis >= n => {
                    return Err(Error::InvalidFamily(format!("face axis {axis} out of range for dimension {n}")));
                }
                Selector::Sphere { center, radius } => {
                    if !center.is_empty() && center.len() != n {
                        return Err(Error::InvalidFamily("sphere center has the wrong dimension".into()));
                    }
                    if !(*radius > 0.0) {
                        return Err(Error::InvalidFamily("sphere radius must be positive".into()));
                    }
                }
                Selector::Cells { .. } if matches!(self.ambient, Ambient::Mesh(_)) => {
                    return Err(Error::InvalidFamily("cell selectors need a grid ambient".into()));
                }
                Selector::Vertices { .. } if matches!(self.ambient, Ambient::Grid(_)) => {
                    return Err(Error::InvalidFamily("vertex selectors need a mesh ambient".into()));
                }
                _ => {}
            }
        }
        for t in [self.terminals(&self.source)?, self.terminals(&self.target)?] {
            if t.is_empty() {
                return Err(Error::InvalidFamily("a terminal selector picks no cells or vertices".into()));
            }
        }
        Ok(())
    }

    /// Parameter dimension of the ambient.
    pub fn dim(&self) -> usize {
        match &self.ambient {
            Ambient::Grid(g) => g.dim(),
            Ambient::Mesh(_) => 2,
        }
    }

    /// Graph with density cells; grid ambients are rebuilt, meshes carry theirs.
    pub fn graph(&self, stencil_radius: Option<usize>) -> std::borrow::Cow<'_, PathGraph> {
        match &self.ambient {
            Ambient::Grid(g) => {
                let radius = stencil_radius.unwrap_or_else(|| default_stencil_radius(g.dim()));
                std::borrow::Cow::Owned(grid_graph(g, radius))
            }
            Ambient::Mesh(m) => std::borrow::Cow::Borrowed(m.graph()),
        }
    }

    /// Parameter-space location of each density cell (grid cell center or
    /// triangle centroid).
    pub fn cell_locations(&self) -> Vec<Vec<f64>> {
        match &self.ambient {
            Ambient::Grid(g) => (0..g.cell_count()).map(|c| g.cell_center(c)).collect(),
            Ambient::Mesh(m) => (0..m.triangle_count()).map(|t| m.triangle_param_centroid(t).to_vec()).collect(),
        }
    }

    fn terminals(&self, sel: &Selector) -> Result<Vec<Terminal>> {
        match &self.ambient {
            Ambient::Grid(g) => Ok(grid_terminals(g, sel)),
            Ambient::Mesh(m) => {
                Ok(mesh_vertices(m, sel)?.into_iter().map(|v| Terminal { node: v, support: Vec::new() }).collect())
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Terminal {
    node: usize,
    /// Segment from the terminal set to the node.
    support: Vec<(u32, f64)>,
}

fn grid_terminals(grid: &GridDomain, sel: &Selector) -> Vec<Terminal> {
    let n = grid.dim();
    let kept = grid.kept_cells();
    match sel {
        Selector::Face { axis, side } => kept
            .into_iter()
            .filter(|&c| {
                let i = grid.multi(c)[*axis];
                match side {
                    Side::Lo => i == 0,
                    Side::Hi => i + 1 == grid.resolution[*axis],
                }
            })
            .map(|c| Terminal { node: c, support: vec![(c as u32, 0.5 * grid.spacing(*axis))] })
            .collect(),
        Selector::Sphere { center, radius } => {
            let center = if center.is_empty() { vec![0.0; n] } else { center.clone() };
            let half_diag = 0.5 * grid.spacings().iter().map(|h| h * h).sum::<f64>().sqrt();
            kept.into_iter()
                .filter_map(|c| {
                    let gap = (crate::linalg::dist(&grid.cell_center(c), &center) - radius).abs();
                    (gap <= half_diag).then(|| Terminal { node: c, support: vec![(c as u32, gap)] })
                })
                .collect()
        }
        Selector::Cells { ids } => {
            let mut ids: Vec<usize> =
                ids.iter().copied().filter(|&c| c < grid.cell_count() && grid.is_kept(c)).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.into_iter().map(|c| Terminal { node: c, support: Vec::new() }).collect()
        }
        Selector::Vertices { .. } => Vec::new(),
    }
}

/// Mesh vertices picked by a selector; faces and spheres are read in parameter space.
fn mesh_vertices(mesh: &SurfaceMesh, sel: &Selector) -> Result<Vec<usize>> {
    let grid = mesh.grid();
    let mut out: Vec<usize> = match sel {
        Selector::Face { axis, side } => (0..mesh.vertex_count())
            .filter(|&v| {
                let i = mesh.vertex_grid_index(v)[*axis];
                match side {
                    Side::Lo => i == 0,
                    Side::Hi => i == grid.resolution[*axis],
                }
            })
            .collect(),
        Selector::Sphere { center, radius } => {
            let center = if center.is_empty() { vec![0.0; 2] } else { center.clone() };
            let half_diag = 0.5 * grid.spacings().iter().map(|h| h * h).sum::<f64>().sqrt();
            (0..mesh.vertex_count())
                .filter(|&v| {
                    mesh.is_boundary_vertex(v)
                        && (crate::linalg::dist(&mesh.param(v), &center) - radius).abs() <= half_diag
                })
                .collect()
        }
        Selector::Vertices { ids } => {
            if let Some(bad) = ids.iter().find(|&&v| v >= mesh.vertex_count()) {
                return Err(Error::InvalidFamily(format!("vertex {bad} is not on the mesh")));
            }
            ids.clone()
        }
        Selector::Cells { ids } => {
            let mut vs = Vec::new();
            for &c in ids {
                let idx = grid.multi(c);
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if let Some(v) = mesh.vertex_at(idx[0] + di, idx[1] + dj) {
                        vs.push(v);
                    }
                }
            }
            vs
        }
    };
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Primitive integer offsets with max-norm ≤ `radius`, one per ± pair.
fn stencil(n: usize, radius: usize) -> Vec<Vec<i64>> {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    let r = radius as i64;
    let side = (2 * r + 1) as usize;
    let mut out = Vec::new();
    for code in 0..side.pow(n as u32) {
        let mut c = code;
        let d: Vec<i64> = (0..n)
            .map(|_| {
                let v = (c % side) as i64 - r;
                c /= side;
                v
            })
            .collect();
        let first = d.iter().find(|&&v| v != 0);
        if first.is_none_or(|&v| v < 0) {
            continue;
        }
        if d.iter().fold(0, |g, &v| gcd(g, v)) == 1 {
            out.push(d);
        }
    }
    out
}

/// Cells crossed by the segment between the centers of `from` and `from + d`,
/// with the euclidean length inside each.
fn crossing(grid: &GridDomain, from: &[usize], d: &[i64]) -> Vec<(u32, f64)> {
    let n = grid.dim();
    let length = (0..n).map(|k| (d[k] as f64 * grid.spacing(k)).powi(2)).sum::<f64>().sqrt();
    let mut ts = vec![0.0, 1.0];
    for &dk in d {
        let m = dk.unsigned_abs();
        for j in 1..=m {
            ts.push((j as f64 - 0.5) / m as f64);
        }
    }
    ts.sort_by(f64::total_cmp);
    let mut out: Vec<(u32, f64)> = Vec::new();
    let mut idx = vec![0usize; n];
    for w in ts.windows(2) {
        if w[1] - w[0] <= 1e-12 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        for k in 0..n {
            idx[k] = (from[k] as f64 + 0.5 + mid * d[k] as f64).floor() as usize;
        }
        let cell = grid.linear(&idx) as u32;
        let piece = (w[1] - w[0]) * length;
        match out.last_mut() {
            Some(last) if last.0 == cell => last.1 += piece,
            _ => out.push((cell, piece)),
        }
    }
    out
}

/// Path graph on the kept cells: nodes are cell centers, arcs follow the stencil
/// and are dropped when they cross a removed cell.
pub fn grid_graph(grid: &GridDomain, stencil_radius: usize) -> PathGraph {
    let n = grid.dim();
    let count = grid.cell_count();
    let keep: Vec<bool> = (0..count).map(|c| grid.is_kept(c)).collect();
    let offsets = stencil(n, stencil_radius.max(1));
    let mut b = GraphBuilder::new(count, vec![grid.cell_volume(); count]);
    let mut target = vec![0usize; n];
    for a in (0..count).filter(|&c| keep[c]) {
        let idx = grid.multi(a);
        'offsets: for d in &offsets {
            for k in 0..n {
                let t = idx[k] as i64 + d[k];
                if t < 0 || t >= grid.resolution[k] as i64 {
                    continue 'offsets;
                }
                target[k] = t as usize;
            }
            let support = crossing(grid, &idx, d);
            if support.iter().all(|&(c, _)| keep[c as usize]) {
                b.add_arc(a, grid.linear(&target), &support);
            }
        }
    }
    b.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusOptions {
    pub exponent: f64,
    /// Admissibility tolerance on the final shortest path.
    pub tol: f64,
    /// Max-norm radius of the grid stencil; `None` picks [`default_stencil_radius`].
    #[serde(default)]
    pub stencil_radius: Option<usize>,
    pub max_rounds: usize,
    /// Violated paths added per round.
    pub max_new_paths: usize,
    pub max_sweeps: usize,
    /// Over-relaxation factor for the dual coordinate steps, in (0, 2).
    pub relaxation: f64,
}

impl ModulusOptions {
    pub fn new(exponent: f64) -> Self {
        ModulusOptions {
            exponent,
            tol: 1e-3,
            stencil_radius: None,
            max_rounds: 2000,
            max_new_paths: 256,
            max_sweeps: 200_000,
            relaxation: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyFlag {
    /// `E ∩ F ≠ ∅`: constant paths admit no admissible density.
    Degenerate,
    /// No path joins `E` to `F` inside the ambient.
    Empty,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Density {
    pub values: Vec<f64>,
    pub exponent: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulusResult {
    /// `Σ a_c ρ_c^p` of the returned (admissible) density.
    pub modulus: f64,
    /// Dual bound from the active-set solve; the discrete modulus lies in
    /// `[lower_bound, modulus]`.
    pub lower_bound: f64,
    /// Shortest ρ-length over all `E→F` paths before the final rescaling.
    pub certificate: f64,
    pub flag: Option<FamilyFlag>,
    pub rounds: usize,
    pub active_paths: usize,
    pub sweeps: usize,
    pub converged: bool,
    #[serde(skip)]
    pub density: Option<Density>,
}

impl ModulusResult {
    fn flagged(flag: FamilyFlag, cells: usize, exponent: f64) -> Self {
        let value = match flag {
            FamilyFlag::Degenerate => f64::INFINITY,
            FamilyFlag::Empty => 0.0,
        };
        ModulusResult {
            modulus: value,
            lower_bound: value,
            certificate: value,
            flag: Some(flag),
            rounds: 0,
            active_paths: 0,
            sweeps: 0,
            converged: true,
            density: Some(Density { values: vec![0.0; cells], exponent }),
        }
    }

    /// `location…, rho` rows, one per density cell.
    pub fn density_csv(&self, family: &PathFamily) -> Result<String> {
        let locs = family.cell_locations();
        let n = locs.first().map_or(0, |l| l.len());
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("rho".into());
        let values = self.density.as_ref().map(|d| d.values.clone()).unwrap_or_default();
        let rows = locs.iter().zip(&values).map(|(l, v)| {
            let mut row: Vec<String> = l.iter().map(|x| x.to_string()).collect();
            row.push(v.to_string());
            row
        });
        crate::report::csv_string(&header, rows)
    }
}

/// Modulus with default solver settings.
pub fn discrete_modulus(family: &PathFamily, exponent: f64, tol: f64) -> Result<ModulusResult> {
    discrete_modulus_with(family, &ModulusOptions { tol, ..ModulusOptions::new(exponent) })
}

pub fn discrete_modulus_with(family: &PathFamily, opts: &ModulusOptions) -> Result<ModulusResult> {
    if !(opts.exponent > 1.0) {
        return Err(Error::InvalidArgument(format!("modulus exponent must exceed 1, got {}", opts.exponent)));
    }
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1), got {}", opts.tol)));
    }
    let graph = family.graph(opts.stencil_radius);
    let sources = family.terminals(&family.source)?;
    let targets = family.terminals(&family.target)?;
    solve(&graph, &sources, &targets, opts)
}

/// Shortest ρ-length over the family's discrete paths: `ρ` is admissible
/// exactly when this is at least 1.
pub fn shortest_path_length(family: &PathFamily, rho: &[f64], stencil_radius: Option<usize>) -> Result<f64> {
    let graph = family.graph(stencil_radius);
    if rho.len() != graph.cell_count() || rho.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "density needs {} nonnegative values, got {}",
            graph.cell_count(),
            rho.len()
        )));
    }
    let sources = family.terminals(&family.source)?;
    let targets = family.terminals(&family.target)?;
    Ok(separate(&graph, rho, &sources, &targets).shortest)
}

struct Row {
    cells: Vec<u32>,
    lens: Vec<f64>,
    /// `Σ L² / (2a)`: curvature of the dual along this coordinate when p = 2.
    q: f64,
}

struct ActiveSet<'a> {
    area: &'a [f64],
    p: f64,
    omega: f64,
    rows: Vec<Row>,
    lambda: Vec<f64>,
    s: Vec<f64>,
    rho: Vec<f64>,
    keys: HashSet<Vec<u32>>,
}

impl<'a> ActiveSet<'a> {
    fn new(area: &'a [f64], p: f64, omega: f64) -> Self {
        let cells = area.len();
        ActiveSet {
            area,
            p,
            omega,
            rows: Vec::new(),
            lambda: Vec::new(),
            s: vec![0.0; cells],
            rho: vec![0.0; cells],
            keys: HashSet::new(),
        }
    }

    fn rho_of(&self, s: f64, a: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if self.p == 2.0 {
            s / (2.0 * a)
        } else {
            (s / (self.p * a)).powf(1.0 / (self.p - 1.0))
        }
    }

    fn push(&mut self, key: Vec<u32>, support: Vec<(u32, f64)>) -> bool {
        if !self.keys.insert(key) {
            return false;
        }
        let q = support.iter().map(|&(c, l)| l * l / (2.0 * self.area[c as usize])).sum();
        let (cells, lens) = support.into_iter().unzip();
        self.rows.push(Row { cells, lens, q });
        self.lambda.push(0.0);
        true
    }

    fn row_length(&self, k: usize) -> f64 {
        let r = &self.rows[k];
        r.cells.iter().zip(&r.lens).map(|(&c, &l)| self.rho[c as usize] * l).sum()
    }

    /// Change of `λ_k` maximising the dual along that coordinate.
    fn step(&self, k: usize, residual: f64) -> f64 {
        let lam = self.lambda[k];
        if self.p == 2.0 {
            return (lam + self.omega * residual / self.rows[k].q).max(0.0) - lam;
        }
        let row = &self.rows[k];
        let g = |delta: f64| -> (f64, f64) {
            let (mut val, mut slope) = (1.0, 0.0);
            for (&c, &l) in row.cells.iter().zip(&row.lens) {
                let a = self.area[c as usize];
                let s = self.s[c as usize] + delta * l;
                let r = self.rho_of(s, a);
                val -= l * r;
                if s > 0.0 {
                    slope -= l * l * r / ((self.p - 1.0) * s);
                }
            }
            (val, slope)
        };
        if g(-lam).0 <= 0.0 {
            return -lam;
        }
        let (mut lo, mut hi) = (-lam, 1.0_f64.max(lam));
        while g(hi).0 > 0.0 {
            hi *= 2.0;
        }
        let mut x = 0.0_f64.clamp(lo, hi);
        for _ in 0..100 {
            let (v, slope) = g(x);
            if v > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 1e-15 * (1.0 + hi.abs()) || v.abs() < 1e-14 {
                break;
            }
            let newton = if slope < 0.0 { x - v / slope } else { f64::NAN };
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        x
    }

    /// Dual coordinate ascent until the KKT residual over the active set is below `tol`.
    fn solve(&mut self, tol: f64, max_sweeps: usize) -> (usize, bool) {
        for sweep in 1..=max_sweeps {
            let mut kkt = 0.0_f64;
            for k in 0..self.rows.len() {
                let residual = 1.0 - self.row_length(k);
                let lam = self.lambda[k];
                kkt = kkt.max(if lam > 0.0 { residual.abs() } else { residual.max(0.0) });
                let delta = self.step(k, residual);
                if delta == 0.0 {
                    continue;
                }
                self.lambda[k] = lam + delta;
                for i in 0..self.rows[k].cells.len() {
                    let c = self.rows[k].cells[i] as usize;
                    self.s[c] += delta * self.rows[k].lens[i];
                    self.rho[c] = self.rho_of(self.s[c], self.area[c]);
                }
            }
            if kkt <= tol {
                return (sweep, true);
            }
        }
        (max_sweeps, false)
    }

    fn objective(&self) -> f64 {
        self.rho.iter().zip(self.area).map(|(r, a)| a * r.powf(self.p)).sum()
    }

    fn dual(&self) -> f64 {
        self.lambda.iter().sum::<f64>() - (self.p - 1.0) * self.objective()
    }
}

struct Separation {
    shortest: f64,
    /// `(total, target terminal index)` for reachable targets.
    totals: Vec<(f64, usize)>,
    tree: crate::graph::ShortestPaths,
}

fn separate(graph: &PathGraph, rho: &[f64], sources: &[Terminal], targets: &[Terminal]) -> Separation {
    let w = graph.weights(rho);
    let weigh = |s: &[(u32, f64)]| s.iter().map(|&(c, l)| rho[c as usize] * l).sum::<f64>();
    let seeds: Vec<(usize, f64)> = sources.iter().map(|t| (t.node, weigh(&t.support))).collect();
    let tree = graph.dijkstra(&w, &seeds, None);
    let mut totals: Vec<(f64, usize)> = targets
        .iter()
        .enumerate()
        .filter(|(_, t)| tree.dist[t.node].is_finite())
        .map(|(i, t)| (tree.dist[t.node] + weigh(&t.support), i))
        .collect();
    totals.sort_by(|a, b| a.0.total_cmp(&b.0).then(targets[a.1].node.cmp(&targets[b.1].node)));
    Separation { shortest: totals.first().map_or(f64::INFINITY, |t| t.0), totals, tree }
}

fn tree_path(
    graph: &PathGraph,
    sep: &Separation,
    by_node: &HashMap<usize, usize>,
    sources: &[Terminal],
    target: &Terminal,
) -> (Vec<u32>, Vec<(u32, f64)>) {
    let arcs = graph.path_arcs(&sep.tree, target.node);
    let start = graph.path_nodes(&sep.tree, target.node)[0];
    let source = &sources[by_node[&start]];
    let mut key = Vec::with_capacity(arcs.len() + 2);
    key.push(start as u32);
    key.extend_from_slice(&arcs);
    key.push(target.node as u32);
    let mut parts = source.support.clone();
    for &a in &arcs {
        parts.extend_from_slice(graph.arc_support(a));
    }
    parts.extend_from_slice(&target.support);
    (key, merge_support(parts))
}

fn solve(
    graph: &PathGraph,
    sources: &[Terminal],
    targets: &[Terminal],
    opts: &ModulusOptions,
) -> Result<ModulusResult> {
    let cells = graph.cell_count();
    let p = opts.exponent;
    let src_nodes: HashSet<usize> = sources.iter().map(|t| t.node).collect();
    if targets.iter().any(|t| src_nodes.contains(&t.node)) {
        return Ok(ModulusResult::flagged(FamilyFlag::Degenerate, cells, p));
    }
    let by_node: HashMap<usize, usize> = sources.iter().enumerate().map(|(i, t)| (t.node, i)).collect();

    let mut active = ActiveSet::new(graph.cell_measure(), p, opts.relaxation);
    // seed with the geometric shortest path to every target
    let ones = vec![1.0; cells];
    let sep = separate(graph, &ones, sources, targets);
    if sep.totals.is_empty() {
        return Ok(ModulusResult::flagged(FamilyFlag::Empty, cells, p));
    }
    for &(_, ti) in &sep.totals {
        let (key, support) = tree_path(graph, &sep, &by_node, sources, &targets[ti]);
        active.push(key, support);
    }

    let mut inner_tol = opts.tol / 10.0;
    let mut sweeps = 0;
    let mut rounds = 0;
    let mut converged = false;
    let mut shortest;
    loop {
        rounds += 1;
        let (used, _) = active.solve(inner_tol, opts.max_sweeps);
        sweeps += used;
        let sep = separate(graph, &active.rho, sources, targets);
        shortest = sep.shortest;
        if shortest >= 1.0 - opts.tol {
            converged = true;
            break;
        }
        if rounds >= opts.max_rounds {
            break;
        }
        let mut added = 0;
        for &(total, ti) in &sep.totals {
            if total >= 1.0 - opts.tol || added >= opts.max_new_paths {
                break;
            }
            let (key, support) = tree_path(graph, &sep, &by_node, sources, &targets[ti]);
            if active.push(key, support) {
                added += 1;
            }
        }
        if added == 0 {
            // every violated path is already active: the inner solve is too loose
            if inner_tol < 1e-12 {
                break;
            }
            inner_tol /= 10.0;
        }
    }

    let scale = 1.0 / shortest;
    let values: Vec<f64> = active.rho.iter().map(|r| r * scale).collect();
    Ok(ModulusResult {
        modulus: active.objective() * scale.powf(p),
        lower_bound: active.dual(),
        certificate: shortest,
        flag: None,
        rounds,
        active_paths: active.rows.len(),
        sweeps,
        converged,
        density: Some(Density { values, exponent: p }),
    })
}

/// `f(Γ)` on the triangulated image: terminals become their image vertex sets.
pub fn pushforward_family(family: &PathFamily, map: &MapSpec, mesh: Arc<SurfaceMesh>) -> Result<PathFamily> {
    let grid = match &family.ambient {
        Ambient::Grid(g) => g,
        Ambient::Mesh(_) => {
            return Err(Error::InvalidFamily("pushforward needs a family on a parameter grid".into()));
        }
    };
    if mesh.grid() != grid {
        return Err(Error::MissingCorrespondence("mesh was not triangulated over the family's grid".into()));
    }
    if mesh.map() != Some(map) {
        return Err(Error::MissingCorrespondence("mesh was triangulated from a different map".into()));
    }
    let resolve = |sel: &Selector| -> Result<Selector> {
        let ids = mesh_vertices(&mesh, sel)?;
        if ids.is_empty() {
            return Err(Error::MissingCorrespondence(format!("no mesh vertices correspond to {sel:?}")));
        }
        Ok(Selector::Vertices { ids })
    };
    let source = resolve(&family.source)?;
    let target = resolve(&family.target)?;
    PathFamily::on_mesh(mesh, source, target)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowerModulusReport {
    pub mod_domain: f64,
    pub mod_image: f64,
    pub k_emp: f64,
    /// `mod Γ`.
    pub lhs: f64,
    /// `K_emp · mod f(Γ)`.
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub domain: ModulusResult,
    pub image: ModulusResult,
}

/// Checks `mod Γ ≤ K_emp · mod f(Γ) · (1 + tol)` with `Γ` on the parameter grid
/// and `f(Γ)` on the triangulated image (triangle areas as measure).
pub fn verify_lower_modulus(
    map: &MapSpec,
    form: &ConstantForm,
    family: &PathFamily,
    tol: f64,
) -> Result<LowerModulusReport> {
    let grid = match &family.ambient {
        Ambient::Grid(g) => g.clone(),
        Ambient::Mesh(_) => return Err(Error::InvalidFamily("the domain family must live on a grid".into())),
    };
    let scan = jetcalc::distortion_scan(map, form, &grid)?;
    if !scan.degenerate_points.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "map is not quasiregular on the grid: {} degenerate cells",
            scan.degenerate_points.len()
        )));
    }
    let n = family.dim() as f64;
    let domain = discrete_modulus(family, n, 1e-3)?;
    let mesh = Arc::new(surface::triangulate(map, &grid)?);
    let image_family = pushforward_family(family, map, mesh)?;
    let image = discrete_modulus(&image_family, n, 1e-3)?;
    let lhs = domain.modulus;
    let rhs = scan.ess_sup_k * image.modulus;
    Ok(LowerModulusReport {
        mod_domain: domain.modulus,
        mod_image: image.modulus,
        k_emp: scan.ess_sup_k,
        lhs,
        rhs,
        tolerance: tol,
        pass: lhs <= rhs * (1.0 + tol),
        domain,
        image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AxisBox;

    fn rect(w: f64, h: f64, nx: usize, ny: usize) -> GridDomain {
        GridDomain::new(AxisBox::new(vec![0.0, 0.0], vec![w, h]).unwrap(), vec![nx, ny], None).unwrap()
    }

    #[test]
    fn stencils_have_expected_sizes() {
        assert_eq!(stencil(2, 1).len(), 4);
        assert_eq!(stencil(2, 2).len(), 8);
        assert_eq!(stencil(3, 1).len(), 13);
    }

    #[test]
    fn crossing_lengths_sum_to_segment_length() {
        let g = rect(2.0, 1.0, 8, 4);
        for d in stencil(2, 3) {
            let seg = crossing(&g, &[2, 1], &d);
            let total: f64 = seg.iter().map(|s| s.1).sum();
            let exact = ((d[0] as f64 * 0.25).powi(2) + (d[1] as f64 * 0.25).powi(2)).sqrt();
            assert!((total - exact).abs() < 1e-14);
        }
        // a knight move crosses the start cell, two intermediate cells, and the end cell
        let seg = crossing(&g, &[2, 1], &[2, 1]);
        assert_eq!(seg.len(), 4);
        assert_eq!(seg[0].0 as usize, g.linear(&[2, 1]));
        assert_eq!(seg[3].0 as usize, g.linear(&[4, 2]));
    }

    #[test]
    fn selector_names_parse() {
        assert_eq!(Selector::parse("left-edge").unwrap(), Selector::Face { axis: 0, side: Side::Lo });
        assert_eq!(Selector::parse("circle r=1").unwrap(), Selector::Sphere { center: vec![], radius: 1.0 });
        assert!(Selector::parse("circle r=-1").is_err());
        let s: Selector = serde_json::from_str(r#"{"type":"face","axis":1,"side":"hi"}"#).unwrap();
        assert_eq!(s, Selector::Face { axis: 1, side: Side::Hi });
    }

    #[test]
    fn small_rectangle_modulus() {
        let fam = PathFamily::on_grid(
            rect(2.0, 1.0, 16, 8),
            Selector::parse("left-edge").unwrap(),
            Selector::parse("right-edge").unwrap(),
        )
        .unwrap();
        let r = discrete_modulus(&fam, 2.0, 1e-3).unwrap();
        assert!(r.converged);
        assert!((r.modulus - 0.5).abs() < 0.01, "{r:?}");
        assert!(r.lower_bound <= r.modulus + 1e-12);
    }

    #[test]
    fn overlapping_terminals_are_degenerate() {
        let g = rect(1.0, 1.0, 8, 8);
        let fam =
            PathFamily::on_grid(g, Selector::Cells { ids: vec![0, 1] }, Selector::Cells { ids: vec![1, 2] }).unwrap();
        let r = discrete_modulus(&fam, 2.0, 1e-3).unwrap();
        assert_eq!(r.flag, Some(FamilyFlag::Degenerate));
        assert_eq!(r.modulus, f64::INFINITY);
    }

    #[test]
    fn disconnected_terminals_give_empty_family() {
        // validated grids are connected, so build two components by hand
        let mut b = GraphBuilder::new(4, vec![1.0; 2]);
        b.add_arc(0, 1, &[(0, 1.0)]);
        b.add_arc(2, 3, &[(1, 1.0)]);
        let g = b.finish();
        let term = |node| vec![Terminal { node, support: Vec::new() }];
        let r = solve(&g, &term(0), &term(3), &ModulusOptions::new(2.0)).unwrap();
        assert_eq!(r.flag, Some(FamilyFlag::Empty));
        assert_eq!(r.modulus, 0.0);
    }

    #[test]
    fn exponent_must_exceed_one() {
        let fam = PathFamily::on_grid(
            rect(1.0, 1.0, 8, 8),
            Selector::parse("left-edge").unwrap(),
            Selector::parse("right-edge").unwrap(),
        )
        .unwrap();
        assert!(discrete_modulus(&fam, 1.0, 1e-3).is_err());
    }

    #[test]
    fn general_exponent_matches_rectangle_formula() {
        // mod_p of the side-to-side family of a w×h rectangle is h / w^{p−1}
        let fam = PathFamily::on_grid(
            rect(2.0, 1.0, 16, 8),
            Selector::parse("left-edge").unwrap(),
            Selector::parse("right-edge").unwrap(),
        )
        .unwrap();
        let r = discrete_modulus(&fam, 3.0, 1e-3).unwrap();
        assert!((r.modulus - 0.25).abs() < 0.25 * 0.01, "{r:?}");
    }
}
