//! Triangulated image surfaces `f(Ω)` for planar parameter grids.
//!
//! Each kept grid cell contributes two flat triangles (diagonal from the
//! lower-left to the upper-right corner). The edge graph has `2^L − 1`
//! chordal subdivision points per mesh edge, arcs between consecutive points
//! of an edge, and straight arcs across each triangle between boundary nodes
//! that do not share an edge. Graph distances bound the intrinsic (length)
//! metric of the polyhedral surface from above.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::MultiIndex;
use crate::graph::{GraphBuilder, PathGraph};
use crate::grid::{AxisBox, GridDomain};
use crate::jetcalc::{self, MapSpec};
use crate::linalg;

/// Subdivision level used by [`triangulate`]: 3 points per mesh edge.
pub const DEFAULT_SUBDIVISION_LEVEL: u32 = 2;

const NONE: u32 = u32::MAX;

#[derive(Clone)]
pub struct SurfaceMesh {
    map: Option<MapSpec>,
    grid: GridDomain,
    level: u32,
    m: usize,
    /// Vertex positions, stride `m`.
    points: Vec<f64>,
    grid_index: Vec<[usize; 2]>,
    lookup: Vec<u32>,
    triangles: Vec<[usize; 3]>,
    tri_edges: Vec<[usize; 3]>,
    cell_tris: Vec<[u32; 2]>,
    areas: Vec<f64>,
    edges: Vec<[usize; 2]>,
    edge_tris: Vec<[u32; 2]>,
    boundary: Vec<bool>,
    graph: PathGraph,
}

impl fmt::Debug for SurfaceMesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SurfaceMesh")
            .field("vertices", &self.vertex_count())
            .field("triangles", &self.triangles.len())
            .field("level", &self.level)
            .field("graph_nodes", &self.graph.node_count())
            .finish()
    }
}

/// Image of the grid under `map`, with the default subdivision level.
pub fn triangulate(map: &MapSpec, grid: &GridDomain) -> Result<SurfaceMesh> {
    triangulate_with(map, grid, DEFAULT_SUBDIVISION_LEVEL)
}

pub fn triangulate_with(map: &MapSpec, grid: &GridDomain, level: u32) -> Result<SurfaceMesh> {
    if map.n() != 2 {
        return Err(Error::Unsupported(format!("surfaces need a planar parameter domain, map has n = {}", map.n())));
    }
    jetcalc::check_grid_in_domain(map, grid)?;
    let mut mesh = SurfaceMesh::from_fn(grid, level, |x| map.eval(x))?;
    mesh.map = Some(map.clone());
    Ok(mesh)
}

impl SurfaceMesh {
    /// Mesh whose vertex at parameter `x` sits at `point(x)`; lets callers use
    /// shifted or rescaled coordinates where the plain map would lose precision.
    pub fn from_fn<F>(grid: &GridDomain, level: u32, point: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        if grid.dim() != 2 {
            return Err(Error::Unsupported("surfaces need a planar parameter grid".into()));
        }
        if level > 6 {
            return Err(Error::InvalidArgument(format!("subdivision level {level} is too large")));
        }
        let (nx, ny) = (grid.resolution[0], grid.resolution[1]);
        let kept: Vec<bool> = (0..grid.cell_count()).map(|c| grid.is_kept(c)).collect();

        let mut lookup = vec![NONE; (nx + 1) * (ny + 1)];
        let mut grid_index = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                let touches = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().any(|&(di, dj)| {
                    let (ci, cj) = (i as i64 - di, j as i64 - dj);
                    ci >= 0
                        && cj >= 0
                        && (ci as usize) < nx
                        && (cj as usize) < ny
                        && kept[grid.linear(&[ci as usize, cj as usize])]
                });
                if touches {
                    lookup[j * (nx + 1) + i] = grid_index.len() as u32;
                    grid_index.push([i, j]);
                }
            }
        }
        let param = |ij: [usize; 2]| -> [f64; 2] {
            [grid.bbox.lo[0] + ij[0] as f64 * grid.spacing(0), grid.bbox.lo[1] + ij[1] as f64 * grid.spacing(1)]
        };
        let pts: Vec<Vec<f64>> = grid_index.par_iter().map(|&ij| point(&param(ij))).collect();
        let m = pts.first().map_or(0, |p| p.len());
        if m < 2 || pts.iter().any(|p| p.len() != m || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidMap("vertex images must be finite points of a common dimension ≥ 2".into()));
        }
        let points: Vec<f64> = pts.into_iter().flatten().collect();

        let vid = |i: usize, j: usize| lookup[j * (nx + 1) + i] as usize;
        let mut triangles = Vec::new();
        let mut tri_cell = Vec::new();
        let mut cell_tris = vec![[NONE; 2]; grid.cell_count()];
        for c in (0..grid.cell_count()).filter(|&c| kept[c]) {
            let idx = grid.multi(c);
            let (i, j) = (idx[0], idx[1]);
            let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
            cell_tris[c] = [triangles.len() as u32, triangles.len() as u32 + 1];
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
            tri_cell.extend([c, c]);
        }

        let pos = |v: usize| &points[v * m..(v + 1) * m];
        let mut areas = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let a = tri_area(pos(tri[0]), pos(tri[1]), pos(tri[2]));
            let longest = [(0, 1), (1, 2), (2, 0)]
                .iter()
                .map(|&(p, q)| linalg::dist(pos(tri[p]), pos(tri[q])))
                .fold(0.0, f64::max);
            if !(a > 1e-12 * longest * longest) {
                return Err(Error::DegenerateTriangle { cell: grid.multi(tri_cell[t]) });
            }
            areas.push(a);
        }

        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut edge_tris: Vec<[u32; 2]> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut te = [0usize; 3];
            for (k, &(p, q)) in [(0, 1), (1, 2), (2, 0)].iter().enumerate() {
                let (a, b) = (tri[p], tri[q]);
                let key = (a.min(b), a.max(b));
                let e = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push([a, b]);
                    edge_tris.push([NONE; 2]);
                    edges.len() - 1
                });
                if edge_tris[e][0] == NONE {
                    edge_tris[e][0] = t as u32;
                } else {
                    edge_tris[e][1] = t as u32;
                }
                te[k] = e;
            }
            tri_edges.push(te);
        }
        let nv = grid_index.len();
        let mut boundary = vec![false; nv];
        for (e, ends) in edges.iter().enumerate() {
            if edge_tris[e][1] == NONE {
                boundary[ends[0]] = true;
                boundary[ends[1]] = true;
            }
        }

        let mut mesh = SurfaceMesh {
            map: None,
            grid: grid.clone(),
            level,
            m,
            points,
            grid_index,
            lookup,
            triangles,
            tri_edges,
            cell_tris,
            areas,
            edges,
            edge_tris,
            boundary,
            graph: PathGraph::default(),
        };
        mesh.graph = mesh.build_graph();
        Ok(mesh)
    }

    fn build_graph(&self) -> PathGraph {
        let s = self.per_edge();
        let nv = self.vertex_count();
        let mut b = GraphBuilder::new(nv + s * self.edges.len(), self.areas.clone());
        for (e, ends) in self.edges.iter().enumerate() {
            let chain: Vec<usize> = std::iter::once(ends[0])
                .chain((0..s).map(|k| nv + e * s + k))
                .chain(std::iter::once(ends[1]))
                .collect();
            let seg = linalg::dist(self.vertex(ends[0]), self.vertex(ends[1])) / (s + 1) as f64;
            let [t0, t1] = self.edge_tris[e];
            let support: Vec<(u32, f64)> =
                if t1 == NONE { vec![(t0, seg)] } else { vec![(t0, 0.5 * seg), (t1, 0.5 * seg)] };
            for w in chain.windows(2) {
                b.add_arc(w[0], w[1], &support);
            }
        }
        for t in 0..self.triangles.len() {
            let nodes = self.triangle_nodes(t);
            for (i, &(a, ma)) in nodes.iter().enumerate() {
                let pa = self.node_point(a);
                for &(c, mc) in &nodes[i + 1..] {
                    if ma & mc == 0 {
                        let len = linalg::dist(&pa, &self.node_point(c));
                        b.add_arc(a, c, &[(t as u32, len)]);
                    }
                }
            }
        }
        b.finish()
    }

    /// Subdivision points per mesh edge.
    fn per_edge(&self) -> usize {
        (1usize << self.level) - 1
    }

    /// Boundary graph nodes of a triangle with a bit mask of the edges they lie on.
    fn triangle_nodes(&self, t: usize) -> Vec<(usize, u8)> {
        let tri = self.triangles[t];
        let s = self.per_edge();
        let nv = self.vertex_count();
        let mut out = vec![(tri[0], 0b101), (tri[1], 0b011), (tri[2], 0b110)];
        for (k, &e) in self.tri_edges[t].iter().enumerate() {
            out.extend((0..s).map(|i| (nv + e * s + i, 1u8 << k)));
        }
        out
    }

    pub fn map(&self) -> Option<&MapSpec> {
        self.map.as_ref()
    }

    pub fn grid(&self) -> &GridDomain {
        &self.grid
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn ambient_dim(&self) -> usize {
        self.m
    }

    pub fn graph(&self) -> &PathGraph {
        &self.graph
    }

    pub fn vertex_count(&self) -> usize {
        self.grid_index.len()
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.points[v * self.m..(v + 1) * self.m]
    }

    pub fn vertex_grid_index(&self, v: usize) -> [usize; 2] {
        self.grid_index[v]
    }

    pub fn vertex_at(&self, i: usize, j: usize) -> Option<usize> {
        let nx = self.grid.resolution[0];
        if i > nx || j > self.grid.resolution[1] {
            return None;
        }
        let v = self.lookup[j * (nx + 1) + i];
        (v != NONE).then_some(v as usize)
    }

    pub fn param(&self, v: usize) -> [f64; 2] {
        let ij = self.grid_index[v];
        [
            self.grid.bbox.lo[0] + ij[0] as f64 * self.grid.spacing(0),
            self.grid.bbox.lo[1] + ij[1] as f64 * self.grid.spacing(1),
        ]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }

    pub fn triangle_param_centroid(&self, t: usize) -> [f64; 2] {
        let tri = self.triangles[t];
        let p: Vec<[f64; 2]> = tri.iter().map(|&v| self.param(v)).collect();
        [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
    }

    pub fn node_point(&self, node: usize) -> Vec<f64> {
        let nv = self.vertex_count();
        if node < nv {
            return self.vertex(node).to_vec();
        }
        let s = self.per_edge();
        let (e, k) = ((node - nv) / s, (node - nv) % s);
        let w = (k + 1) as f64 / (s + 1) as f64;
        let [a, b] = self.edges[e];
        self.vertex(a).iter().zip(self.vertex(b)).map(|(x, y)| x + w * (y - x)).collect()
    }

    /// Triangle containing the parameter point and its barycentric weights.
    pub fn locate(&self, x: &[f64]) -> Result<(usize, [f64; 3])> {
        let g = &self.grid;
        if x.len() != 2 || !g.bbox.contains(x) {
            return Err(Error::InvalidArgument(format!("parameter point {x:?} lies outside the mesh grid")));
        }
        let mut idx = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..2 {
            let u = (x[a] - g.bbox.lo[a]) / g.spacing(a);
            let i = (u.floor().max(0.0) as usize).min(g.resolution[a] - 1);
            idx[a] = i;
            frac[a] = (u - i as f64).clamp(0.0, 1.0);
        }
        let [ta, tb] = self.cell_tris[g.linear(&idx)];
        if ta == NONE {
            return Err(Error::InvalidArgument(format!("parameter point {x:?} lies in a removed cell")));
        }
        let (s, t) = (frac[0], frac[1]);
        Ok(if s >= t { (ta as usize, [1.0 - s, s - t, t]) } else { (tb as usize, [1.0 - t, s, t - s]) })
    }

    fn bary_point(&self, t: usize, w: &[f64; 3]) -> Vec<f64> {
        let tri = self.triangles[t];
        (0..self.m)
            .map(|k| w[0] * self.vertex(tri[0])[k] + w[1] * self.vertex(tri[1])[k] + w[2] * self.vertex(tri[2])[k])
            .collect()
    }

    /// The point of the polyhedral surface over parameter `x`.
    pub fn surface_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (t, w) = self.locate(x)?;
        Ok(self.bary_point(t, &w))
    }

    /// Parameter values where the segment `a→b` crosses grid lines or cell diagonals.
    fn crossings(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let u = |p: &[f64], k: usize| (p[k] - g.bbox.lo[k]) / g.spacing(k);
        let (ua, ub) = ([u(a, 0), u(a, 1)], [u(b, 0), u(b, 1)]);
        let mut ts = vec![0.0, 1.0];
        let mut lines = |fa: f64, fb: f64| {
            let (lo, hi) = (fa.min(fb), fa.max(fb));
            let mut k = lo.ceil();
            while k <= hi {
                if fb != fa {
                    let t = (k - fa) / (fb - fa);
                    if t > 0.0 && t < 1.0 {
                        ts.push(t);
                    }
                }
                k += 1.0;
            }
        };
        lines(ua[0], ub[0]);
        lines(ua[1], ub[1]);
        lines(ua[0] - ua[1], ub[0] - ub[1]);
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        ts
    }

    /// Length of the surface image of a parameter polyline.
    pub fn polyline_length(&self, path: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for w in path.windows(2) {
            let ts = self.crossings(&w[0], &w[1]);
            let mut prev: Option<Vec<f64>> = None;
            for t in ts {
                let x: Vec<f64> = (0..2).map(|k| w[0][k] + t * (w[1][k] - w[0][k])).collect();
                let p = self.surface_point(&x)?;
                if let Some(q) = prev {
                    total += linalg::dist(&p, &q);
                }
                prev = Some(p);
            }
        }
        Ok(total)
    }

    /// Shortest path through the triangle strip crossed by the parameter segment
    /// `a→b`, optimising the crossing point on each shared edge. `None` when the
    /// segment passes through a vertex.
    fn strip_distance(&self, a: &[f64], b: &[f64], pa: &[f64], pb: &[f64]) -> Result<Option<f64>> {
        let ts = self.crossings(a, b);
        let at = |t: f64| -> Vec<f64> { (0..2).map(|k| a[k] + t * (b[k] - a[k])).collect() };
        let mut tris = Vec::new();
        let mut entry = Vec::new();
        for w in ts.windows(2) {
            let (t, _) = self.locate(&at(0.5 * (w[0] + w[1])))?;
            if tris.last() != Some(&t) {
                tris.push(t);
                entry.push(w[0]);
            }
        }
        let mut slots = vec![Slot::Fixed(pa.to_vec())];
        let mut param = vec![0.0];
        for (i, w) in tris.windows(2).enumerate() {
            let Some(&e) = self.tri_edges[w[0]].iter().find(|e| self.tri_edges[w[1]].contains(e)) else {
                return Ok(None);
            };
            let [v0, v1] = self.edges[e];
            // start at the crossing of the parameter segment itself
            let (q0, q1, x) = (self.param(v0), self.param(v1), at(entry[i + 1]));
            let d = [q1[0] - q0[0], q1[1] - q0[1]];
            let s = ((x[0] - q0[0]) * d[0] + (x[1] - q0[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
            slots.push(Slot::Slide(self.vertex(v0).to_vec(), self.vertex(v1).to_vec()));
            param.push(s.clamp(0.0, 1.0));
        }
        slots.push(Slot::Fixed(pb.to_vec()));
        param.push(0.0);
        Ok(Some(straighten_slots(&slots, param)))
    }

    /// Intrinsic distance between the surface points over parameters `a` and `b`:
    /// the shorter of a straight-strip geodesic and a straightened edge-graph route.
    pub fn point_distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let (ta, wa) = self.locate(a)?;
        let (tb, wb) = self.locate(b)?;
        let pa = self.bary_point(ta, &wa);
        let pb = self.bary_point(tb, &wb);
        if ta == tb {
            return Ok(linalg::dist(&pa, &pb));
        }
        let strip = self.strip_distance(a, b, &pa, &pb)?.unwrap_or(f64::INFINITY);
        let mut best = strip;

        let seeds: Vec<(usize, f64)> = self
            .triangle_nodes(ta)
            .into_iter()
            .map(|(node, _)| (node, linalg::dist(&pa, &self.node_point(node))))
            .collect();
        let exits: HashMap<usize, f64> = self
            .triangle_nodes(tb)
            .into_iter()
            .map(|(node, _)| (node, linalg::dist(&self.node_point(node), &pb)))
            .collect();
        let mut dist: HashMap<usize, f64> = HashMap::new();
        let mut pred: HashMap<usize, usize> = HashMap::new();
        let mut heap = BinaryHeap::new();
        for (node, d) in seeds {
            if d < *dist.get(&node).unwrap_or(&f64::INFINITY) {
                dist.insert(node, d);
                heap.push(HeapItem(d, node));
            }
        }
        let mut exit_node = None;
        while let Some(HeapItem(d, u)) = heap.pop() {
            if d >= best {
                break;
            }
            if d > dist[&u] {
                continue;
            }
            if let Some(exit) = exits.get(&u) {
                if d + exit < best {
                    best = d + exit;
                    exit_node = Some(u);
                }
            }
            for &(v, arc) in self.graph.neighbors(u) {
                let nd = d + self.graph.arc_len(arc);
                let v = v as usize;
                if nd < *dist.get(&v).unwrap_or(&f64::INFINITY) && nd < best {
                    dist.insert(v, nd);
                    pred.insert(v, u);
                    heap.push(HeapItem(nd, v));
                }
            }
        }
        if let Some(mut u) = exit_node {
            let mut nodes = vec![u];
            while let Some(&p) = pred.get(&u) {
                nodes.push(p);
                u = p;
            }
            nodes.reverse();
            let (mut slots, mut param) = self.node_slots(&nodes);
            slots.insert(0, Slot::Fixed(pa.clone()));
            param.insert(0, 0.0);
            slots.push(Slot::Fixed(pb.clone()));
            param.push(0.0);
            best = best.min(straighten_slots(&slots, param));
        }
        if best.is_finite() {
            Ok(best)
        } else {
            Err(Error::Disconnected { from: ta, to: tb })
        }
    }

    /// Graph nodes as fixed vertices or points sliding on their mesh edge.
    fn node_slots(&self, nodes: &[usize]) -> (Vec<Slot>, Vec<f64>) {
        let nv = self.vertex_count();
        let s = self.per_edge();
        nodes
            .iter()
            .map(|&u| {
                if u < nv {
                    (Slot::Fixed(self.vertex(u).to_vec()), 0.0)
                } else {
                    let [a, b] = self.edges[(u - nv) / s];
                    let t = ((u - nv) % s + 1) as f64 / (s + 1) as f64;
                    (Slot::Slide(self.vertex(a).to_vec(), self.vertex(b).to_vec()), t)
                }
            })
            .unzip()
    }

    /// Graph distances from a vertex to every node.
    pub fn distances_from(&self, v: usize) -> Vec<f64> {
        let w = self.graph.geometric_weights();
        self.graph.dijkstra(&w, &[(v, 0.0)], None).dist
    }

    pub fn nearest_vertex(&self, y: &[f64]) -> usize {
        (0..self.vertex_count())
            .min_by(|&a, &b| linalg::dist(self.vertex(a), y).total_cmp(&linalg::dist(self.vertex(b), y)))
            .expect("meshes have vertices")
    }

    /// Mesh as OFF text: a vertex list followed by the triangle list.
    pub fn to_off(&self) -> String {
        let mut out = format!("OFF\n{} {} 0\n", self.vertex_count(), self.triangles.len());
        for v in 0..self.vertex_count() {
            let coords: Vec<String> = self.vertex(v).iter().map(|x| x.to_string()).collect();
            out.push_str(&coords.join(" "));
            out.push('\n');
        }
        for t in &self.triangles {
            out.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct MeshJson {
            vertices: Vec<Vec<f64>>,
            params: Vec<[f64; 2]>,
            triangles: Vec<[usize; 3]>,
            areas: Vec<f64>,
        }
        let j = MeshJson {
            vertices: (0..self.vertex_count()).map(|v| self.vertex(v).to_vec()).collect(),
            params: (0..self.vertex_count()).map(|v| self.param(v)).collect(),
            triangles: self.triangles.clone(),
            areas: self.areas.clone(),
        };
        Ok(serde_json::to_string(&j)?)
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn tri_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let v: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    let uv: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    0.5 * (uu * vv - uv * uv).max(0.0).sqrt()
}

/// Raw edge-graph distance between two mesh vertices.
pub fn graph_distance(mesh: &SurfaceMesh, p: usize, q: usize) -> Result<f64> {
    Ok(graph_path(mesh, p, q)?.0)
}

fn graph_path(mesh: &SurfaceMesh, p: usize, q: usize) -> Result<(f64, Vec<usize>)> {
    if p >= mesh.vertex_count() || q >= mesh.vertex_count() {
        return Err(Error::InvalidArgument(format!("vertex index out of range ({p}, {q})")));
    }
    let w = mesh.graph.geometric_weights();
    let sp = mesh.graph.dijkstra(&w, &[(p, 0.0)], Some(q));
    if !sp.dist[q].is_finite() {
        return Err(Error::Disconnected { from: p, to: q });
    }
    Ok((sp.dist[q], mesh.graph.path_nodes(&sp, q)))
}

/// Intrinsic distance between two mesh vertices: the edge-graph shortest path,
/// then straightened by sliding each subdivision node along its mesh edge.
/// Every intermediate path lies on the surface, so the value stays an upper
/// bound and never exceeds [`graph_distance`].
pub fn intrinsic_distance(mesh: &SurfaceMesh, p: usize, q: usize) -> Result<f64> {
    let (d, nodes) = graph_path(mesh, p, q)?;
    Ok(straighten(mesh, &nodes).min(d))
}

fn straighten(mesh: &SurfaceMesh, nodes: &[usize]) -> f64 {
    let (slots, param) = mesh.node_slots(nodes);
    straighten_slots(&slots, param)
}

/// Minimiser over `t ∈ [0, 1]` of `|p − c(t)| + |c(t) − q|` with
/// `c(t) = a + t (b − a)`: rotating `q` about the line into the plane of `p`
/// makes the optimum the crossing of the straight line `p → q′`.
fn unfolded_crossing(a: &[f64], b: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let dd: f64 = d.iter().map(|x| x * x).sum();
    if !(dd > 0.0) {
        return 0.0;
    }
    let foot = |x: &[f64]| -> (f64, f64) {
        let t = x.iter().zip(a).zip(&d).map(|((xi, ai), di)| (xi - ai) * di).sum::<f64>() / dd;
        let h = x.iter().zip(a).zip(&d).map(|((xi, ai), di)| (xi - ai - t * di).powi(2)).sum::<f64>().sqrt();
        (t, h)
    };
    let (tp, hp) = foot(p);
    let (tq, hq) = foot(q);
    let t = if hp + hq > 0.0 { tp + (tq - tp) * hp / (hp + hq) } else { 0.5 * (tp + tq) };
    t.clamp(0.0, 1.0)
}

/// A path vertex: pinned, or free to slide along a segment.
enum Slot {
    Fixed(Vec<f64>),
    Slide(Vec<f64>, Vec<f64>),
}

/// Shortens the polyline through `slots` by golden-section coordinate descent
/// on the sliding positions; returns the final length.
fn straighten_slots(slots: &[Slot], mut param: Vec<f64>) -> f64 {
    let point = |i: usize, t: f64| -> Vec<f64> {
        match &slots[i] {
            Slot::Slide(a, b) => a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect(),
            Slot::Fixed(p) => p.clone(),
        }
    };
    let length = |param: &[f64]| -> f64 {
        (1..slots.len()).map(|i| linalg::dist(&point(i - 1, param[i - 1]), &point(i, param[i]))).sum()
    };
    let mut best = length(&param);
    for _sweep in 0..2000 {
        for i in 1..slots.len().saturating_sub(1) {
            let Slot::Slide(a, b) = &slots[i] else { continue };
            let prev = point(i - 1, param[i - 1]);
            let next = point(i + 1, param[i + 1]);
            param[i] = unfolded_crossing(a, b, &prev, &next);
        }
        let now = length(&param);
        let gain = best - now;
        best = now;
        if gain <= 1e-12 * best {
            break;
        }
    }
    best
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricDifferential {
    /// Extrapolated `lim_{r→0} d(f(x + r v), f(x)) / r`.
    pub value: f64,
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Ratios were not monotone in `r` beyond the noise threshold.
    pub warning: bool,
}

/// `[2h, h, h/2]` with `h` the smaller parameter spacing of the mesh. Radii
/// below the triangle size see a single flat facet, and the error then depends
/// on where `x` sits in it rather than decaying with `h`.
pub fn default_radii(mesh: &SurfaceMesh) -> Vec<f64> {
    let h = mesh.grid.spacing(0).min(mesh.grid.spacing(1));
    vec![2.0 * h, h, h / 2.0]
}

pub fn metric_differential(
    map: &MapSpec,
    mesh: &SurfaceMesh,
    x: &[f64],
    v: &[f64],
    radii: &[f64],
) -> Result<MetricDifferential> {
    if let Some(own) = mesh.map() {
        if own != map {
            return Err(Error::MissingCorrespondence("mesh was triangulated from a different map".into()));
        }
    }
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] < w[0])) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidArgument("radii must be positive and strictly decreasing (at least two)".into()));
    }
    let norm = linalg::norm(v);
    if !(norm > 0.0) || v.len() != 2 {
        return Err(Error::InvalidArgument("direction must be a nonzero planar vector".into()));
    }
    let v = [v[0] / norm, v[1] / norm];
    // near the boundary all radii shrink by a common factor to stay in the box
    let bbox = &mesh.grid.bbox;
    let reach = (0..2)
        .map(|a| match v[a] {
            d if d > 0.0 => (bbox.hi[a] - x[a]) / d,
            d if d < 0.0 => (bbox.lo[a] - x[a]) / d,
            _ => f64::INFINITY,
        })
        .fold(f64::INFINITY, f64::min);
    let scale = if reach < radii[0] { reach / radii[0] } else { 1.0 };
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("direction {v:?} leaves the mesh grid at {x:?}")));
    }
    let radii: Vec<f64> = radii.iter().map(|r| r * scale).collect();
    let mut ratios = Vec::with_capacity(radii.len());
    for &r in &radii {
        let y = [x[0] + r * v[0], x[1] + r * v[1]];
        ratios.push(mesh.point_distance(x, &y)? / r);
    }
    let (value, _) = linear_intercept(&radii, &ratios);
    // facets make the ratios wiggle by O(h) relative; 2% sits above that at
    // working resolutions and still flags genuine non-convergence
    let noise = 2e-2 * ratios.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    let diffs: Vec<f64> = ratios.windows(2).map(|w| w[1] - w[0]).filter(|d| d.abs() > noise).collect();
    let warning = diffs.iter().any(|d| *d > 0.0) && diffs.iter().any(|d| *d < 0.0);
    Ok(MetricDifferential { value, radii, ratios, warning })
}

/// Least-squares line `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_intercept(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// A seminorm on `R²` sampled at `θ_k = 2πk/N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seminorm2D {
    samples: Vec<f64>,
}

impl Seminorm2D {
    pub const MIN_SAMPLES: usize = 64;

    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < Self::MIN_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "a seminorm needs at least {} angular samples, got {}",
                Self::MIN_SAMPLES,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("seminorm samples must be finite and nonnegative".into()));
        }
        Ok(Seminorm2D { samples })
    }

    pub fn from_fn(count: usize, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        Self::new((0..count).map(|k| f(Self::direction(k, count))).collect())
    }

    pub fn direction(k: usize, count: usize) -> [f64; 2] {
        let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
        [th.cos(), th.sin()]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// `J = ωₙ·n / ∫_{S^{n−1}} md(v)^{−n}` by the periodic trapezoid rule; planar only.
pub fn jacobian_of_seminorm(s: &Seminorm2D, n: usize) -> Result<f64> {
    if n != 2 {
        return Err(Error::Unsupported(format!("seminorms are sampled on the circle, so n must be 2 (got {n})")));
    }
    if s.samples.contains(&0.0) {
        return Ok(0.0);
    }
    let count = s.samples.len() as f64;
    let integral: f64 = s.samples.iter().map(|v| v.powi(-2)).sum::<f64>() * 2.0 * std::f64::consts::PI / count;
    Ok(2.0 * std::f64::consts::PI / integral)
}

/// `md(f, x)` sampled in `count` directions.
pub fn sample_seminorm(
    map: &MapSpec,
    mesh: &SurfaceMesh,
    x: &[f64],
    count: usize,
    radii: &[f64],
) -> Result<(Seminorm2D, usize)> {
    let mut values = Vec::with_capacity(count);
    let mut warnings = 0;
    for k in 0..count {
        let md = metric_differential(map, mesh, x, &Seminorm2D::direction(k, count), radii)?;
        warnings += md.warning as usize;
        values.push(md.value.max(0.0));
    }
    Ok((Seminorm2D::new(values)?, warnings))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallMetric {
    Euclidean,
    Intrinsic,
}

/// Area of the part of the mesh inside a ball; triangles straddling the sphere
/// are split into 16 sub-triangles tested at their centroids.
pub fn ball_measure(mesh: &SurfaceMesh, center: &[f64], r: f64, metric: BallMetric) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("ball radius must be positive, got {r}")));
    }
    if center.len() != mesh.m {
        return Err(Error::DimensionMismatch {
            expected: format!("center in R^{}", mesh.m),
            got: format!("center in R^{}", center.len()),
        });
    }
    let vdist: Vec<f64> = match metric {
        BallMetric::Euclidean => (0..mesh.vertex_count()).map(|v| linalg::dist(mesh.vertex(v), center)).collect(),
        BallMetric::Intrinsic => {
            let c0 = mesh.nearest_vertex(center);
            let offset = linalg::dist(mesh.vertex(c0), center);
            let d = mesh.distances_from(c0);
            (0..mesh.vertex_count()).map(|v| offset + d[v]).collect()
        }
    };
    let parts: Vec<f64> = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| {
            let tri = mesh.triangles[t];
            let d = [vdist[tri[0]], vdist[tri[1]], vdist[tri[2]]];
            if d.iter().all(|&x| x <= r) {
                return mesh.areas[t];
            }
            let (a, b, c) = (mesh.vertex(tri[0]), mesh.vertex(tri[1]), mesh.vertex(tri[2]));
            if metric == BallMetric::Euclidean {
                // the whole triangle lies within its longest edge of any vertex
                let reach = linalg::dist(a, b).max(linalg::dist(b, c)).max(linalg::dist(c, a));
                if d.iter().all(|&x| x > r + reach) {
                    return 0.0;
                }
            }
            let mut inside = 0;
            for (u, w) in SUB_CENTROIDS {
                let dist = match metric {
                    BallMetric::Euclidean => {
                        let p: Vec<f64> = (0..mesh.m).map(|k| a[k] + u * (b[k] - a[k]) + w * (c[k] - a[k])).collect();
                        linalg::dist(&p, center)
                    }
                    BallMetric::Intrinsic => d[0] + u * (d[1] - d[0]) + w * (d[2] - d[0]),
                };
                if dist <= r {
                    inside += 1;
                }
            }
            mesh.areas[t] * inside as f64 / 16.0
        })
        .collect();
    Ok(parts.iter().sum())
}

/// Centroids of the 16 sub-triangles of the 4-per-edge split, in the
/// coordinates `a + u (b − a) + w (c − a)`.
const SUB_CENTROIDS: [(f64, f64); 16] = {
    let mut out = [(0.0, 0.0); 16];
    let mut k = 0;
    let mut i = 0;
    while i < 4 {
        let mut j = 0;
        while i + j < 4 {
            out[k] = ((3 * i + 1) as f64 / 12.0, (3 * j + 1) as f64 / 12.0);
            k += 1;
            if i + j < 3 {
                out[k] = ((3 * i + 2) as f64 / 12.0, (3 * j + 2) as f64 / 12.0);
                k += 1;
            }
            j += 1;
        }
        i += 1;
    }
    out
};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlcEstimate {
    /// Smallest `c` such that the sampled points of `B(center, r)` are joined
    /// inside `B(center, c r)`; not capped.
    pub c: f64,
    /// `c` exceeds the search cap.
    pub infinite: bool,
    pub samples: usize,
}

pub const LLC_CAP: f64 = 1e6;

/// LLC constant of the ball: graph nodes are added in order of distance from
/// the center and a union–find tracks when all sampled nodes of `B(center, r)`
/// become connected; the distance at that moment over `r` is `c`.
pub fn llc_constant(mesh: &SurfaceMesh, center: &[f64], r: f64) -> Result<LlcEstimate> {
    if !(r > 0.0) || center.len() != mesh.m {
        return Err(Error::InvalidArgument("llc needs a positive radius and a center in the ambient space".into()));
    }
    let graph = &mesh.graph;
    let nn = graph.node_count();
    let dist: Vec<f64> = (0..nn).map(|u| linalg::dist(&mesh.node_point(u), center)).collect();
    let mut order: Vec<usize> = (0..nn).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let samples = order.iter().take_while(|&&u| dist[u] <= r).count();
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "ball of radius {r} meets the mesh in {samples} sampled point(s); need at least 2"
        )));
    }
    let mut parent: Vec<usize> = (0..nn).collect();
    let mut weight = vec![0usize; nn];
    let mut added = vec![false; nn];
    fn find(parent: &mut [usize], mut u: usize) -> usize {
        while parent[u] != u {
            parent[u] = parent[parent[u]];
            u = parent[u];
        }
        u
    }
    for (rank, &u) in order.iter().enumerate() {
        added[u] = true;
        if rank < samples {
            weight[u] = 1;
        }
        for &(v, _) in graph.neighbors(u) {
            let v = v as usize;
            if !added[v] {
                continue;
            }
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[rv] = ru;
                weight[ru] += weight[rv];
            }
        }
        if rank + 1 >= samples {
            let root = find(&mut parent, order[0]);
            if weight[root] == samples {
                let c = dist[u] / r;
                return Ok(LlcEstimate { c, infinite: c > LLC_CAP, samples });
            }
        }
    }
    Ok(LlcEstimate { c: f64::INFINITY, infinite: true, samples })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Multiplicity {
    pub count: usize,
    pub roots: Vec<[f64; 2]>,
    /// A root sits on a cell boundary within tolerance (counted once).
    pub boundary: bool,
    /// The doubled-resolution recount disagrees.
    pub unstable: bool,
}

/// `#(f_I⁻¹(y) ∩ grid box)` for planar maps: cells whose boundary image winds
/// around `y` are polished with Newton's method, then de-duplicated.
pub fn projection_multiplicity(
    map: &MapSpec,
    index: &MultiIndex,
    y: &[f64],
    grid: &GridDomain,
) -> Result<Multiplicity> {
    if map.n() != 2 || index.len() != 2 || y.len() != 2 {
        return Err(Error::Unsupported("projection multiplicity is implemented for planar maps and pairs I".into()));
    }
    if index.indices().iter().any(|&i| i > map.m()) {
        return Err(Error::InvalidArgument(format!("multi-index {index} exceeds R^{}", map.m())));
    }
    jetcalc::check_grid_in_domain(map, grid)?;
    let (count, roots, boundary) = count_preimages(map, index, y, grid);
    let finer = GridDomain { resolution: grid.resolution.iter().map(|r| 2 * r).collect(), ..grid.clone() };
    let (again, _, _) = count_preimages(map, index, y, &finer);
    Ok(Multiplicity { count, roots, boundary, unstable: again != count })
}

fn count_preimages(map: &MapSpec, index: &MultiIndex, y: &[f64], grid: &GridDomain) -> (usize, Vec<[f64; 2]>, bool) {
    let rows = index.rows();
    let proj = |x: &[f64]| -> [f64; 2] {
        let v = map.eval(x);
        [v[rows[0]] - y[0], v[rows[1]] - y[1]]
    };
    let h = [grid.spacing(0), grid.spacing(1)];
    let lo = [grid.bbox.lo[0], grid.bbox.lo[1]];
    let per_side = 4;
    let candidates: Vec<[f64; 2]> = grid
        .kept_cells()
        .into_par_iter()
        .filter_map(|c| {
            let idx = grid.multi(c);
            let x0 = [lo[0] + idx[0] as f64 * h[0], lo[1] + idx[1] as f64 * h[1]];
            let mut loop_pts = Vec::with_capacity(4 * per_side);
            for side in 0..4 {
                for k in 0..per_side {
                    let s = k as f64 / per_side as f64;
                    let (u, w) = match side {
                        0 => (s, 0.0),
                        1 => (1.0, s),
                        2 => (1.0 - s, 1.0),
                        _ => (0.0, 1.0 - s),
                    };
                    loop_pts.push(proj(&[x0[0] + u * h[0], x0[1] + w * h[1]]));
                }
            }
            let mut turn = 0.0;
            for k in 0..loop_pts.len() {
                let a = loop_pts[k];
                let b = loop_pts[(k + 1) % loop_pts.len()];
                turn += (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
            }
            let winding = (turn / (2.0 * std::f64::consts::PI)).round() as i64;
            (winding != 0).then(|| [x0[0] + 0.5 * h[0], x0[1] + 0.5 * h[1]])
        })
        .collect();

    let mut roots: Vec<[f64; 2]> = Vec::new();
    let mut boundary = false;
    let tol = 1e-9 * (h[0] + h[1]);
    for start in candidates {
        let Some(root) = newton_root(map, &rows, y, start, grid) else { continue };
        if roots.iter().any(|r| (r[0] - root[0]).abs() + (r[1] - root[1]).abs() < 1e-6 * (h[0] + h[1])) {
            continue;
        }
        for a in 0..2 {
            let u = (root[a] - lo[a]) / h[a];
            if (u - u.round()).abs() * h[a] < tol {
                boundary = true;
            }
        }
        roots.push(root);
    }
    roots.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    (roots.len(), roots, boundary)
}

fn newton_root(map: &MapSpec, rows: &[usize], y: &[f64], start: [f64; 2], grid: &GridDomain) -> Option<[f64; 2]> {
    let mut x = start;
    let scale = 1.0 + y[0].abs() + y[1].abs();
    for _ in 0..60 {
        let v = map.eval(&x);
        let r = [v[rows[0]] - y[0], v[rows[1]] - y[1]];
        if r[0].abs() + r[1].abs() < 1e-13 * scale {
            return grid.bbox.contains(&x).then_some(x);
        }
        let df = map.analytic_jacobian(&x).unwrap_or_else(|| map.fd_jacobian(&x, jetcalc::default_step(&x)));
        let (a, b, c, d) = (df[(rows[0], 0)], df[(rows[0], 1)], df[(rows[1], 0)], df[(rows[1], 1)]);
        let det = a * d - b * c;
        if det == 0.0 {
            return None;
        }
        x = [x[0] - (d * r[0] - b * r[1]) / det, x[1] - (-c * r[0] + a * r[1]) / det];
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    let v = map.eval(&x);
    let ok = (v[rows[0]] - y[0]).abs() + (v[rows[1]] - y[1]).abs() < 1e-9 * scale;
    (ok && grid.bbox.contains(&x)).then_some(x)
}

/// `(r, value)` rows as CSV.
pub fn profile_csv(name: &str, rows: &[(f64, f64)]) -> Result<String> {
    crate::report::csv_string(
        &["r".to_string(), name.to_string()],
        rows.iter().map(|(r, v)| vec![r.to_string(), v.to_string()]),
    )
}

/// A parameter box as a grid with the given cells per axis.
pub fn param_grid(lo: [f64; 2], hi: [f64; 2], cells: [usize; 2]) -> Result<GridDomain> {
    GridDomain::new(AxisBox::new(lo.to_vec(), hi.to_vec())?, cells.to_vec(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn flat(cells: usize, level: u32) -> SurfaceMesh {
        let g = GridDomain::uniform(AxisBox::unit(2), cells).unwrap();
        let id = MapSpec::identity(AxisBox::unit(2)).unwrap();
        triangulate_with(&id, &g, level).unwrap()
    }

    #[test]
    fn sub_centroids_cover_the_triangle_evenly() {
        let (su, sw): (f64, f64) = SUB_CENTROIDS.iter().fold((0.0, 0.0), |a, c| (a.0 + c.0, a.1 + c.1));
        // centroid of the whole triangle is (1/3, 1/3)
        assert!((su / 16.0 - 1.0 / 3.0).abs() < 1e-15);
        assert!((sw / 16.0 - 1.0 / 3.0).abs() < 1e-15);
        assert!(SUB_CENTROIDS.iter().all(|&(u, w)| u > 0.0 && w > 0.0 && u + w < 1.0));
    }

    #[test]
    fn flat_mesh_structure() {
        let mesh = flat(4, 1);
        assert_eq!(mesh.vertex_count(), 25);
        assert_eq!(mesh.triangle_count(), 32);
        assert!((mesh.total_area() - 1.0).abs() < 1e-14);
        // edges: 20 horizontal, 20 vertical, 16 diagonal
        assert_eq!(mesh.edge_count(), 56);
        assert_eq!(mesh.graph().node_count(), 25 + 56);
        // 6 chain halves per edge... 2 arcs per edge plus 6 per triangle
        assert_eq!(mesh.graph().arc_count(), 2 * 56 + 6 * 32);
        for e in 0..mesh.edge_count() {
            let [a, b] = mesh.edge(e);
            let along: f64 = mesh
                .graph()
                .neighbors(a)
                .iter()
                .filter(|(v, _)| *v as usize == mesh.vertex_count() + e)
                .map(|(_, arc)| mesh.graph().arc_len(*arc))
                .sum();
            assert!((2.0 * along - linalg::dist(mesh.vertex(a), mesh.vertex(b))).abs() < 1e-15);
        }
    }

    #[test]
    fn locate_and_surface_points() {
        let mesh = flat(4, 1);
        for x in [[0.1, 0.05], [0.3, 0.9], [1.0, 1.0], [0.0, 0.0], [0.62, 0.61]] {
            let p = mesh.surface_point(&x).unwrap();
            assert!(linalg::dist(&p, &x) < 1e-15, "{x:?} -> {p:?}");
        }
        assert!(mesh.locate(&[1.1, 0.5]).is_err());
    }

    #[test]
    fn flat_distance_matches_euclidean() {
        let mesh = flat(16, 2);
        let p = mesh.vertex_at(0, 0).unwrap();
        let mut worst = 0.0_f64;
        for q in 0..mesh.vertex_count() {
            if q == p {
                continue;
            }
            let d = intrinsic_distance(&mesh, p, q).unwrap();
            let e = linalg::dist(mesh.vertex(p), mesh.vertex(q));
            assert!(d >= e - 1e-12);
            worst = worst.max(d / e - 1.0);
        }
        assert!(worst < 0.01, "worst relative excess {worst}");
    }

    #[test]
    fn point_distance_in_flat_mesh_is_exact_for_short_segments() {
        let mesh = flat(8, 1);
        let a = [0.31, 0.42];
        for k in 0..16 {
            let th = 2.0 * PI * k as f64 / 16.0;
            let b = [a[0] + 0.07 * th.cos(), a[1] + 0.07 * th.sin()];
            let d = mesh.point_distance(&a, &b).unwrap();
            assert!((d - 0.07).abs() < 1e-9, "{k}: {d}");
        }
    }

    #[test]
    fn seminorm_jacobian_examples() {
        let unit = Seminorm2D::from_fn(64, |v| linalg::norm(&v)).unwrap();
        assert!((jacobian_of_seminorm(&unit, 2).unwrap() - 1.0).abs() < 1e-12);
        let ellipse = Seminorm2D::from_fn(256, |v| ((2.0 * v[0]).powi(2) + (3.0 * v[1]).powi(2)).sqrt()).unwrap();
        assert!((jacobian_of_seminorm(&ellipse, 2).unwrap() - 6.0).abs() < 1e-9);
        let flat = Seminorm2D::from_fn(64, |v| if v[0].abs() < 1e-12 { 0.0 } else { v[0].abs() }).unwrap();
        assert_eq!(jacobian_of_seminorm(&flat, 2).unwrap(), 0.0);
        assert!(Seminorm2D::new(vec![1.0; 63]).is_err());
        assert!(jacobian_of_seminorm(&unit, 3).is_err());
    }

    #[test]
    fn flat_ball_measure_is_a_disk() {
        let mesh = flat(64, 1);
        let r = 0.2;
        let m = ball_measure(&mesh, &[0.5, 0.5], r, BallMetric::Euclidean).unwrap();
        assert!((m / (PI * r * r) - 1.0).abs() < 0.03, "{m}");
        let mi = ball_measure(&mesh, &[0.5, 0.5], r, BallMetric::Intrinsic).unwrap();
        assert!(mi <= m + 1e-12);
    }

    #[test]
    fn flat_llc_is_about_one() {
        let mesh = flat(32, 1);
        let c = mesh.vertex(mesh.vertex_at(16, 16).unwrap()).to_vec();
        let est = llc_constant(&mesh, &c, 0.2).unwrap();
        assert!(est.c <= 1.1 && !est.infinite, "{est:?}");
    }

    #[test]
    fn degenerate_triangles_are_reported() {
        let g = GridDomain::uniform(AxisBox::unit(2), 4).unwrap();
        let collapse = SurfaceMesh::from_fn(&g, 1, |x| vec![x[0], 0.0, 0.0]);
        assert!(matches!(collapse, Err(Error::DegenerateTriangle { .. })));
    }

    #[test]
    fn identity_projection_has_one_preimage() {
        let id = MapSpec::identity(AxisBox::unit(2)).unwrap();
        let g = GridDomain::uniform(AxisBox::unit(2), 8).unwrap();
        let idx = MultiIndex::new(vec![1, 2], 2).unwrap();
        let mult = projection_multiplicity(&id, &idx, &[0.3, 0.7], &g).unwrap();
        assert_eq!(mult.count, 1);
        assert!(!mult.unstable);
    }

    #[test]
    fn off_export_lists_vertices_and_triangles() {
        let mesh = flat(4, 1);
        let off = mesh.to_off();
        let mut lines = off.lines();
        assert_eq!(lines.next(), Some("OFF"));
        assert_eq!(lines.next(), Some("25 32 0"));
        assert_eq!(off.lines().count(), 2 + 25 + 32);
    }
}
