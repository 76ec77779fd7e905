//! Sparse path graphs whose arcs cross weighted "cells".
//!
//! An arc carries a support list of `(cell, length)` pairs: the length of the
//! arc's segment inside each density cell. The same structure serves grid
//! cells (modulus on `Rⁿ`) and mesh triangles (modulus and intrinsic
//! distance on image surfaces).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub const NO_ARC: u32 = u32::MAX;

#[derive(Clone, Debug, Default)]
pub struct PathGraph {
    node_count: usize,
    ends: Vec<(u32, u32)>,
    len: Vec<f64>,
    support_off: Vec<u32>,
    support: Vec<(u32, f64)>,
    adj_off: Vec<u32>,
    adj: Vec<(u32, u32)>,
    cell_measure: Vec<f64>,
}

#[derive(Debug)]
pub struct GraphBuilder {
    g: PathGraph,
}

impl GraphBuilder {
    pub fn new(node_count: usize, cell_measure: Vec<f64>) -> Self {
        GraphBuilder { g: PathGraph { node_count, support_off: vec![0], cell_measure, ..Default::default() } }
    }

    /// Adds an undirected arc; its length is the sum of the support lengths.
    pub fn add_arc(&mut self, a: usize, b: usize, support: &[(u32, f64)]) -> u32 {
        let id = self.g.ends.len() as u32;
        self.g.ends.push((a as u32, b as u32));
        self.g.len.push(support.iter().map(|s| s.1).sum());
        self.g.support.extend_from_slice(support);
        self.g.support_off.push(self.g.support.len() as u32);
        id
    }

    pub fn add_nodes(&mut self, count: usize) -> usize {
        let first = self.g.node_count;
        self.g.node_count += count;
        first
    }

    pub fn finish(mut self) -> PathGraph {
        let n = self.g.node_count;
        let mut deg = vec![0u32; n + 1];
        for &(a, b) in &self.g.ends {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mut off = vec![0u32; n + 1];
        for i in 0..n {
            off[i + 1] = off[i] + deg[i];
        }
        let mut fill = off.clone();
        let mut adj = vec![(0u32, 0u32); off[n] as usize];
        for (id, &(a, b)) in self.g.ends.iter().enumerate() {
            adj[fill[a as usize] as usize] = (b, id as u32);
            fill[a as usize] += 1;
            adj[fill[b as usize] as usize] = (a, id as u32);
            fill[b as usize] += 1;
        }
        self.g.adj_off = off;
        self.g.adj = adj;
        self.g
    }
}

#[derive(Clone, Debug)]
pub struct ShortestPaths {
    pub dist: Vec<f64>,
    pub pred: Vec<u32>,
}

#[derive(PartialEq)]
struct Item(f64, u32);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (distance, node index)
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PathGraph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn arc_count(&self) -> usize {
        self.ends.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cell_measure.len()
    }

    pub fn cell_measure(&self) -> &[f64] {
        &self.cell_measure
    }

    pub fn arc_ends(&self, arc: u32) -> (usize, usize) {
        let (a, b) = self.ends[arc as usize];
        (a as usize, b as usize)
    }

    pub fn arc_len(&self, arc: u32) -> f64 {
        self.len[arc as usize]
    }

    pub fn arc_support(&self, arc: u32) -> &[(u32, f64)] {
        let i = arc as usize;
        &self.support[self.support_off[i] as usize..self.support_off[i + 1] as usize]
    }

    pub fn neighbors(&self, node: usize) -> &[(u32, u32)] {
        &self.adj[self.adj_off[node] as usize..self.adj_off[node + 1] as usize]
    }

    pub fn geometric_weights(&self) -> Vec<f64> {
        self.len.clone()
    }

    /// Arc weights `Σ ρ(cell)·length` for a cell density.
    pub fn weights(&self, rho: &[f64]) -> Vec<f64> {
        (0..self.arc_count())
            .map(|a| self.arc_support(a as u32).iter().map(|&(c, l)| rho[c as usize] * l).sum())
            .collect()
    }

    /// Multi-seed Dijkstra; ties broken by node index so the tree is reproducible.
    /// Stops early once `stop` is settled.
    pub fn dijkstra(&self, weights: &[f64], seeds: &[(usize, f64)], stop: Option<usize>) -> ShortestPaths {
        let mut dist = vec![f64::INFINITY; self.node_count];
        let mut pred = vec![NO_ARC; self.node_count];
        let mut done = vec![false; self.node_count];
        let mut heap = BinaryHeap::new();
        for &(s, d0) in seeds {
            if d0 < dist[s] {
                dist[s] = d0;
                heap.push(Item(d0, s as u32));
            }
        }
        while let Some(Item(d, u)) = heap.pop() {
            let u = u as usize;
            if done[u] || d > dist[u] {
                continue;
            }
            done[u] = true;
            if stop == Some(u) {
                break;
            }
            for &(v, arc) in self.neighbors(u) {
                let v = v as usize;
                let nd = d + weights[arc as usize];
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = arc;
                    heap.push(Item(nd, v as u32));
                }
            }
        }
        ShortestPaths { dist, pred }
    }

    /// Arcs of the tree path ending at `node`, listed from the seed outward.
    pub fn path_arcs(&self, sp: &ShortestPaths, mut node: usize) -> Vec<u32> {
        let mut arcs = Vec::new();
        while sp.pred[node] != NO_ARC {
            let arc = sp.pred[node];
            arcs.push(arc);
            let (a, b) = self.arc_ends(arc);
            node = if a == node { b } else { a };
        }
        arcs.reverse();
        arcs
    }

    /// Node sequence of the tree path ending at `node`.
    pub fn path_nodes(&self, sp: &ShortestPaths, mut node: usize) -> Vec<usize> {
        let mut nodes = vec![node];
        while sp.pred[node] != NO_ARC {
            let (a, b) = self.arc_ends(sp.pred[node]);
            node = if a == node { b } else { a };
            nodes.push(node);
        }
        nodes.reverse();
        nodes
    }
}

/// Merges `(cell, length)` lists, summing lengths per cell; output sorted by cell.
pub fn merge_support(mut parts: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    parts.sort_by_key(|p| p.0);
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(parts.len());
    for (c, l) in parts {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += l,
            _ => out.push((c, l)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_with_diagonal() -> PathGraph {
        // 0 - 1
        // |   |
        // 3 - 2   plus a long diagonal 0-2
        let mut b = GraphBuilder::new(4, vec![1.0; 2]);
        b.add_arc(0, 1, &[(0, 1.0)]);
        b.add_arc(1, 2, &[(0, 1.0)]);
        b.add_arc(2, 3, &[(1, 1.0)]);
        b.add_arc(3, 0, &[(1, 1.0)]);
        b.add_arc(0, 2, &[(0, 1.25), (1, 1.25)]);
        b.finish()
    }

    #[test]
    fn dijkstra_prefers_lower_index_on_ties() {
        let g = square_with_diagonal();
        let w = g.geometric_weights();
        let sp = g.dijkstra(&w, &[(0, 0.0)], None);
        assert_eq!(sp.dist, vec![0.0, 1.0, 2.0, 1.0]);
        // both 0-1-2 and 0-3-2 have length 2; node 1 settles before node 3
        assert_eq!(g.path_nodes(&sp, 2), vec![0, 1, 2]);
        assert_eq!(g.path_arcs(&sp, 2), vec![0, 1]);
    }

    #[test]
    fn density_weights_reroute_paths() {
        let g = square_with_diagonal();
        let w = g.weights(&[0.0, 1.0]);
        assert_eq!(w, vec![0.0, 0.0, 1.0, 1.0, 1.25]);
        let sp = g.dijkstra(&w, &[(3, 0.0)], None);
        assert_eq!(sp.dist[2], 1.0);
        assert_eq!(sp.dist[1], 1.0);
    }

    #[test]
    fn merge_support_sums_repeated_cells() {
        let m = merge_support(vec![(3, 1.0), (1, 0.5), (3, 0.25)]);
        assert_eq!(m, vec![(1, 0.5), (3, 1.25)]);
    }
}
