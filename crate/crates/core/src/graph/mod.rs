//! Atomistic graphs: radius neighbor lists, edge geometry on the tape,
//! spherical-harmonic edge embeddings and radial functions.

pub mod radial;
pub mod sh;

pub use radial::{radial_basis, RadialBasis, RadialKind, RadialMlp};
pub use sh::{edge_sh, SphericalHarmonicsOp};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::so3::O3;

/// Directed edge `dst ← src` with `vec = r_src − r_dst`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub dst: usize,
    pub src: usize,
    pub vec: [f64; 3],
    pub length: f64,
}

/// One or more disjoint molecular graphs sharing node numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomisticGraph {
    pub species: Vec<usize>,
    pub positions: Vec<[f64; 3]>,
    pub cutoff: f64,
    /// Sorted by `(dst, src)`.
    pub edges: Vec<Edge>,
    /// Graph id of each node; all zeros for a single graph.
    pub node_graph: Vec<usize>,
    pub graph_count: usize,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// All ordered pairs `(dst, src)` with `0 < ‖r_src − r_dst‖ ≤ cutoff`, sorted.
pub fn radius_graph(positions: &[[f64; 3]], cutoff: f64) -> Result<Vec<(usize, usize)>> {
    if positions.is_empty() {
        return Err(Error::Input("radius graph needs at least one atom".into()));
    }
    let mut edges = Vec::new();
    for (i, &pi) in positions.iter().enumerate() {
        for (j, &pj) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = norm(sub(pj, pi));
            if d == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "atoms {i} and {j} coincide at {pi:?}"
                )));
            }
            if d <= cutoff {
                edges.push((i, j));
            }
        }
    }
    Ok(edges)
}

impl AtomisticGraph {
    pub fn new(species: Vec<usize>, positions: Vec<[f64; 3]>, cutoff: f64) -> Result<Self> {
        if species.len() != positions.len() {
            return Err(Error::Input(format!(
                "{} species for {} positions",
                species.len(),
                positions.len()
            )));
        }
        let pairs = radius_graph(&positions, cutoff)?;
        let n = species.len();
        Self::with_edges(species, positions, cutoff, pairs, vec![0; n], 1)
    }

    /// Graph with an explicit edge list; edges are sorted here.
    pub fn with_edges(
        species: Vec<usize>,
        positions: Vec<[f64; 3]>,
        cutoff: f64,
        mut pairs: Vec<(usize, usize)>,
        node_graph: Vec<usize>,
        graph_count: usize,
    ) -> Result<Self> {
        pairs.sort_unstable();
        let mut edges = Vec::with_capacity(pairs.len());
        for (dst, src) in pairs {
            if dst == src || dst >= positions.len() || src >= positions.len() {
                return Err(Error::Input(format!("invalid edge {dst} <- {src}")));
            }
            let vec = sub(positions[src], positions[dst]);
            let length = norm(vec);
            if length == 0.0 {
                return Err(Error::DegenerateGeometry(format!("atoms {dst} and {src} coincide")));
            }
            edges.push(Edge { dst, src, vec, length });
        }
        Ok(Self {
            species,
            positions,
            cutoff,
            edges,
            node_graph,
            graph_count,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dst_index(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    pub fn src_index(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.src).collect()
    }

    /// Same edge list with recomputed geometry; used for finite differences
    /// where a neighbor list must stay fixed.
    pub fn with_positions(&self, positions: Vec<[f64; 3]>) -> Result<Self> {
        let pairs = self.edges.iter().map(|e| (e.dst, e.src)).collect();
        Self::with_edges(
            self.species.clone(),
            positions,
            self.cutoff,
            pairs,
            self.node_graph.clone(),
            self.graph_count,
        )
    }

    /// Positions mapped by `x ↦ g·x + t`, neighbor list rebuilt.
    pub fn transformed(&self, g: &O3, translation: [f64; 3]) -> Result<Self> {
        let positions: Vec<[f64; 3]> = self
            .positions
            .iter()
            .map(|&p| {
                let q = g.apply(p);
                [q[0] + translation[0], q[1] + translation[1], q[2] + translation[2]]
            })
            .collect();
        if self.graph_count == 1 {
            Self::new(self.species.clone(), positions, self.cutoff)
        } else {
            self.with_positions(positions)
        }
    }

    /// Nodes reordered so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut inverse = vec![0; perm.len()];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        let pairs = self.edges.iter().map(|e| (inverse[e.dst], inverse[e.src])).collect();
        Self::with_edges(
            perm.iter().map(|&i| self.species[i]).collect(),
            perm.iter().map(|&i| self.positions[i]).collect(),
            self.cutoff,
            pairs,
            perm.iter().map(|&i| self.node_graph[i]).collect(),
            self.graph_count,
        )
    }

    /// Disjoint union; edges never cross graphs.
    pub fn batch(graphs: &[&AtomisticGraph]) -> Result<Self> {
        let cutoff = graphs.first().map(|g| g.cutoff).unwrap_or(0.0);
        let (mut species, mut positions, mut pairs, mut node_graph) = (vec![], vec![], vec![], vec![]);
        let mut graph_count = 0;
        for g in graphs {
            let off = positions.len();
            species.extend_from_slice(&g.species);
            positions.extend_from_slice(&g.positions);
            pairs.extend(g.edges.iter().map(|e| (e.dst + off, e.src + off)));
            node_graph.extend(g.node_graph.iter().map(|&k| k + graph_count));
            graph_count += g.graph_count;
        }
        Self::with_edges(species, positions, cutoff, pairs, node_graph, graph_count)
    }

    pub fn positions_tensor(&self) -> Tensor {
        Tensor::from_vec(
            self.num_nodes(),
            3,
            self.positions.iter().flat_map(|p| p.iter().copied()).collect(),
        )
        .expect("N x 3")
    }

    /// Mean in-degree.
    pub fn average_degree(&self) -> f64 {
        self.num_edges() as f64 / self.num_nodes().max(1) as f64
    }

    /// Nodes with no incoming edge.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        let mut has = vec![false; self.num_nodes()];
        for e in &self.edges {
            has[e.dst] = true;
        }
        (0..self.num_nodes()).filter(|&i| !has[i]).collect()
    }
}

/// Edge vectors `r_src − r_dst` on the tape from an `N×3` positions slot.
pub fn edge_vectors<T: Real>(tape: &mut Tape<T>, graph: &AtomisticGraph, positions: Var) -> Result<Var> {
    let src = tape.gather_rows(positions, graph.src_index())?;
    let dst = tape.gather_rows(positions, graph.dst_index())?;
    tape.sub(src, dst)
}
