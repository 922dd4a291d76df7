//! Undirected simple graphs with per-vertex neighbor lists.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SheafError};

/// An undirected simple graph. Edges are stored as ordered pairs
/// `(min(i,j), max(i,j))`, sorted; the edge index into `edges` is the
/// canonical edge identifier used everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list. Rejects self-loops, duplicate
    /// edges (in either order), and out-of-range endpoints.
    pub fn new(vertex_count: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        if vertex_count == 0 {
            return Err(SheafError::InvalidGraph("vertex_count must be positive".into()));
        }
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(edge_list.len());
        for &(i, j) in edge_list {
            if i == j {
                return Err(SheafError::InvalidGraph(format!("self-loop at vertex {i}")));
            }
            if i >= vertex_count || j >= vertex_count {
                return Err(SheafError::InvalidGraph(format!(
                    "edge ({i},{j}) out of range for {vertex_count} vertices"
                )));
            }
            edges.push((i.min(j), i.max(j)));
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(SheafError::InvalidGraph("duplicate edge".into()));
        }
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Self { vertex_count, edges, adjacency })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as canonical `(tail, head)` pairs with `tail < head`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Index of the edge between `i` and `j`, if present.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    /// Number of connected components (isolated vertices count).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertex_count).collect();
        fn find(parent: &mut Vec<usize>, mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        for &(i, j) in &self.edges {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
            }
        }
        (0..self.vertex_count)
            .filter(|&v| find(&mut parent, v) == v)
            .count()
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }
}
