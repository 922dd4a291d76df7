//! JSON serialization of sheaves (with optional potentials) and CSV export
//! of diffusion traces.
//!
//! The sheaf document stores restriction maps row-major, keyed by `"i|a-b"`
//! where `a-b` is the canonical (sorted) edge label and `i` the endpoint the
//! map belongs to. Round trips are lossless at double precision.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SheafError};
use crate::graph::Graph;
use crate::potentials::{EdgePotential, PotentialSet};
use crate::sheaf::CellularSheaf;
use crate::diffusion::DiffusionTrace;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub pair: [usize; 2],
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SheafDoc {
    /// Per-vertex stalk dimensions.
    pub vertices: Vec<usize>,
    pub edges: Vec<EdgeDoc>,
    /// Row-major restriction matrices keyed by "i|a-b".
    pub restrictions: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potentials: Option<Vec<EdgePotential>>,
}

fn restriction_key(i: usize, a: usize, b: usize) -> String {
    format!("{i}|{a}-{b}")
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(SheafError::Config(format!("ragged or empty matrix for {key}")));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |r, c| rows[r][c]))
}

impl SheafDoc {
    pub fn from_sheaf(sheaf: &CellularSheaf, potentials: Option<&PotentialSet>) -> Self {
        let graph = sheaf.graph();
        let mut restrictions = BTreeMap::new();
        let mut edges = Vec::new();
        for (e, &(a, b)) in graph.edges().iter().enumerate() {
            edges.push(EdgeDoc { pair: [a, b], dim: sheaf.edge_dim(e) });
            restrictions.insert(restriction_key(a, a, b), matrix_rows(sheaf.restriction(a, e)));
            restrictions.insert(restriction_key(b, a, b), matrix_rows(sheaf.restriction(b, e)));
        }
        Self {
            vertices: sheaf.vertex_dims().to_vec(),
            edges,
            restrictions,
            potentials: potentials.map(|p| p.iter().cloned().collect()),
        }
    }

    pub fn to_sheaf(&self) -> Result<(CellularSheaf, Option<PotentialSet>)> {
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.pair[0], e.pair[1])).collect();
        let graph = Graph::new(self.vertices.len(), &pairs)?;
        // The document's edge order may differ from canonical order; re-index.
        let mut edge_dims = vec![0usize; graph.edge_count()];
        for e in &self.edges {
            let idx = graph
                .edge_index(e.pair[0], e.pair[1])
                .ok_or_else(|| SheafError::Config("edge doc mismatch".into()))?;
            edge_dims[idx] = e.dim;
        }
        let mut restrictions = Vec::with_capacity(graph.edge_count());
        for &(a, b) in graph.edges() {
            let tail_key = restriction_key(a, a, b);
            let head_key = restriction_key(b, a, b);
            let tail = self
                .restrictions
                .get(&tail_key)
                .ok_or_else(|| SheafError::Config(format!("missing restriction {tail_key}")))?;
            let head = self
                .restrictions
                .get(&head_key)
                .ok_or_else(|| SheafError::Config(format!("missing restriction {head_key}")))?;
            restrictions.push((rows_to_matrix(tail, &tail_key)?, rows_to_matrix(head, &head_key)?));
        }
        let sheaf = CellularSheaf::new(graph, self.vertices.clone(), edge_dims, restrictions)?;
        let potentials = match &self.potentials {
            Some(list) => Some(PotentialSet::new(list.clone())?),
            None => None,
        };
        Ok((sheaf, potentials))
    }
}

pub fn save_sheaf(
    path: &Path,
    sheaf: &CellularSheaf,
    potentials: Option<&PotentialSet>,
) -> Result<()> {
    let doc = SheafDoc::from_sheaf(sheaf, potentials);
    let json = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_sheaf(path: &Path) -> Result<(CellularSheaf, Option<PotentialSet>)> {
    let json = std::fs::read_to_string(path)?;
    let doc: SheafDoc = serde_json::from_str(&json)?;
    doc.to_sheaf()
}

/// Writes a trace as CSV with the canonical header.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &DiffusionTrace) -> Result<()> {
    writeln!(out, "tick,energy,alpha,beta,rel_error,iterate_norm")?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.tick, r.energy, r.alpha, r.beta, r.rel_error, r.iterate_norm
        )?;
    }
    Ok(())
}

pub fn save_trace_csv(path: &Path, trace: &DiffusionTrace) -> Result<()> {
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, trace)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{random_regular_graph, random_restriction_sheaf, uav_formation_sheaf};
    use nalgebra::DVector;

    #[test]
    fn sheaf_roundtrip_is_lossless() {
        let g = random_regular_graph(8, 3, 11).unwrap();
        let sheaf = random_restriction_sheaf(&g, 4, 1, 13).unwrap();
        let doc = SheafDoc::from_sheaf(&sheaf, None);
        let json = serde_json::to_string(&doc).unwrap();
        let back: SheafDoc = serde_json::from_str(&json).unwrap();
        let (sheaf2, pots2) = back.to_sheaf().unwrap();
        assert_eq!(sheaf, sheaf2);
        assert!(pots2.is_none());
    }

    #[test]
    fn roundtrip_with_potentials() {
        let d: [DVector<f64>; 4] = std::array::from_fn(|k| {
            DVector::from_vec(vec![k as f64, 1.0, -0.5])
        });
        let (sheaf, pots) = uav_formation_sheaf(&d).unwrap();
        let doc = SheafDoc::from_sheaf(&sheaf, Some(&pots));
        let json = serde_json::to_string_pretty(&doc).unwrap();
        let back: SheafDoc = serde_json::from_str(&json).unwrap();
        let (sheaf2, pots2) = back.to_sheaf().unwrap();
        assert_eq!(sheaf, sheaf2);
        assert_eq!(pots, pots2.unwrap());
    }
}
