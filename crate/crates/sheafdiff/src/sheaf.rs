//! Cellular sheaves over graphs: stalks, restriction maps, cochain spaces,
//! the coboundary operator, sheaf Laplacians, and global sections.
//!
//! Every edge carries a fixed orientation `(min(i,j), max(i,j))`; flattening
//! of cochains is defined by the vertex/edge offset maps stored on the sheaf.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SheafError};
use crate::graph::Graph;
use crate::potentials::PotentialSet;

/// A cellular sheaf: a graph with a Euclidean stalk on every vertex and
/// edge, and a restriction map for each incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct CellularSheaf {
    graph: Graph,
    vertex_dims: Vec<usize>,
    edge_dims: Vec<usize>,
    /// Per edge: restriction maps for the tail (smaller endpoint) and head.
    restrictions: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    vertex_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    total_vertex_dim: usize,
    total_edge_dim: usize,
}

impl CellularSheaf {
    /// Assembles a sheaf, checking that every incidence carries a map of the
    /// declared shape. `restrictions[e]` is `(tail map, head map)` for the
    /// canonically oriented edge `e`.
    pub fn new(
        graph: Graph,
        vertex_dims: Vec<usize>,
        edge_dims: Vec<usize>,
        restrictions: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        if vertex_dims.len() != graph.vertex_count() {
            return Err(SheafError::DimensionMismatch(format!(
                "{} vertex dims for {} vertices",
                vertex_dims.len(),
                graph.vertex_count()
            )));
        }
        if edge_dims.len() != graph.edge_count() || restrictions.len() != graph.edge_count() {
            return Err(SheafError::DimensionMismatch(format!(
                "{} edge dims / {} restriction pairs for {} edges",
                edge_dims.len(),
                restrictions.len(),
                graph.edge_count()
            )));
        }
        if vertex_dims.iter().any(|&d| d == 0) || edge_dims.iter().any(|&d| d == 0) {
            return Err(SheafError::DimensionMismatch("stalk dims must be positive".into()));
        }
        for (e, &(i, j)) in graph.edges().iter().enumerate() {
            let (tail, head) = &restrictions[e];
            if tail.nrows() != edge_dims[e] || tail.ncols() != vertex_dims[i] {
                return Err(SheafError::DimensionMismatch(format!(
                    "restriction {i}|{i}-{j} has shape {}x{}, expected {}x{}",
                    tail.nrows(),
                    tail.ncols(),
                    edge_dims[e],
                    vertex_dims[i]
                )));
            }
            if head.nrows() != edge_dims[e] || head.ncols() != vertex_dims[j] {
                return Err(SheafError::DimensionMismatch(format!(
                    "restriction {j}|{i}-{j} has shape {}x{}, expected {}x{}",
                    head.nrows(),
                    head.ncols(),
                    edge_dims[e],
                    vertex_dims[j]
                )));
            }
        }
        let mut vertex_offsets = Vec::with_capacity(vertex_dims.len());
        let mut acc = 0;
        for &d in &vertex_dims {
            vertex_offsets.push(acc);
            acc += d;
        }
        let total_vertex_dim = acc;
        let mut edge_offsets = Vec::with_capacity(edge_dims.len());
        let mut acc = 0;
        for &d in &edge_dims {
            edge_offsets.push(acc);
            acc += d;
        }
        let total_edge_dim = acc;
        Ok(Self {
            graph,
            vertex_dims,
            edge_dims,
            restrictions,
            vertex_offsets,
            edge_offsets,
            total_vertex_dim,
            total_edge_dim,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn vertex_dim(&self, i: usize) -> usize {
        self.vertex_dims[i]
    }

    pub fn edge_dim(&self, e: usize) -> usize {
        self.edge_dims[e]
    }

    pub fn vertex_dims(&self) -> &[usize] {
        &self.vertex_dims
    }

    pub fn edge_dims(&self) -> &[usize] {
        &self.edge_dims
    }

    pub fn total_vertex_dim(&self) -> usize {
        self.total_vertex_dim
    }

    pub fn total_edge_dim(&self) -> usize {
        self.total_edge_dim
    }

    pub fn vertex_offset(&self, i: usize) -> usize {
        self.vertex_offsets[i]
    }

    pub fn edge_offset(&self, e: usize) -> usize {
        self.edge_offsets[e]
    }

    /// Restriction map for endpoint `i` of edge `e`. Panics if `i` is not an
    /// endpoint of `e`.
    pub fn restriction(&self, i: usize, e: usize) -> &DMatrix<f64> {
        let (tail, head) = self.graph.edges()[e];
        if i == tail {
            &self.restrictions[e].0
        } else if i == head {
            &self.restrictions[e].1
        } else {
            panic!("vertex {i} is not an endpoint of edge {e}");
        }
    }

    /// Sign of vertex `i` in the canonical orientation of edge `e`:
    /// `+1` for the tail, `-1` for the head.
    pub fn orientation_sign(&self, i: usize, e: usize) -> f64 {
        let (tail, head) = self.graph.edges()[e];
        if i == tail {
            1.0
        } else if i == head {
            -1.0
        } else {
            panic!("vertex {i} is not an endpoint of edge {e}");
        }
    }

    fn check_cochain0(&self, x: &Cochain0) -> Result<()> {
        if x.blocks.len() != self.vertex_dims.len()
            || x.blocks
                .iter()
                .zip(&self.vertex_dims)
                .any(|(b, &d)| b.len() != d)
        {
            return Err(SheafError::DimensionMismatch(
                "0-cochain does not conform to vertex stalk dims".into(),
            ));
        }
        Ok(())
    }

    /// Applies the coboundary operator under the canonical orientation:
    /// `y_e = F_tail x_tail - F_head x_head`.
    pub fn coboundary_apply(&self, x: &Cochain0) -> Result<Cochain1> {
        self.coboundary_apply_oriented(x, None)
    }

    /// Coboundary under an explicit per-edge orientation: `flip[e] = true`
    /// swaps the roles of tail and head for edge `e` (negating the block).
    pub fn coboundary_apply_oriented(&self, x: &Cochain0, flip: Option<&[bool]>) -> Result<Cochain1> {
        self.check_cochain0(x)?;
        let mut blocks = Vec::with_capacity(self.graph.edge_count());
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let (tail, head) = &self.restrictions[e];
            let mut y = tail * &x.blocks[i];
            y.gemv(-1.0, head, &x.blocks[j], 1.0);
            if flip.map_or(false, |f| f[e]) {
                y.neg_mut();
            }
            blocks.push(y);
        }
        Ok(Cochain1 { blocks })
    }

    /// Dense matrix of the coboundary operator under the canonical
    /// orientation; block row `e` holds `+F_tail` / `-F_head`.
    pub fn coboundary_matrix(&self) -> DMatrix<f64> {
        self.coboundary_matrix_oriented(None)
    }

    pub fn coboundary_matrix_oriented(&self, flip: Option<&[bool]>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.total_edge_dim, self.total_vertex_dim);
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let sign = if flip.map_or(false, |f| f[e]) { -1.0 } else { 1.0 };
            let (tail, head) = &self.restrictions[e];
            let ro = self.edge_offsets[e];
            m.view_mut((ro, self.vertex_offsets[i]), (tail.nrows(), tail.ncols()))
                .copy_from(&(sign * tail));
            m.view_mut((ro, self.vertex_offsets[j]), (head.nrows(), head.ncols()))
                .copy_from(&(-sign * head));
        }
        m
    }

    /// The linear sheaf Laplacian `delta^T delta` as a dense symmetric PSD
    /// matrix. Independent of edge orientation.
    pub fn linear_laplacian(&self) -> DMatrix<f64> {
        let delta = self.coboundary_matrix();
        delta.transpose() * delta
    }

    /// Block `i` of the nonlinear Laplacian, reading stalk values through
    /// `value`. Shared by the global apply and the per-agent async update so
    /// both produce bit-identical arithmetic.
    pub(crate) fn local_block_with<'a, F>(
        &self,
        potentials: &PotentialSet,
        i: usize,
        value: F,
    ) -> Result<DVector<f64>>
    where
        F: Fn(usize) -> &'a DVector<f64>,
    {
        let mut edge_buf: Vec<DVector<f64>> =
            self.edge_dims.iter().map(|&d| DVector::zeros(d)).collect();
        let mut acc = DVector::zeros(self.vertex_dims[i]);
        self.local_block_buffered(potentials, i, value, &mut edge_buf, &mut acc)?;
        Ok(acc)
    }

    /// Allocation-free variant: `edge_buf` holds one scratch vector per edge
    /// (dims matching the edge stalks) and `acc` receives the block.
    pub(crate) fn local_block_buffered<'a, F>(
        &self,
        potentials: &PotentialSet,
        i: usize,
        value: F,
        edge_buf: &mut [DVector<f64>],
        acc: &mut DVector<f64>,
    ) -> Result<()>
    where
        F: Fn(usize) -> &'a DVector<f64>,
    {
        acc.fill(0.0);
        for &j in self.graph.neighbors(i) {
            let e = self
                .graph
                .edge_index(i, j)
                .expect("adjacency and edge list agree");
            let (tail_idx, _) = self.graph.edges()[e];
            let (tail, head) = &self.restrictions[e];
            // Edge value under the canonical orientation, independent of
            // which endpoint is doing the computing.
            let (xt, xh, own_is_tail) = if i == tail_idx {
                (value(i), value(j), true)
            } else {
                (value(j), value(i), false)
            };
            let y = &mut edge_buf[e];
            gemv_small(y, 1.0, tail, xt, false);
            gemv_small(y, -1.0, head, xh, true);
            potentials.get_checked(e)?.gradient_in_place(y);
            let (own_map, sign) = if own_is_tail { (tail, 1.0) } else { (head, -1.0) };
            gemv_tr_small(acc, sign, own_map, y);
        }
        Ok(())
    }

    /// Precomputed incidence rows for [`Self::local_block_visits`], one row
    /// per vertex, aligned with the sorted neighbor lists.
    pub(crate) fn incidence_table(&self) -> Vec<Vec<EdgeVisit>> {
        (0..self.graph.vertex_count())
            .map(|i| {
                self.graph
                    .neighbors(i)
                    .iter()
                    .enumerate()
                    .map(|(pos, &j)| {
                        let edge = self
                            .graph
                            .edge_index(i, j)
                            .expect("adjacency and edge list agree");
                        EdgeVisit { edge, nbr_pos: pos, own_is_tail: i == self.graph.edges()[edge].0 }
                    })
                    .collect()
            })
            .collect()
    }

    /// [`Self::local_block_buffered`] with the incidence lookups hoisted out:
    /// `visits` is this vertex's row of [`Self::incidence_table`] and `nbr`
    /// resolves a neighbor by its position in the sorted neighbor list. Kept
    /// arithmetically identical to the generic path.
    pub(crate) fn local_block_visits<'a, F>(
        &self,
        potentials: &PotentialSet,
        visits: &[EdgeVisit],
        own: &DVector<f64>,
        nbr: F,
        edge_buf: &mut [DVector<f64>],
        acc: &mut DVector<f64>,
    ) -> Result<()>
    where
        F: Fn(usize) -> &'a DVector<f64>,
    {
        acc.fill(0.0);
        for v in visits {
            let (tail, head) = &self.restrictions[v.edge];
            let (xt, xh) = if v.own_is_tail {
                (own, nbr(v.nbr_pos))
            } else {
                (nbr(v.nbr_pos), own)
            };
            let y = &mut edge_buf[v.edge];
            gemv_small(y, 1.0, tail, xt, false);
            gemv_small(y, -1.0, head, xh, true);
            potentials.get_checked(v.edge)?.gradient_in_place(y);
            let (own_map, sign) = if v.own_is_tail { (tail, 1.0) } else { (head, -1.0) };
            gemv_tr_small(acc, sign, own_map, y);
        }
        Ok(())
    }

    /// Applies the nonlinear sheaf Laplacian `delta^T (grad U) delta`, the
    /// gradient of the Dirichlet energy.
    pub fn nonlinear_laplacian_apply(
        &self,
        potentials: &PotentialSet,
        x: &Cochain0,
    ) -> Result<Cochain0> {
        self.check_cochain0(x)?;
        potentials.check_cover(self)?;
        let mut edge_buf: Vec<DVector<f64>> =
            self.edge_dims.iter().map(|&d| DVector::zeros(d)).collect();
        let mut blocks = Vec::with_capacity(x.blocks.len());
        for i in 0..self.graph.vertex_count() {
            let mut acc = DVector::zeros(self.vertex_dims[i]);
            self.local_block_buffered(potentials, i, |v| &x.blocks[v], &mut edge_buf, &mut acc)?;
            blocks.push(acc);
        }
        Ok(Cochain0 { blocks })
    }

    /// Block `i` of the nonlinear Laplacian from a local view: `x_local`
    /// must supply a stalk value for `i` and every neighbor (possibly stale).
    pub fn local_laplacian_block(
        &self,
        potentials: &PotentialSet,
        i: usize,
        x_local: &std::collections::HashMap<usize, DVector<f64>>,
    ) -> Result<DVector<f64>> {
        if !x_local.contains_key(&i) {
            return Err(SheafError::MissingNeighbor(i, i));
        }
        for &j in self.graph.neighbors(i) {
            if !x_local.contains_key(&j) {
                return Err(SheafError::MissingNeighbor(i, j));
            }
        }
        self.local_block_with(potentials, i, |v| &x_local[&v])
    }

    /// Orthonormal basis of the numerical kernel of the coboundary operator
    /// (the space of global sections), from the eigendecomposition of the
    /// linear Laplacian. Eigenvalues at or below `tol * lambda_max` count as
    /// zero.
    pub fn global_sections(&self, tol: f64) -> SectionBasis {
        let lap = self.linear_laplacian();
        let eig = lap.symmetric_eigen();
        let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = tol * lambda_max;
        let mut basis = Vec::new();
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= cutoff {
                let col = eig.eigenvectors.column(k).into_owned();
                basis.push(Cochain0::from_flat(self, &col));
            }
        }
        SectionBasis { basis, rank_tolerance: tol }
    }

    /// `(dim H^0, dim H^1)`: kernel dimension of the coboundary and
    /// `dim C^1 - rank`.
    pub fn cohomology_dims(&self, tol: f64) -> (usize, usize) {
        let h0 = self.global_sections(tol).dim();
        let rank = self.total_vertex_dim - h0;
        (h0, self.total_edge_dim - rank)
    }

    /// A fresh zero 0-cochain conforming to this sheaf.
    pub fn zero_cochain0(&self) -> Cochain0 {
        Cochain0 {
            blocks: self.vertex_dims.iter().map(|&d| DVector::zeros(d)).collect(),
        }
    }
}

/// One incident edge of a vertex: edge index, the neighbor's position in the
/// vertex's sorted neighbor list, and which endpoint the vertex is.
pub(crate) struct EdgeVisit {
    pub edge: usize,
    pub nbr_pos: usize,
    pub own_is_tail: bool,
}

/// `y = alpha * m * x` (or `y += ...` when `accumulate`) via explicit
/// column-major loops; the stalk dims here are tiny, so this beats the
/// generic BLAS-style dispatch in the per-tick hot path.
fn gemv_small(y: &mut DVector<f64>, alpha: f64, m: &DMatrix<f64>, x: &DVector<f64>, accumulate: bool) {
    let (rows, cols) = m.shape();
    let ms = m.as_slice();
    let ys = y.as_mut_slice();
    if !accumulate {
        ys.fill(0.0);
    }
    for (c, &xc) in x.as_slice().iter().enumerate().take(cols) {
        let axc = alpha * xc;
        let col = &ms[c * rows..(c + 1) * rows];
        for (yr, &mrc) in ys.iter_mut().zip(col) {
            *yr += mrc * axc;
        }
    }
}

/// `acc += alpha * m^T * y`, transposed counterpart of [`gemv_small`].
fn gemv_tr_small(acc: &mut DVector<f64>, alpha: f64, m: &DMatrix<f64>, y: &DVector<f64>) {
    let (rows, cols) = m.shape();
    let ms = m.as_slice();
    let ys = y.as_slice();
    for (c, ac) in acc.as_mut_slice().iter_mut().enumerate().take(cols) {
        let col = &ms[c * rows..(c + 1) * rows];
        let mut dot = 0.0;
        for (&mrc, &yr) in col.iter().zip(ys) {
            dot += mrc * yr;
        }
        *ac += alpha * dot;
    }
}

/// A 0-cochain: one stalk vector per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain0 {
    pub blocks: Vec<DVector<f64>>,
}

impl Cochain0 {
    pub fn new(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    pub fn from_flat(sheaf: &CellularSheaf, v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), sheaf.total_vertex_dim());
        let blocks = (0..sheaf.graph().vertex_count())
            .map(|i| v.rows(sheaf.vertex_offset(i), sheaf.vertex_dim(i)).into_owned())
            .collect();
        Self { blocks }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let total: usize = self.blocks.iter().map(|b| b.len()).sum();
        let mut out = DVector::zeros(total);
        let mut off = 0;
        for b in &self.blocks {
            out.rows_mut(off, b.len()).copy_from(b);
            off += b.len();
        }
        out
    }

    pub fn dot(&self, other: &Self) -> f64 {
        inner_product_c0(self, other).expect("conformant cochains")
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { blocks: self.blocks.iter().map(|b| b * c).collect() }
    }

    /// `self += c * other`, blockwise.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.axpy(c, b, 1.0);
        }
    }
}

/// A 1-cochain: one stalk vector per edge, in canonical edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain1 {
    pub blocks: Vec<DVector<f64>>,
}

impl Cochain1 {
    pub fn new(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let total: usize = self.blocks.iter().map(|b| b.len()).sum();
        let mut out = DVector::zeros(total);
        let mut off = 0;
        for b in &self.blocks {
            out.rows_mut(off, b.len()).copy_from(b);
            off += b.len();
        }
        out
    }

    pub fn dot(&self, other: &Self) -> f64 {
        inner_product_c1(self, other).expect("conformant cochains")
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// The cochain inner product: sum of per-block Euclidean inner products.
pub fn inner_product_c0(x: &Cochain0, y: &Cochain0) -> Result<f64> {
    if x.blocks.len() != y.blocks.len()
        || x.blocks.iter().zip(&y.blocks).any(|(a, b)| a.len() != b.len())
    {
        return Err(SheafError::DimensionMismatch("0-cochain shapes differ".into()));
    }
    Ok(x.blocks.iter().zip(&y.blocks).map(|(a, b)| a.dot(b)).sum())
}

pub fn inner_product_c1(x: &Cochain1, y: &Cochain1) -> Result<f64> {
    if x.blocks.len() != y.blocks.len()
        || x.blocks.iter().zip(&y.blocks).any(|(a, b)| a.len() != b.len())
    {
        return Err(SheafError::DimensionMismatch("1-cochain shapes differ".into()));
    }
    Ok(x.blocks.iter().zip(&y.blocks).map(|(a, b)| a.dot(b)).sum())
}

/// Orthonormal basis of the space of global sections.
#[derive(Debug, Clone)]
pub struct SectionBasis {
    basis: Vec<Cochain0>,
    rank_tolerance: f64,
}

impl SectionBasis {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn vectors(&self) -> &[Cochain0] {
        &self.basis
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    /// Orthogonal projection of `x` onto the span of the basis.
    pub fn project(&self, x: &Cochain0) -> Cochain0 {
        let mut out = Cochain0 {
            blocks: x.blocks.iter().map(|b| DVector::zeros(b.len())).collect(),
        };
        for v in &self.basis {
            out.axpy(x.dot(v), v);
        }
        out
    }
}

/// Default relative tolerance for numerical-kernel decisions.
pub const DEFAULT_KERNEL_TOL: f64 = 1e-10;
