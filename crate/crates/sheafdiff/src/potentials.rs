//! Edge potential functions and the sheaf Dirichlet energy.
//!
//! Built-in potentials are the quadratic family: `(scale/2)||y||^2` and
//! `(scale/2)||y - b||^2`. Each potential exposes its strong-convexity and
//! smoothness constants so the convergence machinery never needs anything
//! beyond (value, gradient, m, K).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SheafError};
use crate::sheaf::{CellularSheaf, Cochain0, SectionBasis, DEFAULT_KERNEL_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    Quadratic,
    OffsetQuadratic { offset: Vec<f64> },
}

/// A strongly convex, smooth potential on one edge stalk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePotential {
    #[serde(flatten)]
    pub kind: PotentialKind,
    /// Multiplies the quadratic; equals both m_e and K_e.
    #[serde(default = "default_scale", skip_serializing_if = "is_unit_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

fn is_unit_scale(s: &f64) -> bool {
    *s == 1.0
}

impl EdgePotential {
    pub fn quadratic() -> Self {
        Self { kind: PotentialKind::Quadratic, scale: 1.0 }
    }

    pub fn offset_quadratic(offset: DVector<f64>) -> Self {
        Self {
            kind: PotentialKind::OffsetQuadratic { offset: offset.as_slice().to_vec() },
            scale: 1.0,
        }
    }

    pub fn scaled_quadratic(scale: f64) -> Self {
        Self { kind: PotentialKind::Quadratic, scale }
    }

    /// The minimizer of the potential in the edge stalk (the offset, or the
    /// origin for plain quadratics).
    pub fn minimizer(&self, dim: usize) -> DVector<f64> {
        match &self.kind {
            PotentialKind::Quadratic => DVector::zeros(dim),
            PotentialKind::OffsetQuadratic { offset } => DVector::from_column_slice(offset),
        }
    }

    fn check_shape(&self, y: &DVector<f64>) -> Result<()> {
        if let PotentialKind::OffsetQuadratic { offset } = &self.kind {
            if offset.len() != y.len() {
                return Err(SheafError::DimensionMismatch(format!(
                    "potential offset has dim {}, edge value has dim {}",
                    offset.len(),
                    y.len()
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, y: &DVector<f64>) -> Result<f64> {
        self.check_shape(y)?;
        let v = match &self.kind {
            PotentialKind::Quadratic => 0.5 * y.norm_squared(),
            PotentialKind::OffsetQuadratic { offset } => {
                let b = DVector::from_column_slice(offset);
                0.5 * (y - b).norm_squared()
            }
        };
        Ok(self.scale * v)
    }

    pub fn gradient(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_shape(y)?;
        let mut g = y.clone();
        self.gradient_in_place(&mut g);
        Ok(g)
    }

    /// Overwrites `y` with the gradient at `y`, avoiding allocation on the
    /// simulator's hot path.
    pub fn gradient_in_place(&self, y: &mut DVector<f64>) {
        if let PotentialKind::OffsetQuadratic { offset } = &self.kind {
            for (v, b) in y.iter_mut().zip(offset) {
                *v -= *b;
            }
        }
        *y *= self.scale;
    }

    /// Strong-convexity constant m_e.
    pub fn strong_convexity(&self) -> f64 {
        self.scale
    }

    /// Smoothness constant K_e.
    pub fn smoothness(&self) -> f64 {
        self.scale
    }
}

/// One potential per edge, in canonical edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSet {
    potentials: Vec<EdgePotential>,
}

impl PotentialSet {
    pub fn new(potentials: Vec<EdgePotential>) -> Result<Self> {
        if potentials.is_empty() {
            return Err(SheafError::Config("potential set covers no edges".into()));
        }
        if potentials.iter().any(|p| p.scale <= 0.0) {
            return Err(SheafError::Config("potential scale must be positive".into()));
        }
        Ok(Self { potentials })
    }

    /// Plain quadratic potentials on every edge of the sheaf.
    pub fn quadratic(sheaf: &CellularSheaf) -> Self {
        Self {
            potentials: vec![EdgePotential::quadratic(); sheaf.graph().edge_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.potentials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potentials.is_empty()
    }

    pub fn get(&self, e: usize) -> &EdgePotential {
        &self.potentials[e]
    }

    pub(crate) fn get_checked(&self, e: usize) -> Result<&EdgePotential> {
        self.potentials.get(e).ok_or(SheafError::MissingPotential(e, e))
    }

    pub fn iter(&self) -> impl Iterator<Item = &EdgePotential> {
        self.potentials.iter()
    }

    pub(crate) fn check_cover(&self, sheaf: &CellularSheaf) -> Result<()> {
        if self.potentials.len() != sheaf.graph().edge_count() {
            let missing = self.potentials.len().min(sheaf.graph().edge_count());
            let (i, j) = sheaf
                .graph()
                .edges()
                .get(missing)
                .copied()
                .unwrap_or((0, 0));
            return Err(SheafError::MissingPotential(i, j));
        }
        Ok(())
    }

    pub fn gradient(&self, e: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.potentials
            .get(e)
            .ok_or(SheafError::MissingPotential(e, e))?
            .gradient(y)
    }

    /// Global strong-convexity constant m = min_e m_e.
    pub fn strong_convexity(&self) -> f64 {
        self.potentials
            .iter()
            .map(|p| p.strong_convexity())
            .fold(f64::INFINITY, f64::min)
    }

    /// K_max = max_e K_e.
    pub fn smoothness_max(&self) -> f64 {
        self.potentials.iter().map(|p| p.smoothness()).fold(0.0, f64::max)
    }

    /// The stacked per-edge minimizers `b` as a flat vector in C^1.
    pub fn stacked_offset(&self, sheaf: &CellularSheaf) -> DVector<f64> {
        let mut b = DVector::zeros(sheaf.total_edge_dim());
        for e in 0..sheaf.graph().edge_count() {
            let m = self.potentials[e].minimizer(sheaf.edge_dim(e));
            b.rows_mut(sheaf.edge_offset(e), sheaf.edge_dim(e)).copy_from(&m);
        }
        b
    }

    fn uniform_unit_scale(&self) -> bool {
        self.potentials.iter().all(|p| p.scale == 1.0)
    }
}

/// The Dirichlet energy `f(x) = sum_e U_e((delta x)_e)`.
pub fn dirichlet_energy(
    sheaf: &CellularSheaf,
    potentials: &PotentialSet,
    x: &Cochain0,
) -> Result<f64> {
    potentials.check_cover(sheaf)?;
    let y = sheaf.coboundary_apply(x)?;
    let mut total = 0.0;
    for (e, block) in y.blocks.iter().enumerate() {
        total += potentials.get(e).value(block)?;
    }
    Ok(total)
}

/// The affine minimizer set of a quadratic-family Dirichlet energy:
/// `delta^+ b + span(sections)`.
#[derive(Debug, Clone)]
pub struct MinimizerSet {
    /// The particular solution `delta^+ b`.
    pub base: Cochain0,
    pub sections: SectionBasis,
    /// True when the stacked offset b lies outside the image of the
    /// coboundary; minimizers are then a least-squares characterization.
    pub offset_outside_image: bool,
}

impl MinimizerSet {
    /// Nearest point of the minimizer set to `x`.
    pub fn project(&self, x: &Cochain0) -> Cochain0 {
        let shifted = x.sub(&self.base);
        self.base.add(&self.sections.project(&shifted))
    }
}

/// Minimum energy value and the affine minimizer set, for quadratic-family
/// potentials. `f* = (1/2)||(I - delta delta^+) b||^2`.
pub fn energy_minimum(
    sheaf: &CellularSheaf,
    potentials: &PotentialSet,
) -> Result<(f64, MinimizerSet)> {
    potentials.check_cover(sheaf)?;
    let b = potentials.stacked_offset(sheaf);
    let all_quadratic = potentials
        .iter()
        .all(|p| matches!(p.kind, PotentialKind::Quadratic));
    if !all_quadratic && !potentials.uniform_unit_scale() {
        return Err(SheafError::Config(
            "energy_minimum supports scaled potentials only without offsets".into(),
        ));
    }
    let sections = sheaf.global_sections(DEFAULT_KERNEL_TOL);
    if all_quadratic {
        return Ok((
            0.0,
            MinimizerSet {
                base: sheaf.zero_cochain0(),
                sections,
                offset_outside_image: false,
            },
        ));
    }
    let delta = sheaf.coboundary_matrix();
    let svd = delta.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let pinv = svd
        .pseudo_inverse(DEFAULT_KERNEL_TOL * sigma_max)
        .map_err(|e| SheafError::Spectral(e.to_string()))?;
    let particular = &pinv * &b;
    let residual = &b - delta * &particular;
    let f_star = 0.5 * residual.norm_squared();
    let outside = f_star > (DEFAULT_KERNEL_TOL * (1.0 + b.norm_squared())).max(1e-18);
    Ok((
        f_star,
        MinimizerSet {
            base: Cochain0::from_flat(sheaf, &particular),
            sections,
            offset_outside_image: outside,
        },
    ))
}

/// Convenience: potentials serialized next to a sheaf document.
pub fn offsets_as_matrix(offset: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(offset.len(), 1, offset.as_slice())
}
