//! Spectral quantities of the linear sheaf Laplacian and the constants
//! governing convergence: lambda_max, lambda_2, sigma_2, the Lipschitz
//! constant K, and the global error-bound constant kappa.

use crate::error::{Result, SheafError};
use crate::potentials::{energy_minimum, PotentialSet};
use crate::sheaf::{CellularSheaf, Cochain0};

/// Default relative threshold below which eigenvalues count as zero.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-9;

/// Eigenvalue data of the linear sheaf Laplacian.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EigenSpectrum {
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    /// Smallest eigenvalue above `zero_threshold * lambda_max`; absent for
    /// an all-zero Laplacian.
    pub lambda_2: Option<f64>,
    /// sqrt(lambda_2): the smallest nonzero singular value of the coboundary.
    pub sigma_2: Option<f64>,
    pub zero_threshold: f64,
    /// Multiplicity of the numerically zero eigenvalues (= dim H^0).
    pub zero_multiplicity: usize,
}

/// Spectral constants of a coordination sheaf.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectralReport {
    pub spectrum: EigenSpectrum,
    /// Lipschitz constant K = K_max * lambda_max.
    pub lipschitz: f64,
    /// Error-bound constant kappa = 1 / (m * sigma_2); absent with lambda_2.
    pub kappa: Option<f64>,
    /// Global strong convexity m = min_e m_e.
    pub strong_convexity: f64,
}

/// Dense symmetric eigendecomposition of the linear Laplacian.
pub fn spectrum(sheaf: &CellularSheaf, zero_threshold: f64) -> EigenSpectrum {
    let lap = sheaf.linear_laplacian();
    let eig = lap.symmetric_eigen();
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0).max(0.0);
    let cutoff = zero_threshold * lambda_max;
    let zero_multiplicity = eigenvalues.iter().filter(|&&l| l <= cutoff).count();
    let lambda_2 = eigenvalues.iter().copied().find(|&l| l > cutoff);
    EigenSpectrum {
        eigenvalues,
        lambda_max,
        lambda_2,
        sigma_2: lambda_2.map(f64::sqrt),
        zero_threshold,
        zero_multiplicity,
    }
}

/// K = (max_e K_e) * lambda_max(L).
pub fn lipschitz_constant(spectrum: &EigenSpectrum, potentials: &PotentialSet) -> f64 {
    potentials.smoothness_max() * spectrum.lambda_max
}

/// kappa = 1 / (m * sigma_2(delta)).
pub fn eb_constant(spectrum: &EigenSpectrum, potentials: &PotentialSet) -> Result<f64> {
    let sigma_2 = spectrum.sigma_2.ok_or_else(|| {
        SheafError::Spectral("no nontrivial coboundary: lambda_2 undefined".into())
    })?;
    Ok(1.0 / (potentials.strong_convexity() * sigma_2))
}

/// Full report over a coordination sheaf.
pub fn spectral_report(
    sheaf: &CellularSheaf,
    potentials: &PotentialSet,
    zero_threshold: f64,
) -> SpectralReport {
    let spec = spectrum(sheaf, zero_threshold);
    let lipschitz = lipschitz_constant(&spec, potentials);
    let kappa = eb_constant(&spec, potentials).ok();
    SpectralReport {
        spectrum: spec,
        lipschitz,
        kappa,
        strong_convexity: potentials.strong_convexity(),
    }
}

/// Orthogonal projection of `x` onto the minimizer set
/// `delta^+ b + span(sections)` of a quadratic-family energy.
pub fn project_onto_minimizers(
    sheaf: &CellularSheaf,
    potentials: &PotentialSet,
    x: &Cochain0,
) -> Result<Cochain0> {
    let (_, minimizers) = energy_minimum(sheaf, potentials)?;
    Ok(minimizers.project(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::potentials::EdgePotential;
    use crate::sheaf::Cochain0;
    use nalgebra::{dvector, DMatrix};

    fn constant_sheaf_r1(graph: Graph) -> CellularSheaf {
        let n = graph.vertex_count();
        let m = graph.edge_count();
        let id = || (DMatrix::identity(1, 1), DMatrix::identity(1, 1));
        CellularSheaf::new(graph, vec![1; n], vec![1; m], (0..m).map(|_| id()).collect())
            .unwrap()
    }

    #[test]
    fn spectrum_of_single_edge() {
        let sheaf = constant_sheaf_r1(Graph::new(2, &[(0, 1)]).unwrap());
        let spec = spectrum(&sheaf, DEFAULT_ZERO_THRESHOLD);
        assert!((spec.lambda_max - 2.0).abs() < 1e-12);
        assert!((spec.lambda_2.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(spec.zero_multiplicity, 1);
    }

    #[test]
    fn spectrum_of_path_p3() {
        let sheaf = constant_sheaf_r1(Graph::new(3, &[(0, 1), (1, 2)]).unwrap());
        let spec = spectrum(&sheaf, DEFAULT_ZERO_THRESHOLD);
        let expect = [0.0, 1.0, 3.0];
        for (got, want) in spec.eigenvalues.iter().zip(expect) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_laplacian_has_no_lambda2() {
        let g = Graph::new(2, &[(0, 1)]).unwrap();
        let sheaf = CellularSheaf::new(
            g,
            vec![1, 1],
            vec![1],
            vec![(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1))],
        )
        .unwrap();
        let spec = spectrum(&sheaf, DEFAULT_ZERO_THRESHOLD);
        assert!(spec.lambda_2.is_none());
        let pots = PotentialSet::quadratic(&sheaf);
        assert!(eb_constant(&spec, &pots).is_err());
    }

    #[test]
    fn lipschitz_and_kappa_on_single_edge() {
        let sheaf = constant_sheaf_r1(Graph::new(2, &[(0, 1)]).unwrap());
        let pots = PotentialSet::quadratic(&sheaf);
        let spec = spectrum(&sheaf, DEFAULT_ZERO_THRESHOLD);
        assert!((lipschitz_constant(&spec, &pots) - 2.0).abs() < 1e-12);
        let kappa = eb_constant(&spec, &pots).unwrap();
        assert!((kappa - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);

        // Scaling K_e scales K; doubling m_e halves kappa.
        let scaled = PotentialSet::new(vec![EdgePotential::scaled_quadratic(3.0)]).unwrap();
        assert!((lipschitz_constant(&spec, &scaled) - 6.0).abs() < 1e-12);
        let doubled = PotentialSet::new(vec![EdgePotential::scaled_quadratic(2.0)]).unwrap();
        assert!((eb_constant(&spec, &doubled).unwrap() - kappa / 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_consensus_mean_for_constant_sheaf() {
        let sheaf = constant_sheaf_r1(Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap());
        let pots = PotentialSet::quadratic(&sheaf);
        let x = Cochain0::new(vec![dvector![1.0], dvector![2.0], dvector![6.0]]);
        let p = project_onto_minimizers(&sheaf, &pots, &x).unwrap();
        for b in &p.blocks {
            assert!((b[0] - 3.0).abs() < 1e-10);
        }
        // Residual orthogonality against the section basis.
        let residual = x.sub(&p);
        for v in sheaf.global_sections(1e-10).vectors() {
            assert!(residual.dot(v).abs() <= 1e-9);
        }
        // A section projects to itself.
        let s = Cochain0::new(vec![dvector![4.0], dvector![4.0], dvector![4.0]]);
        let ps = project_onto_minimizers(&sheaf, &pots, &s).unwrap();
        assert!(s.sub(&ps).norm() <= 1e-10);
    }
}
