use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use sheafdiff::generators::{erdos_renyi, random_restriction_sheaf};
use sheafdiff::potentials::dirichlet_energy;
use sheafdiff::{CellularSheaf, Cochain0, PotentialSet};

fn sheaf_from_seed(seed: u64) -> CellularSheaf {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    loop {
        let n = rng.gen_range(2..=8);
        let g = erdos_renyi(n, 0.6, rng.gen()).unwrap();
        if g.edge_count() == 0 {
            continue;
        }
        let vdim = rng.gen_range(1..=4);
        let edim = rng.gen_range(1..=vdim);
        return random_restriction_sheaf(&g, vdim, edim, rng.gen()).unwrap();
    }
}

fn state_from_seed(sheaf: &CellularSheaf, seed: u64) -> Cochain0 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Cochain0::new(
        sheaf
            .vertex_dims()
            .iter()
            .map(|&d| DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0)))
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Flipping edge orientations never changes the Laplacian.
    #[test]
    fn laplacian_is_orientation_invariant(seed in any::<u64>(), flip_bits in any::<u64>()) {
        let sheaf = sheaf_from_seed(seed);
        let m = sheaf.graph().edge_count();
        let flips: Vec<bool> = (0..m).map(|e| flip_bits >> (e % 64) & 1 == 1).collect();
        let delta = sheaf.coboundary_matrix();
        let flipped = sheaf.coboundary_matrix_oriented(Some(&flips));
        let lap = delta.transpose() * &delta;
        let lap_flipped = flipped.transpose() * &flipped;
        let diff = (&lap - &lap_flipped).abs().max();
        prop_assert!(diff <= 1e-12, "orientation changed Laplacian by {diff}");
    }

    /// The Laplacian quadratic form is nonnegative and equals twice the
    /// quadratic Dirichlet energy.
    #[test]
    fn laplacian_psd_and_energy_consistent(seed in any::<u64>(), xseed in any::<u64>()) {
        let sheaf = sheaf_from_seed(seed);
        let pots = PotentialSet::quadratic(&sheaf);
        let x = state_from_seed(&sheaf, xseed);
        let flat = x.flatten();
        let quad = (flat.transpose() * sheaf.linear_laplacian() * &flat)[(0, 0)];
        prop_assert!(quad >= -1e-10, "negative quadratic form {quad}");
        let energy = dirichlet_energy(&sheaf, &pots, &x).unwrap();
        prop_assert!((quad - 2.0 * energy).abs() <= 1e-9 * (1.0 + quad.abs()));
    }

    /// Matrix-form and blockwise coboundary application agree.
    #[test]
    fn coboundary_matrix_matches_apply(seed in any::<u64>(), xseed in any::<u64>()) {
        let sheaf = sheaf_from_seed(seed);
        let x = state_from_seed(&sheaf, xseed);
        let via_blocks = sheaf.coboundary_apply(&x).unwrap().flatten();
        let via_matrix = sheaf.coboundary_matrix() * x.flatten();
        prop_assert!((via_blocks - via_matrix).norm() <= 1e-12);
    }

    /// The nonlinear Laplacian of a quadratic potential set is the linear
    /// Laplacian.
    #[test]
    fn nonlinear_laplacian_specializes(seed in any::<u64>(), xseed in any::<u64>()) {
        let sheaf = sheaf_from_seed(seed);
        let pots = PotentialSet::quadratic(&sheaf);
        let x = state_from_seed(&sheaf, xseed);
        let nonlinear = sheaf.nonlinear_laplacian_apply(&pots, &x).unwrap().flatten();
        let linear = sheaf.linear_laplacian() * x.flatten();
        prop_assert!((nonlinear - linear).norm() <= 1e-10);
    }
}
