mod common;

use common::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{LN_2, PI};
use thermalize::dynamics::{evolve_lindblad_dense, evolve_unitary, DecoherenceParams, TimeGrid};
use thermalize::hamiltonian::{build_hamiltonian, ChainConfig};
use thermalize::initial::{spin_coherent, BlochAngles};
use thermalize::observables::{
    concurrence, concurrence_of, single_site_entropy, trace_distance, von_neumann_entropy,
};
use thermalize::qcore::{expectation, partial_trace, DensityMatrix, Operator};
use thermalize::runner::mean_and_se;
use thermalize::spectra::{diagonalize, ratios_from_levels};
use thermalize::thermal::{canonical_energy, gibbs_weights};

fn seeded() -> impl Strategy<Value = ChaCha8Rng> {
    any::<u64>().prop_map(rng)
}

fn chain(n: usize, seed: u64) -> ChainConfig {
    ChainConfig {
        n_sites: n,
        seed,
        ..ChainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn concurrence_is_local_unitary_invariant(mut r in seeded()) {
        let rho = random_density(2, &mut r);
        let u = kron(&random_unitary_2(&mut r), &random_unitary_2(&mut r));
        let rotated = naive_matmul(&naive_matmul(&u, rho.elements()), &dagger(&u));
        let a = concurrence(&rho).unwrap().value;
        let b = concurrence_of(&rotated).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&a));
    }

    #[test]
    fn trace_distance_is_a_metric(mut r in seeded(), n in 1usize..4) {
        let a = random_density(n, &mut r);
        let b = random_density(n, &mut r);
        let c = random_density(n, &mut r);
        let ab = trace_distance(&a, &b).unwrap();
        prop_assert!(trace_distance(&a, &a).unwrap() < 1e-10);
        prop_assert!((ab - trace_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        let via_c = trace_distance(&a, &c).unwrap() + trace_distance(&c, &b).unwrap();
        prop_assert!(ab <= via_c + 1e-12);
    }

    #[test]
    fn entropy_bounds(mut r in seeded(), n in 2usize..6) {
        let psi = random_state(n, &mut r);
        for site in 1..=n {
            let s = single_site_entropy(&psi, site).unwrap();
            prop_assert!((-1e-14..=LN_2 + 1e-12).contains(&s));
        }
        let rho = random_density(2, &mut r);
        let s = von_neumann_entropy(&rho).unwrap();
        prop_assert!((-1e-14..=4f64.ln() + 1e-12).contains(&s));
        let theta = r.random_range(0.0..PI);
        let phi = r.random_range(0.0..2.0 * PI);
        let product = spin_coherent(BlochAngles::new(theta, phi).unwrap(), n).unwrap();
        prop_assert!(single_site_entropy(&product, 1).unwrap().abs() < 1e-10);
    }

    #[test]
    fn partial_trace_gives_valid_states(mut r in seeded(), n in 2usize..6, keep_mask in 1usize..32) {
        let keep: Vec<usize> = (1..=n).filter(|j| keep_mask >> (j - 1) & 1 == 1).collect();
        prop_assume!(!keep.is_empty());
        let rho = random_density(n, &mut r);
        let red = partial_trace(&rho, &keep).unwrap();
        prop_assert!((red.trace() - 1.0).abs() < 1e-12);
        let e = red.elements();
        prop_assert!(max_diff(e, &dagger(e)) < 1e-12);
        prop_assert!(red.eigenvalues().unwrap().iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn unitary_evolution_conserves_norm_and_energy(
        seed in 0u64..1000,
        theta in 0.0..PI,
        phi in 0.0..2.0 * PI,
        t in 0.0..600.0f64,
    ) {
        let cfg = chain(5, seed);
        let g = thermalize::hamiltonian::disorder_sample(&cfg, 0);
        let h = build_hamiltonian(&cfg, Some(&g)).unwrap();
        let spec = diagonalize(&h).unwrap();
        let psi0 = spin_coherent(BlochAngles::new(theta, phi).unwrap(), 5).unwrap();
        let states = evolve_unitary(&spec, &psi0, &TimeGrid::new(vec![t]).unwrap()).unwrap();
        let e0 = expectation(&h, &psi0).unwrap();
        prop_assert!((states[0].norm() - 1.0).abs() < 1e-12);
        prop_assert!((expectation(&h, &states[0]).unwrap() - e0).abs() < 1e-9);
    }

    #[test]
    fn gibbs_weights_and_energy_monotonicity(
        levels in prop::collection::vec(-50.0..50.0f64, 2..40),
        b1 in -3.0..3.0f64,
        db in 0.001..1.0f64,
    ) {
        let w = gibbs_weights(&levels, b1).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let u1 = canonical_energy(&levels, b1).unwrap();
        let u2 = canonical_energy(&levels, b1 + db).unwrap();
        prop_assert!(u2 <= u1 + 1e-9);
        let (lo, hi) = levels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| (a.min(e), b.max(e)));
        prop_assert!(u1 >= lo - 1e-9 && u1 <= hi + 1e-9);
    }

    #[test]
    fn time_grid_is_sorted_and_unique(ts in prop::collection::vec(0.0..1000.0f64, 1..30)) {
        let mut doubled = ts.clone();
        doubled.extend(ts.iter().copied());
        let g = TimeGrid::new(doubled).unwrap();
        prop_assert!(g.times().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ts.iter().all(|t| g.times().contains(t)));
    }

    #[test]
    fn spacing_ratios_lie_in_unit_interval(levels in prop::collection::vec(-100.0..100.0f64, 12..200)) {
        let stats = ratios_from_levels(&levels, 0.1).unwrap();
        prop_assert!(stats.ratios.iter().all(|r| (0.0..=1.0).contains(r)));
        prop_assert!((0.0..=1.0).contains(&stats.mean_r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dense_lindblad_keeps_a_valid_state(
        mut r in seeded(),
        t1 in 100.0..30000.0f64,
        ratio in 0.05..2.0f64,
    ) {
        let cfg = chain(3, 0);
        let h = build_hamiltonian(&cfg, None).unwrap();
        let rho0 = random_density(3, &mut r);
        let dec = DecoherenceParams::uniform(t1, ratio * t1);
        let grid = TimeGrid::uniform(300.0, 7).unwrap();
        for rho in evolve_lindblad_dense(&h, &rho0, &grid, &dec).unwrap() {
            prop_assert!((rho.trace() - 1.0).abs() < 1e-8);
            prop_assert!(max_diff(rho.elements(), &dagger(rho.elements())) < 1e-9);
            prop_assert!(rho.eigenvalues().unwrap().iter().all(|&x| x > -1e-7));
        }
    }

    #[test]
    fn purity_decreases_without_hamiltonian(mut r in seeded(), t2 in 50.0..5000.0f64) {
        let h = Operator::zero(2).unwrap();
        let psi = random_state(2, &mut r);
        let dec = DecoherenceParams::uniform(f64::INFINITY, t2);
        let grid = TimeGrid::uniform(400.0, 9).unwrap();
        let rhos = evolve_lindblad_dense(&h, &psi.to_density_matrix(), &grid, &dec).unwrap();
        for w in rhos.windows(2) {
            prop_assert!(w[1].purity() <= w[0].purity() + 1e-10);
        }
        let d = DensityMatrix::maximally_mixed(2).unwrap();
        let still = evolve_lindblad_dense(&h, &d, &grid, &dec).unwrap();
        prop_assert!(max_diff(still.last().unwrap().elements(), d.elements()) < 1e-10);
    }
}

#[test]
fn standard_error_scales_as_inverse_root_n() {
    let mut r = ChaCha8Rng::seed_from_u64(17);
    let draws: Vec<f64> = (0..40_000).map(|_| gaussian(&mut r)).collect();
    let (_, se_small, n_small) = mean_and_se(&draws[..400]);
    let (mean, se_large, n_large) = mean_and_se(&draws);
    assert_eq!((n_small, n_large), (400, 40_000));
    assert!((se_small / se_large - 10.0).abs() < 1.0);
    assert!((se_large - 1.0 / 200.0).abs() < 5e-4);
    assert!(mean.abs() < 4.0 * se_large);
    let (_, _, n) = mean_and_se(&[1.0, f64::NAN, 3.0]);
    assert_eq!(n, 2);
}

#[test]
fn hermitian_inputs_stay_hermitian() {
    let mut r = rng(1);
    let m = Array2::from_shape_fn((4, 4), |_| c(gaussian(&mut r), gaussian(&mut r)));
    let h = &m + &dagger(&m);
    let op = Operator::from_dense(2, h).unwrap();
    assert!(op.is_hermitian());
    let psi =
        thermalize::qcore::StateVector::normalized(2, Array1::from(vec![c(1.0, 0.0); 4])).unwrap();
    assert!(expectation(&op, &psi).is_ok());
}
