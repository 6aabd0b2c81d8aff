//! Oracle comparisons shared by the oracle tests and the acceptance run.

use super::*;
use ndarray::{Array1, Array2};
use std::f64::consts::PI;
use thermalize::dynamics::{
    evolve_lindblad_dense, evolve_unitary, unravel, DecoherenceParams, TimeGrid, UnravelOptions,
};
use thermalize::hamiltonian::{build_hamiltonian, ChainConfig};
use thermalize::initial::{spin_coherent, BlochAngles};
use thermalize::observables::two_site_reduced;
use thermalize::qcore::{expectation, partial_trace, pauli_string, Axis, StateVector};
use thermalize::spectra::{diagonalize, free_fermion_spectrum};
use thermalize::{linalg, C64};

/// Largest deviation of partial traces and Pauli expectations from
/// index-loop sums over random states of 1 to 5 sites.
pub fn brute_force_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for n in 1..=5 {
        let rho = random_density(n, &mut r);
        let psi = random_state(n, &mut r);
        let keeps: Vec<Vec<usize>> = match n {
            1 => vec![vec![1]],
            2 => vec![vec![1], vec![2], vec![1, 2]],
            _ => vec![vec![1], vec![n], vec![2, 3], vec![1, n], vec![1, 2, n]],
        };
        for keep in &keeps {
            let got = partial_trace(&rho, keep).unwrap();
            worst = worst.max(max_diff(
                got.elements(),
                &brute_partial_trace(rho.elements(), n, keep),
            ));
            let got = partial_trace(&psi, keep).unwrap();
            worst = worst.max(max_diff(
                got.elements(),
                &brute_partial_trace(&outer(&psi), n, keep),
            ));
        }
        for site in 1..=n {
            for (axis, m) in [
                (Axis::X, pauli_x()),
                (Axis::Y, pauli_y()),
                (Axis::Z, pauli_z()),
            ] {
                let op = pauli_string(n, &[(site, axis)]).unwrap();
                let full = embed(&m, site, n);
                let a = psi.amplitudes();
                let want: C64 = a
                    .iter()
                    .zip(naive_matvec(&full, a).iter())
                    .map(|(x, y)| x.conj() * y)
                    .sum();
                worst = worst.max((expectation(&op, &psi).unwrap() - want.re).abs());
                let prod = naive_matmul(rho.elements(), &full);
                let want: C64 = (0..1 << n).map(|i| prod[[i, i]]).sum();
                worst = worst.max((expectation(&op, &rho).unwrap() - want.re).abs());
            }
        }
    }
    worst
}

fn rk4(h: &Array2<C64>, psi0: &Array1<C64>, t: f64, steps: usize) -> Array1<C64> {
    let dt = t / steps as f64;
    let f = |x: &Array1<C64>| naive_matvec(h, x).mapv(|z| z * c(0.0, -1.0));
    let mut x = psi0.clone();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1.mapv(|z| z * (0.5 * dt))));
        let k3 = f(&(&x + &k2.mapv(|z| z * (0.5 * dt))));
        let k4 = f(&(&x + &k3.mapv(|z| z * dt)));
        x = &x + &(k1 + k2.mapv(|z| z * 2.0) + k3.mapv(|z| z * 2.0) + k4).mapv(|z| z * (dt / 6.0));
    }
    x
}

/// Largest amplitude difference between spectral propagation and fine RK4
/// stepping at N = 3, 4, 6.
pub fn propagation_error() -> f64 {
    let mut worst = 0.0f64;
    for n in [3, 4, 6] {
        let cfg = ChainConfig {
            n_sites: n,
            ..ChainConfig::default()
        };
        let h = build_hamiltonian(&cfg, None).unwrap();
        let spec = diagonalize(&h).unwrap();
        let psi0 = spin_coherent(BlochAngles::new(2.0, 0.9).unwrap(), n).unwrap();
        let grid = TimeGrid::new(vec![0.0, 37.0, 150.0]).unwrap();
        let states = evolve_unitary(&spec, &psi0, &grid).unwrap();
        let hd = h.to_dense();
        for (psi, &t) in states.iter().zip(grid.times()) {
            let want = rk4(&hd, psi0.amplitudes(), t, (t * 80.0) as usize + 1);
            for (a, b) in psi.amplitudes().iter().zip(&want) {
                worst = worst.max((a - b).norm());
            }
        }
    }
    worst
}

/// Largest gap between the free-fermion many-body spectrum and dense
/// diagonalization at g = 0 for N = 1..=n_max.
pub fn free_fermion_error(n_max: usize) -> f64 {
    let mut worst = 0.0f64;
    for n in 1..=n_max {
        let cfg = ChainConfig {
            n_sites: n,
            field_g_mean: 0.0,
            field_disorder_w: 0.0,
            ..ChainConfig::default()
        };
        let ff = free_fermion_spectrum(&cfg).unwrap();
        let h = build_hamiltonian(&cfg, None).unwrap();
        let (ed, _) = linalg::eigh_complex(&h.to_dense(), false).unwrap();
        assert_eq!(ff.many_body.len(), ed.len());
        for (a, b) in ff.many_body.iter().zip(&ed) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// (trajectory estimate, dense value, standard error) for ⟨σᶻ₁⟩, ⟨σˣ₂⟩ and
/// an off-diagonal element of the (2,3) marginal at three times, N = 4.
pub fn trajectory_comparison(n_traj: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let cfg = ChainConfig {
        n_sites: 4,
        ..ChainConfig::default()
    };
    let h = build_hamiltonian(&cfg, None).unwrap();
    let psi0 = spin_coherent(BlochAngles::new(PI / 2.0, PI / 4.0).unwrap(), 4).unwrap();
    // strong rates so that most trajectories jump inside the window
    let dec = DecoherenceParams::uniform(400.0, 150.0);
    let grid = TimeGrid::new(vec![0.0, 50.0, 150.0, 300.0]).unwrap();
    let dense = evolve_lindblad_dense(&h, &psi0.to_density_matrix(), &grid, &dec).unwrap();
    let z = pauli_string(4, &[(1, Axis::Z)]).unwrap();
    let x2 = pauli_string(4, &[(2, Axis::X)]).unwrap();
    let opts = UnravelOptions::new(n_traj, seed);
    let res = unravel(&h, &psi0, &grid, &dec, &opts, |x| {
        let s = StateVector::new(4, Array1::from(x.to_vec())).unwrap();
        vec![
            c(expectation(&z, &s).unwrap(), 0.0),
            c(expectation(&x2, &s).unwrap(), 0.0),
            two_site_reduced(&s, 2).unwrap().elements()[[1, 2]],
        ]
    })
    .unwrap();
    let mut out = Vec::new();
    for (t, rho) in dense.iter().enumerate().skip(1) {
        let want = [
            expectation(&z, rho).unwrap(),
            expectation(&x2, rho).unwrap(),
            partial_trace(rho, &[2, 3]).unwrap().elements()[[1, 2]].re,
        ];
        for (k, w) in want.iter().enumerate() {
            let (m, se) = res.estimate(t, |v| v[k].re);
            out.push((m, *w, se));
        }
    }
    out
}
