#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalize::qcore::{DensityMatrix, StateVector};
use thermalize::C64;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn identity(d: usize) -> Array2<C64> {
    Array2::from_diag_elem(d, c(1.0, 0.0))
}

pub fn pauli_x() -> Array2<C64> {
    ndarray::arr2(&[[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]])
}

pub fn pauli_y() -> Array2<C64> {
    ndarray::arr2(&[[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]])
}

pub fn pauli_z() -> Array2<C64> {
    ndarray::arr2(&[[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]])
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| {
        a[[i / br, j / bc]] * b[[i % br, j % bc]]
    })
}

/// `op` on site `site` (1-based, site 1 leftmost) of an n-site register.
pub fn embed(op: &Array2<C64>, site: usize, n: usize) -> Array2<C64> {
    let mut m = ndarray::arr2(&[[c(1.0, 0.0)]]);
    for j in 1..=n {
        m = if j == site {
            kron(&m, op)
        } else {
            kron(&m, &identity(2))
        };
    }
    m
}

pub fn naive_matmul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (n, k) = a.dim();
    let m = b.ncols();
    Array2::from_shape_fn((n, m), |(i, j)| (0..k).map(|l| a[[i, l]] * b[[l, j]]).sum())
}

pub fn naive_matvec(a: &Array2<C64>, x: &Array1<C64>) -> Array1<C64> {
    Array1::from_shape_fn(a.nrows(), |i| {
        (0..a.ncols()).map(|l| a[[i, l]] * x[l]).sum()
    })
}

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

pub fn max_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn gaussian(r: &mut ChaCha8Rng) -> f64 {
    let u: f64 = r.random_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = r.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Haar-random pure state.
pub fn random_state(n: usize, r: &mut ChaCha8Rng) -> StateVector {
    let amps = Array1::from_shape_fn(1 << n, |_| c(gaussian(r), gaussian(r)));
    StateVector::normalized(n, amps).unwrap()
}

/// Random full-rank density matrix G G† / Tr.
pub fn random_density(n: usize, r: &mut ChaCha8Rng) -> DensityMatrix {
    let d = 1 << n;
    let g = Array2::from_shape_fn((d, d), |_| c(gaussian(r), gaussian(r)));
    let m = naive_matmul(&g, &dagger(&g));
    let tr: f64 = (0..d).map(|i| m[[i, i]].re).sum();
    DensityMatrix::new(n, m.mapv(|z| z / tr)).unwrap()
}

/// Haar-random 2×2 unitary from a QR-free parameterization.
pub fn random_unitary_2(r: &mut ChaCha8Rng) -> Array2<C64> {
    let a = c(gaussian(r), gaussian(r));
    let b = c(gaussian(r), gaussian(r));
    let nrm = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let (a, b) = (a / nrm, b / nrm);
    let phase = C64::from_polar(1.0, r.random::<f64>() * std::f64::consts::TAU);
    ndarray::arr2(&[[a, -b.conj() * phase], [b, a.conj() * phase]])
}

/// Index-loop partial trace keeping the listed 1-based sites.
pub fn brute_partial_trace(rho: &Array2<C64>, n: usize, keep: &[usize]) -> Array2<C64> {
    let bit = |s: usize, site: usize| (s >> (n - site)) & 1;
    let dk = 1 << keep.len();
    let mut out = Array2::<C64>::zeros((dk, dk));
    let d = 1 << n;
    for a in 0..d {
        for b in 0..d {
            let traced_equal = (1..=n)
                .filter(|s| !keep.contains(s))
                .all(|s| bit(a, s) == bit(b, s));
            if !traced_equal {
                continue;
            }
            let ka = keep.iter().fold(0, |acc, &s| (acc << 1) | bit(a, s));
            let kb = keep.iter().fold(0, |acc, &s| (acc << 1) | bit(b, s));
            out[[ka, kb]] += rho[[a, b]];
        }
    }
    out
}

pub fn outer(psi: &StateVector) -> Array2<C64> {
    let a = psi.amplitudes();
    Array2::from_shape_fn((a.len(), a.len()), |(i, j)| a[i] * a[j].conj())
}
pub mod checks;
