//! Local diagnostics: magnetization, entanglement entropy, trace distance,
//! concurrence and time averages.

use ndarray::Array2;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg;
use crate::qcore::{eigenvalues_2x2, partial_trace, DensityMatrix, StateRef};
use crate::C64;

/// Eigenvalues below this contribute nothing to an entropy.
pub const ENTROPY_CUTOFF: f64 = 1e-14;

/// Row-major 2×2 single-site marginals of a pure state, one per site.
pub fn single_site_marginals(amps: &[C64], n_sites: usize) -> Vec<[C64; 4]> {
    (0..n_sites)
        .map(|j| {
            let mask = 1usize << (n_sites - 1 - j);
            let mut p0 = 0.0;
            let mut p1 = 0.0;
            let mut off = C64::new(0.0, 0.0);
            for s in 0..amps.len() {
                if s & mask != 0 {
                    continue;
                }
                let a = amps[s];
                let b = amps[s | mask];
                p0 += a.norm_sqr();
                p1 += b.norm_sqr();
                off += a * b.conj();
            }
            [C64::new(p0, 0.0), off, off.conj(), C64::new(p1, 0.0)]
        })
        .collect()
}

/// Row-major 4×4 marginals of every adjacent pair (j, j+1) of a pure state.
pub fn adjacent_pair_marginals(amps: &[C64], n_sites: usize) -> Vec<[C64; 16]> {
    (0..n_sites.saturating_sub(1))
        .map(|j| {
            let shift = n_sites - 2 - j;
            let pair = 0b11usize << shift;
            let mut m = [C64::new(0.0, 0.0); 16];
            for s in 0..amps.len() {
                if s & pair != 0 {
                    continue;
                }
                let v = [
                    amps[s],
                    amps[s | (1 << shift)],
                    amps[s | (2 << shift)],
                    amps[s | pair],
                ];
                for a in 0..4 {
                    for b in a..4 {
                        m[4 * a + b] += v[a] * v[b].conj();
                    }
                }
            }
            for a in 0..4 {
                for b in 0..a {
                    m[4 * a + b] = m[4 * b + a].conj();
                }
            }
            m
        })
        .collect()
}

pub(crate) fn matrix_from<const K: usize>(flat: &[C64; K], dim: usize) -> Array2<C64> {
    Array2::from_shape_vec((dim, dim), flat.to_vec()).expect("square buffer")
}

/// Site-averaged ⟨σᶻ⟩.
pub fn mean_sigma_z<'a>(state: impl Into<StateRef<'a>>) -> Result<f64> {
    let state = state.into();
    let n = state.n_sites();
    let weight = |s: usize| (n as f64 - 2.0 * s.count_ones() as f64) / n as f64;
    Ok(match state {
        StateRef::Pure(psi) => psi
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(s, a)| a.norm_sqr() * weight(s))
            .sum(),
        StateRef::Mixed(rho) => rho
            .elements()
            .diag()
            .iter()
            .enumerate()
            .map(|(s, p)| p.re * weight(s))
            .sum(),
    })
}

/// σᶻ expectation of a 2×2 marginal.
pub fn sigma_z_of(m: &[C64; 4]) -> f64 {
    m[0].re - m[3].re
}

fn shannon(p: impl IntoIterator<Item = f64>) -> f64 {
    p.into_iter()
        .filter(|&x| x > ENTROPY_CUTOFF)
        .map(|x| -x * x.ln())
        .sum()
}

/// von Neumann entropy (natural log) of a 2×2 marginal.
pub fn entropy_2x2(m: &[C64; 4]) -> f64 {
    let ev = eigenvalues_2x2(&matrix_from(m, 2));
    shannon(ev)
}

/// von Neumann entropy of any density matrix.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    Ok(shannon(rho.eigenvalues()?))
}

/// Entropy of the one-site marginal at `site` (1-based).
pub fn single_site_entropy<'a>(state: impl Into<StateRef<'a>>, site: usize) -> Result<f64> {
    let rho = partial_trace(state, &[site])?;
    Ok(shannon(eigenvalues_2x2(rho.elements())))
}

/// Mean of the single-site entropies over all sites.
pub fn site_averaged_entropy<'a>(state: impl Into<StateRef<'a>>) -> Result<f64> {
    let state = state.into();
    let n = state.n_sites();
    match state {
        StateRef::Pure(psi) => {
            let m = single_site_marginals(psi.as_slice(), n);
            Ok(m.iter().map(entropy_2x2).sum::<f64>() / n as f64)
        }
        StateRef::Mixed(_) => {
            let mut acc = 0.0;
            for site in 1..=n {
                acc += single_site_entropy(state, site)?;
            }
            Ok(acc / n as f64)
        }
    }
}

/// Average single-site entropy of a Haar-random state of `n_sites` sites,
/// ln 2 − 2/(2·2^{n−1}).
pub fn page_value(n_sites: usize) -> Result<f64> {
    if n_sites < 2 {
        return Err(Error::domain("page_value needs at least 2 sites"));
    }
    let m = 2.0f64;
    let n_env = 2f64.powi(n_sites as i32 - 1);
    Ok(m.ln() - m / (2.0 * n_env))
}

/// Marginal of sites (j, j+1).
pub fn two_site_reduced<'a>(state: impl Into<StateRef<'a>>, j: usize) -> Result<DensityMatrix> {
    let state = state.into();
    let n = state.n_sites();
    if j == 0 || j + 1 > n {
        return Err(Error::domain(format!(
            "pair index {j} outside [1, {}]",
            n.saturating_sub(1)
        )));
    }
    partial_trace(state, &[j, j + 1])
}

/// ½ Tr|ρ − σ|.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    trace_distance_matrices(rho.elements(), sigma.elements())
}

pub fn trace_distance_matrices(a: &Array2<C64>, b: &Array2<C64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::domain(
            "trace distance of matrices of different size",
        ));
    }
    let diff = a - b;
    let ev = if diff.nrows() == 2 {
        eigenvalues_2x2(&diff).to_vec()
    } else {
        linalg::eigh_complex(&diff, false)?.0
    };
    Ok(0.5 * ev.iter().map(|x| x.abs()).sum::<f64>())
}

/// Eigenvalues of Γ = ρ (σʸ⊗σʸ) ρ* (σʸ⊗σʸ) and the resulting concurrence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcurrenceSpectrum {
    /// Descending and clamped at zero.
    pub gammas: [f64; 4],
    pub value: f64,
}

/// σʸ⊗σʸ ρ* σʸ⊗σʸ. In the computational basis σʸ⊗σʸ is the real
/// anti-diagonal (−1, 1, 1, −1).
pub fn spin_flip(rho: &Array2<C64>) -> Array2<C64> {
    let sign = [-1.0, 1.0, 1.0, -1.0];
    Array2::from_shape_fn((4, 4), |(i, j)| {
        rho[[3 - i, 3 - j]].conj() * (sign[i] * sign[j])
    })
}

/// Wootters concurrence of a two-qubit state.
pub fn concurrence(rho: &DensityMatrix) -> Result<ConcurrenceSpectrum> {
    concurrence_of(rho.elements())
}

/// [`concurrence`] on a raw 4×4 matrix.
///
/// The spectrum of Γ is taken from the Hermitian similar matrix
/// √ρ ρ̃ √ρ, which has the same eigenvalues.
pub fn concurrence_of(rho: &Array2<C64>) -> Result<ConcurrenceSpectrum> {
    if rho.dim() != (4, 4) {
        return Err(Error::domain("concurrence needs a 4x4 density matrix"));
    }
    let (w, v) = linalg::eigh_complex(rho, true)?;
    let v = v.expect("vectors requested");
    let mut sv = v.clone();
    for (mut col, &lam) in sv.columns_mut().into_iter().zip(&w) {
        let r = lam.max(0.0).sqrt();
        col.mapv_inplace(|z| z * r);
    }
    let sqrt_rho = sv.dot(&v.t().mapv(|z| z.conj()));
    let m = sqrt_rho.dot(&spin_flip(rho)).dot(&sqrt_rho);
    let m = (&m + &m.t().mapv(|z| z.conj())).mapv(|z| z * 0.5);
    let (g, _) = linalg::eigh_complex(&m, false)?;
    let tol_neg = -1e-8 * rho.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if let Some(bad) = g.iter().find(|&&x| x < tol_neg) {
        return Err(Error::Consistency(format!(
            "concurrence matrix has eigenvalue {bad:e}"
        )));
    }
    let mut gammas = [0.0; 4];
    for (k, x) in g.iter().rev().enumerate() {
        gammas[k] = x.max(0.0);
    }
    let r: Vec<f64> = gammas.iter().map(|x| x.sqrt()).collect();
    let value = (r[0] - r[1] - r[2] - r[3]).max(0.0);
    Ok(ConcurrenceSpectrum { gammas, value })
}

/// Trapezoidal mean of `values` over the grid points inside `window`.
pub fn windowed_mean(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::domain("times and values differ in length"));
    }
    let (lo, hi) = window;
    let eps = 1e-9 * hi.abs().max(1.0);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo - eps && **t <= hi + eps)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 2 {
        return Err(Error::domain(format!(
            "window [{lo}, {hi}] contains fewer than 2 grid points"
        )));
    }
    let span = pts[pts.len() - 1].0 - pts[0].0;
    if span <= 0.0 {
        return Err(Error::domain("window grid points do not span an interval"));
    }
    let area: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    Ok(area / span)
}

/// Time average of a named record over `window` (ns).
pub fn time_average(traj: &Trajectory, key: &str, window: (f64, f64)) -> Result<f64> {
    let values = traj
        .record(key)
        .ok_or_else(|| Error::domain(format!("trajectory has no record {key:?}")))?;
    windowed_mean(traj.grid.times(), values, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::StateVector;
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;

    fn bell() -> StateVector {
        let s = 0.5f64.sqrt();
        StateVector::new(
            2,
            Array1::from(vec![
                C64::new(s, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(s, 0.0),
            ]),
        )
        .unwrap()
    }

    #[test]
    fn magnetization_of_basis_states() {
        assert_eq!(
            mean_sigma_z(&StateVector::basis(3, 0).unwrap()).unwrap(),
            1.0
        );
        assert_eq!(
            mean_sigma_z(&StateVector::basis(3, 7).unwrap()).unwrap(),
            -1.0
        );
    }

    #[test]
    fn bell_pair_entropy_and_concurrence() {
        let b = bell();
        assert_abs_diff_eq!(
            single_site_entropy(&b, 1).unwrap(),
            2f64.ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            site_averaged_entropy(&b).unwrap(),
            2f64.ln(),
            epsilon = 1e-14
        );
        let c = concurrence(&b.to_density_matrix()).unwrap();
        assert_abs_diff_eq!(c.value, 1.0, epsilon = 1e-12);
        let product = StateVector::basis(2, 1).unwrap();
        assert_abs_diff_eq!(site_averaged_entropy(&product).unwrap(), 0.0);
        assert_abs_diff_eq!(
            concurrence(&product.to_density_matrix()).unwrap().value,
            0.0
        );
    }

    #[test]
    fn werner_state_concurrence() {
        let p = 0.5;
        let b = bell().to_density_matrix();
        let rho = b.elements().mapv(|z| z * p)
            + Array2::from_diag_elem(4, C64::new((1.0 - p) / 4.0, 0.0));
        let c = concurrence_of(&rho).unwrap();
        assert_abs_diff_eq!(c.value, 0.25, epsilon = 1e-12);
        assert!(c.gammas.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn page_values() {
        assert_abs_diff_eq!(
            page_value(12).unwrap(),
            2f64.ln() - 2.0 / 4096.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(page_value(12).unwrap(), 0.692, epsilon = 1e-3);
        assert_abs_diff_eq!(page_value(2).unwrap(), 2f64.ln() - 0.5, epsilon = 1e-15);
        assert!((page_value(40).unwrap() - 2f64.ln()).abs() < 1e-9);
        assert!(page_value(1).is_err());
    }

    #[test]
    fn trace_distance_basics() {
        let up = StateVector::basis(1, 0).unwrap().to_density_matrix();
        let down = StateVector::basis(1, 1).unwrap().to_density_matrix();
        let mixed = DensityMatrix::maximally_mixed(1).unwrap();
        assert_abs_diff_eq!(trace_distance(&up, &up).unwrap(), 0.0);
        assert_abs_diff_eq!(trace_distance(&up, &down).unwrap(), 1.0);
        assert_abs_diff_eq!(trace_distance(&mixed, &up).unwrap(), 0.5);
        let two = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(trace_distance(&two, &up).is_err());
    }

    #[test]
    fn window_means() {
        let t: Vec<f64> = (0..=20).map(|k| k as f64).collect();
        let c = vec![3.5; 21];
        assert_abs_diff_eq!(windowed_mean(&t, &c, (2.0, 10.0)).unwrap(), 3.5);
        let lin: Vec<f64> = t.iter().map(|x| 2.0 * x + 1.0).collect();
        assert_abs_diff_eq!(
            windowed_mean(&t, &lin, (4.0, 10.0)).unwrap(),
            15.0,
            epsilon = 1e-12
        );
        assert!(windowed_mean(&t, &lin, (4.2, 4.8)).is_err());
    }

    #[test]
    fn pair_index_validation() {
        let psi = StateVector::basis(3, 0).unwrap();
        assert!(two_site_reduced(&psi, 0).is_err());
        assert!(two_site_reduced(&psi, 3).is_err());
        assert!(two_site_reduced(&psi, 2).is_ok());
    }

    #[test]
    fn fast_marginals_match_partial_trace() {
        let amps: Vec<C64> = (0..16)
            .map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 1.1).cos()))
            .collect();
        let psi = StateVector::normalized(4, Array1::from(amps)).unwrap();
        let singles = single_site_marginals(psi.as_slice(), 4);
        let pairs = adjacent_pair_marginals(psi.as_slice(), 4);
        for j in 1..=4 {
            let r = partial_trace(&psi, &[j]).unwrap();
            for (a, b) in r.elements().iter().zip(singles[j - 1].iter()) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-14);
            }
        }
        for j in 1..=3 {
            let r = partial_trace(&psi, &[j, j + 1]).unwrap();
            for (a, b) in r.elements().iter().zip(pairs[j - 1].iter()) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }
}
