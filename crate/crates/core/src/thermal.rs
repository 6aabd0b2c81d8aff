//! Canonical ensembles built on a diagonalized Hamiltonian.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::observables::{adjacent_pair_marginals, concurrence_of, matrix_from};
use crate::qcore::{expectation, DensityMatrix, Operator, StateVector};
use crate::spectra::SpectralData;
use crate::C64;

/// Inverse temperature reproducing an initial-state energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveTemperature {
    /// In ns/rad.
    pub beta: f64,
    /// Jβ with J the mean coupling in rad/ns.
    pub beta_dimensionless: f64,
    /// |U(β) − E| at the returned β.
    pub residual: f64,
    /// Target energy E in rad/ns.
    pub energy: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() {
        return Err(Error::Range(format!(
            "inverse temperature {beta} is not finite"
        )));
    }
    Ok(())
}

/// Normalized Boltzmann weights e^{−βE_n}/Z, shifted by the dominant level
/// so no exponent is positive.
pub fn gibbs_weights(levels: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if levels.is_empty() {
        return Err(Error::domain("empty spectrum"));
    }
    let shift = dominant_level(levels, beta);
    let mut w: Vec<f64> = levels.iter().map(|e| (-beta * (e - shift)).exp()).collect();
    let z: f64 = w.iter().sum();
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::Range(format!(
            "partition function {z} at beta {beta}"
        )));
    }
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}

fn dominant_level(levels: &[f64], beta: f64) -> f64 {
    let (lo, hi) = levels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| {
            (a.min(e), b.max(e))
        });
    if beta >= 0.0 {
        lo
    } else {
        hi
    }
}

/// U(β) = Σ E_n e^{−βE_n}/Z.
pub fn canonical_energy(levels: &[f64], beta: f64) -> Result<f64> {
    let shift = dominant_level(levels, beta);
    let w = gibbs_weights(levels, beta)?;
    Ok(shift
        + levels
            .iter()
            .zip(&w)
            .map(|(e, p)| (e - shift) * p)
            .sum::<f64>())
}

/// ρ_β = V e^{−βΛ} V†/Z as a dense matrix.
pub fn thermal_state(spec: &SpectralData, beta: f64) -> Result<DensityMatrix> {
    let w = gibbs_weights(spec.eigenvalues(), beta)?;
    let v = spec.dense_vectors();
    let mut scaled = v.clone();
    for (mut col, &p) in scaled.columns_mut().into_iter().zip(&w) {
        col.mapv_inplace(|z| z * p);
    }
    let rho = scaled.dot(&v.t().mapv(|z| z.conj()));
    Ok(DensityMatrix::from_raw(spec.n_sites(), rho))
}

/// Solves U(β) = `energy` by bisection in Jβ; U is non-increasing in β.
///
/// The bracket starts at Jβ ∈ [−50, 50], so the first midpoint is β = 0, and
/// widens geometrically. Convergence is declared when the energy residual
/// is below `tol · h_max`.
pub fn effective_beta_for_energy(
    energy: f64,
    spec: &SpectralData,
    coupling: f64,
    h_max: f64,
    tol: f64,
) -> Result<EffectiveTemperature> {
    if !(coupling > 0.0 && coupling.is_finite()) {
        return Err(Error::domain("coupling scale must be positive"));
    }
    if !energy.is_finite() {
        return Err(Error::domain("target energy is not finite"));
    }
    let levels = spec.eigenvalues();
    let threshold = tol * h_max.max(f64::MIN_POSITIVE);
    let (e_min, e_max) = (spec.e_min(), spec.e_max());
    if energy <= e_min + threshold || energy >= e_max - threshold {
        return Err(Error::UnreachableTemperature(format!(
            "energy {energy} is not strictly inside the spectrum [{e_min}, {e_max}]"
        )));
    }
    let f = |x: f64| canonical_energy(levels, x / coupling).map(|u| u - energy);
    let mut lo = -50.0;
    let mut hi = 50.0;
    while f(lo)? < 0.0 {
        lo *= 2.0;
        if lo < -1e12 {
            return Err(Error::UnreachableTemperature(format!(
                "energy {energy} lies above every finite-temperature state"
            )));
        }
    }
    while f(hi)? > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::UnreachableTemperature(format!(
                "energy {energy} lies below every finite-temperature state"
            )));
        }
    }
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let r = f(mid)?;
        if r.abs() < best.0 {
            best = (r.abs(), mid);
        }
        if r.abs() <= threshold {
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs().max(1e-300) {
            break;
        }
    }
    let (residual, x) = best;
    if residual > threshold {
        return Err(Error::Consistency(format!(
            "bisection stalled with energy residual {residual:e}"
        )));
    }
    Ok(EffectiveTemperature {
        beta: x / coupling,
        beta_dimensionless: x,
        residual,
        energy,
    })
}

/// β whose canonical energy equals ⟨ψ₀|H|ψ₀⟩. `coupling` is the mean J in
/// rad/ns used for the dimensionless Jβ.
pub fn effective_beta(
    psi0: &StateVector,
    spec: &SpectralData,
    h: &Operator,
    coupling: f64,
    tol: f64,
) -> Result<EffectiveTemperature> {
    let energy = expectation(h, psi0)?;
    effective_beta_for_energy(energy, spec, coupling, h.max_abs(), tol)
}

/// Default energy tolerance of [`effective_beta`], relative to ‖H‖_max.
pub const BETA_TOLERANCE: f64 = 1e-10;

/// Adjacent-pair marginals of every eigenvector, computed once so that
/// thermal two-site states at any β are a weighted sum.
#[derive(Clone, Debug)]
pub struct PairMarginals {
    n_pairs: usize,
    /// Row n·n_pairs + j holds the 4×4 marginal of eigenvector n on (j+1, j+2).
    data: Vec<[C64; 16]>,
}

impl PairMarginals {
    pub fn compute(spec: &SpectralData) -> Self {
        let n = spec.n_sites();
        let n_pairs = n.saturating_sub(1);
        let dim = spec.dim();
        let chunk = 128;
        let starts: Vec<usize> = (0..dim).step_by(chunk).collect();
        let parts: Vec<Vec<[C64; 16]>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + chunk).min(dim);
                let v = spec.vectors_range(start..end);
                let mut out = Vec::with_capacity((end - start) * n_pairs);
                let mut col = vec![C64::new(0.0, 0.0); dim];
                for c in 0..end - start {
                    for (dst, z) in col.iter_mut().zip(v.column(c)) {
                        *dst = *z;
                    }
                    out.extend(adjacent_pair_marginals(&col, n));
                }
                out
            })
            .collect();
        Self {
            n_pairs,
            data: parts.into_iter().flatten().collect(),
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.n_pairs
    }

    /// Σ_n w_n (marginal of eigenvector n) for every pair.
    pub fn weighted(&self, weights: &[f64]) -> Vec<Array2<C64>> {
        let mut acc = vec![[C64::new(0.0, 0.0); 16]; self.n_pairs];
        for (n, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let rows = &self.data[n * self.n_pairs..(n + 1) * self.n_pairs];
            for (a, m) in acc.iter_mut().zip(rows) {
                for k in 0..16 {
                    a[k] += m[k] * w;
                }
            }
        }
        acc.iter().map(|m| matrix_from(m, 4)).collect()
    }

    /// Thermal two-site marginals at inverse temperature β.
    pub fn thermal(&self, spec: &SpectralData, beta: f64) -> Result<Vec<Array2<C64>>> {
        Ok(self.weighted(&gibbs_weights(spec.eigenvalues(), beta)?))
    }
}

/// Two-site marginal of ρ_β on sites (j, j+1).
pub fn thermal_reduced(spec: &SpectralData, beta: f64, j: usize) -> Result<DensityMatrix> {
    let n = spec.n_sites();
    if j == 0 || j + 1 > n {
        return Err(Error::domain(format!(
            "pair index {j} outside [1, {}]",
            n.saturating_sub(1)
        )));
    }
    let w = gibbs_weights(spec.eigenvalues(), beta)?;
    let mut acc = [C64::new(0.0, 0.0); 16];
    let mut col = vec![C64::new(0.0, 0.0); spec.dim()];
    for (k, &p) in w.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        col.copy_from_slice(spec.vector(k).as_slice().expect("contiguous"));
        let m = adjacent_pair_marginals(&col, n)[j - 1];
        for q in 0..16 {
            acc[q] += m[q] * p;
        }
    }
    Ok(DensityMatrix::from_raw(2, matrix_from(&acc, 4)))
}

/// Site-averaged concurrence of the thermal two-site marginals per β.
pub fn thermal_concurrence_curve(spec: &SpectralData, betas: &[f64]) -> Result<Vec<f64>> {
    let pairs = PairMarginals::compute(spec);
    thermal_concurrence_with(spec, &pairs, betas)
}

/// [`thermal_concurrence_curve`] reusing precomputed marginals.
pub fn thermal_concurrence_with(
    spec: &SpectralData,
    pairs: &PairMarginals,
    betas: &[f64],
) -> Result<Vec<f64>> {
    if pairs.n_pairs() == 0 {
        return Err(Error::domain("concurrence needs at least two sites"));
    }
    betas
        .iter()
        .map(|&b| {
            let ms = pairs.thermal(spec, b)?;
            let mut acc = 0.0;
            for m in &ms {
                acc += concurrence_of(m)?.value;
            }
            Ok(acc / ms.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::Operator;
    use crate::spectra::diagonalize;
    use approx::assert_abs_diff_eq;

    #[test]
    fn infinite_temperature_is_maximally_mixed() {
        let h = Operator::diagonal(2, &[0.0, 1.0, 2.5, 4.0]).unwrap();
        let s = diagonalize(&h).unwrap();
        let rho = thermal_state(&s, 0.0).unwrap();
        for ((i, j), z) in rho.elements().indexed_iter() {
            assert_abs_diff_eq!(z.re, if i == j { 0.25 } else { 0.0 }, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_level_populations() {
        let omega = 0.7;
        let beta = 1.3;
        let h = Operator::diagonal(1, &[0.0, omega]).unwrap();
        let s = diagonalize(&h).unwrap();
        let rho = thermal_state(&s, beta).unwrap();
        let z = 1.0 + (-beta * omega).exp();
        assert_abs_diff_eq!(rho.elements()[[0, 0]].re, 1.0 / z, epsilon = 1e-14);
        assert_abs_diff_eq!(
            rho.elements()[[1, 1]].re,
            (-beta * omega).exp() / z,
            epsilon = 1e-14
        );
    }

    #[test]
    fn huge_beta_selects_the_ground_state() {
        let h = Operator::diagonal(2, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        let s = diagonalize(&h).unwrap();
        let rho = thermal_state(&s, 1e6).unwrap();
        assert_abs_diff_eq!(rho.elements()[[1, 1]].re, 1.0, epsilon = 1e-8);
        let rho = thermal_state(&s, -1e6).unwrap();
        assert_abs_diff_eq!(rho.elements()[[3, 3]].re, 1.0, epsilon = 1e-8);
        assert!(thermal_state(&s, f64::NAN).is_err());
    }

    #[test]
    fn ground_state_energy_is_unreachable() {
        let h = Operator::diagonal(2, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        let s = diagonalize(&h).unwrap();
        let g = StateVector::basis(2, 1).unwrap();
        assert!(matches!(
            effective_beta(&g, &s, &h, 1.0, BETA_TOLERANCE),
            Err(Error::UnreachableTemperature(_))
        ));
    }

    #[test]
    fn mean_energy_gives_zero_beta() {
        let h = Operator::diagonal(2, &[1.0, -2.0, 0.5, 0.5]).unwrap();
        let s = diagonalize(&h).unwrap();
        let t = effective_beta_for_energy(0.0, &s, 1.0, 4.0, BETA_TOLERANCE).unwrap();
        assert_eq!(t.beta, 0.0);
    }
}
