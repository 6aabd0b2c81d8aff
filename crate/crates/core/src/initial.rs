//! Spin-coherent product states.

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::qcore::{check_n_sites, StateVector};
use crate::C64;

/// Bloch direction (θ₀, φ₀) shared by every site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlochAngles {
    pub theta0: f64,
    pub phi0: f64,
}

impl BlochAngles {
    /// Validates θ₀ ∈ [0, π] and reduces φ₀ into [0, 2π).
    pub fn new(theta0: f64, phi0: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta0) {
            return Err(Error::domain(format!("theta0 = {theta0} outside [0, pi]")));
        }
        if !phi0.is_finite() {
            return Err(Error::domain("phi0 must be finite"));
        }
        let mut phi = phi0.rem_euclid(TAU);
        if phi >= TAU {
            phi = 0.0;
        }
        Ok(Self { theta0, phi0: phi })
    }

    pub fn validated(self) -> Result<Self> {
        Self::new(self.theta0, self.phi0)
    }
}

/// Named initial states.
pub const PRESETS: [(&str, f64, f64); 3] = [
    ("south-pole", PI, 0.0),
    ("equator-8pi5", PI / 2.0, 8.0 * PI / 5.0),
    ("equator-pi4", PI / 2.0, PI / 4.0),
];

pub fn preset(name: &str) -> Result<BlochAngles> {
    PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|&(_, t, p)| BlochAngles::new(t, p).expect("preset angles are valid"))
        .ok_or_else(|| {
            let known: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
            Error::config(format!(
                "unknown initial-state preset {name:?} (known: {})",
                known.join(", ")
            ))
        })
}

/// ⊗_j (cos(θ₀/2)|+Z⟩ + e^{−iφ₀} sin(θ₀/2)|−Z⟩).
pub fn spin_coherent(angles: BlochAngles, n_sites: usize) -> Result<StateVector> {
    check_n_sites(n_sites)?;
    let angles = angles.validated()?;
    let a = C64::new((angles.theta0 / 2.0).cos(), 0.0);
    let b = C64::from_polar((angles.theta0 / 2.0).sin(), -angles.phi0);
    let dim = 1usize << n_sites;
    // amplitude of s is a^(#zeros) b^(#ones); powers are tabulated once.
    let mut pa = vec![C64::new(1.0, 0.0); n_sites + 1];
    let mut pb = vec![C64::new(1.0, 0.0); n_sites + 1];
    for k in 1..=n_sites {
        pa[k] = pa[k - 1] * a;
        pb[k] = pb[k - 1] * b;
    }
    let amps = Array1::from_shape_fn(dim, |s| {
        let ones = s.count_ones() as usize;
        pa[n_sites - ones] * pb[ones]
    });
    Ok(StateVector::from_raw(n_sites, amps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{expectation, pauli_string, Axis};
    use approx::assert_abs_diff_eq;

    #[test]
    fn poles() {
        let up = spin_coherent(BlochAngles::new(0.0, 1.3).unwrap(), 3).unwrap();
        assert_abs_diff_eq!(up.amplitudes()[0].re, 1.0);
        let down = spin_coherent(BlochAngles::new(PI, 0.0).unwrap(), 2).unwrap();
        assert_abs_diff_eq!(
            (down.amplitudes()[3] - C64::new(1.0, 0.0)).norm(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(down.amplitudes()[0].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn equatorial_pi4_has_negative_y() {
        let psi = spin_coherent(BlochAngles::new(PI / 2.0, PI / 4.0).unwrap(), 1).unwrap();
        let y = pauli_string(1, &[(1, Axis::Y)]).unwrap();
        assert_abs_diff_eq!(
            expectation(&y, &psi).unwrap(),
            -(PI / 4.0).sin(),
            epsilon = 1e-14
        );
        let s = 0.5f64.sqrt();
        assert_abs_diff_eq!(psi.amplitudes()[0].re, s, epsilon = 1e-15);
        let expect = C64::from_polar(s, -PI / 4.0);
        assert_abs_diff_eq!((psi.amplitudes()[1] - expect).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn angle_validation() {
        assert!(BlochAngles::new(-0.1, 0.0).is_err());
        assert!(BlochAngles::new(3.2, 0.0).is_err());
        assert!(BlochAngles::new(1.0, f64::NAN).is_err());
        let a = BlochAngles::new(1.0, -PI / 2.0).unwrap();
        assert_abs_diff_eq!(a.phi0, 1.5 * PI, epsilon = 1e-15);
        assert_eq!(BlochAngles::new(1.0, TAU).unwrap().phi0, 0.0);
    }

    #[test]
    fn presets_resolve() {
        assert_eq!(preset("south-pole").unwrap().theta0, PI);
        assert!(preset("nope").is_err());
    }
}
