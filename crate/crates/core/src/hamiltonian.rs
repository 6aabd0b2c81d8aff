//! The driven XY chain: parameters, units, disorder sampling and operator
//! construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::qcore::{check_n_sites, pauli_string, Axis, Operator};
use crate::C64;

/// ħ = 1 unit handling. Inputs are ordinary frequencies in MHz, internal
/// energies are angular frequencies in rad/ns, times are in ns.
pub mod units {
    use std::f64::consts::PI;

    /// rad/ns per MHz.
    pub const MHZ_TO_ANGULAR: f64 = 2.0 * PI * 1e-3;

    pub fn mhz_to_angular(f_mhz: f64) -> f64 {
        f_mhz * MHZ_TO_ANGULAR
    }

    pub fn angular_to_mhz(omega: f64) -> f64 {
        omega / MHZ_TO_ANGULAR
    }
}

/// A scalar applied to every site (or bond), or an explicit per-site list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteValues {
    Uniform(f64),
    PerSite(Vec<f64>),
}

impl SiteValues {
    pub fn resolve(&self, len: usize, what: &str) -> Result<Vec<f64>> {
        let v = match self {
            SiteValues::Uniform(x) => vec![*x; len],
            SiteValues::PerSite(v) => {
                if v.len() != len {
                    return Err(Error::domain(format!(
                        "{what} needs {len} entries, got {}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain(format!("{what} contains a non-finite value")));
        }
        Ok(v)
    }

    pub fn is_uniform(&self) -> bool {
        match self {
            SiteValues::Uniform(_) => true,
            SiteValues::PerSite(v) => v.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

/// Physical parameters of the chain. Frequencies are in MHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_sites: usize,
    /// Per-bond coupling J (λ = J/2), one value or `n_sites - 1` values.
    #[serde(rename = "coupling_J")]
    pub coupling_j: SiteValues,
    pub field_g_mean: f64,
    /// Half-width of the uniform transverse-field disorder.
    #[serde(rename = "field_disorder_W")]
    pub field_disorder_w: f64,
    /// Drive phase φ in radians.
    pub field_phase: f64,
    pub potential_mu: SiteValues,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_sites: 12,
            coupling_j: SiteValues::Uniform(12.3),
            field_g_mean: 6.7,
            field_disorder_w: 1.0,
            field_phase: PI / 2.0,
            potential_mu: SiteValues::Uniform(0.0),
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        check_n_sites(self.n_sites)?;
        let j = self.couplings_mhz()?;
        if let Some(bad) = j.iter().find(|&&x| x <= 0.0) {
            return Err(Error::domain(format!(
                "couplings must be strictly positive, got {bad}"
            )));
        }
        if !self.field_g_mean.is_finite() {
            return Err(Error::domain("field_g_mean must be finite"));
        }
        if !(self.field_disorder_w >= 0.0 && self.field_disorder_w.is_finite()) {
            return Err(Error::domain(
                "field_disorder_W must be finite and nonnegative",
            ));
        }
        if !self.field_phase.is_finite() {
            return Err(Error::domain("field_phase must be finite"));
        }
        self.potential_mhz()?;
        Ok(())
    }

    pub fn n_bonds(&self) -> usize {
        self.n_sites.saturating_sub(1)
    }

    pub fn couplings_mhz(&self) -> Result<Vec<f64>> {
        self.coupling_j.resolve(self.n_bonds(), "coupling_J")
    }

    pub fn potential_mhz(&self) -> Result<Vec<f64>> {
        self.potential_mu.resolve(self.n_sites, "potential_mu")
    }

    /// λ_b = J_b/2 in rad/ns.
    pub fn lambda(&self) -> Result<Vec<f64>> {
        Ok(self
            .couplings_mhz()?
            .into_iter()
            .map(|j| units::mhz_to_angular(j) / 2.0)
            .collect())
    }

    /// Mean bond coupling J in rad/ns; the scale of the dimensionless Jβ.
    /// A single-site chain falls back to the configured uniform value.
    pub fn mean_coupling_angular(&self) -> Result<f64> {
        let j = self.couplings_mhz()?;
        let mean = if j.is_empty() {
            match &self.coupling_j {
                SiteValues::Uniform(x) => *x,
                SiteValues::PerSite(_) => 0.0,
            }
        } else {
            j.iter().sum::<f64>() / j.len() as f64
        };
        Ok(units::mhz_to_angular(mean))
    }
}

/// Field values of disorder sample `index`, in MHz.
pub fn disorder_sample(cfg: &ChainConfig, index: u64) -> Vec<f64> {
    let g = cfg.field_g_mean;
    let w = cfg.field_disorder_w;
    if w == 0.0 {
        return vec![g; cfg.n_sites];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    (0..cfg.n_sites)
        .map(|_| g + w * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

/// `n_samples` independent per-site field draws, uniform on [ḡ−W, ḡ+W].
pub fn sample_disorder(cfg: &ChainConfig, n_samples: usize) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    Ok((0..n_samples as u64)
        .map(|i| disorder_sample(cfg, i))
        .collect())
}

fn resolve_fields(cfg: &ChainConfig, g_samples: Option<&[f64]>) -> Result<Vec<f64>> {
    cfg.validate()?;
    match g_samples {
        Some(g) => {
            if g.len() != cfg.n_sites {
                return Err(Error::domain(format!(
                    "field sample has {} entries for {} sites",
                    g.len(),
                    cfg.n_sites
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain("field sample contains a non-finite value"));
            }
            Ok(g.to_vec())
        }
        None => Ok(disorder_sample(cfg, 0)),
    }
}

fn drive_triplets(n: usize, g_mhz: &[f64], phase: f64, out: &mut Vec<(usize, usize, C64)>) {
    let dim = 1usize << n;
    let up = C64::from_polar(1.0, -phase);
    let down = up.conj();
    for (j, &gj) in g_mhz.iter().enumerate() {
        let g = units::mhz_to_angular(gj);
        if g == 0.0 {
            continue;
        }
        let mask = 1usize << (n - 1 - j);
        for s in 0..dim {
            let amp = if s & mask == 0 { up } else { down };
            out.push((s ^ mask, s, amp * g));
        }
    }
}

/// Σ_j g_j (e^{−iφ} σ⁺_j + e^{iφ} σ⁻_j). In standard Pauli matrices this is
/// Σ_j g_j (cos φ X_j − sin φ Y_j), since σ⁺ = (X − iY)/2 here.
pub fn drive_term(cfg: &ChainConfig, g_samples: Option<&[f64]>) -> Result<Operator> {
    let g = resolve_fields(cfg, g_samples)?;
    let mut t = Vec::new();
    drive_triplets(cfg.n_sites, &g, cfg.field_phase, &mut t);
    Operator::from_triplets(cfg.n_sites, t)
}

/// H = Σ_b λ_b (X X + Y Y) + drive + Σ_j μ_j σ⁺_j σ⁻_j in rad/ns, with open
/// boundaries. Without `g_samples` the fields of disorder sample 0 are used.
pub fn build_hamiltonian(cfg: &ChainConfig, g_samples: Option<&[f64]>) -> Result<Operator> {
    let g = resolve_fields(cfg, g_samples)?;
    let n = cfg.n_sites;
    let dim = 1usize << n;
    let lambda = cfg.lambda()?;
    let mu: Vec<f64> = cfg
        .potential_mhz()?
        .into_iter()
        .map(units::mhz_to_angular)
        .collect();
    let mut t = Vec::with_capacity(dim * (2 * n + 1));
    for (b, &lam) in lambda.iter().enumerate() {
        let pair = 0b11usize << (n - 2 - b);
        let hop = C64::new(2.0 * lam, 0.0);
        for s in 0..dim {
            let bits = s & pair;
            if bits != 0 && bits != pair {
                t.push((s ^ pair, s, hop));
            }
        }
    }
    drive_triplets(n, &g, cfg.field_phase, &mut t);
    if mu.iter().any(|&m| m != 0.0) {
        for s in 0..dim {
            let e: f64 = mu
                .iter()
                .enumerate()
                .filter(|(j, _)| s & (1usize << (n - 1 - j)) != 0)
                .map(|(_, m)| m)
                .sum();
            t.push((s, s, C64::new(e, 0.0)));
        }
    }
    Operator::from_triplets(n, t)
}

/// Σ_j σ⁺_j σ⁻_j, the number of excitations.
pub fn excitation_number(n_sites: usize) -> Result<Operator> {
    check_n_sites(n_sites)?;
    let diag: Vec<f64> = (0..1usize << n_sites)
        .map(|s| s.count_ones() as f64)
        .collect();
    Operator::diagonal(n_sites, &diag)
}

/// Global π rotation about y, ⊗_j exp(−iπ Y_j/2) = ⊗_j (−i Y_j).
pub fn y_rotation(n_sites: usize) -> Result<Operator> {
    let factors: Vec<_> = (1..=n_sites).map(|s| (s, Axis::Y)).collect();
    let phase = C64::new(0.0, -1.0).powu(n_sites as u32);
    Ok(pauli_string(n_sites, &factors)?.scale(phase))
}
