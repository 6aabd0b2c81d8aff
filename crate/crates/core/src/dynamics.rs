//! Time evolution: spectral propagation of closed quenches, a dense
//! Lindblad integrator and a quantum-trajectory unraveling of the same
//! master equation.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hamiltonian::SiteValues;
use crate::linalg;
use crate::qcore::{norm, DensityMatrix, Operator, StateVector, Storage};
use crate::spectra::SpectralData;
use crate::C64;

/// Largest chain handled by the dense master-equation integrator.
pub const DENSE_LINDBLAD_MAX_SITES: usize = 8;

/// Sorted, duplicate-free sampling times in ns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(mut times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::domain("time grid is empty"));
        }
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::domain(
                "time grid entries must be finite and nonnegative",
            ));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(Self { times })
    }

    /// `n_points` equally spaced times from 0 to `t_max`.
    pub fn uniform(t_max: f64, n_points: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::domain("time grid needs at least one point"));
        }
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(Error::domain("t_max must be finite and nonnegative"));
        }
        if n_points == 1 {
            return Self::new(vec![0.0]);
        }
        let step = t_max / (n_points - 1) as f64;
        let mut times: Vec<f64> = (0..n_points).map(|k| k as f64 * step).collect();
        times[n_points - 1] = t_max;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        TimeGrid::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

/// Relaxation (T₁) and dephasing (T₂) times in ns, uniform or per site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceParams {
    #[serde(rename = "T1")]
    pub t1: SiteValues,
    #[serde(rename = "T2")]
    pub t2: SiteValues,
}

impl Default for DecoherenceParams {
    fn default() -> Self {
        Self {
            t1: SiteValues::Uniform(23_600.0),
            t2: SiteValues::Uniform(3_820.0),
        }
    }
}

/// Per-site jump rates: γ₁ = 1/T₁ for σ⁻ and γ_φ = 1/(2T₂) for σᶻ.
#[derive(Clone, Debug, PartialEq)]
pub struct Rates {
    pub relax: Vec<f64>,
    pub dephase: Vec<f64>,
}

impl Rates {
    fn is_zero(&self) -> bool {
        self.relax.iter().chain(&self.dephase).all(|&r| r == 0.0)
    }

    /// Diagonal of Σ_k L_k†L_k.
    fn loss_diagonal(&self, n_sites: usize) -> Vec<f64> {
        let base: f64 = self.dephase.iter().sum();
        (0..1usize << n_sites)
            .map(|s| {
                base + self
                    .relax
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| s & (1 << (n_sites - 1 - j)) != 0)
                    .map(|(_, g)| g)
                    .sum::<f64>()
            })
            .collect()
    }
}

impl DecoherenceParams {
    pub fn uniform(t1: f64, t2: f64) -> Self {
        Self {
            t1: SiteValues::Uniform(t1),
            t2: SiteValues::Uniform(t2),
        }
    }

    /// No decoherence at all.
    pub fn closed() -> Self {
        Self::uniform(f64::INFINITY, f64::INFINITY)
    }

    fn times(v: &SiteValues, n: usize, what: &str) -> Result<Vec<f64>> {
        let t = match v {
            SiteValues::Uniform(x) => vec![*x; n],
            SiteValues::PerSite(x) => {
                if x.len() != n {
                    return Err(Error::domain(format!("{what} needs {n} entries")));
                }
                x.clone()
            }
        };
        if t.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::domain(format!("{what} must be positive")));
        }
        Ok(t)
    }

    pub fn rates(&self, n_sites: usize) -> Result<Rates> {
        let t1 = Self::times(&self.t1, n_sites, "T1")?;
        let t2 = Self::times(&self.t2, n_sites, "T2")?;
        Ok(Rates {
            relax: t1.iter().map(|t| 1.0 / t).collect(),
            dephase: t2.iter().map(|t| 0.5 / t).collect(),
        })
    }

    /// Sites where T₂ > 2T₁.
    pub fn warnings(&self, n_sites: usize) -> Vec<String> {
        let (Ok(t1), Ok(t2)) = (
            Self::times(&self.t1, n_sites, "T1"),
            Self::times(&self.t2, n_sites, "T2"),
        ) else {
            return Vec::new();
        };
        t1.iter()
            .zip(&t2)
            .enumerate()
            .filter(|(_, (a, b))| **b > 2.0 * **a)
            .map(|(j, (a, b))| format!("site {}: T2 = {b} ns exceeds 2*T1 = {} ns", j + 1, 2.0 * a))
            .collect()
    }
}

/// Observable time series of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    records: BTreeMap<String, Vec<f64>>,
    pub states: Option<Vec<StateVector>>,
    pub density_matrices: Option<Vec<DensityMatrix>>,
    pub config_hash: Option<String>,
    pub sample: Option<u64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            records: BTreeMap::new(),
            states: None,
            density_matrices: None,
            config_hash: None,
            sample: None,
        }
    }

    pub fn insert_record(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.grid.len() {
            return Err(Error::domain(format!(
                "record has {} values for {} grid times",
                values.len(),
                self.grid.len()
            )));
        }
        self.records.insert(name.into(), values);
        Ok(())
    }

    pub fn record(&self, name: &str) -> Option<&[f64]> {
        self.records.get(name).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }
}

/// States Σ_n c_n e^{−iE_n t} v_n for every coefficient column and time.
/// Column `s·times.len() + k` holds state `s` at `times[k]`.
pub fn evolve_coefficients(
    spec: &SpectralData,
    coeffs: &Array2<C64>,
    times: &[f64],
) -> Result<Array2<C64>> {
    let dim = spec.dim();
    if coeffs.nrows() != dim {
        return Err(Error::domain(
            "coefficients and spectrum have different dimensions",
        ));
    }
    let nt = times.len();
    let mut phased = Array2::<C64>::zeros((dim, coeffs.ncols() * nt));
    for (n, &e) in spec.eigenvalues().iter().enumerate() {
        let phases: Vec<C64> = times.iter().map(|t| C64::from_polar(1.0, -e * t)).collect();
        let mut row = phased.row_mut(n);
        for (s, c) in coeffs.row(n).iter().enumerate() {
            for (k, p) in phases.iter().enumerate() {
                row[s * nt + k] = c * p;
            }
        }
    }
    spec.reconstruct_many(&phased)
}

/// ψ(t) = V e^{−iΛt} V† ψ₀ at each grid time.
pub fn evolve_unitary(
    spec: &SpectralData,
    psi0: &StateVector,
    grid: &TimeGrid,
) -> Result<Vec<StateVector>> {
    let c = spec.project(psi0)?;
    let coeffs = c.insert_axis(ndarray::Axis(1));
    let states = evolve_coefficients(spec, &coeffs, grid.times())?;
    Ok(states
        .columns()
        .into_iter()
        .map(|col| StateVector::from_raw(psi0.n_sites(), col.to_owned()))
        .collect())
}

/// Precomputed pieces of the master-equation right-hand side.
struct LindbladRhs<'a> {
    n_sites: usize,
    h: &'a Operator,
    rates: Rates,
    /// −½(Γ_a + Γ_b) + Σ_j γ_φ,j z_j(a) z_j(b).
    diag_coeff: Array2<f64>,
}

impl<'a> LindbladRhs<'a> {
    fn new(h: &'a Operator, rates: Rates) -> Self {
        let n = h.n_sites();
        let dim = h.dim();
        let loss = rates.loss_diagonal(n);
        let diag_coeff = Array2::from_shape_fn((dim, dim), |(a, b)| {
            let deph: f64 = rates
                .dephase
                .iter()
                .enumerate()
                .map(|(j, g)| {
                    let m = 1usize << (n - 1 - j);
                    if (a ^ b) & m == 0 {
                        *g
                    } else {
                        -*g
                    }
                })
                .sum();
            -0.5 * (loss[a] + loss[b]) + deph
        });
        Self {
            n_sites: n,
            h,
            rates,
            diag_coeff,
        }
    }

    fn eval(&self, rho: &Array2<C64>) -> Array2<C64> {
        let a = match self.h.storage() {
            Storage::Sparse(s) => s.matmul_dense(rho),
            Storage::Dense(m) => m.dot(rho),
        };
        let dim = rho.nrows();
        let mi = C64::new(0.0, -1.0);
        let mut out = Array2::from_shape_fn((dim, dim), |(i, j)| {
            mi * (a[[i, j]] - a[[j, i]].conj()) + rho[[i, j]] * self.diag_coeff[[i, j]]
        });
        for (j, &g) in self.rates.relax.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let m = 1usize << (self.n_sites - 1 - j);
            for r in 0..dim {
                if r & m != 0 {
                    continue;
                }
                for c in 0..dim {
                    if c & m == 0 {
                        out[[r, c]] += rho[[r | m, c | m]] * g;
                    }
                }
            }
        }
        out
    }
}

// Dormand–Prince 5(4) tableau.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Absolute per-component error target of the dense integrator.
pub const DENSE_LINDBLAD_ATOL: f64 = 1e-10;

/// Integrates dρ/dt = −i[H, ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ}) with
/// L = σ⁻_j/√T₁ and σᶻ_j/√(2T₂), reporting ρ at every grid time.
pub fn evolve_lindblad_dense(
    h: &Operator,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
    dec: &DecoherenceParams,
) -> Result<Vec<DensityMatrix>> {
    let n = h.n_sites();
    if n > DENSE_LINDBLAD_MAX_SITES {
        return Err(Error::domain(format!(
            "dense Lindblad evolution is limited to {DENSE_LINDBLAD_MAX_SITES} sites"
        )));
    }
    if rho0.n_sites() != n {
        return Err(Error::domain(
            "state and Hamiltonian act on different registers",
        ));
    }
    if !h.is_hermitian() {
        return Err(Error::domain("Hamiltonian must be Hermitian"));
    }
    for w in dec.warnings(n) {
        log::warn!("{w}");
    }
    let rhs = LindbladRhs::new(h, dec.rates(n)?);
    let mut rho = rho0.elements().clone();
    let mut t = 0.0f64;
    let scale = h.max_abs()
        + rhs
            .rates
            .relax
            .iter()
            .chain(&rhs.rates.dephase)
            .sum::<f64>();
    let mut step = if scale > 0.0 { 0.1 / scale } else { 1.0 };
    let mut out = Vec::with_capacity(grid.len());
    let mut k1 = rhs.eval(&rho);
    for &target in grid.times() {
        while t < target {
            let remaining = target - t;
            let hstep = step.min(remaining);
            if hstep < 1e-12 * target.max(1.0) {
                return Err(Error::Integration(format!(
                    "step size underflow at t = {t} ns"
                )));
            }
            let mut ks: Vec<Array2<C64>> = Vec::with_capacity(7);
            ks.push(k1.clone());
            for stage in 1..7 {
                let mut y = rho.clone();
                for (prev, &a) in ks.iter().zip(&DP_A[stage][..stage]) {
                    if a != 0.0 {
                        y.scaled_add(C64::new(a * hstep, 0.0), prev);
                    }
                }
                ks.push(rhs.eval(&y));
            }
            let mut y5 = rho.clone();
            for (k, &b) in ks.iter().zip(&DP_A[6]) {
                if b != 0.0 {
                    y5.scaled_add(C64::new(b * hstep, 0.0), k);
                }
            }
            // ks[6] is f(y5) because the last tableau row equals the weights.
            let mut err = Array2::<C64>::zeros(rho.dim());
            for (k, &e) in ks.iter().zip(&DP_E) {
                if e != 0.0 {
                    err.scaled_add(C64::new(e * hstep, 0.0), k);
                }
            }
            let err_norm = err.iter().map(|z| z.norm()).fold(0.0, f64::max) / DENSE_LINDBLAD_ATOL;
            if err_norm <= 1.0 {
                t = if hstep == remaining {
                    target
                } else {
                    t + hstep
                };
                rho = y5;
                k1 = ks.pop().expect("seven stages");
            }
            let factor = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            if hstep == remaining && err_norm <= 1.0 && factor > 1.0 {
                step = step.max(hstep);
            } else {
                step = hstep * factor;
            }
        }
        out.push(DensityMatrix::from_raw(n, rho.clone()));
    }
    Ok(out)
}

/// Settings of the trajectory unraveling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnravelOptions {
    pub n_trajectories: usize,
    pub seed: u64,
    /// Trajectories are reduced in this many fixed blocks; block means feed
    /// the jackknife error estimates.
    pub n_blocks: usize,
    /// Krylov error target per unit time.
    pub krylov_tol: f64,
    pub max_krylov_dim: usize,
}

impl UnravelOptions {
    pub fn new(n_trajectories: usize, seed: u64) -> Self {
        Self {
            n_trajectories,
            seed,
            n_blocks: 20,
            krylov_tol: 1e-9,
            max_krylov_dim: 30,
        }
    }
}

/// Block-averaged measurements of an unraveling.
#[derive(Clone, Debug)]
pub struct UnravelResult {
    pub grid: TimeGrid,
    pub n_trajectories: usize,
    pub block_sizes: Vec<usize>,
    /// block × time × component.
    pub block_means: Vec<Vec<Vec<C64>>>,
    /// Time of the first quantum jump of each trajectory, if any.
    pub first_jump_times: Vec<Option<f64>>,
    pub jump_counts: Vec<usize>,
}

impl UnravelResult {
    fn mean_of(&self, skip: Option<usize>, t: usize) -> Vec<C64> {
        let m = self.block_means[0][t].len();
        let mut acc = vec![C64::new(0.0, 0.0); m];
        let mut total = 0usize;
        for (b, (means, &size)) in self.block_means.iter().zip(&self.block_sizes).enumerate() {
            if Some(b) == skip {
                continue;
            }
            total += size;
            for (a, v) in acc.iter_mut().zip(&means[t]) {
                *a += v * size as f64;
            }
        }
        acc.iter_mut().for_each(|a| *a /= total.max(1) as f64);
        acc
    }

    /// Ensemble mean of every measured component at time index `t`.
    pub fn mean(&self, t: usize) -> Vec<C64> {
        self.mean_of(None, t)
    }

    /// f(mean) with a delete-one-block jackknife standard error.
    pub fn estimate(&self, t: usize, f: impl Fn(&[C64]) -> f64) -> (f64, f64) {
        let value = f(&self.mean(t));
        let nb = self.block_sizes.iter().filter(|&&s| s > 0).count();
        if nb < 2 {
            return (value, 0.0);
        }
        let loo: Vec<f64> = (0..self.block_sizes.len())
            .filter(|&b| self.block_sizes[b] > 0)
            .map(|b| f(&self.mean_of(Some(b), t)))
            .collect();
        let bar = loo.iter().sum::<f64>() / nb as f64;
        let var =
            loo.iter().map(|x| (x - bar).powi(2)).sum::<f64>() * (nb as f64 - 1.0) / nb as f64;
        (value, var.sqrt())
    }
}

/// e^{−iGτ} with G = H − (i/2)Σ_k L_k†L_k, applied by Arnoldi projection.
struct Propagator<'a> {
    h: &'a Operator,
    half_loss: Vec<f64>,
    tol: f64,
    max_dim: usize,
}

/// Krylov basis and projected generator for one step.
struct KrylovStep {
    beta: f64,
    basis: Vec<Vec<C64>>,
    hess: Array2<C64>,
    tau: f64,
}

impl KrylovStep {
    fn coefficients(&self, tau: f64) -> Result<Vec<C64>> {
        let k = self.hess.nrows();
        if tau == 0.0 || k == 0 {
            let mut e = vec![C64::new(0.0, 0.0); k.max(1)];
            e[0] = C64::new(1.0, 0.0);
            return Ok(e);
        }
        let e = linalg::expm(&self.hess.mapv(|z| z * tau))?;
        Ok(e.column(0).to_vec())
    }

    fn norm_sqr_at(&self, tau: f64) -> Result<f64> {
        let y = self.coefficients(tau)?;
        Ok(self.beta * self.beta * y.iter().map(|z| z.norm_sqr()).sum::<f64>())
    }

    fn state_at(&self, tau: f64, out: &mut [C64]) -> Result<()> {
        let y = self.coefficients(tau)?;
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for (v, c) in self.basis.iter().zip(&y) {
            let c = c * self.beta;
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
        Ok(())
    }
}

impl<'a> Propagator<'a> {
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.h.apply_into(x, y);
        for ((yo, xi), g) in y.iter_mut().zip(x).zip(&self.half_loss) {
            // −i(Hx − i g x) = −iHx − g x
            *yo = C64::new(0.0, -1.0) * *yo - xi * *g;
        }
    }

    fn error_estimate(hess: &Array2<C64>, beta: f64, h_next: f64, tau: f64) -> Result<f64> {
        let k = hess.nrows();
        let e = linalg::expm(&hess.mapv(|z| z * tau))?;
        Ok(beta * h_next * e[[k - 1, 0]].norm() * tau)
    }

    /// Builds a Krylov space at `x` and picks the largest step ≤ `tau_max`
    /// meeting the error target.
    fn step(&self, x: &[C64], tau_max: f64) -> Result<KrylovStep> {
        let dim = x.len();
        let beta = norm(x);
        let mut basis: Vec<Vec<C64>> = vec![x.iter().map(|z| z / beta).collect()];
        let m = self.max_dim.min(dim);
        let mut hfull = Array2::<C64>::zeros((m + 1, m));
        let mut w = vec![C64::new(0.0, 0.0); dim];
        let target = |tau: f64| self.tol * tau.max(1e-300);
        for j in 0..m {
            self.apply(&basis[j], &mut w);
            for pass in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c: C64 = v.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                    if pass == 0 {
                        hfull[[i, j]] = c;
                    } else {
                        hfull[[i, j]] += c;
                    }
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= c * vi;
                    }
                }
            }
            let hn = norm(&w);
            let k = j + 1;
            let hess = hfull.slice(ndarray::s![..k, ..k]).to_owned();
            if hn <= 1e-13 * beta.max(1.0) {
                return Ok(KrylovStep {
                    beta,
                    basis,
                    hess,
                    tau: tau_max,
                });
            }
            hfull[[k, j]] = C64::new(hn, 0.0);
            let check = k >= 4 && (k % 2 == 0 || k == m);
            if check && Self::error_estimate(&hess, 1.0, hn, tau_max)? <= target(tau_max) {
                return Ok(KrylovStep {
                    beta,
                    basis,
                    hess,
                    tau: tau_max,
                });
            }
            if k == m {
                let mut tau = tau_max;
                for _ in 0..60 {
                    tau *= 0.5;
                    if Self::error_estimate(&hess, 1.0, hn, tau)? <= target(tau) {
                        return Ok(KrylovStep {
                            beta,
                            basis,
                            hess,
                            tau,
                        });
                    }
                }
                return Err(Error::Integration("Krylov step size underflow".into()));
            }
            basis.push(w.iter().map(|z| z / hn).collect());
        }
        unreachable!("the loop returns by the last Krylov dimension")
    }
}

/// Precomputed no-jump branch shared by every trajectory.
struct NoJumpBranch {
    states: Vec<Vec<C64>>,
    norms_sqr: Vec<f64>,
    measures: Vec<Vec<C64>>,
}

struct Unraveler<'a, F> {
    n_sites: usize,
    prop: Propagator<'a>,
    rates: Rates,
    times: Vec<f64>,
    measure: F,
}

fn normalized(x: &[C64]) -> Vec<C64> {
    let n = norm(x);
    x.iter().map(|z| z / n).collect()
}

impl<'a, F> Unraveler<'a, F>
where
    F: Fn(&[C64]) -> Vec<C64> + Sync,
{
    /// Propagates from (t, x) to `target` without exceeding the jump
    /// threshold; returns the time reached (a jump is due if < target).
    fn advance(&self, t: &mut f64, x: &mut Vec<C64>, target: f64, r: f64) -> Result<bool> {
        let mut buf = vec![C64::new(0.0, 0.0); x.len()];
        while *t < target {
            let remaining = target - *t;
            let step = self.prop.step(x, remaining)?;
            let end = step.norm_sqr_at(step.tau)?;
            if end > r {
                step.state_at(step.tau, &mut buf)?;
                std::mem::swap(x, &mut buf);
                *t = if step.tau == remaining {
                    target
                } else {
                    *t + step.tau
                };
                continue;
            }
            let (mut lo, mut hi) = (0.0, step.tau);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if step.norm_sqr_at(mid)? > r {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-12 * (*t + hi).max(1.0) {
                    break;
                }
            }
            step.state_at(hi, &mut buf)?;
            std::mem::swap(x, &mut buf);
            *t += hi;
            return Ok(false);
        }
        Ok(true)
    }

    fn jump(&self, x: &mut Vec<C64>, rng: &mut ChaCha8Rng) {
        let n = self.n_sites;
        let p = normalized(x);
        let mut weights = Vec::with_capacity(2 * n);
        for j in 0..n {
            let m = 1usize << (n - 1 - j);
            let pop: f64 = p
                .iter()
                .enumerate()
                .filter(|(s, _)| s & m != 0)
                .map(|(_, z)| z.norm_sqr())
                .sum();
            weights.push(self.rates.relax[j] * pop);
        }
        weights.extend(self.rates.dephase.iter().copied());
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut choice = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                choice = k;
                break;
            }
            u -= w;
        }
        let (site, relax) = if choice < n {
            (choice, true)
        } else {
            (choice - n, false)
        };
        let m = 1usize << (n - 1 - site);
        let mut out = p;
        if relax {
            for s in 0..out.len() {
                out[s] = if s & m == 0 {
                    out[s | m]
                } else {
                    C64::new(0.0, 0.0)
                };
            }
        } else {
            for (s, z) in out.iter_mut().enumerate() {
                if s & m != 0 {
                    *z = -*z;
                }
            }
        }
        *x = normalized(&out);
    }

    fn branch(&self, psi0: &[C64]) -> Result<NoJumpBranch> {
        let mut x = psi0.to_vec();
        let mut t = 0.0;
        let mut states = Vec::with_capacity(self.times.len());
        let mut norms_sqr = Vec::with_capacity(self.times.len());
        let mut measures = Vec::with_capacity(self.times.len());
        for &target in &self.times {
            self.advance(&mut t, &mut x, target, 0.0)?;
            let n2 = x.iter().map(|z| z.norm_sqr()).sum::<f64>();
            measures.push((self.measure)(&normalized(&x)));
            states.push(x.clone());
            norms_sqr.push(n2);
        }
        Ok(NoJumpBranch {
            states,
            norms_sqr,
            measures,
        })
    }

    fn draw(rng: &mut ChaCha8Rng) -> f64 {
        rng.random_range(f64::MIN_POSITIVE..1.0)
    }

    /// Runs one trajectory, adding its measurements into `acc`.
    fn trajectory(
        &self,
        psi0: &[C64],
        branch: &NoJumpBranch,
        rng: &mut ChaCha8Rng,
        acc: &mut [Vec<C64>],
    ) -> Result<(Option<f64>, usize)> {
        let mut r = Self::draw(rng);
        let split = branch.norms_sqr.iter().position(|&n2| n2 <= r);
        let Some(k) = split else {
            for (a, m) in acc.iter_mut().zip(&branch.measures) {
                a.iter_mut().zip(m).for_each(|(x, y)| *x += y);
            }
            return Ok((None, 0));
        };
        for (a, m) in acc.iter_mut().zip(&branch.measures).take(k) {
            a.iter_mut().zip(m).for_each(|(x, y)| *x += y);
        }
        let (mut t, mut x) = if k == 0 {
            (0.0, psi0.to_vec())
        } else {
            (self.times[k - 1], branch.states[k - 1].clone())
        };
        let mut first = None;
        let mut jumps = 0;
        for idx in k..self.times.len() {
            let target = self.times[idx];
            while !self.advance(&mut t, &mut x, target, r)? {
                self.jump(&mut x, rng);
                first.get_or_insert(t);
                jumps += 1;
                r = Self::draw(rng);
            }
            let m = (self.measure)(&normalized(&x));
            acc[idx].iter_mut().zip(&m).for_each(|(a, b)| *a += b);
        }
        Ok((first, jumps))
    }
}

/// Monte Carlo wave-function unraveling of the master equation of
/// [`evolve_lindblad_dense`]. `measure` maps a normalized state to the
/// components to average; block means of those components are returned.
pub fn unravel<F>(
    h: &Operator,
    psi0: &StateVector,
    grid: &TimeGrid,
    dec: &DecoherenceParams,
    opts: &UnravelOptions,
    measure: F,
) -> Result<UnravelResult>
where
    F: Fn(&[C64]) -> Vec<C64> + Sync,
{
    let n = h.n_sites();
    if psi0.n_sites() != n {
        return Err(Error::domain(
            "state and Hamiltonian act on different registers",
        ));
    }
    if opts.n_trajectories == 0 {
        return Err(Error::domain("at least one trajectory is required"));
    }
    if !h.is_hermitian() {
        return Err(Error::domain("Hamiltonian must be Hermitian"));
    }
    for w in dec.warnings(n) {
        log::warn!("{w}");
    }
    let rates = dec.rates(n)?;
    let half_loss = rates
        .loss_diagonal(n)
        .into_iter()
        .map(|g| 0.5 * g)
        .collect();
    let un = Unraveler {
        n_sites: n,
        prop: Propagator {
            h,
            half_loss,
            tol: opts.krylov_tol,
            max_dim: opts.max_krylov_dim.max(2),
        },
        rates,
        times: grid.times().to_vec(),
        measure,
    };
    let psi = psi0.as_slice();
    let branch = un.branch(psi)?;
    let n_comp = branch.measures.first().map_or(0, Vec::len);
    let n_traj = opts.n_trajectories;
    let n_blocks = opts.n_blocks.clamp(1, n_traj);
    let closed = un.rates.is_zero();
    let blocks: Vec<Result<(usize, Vec<Vec<C64>>, Vec<(Option<f64>, usize)>)>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * n_traj / n_blocks;
            let hi = (b + 1) * n_traj / n_blocks;
            let mut acc = vec![vec![C64::new(0.0, 0.0); n_comp]; un.times.len()];
            let mut info = Vec::with_capacity(hi - lo);
            for i in lo..hi {
                if closed {
                    for (a, m) in acc.iter_mut().zip(&branch.measures) {
                        a.iter_mut().zip(m).for_each(|(x, y)| *x += y);
                    }
                    info.push((None, 0));
                    continue;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(i as u64);
                info.push(un.trajectory(psi, &branch, &mut rng, &mut acc)?);
            }
            let size = hi - lo;
            for row in acc.iter_mut() {
                row.iter_mut().for_each(|z| *z /= size.max(1) as f64);
            }
            Ok((size, acc, info))
        })
        .collect();
    let mut block_sizes = Vec::with_capacity(n_blocks);
    let mut block_means = Vec::with_capacity(n_blocks);
    let mut first_jump_times = Vec::with_capacity(n_traj);
    let mut jump_counts = Vec::with_capacity(n_traj);
    for blk in blocks {
        let (size, means, info) = blk?;
        block_sizes.push(size);
        block_means.push(means);
        for (f, c) in info {
            first_jump_times.push(f);
            jump_counts.push(c);
        }
    }
    Ok(UnravelResult {
        grid: grid.clone(),
        n_trajectories: n_traj,
        block_sizes,
        block_means,
        first_jump_times,
        jump_counts,
    })
}

/// Trajectory-averaged density matrices at each grid time.
pub fn evolve_lindblad_trajectories(
    h: &Operator,
    psi0: &StateVector,
    grid: &TimeGrid,
    dec: &DecoherenceParams,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<DensityMatrix>> {
    let opts = UnravelOptions::new(n_traj, seed);
    let res = unravel(h, psi0, grid, dec, &opts, |x| {
        let mut out = Vec::with_capacity(x.len() * x.len());
        for a in x {
            for b in x {
                out.push(a * b.conj());
            }
        }
        out
    })?;
    let dim = psi0.dim();
    Ok((0..grid.len())
        .map(|t| {
            let m = Array2::from_shape_vec((dim, dim), res.mean(t)).expect("square");
            DensityMatrix::from_raw(psi0.n_sites(), m)
        })
        .collect())
}
