//! Experiment orchestration: configuration, disorder-ensemble averaging
//! of every scenario, and CSV/JSON emission.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use crate::dynamics::{
    evolve_coefficients, evolve_lindblad_dense, unravel, DecoherenceParams, TimeGrid,
    UnravelOptions, DENSE_LINDBLAD_MAX_SITES,
};
use crate::error::{Error, Result};
use crate::hamiltonian::{build_hamiltonian, disorder_sample, ChainConfig};
use crate::initial::{preset, spin_coherent, BlochAngles};
use crate::observables::{
    adjacent_pair_marginals, concurrence_of, entropy_2x2, matrix_from, sigma_z_of,
    single_site_marginals, trace_distance_matrices, windowed_mean,
};
use crate::qcore::{expectation, norm, partial_trace, DensityMatrix, Operator, StateVector};
use crate::spectra::{
    density_of_states, diagonalize, goe_folded_pdf, level_spacing_ratios, normalized_energy_of,
    pooled_level_statistics, SpectralData, GOE_MEAN_R,
};
use crate::thermal::{effective_beta, PairMarginals, BETA_TOLERANCE};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Quench,
    Sweep,
    SpectrumStats,
    ThermalCurve,
    LindbladQuench,
    BetaSolve,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Quench => "quench",
            Scenario::Sweep => "sweep",
            Scenario::SpectrumStats => "spectrum-stats",
            Scenario::ThermalCurve => "thermal-curve",
            Scenario::LindbladQuench => "lindblad-quench",
            Scenario::BetaSolve => "beta-solve",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    SigmaZ,
    Entropy,
    TraceDistance,
    Concurrence,
}

impl Observable {
    pub fn name(self) -> &'static str {
        match self {
            Observable::SigmaZ => "sigma_z",
            Observable::Entropy => "entropy",
            Observable::TraceDistance => "trace_distance",
            Observable::Concurrence => "concurrence",
        }
    }

    fn needs_pairs(self) -> bool {
        matches!(self, Observable::TraceDistance | Observable::Concurrence)
    }
}

/// A preset name or explicit Bloch angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Preset(String),
    Angles(BlochAngles),
}

impl InitialState {
    pub fn resolve(&self) -> Result<BlochAngles> {
        match self {
            InitialState::Preset(name) => preset(name),
            InitialState::Angles(a) => a.validated().map_err(|e| Error::config(e.to_string())),
        }
    }
}

/// θ₀ × φ₀ grid for sweeps and energy surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AngleGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Explicit θ₀ values; overrides `n_theta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// Explicit φ₀ values; overrides `n_phi`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self {
            n_theta: 17,
            n_phi: 33,
            theta: None,
            phi: None,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

impl AngleGrid {
    pub fn thetas(&self) -> Vec<f64> {
        self.theta
            .clone()
            .unwrap_or_else(|| linspace(0.0, PI, self.n_theta))
    }

    pub fn phis(&self) -> Vec<f64> {
        self.phi
            .clone()
            .unwrap_or_else(|| linspace(0.0, 2.0 * PI, self.n_phi))
    }

    /// (θ₀, φ₀) pairs with θ₀ as the slow index.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let phis = self.phis();
        self.thetas()
            .into_iter()
            .flat_map(|t| phis.iter().map(move |&p| (t, p)))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let (t, p) = (self.thetas(), self.phis());
        if t.is_empty() || p.is_empty() {
            return Err(Error::config("angle grid is empty"));
        }
        for &th in &t {
            BlochAngles::new(th, 0.0).map_err(|e| Error::config(e.to_string()))?;
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("phi values must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub states: Vec<InitialState>,
    pub grid: AngleGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGridConfig {
    pub t_max_ns: f64,
    pub n_points: usize,
    /// Explicit times in ns; overrides the uniform grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl Default for TimeGridConfig {
    fn default() -> Self {
        Self {
            t_max_ns: 600.0,
            n_points: 121,
            times: None,
        }
    }
}

impl TimeGridConfig {
    pub fn build(&self) -> Result<TimeGrid> {
        match &self.times {
            Some(t) => TimeGrid::new(t.clone()),
            None => TimeGrid::uniform(self.t_max_ns, self.n_points),
        }
        .map_err(|e| Error::config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LindbladMethod {
    #[default]
    Auto,
    Dense,
    Trajectories,
}

/// One experiment, read from a JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub chain: ChainConfig,
    pub initial: InitialConfig,
    pub grid: TimeGridConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoherence: Option<DecoherenceParams>,
    pub n_disorder_samples: usize,
    pub observables: Vec<Observable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Seeds the trajectory streams; disorder uses `chain.seed`.
    pub seed: u64,
    /// Jβ values for thermal curves, J the mean coupling.
    pub betas: Vec<f64>,
    /// Averaging window of sweeps, ns.
    pub window_ns: [f64; 2],
    pub n_bins: usize,
    pub trim_fraction: f64,
    pub n_trajectories: usize,
    pub lindblad_method: LindbladMethod,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Quench,
            chain: ChainConfig::default(),
            initial: InitialConfig::default(),
            grid: TimeGridConfig::default(),
            decoherence: None,
            n_disorder_samples: 20,
            observables: vec![Observable::SigmaZ, Observable::Entropy],
            output_dir: None,
            seed: 0,
            betas: linspace(-2.0, 2.0, 81),
            window_ns: [100.0, 200.0],
            n_bins: 40,
            trim_fraction: 0.1,
            n_trajectories: 400,
            lindblad_method: LindbladMethod::Auto,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Overrides both the disorder and the trajectory seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.chain.seed = seed;
        self
    }

    pub fn states(&self) -> Result<Vec<BlochAngles>> {
        self.initial
            .states
            .iter()
            .map(InitialState::resolve)
            .collect()
    }

    pub fn decoherence(&self) -> DecoherenceParams {
        self.decoherence.clone().unwrap_or_default()
    }

    fn uses_trajectories(&self) -> bool {
        match self.lindblad_method {
            LindbladMethod::Auto => self.chain.n_sites > DENSE_LINDBLAD_MAX_SITES,
            LindbladMethod::Dense => false,
            LindbladMethod::Trajectories => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Domain(m) => Error::Config(m),
            other => other,
        };
        self.chain.validate().map_err(cfg_err)?;
        if self.chain.n_sites < 2 {
            return Err(Error::config("experiments need at least 2 sites"));
        }
        if (1usize << self.chain.n_sites) > crate::spectra::MAX_DIAGONALIZE_DIM {
            return Err(Error::config(format!(
                "n_sites = {} exceeds the diagonalization limit",
                self.chain.n_sites
            )));
        }
        if self.n_disorder_samples == 0 {
            return Err(Error::config("n_disorder_samples must be at least 1"));
        }
        let grid = self.grid.build()?;
        let needs_states = matches!(
            self.scenario,
            Scenario::Quench | Scenario::LindbladQuench | Scenario::BetaSolve
        );
        if needs_states && self.initial.states.is_empty() {
            return Err(Error::config(format!(
                "scenario {} needs at least one initial state",
                self.scenario.name()
            )));
        }
        self.states()?;
        match self.scenario {
            Scenario::Quench | Scenario::LindbladQuench => {
                if self.observables.is_empty() {
                    return Err(Error::config("no observables requested"));
                }
                let mut seen = self.observables.clone();
                seen.sort_by_key(|o| o.name());
                seen.dedup();
                if seen.len() != self.observables.len() {
                    return Err(Error::config("observables listed twice"));
                }
            }
            Scenario::Sweep => {
                self.initial.grid.validate()?;
                let [lo, hi] = self.window_ns;
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::config("window_ns must be an increasing pair"));
                }
                let inside = grid
                    .times()
                    .iter()
                    .filter(|t| **t >= lo && **t <= hi)
                    .count();
                if inside < 2 {
                    return Err(Error::config(
                        "the averaging window holds fewer than 2 grid times",
                    ));
                }
            }
            Scenario::SpectrumStats => {
                self.initial.grid.validate()?;
                if self.n_bins < 2 {
                    return Err(Error::config("n_bins must be at least 2"));
                }
                if !(0.0..0.5).contains(&self.trim_fraction) {
                    return Err(Error::config("trim_fraction must lie in [0, 0.5)"));
                }
            }
            Scenario::ThermalCurve => {
                if self.betas.is_empty() || self.betas.iter().any(|b| !b.is_finite()) {
                    return Err(Error::config(
                        "betas must be a nonempty list of finite values",
                    ));
                }
            }
            Scenario::BetaSolve => {}
        }
        if self.scenario == Scenario::LindbladQuench {
            let dec = self.decoherence();
            dec.rates(self.chain.n_sites).map_err(cfg_err)?;
            if self.n_trajectories == 0 {
                return Err(Error::config("n_trajectories must be at least 1"));
            }
            if self.lindblad_method == LindbladMethod::Dense
                && self.chain.n_sites > DENSE_LINDBLAD_MAX_SITES
            {
                return Err(Error::config(format!(
                    "dense Lindblad evolution is limited to {DENSE_LINDBLAD_MAX_SITES} sites"
                )));
            }
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON, with the
    /// output directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        let digest = Sha256::digest(serde_json::to_vec(&c)?);
        Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
    }
}

/// A named column of values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Equal-length named columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub columns: Vec<Column>,
}

impl ResultTable {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            columns: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if let Some(first) = self.columns.first() {
            if first.values.len() != values.len() {
                return Err(Error::Consistency(format!(
                    "column {name} has {} rows, table has {}",
                    values.len(),
                    first.values.len()
                )));
            }
        }
        if self.column(&name).is_some() {
            return Err(Error::Consistency(format!("duplicate column {name}")));
        }
        self.columns.push(Column { name, values });
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

/// Everything written to the JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Units and sources of the physical inputs.
    pub provenance: BTreeMap<String, String>,
    pub summary: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    /// Table name to column names.
    pub tables: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<ResultTable>,
    pub metadata: RunMetadata,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&ResultTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary(&self, key: &str) -> Option<f64> {
        self.metadata.summary.get(key).copied()
    }
}

/// Per-sample Hamiltonian and spectrum, with lazily built pair marginals of
/// every eigenvector.
pub struct SampleContext {
    pub index: u64,
    pub fields_mhz: Vec<f64>,
    pub h: Operator,
    pub spec: SpectralData,
    pairs: OnceLock<PairMarginals>,
}

impl SampleContext {
    pub fn build(chain: &ChainConfig, index: u64) -> Result<Self> {
        let fields_mhz = disorder_sample(chain, index);
        let h = build_hamiltonian(chain, Some(&fields_mhz))?;
        let spec = diagonalize(&h)?;
        Ok(Self {
            index,
            fields_mhz,
            h,
            spec,
            pairs: OnceLock::new(),
        })
    }

    pub fn pairs(&self) -> &PairMarginals {
        self.pairs
            .get_or_init(|| PairMarginals::compute(&self.spec))
    }
}

/// Runs experiments, optionally keeping per-sample spectra between runs
/// that share a chain.
#[derive(Default)]
pub struct Runner {
    cache: Option<Mutex<HashMap<(String, u64), Arc<SampleContext>>>>,
}

/// Site and adjacent-pair marginals of one state.
#[derive(Clone, Debug)]
struct Marginals {
    sites: Vec<[C64; 4]>,
    pairs: Vec<[C64; 16]>,
}

impl Marginals {
    fn pure(amps: &[C64], n: usize, pairs: bool) -> Self {
        Self {
            sites: single_site_marginals(amps, n),
            pairs: if pairs {
                adjacent_pair_marginals(amps, n)
            } else {
                Vec::new()
            },
        }
    }

    fn mixed(rho: &DensityMatrix, pairs: bool) -> Result<Self> {
        let n = rho.n_sites();
        let flat = |m: DensityMatrix| m.into_elements().into_iter().collect::<Vec<_>>();
        let sites = (1..=n)
            .map(|j| {
                let v = flat(partial_trace(rho, &[j])?);
                Ok([v[0], v[1], v[2], v[3]])
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs = if pairs {
            (1..n)
                .map(|j| {
                    let v = flat(partial_trace(rho, &[j, j + 1])?);
                    let mut a = [C64::new(0.0, 0.0); 16];
                    a.copy_from_slice(&v);
                    Ok(a)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { sites, pairs })
    }

    fn flatten(&self) -> Vec<C64> {
        let mut v = Vec::with_capacity(4 * self.sites.len() + 16 * self.pairs.len());
        self.sites.iter().for_each(|m| v.extend_from_slice(m));
        self.pairs.iter().for_each(|m| v.extend_from_slice(m));
        v
    }

    fn unflatten(v: &[C64], n_sites: usize, pairs: bool) -> Self {
        let sites = (0..n_sites)
            .map(|j| {
                let mut a = [C64::new(0.0, 0.0); 4];
                a.copy_from_slice(&v[4 * j..4 * j + 4]);
                a
            })
            .collect();
        let off = 4 * n_sites;
        let pairs = if pairs {
            (0..n_sites - 1)
                .map(|j| {
                    let mut a = [C64::new(0.0, 0.0); 16];
                    a.copy_from_slice(&v[off + 16 * j..off + 16 * j + 16]);
                    a
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { sites, pairs }
    }
}

/// Site- or pair-averaged value of each observable. Trace distance is NaN
/// when no thermal reference is available.
fn evaluate(
    obs: &[Observable],
    m: &Marginals,
    thermal: Option<&[Array2<C64>]>,
) -> Result<Vec<f64>> {
    let avg = |v: &mut dyn Iterator<Item = Result<f64>>| -> Result<f64> {
        let mut acc = 0.0;
        let mut n = 0usize;
        for x in v {
            acc += x?;
            n += 1;
        }
        Ok(acc / n as f64)
    };
    obs.iter()
        .map(|o| match o {
            Observable::SigmaZ => avg(&mut m.sites.iter().map(|s| Ok(sigma_z_of(s)))),
            Observable::Entropy => avg(&mut m.sites.iter().map(|s| Ok(entropy_2x2(s)))),
            Observable::Concurrence => avg(&mut m
                .pairs
                .iter()
                .map(|p| Ok(concurrence_of(&matrix_from(p, 4))?.value))),
            Observable::TraceDistance => match thermal {
                None => Ok(f64::NAN),
                Some(th) => avg(&mut m
                    .pairs
                    .iter()
                    .zip(th)
                    .map(|(p, t)| trace_distance_matrices(&matrix_from(p, 4), t))),
            },
        })
        .collect()
}

/// Mean and standard error of the mean over the finite entries.
pub fn mean_and_se(values: &[f64]) -> (f64, f64, usize) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 1);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

/// Drift bookkeeping shared by the scenario runs.
#[derive(Default)]
struct Drift {
    values: BTreeMap<&'static str, f64>,
}

impl Drift {
    fn max(&mut self, key: &'static str, v: f64) {
        let e = self.values.entry(key).or_insert(0.0);
        if v > *e || v.is_nan() {
            *e = v;
        }
    }

    fn min(&mut self, key: &'static str, v: f64) {
        let e = self.values.entry(key).or_insert(f64::INFINITY);
        if v < *e {
            *e = v;
        }
    }

    fn merge(&mut self, other: &Drift) {
        for (k, v) in &other.values {
            if k.starts_with("min_") {
                self.min(k, *v);
            } else {
                self.max(k, *v);
            }
        }
    }
}

struct QuenchSample {
    /// [state][observable][time]
    values: Vec<Vec<Vec<f64>>>,
    unreachable: Vec<bool>,
    drift: Drift,
}

struct LindbladSample {
    /// [state][observable][time] (value, trajectory SE)
    open: Vec<Vec<Vec<(f64, f64)>>>,
    closed: QuenchSample,
    drift: Drift,
    mean_jumps: Vec<f64>,
}

fn angles_state(a: BlochAngles, n: usize) -> Result<StateVector> {
    spin_coherent(a, n)
}

impl Runner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keeps every sample context for reuse by later runs.
    pub fn with_cache() -> Self {
        Self {
            cache: Some(Mutex::new(HashMap::new())),
        }
    }

    pub fn sample(&self, chain: &ChainConfig, index: u64) -> Result<Arc<SampleContext>> {
        let Some(cache) = &self.cache else {
            return Ok(Arc::new(SampleContext::build(chain, index)?));
        };
        let key = (serde_json::to_string(chain)?, index);
        if let Some(ctx) = cache.lock().expect("cache lock").get(&key) {
            return Ok(ctx.clone());
        }
        let ctx = Arc::new(SampleContext::build(chain, index)?);
        cache.lock().expect("cache lock").insert(key, ctx.clone());
        Ok(ctx)
    }

    fn samples<T: Send>(
        &self,
        cfg: &ExperimentConfig,
        f: impl Fn(&SampleContext) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        (0..cfg.n_disorder_samples as u64)
            .into_par_iter()
            .map(|i| {
                let ctx = self.sample(&cfg.chain, i)?;
                log::debug!("{}: sample {i}", cfg.scenario.name());
                f(&ctx)
            })
            .collect()
    }

    pub fn run(&self, cfg: &ExperimentConfig) -> Result<RunOutput> {
        cfg.validate()?;
        crate::linalg::ensure_blas();
        let mut meta = RunMetadata {
            config: cfg.clone(),
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            provenance: provenance(cfg),
            summary: BTreeMap::new(),
            notes: Vec::new(),
            tables: BTreeMap::new(),
        };
        let tables = match cfg.scenario {
            Scenario::Quench => self.run_quench(cfg, &mut meta)?,
            Scenario::Sweep => self.run_sweep(cfg, &mut meta)?,
            Scenario::SpectrumStats => self.run_spectrum_stats(cfg, &mut meta)?,
            Scenario::ThermalCurve => self.run_thermal_curve(cfg, &mut meta)?,
            Scenario::LindbladQuench => self.run_lindblad_quench(cfg, &mut meta)?,
            Scenario::BetaSolve => self.run_beta_solve(cfg, &mut meta)?,
        };
        for t in &tables {
            meta.tables.insert(
                t.name.clone(),
                t.column_names().into_iter().map(String::from).collect(),
            );
        }
        Ok(RunOutput {
            tables,
            metadata: meta,
        })
    }

    /// Thermal pair marginals at the state's effective temperature, or
    /// `None` when that temperature does not exist.
    fn thermal_pairs(
        ctx: &SampleContext,
        psi0: &StateVector,
        coupling: f64,
    ) -> Result<Option<Vec<Array2<C64>>>> {
        match effective_beta(psi0, &ctx.spec, &ctx.h, coupling, BETA_TOLERANCE) {
            Ok(t) => Ok(Some(ctx.pairs().thermal(&ctx.spec, t.beta)?)),
            Err(Error::UnreachableTemperature(m)) => {
                log::info!("sample {}: {m}", ctx.index);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn closed_sample(
        cfg: &ExperimentConfig,
        ctx: &SampleContext,
        states: &[BlochAngles],
        grid: &TimeGrid,
    ) -> Result<QuenchSample> {
        let n = cfg.chain.n_sites;
        let obs = &cfg.observables;
        let pairs = obs.iter().any(|o| o.needs_pairs());
        let coupling = cfg.chain.mean_coupling_angular()?;
        let h_scale = ctx.h.max_abs();
        let nt = grid.len();
        let mut out = QuenchSample {
            values: Vec::with_capacity(states.len()),
            unreachable: Vec::with_capacity(states.len()),
            drift: Drift::default(),
        };
        let mut hx = vec![C64::new(0.0, 0.0); ctx.spec.dim()];
        for &a in states {
            let psi0 = angles_state(a, n)?;
            let thermal = if obs.contains(&Observable::TraceDistance) {
                Self::thermal_pairs(ctx, &psi0, coupling)?
            } else {
                None
            };
            out.unreachable
                .push(obs.contains(&Observable::TraceDistance) && thermal.is_none());
            let coeffs = ctx.spec.project(&psi0)?.insert_axis(ndarray::Axis(1));
            let states_t = evolve_coefficients(&ctx.spec, &coeffs, grid.times())?;
            let e0 = expectation(&ctx.h, &psi0)?;
            let mut per_obs = vec![vec![0.0; nt]; obs.len()];
            for (k, col) in states_t.columns().into_iter().enumerate() {
                let amps = col.to_vec();
                out.drift.max("max_norm_drift", (norm(&amps) - 1.0).abs());
                ctx.h.apply_into(&amps, &mut hx);
                let e: f64 = amps.iter().zip(&hx).map(|(a, b)| (a.conj() * b).re).sum();
                out.drift.max("max_energy_drift", (e - e0).abs() / h_scale);
                let m = Marginals::pure(&amps, n, pairs);
                for (o, v) in per_obs
                    .iter_mut()
                    .zip(evaluate(obs, &m, thermal.as_deref())?)
                {
                    o[k] = v;
                }
            }
            out.values.push(per_obs);
        }
        Ok(out)
    }

    fn run_quench(
        &self,
        cfg: &ExperimentConfig,
        meta: &mut RunMetadata,
    ) -> Result<Vec<ResultTable>> {
        let states = cfg.states()?;
        let grid = cfg.grid.build()?;
        let samples = self.samples(cfg, |ctx| Self::closed_sample(cfg, ctx, &states, &grid))?;
        let mut drift = Drift::default();
        samples.iter().for_each(|s| drift.merge(&s.drift));
        record_drift(meta, &drift);
        let skipped = count_unreachable(&samples, states.len());
        note_unreachable(meta, &states, &skipped);
        let mut table = ResultTable::new(cfg.scenario.name());
        let mut axis = (Vec::new(), Vec::new(), Vec::new());
        for a in &states {
            for &t in grid.times() {
                axis.0.push(a.theta0);
                axis.1.push(a.phi0);
                axis.2.push(t);
            }
        }
        table.push("theta0", axis.0)?;
        table.push("phi0", axis.1)?;
        table.push("t_ns", axis.2)?;
        for (k, o) in cfg.observables.iter().enumerate() {
            let (mut mean, mut se) = (Vec::new(), Vec::new());
            for s in 0..states.len() {
                for t in 0..grid.len() {
                    let v: Vec<f64> = samples.iter().map(|x| x.values[s][k][t]).collect();
                    let (m, e, _) = mean_and_se(&v);
                    mean.push(m);
                    se.push(e);
                }
            }
            table.push(o.name(), mean)?;
            table.push(format!("{}_se", o.name()), se)?;
        }
        Ok(vec![table])
    }

    fn run_lindblad_quench(
        &self,
        cfg: &ExperimentConfig,
        meta: &mut RunMetadata,
    ) -> Result<Vec<ResultTable>> {
        let states = cfg.states()?;
        let grid = cfg.grid.build()?;
        let n = cfg.chain.n_sites;
        let dec = cfg.decoherence();
        let trajectories = cfg.uses_trajectories();
        let obs = &cfg.observables;
        let pairs = obs.iter().any(|o| o.needs_pairs());
        let coupling = cfg.chain.mean_coupling_angular()?;
        meta.notes.extend(dec.warnings(n));
        meta.notes.push(format!(
            "decohered columns from {}",
            if trajectories {
                format!("{} quantum trajectories per sample", cfg.n_trajectories)
            } else {
                "dense master-equation integration".to_string()
            }
        ));
        let samples = self.samples(cfg, |ctx| {
            let closed = Self::closed_sample(cfg, ctx, &states, &grid)?;
            let mut drift = Drift::default();
            let mut open = Vec::with_capacity(states.len());
            let mut mean_jumps = Vec::new();
            for (si, &a) in states.iter().enumerate() {
                let psi0 = angles_state(a, n)?;
                let thermal = if closed.unreachable[si] || !obs.contains(&Observable::TraceDistance)
                {
                    None
                } else {
                    Self::thermal_pairs(ctx, &psi0, coupling)?
                };
                let mut per_obs = vec![Vec::with_capacity(grid.len()); obs.len()];
                if trajectories {
                    let mut opts = UnravelOptions::new(cfg.n_trajectories, cfg.seed);
                    // distinct streams per (sample, state)
                    opts.seed = cfg
                        .seed
                        .wrapping_add(ctx.index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
                        .wrapping_add(si as u64);
                    let res = unravel(&ctx.h, &psi0, &grid, &dec, &opts, |x| {
                        Marginals::pure(x, n, pairs).flatten()
                    })?;
                    mean_jumps.push(
                        res.jump_counts.iter().sum::<usize>() as f64 / res.n_trajectories as f64,
                    );
                    for t in 0..grid.len() {
                        for m in &Marginals::unflatten(&res.mean(t), n, pairs).sites {
                            drift.max("max_trace_drift", (m[0].re + m[3].re - 1.0).abs());
                            let herm = (m[1] - m[2].conj())
                                .norm()
                                .max(m[0].im.abs())
                                .max(m[3].im.abs());
                            drift.max("max_hermitian_deviation", herm);
                            let half_tr = 0.5 * (m[0].re + m[3].re);
                            let gap = (0.25 * (m[0].re - m[3].re).powi(2) + m[1].norm_sqr()).sqrt();
                            drift.min("min_density_eigenvalue", half_tr - gap);
                        }
                        for (k, o) in per_obs.iter_mut().enumerate() {
                            let f = |v: &[C64]| {
                                evaluate(
                                    &obs[k..k + 1],
                                    &Marginals::unflatten(v, n, pairs),
                                    thermal.as_deref(),
                                )
                                .map(|x| x[0])
                                .unwrap_or(f64::NAN)
                            };
                            o.push(res.estimate(t, f));
                        }
                    }
                } else {
                    let rho0 = psi0.to_density_matrix();
                    let rhos = evolve_lindblad_dense(&ctx.h, &rho0, &grid, &dec)?;
                    for rho in &rhos {
                        drift.max("max_trace_drift", (rho.trace() - 1.0).abs());
                        drift.max(
                            "max_hermitian_deviation",
                            crate::qcore::hermitian_deviation(rho.elements()),
                        );
                        let ev = rho.eigenvalues()?;
                        drift.min(
                            "min_density_eigenvalue",
                            ev.iter().copied().fold(f64::INFINITY, f64::min),
                        );
                        let m = Marginals::mixed(rho, pairs)?;
                        for (o, v) in per_obs
                            .iter_mut()
                            .zip(evaluate(obs, &m, thermal.as_deref())?)
                        {
                            o.push((v, 0.0));
                        }
                    }
                }
                open.push(per_obs);
            }
            Ok(LindbladSample {
                open,
                closed,
                drift,
                mean_jumps,
            })
        })?;
        let mut drift = Drift::default();
        for s in &samples {
            drift.merge(&s.drift);
            drift.merge(&s.closed.drift);
        }
        record_drift(meta, &drift);
        if trajectories {
            let jumps: Vec<f64> = samples.iter().flat_map(|s| s.mean_jumps.clone()).collect();
            meta.summary
                .insert("mean_jumps_per_trajectory".into(), mean_and_se(&jumps).0);
        }
        let closed: Vec<&QuenchSample> = samples.iter().map(|s| &s.closed).collect();
        let skipped = count_unreachable_refs(&closed, states.len());
        note_unreachable(meta, &states, &skipped);
        let mut table = ResultTable::new(cfg.scenario.name());
        let mut axis = (Vec::new(), Vec::new(), Vec::new());
        for a in &states {
            for &t in grid.times() {
                axis.0.push(a.theta0);
                axis.1.push(a.phi0);
                axis.2.push(t);
            }
        }
        table.push("theta0", axis.0)?;
        table.push("phi0", axis.1)?;
        table.push("t_ns", axis.2)?;
        for (k, o) in obs.iter().enumerate() {
            let mut cols: [Vec<f64>; 4] = Default::default();
            for s in 0..states.len() {
                for t in 0..grid.len() {
                    let open: Vec<(f64, f64)> = samples.iter().map(|x| x.open[s][k][t]).collect();
                    let (m, e) = combine_estimates(&open);
                    cols[0].push(m);
                    cols[1].push(e);
                    let v: Vec<f64> = samples.iter().map(|x| x.closed.values[s][k][t]).collect();
                    let (m, e, _) = mean_and_se(&v);
                    cols[2].push(m);
                    cols[3].push(e);
                }
            }
            let [a, b, c, d] = cols;
            table.push(o.name(), a)?;
            table.push(format!("{}_se", o.name()), b)?;
            table.push(format!("{}_closed", o.name()), c)?;
            table.push(format!("{}_closed_se", o.name()), d)?;
        }
        Ok(vec![table])
    }

    fn run_sweep(
        &self,
        cfg: &ExperimentConfig,
        _meta: &mut RunMetadata,
    ) -> Result<Vec<ResultTable>> {
        let n = cfg.chain.n_sites;
        let points = cfg.initial.grid.points();
        let grid = cfg.grid.build()?;
        let [lo, hi] = cfg.window_ns;
        let eps = 1e-9 * hi.abs().max(1.0);
        let window: Vec<f64> = grid
            .times()
            .iter()
            .copied()
            .filter(|t| *t >= lo - eps && *t <= hi + eps)
            .collect();
        let chunk = 32;
        let samples = self.samples(cfg, |ctx| {
            let mut out = Vec::with_capacity(points.len());
            for block in points.chunks(chunk) {
                let mut psi = Array2::<C64>::zeros((ctx.spec.dim(), block.len()));
                for (c, &(t, p)) in block.iter().enumerate() {
                    let a = BlochAngles::new(t, p)?;
                    psi.column_mut(c).assign(angles_state(a, n)?.amplitudes());
                }
                let coeffs = ctx.spec.project_many(&psi)?;
                let evolved = evolve_coefficients(&ctx.spec, &coeffs, &window)?;
                for s in 0..block.len() {
                    let series: Vec<f64> = (0..window.len())
                        .map(|k| {
                            let col = evolved.column(s * window.len() + k).to_vec();
                            let m = single_site_marginals(&col, n);
                            m.iter().map(entropy_2x2).sum::<f64>() / n as f64
                        })
                        .collect();
                    out.push(windowed_mean(&window, &series, (lo, hi))?);
                }
            }
            Ok(out)
        })?;
        let mut table = ResultTable::new(cfg.scenario.name());
        table.push("theta0", points.iter().map(|p| p.0).collect())?;
        table.push("phi0", points.iter().map(|p| p.1).collect())?;
        let (mut mean, mut se) = (Vec::new(), Vec::new());
        for k in 0..points.len() {
            let v: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let (m, e, _) = mean_and_se(&v);
            mean.push(m);
            se.push(e);
        }
        table.push("entropy_avg", mean)?;
        table.push("entropy_avg_se", se)?;
        Ok(vec![table])
    }

    fn run_spectrum_stats(
        &self,
        cfg: &ExperimentConfig,
        meta: &mut RunMetadata,
    ) -> Result<Vec<ResultTable>> {
        let n = cfg.chain.n_sites;
        let points = cfg.initial.grid.points();
        struct Stats {
            dos: Vec<f64>,
            eps: Vec<f64>,
            mean_r: f64,
            eps_zero: f64,
        }
        let mut spectra_kept: Vec<Arc<SampleContext>> = Vec::new();
        let samples: Vec<(Stats, Arc<SampleContext>)> = (0..cfg.n_disorder_samples as u64)
            .into_par_iter()
            .map(|i| {
                let ctx = self.sample(&cfg.chain, i)?;
                let dos = density_of_states(&ctx.spec, cfg.n_bins)?.density;
                let eps = points
                    .iter()
                    .map(|&(t, p)| {
                        let psi = angles_state(BlochAngles::new(t, p)?, n)?;
                        normalized_energy_of(expectation(&ctx.h, &psi)?, &ctx.spec)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mean_r = level_spacing_ratios(&ctx.spec, cfg.trim_fraction)?.mean_r;
                let eps_zero = normalized_energy_of(0.0, &ctx.spec)?;
                Ok((
                    Stats {
                        dos,
                        eps,
                        mean_r,
                        eps_zero,
                    },
                    ctx,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut stats = Vec::with_capacity(samples.len());
        for (s, ctx) in samples {
            stats.push(s);
            spectra_kept.push(ctx);
        }
        let specs: Vec<&SpectralData> = spectra_kept.iter().map(|c| &c.spec).collect();
        let pooled = pooled_level_statistics(&specs, cfg.trim_fraction)?;
        let per_sample_r: Vec<f64> = stats.iter().map(|s| s.mean_r).collect();
        let zero: Vec<f64> = stats.iter().map(|s| s.eps_zero).collect();
        meta.summary.insert("mean_r".into(), pooled.mean_r);
        meta.summary
            .insert("mean_r_se".into(), mean_and_se(&per_sample_r).1);
        meta.summary.insert("goe_mean_r".into(), GOE_MEAN_R);
        meta.summary.insert(
            "tv_distance_goe".into(),
            pooled.tv_distance_goe(cfg.n_bins)?,
        );
        meta.summary
            .insert("n_ratios".into(), pooled.ratios.len() as f64);
        meta.summary
            .insert("n_dropped".into(), pooled.n_dropped as f64);
        meta.summary
            .insert("epsilon_of_zero_energy".into(), mean_and_se(&zero).0);
        meta.notes.extend(pooled.warnings.iter().cloned());
        if cfg.chain.field_disorder_w == 0.0 {
            meta.notes.push(
                "uniform fields leave the chain reflection symmetry unresolved; level statistics mix its sectors"
                    .into(),
            );
        }

        let mut dos = ResultTable::new(format!("{}-dos", cfg.scenario.name()));
        let hist = density_of_states(specs[0], cfg.n_bins)?;
        dos.push("epsilon", hist.centers())?;
        let (mut m, mut e) = (Vec::new(), Vec::new());
        for b in 0..cfg.n_bins {
            let v: Vec<f64> = stats.iter().map(|s| s.dos[b]).collect();
            let (a, c, _) = mean_and_se(&v);
            m.push(a);
            e.push(c);
        }
        dos.push("density", m)?;
        dos.push("density_se", e)?;

        let mut energy = ResultTable::new(format!("{}-energy", cfg.scenario.name()));
        energy.push("theta0", points.iter().map(|p| p.0).collect())?;
        energy.push("phi0", points.iter().map(|p| p.1).collect())?;
        let (mut m, mut e) = (Vec::new(), Vec::new());
        for k in 0..points.len() {
            let v: Vec<f64> = stats.iter().map(|s| s.eps[k]).collect();
            let (a, c, _) = mean_and_se(&v);
            m.push(a);
            e.push(c);
        }
        energy.push("epsilon", m)?;
        energy.push("epsilon_se", e)?;

        let mut ratios = ResultTable::new(format!("{}-ratios", cfg.scenario.name()));
        let h = pooled.histogram(cfg.n_bins)?;
        let centers = h.centers();
        let goe = centers
            .iter()
            .map(|&r| goe_folded_pdf(r))
            .collect::<Result<Vec<_>>>()?;
        ratios.push("r", centers)?;
        ratios.push("density", h.density)?;
        ratios.push("goe_folded", goe)?;
        Ok(vec![dos, energy, ratios])
    }

    fn run_thermal_curve(
        &self,
        cfg: &ExperimentConfig,
        _meta: &mut RunMetadata,
    ) -> Result<Vec<ResultTable>> {
        let coupling = cfg.chain.mean_coupling_angular()?;
        let samples = self.samples(cfg, |ctx| {
            let pairs = ctx.pairs();
            cfg.betas
                .iter()
                .map(|&jb| {
                    let ms = pairs.thermal(&ctx.spec, jb / coupling)?;
                    let mut acc = 0.0;
                    for m in &ms {
                        acc += concurrence_of(m)?.value;
                    }
                    Ok(acc / ms.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        let mut table = ResultTable::new(cfg.scenario.name());
        table.push("j_beta", cfg.betas.clone())?;
        let (mut m, mut e) = (Vec::new(), Vec::new());
        for k in 0..cfg.betas.len() {
            let v: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let (a, c, _) = mean_and_se(&v);
            m.push(a);
            e.push(c);
        }
        table.push("concurrence", m)?;
        table.push("concurrence_se", e)?;
        Ok(vec![table])
    }

    fn run_beta_solve(
        &self,
        cfg: &ExperimentConfig,
        meta: &mut RunMetadata,
    ) -> Result<Vec<ResultTable>> {
        let states = cfg.states()?;
        let n = cfg.chain.n_sites;
        let coupling = cfg.chain.mean_coupling_angular()?;
        let samples = self.samples(cfg, |ctx| {
            states
                .iter()
                .map(|&a| {
                    let psi = angles_state(a, n)?;
                    let eps = normalized_energy_of(expectation(&ctx.h, &psi)?, &ctx.spec)?;
                    let jb = match effective_beta(&psi, &ctx.spec, &ctx.h, coupling, BETA_TOLERANCE)
                    {
                        Ok(t) => t.beta_dimensionless,
                        Err(Error::UnreachableTemperature(_)) => f64::NAN,
                        Err(e) => return Err(e),
                    };
                    Ok((eps, jb))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut table = ResultTable::new(cfg.scenario.name());
        table.push("theta0", states.iter().map(|a| a.theta0).collect())?;
        table.push("phi0", states.iter().map(|a| a.phi0).collect())?;
        let mut cols: [Vec<f64>; 4] = Default::default();
        let mut unreachable = 0usize;
        for k in 0..states.len() {
            let eps: Vec<f64> = samples.iter().map(|s| s[k].0).collect();
            let jb: Vec<f64> = samples.iter().map(|s| s[k].1).collect();
            let (a, b, _) = mean_and_se(&eps);
            let (c, d, used) = mean_and_se(&jb);
            unreachable += samples.len() - used;
            cols[0].push(a);
            cols[1].push(b);
            cols[2].push(c);
            cols[3].push(d);
        }
        let [a, b, c, d] = cols;
        table.push("epsilon", a)?;
        table.push("epsilon_se", b)?;
        table.push("j_beta", c)?;
        table.push("j_beta_se", d)?;
        meta.summary
            .insert("n_unreachable".into(), unreachable as f64);
        Ok(vec![table])
    }
}

/// Runs one experiment without caching.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    Runner::new().run(cfg)
}

/// Mean over samples of per-sample estimates. With one sample the
/// estimate's own error is reported; otherwise the spread across samples,
/// which already contains the per-sample noise.
fn combine_estimates(v: &[(f64, f64)]) -> (f64, f64) {
    let values: Vec<f64> = v.iter().map(|x| x.0).collect();
    let (m, e, used) = mean_and_se(&values);
    if used == 1 {
        let own = v.iter().find(|x| x.0.is_finite()).map_or(f64::NAN, |x| x.1);
        return (m, own);
    }
    (m, e)
}

fn count_unreachable(samples: &[QuenchSample], n_states: usize) -> Vec<usize> {
    let refs: Vec<&QuenchSample> = samples.iter().collect();
    count_unreachable_refs(&refs, n_states)
}

fn count_unreachable_refs(samples: &[&QuenchSample], n_states: usize) -> Vec<usize> {
    (0..n_states)
        .map(|s| samples.iter().filter(|x| x.unreachable[s]).count())
        .collect()
}

fn note_unreachable(meta: &mut RunMetadata, states: &[BlochAngles], skipped: &[usize]) {
    let mut total = 0;
    for (a, &k) in states.iter().zip(skipped) {
        if k > 0 {
            total += k;
            let msg = format!(
                "state (theta0 = {}, phi0 = {}): {k} samples without a finite effective temperature skipped for trace_distance",
                a.theta0, a.phi0
            );
            log::warn!("{msg}");
            meta.notes.push(msg);
        }
    }
    if meta.config.observables.contains(&Observable::TraceDistance) {
        meta.summary.insert("n_unreachable".into(), total as f64);
    }
}

fn record_drift(meta: &mut RunMetadata, drift: &Drift) {
    for (k, v) in &drift.values {
        meta.summary.insert((*k).to_string(), *v);
    }
}

fn provenance(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert(
        "frequencies".into(),
        "MHz, converted to rad/ns as 2*pi*f*1e-3".into(),
    );
    p.insert("times".into(), "ns".into());
    p.insert(
        "j_beta".into(),
        "inverse temperature times the mean coupling J in rad/ns".into(),
    );
    p.insert(
        "disorder".into(),
        format!(
            "fields uniform on [g - W, g + W], {} samples from seed {}",
            cfg.n_disorder_samples, cfg.chain.seed
        ),
    );
    if cfg.scenario == Scenario::LindbladQuench {
        p.insert("decoherence".into(), "T1 and T2 in ns".into());
    }
    p
}

/// 12 significant digits in positional notation.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .expect("exponent of a finite float");
    let decimals = (11 - exp).max(0) as usize;
    let rounded: f64 = sci.parse().expect("round trip of formatted float");
    format!("{rounded:.decimals$}")
}

/// Writes one CSV per table and a JSON sidecar into `dir`; returns the
/// written paths.
pub fn emit(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let hash = &out.metadata.config_hash;
    let mut written = Vec::new();
    for t in &out.tables {
        let path = dir.join(format!("{}-{hash}.csv", t.name));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(|e| csv_error(&path, e))?;
        w.write_record(t.column_names())
            .map_err(|e| csv_error(&path, e))?;
        for r in 0..t.n_rows() {
            w.write_record(t.columns.iter().map(|c| format_value(c.values[r])))
                .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join(format!(
        "{}-{hash}.json",
        out.metadata.config.scenario.name()
    ));
    let mut text = serde_json::to_string_pretty(&out.metadata)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    };
    Error::io(path, source)
}

/// Named ready-to-run configurations.
pub fn scenario_presets() -> Vec<(&'static str, &'static str, ExperimentConfig)> {
    let named = |names: &[&str]| {
        names
            .iter()
            .map(|n| InitialState::Preset((*n).to_string()))
            .collect::<Vec<_>>()
    };
    let three = named(&["south-pole", "equator-8pi5", "equator-pi4"]);
    vec![
        (
            "relaxation-quench",
            "magnetization, entropy and trace distance after quenches from the three named initial states",
            ExperimentConfig {
                scenario: Scenario::Quench,
                initial: InitialConfig {
                    states: three.clone(),
                    ..InitialConfig::default()
                },
                observables: vec![
                    Observable::SigmaZ,
                    Observable::Entropy,
                    Observable::TraceDistance,
                    Observable::Concurrence,
                ],
                ..ExperimentConfig::default()
            },
        ),
        (
            "entropy-map",
            "window-averaged entanglement entropy over the Bloch sphere of initial states",
            ExperimentConfig {
                scenario: Scenario::Sweep,
                ..ExperimentConfig::default()
            },
        ),
        (
            "level-statistics",
            "density of states, initial-state energy surface and gap-ratio statistics",
            ExperimentConfig {
                scenario: Scenario::SpectrumStats,
                ..ExperimentConfig::default()
            },
        ),
        (
            "thermal-entanglement",
            "nearest-neighbour concurrence of canonical states against inverse temperature",
            ExperimentConfig {
                scenario: Scenario::ThermalCurve,
                ..ExperimentConfig::default()
            },
        ),
        (
            "decohered-quench",
            "entropy and concurrence with and without relaxation and dephasing",
            ExperimentConfig {
                scenario: Scenario::LindbladQuench,
                initial: InitialConfig {
                    states: named(&["equator-pi4"]),
                    ..InitialConfig::default()
                },
                decoherence: Some(DecoherenceParams::default()),
                observables: vec![Observable::Entropy, Observable::Concurrence],
                n_disorder_samples: 4,
                ..ExperimentConfig::default()
            },
        ),
        (
            "effective-temperature",
            "normalized energy and effective inverse temperature of the named initial states in the clean chain",
            ExperimentConfig {
                scenario: Scenario::BetaSolve,
                chain: ChainConfig {
                    field_disorder_w: 0.0,
                    ..ChainConfig::default()
                },
                initial: InitialConfig {
                    states: three,
                    ..InitialConfig::default()
                },
                n_disorder_samples: 1,
                ..ExperimentConfig::default()
            },
        ),
    ]
}

pub fn scenario_preset(name: &str) -> Result<ExperimentConfig> {
    scenario_presets()
        .into_iter()
        .find(|p| p.0 == name)
        .map(|p| p.2)
        .ok_or_else(|| Error::config(format!("unknown scenario preset {name:?}")))
}
