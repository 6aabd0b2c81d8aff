//! C interface to the `thermalize` library.
//!
//! Every function returns a [`ThzStatus`]; on failure the message is
//! available from [`thz_last_error_message`] on the same thread. Chains are
//! opaque handles created by `thz_chain_new`/`thz_chain_from_json` and
//! released with `thz_chain_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use thermalize::dynamics::{evolve_unitary, TimeGrid};
use thermalize::hamiltonian::{build_hamiltonian, disorder_sample, ChainConfig, SiteValues};
use thermalize::initial::{spin_coherent, BlochAngles};
use thermalize::observables::{mean_sigma_z, page_value, site_averaged_entropy};
use thermalize::qcore::{expectation, Operator, StateVector};
use thermalize::runner::{emit, ExperimentConfig, Runner};
use thermalize::spectra::{diagonalize, goe_pdf, normalized_energy, SpectralData};
use thermalize::thermal::{effective_beta, thermal_concurrence_curve, BETA_TOLERANCE};
use thermalize::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    NotDiagonalized = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// One disorder sample of a chain: its Hamiltonian and, once
/// `thz_chain_diagonalize` has run, its spectrum.
pub struct ThzChain {
    config: ChainConfig,
    h: Operator,
    spec: Option<SpectralData>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(ThzStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Serde(_) => ThzStatus::Config,
            Error::Domain(_) => ThzStatus::InvalidArgument,
            Error::Io { .. } => ThzStatus::Io,
            e if e.is_numerical() => ThzStatus::Numerical,
            _ => ThzStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: ThzStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ThzStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ThzStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ThzStatus::Panic
        }
    }
}

unsafe fn chain_ref<'a>(chain: *const ThzChain) -> Result<&'a ThzChain, Failure> {
    chain
        .as_ref()
        .ok_or_else(|| fail(ThzStatus::NullPointer, "chain handle is null"))
}

unsafe fn out_ref<'a, T>(out: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    out.as_mut()
        .ok_or_else(|| fail(ThzStatus::NullPointer, format!("{what} is null")))
}

unsafe fn input_slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(ThzStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output_slice<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if ptr.is_null() || len == 0 {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(fail(ThzStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(ThzStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn spectrum(chain: &ThzChain) -> Result<&SpectralData, Failure> {
    chain.spec.as_ref().ok_or_else(|| {
        fail(
            ThzStatus::NotDiagonalized,
            "call thz_chain_diagonalize first",
        )
    })
}

fn coherent(chain: &ThzChain, theta0: f64, phi0: f64) -> Result<StateVector, Failure> {
    let angles = BlochAngles::new(theta0, phi0)?;
    Ok(spin_coherent(angles, chain.config.n_sites)?)
}

fn make_chain(config: ChainConfig, sample: u64) -> Result<Box<ThzChain>, Failure> {
    config.validate()?;
    let fields = disorder_sample(&config, sample);
    let h = build_hamiltonian(&config, Some(&fields))?;
    Ok(Box::new(ThzChain {
        config,
        h,
        spec: None,
    }))
}

/// Creates a chain with uniform couplings and fields (MHz), drive phase
/// π/2, and the disorder draw `sample` of `seed`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn thz_chain_new(
    n_sites: usize,
    coupling_mhz: f64,
    field_mhz: f64,
    disorder_mhz: f64,
    seed: u64,
    sample: u64,
    out: *mut *mut ThzChain,
) -> ThzStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let config = ChainConfig {
            n_sites,
            coupling_j: SiteValues::Uniform(coupling_mhz),
            field_g_mean: field_mhz,
            field_disorder_w: disorder_mhz,
            seed,
            ..ChainConfig::default()
        };
        *out = Box::into_raw(make_chain(config, sample)?);
        Ok(())
    })
}

/// Creates a chain from a JSON chain configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thz_chain_from_json(
    json: *const c_char,
    sample: u64,
    out: *mut *mut ThzChain,
) -> ThzStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let text = c_str(json, "json")?;
        let config: ChainConfig = serde_json::from_str(text)
            .map_err(|e| fail(ThzStatus::Config, format!("chain config: {e}")))?;
        *out = Box::into_raw(make_chain(config, sample)?);
        Ok(())
    })
}

/// Releases a chain. Null is ignored.
///
/// # Safety
/// `chain` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn thz_chain_free(chain: *mut ThzChain) {
    if !chain.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(chain))));
    }
}

/// Hilbert-space dimension 2^N.
///
/// # Safety
/// `chain` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thz_chain_dim(chain: *const ThzChain, out: *mut usize) -> ThzStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        *out_ref(out, "out")? = chain.h.dim();
        Ok(())
    })
}

/// Full eigendecomposition; required by the spectral queries below.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn thz_chain_diagonalize(chain: *mut ThzChain) -> ThzStatus {
    guard(|| {
        let chain = chain
            .as_mut()
            .ok_or_else(|| fail(ThzStatus::NullPointer, "chain handle is null"))?;
        if chain.spec.is_none() {
            chain.spec = Some(diagonalize(&chain.h)?);
        }
        Ok(())
    })
}

/// Copies the ascending eigenvalues (rad/ns) into `out[0..len]`; `len` must
/// be at least the dimension.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn thz_chain_eigenvalues(
    chain: *const ThzChain,
    out: *mut f64,
    len: usize,
) -> ThzStatus {
    guard(|| {
        let spec = spectrum(chain_ref(chain)?)?;
        let ev = spec.eigenvalues();
        if len < ev.len() {
            return Err(fail(
                ThzStatus::BufferTooSmall,
                format!("need {} values, got room for {len}", ev.len()),
            ));
        }
        let buf =
            output_slice(out, len).ok_or_else(|| fail(ThzStatus::NullPointer, "out is null"))?;
        buf[..ev.len()].copy_from_slice(ev);
        Ok(())
    })
}

/// Dimensionless Jβ of the canonical ensemble matching the energy of the
/// spin-coherent state (θ₀, φ₀).
///
/// # Safety
/// `chain` must be a live handle and `j_beta` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thz_effective_beta(
    chain: *const ThzChain,
    theta0: f64,
    phi0: f64,
    j_beta: *mut f64,
) -> ThzStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let out = out_ref(j_beta, "j_beta")?;
        let spec = spectrum(chain)?;
        let psi = coherent(chain, theta0, phi0)?;
        let j = chain.config.mean_coupling_angular()?;
        *out = effective_beta(&psi, spec, &chain.h, j, BETA_TOLERANCE)?.beta_dimensionless;
        Ok(())
    })
}

/// Normalized energy ε ∈ [0, 1] of the spin-coherent state (θ₀, φ₀).
///
/// # Safety
/// `chain` must be a live handle and `epsilon` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thz_normalized_energy(
    chain: *const ThzChain,
    theta0: f64,
    phi0: f64,
    epsilon: *mut f64,
) -> ThzStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let out = out_ref(epsilon, "epsilon")?;
        let psi = coherent(chain, theta0, phi0)?;
        *out = normalized_energy(&psi, spectrum(chain)?, &chain.h)?;
        Ok(())
    })
}

/// Quench from (θ₀, φ₀): writes the site-averaged ⟨σᶻ⟩ and single-site
/// entropy at each of the `n_times` times (ns). Either output may be null.
///
/// # Safety
/// `times` must hold `n_times` doubles; non-null outputs must have room
/// for `n_times` doubles.
#[no_mangle]
pub unsafe extern "C" fn thz_quench(
    chain: *const ThzChain,
    theta0: f64,
    phi0: f64,
    times: *const f64,
    n_times: usize,
    sigma_z: *mut f64,
    entropy: *mut f64,
) -> ThzStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let ts = input_slice(times, n_times, "times")?;
        if ts.is_empty() {
            return Err(fail(ThzStatus::InvalidArgument, "no times given"));
        }
        let spec = spectrum(chain)?;
        let psi0 = coherent(chain, theta0, phi0)?;
        let mut sz = output_slice(sigma_z, n_times);
        let mut ee = output_slice(entropy, n_times);
        let grid = TimeGrid::new(ts.to_vec())?;
        let states = evolve_unitary(spec, &psi0, &grid)?;
        for (k, t) in ts.iter().enumerate() {
            let i = grid.times().partition_point(|x| x < t);
            let psi = &states[i];
            if let Some(buf) = sz.as_deref_mut() {
                buf[k] = mean_sigma_z(psi)?;
            }
            if let Some(buf) = ee.as_deref_mut() {
                buf[k] = site_averaged_entropy(psi)?;
            }
        }
        Ok(())
    })
}

/// Site-averaged nearest-neighbour concurrence of the canonical state at
/// each dimensionless Jβ.
///
/// # Safety
/// `j_betas` must hold `n` doubles and `out` have room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn thz_thermal_concurrence(
    chain: *const ThzChain,
    j_betas: *const f64,
    n: usize,
    out: *mut f64,
) -> ThzStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let jb = input_slice(j_betas, n, "j_betas")?;
        let buf = output_slice(out, n);
        let spec = spectrum(chain)?;
        let j = chain.config.mean_coupling_angular()?;
        let betas: Vec<f64> = jb.iter().map(|x| x / j).collect();
        let curve = thermal_concurrence_curve(spec, &betas)?;
        if let Some(buf) = buf {
            buf.copy_from_slice(&curve);
        } else if n > 0 {
            return Err(fail(ThzStatus::NullPointer, "out is null"));
        }
        Ok(())
    })
}

/// Energy expectation (rad/ns) of the spin-coherent state (θ₀, φ₀); does
/// not need the spectrum.
///
/// # Safety
/// `chain` must be a live handle and `energy` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thz_energy(
    chain: *const ThzChain,
    theta0: f64,
    phi0: f64,
    energy: *mut f64,
) -> ThzStatus {
    guard(|| {
        let chain = chain_ref(chain)?;
        let out = out_ref(energy, "energy")?;
        let psi = coherent(chain, theta0, phi0)?;
        *out = expectation(&chain.h, &psi)?;
        Ok(())
    })
}

/// Page value of a single site in an `n_sites` random pure state.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thz_page_value(n_sites: usize, out: *mut f64) -> ThzStatus {
    guard(|| {
        *out_ref(out, "out")? = page_value(n_sites)?;
        Ok(())
    })
}

/// GOE surmise density of the gap ratio r.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thz_goe_pdf(r: f64, out: *mut f64) -> ThzStatus {
    guard(|| {
        *out_ref(out, "out")? = goe_pdf(r)?;
        Ok(())
    })
}

/// Runs an experiment described by a JSON config and writes its CSV tables
/// and JSON sidecar into `out_dir` (null: the config's `output_dir`, else
/// `results`).
///
/// # Safety
/// `config_json` must be NUL-terminated; `out_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn thz_run_config_json(
    config_json: *const c_char,
    out_dir: *const c_char,
) -> ThzStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(c_str(config_json, "config_json")?)?;
        let dir = if out_dir.is_null() {
            cfg.output_dir.clone().unwrap_or_else(|| "results".into())
        } else {
            Path::new(c_str(out_dir, "out_dir")?).to_path_buf()
        };
        let output = Runner::new().run(&cfg)?;
        emit(&output, &dir)?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn thz_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn thz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
