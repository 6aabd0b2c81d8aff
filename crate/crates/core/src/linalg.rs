//! Thin safe wrappers over the LAPACK routines the crate depends on, plus a
//! small-matrix exponential used by the Krylov propagator.

use lapack_sys::__BindgenComplex as LapackComplex;
use ndarray::{Array2, ShapeBuilder};
use std::os::raw::{c_char, c_int};

use crate::error::{Error, Result};
use crate::C64;

extern "C" {
    fn openblas_set_num_threads(n: c_int);
    fn gotoblas_corename() -> *const c_char;
    fn gotoblas_dynamic_init();
    fn gotoblas_dynamic_quit();
}

/// Name of the kernel set OpenBLAS dispatched to.
pub fn blas_core_name() -> String {
    // SAFETY: returns a pointer to a static NUL-terminated string.
    unsafe { std::ffi::CStr::from_ptr(gotoblas_corename()) }
        .to_string_lossy()
        .into_owned()
}

/// Compares a mid-sized DGEMM against a plain triple loop on integers,
/// where both are exact.
pub fn dgemm_self_check() -> bool {
    [200, 256].into_iter().all(dgemm_exact)
}

fn dgemm_exact(n: usize) -> bool {
    let a = Array2::from_shape_fn((n, n), |(i, j)| ((i * 7 + j * 13) % 17) as f64 - 8.0);
    let b = Array2::from_shape_fn((n, n), |(i, j)| ((i * 5 + j * 3) % 11) as f64 - 5.0);
    let c = a.dot(&b);
    (0..n).all(|i| {
        (0..n).all(|j| {
            let s: f64 = (0..n).map(|k| a[[i, k]] * b[[k, j]]).sum();
            s == c[[i, j]]
        })
    })
}

/// Some OpenBLAS builds pick kernels that miscompute DGEMM on newer CPUs.
/// If the self check fails, dispatch is redone with older kernel sets until
/// one passes. Runs once per process, at load time on Linux.
pub fn ensure_blas() {
    static DONE: std::sync::Once = std::sync::Once::new();
    DONE.call_once(repair_blas_dispatch);
}

fn repair_blas_dispatch() {
    if dgemm_self_check() {
        return;
    }
    let detected = blas_core_name();
    for core in ["SkylakeX", "Haswell", "Sandybridge", "Nehalem"] {
        std::env::set_var("OPENBLAS_CORETYPE", core);
        // SAFETY: runs once at load time, before any other BLAS call can be
        // in flight; quit only clears the dispatch pointer that init resets.
        unsafe {
            gotoblas_dynamic_quit();
            gotoblas_dynamic_init();
        }
        if dgemm_self_check() {
            log::debug!("OpenBLAS kernels {detected} failed the DGEMM check; using {core}");
            return;
        }
    }
}

#[cfg(target_os = "linux")]
#[used]
#[link_section = ".init_array"]
static REPAIR_BLAS: extern "C" fn() = {
    extern "C" fn run() {
        ensure_blas();
    }
    run
};

/// Caps the BLAS worker pool. One thread keeps reductions in a fixed order.
pub fn set_blas_threads(n: usize) {
    // SAFETY: plain setter exported by the linked OpenBLAS.
    unsafe { openblas_set_num_threads(n.max(1) as c_int) }
}

fn to_c_int(n: usize) -> Result<c_int> {
    c_int::try_from(n).map_err(|_| Error::domain(format!("matrix dimension {n} too large")))
}

fn lapack_info(routine: &str, info: c_int) -> Result<()> {
    match info {
        0 => Ok(()),
        i if i < 0 => Err(Error::Eigensolver(format!(
            "{routine}: illegal value in argument {}",
            -i
        ))),
        i => Err(Error::Eigensolver(format!(
            "{routine}: failed to converge (info = {i})"
        ))),
    }
}

/// Column-major copy of a square matrix.
fn column_major<T: Clone>(a: &Array2<T>) -> Vec<T> {
    a.t().iter().cloned().collect()
}

/// Eigen-decomposition of a real symmetric matrix (divide and conquer).
///
/// Eigenvalues are returned ascending; eigenvectors, when requested, are the
/// columns of the returned matrix.
pub fn eigh_real(a: &Array2<f64>, vectors: bool) -> Result<(Vec<f64>, Option<Array2<f64>>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::domain("eigh_real: matrix is not square"));
    }
    if n == 0 {
        return Ok((Vec::new(), vectors.then(|| Array2::zeros((0, 0)))));
    }
    let ni = to_c_int(n)?;
    let mut buf = column_major(a);
    let mut w = vec![0.0f64; n];
    let jobz = if vectors { b'V' } else { b'N' } as c_char;
    let uplo = b'L' as c_char;
    let mut info: c_int = 0;
    let mut work_query = [0.0f64];
    let mut iwork_query = [0 as c_int];
    // SAFETY: all buffers are sized per the LAPACK contract; the first call is a
    // workspace query that only writes the first element of each work array.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &ni,
            buf.as_mut_ptr(),
            &ni,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &-1,
            iwork_query.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    lapack_info("dsyevd", info)?;
    let lwork = work_query[0] as c_int;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    // SAFETY: workspace sizes come from the query above.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &ni,
            buf.as_mut_ptr(),
            &ni,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    lapack_info("dsyevd", info)?;
    let vecs = if vectors {
        Some(
            Array2::from_shape_vec((n, n).f(), buf)
                .map_err(|e| Error::Eigensolver(e.to_string()))?,
        )
    } else {
        None
    };
    Ok((w, vecs))
}

/// Eigen-decomposition of a complex Hermitian matrix (divide and conquer).
pub fn eigh_complex(a: &Array2<C64>, vectors: bool) -> Result<(Vec<f64>, Option<Array2<C64>>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::domain("eigh_complex: matrix is not square"));
    }
    if n == 0 {
        return Ok((Vec::new(), vectors.then(|| Array2::zeros((0, 0)))));
    }
    let ni = to_c_int(n)?;
    let mut buf = column_major(a);
    let mut w = vec![0.0f64; n];
    let jobz = if vectors { b'V' } else { b'N' } as c_char;
    let uplo = b'L' as c_char;
    let mut info: c_int = 0;
    let mut work_query = [C64::new(0.0, 0.0)];
    let mut rwork_query = [0.0f64];
    let mut iwork_query = [0 as c_int];
    // SAFETY: workspace query; C64 and the bindgen complex type are both
    // repr(C) pairs of f64.
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &ni,
            buf.as_mut_ptr() as *mut LapackComplex<f64>,
            &ni,
            w.as_mut_ptr(),
            work_query.as_mut_ptr() as *mut LapackComplex<f64>,
            &-1,
            rwork_query.as_mut_ptr(),
            &-1,
            iwork_query.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    lapack_info("zheevd", info)?;
    let lwork = work_query[0].re as c_int;
    let lrwork = rwork_query[0] as c_int;
    let liwork = iwork_query[0];
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    // SAFETY: workspace sizes come from the query above.
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &ni,
            buf.as_mut_ptr() as *mut LapackComplex<f64>,
            &ni,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut LapackComplex<f64>,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    lapack_info("zheevd", info)?;
    let vecs = if vectors {
        Some(
            Array2::from_shape_vec((n, n).f(), buf)
                .map_err(|e| Error::Eigensolver(e.to_string()))?,
        )
    } else {
        None
    };
    Ok((w, vecs))
}

/// Eigenvalues of a general complex square matrix.
pub fn eigvals_general(a: &Array2<C64>) -> Result<Vec<C64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::domain("eigvals_general: matrix is not square"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let ni = to_c_int(n)?;
    let mut buf = column_major(a);
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut dummy = [C64::new(0.0, 0.0)];
    let no = b'N' as c_char;
    let one: c_int = 1;
    let lwork = to_c_int(4 * n)?;
    let mut work = vec![C64::new(0.0, 0.0); 4 * n];
    let mut rwork = vec![0.0f64; 2 * n];
    let mut info: c_int = 0;
    // SAFETY: no eigenvectors requested, so VL/VR are never referenced; the
    // workspace is at least the documented minimum 2n.
    unsafe {
        lapack_sys::zgeev_(
            &no,
            &no,
            &ni,
            buf.as_mut_ptr() as *mut LapackComplex<f64>,
            &ni,
            w.as_mut_ptr() as *mut LapackComplex<f64>,
            dummy.as_mut_ptr() as *mut LapackComplex<f64>,
            &one,
            dummy.as_mut_ptr() as *mut LapackComplex<f64>,
            &one,
            work.as_mut_ptr() as *mut LapackComplex<f64>,
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    lapack_info("zgeev", info)?;
    Ok(w)
}

/// Solves `a x = b` for square `a`.
pub fn solve(a: &Array2<C64>, b: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::domain("solve: dimension mismatch"));
    }
    let nrhs = b.ncols();
    let ni = to_c_int(n)?;
    let nr = to_c_int(nrhs)?;
    let mut abuf = column_major(a);
    let mut bbuf = column_major(b);
    let mut ipiv = vec![0 as c_int; n];
    let mut info: c_int = 0;
    // SAFETY: buffers are n×n and n×nrhs in column-major order.
    unsafe {
        lapack_sys::zgesv_(
            &ni,
            &nr,
            abuf.as_mut_ptr() as *mut LapackComplex<f64>,
            &ni,
            ipiv.as_mut_ptr(),
            bbuf.as_mut_ptr() as *mut LapackComplex<f64>,
            &ni,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Consistency(format!(
            "zgesv: singular system (info = {info})"
        )));
    }
    Array2::from_shape_vec((n, nrhs).f(), bbuf).map_err(|e| Error::Consistency(e.to_string()))
}

fn one_norm(a: &Array2<C64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant. Intended for the small projected matrices of Krylov methods.
pub fn expm(a: &Array2<C64>) -> Result<Array2<C64>> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;

    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scale = C64::new(2f64.powi(-squarings), 0.0);
    let a = a.mapv(|z| z * scale);
    let ident = Array2::<C64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let c = |k: usize| C64::new(B[k], 0.0);

    let inner_u = a6.mapv(|z| z * c(13)) + a4.mapv(|z| z * c(11)) + a2.mapv(|z| z * c(9));
    let u_poly = a6.dot(&inner_u)
        + a6.mapv(|z| z * c(7))
        + a4.mapv(|z| z * c(5))
        + a2.mapv(|z| z * c(3))
        + ident.mapv(|z| z * c(1));
    let u = a.dot(&u_poly);
    let inner_v = a6.mapv(|z| z * c(12)) + a4.mapv(|z| z * c(10)) + a2.mapv(|z| z * c(8));
    let v = a6.dot(&inner_v)
        + a6.mapv(|z| z * c(6))
        + a4.mapv(|z| z * c(4))
        + a2.mapv(|z| z * c(2))
        + ident.mapv(|z| z * c(0));

    let mut r = solve(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    Ok(r)
}
