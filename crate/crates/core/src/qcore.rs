//! States, operators and the basis convention shared by every other module.
//!
//! Basis states are indexed by an `n_sites`-bit integer. Site 1 is the most
//! significant bit. Bit value 0 is |+Z⟩ (σᶻ = +1) and bit value 1 is |−Z⟩
//! (σᶻ = −1), which is also the excitation: σ⁺ = |−Z⟩⟨+Z| and σ⁻ = |+Z⟩⟨−Z|.

use ndarray::{Array1, Array2};
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg;
use crate::C64;

/// Largest chain the operator layer will build.
pub const MAX_SITES: usize = 20;

/// Numerical thresholds used by validation and consistency checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub state_norm: f64,
    pub density_hermitian: f64,
    pub density_trace: f64,
    pub min_eigenvalue: f64,
    pub operator_hermitian: f64,
    pub imag_discard: f64,
    pub imag_error: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        state_norm: 1e-10,
        density_hermitian: 1e-10,
        density_trace: 1e-10,
        min_eigenvalue: -1e-8,
        operator_hermitian: 1e-12,
        imag_discard: 1e-10,
        imag_error: 1e-8,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub(crate) fn check_n_sites(n_sites: usize) -> Result<()> {
    if n_sites == 0 || n_sites > MAX_SITES {
        return Err(Error::domain(format!(
            "n_sites must be in [1, {MAX_SITES}], got {n_sites}"
        )));
    }
    Ok(())
}

fn check_site(n_sites: usize, site: usize) -> Result<()> {
    if site == 0 || site > n_sites {
        return Err(Error::domain(format!(
            "site index {site} outside [1, {n_sites}]"
        )));
    }
    Ok(())
}

/// Bit mask of a 1-based site index.
#[inline]
pub fn site_mask(n_sites: usize, site: usize) -> usize {
    1usize << (n_sites - site)
}

/// Pure many-body state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_sites: usize,
    amps: Array1<C64>,
}

impl StateVector {
    /// Wraps amplitudes that must already have unit norm.
    pub fn new(n_sites: usize, amps: Array1<C64>) -> Result<Self> {
        check_n_sites(n_sites)?;
        if amps.len() != 1usize << n_sites {
            return Err(Error::domain(format!(
                "state of {n_sites} sites needs {} amplitudes, got {}",
                1usize << n_sites,
                amps.len()
            )));
        }
        let norm = norm(amps.as_slice().expect("contiguous"));
        if (norm - 1.0).abs() > Tolerances::DEFAULT.state_norm {
            return Err(Error::domain(format!("state norm {norm} is not 1")));
        }
        Ok(Self { n_sites, amps })
    }

    /// Rescales the amplitudes to unit norm.
    pub fn normalized(n_sites: usize, mut amps: Array1<C64>) -> Result<Self> {
        check_n_sites(n_sites)?;
        let nrm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(nrm > 0.0 && nrm.is_finite()) {
            return Err(Error::domain(
                "cannot normalize a zero or non-finite vector",
            ));
        }
        amps.mapv_inplace(|z| z / nrm);
        Self::new(n_sites, amps)
    }

    pub fn basis(n_sites: usize, index: usize) -> Result<Self> {
        check_n_sites(n_sites)?;
        let dim = 1usize << n_sites;
        if index >= dim {
            return Err(Error::domain(format!("basis index {index} >= {dim}")));
        }
        let mut amps = Array1::zeros(dim);
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { n_sites, amps })
    }

    pub(crate) fn from_raw(n_sites: usize, amps: Array1<C64>) -> Self {
        debug_assert_eq!(amps.len(), 1usize << n_sites);
        Self { n_sites, amps }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &Array1<C64> {
        &self.amps
    }

    pub fn as_slice(&self) -> &[C64] {
        self.amps.as_slice().expect("contiguous")
    }

    pub fn into_amplitudes(self) -> Array1<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        norm(self.as_slice())
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(Error::domain("inner product of states of different size"));
        }
        Ok(self
            .amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn to_density_matrix(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }
}

pub(crate) fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Mixed state on the full or a reduced register.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n_sites: usize,
    elems: Array2<C64>,
}

impl DensityMatrix {
    /// Checks shape, Hermiticity and unit trace. Positivity is checked by
    /// [`DensityMatrix::validate`].
    pub fn new(n_sites: usize, elems: Array2<C64>) -> Result<Self> {
        check_n_sites(n_sites)?;
        let dim = 1usize << n_sites;
        if elems.dim() != (dim, dim) {
            return Err(Error::domain(format!(
                "density matrix of {n_sites} sites must be {dim}x{dim}"
            )));
        }
        let tol = Tolerances::DEFAULT;
        let dev = hermitian_deviation(&elems);
        if dev > tol.density_hermitian {
            return Err(Error::domain(format!(
                "density matrix is not Hermitian (deviation {dev:e})"
            )));
        }
        let tr: C64 = elems.diag().sum();
        if (tr.re - 1.0).abs() > tol.density_trace || tr.im.abs() > tol.density_trace {
            return Err(Error::domain(format!("density matrix trace {tr} is not 1")));
        }
        Ok(Self { n_sites, elems })
    }

    pub(crate) fn from_raw(n_sites: usize, elems: Array2<C64>) -> Self {
        Self { n_sites, elems }
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let a = psi.amplitudes();
        let dim = a.len();
        let elems = Array2::from_shape_fn((dim, dim), |(i, j)| a[i] * a[j].conj());
        Self {
            n_sites: psi.n_sites(),
            elems,
        }
    }

    pub fn maximally_mixed(n_sites: usize) -> Result<Self> {
        check_n_sites(n_sites)?;
        let dim = 1usize << n_sites;
        let elems = Array2::from_diag_elem(dim, C64::new(1.0 / dim as f64, 0.0));
        Ok(Self { n_sites, elems })
    }

    /// Full validation including the minimum-eigenvalue bound.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(&Tolerances::DEFAULT)
    }

    pub fn validate_with(&self, tol: &Tolerances) -> Result<()> {
        let dev = hermitian_deviation(&self.elems);
        if dev > tol.density_hermitian {
            return Err(Error::Consistency(format!(
                "density matrix Hermiticity deviation {dev:e}"
            )));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > tol.density_trace {
            return Err(Error::Consistency(format!("density matrix trace {tr}")));
        }
        let min = self.eigenvalues()?.first().copied().unwrap_or(0.0);
        if min < tol.min_eigenvalue {
            return Err(Error::Consistency(format!(
                "density matrix has eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.elems.nrows()
    }

    pub fn elements(&self) -> &Array2<C64> {
        &self.elems
    }

    pub fn into_elements(self) -> Array2<C64> {
        self.elems
    }

    pub fn trace(&self) -> f64 {
        self.elems.diag().iter().map(|z| z.re).sum()
    }

    pub fn purity(&self) -> f64 {
        self.elems.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        if self.dim() == 2 {
            return Ok(eigenvalues_2x2(&self.elems).to_vec());
        }
        Ok(linalg::eigh_complex(&self.elems, false)?.0)
    }
}

/// Ascending eigenvalues of a 2×2 Hermitian matrix.
pub(crate) fn eigenvalues_2x2(m: &Array2<C64>) -> [f64; 2] {
    let a = m[[0, 0]].re;
    let d = m[[1, 1]].re;
    let b = m[[0, 1]];
    let mid = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    [mid - r, mid + r]
}

pub(crate) fn hermitian_deviation(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    dev
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triples; duplicates are summed and exact
    /// zeros dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= dim || *c >= dim) {
            return Err(Error::domain(format!(
                "entry ({r}, {c}) outside a {dim}x{dim} matrix"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; dim + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&lr), Some(&lc)) = (rows.last(), indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().expect("nonempty") += v;
                    continue;
                }
            }
            rows.push(r);
            indices.push(c);
            values.push(v);
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.iter().zip(indices.iter()).zip(values.iter()) {
            if *v != C64::new(0.0, 0.0) {
                indptr[r + 1] += 1;
                keep_idx.push(*c);
                keep_val.push(*v);
            }
        }
        for i in 0..dim {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            dim,
            indptr,
            indices: keep_idx,
            values: keep_val,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// y = A x.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *out = acc;
        }
    }

    /// Y = A X for a row-major dense X.
    pub fn matmul_dense(&self, x: &Array2<C64>) -> Array2<C64> {
        let mut y = Array2::zeros((self.dim, x.ncols()));
        for r in 0..self.dim {
            let mut yr = y.row_mut(r);
            for k in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[k];
                let xr = x.row(self.indices[k]);
                yr.zip_mut_with(&xr, |a, b| *a += v * b);
            }
        }
        y
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.iter() {
            m[[r, c]] += v;
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    Dense(Array2<C64>),
    Sparse(CsrMatrix),
}

/// Linear operator on the chain's Hilbert space. The `hermitian` flag is
/// computed at construction; ladder-operator strings are not Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    n_sites: usize,
    storage: Storage,
    hermitian: bool,
}

/// Alias used where an argument must be Hermitian.
pub type HermitianOperator = Operator;

impl Operator {
    pub fn from_triplets(n_sites: usize, triplets: Vec<(usize, usize, C64)>) -> Result<Self> {
        check_n_sites(n_sites)?;
        let csr = CsrMatrix::from_triplets(1usize << n_sites, triplets)?;
        Ok(Self::from_storage(n_sites, Storage::Sparse(csr)))
    }

    pub fn from_dense(n_sites: usize, m: Array2<C64>) -> Result<Self> {
        check_n_sites(n_sites)?;
        let dim = 1usize << n_sites;
        if m.dim() != (dim, dim) {
            return Err(Error::domain(format!(
                "operator on {n_sites} sites must be {dim}x{dim}"
            )));
        }
        Ok(Self::from_storage(n_sites, Storage::Dense(m)))
    }

    fn from_storage(n_sites: usize, storage: Storage) -> Self {
        let mut op = Self {
            n_sites,
            storage,
            hermitian: false,
        };
        let scale = op.max_abs().max(1.0);
        op.hermitian = op.hermitian_deviation() <= Tolerances::DEFAULT.operator_hermitian * scale;
        op
    }

    pub fn zero(n_sites: usize) -> Result<Self> {
        Self::from_triplets(n_sites, Vec::new())
    }

    pub fn identity(n_sites: usize) -> Result<Self> {
        check_n_sites(n_sites)?;
        let dim = 1usize << n_sites;
        Self::from_triplets(
            n_sites,
            (0..dim).map(|i| (i, i, C64::new(1.0, 0.0))).collect(),
        )
    }

    /// Diagonal operator from its diagonal entries.
    pub fn diagonal(n_sites: usize, diag: &[f64]) -> Result<Self> {
        check_n_sites(n_sites)?;
        if diag.len() != 1usize << n_sites {
            return Err(Error::domain("diagonal has the wrong length"));
        }
        Self::from_triplets(
            n_sites,
            diag.iter()
                .enumerate()
                .map(|(i, &d)| (i, i, C64::new(d, 0.0)))
                .collect(),
        )
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1usize << self.n_sites
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.iter().filter(|z| **z != C64::new(0.0, 0.0)).count(),
            Storage::Sparse(s) => s.nnz(),
        }
    }

    /// All nonzero entries as (row, col, value).
    pub fn triplets(&self) -> Vec<(usize, usize, C64)> {
        match &self.storage {
            Storage::Sparse(s) => s.iter().collect(),
            Storage::Dense(m) => m
                .indexed_iter()
                .filter(|(_, v)| **v != C64::new(0.0, 0.0))
                .map(|((r, c), v)| (r, c, *v))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Array2<C64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(s) => s.to_dense(),
        }
    }

    pub fn to_sparse(&self) -> Operator {
        match &self.storage {
            Storage::Sparse(_) => self.clone(),
            Storage::Dense(_) => Operator::from_triplets(self.n_sites, self.triplets())
                .expect("entries are in range"),
        }
    }

    pub fn to_dense_operator(&self) -> Operator {
        Operator {
            n_sites: self.n_sites,
            storage: Storage::Dense(self.to_dense()),
            hermitian: self.hermitian,
        }
    }

    /// Largest absolute entry, ‖A‖_max.
    pub fn max_abs(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m.iter().map(|z| z.norm()).fold(0.0, f64::max),
            Storage::Sparse(s) => s.values.iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }

    pub fn hermitian_deviation(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => hermitian_deviation(m),
            Storage::Sparse(s) => s
                .iter()
                .map(|(r, c, v)| (v - s.get(c, r).conj()).norm())
                .fold(0.0, f64::max),
        }
    }

    pub fn adjoint(&self) -> Operator {
        let storage = match &self.storage {
            Storage::Dense(m) => Storage::Dense(m.t().mapv(|z| z.conj())),
            Storage::Sparse(s) => Storage::Sparse(
                CsrMatrix::from_triplets(
                    s.dim,
                    s.iter().map(|(r, c, v)| (c, r, v.conj())).collect(),
                )
                .expect("entries are in range"),
            ),
        };
        Operator {
            n_sites: self.n_sites,
            storage,
            hermitian: self.hermitian,
        }
    }

    fn same_register(&self, other: &Operator) -> Result<()> {
        if self.n_sites != other.n_sites {
            return Err(Error::domain(format!(
                "operators act on {} and {} sites",
                self.n_sites, other.n_sites
            )));
        }
        Ok(())
    }

    /// a·self + b·other. The result is sparse unless both inputs are dense.
    pub fn linear_combination(&self, a: C64, other: &Operator, b: C64) -> Result<Operator> {
        self.same_register(other)?;
        if let (Storage::Dense(x), Storage::Dense(y)) = (&self.storage, &other.storage) {
            return Operator::from_dense(self.n_sites, x.mapv(|z| z * a) + y.mapv(|z| z * b));
        }
        let mut t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (r, c, a * v))
            .collect();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, b * v)));
        Operator::from_triplets(self.n_sites, t)
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        let one = C64::new(1.0, 0.0);
        self.linear_combination(one, other, one)
    }

    pub fn sub(&self, other: &Operator) -> Result<Operator> {
        self.linear_combination(C64::new(1.0, 0.0), other, C64::new(-1.0, 0.0))
    }

    pub fn scale(&self, a: C64) -> Operator {
        let storage = match &self.storage {
            Storage::Dense(m) => Storage::Dense(m.mapv(|z| z * a)),
            Storage::Sparse(s) => Storage::Sparse(CsrMatrix {
                dim: s.dim,
                indptr: s.indptr.clone(),
                indices: s.indices.clone(),
                values: s.values.iter().map(|v| v * a).collect(),
            }),
        };
        Operator::from_storage(self.n_sites, storage)
    }

    /// Operator product self·other.
    pub fn mul(&self, other: &Operator) -> Result<Operator> {
        self.same_register(other)?;
        match (&self.storage, &other.storage) {
            (Storage::Sparse(a), Storage::Sparse(b)) => {
                let dim = a.dim;
                let mut acc = vec![C64::new(0.0, 0.0); dim];
                let mut touched = Vec::new();
                let mut t = Vec::new();
                for r in 0..dim {
                    for (k, av) in a.row(r) {
                        for (c, bv) in b.row(k) {
                            if acc[c] == C64::new(0.0, 0.0) {
                                touched.push(c);
                            }
                            acc[c] += av * bv;
                        }
                    }
                    for &c in &touched {
                        t.push((r, c, acc[c]));
                        acc[c] = C64::new(0.0, 0.0);
                    }
                    touched.clear();
                }
                Operator::from_triplets(self.n_sites, t)
            }
            _ => Operator::from_dense(self.n_sites, self.to_dense().dot(&other.to_dense())),
        }
    }

    /// [self, other].
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// y = A x on raw slices.
    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        match &self.storage {
            Storage::Sparse(s) => s.matvec(x, y),
            Storage::Dense(m) => {
                for (r, out) in y.iter_mut().enumerate() {
                    *out = m.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// A X for a dense block of column vectors.
    pub fn apply_matrix(&self, x: &Array2<C64>) -> Array2<C64> {
        match &self.storage {
            Storage::Sparse(s) => s.matmul_dense(x),
            Storage::Dense(m) => m.dot(x),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Operator({} sites, {} nonzeros, {})",
            self.n_sites,
            self.nnz(),
            if self.hermitian {
                "hermitian"
            } else {
                "general"
            }
        )
    }
}

/// Single-site factor of a Pauli string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
    /// σ⁺ = |−Z⟩⟨+Z|, creates an excitation.
    Raise,
    /// σ⁻ = |+Z⟩⟨−Z|, removes an excitation.
    Lower,
}

impl Axis {
    /// Image of a single-site basis bit: (new bit, amplitude), or None when
    /// the factor annihilates it.
    #[inline]
    fn act(self, bit: usize) -> Option<(usize, C64)> {
        let one = C64::new(1.0, 0.0);
        match (self, bit) {
            (Axis::X, b) => Some((b ^ 1, one)),
            (Axis::Y, 0) => Some((1, C64::new(0.0, 1.0))),
            (Axis::Y, _) => Some((0, C64::new(0.0, -1.0))),
            (Axis::Z, 0) => Some((0, one)),
            (Axis::Z, _) => Some((1, -one)),
            (Axis::Raise, 0) => Some((1, one)),
            (Axis::Raise, _) => None,
            (Axis::Lower, 0) => None,
            (Axis::Lower, _) => Some((0, one)),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            "+" => Ok(Axis::Raise),
            "-" | "−" => Ok(Axis::Lower),
            other => Err(Error::domain(format!("unknown Pauli axis {other:?}"))),
        }
    }
}

/// Tensor product of single-site operators with identity on the other sites.
pub fn pauli_string(n_sites: usize, factors: &[(usize, Axis)]) -> Result<Operator> {
    check_n_sites(n_sites)?;
    let mut seen = 0usize;
    for &(site, _) in factors {
        check_site(n_sites, site)?;
        let m = site_mask(n_sites, site);
        if seen & m != 0 {
            return Err(Error::domain(format!("site {site} appears twice")));
        }
        seen |= m;
    }
    let dim = 1usize << n_sites;
    let mut t = Vec::with_capacity(dim);
    'cols: for col in 0..dim {
        let mut row = col;
        let mut amp = C64::new(1.0, 0.0);
        for &(site, axis) in factors {
            let shift = n_sites - site;
            let bit = (row >> shift) & 1;
            match axis.act(bit) {
                Some((nb, a)) => {
                    row = (row & !(1 << shift)) | (nb << shift);
                    amp *= a;
                }
                None => continue 'cols,
            }
        }
        t.push((row, col, amp));
    }
    Operator::from_triplets(n_sites, t)
}

/// Borrowed pure or mixed state.
#[derive(Clone, Copy, Debug)]
pub enum StateRef<'a> {
    Pure(&'a StateVector),
    Mixed(&'a DensityMatrix),
}

impl<'a> From<&'a StateVector> for StateRef<'a> {
    fn from(s: &'a StateVector) -> Self {
        StateRef::Pure(s)
    }
}

impl<'a> From<&'a DensityMatrix> for StateRef<'a> {
    fn from(s: &'a DensityMatrix) -> Self {
        StateRef::Mixed(s)
    }
}

impl StateRef<'_> {
    pub fn n_sites(&self) -> usize {
        match self {
            StateRef::Pure(s) => s.n_sites(),
            StateRef::Mixed(r) => r.n_sites(),
        }
    }
}

/// op·ψ.
pub fn apply(op: &Operator, psi: &StateVector) -> Result<Array1<C64>> {
    if op.n_sites() != psi.n_sites() {
        return Err(Error::domain(
            "operator and state act on different registers",
        ));
    }
    let mut y = vec![C64::new(0.0, 0.0); op.dim()];
    op.apply_into(psi.as_slice(), &mut y);
    Ok(Array1::from(y))
}

/// ⟨ψ|op|ψ⟩ or Tr(ρ op) without any reality check.
pub fn expectation_complex<'a>(op: &Operator, state: impl Into<StateRef<'a>>) -> Result<C64> {
    let state = state.into();
    if op.n_sites() != state.n_sites() {
        return Err(Error::domain(
            "operator and state act on different registers",
        ));
    }
    match state {
        StateRef::Pure(psi) => {
            let mut y = vec![C64::new(0.0, 0.0); op.dim()];
            op.apply_into(psi.as_slice(), &mut y);
            Ok(psi
                .as_slice()
                .iter()
                .zip(&y)
                .map(|(a, b)| a.conj() * b)
                .sum())
        }
        StateRef::Mixed(rho) => {
            let r = rho.elements();
            Ok(op.triplets().iter().map(|&(i, j, v)| v * r[[j, i]]).sum())
        }
    }
}

/// Real expectation value of a Hermitian operator.
pub fn expectation<'a>(op: &Operator, state: impl Into<StateRef<'a>>) -> Result<f64> {
    expectation_with(op, state, &Tolerances::DEFAULT)
}

pub fn expectation_with<'a>(
    op: &Operator,
    state: impl Into<StateRef<'a>>,
    tol: &Tolerances,
) -> Result<f64> {
    if !op.is_hermitian() {
        return Err(Error::domain("expectation requires a Hermitian operator"));
    }
    let v = expectation_complex(op, state)?;
    if v.im.abs() > tol.imag_error {
        return Err(Error::Consistency(format!(
            "expectation value has imaginary part {:e}",
            v.im
        )));
    }
    Ok(v.re)
}

/// Maps a full basis index to (kept index, traced index).
pub(crate) struct BitSplit {
    kept_shifts: Vec<usize>,
    env_shifts: Vec<usize>,
}

impl BitSplit {
    pub(crate) fn new(n_sites: usize, keep: &[usize]) -> Self {
        let kept_shifts: Vec<usize> = keep.iter().map(|&s| n_sites - s).collect();
        let env_shifts = (1..=n_sites)
            .filter(|s| !keep.contains(s))
            .map(|s| n_sites - s)
            .collect();
        Self {
            kept_shifts,
            env_shifts,
        }
    }

    #[inline]
    fn gather(shifts: &[usize], s: usize) -> usize {
        shifts
            .iter()
            .fold(0usize, |acc, &sh| (acc << 1) | ((s >> sh) & 1))
    }

    #[inline]
    pub(crate) fn split(&self, s: usize) -> (usize, usize) {
        (
            Self::gather(&self.kept_shifts, s),
            Self::gather(&self.env_shifts, s),
        )
    }

    pub(crate) fn kept_dim(&self) -> usize {
        1 << self.kept_shifts.len()
    }

    pub(crate) fn env_dim(&self) -> usize {
        1 << self.env_shifts.len()
    }
}

fn check_keep(n_sites: usize, keep: &[usize]) -> Result<()> {
    if keep.is_empty() {
        return Err(Error::domain("keep set is empty"));
    }
    for &s in keep {
        check_site(n_sites, s)?;
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("keep set must be strictly increasing"));
    }
    Ok(())
}

/// Marginal on `keep`; kept sites stay in chain order.
pub fn partial_trace<'a>(state: impl Into<StateRef<'a>>, keep: &[usize]) -> Result<DensityMatrix> {
    let state = state.into();
    let n = state.n_sites();
    check_keep(n, keep)?;
    let split = BitSplit::new(n, keep);
    let (dk, de) = (split.kept_dim(), split.env_dim());
    let mut out = Array2::<C64>::zeros((dk, dk));
    match state {
        StateRef::Pure(psi) => {
            let mut m = Array2::<C64>::zeros((dk, de));
            for (s, a) in psi.amplitudes().iter().enumerate() {
                let (k, e) = split.split(s);
                m[[k, e]] = *a;
            }
            for i in 0..dk {
                for j in i..dk {
                    let v: C64 = m
                        .row(i)
                        .iter()
                        .zip(m.row(j).iter())
                        .map(|(a, b)| a * b.conj())
                        .sum();
                    out[[i, j]] = v;
                    out[[j, i]] = v.conj();
                }
            }
        }
        StateRef::Mixed(rho) => {
            let dim = rho.dim();
            let idx: Vec<(usize, usize)> = (0..dim).map(|s| split.split(s)).collect();
            let r = rho.elements();
            for a in 0..dim {
                let (ka, ea) = idx[a];
                for b in 0..dim {
                    let (kb, eb) = idx[b];
                    if ea == eb {
                        out[[ka, kb]] += r[[a, b]];
                    }
                }
            }
        }
    }
    Ok(DensityMatrix::from_raw(keep.len(), out))
}

fn hermitian_eigh(op: &Operator) -> Result<(Vec<f64>, Array2<C64>)> {
    if !op.is_hermitian() {
        return Err(Error::domain(
            "matrix function requires a Hermitian operator",
        ));
    }
    let (w, v) = linalg::eigh_complex(&op.to_dense(), true)?;
    Ok((w, v.expect("vectors requested")))
}

/// V f(Λ) Vᴴ for a Hermitian operator.
pub fn matrix_function(op: &Operator, f: impl Fn(f64) -> f64) -> Result<Array2<C64>> {
    matrix_function_complex(op, |x| C64::new(f(x), 0.0))
}

/// V f(Λ) Vᴴ with a complex-valued scalar function, e.g. e^{−iλt}.
pub fn matrix_function_complex(op: &Operator, f: impl Fn(f64) -> C64) -> Result<Array2<C64>> {
    let (w, v) = hermitian_eigh(op)?;
    let mut scaled = v.clone();
    for (mut col, &lam) in scaled.columns_mut().into_iter().zip(&w) {
        let fl = f(lam);
        col.mapv_inplace(|z| z * fl);
    }
    Ok(scaled.dot(&v.t().mapv(|z| z.conj())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn sigma_z_basis_convention() {
        let z = pauli_string(1, &[(1, Axis::Z)]).unwrap().to_dense();
        assert_eq!(z[[0, 0]], c(1.0, 0.0));
        assert_eq!(z[[1, 1]], c(-1.0, 0.0));
        assert_eq!(z[[0, 1]], c(0.0, 0.0));
    }

    #[test]
    fn xx_is_antidiagonal() {
        let xx = pauli_string(2, &[(1, Axis::X), (2, Axis::X)])
            .unwrap()
            .to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i + j == 3 { 1.0 } else { 0.0 };
                assert_eq!(xx[[i, j]], c(expect, 0.0));
            }
        }
    }

    #[test]
    fn ladder_operators_move_the_excitation() {
        let up = pauli_string(1, &[(1, Axis::Raise)]).unwrap().to_dense();
        assert_eq!(up[[1, 0]], c(1.0, 0.0));
        assert_eq!(up.iter().filter(|z| z.norm() > 0.0).count(), 1);
        let p = pauli_string(1, &[(1, Axis::Raise)]).unwrap();
        assert!(!p.is_hermitian());
    }

    #[test]
    fn duplicate_and_out_of_range_sites_rejected() {
        assert!(pauli_string(3, &[(1, Axis::X), (1, Axis::Z)]).is_err());
        assert!(pauli_string(3, &[(4, Axis::X)]).is_err());
        assert!(pauli_string(3, &[(0, Axis::X)]).is_err());
    }

    #[test]
    fn sigma_x_flips_plus_z() {
        let x = pauli_string(1, &[(1, Axis::X)]).unwrap();
        let up = StateVector::basis(1, 0).unwrap();
        let out = apply(&x, &up).unwrap();
        assert_eq!(out[1], c(1.0, 0.0));
        assert_eq!(out[0], c(0.0, 0.0));
    }

    #[test]
    fn expectation_values_on_simple_states() {
        let z = pauli_string(1, &[(1, Axis::Z)]).unwrap();
        let up = StateVector::basis(1, 0).unwrap();
        assert_abs_diff_eq!(expectation(&z, &up).unwrap(), 1.0);
        let mixed = DensityMatrix::maximally_mixed(1).unwrap();
        assert_abs_diff_eq!(expectation(&z, &mixed).unwrap(), 0.0);
        let raise = pauli_string(1, &[(1, Axis::Raise)]).unwrap();
        assert!(expectation(&raise, &up).is_err());
    }

    #[test]
    fn bell_state_marginal_is_maximally_mixed() {
        let s = 0.5f64.sqrt();
        let bell = StateVector::new(
            2,
            Array1::from(vec![c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]),
        )
        .unwrap();
        let r = partial_trace(&bell, &[1]).unwrap();
        assert_abs_diff_eq!(r.elements()[[0, 0]].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.elements()[[1, 1]].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.elements()[[0, 1]].norm(), 0.0);
        let product = StateVector::basis(2, 0b01).unwrap();
        let r = partial_trace(&product, &[1]).unwrap();
        assert_eq!(r.elements()[[0, 0]], c(1.0, 0.0));
        assert_eq!(r.elements()[[1, 1]], c(0.0, 0.0));
    }

    #[test]
    fn invalid_keep_sets_rejected() {
        let psi = StateVector::basis(3, 0).unwrap();
        assert!(partial_trace(&psi, &[]).is_err());
        assert!(partial_trace(&psi, &[2, 1]).is_err());
        assert!(partial_trace(&psi, &[1, 4]).is_err());
    }

    #[test]
    fn matrix_function_trivial_cases() {
        let d = Operator::diagonal(1, &[1.0, 2.0]).unwrap();
        let m = matrix_function(&d, |x| x).unwrap();
        assert_abs_diff_eq!(m[[0, 0]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[[1, 1]].re, 2.0, epsilon = 1e-14);
        let z = Operator::zero(2).unwrap();
        let e = matrix_function(&z, f64::exp).unwrap();
        for ((i, j), v) in e.indexed_iter() {
            assert_abs_diff_eq!(v.re, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-14);
        }
    }

    #[test]
    fn state_constructors_validate() {
        assert!(StateVector::new(1, Array1::from(vec![c(1.0, 0.0), c(1.0, 0.0)])).is_err());
        assert!(StateVector::new(2, Array1::from(vec![c(1.0, 0.0), c(0.0, 0.0)])).is_err());
        assert!(StateVector::normalized(1, Array1::zeros(2)).is_err());
        let bad = Array2::from_diag(&Array1::from(vec![c(0.7, 0.0), c(0.7, 0.0)]));
        assert!(DensityMatrix::new(1, bad).is_err());
        let neg = Array2::from_diag(&Array1::from(vec![c(1.5, 0.0), c(-0.5, 0.0)]));
        let rho = DensityMatrix::new(1, neg).unwrap();
        assert!(rho.validate().is_err());
    }

    #[test]
    fn sparse_product_matches_dense() {
        let a = pauli_string(2, &[(1, Axis::X), (2, Axis::Y)]).unwrap();
        let b = pauli_string(2, &[(1, Axis::Z)]).unwrap();
        let p = a.mul(&b).unwrap().to_dense();
        let q = a.to_dense().dot(&b.to_dense());
        for (x, y) in p.iter().zip(q.iter()) {
            assert_abs_diff_eq!((x - y).norm(), 0.0);
        }
    }
}
