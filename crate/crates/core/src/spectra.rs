//! Eigenstructure of the Hamiltonian and the statistics derived from it.

use ndarray::{Array1, Array2, Axis};
use std::collections::VecDeque;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hamiltonian::ChainConfig;
use crate::linalg;
use crate::qcore::{expectation, Operator, StateVector, Storage};
use crate::C64;

/// Largest Hilbert-space dimension accepted by [`diagonalize`].
pub const MAX_DIAGONALIZE_DIM: usize = 4096;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Debug)]
struct SectorBlock {
    vectors: Array2<f64>,
}

#[derive(Clone, Debug)]
enum EigenBasis {
    Complex(Array2<C64>),
    /// Lab vector = gauge ⊙ (real vector).
    Real {
        gauge: Vec<C64>,
        vectors: Array2<f64>,
    },
    /// Real vectors of the two complement-parity blocks. Block `σ` is spanned
    /// by (|a⟩ + σ η_a |ā⟩)/√2 for a < dim/2, ā the bitwise complement.
    Sectors {
        gauge: Vec<C64>,
        eta: Vec<f64>,
        blocks: [SectorBlock; 2],
        /// Sorted position → (block, column).
        order: Vec<(usize, usize)>,
    },
}

/// Full eigendecomposition with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct SpectralData {
    n_sites: usize,
    eigenvalues: Vec<f64>,
    basis: EigenBasis,
    parity: Option<Vec<i8>>,
}

/// Switches for the internal accelerations of [`diagonalize_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiagonalizeOptions {
    /// Look for a diagonal phase that makes the matrix real.
    pub real_gauge: bool,
    /// Split by the global spin-flip parity when the matrix has it.
    pub flip_sectors: bool,
}

impl Default for DiagonalizeOptions {
    fn default() -> Self {
        Self {
            real_gauge: true,
            flip_sectors: true,
        }
    }
}

impl SpectralData {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn source_dim(&self) -> usize {
        self.dim()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn e_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn e_max(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    /// Spin-flip parity (±1) of each eigenvalue when the flip symmetry was
    /// detected and used.
    pub fn parity(&self) -> Option<&[i8]> {
        self.parity.as_deref()
    }

    /// Eigenvalues grouped by parity sector, each ascending. A single group
    /// when no symmetry was resolved.
    pub fn sector_eigenvalues(&self) -> Vec<Vec<f64>> {
        match &self.parity {
            None => vec![self.eigenvalues.clone()],
            Some(p) => [1i8, -1]
                .iter()
                .map(|&sign| {
                    self.eigenvalues
                        .iter()
                        .zip(p)
                        .filter(|(_, &q)| q == sign)
                        .map(|(e, _)| *e)
                        .collect()
                })
                .collect(),
        }
    }

    /// Eigenvector `n` in the computational basis.
    pub fn vector(&self, n: usize) -> Array1<C64> {
        let mut out = Array1::zeros(self.dim());
        self.write_vector(n, out.as_slice_mut().expect("contiguous"));
        out
    }

    fn write_vector(&self, n: usize, out: &mut [C64]) {
        match &self.basis {
            EigenBasis::Complex(v) => {
                for (o, z) in out.iter_mut().zip(v.column(n)) {
                    *o = *z;
                }
            }
            EigenBasis::Real { gauge, vectors } => {
                for ((o, x), d) in out.iter_mut().zip(vectors.column(n)).zip(gauge) {
                    *o = d * *x;
                }
            }
            EigenBasis::Sectors {
                gauge,
                eta,
                blocks,
                order,
            } => {
                let (b, col) = order[n];
                let sign = if b == 0 { 1.0 } else { -1.0 };
                let u = blocks[b].vectors.column(col);
                let mask = self.dim() - 1;
                for (a, &ua) in u.iter().enumerate() {
                    let abar = a ^ mask;
                    out[a] = gauge[a] * (ua * FRAC_1_SQRT_2);
                    out[abar] = gauge[abar] * (sign * eta[a] * ua * FRAC_1_SQRT_2);
                }
            }
        }
    }

    /// Eigenvectors `range` as the columns of a dense matrix.
    pub fn vectors_range(&self, range: std::ops::Range<usize>) -> Array2<C64> {
        let mut out = Array2::zeros((range.len(), self.dim()));
        for (row, n) in range.enumerate() {
            let mut r = out.row_mut(row);
            self.write_vector(n, r.as_slice_mut().expect("contiguous"));
        }
        out.reversed_axes()
    }

    /// All eigenvectors as columns (dimension² memory).
    pub fn dense_vectors(&self) -> Array2<C64> {
        self.vectors_range(0..self.dim())
    }

    /// Coefficients ⟨v_n|ψ⟩ in eigenvalue order.
    pub fn project(&self, psi: &StateVector) -> Result<Array1<C64>> {
        if psi.dim() != self.dim() {
            return Err(Error::domain(
                "state and spectrum have different dimensions",
            ));
        }
        let m = psi.amplitudes().view().insert_axis(Axis(1)).to_owned();
        Ok(self.project_many(&m)?.column(0).to_owned())
    }

    /// Coefficients of every column of `states`.
    pub fn project_many(&self, states: &Array2<C64>) -> Result<Array2<C64>> {
        let dim = self.dim();
        if states.nrows() != dim {
            return Err(Error::domain(
                "states and spectrum have different dimensions",
            ));
        }
        let k = states.ncols();
        Ok(match &self.basis {
            EigenBasis::Complex(v) => v.t().mapv(|z| z.conj()).dot(states),
            EigenBasis::Real { gauge, vectors } => {
                let x = gauge_in(gauge, states);
                real_times_complex(&vectors.t(), &x)
            }
            EigenBasis::Sectors {
                gauge,
                eta,
                blocks,
                order,
            } => {
                let x = gauge_in(gauge, states);
                let half = dim / 2;
                let mask = dim - 1;
                let mut plus = Array2::<C64>::zeros((half, k));
                let mut minus = Array2::<C64>::zeros((half, k));
                for a in 0..half {
                    let xa = x.row(a);
                    let xb = x.row(a ^ mask);
                    for c in 0..k {
                        let t = xb[c] * eta[a];
                        plus[[a, c]] = (xa[c] + t) * FRAC_1_SQRT_2;
                        minus[[a, c]] = (xa[c] - t) * FRAC_1_SQRT_2;
                    }
                }
                let cp = real_times_complex(&blocks[0].vectors.t(), &plus);
                let cm = real_times_complex(&blocks[1].vectors.t(), &minus);
                let mut out = Array2::<C64>::zeros((dim, k));
                for (n, &(b, col)) in order.iter().enumerate() {
                    let src = if b == 0 { cp.row(col) } else { cm.row(col) };
                    out.row_mut(n).assign(&src);
                }
                out
            }
        })
    }

    /// Σ_n c_n v_n for every column of `coeffs`.
    pub fn reconstruct_many(&self, coeffs: &Array2<C64>) -> Result<Array2<C64>> {
        let dim = self.dim();
        if coeffs.nrows() != dim {
            return Err(Error::domain(
                "coefficients and spectrum have different dimensions",
            ));
        }
        let k = coeffs.ncols();
        Ok(match &self.basis {
            EigenBasis::Complex(v) => v.dot(coeffs),
            EigenBasis::Real { gauge, vectors } => {
                let x = real_times_complex(&vectors.view(), coeffs);
                gauge_out(gauge, x)
            }
            EigenBasis::Sectors {
                gauge,
                eta,
                blocks,
                order,
            } => {
                let half = dim / 2;
                let mask = dim - 1;
                let mut cp = Array2::<C64>::zeros((half, k));
                let mut cm = Array2::<C64>::zeros((half, k));
                for (n, &(b, col)) in order.iter().enumerate() {
                    let dst = if b == 0 { &mut cp } else { &mut cm };
                    dst.row_mut(col).assign(&coeffs.row(n));
                }
                let p = real_times_complex(&blocks[0].vectors.view(), &cp);
                let m = real_times_complex(&blocks[1].vectors.view(), &cm);
                let mut x = Array2::<C64>::zeros((dim, k));
                for a in 0..half {
                    for c in 0..k {
                        let (pp, mm) = (p[[a, c]], m[[a, c]]);
                        x[[a, c]] = (pp + mm) * FRAC_1_SQRT_2;
                        x[[a ^ mask, c]] = (pp - mm) * (eta[a] * FRAC_1_SQRT_2);
                    }
                }
                gauge_out(gauge, x)
            }
        })
    }

    /// max |H V − V Λ| over all entries.
    pub fn residual(&self, h: &Operator) -> Result<f64> {
        if h.dim() != self.dim() {
            return Err(Error::domain(
                "operator and spectrum have different dimensions",
            ));
        }
        let mut worst: f64 = 0.0;
        let chunk = 64;
        let mut start = 0;
        while start < self.dim() {
            let end = (start + chunk).min(self.dim());
            let v = self.vectors_range(start..end);
            let hv = h.apply_matrix(&v);
            for (j, n) in (start..end).enumerate() {
                let e = self.eigenvalues[n];
                for i in 0..self.dim() {
                    worst = worst.max((hv[[i, j]] - v[[i, j]] * e).norm());
                }
            }
            start = end;
        }
        Ok(worst)
    }

    /// max |V†V − I|.
    pub fn orthonormality_error(&self) -> f64 {
        let v = self.dense_vectors();
        let g = v.t().mapv(|z| z.conj()).dot(&v);
        g.indexed_iter()
            .map(|((i, j), z)| (z - C64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).norm())
            .fold(0.0, f64::max)
    }
}

fn gauge_in(gauge: &[C64], states: &Array2<C64>) -> Array2<C64> {
    let mut x = states.to_owned();
    for (mut row, d) in x.rows_mut().into_iter().zip(gauge) {
        let dc = d.conj();
        row.mapv_inplace(|z| z * dc);
    }
    x
}

fn gauge_out(gauge: &[C64], mut x: Array2<C64>) -> Array2<C64> {
    for (mut row, d) in x.rows_mut().into_iter().zip(gauge) {
        row.mapv_inplace(|z| z * d);
    }
    x
}

/// Real matrix times complex matrix through two real products.
fn real_times_complex(a: &ndarray::ArrayView2<f64>, x: &Array2<C64>) -> Array2<C64> {
    let re = x.mapv(|z| z.re);
    let im = x.mapv(|z| z.im);
    let yr = a.dot(&re);
    let yi = a.dot(&im);
    let mut out = Array2::zeros(yr.dim());
    ndarray::Zip::from(&mut out)
        .and(&yr)
        .and(&yi)
        .for_each(|o, &r, &i| *o = C64::new(r, i));
    out
}

/// Real symmetric sparse matrix in CSR form with sorted columns.
struct RealCsr {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl RealCsr {
    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    fn to_dense(&self, dim: usize) -> Array2<f64> {
        let mut m = Array2::zeros((dim, dim));
        for r in 0..dim {
            for (c, v) in self.row(r) {
                m[[r, c]] = v;
            }
        }
        m
    }
}

/// Finds d with |d_s| = 1 such that D† H D is real, by propagating phases
/// along the nonzero pattern.
fn real_gauge(h: &Operator) -> Option<(Vec<C64>, RealCsr)> {
    let dim = h.dim();
    let triplets = h.triplets();
    let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
    for &(r, c, v) in &triplets {
        rows[r].push((c, v));
    }
    let scale = h.max_abs().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut gauge = vec![C64::new(0.0, 0.0); dim];
    let mut seen = vec![false; dim];
    let mut queue = VecDeque::new();
    for root in 0..dim {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        gauge[root] = C64::new(1.0, 0.0);
        queue.push_back(root);
        while let Some(a) = queue.pop_front() {
            for &(b, v) in &rows[a] {
                if !seen[b] && v.norm() > tol {
                    seen[b] = true;
                    gauge[b] = gauge[a] * v.conj() / v.norm();
                    queue.push_back(b);
                }
            }
        }
    }
    let mut indptr = vec![0usize; dim + 1];
    let mut indices = Vec::with_capacity(triplets.len());
    let mut values = Vec::with_capacity(triplets.len());
    for (r, row) in rows.iter_mut().enumerate() {
        row.sort_by_key(|&(c, _)| c);
        for &(c, v) in row.iter() {
            let w = gauge[r].conj() * v * gauge[c];
            if w.im.abs() > tol {
                return None;
            }
            indices.push(c);
            values.push(w.re);
        }
        indptr[r + 1] = indices.len();
    }
    Some((
        gauge,
        RealCsr {
            indptr,
            indices,
            values,
        },
    ))
}

/// Signs η_s with P|s⟩ = η_s|s̄⟩ commuting with the real matrix, if any.
fn flip_symmetry(m: &RealCsr, dim: usize, scale: f64) -> Option<Vec<f64>> {
    let mask = dim - 1;
    let tol = 1e-12 * scale;
    let mut eta = vec![0.0f64; dim];
    let mut queue = VecDeque::new();
    let assign = |eta: &mut Vec<f64>, s: usize, v: f64, queue: &mut VecDeque<usize>| -> bool {
        for t in [s, s ^ mask] {
            if eta[t] == 0.0 {
                eta[t] = v;
                queue.push_back(t);
            } else if eta[t] != v {
                return false;
            }
        }
        true
    };
    for root in 0..dim {
        if eta[root] != 0.0 {
            continue;
        }
        if !assign(&mut eta, root, 1.0, &mut queue) {
            return None;
        }
        while let Some(a) = queue.pop_front() {
            let abar = a ^ mask;
            for (b, h) in m.row(a) {
                if h.abs() <= tol {
                    continue;
                }
                let mirrored = m.get(abar, b ^ mask);
                let ratio = mirrored / (eta[a] * h);
                let sign = if ratio > 0.0 { 1.0 } else { -1.0 };
                if (ratio - sign).abs() > 1e-9 {
                    return None;
                }
                if !assign(&mut eta, b, sign, &mut queue) {
                    return None;
                }
            }
        }
    }
    Some(eta)
}

/// Full eigendecomposition of a Hermitian operator.
pub fn diagonalize(h: &Operator) -> Result<SpectralData> {
    diagonalize_with(h, DiagonalizeOptions::default())
}

pub fn diagonalize_with(h: &Operator, opts: DiagonalizeOptions) -> Result<SpectralData> {
    crate::linalg::ensure_blas();
    let dim = h.dim();
    if dim > MAX_DIAGONALIZE_DIM {
        return Err(Error::domain(format!(
            "dimension {dim} exceeds the dense limit {MAX_DIAGONALIZE_DIM}"
        )));
    }
    if !h.is_hermitian() {
        return Err(Error::domain("diagonalize requires a Hermitian operator"));
    }
    let n_sites = h.n_sites();
    let gauged = if opts.real_gauge { real_gauge(h) } else { None };
    let Some((gauge, real)) = gauged else {
        let dense = match h.storage() {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(_) => h.to_dense(),
        };
        let (w, v) = linalg::eigh_complex(&dense, true)?;
        return Ok(SpectralData {
            n_sites,
            eigenvalues: w,
            basis: EigenBasis::Complex(v.expect("vectors requested")),
            parity: None,
        });
    };
    let eta = if opts.flip_sectors && dim >= 4 {
        flip_symmetry(&real, dim, h.max_abs().max(f64::MIN_POSITIVE))
    } else {
        None
    };
    let Some(eta) = eta else {
        let (w, v) = linalg::eigh_real(&real.to_dense(dim), true)?;
        return Ok(SpectralData {
            n_sites,
            eigenvalues: w,
            basis: EigenBasis::Real {
                gauge,
                vectors: v.expect("vectors requested"),
            },
            parity: None,
        });
    };
    let half = dim / 2;
    let mask = dim - 1;
    let mut hp = Array2::<f64>::zeros((half, half));
    let mut hm = Array2::<f64>::zeros((half, half));
    for a in 0..half {
        for (c, v) in real.row(a) {
            if c < half {
                hp[[a, c]] += v;
                hm[[a, c]] += v;
            } else {
                let b = c ^ mask;
                hp[[a, b]] += eta[b] * v;
                hm[[a, b]] -= eta[b] * v;
            }
        }
    }
    drop(real);
    let (wp, vp) = linalg::eigh_real(&hp, true)?;
    drop(hp);
    let (wm, vm) = linalg::eigh_real(&hm, true)?;
    drop(hm);
    let mut order: Vec<(usize, usize)> = (0..half)
        .map(|i| (0, i))
        .chain((0..half).map(|i| (1, i)))
        .collect();
    let value = |&(b, i): &(usize, usize)| if b == 0 { wp[i] } else { wm[i] };
    order.sort_by(|x, y| value(x).total_cmp(&value(y)).then(x.cmp(y)));
    let eigenvalues = order.iter().map(value).collect();
    let parity = order
        .iter()
        .map(|&(b, _)| if b == 0 { 1 } else { -1 })
        .collect();
    Ok(SpectralData {
        n_sites,
        eigenvalues,
        basis: EigenBasis::Sectors {
            gauge,
            eta,
            blocks: [
                SectorBlock {
                    vectors: vp.expect("vectors requested"),
                },
                SectorBlock {
                    vectors: vm.expect("vectors requested"),
                },
            ],
            order,
        },
        parity: Some(parity),
    })
}

fn spread(e_min: f64, e_max: f64) -> Result<f64> {
    let width = e_max - e_min;
    let scale = e_min.abs().max(e_max.abs());
    if !(width > 1e-12 * scale) || scale == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(width)
}

/// ε = (⟨H⟩ − E_min)/(E_max − E_min) for a known energy.
pub fn normalized_energy_of(energy: f64, spec: &SpectralData) -> Result<f64> {
    let width = spread(spec.e_min(), spec.e_max())?;
    Ok(((energy - spec.e_min()) / width).clamp(0.0, 1.0))
}

/// ε of an initial state.
pub fn normalized_energy(psi0: &StateVector, spec: &SpectralData, h: &Operator) -> Result<f64> {
    normalized_energy_of(expectation(h, psi0)?, spec)
}

/// Histogram on [0, 1] with density normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }
}

fn unit_histogram(values: impl Iterator<Item = f64>, n_bins: usize) -> Histogram {
    let mut counts = vec![0usize; n_bins];
    let mut total = 0usize;
    for x in values {
        let k = ((x * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
        counts[k] += 1;
        total += 1;
    }
    let width = 1.0 / n_bins as f64;
    Histogram {
        edges: (0..=n_bins).map(|k| k as f64 * width).collect(),
        density: counts
            .iter()
            .map(|&c| c as f64 / (total.max(1) as f64 * width))
            .collect(),
    }
}

/// ρ(ε) over normalized energy, Σ ρ Δε = 1.
pub fn density_of_states(spec: &SpectralData, n_bins: usize) -> Result<Histogram> {
    density_of_states_from(spec.eigenvalues(), n_bins)
}

/// [`density_of_states`] for a bare list of levels in any order.
pub fn density_of_states_from(levels: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins < 2 {
        return Err(Error::domain("density of states needs at least 2 bins"));
    }
    if levels.is_empty() {
        return Err(Error::domain("empty spectrum"));
    }
    let lo = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = spread(lo, hi)?;
    Ok(unit_histogram(
        levels.iter().map(|e| (e - lo) / width),
        n_bins,
    ))
}

/// Ratios r_n = min(s_n, s_{n−1})/max(s_n, s_{n−1}) of consecutive gaps.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelStatistics {
    pub ratios: Vec<f64>,
    pub mean_r: f64,
    /// Ratios discarded because a gap was numerically zero.
    pub n_dropped: usize,
    /// Number of independent level sequences pooled.
    pub n_sequences: usize,
    pub warnings: Vec<String>,
}

impl LevelStatistics {
    /// r-histogram on [0, 1].
    pub fn histogram(&self, n_bins: usize) -> Result<Histogram> {
        if n_bins < 1 {
            return Err(Error::domain("histogram needs at least one bin"));
        }
        Ok(unit_histogram(self.ratios.iter().copied(), n_bins))
    }

    /// Total-variation distance between the r-histogram and the GOE surmise
    /// integrated over the same bins.
    pub fn tv_distance_goe(&self, n_bins: usize) -> Result<f64> {
        let h = self.histogram(n_bins)?;
        let w = h.bin_width();
        Ok(0.5
            * h.edges
                .windows(2)
                .zip(&h.density)
                .map(|(e, d)| (d * w - goe_bin_mass(e[0], e[1])).abs())
                .sum::<f64>())
    }
}

fn ratios_of(levels: &[f64], trim_fraction: f64, out: &mut Vec<f64>) -> usize {
    let cut = (trim_fraction * levels.len() as f64).floor() as usize;
    let kept = &levels[cut..levels.len() - cut];
    if kept.len() < 3 {
        return 0;
    }
    let width = (kept[kept.len() - 1] - kept[0])
        .abs()
        .max(f64::MIN_POSITIVE);
    let tiny = 1e-12 * width;
    let gaps: Vec<f64> = kept.windows(2).map(|w| w[1] - w[0]).collect();
    let mut dropped = 0;
    for g in gaps.windows(2) {
        if g[0] <= tiny || g[1] <= tiny {
            dropped += 1;
            continue;
        }
        out.push(g[0].min(g[1]) / g[0].max(g[1]));
    }
    dropped
}

fn statistics(seqs: &[Vec<f64>], trim_fraction: f64) -> Result<LevelStatistics> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::domain("trim_fraction must lie in [0, 0.5)"));
    }
    let retained: usize = seqs
        .iter()
        .map(|s| s.len() - 2 * (trim_fraction * s.len() as f64).floor() as usize)
        .sum();
    if retained < 10 {
        return Err(Error::domain(format!(
            "only {retained} levels remain after trimming; need at least 10"
        )));
    }
    let mut ratios = Vec::new();
    let mut dropped = 0;
    for s in seqs {
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        dropped += ratios_of(&sorted, trim_fraction, &mut ratios);
    }
    if ratios.is_empty() {
        return Err(Error::DegenerateSpectrum);
    }
    let mean_r = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!("{dropped} ratios dropped at degenerate gaps"));
    }
    Ok(LevelStatistics {
        ratios,
        mean_r,
        n_dropped: dropped,
        n_sequences: seqs.len(),
        warnings,
    })
}

/// Level statistics of a diagonalized operator, computed inside each
/// spin-flip parity sector and pooled.
pub fn level_spacing_ratios(spec: &SpectralData, trim_fraction: f64) -> Result<LevelStatistics> {
    let mut stats = statistics(&spec.sector_eigenvalues(), trim_fraction)?;
    if spec.parity().is_none() {
        stats
            .warnings
            .push("levels were not resolved by symmetry sector".to_string());
    }
    Ok(stats)
}

/// Level statistics of a bare list of levels (sorted internally).
pub fn ratios_from_levels(levels: &[f64], trim_fraction: f64) -> Result<LevelStatistics> {
    statistics(&[levels.to_vec()], trim_fraction)
}

/// Pools the sector sequences of several spectra into one statistic.
pub fn pooled_level_statistics(
    spectra: &[&SpectralData],
    trim_fraction: f64,
) -> Result<LevelStatistics> {
    let seqs: Vec<Vec<f64>> = spectra
        .iter()
        .flat_map(|s| s.sector_eigenvalues())
        .collect();
    statistics(&seqs, trim_fraction)
}

/// GOE surmise P(r) = (27/4)(r + r²)/(1 + r + r²)^{5/2}. With this
/// prefactor P integrates to 1 over [0, 1], the range of min/max ratios.
pub fn goe_pdf(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::domain(format!("goe_pdf needs r >= 0, got {r}")));
    }
    Ok(6.75 * (r + r * r) / (1.0 + r + r * r).powf(2.5))
}

/// Density of min/max ratios on [0, 1]; zero above 1.
pub fn goe_folded_pdf(r: f64) -> Result<f64> {
    if r > 1.0 {
        return Ok(0.0);
    }
    goe_pdf(r)
}

/// Density of plain ratios s_n/s_{n−1} on [0, ∞).
pub fn goe_unfolded_pdf(r: f64) -> Result<f64> {
    Ok(0.5 * goe_pdf(r)?)
}

/// Mean of the folded surmise, 4 − 2√3.
pub const GOE_MEAN_R: f64 = 0.535_898_384_862_245_4;

fn goe_bin_mass(lo: f64, hi: f64) -> f64 {
    // composite Simpson; the integrand is smooth on [0, 1]
    let n = 64;
    let h = (hi - lo) / n as f64;
    let f = |r: f64| goe_folded_pdf(r).unwrap_or(0.0);
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + k as f64 * h);
    }
    acc * h / 3.0
}

/// Spectrum of the field-free chain from its free-fermion modes.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeFermionSpectrum {
    /// ε_n = 4λ cos(πn/(N+1)), n = 1..N.
    pub single_particle: Vec<f64>,
    /// All 2^N subset sums, ascending.
    pub many_body: Vec<f64>,
}

pub fn free_fermion_spectrum(cfg: &ChainConfig) -> Result<FreeFermionSpectrum> {
    cfg.validate()?;
    if cfg.field_g_mean != 0.0 || cfg.field_disorder_w != 0.0 {
        return Err(Error::domain(
            "the free-fermion spectrum needs a vanishing transverse field",
        ));
    }
    if cfg.potential_mhz()?.iter().any(|&m| m != 0.0) {
        return Err(Error::domain("the free-fermion spectrum needs mu = 0"));
    }
    if !cfg.coupling_j.is_uniform() {
        return Err(Error::domain(
            "the free-fermion spectrum needs uniform couplings",
        ));
    }
    let n = cfg.n_sites;
    let single: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        let lambda = cfg.lambda()?[0];
        (1..=n)
            .map(|k| 4.0 * lambda * (PI * k as f64 / (n + 1) as f64).cos())
            .collect()
    };
    let mut many = vec![0.0f64; 1usize << n];
    for (k, e) in single.iter().enumerate() {
        let bit = 1usize << k;
        for s in 0..bit {
            many[s | bit] = many[s] + e;
        }
    }
    many.sort_by(f64::total_cmp);
    Ok(FreeFermionSpectrum {
        single_particle: single,
        many_body: many,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::build_hamiltonian;
    use approx::assert_abs_diff_eq;

    #[test]
    fn diagonal_matrix() {
        let h = Operator::diagonal(2, &[3.0, 1.0, 2.0, 0.5]).unwrap();
        let s = diagonalize(&h).unwrap();
        assert_eq!(s.eigenvalues(), &[0.5, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn sector_path_matches_complex_path() {
        let cfg = ChainConfig {
            n_sites: 6,
            ..ChainConfig::default()
        };
        let h = build_hamiltonian(&cfg, None).unwrap();
        let fast = diagonalize(&h).unwrap();
        assert!(fast.parity().is_some());
        let slow = diagonalize_with(
            &h,
            DiagonalizeOptions {
                real_gauge: false,
                flip_sectors: false,
            },
        )
        .unwrap();
        for (a, b) in fast.eigenvalues().iter().zip(slow.eigenvalues()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(fast.residual(&h).unwrap() < 1e-12);
        assert!(fast.orthonormality_error() < 1e-12);
    }

    #[test]
    fn ratios_of_regular_sequences() {
        let even: Vec<f64> = (0..40).map(|k| k as f64).collect();
        let st = ratios_from_levels(&even, 0.1).unwrap();
        assert!(st.ratios.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let mut alt = vec![0.0];
        for k in 0..40 {
            let step = if k % 2 == 0 { 1.0 } else { 2.0 };
            alt.push(alt.last().unwrap() + step);
        }
        let st = ratios_from_levels(&alt, 0.1).unwrap();
        assert!(st.ratios.iter().all(|&r| (r - 0.5).abs() < 1e-12));
        assert!(ratios_from_levels(&even[..8], 0.1).is_err());
    }

    #[test]
    fn goe_values() {
        assert_eq!(goe_pdf(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            goe_pdf(1.0).unwrap(),
            6.75 * 2.0 / 3f64.powf(2.5),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(goe_pdf(1.0).unwrap(), 0.8660, epsilon = 1e-4);
        assert!(goe_pdf(-0.1).is_err());
        assert_abs_diff_eq!(GOE_MEAN_R, 4.0 - 2.0 * 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn dos_two_levels() {
        let h = density_of_states_from(&[0.0, 1.0], 4).unwrap();
        assert_abs_diff_eq!(h.density[0] * h.bin_width(), 0.5);
        assert_abs_diff_eq!(h.density[3] * h.bin_width(), 0.5);
        assert_abs_diff_eq!(h.integral(), 1.0, epsilon = 1e-12);
        assert!(density_of_states_from(&[1.0, 1.0], 4).is_err());
        assert!(density_of_states_from(&[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn free_fermions_two_sites() {
        let cfg = ChainConfig {
            n_sites: 2,
            field_g_mean: 0.0,
            field_disorder_w: 0.0,
            ..ChainConfig::default()
        };
        let ff = free_fermion_spectrum(&cfg).unwrap();
        let lam = cfg.lambda().unwrap()[0];
        assert_abs_diff_eq!(ff.single_particle[0], 2.0 * lam, epsilon = 1e-14);
        assert_abs_diff_eq!(ff.single_particle[1], -2.0 * lam, epsilon = 1e-14);
        let one = ChainConfig {
            n_sites: 1,
            ..cfg.clone()
        };
        assert_eq!(
            free_fermion_spectrum(&one).unwrap().many_body,
            vec![0.0, 0.0]
        );
        let driven = ChainConfig {
            field_g_mean: 1.0,
            ..cfg
        };
        assert!(free_fermion_spectrum(&driven).is_err());
    }
}
