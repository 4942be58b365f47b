//! Open-system numerics over operator space: Lindbladian assembly in parity
//! sectors, the slow switching mode, the steady state, per-manifold rates and
//! the manifold-projected generator.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{build_hamiltonian, hamiltonian_entry, parity_operator, FockSpace, Operator, StateVector, SystemParams};
use crate::rates::{dephasing_and_decay, RateMatrices};
use crate::spectrum::{pauli_operators, solve_spectrum, ManifoldSpectrum};
use crate::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Which `|i><j|` pairs a superoperator acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Sector {
    Full,
    /// `i + j` even.
    Even,
    /// `i + j` odd.
    Odd,
}

impl Sector {
    fn contains(self, i: usize, j: usize) -> bool {
        match self {
            Sector::Full => true,
            Sector::Even => (i + j) % 2 == 0,
            Sector::Odd => (i + j) % 2 == 1,
        }
    }

    fn code(self) -> u32 {
        match self {
            Sector::Full => 0,
            Sector::Even => 1,
            Sector::Odd => 2,
        }
    }
}

/// Row-major enumeration of the `|i><j|` pairs of one sector.
#[derive(Clone, Debug)]
pub struct OperatorBasis {
    dim: usize,
    sector: Sector,
    pairs: Vec<(usize, usize)>,
    position: Vec<usize>,
}

impl OperatorBasis {
    pub fn new(dim: usize, sector: Sector) -> Self {
        let mut pairs = Vec::new();
        let mut position = vec![usize::MAX; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                if sector.contains(i, j) {
                    position[i * dim + j] = pairs.len();
                    pairs.push((i, j));
                }
            }
        }
        Self { dim, sector, pairs, position }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sector(&self) -> Sector {
        self.sector
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        self.pairs[k]
    }

    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        let p = self.position[i * self.dim + j];
        (p != usize::MAX).then_some(p)
    }

    pub fn to_operator(&self, x: &[Complex64]) -> Operator {
        let mut m = Mat::<Complex64>::zeros(self.dim, self.dim);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            m[(i, j)] = x[k];
        }
        Operator::from_mat(m)
    }

    /// Components of `rho` in this sector; the rest is dropped.
    pub fn from_operator(&self, rho: &Operator) -> Vec<Complex64> {
        self.pairs.iter().map(|&(i, j)| rho.get(i, j)).collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LindbladOptions {
    /// Largest operator-basis size that will be assembled.
    pub max_basis: usize,
    /// Sectors up to this size are diagonalized densely; larger ones use
    /// shift-invert Arnoldi at zero.
    pub dense_limit: usize,
    pub krylov_dim: usize,
    /// Warn when the next real eigenvalue is closer than this multiple of the rate.
    pub separation_threshold: f64,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        Self { max_basis: 200_000, dense_limit: 800, krylov_dim: 40, separation_threshold: 5.0 }
    }
}

/// Collapse channel `coef * a` or `coef * a^dag`, in truncated Fock form.
#[derive(Clone, Copy)]
struct Channel {
    coef: f64,
    raising: bool,
}

impl Channel {
    /// Target level and amplitude of `O|k>`.
    fn act(&self, k: usize, dim: usize) -> Option<(usize, f64)> {
        if self.raising {
            (k + 1 < dim).then(|| (k + 1, self.coef * ((k + 1) as f64).sqrt()))
        } else {
            (k > 0).then(|| (k - 1, self.coef * (k as f64).sqrt()))
        }
    }

    /// Diagonal of `O^dag O`.
    fn weight(&self, k: usize, dim: usize) -> f64 {
        self.act(k, dim).map_or(0.0, |(_, c)| c * c)
    }
}

fn channels(params: &SystemParams) -> Vec<Channel> {
    let mut out = vec![Channel { coef: (params.kappa * (1.0 + params.nth)).sqrt(), raising: false }];
    if params.nth > 0.0 {
        out.push(Channel { coef: (params.kappa * params.nth).sqrt(), raising: true });
    }
    out
}

/// Lindbladian restricted to one sector, as a sparse matrix over [`OperatorBasis`].
#[derive(Clone, Debug)]
pub struct Superoperator {
    pub matrix: SparseColMat<usize, Complex64>,
    pub basis: OperatorBasis,
    pub params: SystemParams,
}

/// Column `(k, l)` of the generator, pushed as `(i, j, value)` entries.
fn column_entries(params: &SystemParams, chans: &[Channel], dim: usize, k: usize, l: usize, out: &mut Vec<(usize, usize, Complex64)>) {
    for i in [k.wrapping_sub(2), k, k + 2] {
        if i < dim {
            let h = hamiltonian_entry(params, i, k);
            if h != 0.0 {
                out.push((i, l, -I * h));
            }
        }
    }
    for j in [l.wrapping_sub(2), l, l + 2] {
        if j < dim {
            let h = hamiltonian_entry(params, l, j);
            if h != 0.0 {
                out.push((k, j, I * h));
            }
        }
    }
    for ch in chans {
        if let (Some((ik, ck)), Some((jl, cl))) = (ch.act(k, dim), ch.act(l, dim)) {
            out.push((ik, jl, Complex64::new(ck * cl, 0.0)));
        }
        let d = -0.5 * (ch.weight(k, dim) + ch.weight(l, dim));
        if d != 0.0 {
            out.push((k, l, Complex64::new(d, 0.0)));
        }
    }
}

fn guard(size: usize, sector: Sector, opts: &LindbladOptions) -> Result<()> {
    if size > opts.max_basis {
        let hint = if sector == Sector::Full { "; assemble a single parity sector instead" } else { "" };
        return Err(Error::SizeLimit(format!(
            "operator basis of {size} exceeds the limit {}{hint}",
            opts.max_basis
        )));
    }
    Ok(())
}

fn assemble(
    params: &SystemParams,
    basis: &OperatorBasis,
    replace_row: Option<(usize, &[(usize, Complex64)])>,
) -> Result<SparseColMat<usize, Complex64>> {
    let dim = basis.dim();
    let chans = channels(params);
    let mut trip = Vec::with_capacity(basis.len() * 8);
    let mut buf = Vec::with_capacity(12);
    for (col, &(k, l)) in basis.pairs.iter().enumerate() {
        buf.clear();
        column_entries(params, &chans, dim, k, l, &mut buf);
        for &(i, j, v) in &buf {
            let row = basis
                .index(i, j)
                .ok_or_else(|| Error::Invariant(format!("generator leaves the sector at ({i}, {j})")))?;
            if replace_row.is_some_and(|(r, _)| r == row) {
                continue;
            }
            trip.push(Triplet::new(row, col, v));
        }
    }
    if let Some((r, entries)) = replace_row {
        trip.extend(entries.iter().map(|&(c, v)| Triplet::new(r, c, v)));
    }
    SparseColMat::try_new_from_triplets(basis.len(), basis.len(), &trip)
        .map_err(|e| Error::Invariant(format!("sparse assembly: {e:?}")))
}

/// Assembles the generator `-i[H, .] + sum D[O]` on one sector.
pub fn build_lindbladian(params: &SystemParams, space: FockSpace, sector: Sector, opts: &LindbladOptions) -> Result<Superoperator> {
    params.validate()?;
    let dim = space.dim();
    guard(sector_size(dim, sector), sector, opts)?;
    let basis = OperatorBasis::new(dim, sector);
    let matrix = assemble(params, &basis, None)?;
    Ok(Superoperator { matrix, basis, params: *params })
}

fn sector_size(dim: usize, sector: Sector) -> usize {
    let sq = dim * dim;
    match sector {
        Sector::Full => sq,
        Sector::Even => sq.div_ceil(2),
        Sector::Odd => sq / 2,
    }
}

impl Superoperator {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.len();
        let mut y = vec![ZERO; n];
        let sym = self.matrix.symbolic();
        let (ptr, rows, vals) = (sym.col_ptr(), sym.row_idx(), self.matrix.val());
        for (j, &xj) in x.iter().enumerate() {
            if xj == ZERO {
                continue;
            }
            for p in ptr[j]..ptr[j + 1] {
                y[rows[p]] += vals[p] * xj;
            }
        }
        y
    }

    pub fn apply_operator(&self, rho: &Operator) -> Operator {
        self.basis.to_operator(&self.apply(&self.basis.from_operator(rho)))
    }

    pub fn to_dense(&self) -> Mat<Complex64> {
        self.matrix.to_dense()
    }

    /// Writes the sector matrix: an 8-byte magic `KWLSUPER`, then little-endian
    /// `u32` version, `u64` Fock dimension, `u32` sector code (0 full, 1 even,
    /// 2 odd), `u64` basis size, `f64` kerr, eps2, kappa, nth, followed by the
    /// dense matrix as row-major `(re, im)` f64 pairs.
    pub fn write_binary(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(b"KWLSUPER")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.basis.dim() as u64).to_le_bytes())?;
        out.write_all(&self.basis.sector().code().to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        for x in [self.params.kerr, self.params.eps2, self.params.kappa, self.params.nth] {
            out.write_all(&x.to_le_bytes())?;
        }
        let dense = self.to_dense();
        for i in 0..self.len() {
            for j in 0..self.len() {
                let z = dense[(i, j)];
                out.write_all(&z.re.to_le_bytes())?;
                out.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Dense action of the full generator on an operator.
pub fn apply_lindbladian(params: &SystemParams, rho: &Operator) -> Operator {
    let dim = rho.dim();
    let space = FockSpace::new(dim).expect("operator dimension is a valid space");
    let h = build_hamiltonian(params, space);
    let mut out = (&h * rho).scale(-I);
    out = &out + &(rho * &h).scale(I);
    for ch in channels(params) {
        let o = Operator::from_fn(dim, |i, j| match ch.act(j, dim) {
            Some((t, c)) if t == i => Complex64::new(c, 0.0),
            _ => ZERO,
        });
        let od = o.adjoint();
        let odo = &od * &o;
        out = &out + &(&(&o * rho) * &od);
        let anti = &(&odo * rho) + &(rho * &odo);
        out = &out - &anti.scale(Complex64::new(0.5, 0.0));
    }
    out
}

/// Slow odd-sector mode and its diagnostics.
#[derive(Clone, Debug)]
pub struct NumericalRate {
    pub gamma: f64,
    pub eigenvalue: Complex64,
    /// Next real eigenvalue found in the sector, if any.
    pub next_real: Option<f64>,
    /// `|next_real| / gamma`.
    pub separation: Option<f64>,
    pub well_separated: bool,
    /// Eigenvector, phased so that `Tr[X rho_ex]` is real positive.
    pub rho_ex: Operator,
    pub fock_dim: usize,
    pub dense: bool,
    /// `|L rho - lambda rho| / |rho|`.
    pub residual: f64,
}

struct SlowMode {
    value: Complex64,
    vector: Vec<Complex64>,
    others: Vec<Complex64>,
}

fn normalize(v: &mut [Complex64]) -> f64 {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|z| *z /= n);
    }
    n
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn is_real(z: Complex64, tol: f64) -> bool {
    z.im.abs() < tol
}

/// Index of the real value closest to zero.
fn closest_real(values: &[Complex64], tol: f64) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, z)| is_real(**z, tol))
        .min_by(|a, b| a.1.re.abs().total_cmp(&b.1.re.abs()))
        .map(|(k, _)| k)
}

fn dense_slow_mode(op: &Superoperator, tol: f64) -> Result<SlowMode> {
    let evd = op
        .to_dense()
        .eigen()
        .map_err(|e| Error::Eigensolver(format!("dense sector eigen: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<Complex64> = (0..s.nrows()).map(|k| s[k]).collect();
    let k = closest_real(&values, tol).ok_or_else(|| Error::NoRealEigenvalue(format!("{} eigenvalues scanned", values.len())))?;
    let mut vector: Vec<Complex64> = (0..u.nrows()).map(|r| u[(r, k)]).collect();
    normalize(&mut vector);
    let mut others = values.clone();
    others.remove(k);
    Ok(SlowMode { value: values[k], vector, others })
}

type SparseLu = faer::sparse::linalg::solvers::Lu<usize, Complex64>;

fn lu_solve(lu: &SparseLu, v: &[Complex64]) -> Vec<Complex64> {
    let mut rhs = Mat::<Complex64>::from_fn(v.len(), 1, |i, _| v[i]);
    lu.solve_in_place(rhs.as_mut());
    (0..v.len()).map(|i| rhs[(i, 0)]).collect()
}

fn shifted_lu(op: &Superoperator, shift: Complex64) -> Result<SparseLu> {
    let lu = if shift == ZERO {
        op.matrix.sp_lu()
    } else {
        let mut trip: Vec<_> = op.matrix.triplet_iter().map(|t| Triplet::new(t.row, t.col, *t.val)).collect();
        trip.extend((0..op.len()).map(|k| Triplet::new(k, k, -shift)));
        SparseColMat::try_new_from_triplets(op.len(), op.len(), &trip)
            .map_err(|e| Error::Invariant(format!("sparse assembly: {e:?}")))?
            .sp_lu()
    };
    lu.map_err(|e| Error::Singular(format!("sector LU at shift {shift}: {e:?}")))
}

/// Inverse iteration to a fixed point, returning the normalized vector.
fn inverse_iteration(lu: &SparseLu, start: Vec<Complex64>) -> Vec<Complex64> {
    let mut x = start;
    normalize(&mut x);
    for _ in 0..60 {
        let mut y = lu_solve(lu, &x);
        normalize(&mut y);
        let ov = dot(&x, &y);
        let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { Complex64::new(1.0, 0.0) };
        let change = x.iter().zip(&y).map(|(a, b)| (b - a * phase).norm_sqr()).sum::<f64>().sqrt();
        x = y;
        if change < 1e-13 {
            break;
        }
    }
    x
}

fn arnoldi_slow_mode(op: &Superoperator, start: &[Complex64], krylov: usize, tol: f64) -> Result<SlowMode> {
    let n = op.len();
    let lu = shifted_lu(op, ZERO)?;
    let m = krylov.min(n).max(2);
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
    let mut v0 = start.to_vec();
    if normalize(&mut v0) == 0.0 {
        return Err(Error::InvalidParams("zero Arnoldi start vector".into()));
    }
    basis.push(v0);
    let mut h = Mat::<Complex64>::zeros(m + 1, m);
    let mut steps = m;
    for j in 0..m {
        let mut w = lu_solve(&lu, &basis[j]);
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c = dot(b, &w);
                h[(i, j)] += c;
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = normalize(&mut w);
        h[(j + 1, j)] = Complex64::new(norm, 0.0);
        let scale = (0..=j).map(|i| h[(i, j)].norm()).fold(0.0, f64::max);
        if norm <= 1e-13 * scale {
            steps = j + 1;
            break;
        }
        basis.push(w);
    }
    let hm = Mat::<Complex64>::from_fn(steps, steps, |i, j| h[(i, j)]);
    let evd = hm.eigen().map_err(|e| Error::Eigensolver(format!("Hessenberg eigen: {e:?}")))?;
    let theta = evd.S().column_vector();
    let y = evd.U();
    let values: Vec<Complex64> = (0..steps).filter(|&k| theta[k].norm() > 0.0).map(|k| theta[k].inv()).collect();
    let idx: Vec<usize> = (0..steps).filter(|&k| theta[k].norm() > 0.0).collect();
    // Ritz values carry more imaginary noise than the refined mode.
    let loose = |z: Complex64| tol.max(1e-6 * z.norm());
    let pick = values
        .iter()
        .enumerate()
        .filter(|(_, z)| z.im.abs() < loose(**z))
        .min_by(|a, b| a.1.re.abs().total_cmp(&b.1.re.abs()))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::NoRealEigenvalue(format!("{} Ritz values scanned", values.len())))?;
    let col = idx[pick];
    let mut ritz = vec![ZERO; n];
    for (i, b) in basis.iter().take(steps).enumerate() {
        let c = y[(i, col)];
        ritz.iter_mut().zip(b).for_each(|(x, v)| *x += c * v);
    }
    let nearest = values.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let vector = if values[pick].norm() <= nearest * (1.0 + 1e-9) {
        inverse_iteration(&lu, ritz)
    } else {
        let shifted = shifted_lu(op, values[pick])?;
        inverse_iteration(&shifted, ritz)
    };
    let mut others = values.clone();
    others.remove(pick);
    Ok(SlowMode { value: values[pick], vector, others })
}

fn sum_x(spec: &ManifoldSpectrum) -> Operator {
    let dim = spec.fock_dim;
    spec.manifolds.iter().fold(Operator::zeros(dim), |acc, m| &acc + &pauli_operators(m).x)
}

fn start_vector(params: &SystemParams, basis: &OperatorBasis) -> Vec<Complex64> {
    let dim = basis.dim();
    let alpha = params.alpha();
    let mut v = vec![ZERO; basis.len()];
    if let Ok(space) = FockSpace::new(dim) {
        let plus = crate::fock::coherent_state(Complex64::new(alpha, 0.0), space);
        let minus = crate::fock::coherent_state(Complex64::new(-alpha, 0.0), space);
        if let (Ok(p), Ok(m)) = (plus, minus) {
            let rho = &Operator::outer(&p, &p) - &Operator::outer(&m, &m);
            v = basis.from_operator(&rho);
        }
    }
    if v.iter().map(|z| z.norm_sqr()).sum::<f64>() < 1e-20 {
        for (k, x) in v.iter_mut().enumerate() {
            *x = Complex64::new(1.0 / (1.0 + k as f64), 0.0);
        }
    }
    v
}

/// `-Tr[X L(rho)] / Tr[X rho]` with the dense generator.
pub fn gamma_from_trace(params: &SystemParams, x: &Operator, rho: &Operator) -> Result<Complex64> {
    let den = (x * rho).trace();
    if den.norm() == 0.0 {
        return Err(Error::Division("Tr[X rho] vanishes".into()));
    }
    Ok(-(x * &apply_lindbladian(params, rho)).trace() / den)
}

/// Switching rate from the odd-sector eigenvalue closest to zero, at the
/// auto-resolved cutoff.
pub fn switching_rate_numerical(params: &SystemParams, opts: &LindbladOptions) -> Result<NumericalRate> {
    let spec = solve_spectrum(params)?;
    switching_rate_for(&spec, opts)
}

/// Same, at the spectrum's Fock dimension; the spectrum fixes the sign of `rho_ex`.
pub fn switching_rate_for(spec: &ManifoldSpectrum, opts: &LindbladOptions) -> Result<NumericalRate> {
    let params = &spec.params;
    let space = FockSpace::new(spec.fock_dim)?;
    let op = build_lindbladian(params, space, Sector::Odd, opts)?;
    let tol = 1e-10 * params.kerr;
    let dense = op.len() <= opts.dense_limit;
    let mode = if dense {
        dense_slow_mode(&op, tol)?
    } else {
        arnoldi_slow_mode(&op, &start_vector(params, &op.basis), opts.krylov_dim, tol)?
    };

    let lv = op.apply(&mode.vector);
    let rq = dot(&mode.vector, &lv) / dot(&mode.vector, &mode.vector);
    let eigenvalue = if dense { mode.value } else { rq };
    if !is_real(eigenvalue, tol) {
        return Err(Error::NoRealEigenvalue(format!("refined slow mode has Im = {:e}", eigenvalue.im)));
    }
    let residual = lv
        .iter()
        .zip(&mode.vector)
        .map(|(a, b)| (a - eigenvalue * b).norm_sqr())
        .sum::<f64>()
        .sqrt();

    let mut rho = op.basis.to_operator(&mode.vector);
    let tx = (&sum_x(spec) * &rho).trace();
    if tx.norm() > 0.0 {
        rho = rho.scale(tx.conj() / tx.norm());
    }
    let gamma = -eigenvalue.re;
    let real_tol = |z: &Complex64| tol.max(if dense { 0.0 } else { 1e-6 * z.norm() });
    let next_real = mode
        .others
        .iter()
        .filter(|z| z.im.abs() < real_tol(z))
        .map(|z| z.re)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()));
    let separation = next_real.map(|r| r.abs() / gamma.abs());
    let well_separated = separation.is_none_or(|s| s >= opts.separation_threshold);
    Ok(NumericalRate {
        gamma,
        eigenvalue,
        next_real,
        separation,
        well_separated,
        rho_ex: rho,
        fock_dim: spec.fock_dim,
        dense,
        residual,
    })
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: Operator,
    pub trace: f64,
    /// `max |rho - rho^dag|`.
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

/// Unique trace-one fixed point, from the even sector with one row of the
/// generator replaced by the trace functional.
pub fn steady_state(params: &SystemParams, space: FockSpace, opts: &LindbladOptions) -> Result<SteadyState> {
    params.validate()?;
    let dim = space.dim();
    guard(sector_size(dim, Sector::Even), Sector::Even, opts)?;
    let basis = OperatorBasis::new(dim, Sector::Even);
    let trace_row: Vec<(usize, Complex64)> = (0..dim)
        .map(|i| (basis.index(i, i).expect("diagonal is even"), Complex64::new(1.0, 0.0)))
        .collect();
    let r0 = basis.index(0, 0).expect("vacuum projector is even");
    let m = assemble(params, &basis, Some((r0, &trace_row)))?;
    let lu = m.sp_lu().map_err(|e| Error::Singular(format!("steady-state system: {e:?}")))?;
    let mut rhs = vec![ZERO; basis.len()];
    rhs[r0] = Complex64::new(1.0, 0.0);
    let x = lu_solve(&lu, &rhs);
    let rho = basis.to_operator(&x);
    let herm = rho.max_abs_diff(&rho.adjoint());
    let sym = Mat::<Complex64>::from_fn(dim, dim, |i, j| 0.5 * (rho.get(i, j) + rho.get(j, i).conj()));
    let ev = sym
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("steady-state spectrum: {e:?}")))?;
    Ok(SteadyState {
        trace: rho.trace().re,
        hermiticity_error: herm,
        min_eigenvalue: ev.iter().copied().fold(f64::INFINITY, f64::min),
        rho,
    })
}

/// Per-manifold rates `-Tr[X L(I_n rho_ex I_n)] / Tr[X rho_ex]`, `X` summed
/// over the retained manifolds.
pub fn gamma_n_numerical(spec: &ManifoldSpectrum, rho_ex: &Operator) -> Result<Vec<f64>> {
    let x = sum_x(spec);
    let den = (&x * rho_ex).trace();
    if den.norm() == 0.0 {
        return Err(Error::Division("Tr[X rho_ex] vanishes".into()));
    }
    let mut out = Vec::with_capacity(spec.len());
    for m in &spec.manifolds {
        let proj = pauli_operators(m).identity;
        let block = &(&proj * rho_ex) * &proj;
        let num = (&x * &apply_lindbladian(&spec.params, &block)).trace();
        out.push((-num / den).re);
    }
    Ok(out)
}

/// Generator projected onto the in-manifold operators `|n p><n q|`.
///
/// Basis index `4n + 2p + q`, with `p, q = 0` for the even state and `1` for
/// the odd one.
#[derive(Clone, Debug)]
pub struct EffectiveLindbladian {
    pub matrix: Mat<Complex64>,
    pub manifolds: usize,
}

pub fn effective_index(n: usize, p: usize, q: usize) -> usize {
    4 * n + 2 * p + q
}

pub fn effective_lindbladian(spec: &ManifoldSpectrum) -> EffectiveLindbladian {
    let m = spec.len();
    let params = &spec.params;
    let states: Vec<[&StateVector; 2]> = spec.manifolds.iter().map(|x| [&x.state_even, &x.state_odd]).collect();
    let energies: Vec<[f64; 2]> = spec.manifolds.iter().map(|x| [x.energy_even, x.energy_odd]).collect();
    let mut l = Mat::<Complex64>::zeros(4 * m, 4 * m);
    for ch in channels(params) {
        let push = |v: &StateVector| -> StateVector {
            let img = if ch.raising { v.raised() } else { v.lowered() };
            img.scale(Complex64::new(ch.coef, 0.0))
        };
        let images: Vec<[StateVector; 2]> = states.iter().map(|s| [push(s[0]), push(s[1])]).collect();
        // <m r| O |n p>
        let elem = |mm: usize, r: usize, n: usize, p: usize| states[mm][r].inner(&images[n][p]);
        // <n r| O^dag O |n p>
        let odo = |n: usize, r: usize, p: usize| images[n][r].inner(&images[n][p]);
        for n in 0..m {
            for p in 0..2 {
                for q in 0..2 {
                    let col = effective_index(n, p, q);
                    for mm in 0..m {
                        for r in 0..2 {
                            for s in 0..2 {
                                l[(effective_index(mm, r, s), col)] += elem(mm, r, n, p) * elem(mm, s, n, q).conj();
                            }
                        }
                    }
                    for r in 0..2 {
                        l[(effective_index(n, r, q), col)] -= 0.5 * odo(n, r, p);
                        l[(effective_index(n, p, r), col)] -= 0.5 * odo(n, q, r);
                    }
                }
            }
        }
    }
    for n in 0..m {
        for p in 0..2 {
            for q in 0..2 {
                let k = effective_index(n, p, q);
                l[(k, k)] += -I * (energies[n][p] - energies[n][q]);
            }
        }
    }
    EffectiveLindbladian { matrix: l, manifolds: m }
}

/// Coefficients of a manifold-diagonal operator in the effective basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifoldPauli {
    I,
    X,
    Y,
    Z,
}

impl ManifoldPauli {
    /// Matrix in the (even, odd) basis of one manifold.
    fn matrix(self) -> [[Complex64; 2]; 2] {
        let o = Complex64::new(1.0, 0.0);
        match self {
            ManifoldPauli::I => [[o, ZERO], [ZERO, o]],
            ManifoldPauli::Z => [[o, ZERO], [ZERO, -o]],
            ManifoldPauli::X => [[ZERO, o], [o, ZERO]],
            ManifoldPauli::Y => [[ZERO, -I], [I, ZERO]],
        }
    }
}

impl EffectiveLindbladian {
    pub fn vector(&self, n: usize, op: ManifoldPauli) -> Vec<Complex64> {
        let mut v = vec![ZERO; 4 * self.manifolds];
        let s = op.matrix();
        for p in 0..2 {
            for q in 0..2 {
                v[effective_index(n, p, q)] = s[p][q];
            }
        }
        v
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = v.len();
        (0..n).map(|i| (0..n).map(|j| self.matrix[(i, j)] * v[j]).sum()).collect()
    }

    /// `Tr[S_n A]` for `A` given by its coefficients.
    pub fn trace_with(&self, n: usize, op: ManifoldPauli, v: &[Complex64]) -> Complex64 {
        let s = op.matrix();
        let mut t = ZERO;
        for p in 0..2 {
            for q in 0..2 {
                t += s[q][p] * v[effective_index(n, p, q)];
            }
        }
        t
    }

    /// Largest `|Tr[X_n L(I_m)]|`, `|Tr[X_n L(Z_m)]|` over manifold pairs.
    pub fn decoupling_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for mm in 0..self.manifolds {
            for src in [ManifoldPauli::I, ManifoldPauli::Z] {
                let out = self.apply(&self.vector(mm, src));
                for n in 0..self.manifolds {
                    worst = worst.max(self.trace_with(n, ManifoldPauli::X, &out).norm());
                }
            }
        }
        worst
    }

    /// Switching rate of the odd block spanned by `|n +><n -|` and `|n -><n +|`.
    pub fn projected_gamma(&self, kerr: f64) -> Result<f64> {
        let m = self.manifolds;
        let idx: Vec<usize> = (0..m).flat_map(|n| [effective_index(n, 0, 1), effective_index(n, 1, 0)]).collect();
        let block = Mat::<Complex64>::from_fn(idx.len(), idx.len(), |i, j| self.matrix[(idx[i], idx[j])]);
        let values = block
            .eigenvalues()
            .map_err(|e| Error::Eigensolver(format!("projected odd block: {e:?}")))?;
        let k = closest_real(&values, 1e-10 * kerr)
            .ok_or_else(|| Error::NoRealEigenvalue(format!("{} projected eigenvalues", values.len())))?;
        Ok(-values[k].re)
    }
}

/// Closure of the reduced equations of motion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ReducedMode {
    /// Every `Y_n` and `X_{n>0}` stationary.
    FullLinear,
    /// `mu_n Y_n = delta_n X_n`.
    ZerothY,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReducedGamma {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub gamma_n: Vec<f64>,
    pub gamma: f64,
}

/// Per-manifold rates from the stationary reduced equations with `X_0 = 1`.
/// `upward_only` keeps only couplings from lower manifolds in the `X` equations.
pub fn adiabatic_reduced_gamma(
    rates: &RateMatrices<f64>,
    splittings: &[f64],
    mode: ReducedMode,
    upward_only: bool,
) -> Result<ReducedGamma> {
    let m = rates.size();
    if m == 0 || splittings.len() != m {
        return Err(Error::InvalidParams(format!("{} splittings for {m} manifolds", splittings.len())));
    }
    let (mu, lambda) = dephasing_and_decay(rates)?;
    let (v, w) = (&rates.v, &rates.w);
    let d = splittings;
    let xcoup = |n: usize, i: usize| if upward_only && i > n { 0.0 } else { w.get(n, i) - v.get(n, i) };
    // Unknowns: X_1..X_{m-1}, then Y_0..Y_{m-1} (full mode only).
    let nx = m - 1;
    let ny = if mode == ReducedMode::FullLinear { m } else { 0 };
    let size = nx + ny;
    let mut a = Mat::<f64>::zeros(size.max(1), size.max(1));
    let mut b = Mat::<f64>::zeros(size.max(1), 1);
    let xi = |n: usize| n - 1;
    let yi = |n: usize| nx + n;
    for n in 1..m {
        let r = xi(n);
        match mode {
            ReducedMode::FullLinear => {
                a[(r, r)] -= lambda[n];
                a[(r, yi(n))] -= d[n];
            }
            ReducedMode::ZerothY => {
                if mu[n] == 0.0 && d[n] != 0.0 {
                    return Err(Error::Division(format!("manifold {n}: zero dephasing")));
                }
                let tun = if d[n] == 0.0 { 0.0 } else { d[n] * d[n] / mu[n] };
                a[(r, r)] -= lambda[n] + tun;
            }
        }
        for i in (0..m).filter(|&i| i != n) {
            let c = xcoup(n, i);
            if i == 0 {
                b[(r, 0)] -= c;
            } else {
                a[(r, xi(i))] += c;
            }
        }
    }
    if mode == ReducedMode::FullLinear {
        for n in 0..m {
            let r = yi(n);
            a[(r, r)] -= mu[n];
            if n == 0 {
                b[(r, 0)] -= d[0];
            } else {
                a[(r, xi(n))] += d[n];
            }
            for i in (0..m).filter(|&i| i != n) {
                a[(r, yi(i))] += v.get(n, i) - w.get(n, i);
            }
        }
    }
    let sol = if size == 0 {
        Mat::<f64>::zeros(0, 1)
    } else {
        let lu = a.partial_piv_lu();
        let sol = lu.solve(&b);
        let resid = (&a * &sol - &b).norm_max();
        let scale = a.norm_max() * sol.norm_max() + b.norm_max();
        if !sol.norm_max().is_finite() || resid > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Singular(format!("reduced system residual {resid:e}")));
        }
        sol
    };
    let mut x = vec![1.0; m];
    for n in 1..m {
        x[n] = sol[(xi(n), 0)];
    }
    let y: Vec<f64> = (0..m)
        .map(|n| match mode {
            ReducedMode::FullLinear => sol[(yi(n), 0)],
            ReducedMode::ZerothY if mu[n] > 0.0 => d[n] * x[n] / mu[n],
            ReducedMode::ZerothY => 0.0,
        })
        .collect();
    let total: f64 = x.iter().sum();
    let gamma_n: Vec<f64> = (0..m).map(|n| (d[n] * y[n] + 2.0 * rates.switching_out(n) * x[n]) / total).collect();
    let gamma = gamma_n.iter().sum();
    Ok(ReducedGamma { x, y, gamma_n, gamma })
}

/// `Pi L(rho) Pi - L(Pi rho Pi)` for the photon-number parity `Pi`.
pub fn parity_defect(params: &SystemParams, rho: &Operator) -> f64 {
    let space = FockSpace::new(rho.dim()).expect("operator dimension is a valid space");
    let pi = parity_operator(space);
    let lhs = &(&pi * &apply_lindbladian(params, rho)) * &pi;
    let rhs = apply_lindbladian(params, &(&(&pi * rho) * &pi));
    lhs.max_abs_diff(&rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{switching_semianalytic, transition_rates, SemiAnalyticOptions};
    use proptest::prelude::*;

    fn params() -> SystemParams {
        SystemParams::new(1.0, 2.0, 0.05, 0.02)
    }

    fn op_from(dim: usize, re: &[f64], im: &[f64]) -> Operator {
        Operator::from_fn(dim, |i, j| Complex64::new(re[i * dim + j], im[i * dim + j]))
    }

    #[test]
    fn sector_sizes() {
        for dim in [4, 7, 10] {
            let even = OperatorBasis::new(dim, Sector::Even).len();
            let odd = OperatorBasis::new(dim, Sector::Odd).len();
            assert_eq!(even + odd, dim * dim);
            assert_eq!(odd, sector_size(dim, Sector::Odd));
            assert_eq!(even, sector_size(dim, Sector::Even));
        }
        assert_eq!(OperatorBasis::new(10, Sector::Odd).len(), 50);
        let b = OperatorBasis::new(3, Sector::Odd);
        assert_eq!(b.pairs, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn vacuum_is_dark() {
        let p = SystemParams::new(1.0, 0.0, 0.1, 0.0);
        let space = FockSpace::new(8).unwrap();
        let op = build_lindbladian(&p, space, Sector::Even, &LindbladOptions::default()).unwrap();
        let vac = Operator::from_fn(8, |i, j| if i == 0 && j == 0 { Complex64::new(1.0, 0.0) } else { ZERO });
        assert!(op.apply_operator(&vac).norm() < 1e-12);
    }

    #[test]
    fn memory_guard() {
        let opts = LindbladOptions { max_basis: 100, ..Default::default() };
        let err = build_lindbladian(&params(), FockSpace::new(12).unwrap(), Sector::Full, &opts).unwrap_err();
        assert!(matches!(err, Error::SizeLimit(ref s) if s.contains("sector")));
        assert!(build_lindbladian(&params(), FockSpace::new(12).unwrap(), Sector::Odd, &opts).is_ok());
        assert!(build_lindbladian(&params(), FockSpace::new(16).unwrap(), Sector::Odd, &opts).is_err());
        assert!(build_lindbladian(&params(), FockSpace::new(14).unwrap(), Sector::Odd, &LindbladOptions::default()).is_ok());
    }

    #[test]
    fn steady_state_is_physical() {
        let p = params();
        let space = FockSpace::new(30).unwrap();
        let ss = steady_state(&p, space, &LindbladOptions::default()).unwrap();
        assert!((ss.trace - 1.0).abs() < 1e-10);
        assert!(ss.hermiticity_error < 1e-10);
        assert!(ss.min_eigenvalue > -1e-9, "{}", ss.min_eigenvalue);
        assert!(apply_lindbladian(&p, &ss.rho).norm() < 1e-9);
        // Unique zero mode: the even block has one eigenvalue at 0, the next is away from it.
        let even = build_lindbladian(&p, FockSpace::new(16).unwrap(), Sector::Even, &LindbladOptions::default()).unwrap();
        let mut mags: Vec<f64> = even.to_dense().eigenvalues().unwrap().iter().map(|z| z.norm()).collect();
        mags.sort_by(f64::total_cmp);
        assert!(mags[0] < 1e-10);
        assert!(mags[1] > 1e-6, "{}", mags[1]);
    }

    #[test]
    fn dense_and_arnoldi_agree() {
        let p = SystemParams::new(1.0, 3.0, 0.05, 0.05).with_dim(30);
        let spec = solve_spectrum(&p).unwrap();
        let dense = switching_rate_for(&spec, &LindbladOptions { dense_limit: 10_000, ..Default::default() }).unwrap();
        let sparse = switching_rate_for(&spec, &LindbladOptions { dense_limit: 0, ..Default::default() }).unwrap();
        assert!(dense.dense && !sparse.dense);
        assert!((dense.gamma - sparse.gamma).abs() < 1e-9 * dense.gamma, "{} {}", dense.gamma, sparse.gamma);
        assert!(sparse.residual < 1e-9);
        let diff = dense.rho_ex.scale(Complex64::new(1.0 / dense.rho_ex.norm(), 0.0));
        let diff = diff.max_abs_diff(&sparse.rho_ex.scale(Complex64::new(1.0 / sparse.rho_ex.norm(), 0.0)));
        assert!(diff < 1e-7, "{diff}");
        assert!(dense.well_separated);
    }

    #[test]
    fn trace_formula_matches_eigenvalue() {
        let p = SystemParams::new(1.0, 2.5, 0.05, 0.05).with_dim(30);
        let spec = solve_spectrum(&p).unwrap();
        let rate = switching_rate_for(&spec, &LindbladOptions::default()).unwrap();
        let ss = steady_state(&p, FockSpace::new(30).unwrap(), &LindbladOptions::default()).unwrap();
        let x = sum_x(&spec);
        assert!((&x * &rate.rho_ex).trace().im.abs() < 1e-12);
        assert!((&x * &rate.rho_ex).trace().re > 0.0);
        for c in [1.0, 0.3, 7.0] {
            let rho = &ss.rho + &rate.rho_ex.scale(Complex64::new(c, 0.0));
            let g = gamma_from_trace(&p, &x, &rho).unwrap();
            assert!((g.re - rate.gamma).abs() < 1e-8 * rate.gamma, "{} {}", g.re, rate.gamma);
        }
    }

    #[test]
    fn single_manifold_carries_everything_below_unit_amplitude() {
        let p = SystemParams::new(1.0, 0.5, 0.025, 0.05).with_dim(30).with_manifolds(1);
        let spec = solve_spectrum(&p).unwrap();
        let rate = switching_rate_for(&spec, &LindbladOptions::default()).unwrap();
        let gn = gamma_n_numerical(&spec, &rate.rho_ex).unwrap();
        assert!((gn[0] - rate.gamma).abs() < 0.05 * rate.gamma, "{} {}", gn[0], rate.gamma);
    }

    #[test]
    fn effective_generator_preserves_trace_and_decouples() {
        let p = SystemParams::new(1.0, 5.0, 0.02, 0.05).with_manifolds(4);
        let spec = solve_spectrum(&p).unwrap();
        let l = effective_lindbladian(&spec);
        assert!(l.decoupling_residual() < 1e-12, "{}", l.decoupling_residual());
        // Identity on the whole retained space loses trace only through the truncation edge.
        let g = l.projected_gamma(1.0).unwrap();
        assert!(g > 0.0);
        let full = switching_rate_for(&spec, &LindbladOptions::default()).unwrap();
        let ratio = g / full.gamma;
        assert!(ratio > 0.5 && ratio < 2.0, "{ratio}");
    }

    #[test]
    fn effective_generator_matches_projection_of_full() {
        let p = SystemParams::new(1.0, 3.0, 0.05, 0.1).with_dim(24).with_manifolds(3);
        let spec = solve_spectrum(&p).unwrap();
        let l = effective_lindbladian(&spec);
        for n in 0..3 {
            let m = &spec.manifolds[n];
            let st = [&m.state_even, &m.state_odd];
            for pp in 0..2 {
                for qq in 0..2 {
                    let e = Operator::outer(st[pp], st[qq]);
                    let out = apply_lindbladian(&p, &e);
                    for mm in 0..3 {
                        let s = [&spec.manifolds[mm].state_even, &spec.manifolds[mm].state_odd];
                        for r in 0..2 {
                            for t in 0..2 {
                                let want = out.matrix_element(s[r], s[t]);
                                let got = l.matrix[(effective_index(mm, r, t), effective_index(n, pp, qq))];
                                assert!((want - got).norm() < 1e-10, "{want} {got}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reduced_single_manifold() {
        let p = SystemParams::new(1.0, 4.0, 0.02, 0.05).with_manifolds(1);
        let spec = solve_spectrum(&p).unwrap();
        let r = transition_rates(&spec).unwrap();
        let (mu, _) = dephasing_and_decay(&r).unwrap();
        let d = spec.splittings();
        let want = d[0] * d[0] / mu[0] + 2.0 * r.v.get(0, 0);
        for mode in [ReducedMode::FullLinear, ReducedMode::ZerothY] {
            let g = adiabatic_reduced_gamma(&r, &d, mode, false).unwrap();
            assert!((g.gamma - want).abs() < 1e-14 * want.max(1e-300));
        }
    }

    #[test]
    fn zeroth_y_upward_is_the_semianalytic_pipeline() {
        let p = SystemParams::new(1.0, 6.0, 0.02, 0.05).with_manifolds(3);
        let spec = solve_spectrum(&p).unwrap();
        let r = transition_rates(&spec).unwrap();
        let d = spec.splittings();
        let g = adiabatic_reduced_gamma(&r, &d, ReducedMode::ZerothY, true).unwrap();
        let opts = SemiAnalyticOptions { merge_lambda: false, downward_correction: false };
        let s = switching_semianalytic(&r, &d, opts).unwrap();
        for n in 0..3 {
            let rel = (g.gamma_n[n] - s.gamma_n_weighted[n]).abs() / s.gamma_n_weighted[n].abs().max(1e-300);
            assert!(rel < 1e-10, "manifold {n}: {} vs {}", g.gamma_n[n], s.gamma_n_weighted[n]);
        }
    }

    #[test]
    fn binary_dump_layout() {
        let p = params();
        let op = build_lindbladian(&p, FockSpace::new(4).unwrap(), Sector::Odd, &LindbladOptions::default()).unwrap();
        let mut buf = Vec::new();
        op.write_binary(&mut buf).unwrap();
        let header = 8 + 4 + 8 + 4 + 8 + 32;
        assert_eq!(buf.len(), header + 8 * 8 * 16);
        assert_eq!(&buf[..8], b"KWLSUPER");
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 2);
        let eps2 = f64::from_le_bytes(buf[40..48].try_into().unwrap());
        assert_eq!(eps2, 2.0);
        let dense = op.to_dense();
        let at = header + (8 + 3) * 16;
        let re = f64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
        let im = f64::from_le_bytes(buf[at + 8..at + 16].try_into().unwrap());
        assert_eq!(Complex64::new(re, im), dense[(1, 3)]);
    }

    const D: usize = 6;

    fn arb_op() -> impl Strategy<Value = Operator> {
        (prop::collection::vec(-1.0f64..1.0, D * D), prop::collection::vec(-1.0f64..1.0, D * D))
            .prop_map(|(re, im)| op_from(D, &re, &im))
    }

    fn arb_params() -> impl Strategy<Value = SystemParams> {
        (0.0f64..3.0, 0.001f64..0.2, 0.0f64..0.3).prop_map(|(e, k, n)| SystemParams::new(1.0, e, k, n))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn generator_is_trace_free(p in arb_params(), rho in arb_op()) {
            prop_assert!(apply_lindbladian(&p, &rho).trace().norm() < 1e-10);
        }

        #[test]
        fn generator_preserves_hermiticity(p in arb_params(), rho in arb_op()) {
            let h = &rho + &rho.adjoint();
            let out = apply_lindbladian(&p, &h);
            prop_assert!(out.max_abs_diff(&out.adjoint()) < 1e-10);
        }

        #[test]
        fn generator_commutes_with_parity(p in arb_params(), rho in arb_op()) {
            prop_assert!(parity_defect(&p, &rho) < 1e-11);
        }

        #[test]
        fn sectors_reconstruct_full(p in arb_params(), rho in arb_op()) {
            let space = FockSpace::new(D).unwrap();
            let o = LindbladOptions::default();
            let full = build_lindbladian(&p, space, Sector::Full, &o).unwrap();
            let even = build_lindbladian(&p, space, Sector::Even, &o).unwrap();
            let odd = build_lindbladian(&p, space, Sector::Odd, &o).unwrap();
            let dense = apply_lindbladian(&p, &rho);
            let sum = &even.apply_operator(&rho) + &odd.apply_operator(&rho);
            prop_assert!(full.apply_operator(&rho).max_abs_diff(&dense) < 1e-12);
            prop_assert!(sum.max_abs_diff(&dense) < 1e-12);
        }
    }
}
