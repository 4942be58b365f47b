//! Truncated Fock space: ladder operators, the driven Kerr Hamiltonian and
//! the states used throughout the crate.

use std::ops::{Add, Mul, Sub};

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Number of Fock levels kept, `|0>` .. `|dim-1>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockSpace {
    dim: usize,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidSpace(format!("dim must be >= 2, got {dim}")));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Fock truncation: fixed, or chosen by the convergence loop in
/// [`crate::spectrum::resolve_cutoff`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cutoff {
    Auto,
    Fixed(usize),
}

/// Number of manifolds retained by the spectrum and rate pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldCount {
    Auto,
    Fixed(usize),
}

/// Physical and numerical knobs. Rates and energies share the units of `kerr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub kerr: f64,
    pub eps2: f64,
    pub kappa: f64,
    pub nth: f64,
    pub cutoff: Cutoff,
    pub manifolds: ManifoldCount,
    /// Eigenvalue drift (in units of `kerr`) tolerated by the auto cutoff.
    pub cutoff_tol: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            kerr: 1.0,
            eps2: 4.0,
            kappa: 0.025,
            nth: 0.05,
            cutoff: Cutoff::Auto,
            manifolds: ManifoldCount::Auto,
            cutoff_tol: 1e-9,
        }
    }
}

impl SystemParams {
    pub fn new(kerr: f64, eps2: f64, kappa: f64, nth: f64) -> Self {
        Self { kerr, eps2, kappa, nth, ..Self::default() }
    }

    pub fn with_eps2(mut self, eps2: f64) -> Self {
        self.eps2 = eps2;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_nth(mut self, nth: f64) -> Self {
        self.nth = nth;
        self
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.cutoff = Cutoff::Fixed(dim);
        self
    }

    pub fn with_manifolds(mut self, m: usize) -> Self {
        self.manifolds = ManifoldCount::Fixed(m);
        self
    }

    /// Squared cat amplitude `eps2 / kerr`.
    pub fn alpha_sq(&self) -> f64 {
        self.eps2 / self.kerr
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_sq().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_string()));
        if !(self.kerr.is_finite() && self.kerr > 0.0) {
            return bad("kerr must be finite and > 0");
        }
        if !(self.eps2.is_finite() && self.eps2 >= 0.0) {
            return bad("eps2 must be finite and >= 0");
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad("kappa must be finite and >= 0");
        }
        if !(self.nth.is_finite() && self.nth >= 0.0) {
            return bad("nth must be finite and >= 0");
        }
        if let Cutoff::Fixed(d) = self.cutoff {
            if d < 2 {
                return bad("fock dim must be >= 2");
            }
        }
        if self.manifolds == ManifoldCount::Fixed(0) {
            return bad("manifold count must be >= 1");
        }
        if !(self.cutoff_tol > 0.0) {
            return bad("cutoff tolerance must be > 0");
        }
        Ok(())
    }
}

/// Dense complex operator on a truncated Fock space.
#[derive(Clone, Debug)]
pub struct Operator {
    matrix: Mat<Complex64>,
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self { matrix: Mat::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self { matrix: Mat::from_fn(dim, dim, f) }
    }

    pub fn diagonal(diag: &[Complex64]) -> Self {
        Self::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { ZERO })
    }

    pub fn from_mat(matrix: Mat<Complex64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "operator must be square");
        Self { matrix }
    }

    /// `|ket><bra|`.
    pub fn outer(ket: &StateVector, bra: &StateVector) -> Self {
        let (k, b) = (ket.amplitudes(), bra.amplitudes());
        Self::from_fn(k.len(), |i, j| k[i] * b[j].conj())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Mat<Complex64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint().to_owned() }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let n = self.dim();
        Self::from_fn(n, |i, j| self.matrix[(i, j)] * s)
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        &(self * other) - &(other * self)
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.matrix.norm_l2()
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        let n = self.dim();
        let mut m = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                m = m.max((self.matrix[(i, j)] - other.matrix[(i, j)]).norm());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| self.matrix[(i, j)].is_finite()))
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        let n = self.dim();
        let x = v.amplitudes();
        let mut out = vec![ZERO; n];
        for j in 0..n {
            if x[j] == ZERO {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.matrix[(i, j)] * x[j];
            }
        }
        StateVector::new(out)
    }

    /// `<bra| self |ket>`.
    pub fn matrix_element(&self, bra: &StateVector, ket: &StateVector) -> Complex64 {
        bra.inner(&self.apply(ket))
    }

    pub fn expectation(&self, v: &StateVector) -> Complex64 {
        self.matrix_element(v, v)
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        Operator { matrix: &self.matrix * &rhs.matrix }
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        Operator { matrix: &self.matrix + &rhs.matrix }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        Operator { matrix: &self.matrix - &rhs.matrix }
    }
}

/// Ket amplitudes in the Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amps: Vec<Complex64>) -> Self {
        Self { amps }
    }

    pub fn from_real(amps: &[f64]) -> Self {
        Self::new(amps.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    /// Fock state `|n>`.
    pub fn fock(n: usize, space: FockSpace) -> Result<Self> {
        if n >= space.dim() {
            return Err(Error::Truncation(format!("|{n}> outside dim {}", space.dim())));
        }
        let mut amps = vec![ZERO; space.dim()];
        amps[n] = ONE;
        Ok(Self::new(amps))
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::new(self.amps.iter().map(|a| a * s).collect())
    }

    pub fn normalized(&self) -> Self {
        self.scale(Complex64::new(1.0 / self.norm(), 0.0))
    }

    pub fn add(&self, other: &StateVector) -> Self {
        Self::new(self.amps.iter().zip(&other.amps).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &StateVector) -> Self {
        Self::new(self.amps.iter().zip(&other.amps).map(|(a, b)| a - b).collect())
    }

    /// `a|self>` within the truncated space.
    pub fn lowered(&self) -> Self {
        let n = self.dim();
        Self::new((0..n).map(|k| if k + 1 < n { ((k + 1) as f64).sqrt() * self.amps[k + 1] } else { ZERO }).collect())
    }

    /// `a^dag|self>` within the truncated space (top level dropped).
    pub fn raised(&self) -> Self {
        Self::new((0..self.dim()).map(|k| if k > 0 { (k as f64).sqrt() * self.amps[k - 1] } else { ZERO }).collect())
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        self.sub(other).norm()
    }
}

/// Annihilation and creation operators.
pub fn make_ladder(space: FockSpace) -> (Operator, Operator) {
    let n = space.dim();
    let a = Operator::from_fn(n, |i, j| {
        if j == i + 1 {
            Complex64::new((j as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    let ad = a.adjoint();
    (a, ad)
}

/// Photon parity `exp(i pi a^dag a)`.
pub fn parity_operator(space: FockSpace) -> Operator {
    let d: Vec<_> = (0..space.dim())
        .map(|n| Complex64::new(if n % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    Operator::diagonal(&d)
}

pub fn number_operator(space: FockSpace) -> Operator {
    let d: Vec<_> = (0..space.dim()).map(|n| Complex64::new(n as f64, 0.0)).collect();
    Operator::diagonal(&d)
}

/// Matrix entry `<m|H|n>` of `-K a^dag^2 a^2 + eps2 (a^dag^2 + a^2)`; real.
pub(crate) fn hamiltonian_entry(params: &SystemParams, m: usize, n: usize) -> f64 {
    let k = params.kerr;
    if m == n {
        let nf = n as f64;
        -k * nf * (nf - 1.0)
    } else if m == n + 2 || n == m + 2 {
        let lo = m.min(n) as f64;
        params.eps2 * ((lo + 1.0) * (lo + 2.0)).sqrt()
    } else {
        0.0
    }
}

pub fn build_hamiltonian(params: &SystemParams, space: FockSpace) -> Operator {
    Operator::from_fn(space.dim(), |i, j| Complex64::new(hamiltonian_entry(params, i, j), 0.0))
}

/// No-jump Hamiltonian `H - i kappa a^dag a / 2`.
pub fn build_effective_hamiltonian(params: &SystemParams, space: FockSpace) -> Operator {
    Operator::from_fn(space.dim(), |i, j| {
        let damp = if i == j { -0.5 * params.kappa * i as f64 } else { 0.0 };
        Complex64::new(hamiltonian_entry(params, i, j), damp)
    })
}

const TAIL_TOL: f64 = 1e-10;

pub fn coherent_state(alpha: Complex64, space: FockSpace) -> Result<StateVector> {
    let n = space.dim();
    let mut amps = Vec::with_capacity(n);
    let mut c = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for k in 0..n {
        amps.push(c);
        c = c * alpha / ((k + 1) as f64).sqrt();
    }
    let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let tail = 1.0 - kept;
    if tail > TAIL_TOL {
        return Err(Error::Truncation(format!(
            "coherent state |alpha|^2={} loses tail mass {tail:e} at dim {n}",
            alpha.norm_sqr()
        )));
    }
    Ok(StateVector::new(amps))
}

/// Even (`even = true`) or odd cat state built from `|+alpha>` and `|-alpha>`.
pub fn cat_state(alpha: f64, even: bool, space: FockSpace) -> Result<StateVector> {
    let overlap = (-2.0 * alpha * alpha).exp();
    let norm_sq = if even { 2.0 + 2.0 * overlap } else { 2.0 - 2.0 * overlap };
    if norm_sq < 1e-12 {
        return Err(Error::IllConditioned(format!(
            "odd cat normalization diverges at alpha={alpha}"
        )));
    }
    let plus = coherent_state(Complex64::new(alpha, 0.0), space)?;
    let minus = coherent_state(Complex64::new(-alpha, 0.0), space)?;
    let sum = if even { plus.add(&minus) } else { plus.sub(&minus) };
    Ok(sum.scale(Complex64::new(norm_sq.powf(-0.5), 0.0)))
}

/// Classical energy landscape `K|b|^4 - eps2 (b*^2 + b^2)`.
pub fn double_well_potential(beta: Complex64, params: &SystemParams) -> f64 {
    let b2 = beta * beta;
    params.kerr * beta.norm_sqr().powi(2) - 2.0 * params.eps2 * b2.re
}
