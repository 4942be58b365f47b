//! Manifold-resolved transition rates and the closed-form switching rate.
//!
//! `V[p][q]` is the rate from the right well of manifold `q` into the left
//! well of manifold `p` (a switching jump); `W[p][q]` keeps the well.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::StateVector;
use crate::scalar::{lit, Real};
use crate::spectrum::{sector_indices, sector_matrix, ManifoldSpectrum};
use crate::Complex64;

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SquareMatrix<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Copy + num_traits::Zero> SquareMatrix<T> {
    pub fn zeros(size: usize) -> Self {
        Self { size, data: vec![T::zero(); size * size] }
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(size * size);
        for p in 0..size {
            for q in 0..size {
                data.push(f(p, q));
            }
        }
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, p: usize, q: usize) -> T {
        self.data[p * self.size + q]
    }

    pub fn set(&mut self, p: usize, q: usize, x: T) {
        self.data[p * self.size + q] = x;
    }

    pub fn map<U: Copy + num_traits::Zero>(&self, f: impl Fn(T) -> U) -> SquareMatrix<U> {
        SquareMatrix { size: self.size, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RateVariant {
    /// All matrix elements of `a` and `a^dag`.
    Full,
    /// Cooling by at most one manifold, thermal heating by at most `depth`
    /// manifolds per jump (`None`: unbounded).
    Cascaded { depth: Option<usize> },
    /// Cooling by at most one manifold, thermal heating only out of manifold 0.
    Direct,
    /// Ground manifold only.
    Ground,
    /// Rates between eigenstates of the non-Hermitian effective Hamiltonian.
    Nonhermitian,
}

impl RateVariant {
    pub fn label(&self) -> String {
        match self {
            RateVariant::Full => "all".into(),
            RateVariant::Cascaded { depth: Some(d) } => format!("casc({d})"),
            RateVariant::Cascaded { depth: None } => "casc(inf)".into(),
            RateVariant::Direct => "dir".into(),
            RateVariant::Ground => "g".into(),
            RateVariant::Nonhermitian => "nh".into(),
        }
    }
}

impl std::str::FromStr for RateVariant {
    type Err = Error;

    /// Inverse of [`RateVariant::label`].
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "all" => return Ok(RateVariant::Full),
            "dir" => return Ok(RateVariant::Direct),
            "g" => return Ok(RateVariant::Ground),
            "nh" => return Ok(RateVariant::Nonhermitian),
            _ => {}
        }
        let depth = t
            .strip_prefix("casc(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::InvalidVariant(format!("unknown variant '{t}'")))?;
        if depth == "inf" {
            return Ok(RateVariant::Cascaded { depth: None });
        }
        match depth.parse::<usize>() {
            Ok(d) if d >= 1 => Ok(RateVariant::Cascaded { depth: Some(d) }),
            _ => Err(Error::InvalidVariant(format!("bad cascade depth in '{t}'"))),
        }
    }
}

/// Squared ladder-operator matrix elements between well states, computed once
/// per spectrum. Entry `(p, q)` pairs bra manifold `p` with ket manifold `q`,
/// the ket always being the right well state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixElements {
    pub lower_left: SquareMatrix<f64>,
    pub lower_right: SquareMatrix<f64>,
    pub raise_left: SquareMatrix<f64>,
    pub raise_right: SquareMatrix<f64>,
}

pub fn matrix_elements(spec: &ManifoldSpectrum) -> MatrixElements {
    let m = spec.len();
    let lowered: Vec<StateVector> = spec.manifolds.iter().map(|x| x.state_right.lowered()).collect();
    let raised: Vec<StateVector> = spec.manifolds.iter().map(|x| x.state_right.raised()).collect();
    let el = |kets: &[StateVector], left: bool| {
        SquareMatrix::from_fn(m, |p, q| {
            let bra = if left { &spec.manifolds[p].state_left } else { &spec.manifolds[p].state_right };
            bra.inner(&kets[q]).norm_sqr()
        })
    };
    MatrixElements {
        lower_left: el(&lowered, true),
        lower_right: el(&lowered, false),
        raise_left: el(&raised, true),
        raise_right: el(&raised, false),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateMatrices<T> {
    pub v: SquareMatrix<T>,
    pub w: SquareMatrix<T>,
    pub variant: RateVariant,
    pub kappa: T,
    pub nth: T,
}

impl<T: Real> RateMatrices<T> {
    pub fn new(v: SquareMatrix<T>, w: SquareMatrix<T>, variant: RateVariant, kappa: T, nth: T) -> Result<Self> {
        if v.size() != w.size() || v.size() == 0 {
            return Err(Error::InvalidParams(format!("rate matrices of sizes {} and {}", v.size(), w.size())));
        }
        for (name, m) in [("V", &v), ("W", &w)] {
            if let Some(x) = m.as_slice().iter().find(|x| !(x.is_finite() && **x >= T::zero())) {
                return Err(Error::Invariant(format!("{name} has entry {x}")));
            }
        }
        Ok(Self { v, w, variant, kappa, nth })
    }

    pub fn size(&self) -> usize {
        self.v.size()
    }

    /// Keeps the leading `m` manifolds.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.size());
        Self {
            v: SquareMatrix::from_fn(m, |p, q| self.v.get(p, q)),
            w: SquareMatrix::from_fn(m, |p, q| self.w.get(p, q)),
            ..self.clone()
        }
    }

    /// `sum_f V[f][n]`.
    pub fn switching_out(&self, n: usize) -> T {
        (0..self.size()).fold(T::zero(), |s, f| s + self.v.get(f, n))
    }
}

/// Rates for `variant` built from cached matrix elements.
pub fn masked_rates(el: &MatrixElements, kappa: f64, nth: f64, variant: RateVariant) -> Result<RateMatrices<f64>> {
    let m = el.lower_left.size();
    let cool = kappa * (1.0 + nth);
    let heat = kappa * nth;
    let (keep_lower, keep_raise): (Box<dyn Fn(usize, usize) -> bool>, Box<dyn Fn(usize, usize) -> bool>) =
        match variant {
            RateVariant::Full => (Box::new(|_, _| true), Box::new(|_, _| true)),
            RateVariant::Cascaded { depth } => {
                if depth == Some(0) {
                    return Err(Error::InvalidVariant("cascade depth must be >= 1".into()));
                }
                let d = depth.unwrap_or(usize::MAX);
                (Box::new(|p, q| p + 1 >= q && p <= q), Box::new(move |p, q| p > q && p - q <= d))
            }
            RateVariant::Direct => (Box::new(|p, q| p + 1 >= q && p <= q), Box::new(|p, q| q == 0 && p > 0)),
            RateVariant::Ground => (Box::new(|p, q| p == 0 && q == 0), Box::new(|p, q| p == 0 && q == 0)),
            RateVariant::Nonhermitian => {
                return Err(Error::InvalidVariant("non-Hermitian rates need the perturbed basis".into()))
            }
        };
    let build = |lower: &SquareMatrix<f64>, raise: &SquareMatrix<f64>| {
        SquareMatrix::from_fn(m, |p, q| {
            let mut x = 0.0;
            if keep_lower(p, q) {
                x += cool * lower.get(p, q);
            }
            if keep_raise(p, q) {
                x += heat * raise.get(p, q);
            }
            x
        })
    };
    RateMatrices::new(
        build(&el.lower_left, &el.raise_left),
        build(&el.lower_right, &el.raise_right),
        variant,
        kappa,
        nth,
    )
}

/// Full rate matrices for the spectrum's `kappa` and `nth`.
pub fn transition_rates(spec: &ManifoldSpectrum) -> Result<RateMatrices<f64>> {
    masked_rates(&matrix_elements(spec), spec.params.kappa, spec.params.nth, RateVariant::Full)
}

/// Rate matrices of any variant; the non-Hermitian one uses `nth = 0`.
pub fn rate_variant(spec: &ManifoldSpectrum, variant: RateVariant) -> Result<RateMatrices<f64>> {
    match variant {
        RateVariant::Nonhermitian => nonhermitian_rates(spec, &nonhermitian_basis(spec)?, 0.0),
        _ => masked_rates(&matrix_elements(spec), spec.params.kappa, spec.params.nth, variant),
    }
}

/// Dephasing rates `mu` and decay rates `lambda` per manifold.
pub fn dephasing_and_decay<T: Real>(rates: &RateMatrices<T>) -> Result<(Vec<T>, Vec<T>)> {
    let m = rates.size();
    let two: T = lit(2.0);
    let mut mu = Vec::with_capacity(m);
    let mut lambda = Vec::with_capacity(m);
    for n in 0..m {
        let mut mu_n = two * rates.w.get(n, n);
        let mut lam_n = two * rates.switching_out(n);
        for f in (0..m).filter(|&f| f != n) {
            mu_n = mu_n + rates.w.get(f, n) + rates.v.get(f, n);
            lam_n = lam_n + rates.w.get(f, n) - rates.v.get(f, n);
        }
        if !(lam_n >= T::zero() && mu_n >= T::zero()) {
            return Err(Error::Invariant(format!("manifold {n}: mu = {mu_n}, lambda = {lam_n}")));
        }
        mu.push(mu_n);
        lambda.push(lam_n);
    }
    Ok((mu, lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SemiAnalyticOptions {
    /// Replace the tunnelling rate `delta^2 / mu` by `delta^2 / lambda`.
    pub merge_lambda: bool,
    /// Include the single-downward-step correction to the populations.
    pub downward_correction: bool,
}

impl Default for SemiAnalyticOptions {
    fn default() -> Self {
        Self { merge_lambda: false, downward_correction: true }
    }
}

/// Incoherent tunnelling rate per manifold.
pub fn tunnelling_rates<T: Real>(splittings: &[T], mu: &[T], lambda: &[T], opts: SemiAnalyticOptions) -> Result<Vec<T>> {
    splittings
        .iter()
        .enumerate()
        .map(|(n, &d)| {
            let den = if opts.merge_lambda { lambda[n] } else { mu[n] };
            if den == T::zero() {
                if d == T::zero() {
                    return Ok(T::zero());
                }
                return Err(Error::Division(format!("manifold {n}: zero rate under a nonzero splitting")));
            }
            Ok(d * d / den)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuasiEquilibrium<T> {
    /// Populations relative to the ground manifold, `k[0] = 1`.
    pub k: Vec<T>,
    /// Upward-only pass.
    pub k_zeroth: Vec<T>,
    pub r: SquareMatrix<T>,
}

/// Relative well-population imbalances of the excited manifolds.
pub fn quasi_equilibrium<T: Real>(
    rates: &RateMatrices<T>,
    splittings: &[T],
    mu: &[T],
    lambda: &[T],
    opts: SemiAnalyticOptions,
) -> Result<QuasiEquilibrium<T>> {
    let m = rates.size();
    check_len(m, splittings.len())?;
    let tun = tunnelling_rates(splittings, mu, lambda, opts)?;
    let mut r = SquareMatrix::zeros(m);
    for p in 0..m {
        let den = lambda[p] + tun[p];
        for q in (0..m).filter(|&q| q != p) {
            let num = rates.w.get(p, q) - rates.v.get(p, q);
            if num == T::zero() {
                continue;
            }
            if den == T::zero() {
                return Err(Error::Division(format!("manifold {p} has no outflow")));
            }
            r.set(p, q, num / den);
        }
    }
    let mut k0 = vec![T::zero(); m];
    k0[0] = T::one();
    for n in 1..m {
        k0[n] = (0..n).fold(T::zero(), |s, i| s + r.get(n, i) * k0[i]);
    }
    let k = if opts.downward_correction {
        let mut k = vec![T::zero(); m];
        k[0] = T::one();
        for n in 1..m {
            let up = (0..n).fold(T::zero(), |s, i| s + r.get(n, i) * k[i]);
            let down = (n + 1..m).fold(T::zero(), |s, i| s + r.get(n, i) * k0[i]);
            k[n] = up + down;
        }
        k
    } else {
        k0.clone()
    };
    Ok(QuasiEquilibrium { k, k_zeroth: k0, r })
}

fn check_len(m: usize, n: usize) -> Result<()> {
    if m == n {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{n} splittings for {m} manifolds")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemiAnalyticResult<T> {
    pub mu: Vec<T>,
    pub lambda: Vec<T>,
    pub k_factors: Vec<T>,
    pub k_zeroth: Vec<T>,
    /// Normalized imbalances `K_n / sum K`.
    pub xbar: Vec<T>,
    pub branching: Vec<T>,
    pub current: Vec<T>,
    /// Per-manifold rates: the ground term plus `f_n J_n` above it.
    pub gamma_n: Vec<T>,
    /// Per-manifold rates in the population-weighted form.
    pub gamma_n_weighted: Vec<T>,
    pub gamma: T,
}

pub fn switching_semianalytic<T: Real>(
    rates: &RateMatrices<T>,
    splittings: &[T],
    opts: SemiAnalyticOptions,
) -> Result<SemiAnalyticResult<T>> {
    let m = rates.size();
    check_len(m, splittings.len())?;
    let (mu, lambda) = dephasing_and_decay(rates)?;
    let tun = tunnelling_rates(splittings, &mu, &lambda, opts)?;
    let qe = quasi_equilibrium(rates, splittings, &mu, &lambda, opts)?;
    let total = qe.k.iter().fold(T::zero(), |s, &k| s + k);
    let xbar: Vec<T> = qe.k.iter().map(|&k| k / total).collect();
    let two: T = lit(2.0);
    let mut branching = Vec::with_capacity(m);
    let mut current = Vec::with_capacity(m);
    let mut gamma_n = Vec::with_capacity(m);
    let mut weighted = Vec::with_capacity(m);
    for n in 0..m {
        let switch = tun[n] + two * rates.switching_out(n);
        let den = tun[n] + lambda[n];
        let f = if den > T::zero() { switch / den } else { T::zero() };
        let j = (0..m)
            .filter(|&i| i != n)
            .fold(T::zero(), |s, i| s + (rates.w.get(n, i) - rates.v.get(n, i)) * xbar[i]);
        let w = switch * xbar[n];
        branching.push(f);
        current.push(j);
        weighted.push(w);
        gamma_n.push(if n == 0 { w } else { f * j });
    }
    let gamma = gamma_n.iter().fold(T::zero(), |s, &g| s + g);
    Ok(SemiAnalyticResult {
        mu,
        lambda,
        k_factors: qe.k,
        k_zeroth: qe.k_zeroth,
        xbar,
        branching,
        current,
        gamma_n,
        gamma_n_weighted: weighted,
        gamma,
    })
}

/// Switching rate of a variant. The ground variant is `2 V_00` of the full rates.
pub fn variant_switching_rate(spec: &ManifoldSpectrum, variant: RateVariant, opts: SemiAnalyticOptions) -> Result<f64> {
    if variant == RateVariant::Ground {
        let r = rate_variant(spec, variant)?;
        return Ok(2.0 * r.v.get(0, 0));
    }
    let r = rate_variant(spec, variant)?;
    Ok(switching_semianalytic(&r, &spec.splittings(), opts)?.gamma)
}

/// Eigenstates of the non-Hermitian effective Hamiltonian matched to the
/// unperturbed manifolds, with their biorthogonal duals. Duals are stored as
/// kets, so `dual.inner(right)` is the dual pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedSpectrum {
    pub right_even: Vec<StateVector>,
    pub right_odd: Vec<StateVector>,
    pub dual_even: Vec<StateVector>,
    pub dual_odd: Vec<StateVector>,
    pub well_right: Vec<StateVector>,
    pub well_left: Vec<StateVector>,
    pub dual_right: Vec<StateVector>,
    pub dual_left: Vec<StateVector>,
    pub eigenvalues_even: Vec<Complex64>,
    pub eigenvalues_odd: Vec<Complex64>,
    /// `max |<xi_p|phi_q> - delta_pq|` over the retained states.
    pub biorthogonality_residual: f64,
}

struct SectorPerturbed {
    right: Vec<StateVector>,
    dual: Vec<StateVector>,
    values: Vec<Complex64>,
}

fn perturb_sector(spec: &ManifoldSpectrum, odd: bool) -> Result<SectorPerturbed> {
    let dim = spec.fock_dim;
    let idx = sector_indices(dim, odd);
    let n = idx.len();
    let half_kappa = 0.5 * spec.params.kappa;
    let h = sector_matrix(&spec.params, dim, odd);
    let heff = Mat::<Complex64>::from_fn(n, n, |i, j| {
        let mut x = Complex64::new(h[(i, j)], 0.0);
        if i == j {
            x.im -= half_kappa * idx[i] as f64;
        }
        x
    });
    let evd = heff
        .eigen()
        .map_err(|e| Error::Eigensolver(format!("effective Hamiltonian sector (odd = {odd}): {e:?}")))?;
    let u = evd.U();
    let s = evd.S().column_vector();
    let inv = u.to_owned().partial_piv_lu().inverse();

    let mut used = vec![false; n];
    let mut out = SectorPerturbed { right: Vec::new(), dual: Vec::new(), values: Vec::new() };
    for man in &spec.manifolds {
        let psi = if odd { &man.state_odd } else { &man.state_even };
        let amps = psi.amplitudes();
        let mut best = (0usize, 0.0f64, Complex64::new(0.0, 0.0));
        let mut strong = 0;
        for k in 0..n {
            let mut ov = Complex64::new(0.0, 0.0);
            let mut norm = 0.0;
            for (r, &f) in idx.iter().enumerate() {
                ov += amps[f].conj() * u[(r, k)];
                norm += u[(r, k)].norm_sqr();
            }
            let w = ov.norm() / norm.sqrt();
            if w > 0.5 {
                strong += 1;
            }
            if w > best.1 {
                best = (k, w, ov);
            }
        }
        let (k, w, ov) = best;
        if strong > 1 || used[k] || w < 0.5 {
            return Err(Error::Pairing(format!(
                "manifold {} (odd = {odd}): best overlap {w:.3}, {strong} candidates above 0.5",
                man.index
            )));
        }
        used[k] = true;
        let mut right = vec![Complex64::new(0.0, 0.0); dim];
        let mut dual = vec![Complex64::new(0.0, 0.0); dim];
        for (r, &f) in idx.iter().enumerate() {
            right[f] = u[(r, k)] / ov;
            dual[f] = (inv[(k, r)] * ov).conj();
        }
        out.right.push(StateVector::new(right));
        out.dual.push(StateVector::new(dual));
        out.values.push(s[k]);
    }
    Ok(out)
}

pub fn nonhermitian_basis(spec: &ManifoldSpectrum) -> Result<PerturbedSpectrum> {
    if !(spec.params.kappa > 0.0) {
        return Err(Error::InvalidParams("non-Hermitian basis needs kappa > 0".into()));
    }
    let even = perturb_sector(spec, false)?;
    let odd = perturb_sector(spec, true)?;
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let m = spec.len();
    let mut p = PerturbedSpectrum {
        well_right: (0..m).map(|k| even.right[k].add(&odd.right[k]).scale(s)).collect(),
        well_left: (0..m).map(|k| even.right[k].sub(&odd.right[k]).scale(s)).collect(),
        dual_right: (0..m).map(|k| even.dual[k].add(&odd.dual[k]).scale(s)).collect(),
        dual_left: (0..m).map(|k| even.dual[k].sub(&odd.dual[k]).scale(s)).collect(),
        right_even: even.right,
        right_odd: odd.right,
        dual_even: even.dual,
        dual_odd: odd.dual,
        eigenvalues_even: even.values,
        eigenvalues_odd: odd.values,
        biorthogonality_residual: 0.0,
    };
    let rights: Vec<&StateVector> = p.right_even.iter().chain(&p.right_odd).collect();
    let duals: Vec<&StateVector> = p.dual_even.iter().chain(&p.dual_odd).collect();
    let mut worst: f64 = 0.0;
    for (i, d) in duals.iter().enumerate() {
        for (j, r) in rights.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((d.inner(r) - target).norm());
        }
    }
    p.biorthogonality_residual = worst;
    Ok(p)
}

/// Non-Hermitian-basis rates: cooling channel only, between neighbouring
/// manifolds, with prefactor `kappa (1 + nth)`.
pub fn nonhermitian_rates(spec: &ManifoldSpectrum, basis: &PerturbedSpectrum, nth: f64) -> Result<RateMatrices<f64>> {
    let m = spec.len();
    let pref = spec.params.kappa * (1.0 + nth);
    let lowered: Vec<StateVector> = basis.well_right.iter().map(|x| x.lowered()).collect();
    let near = |p: usize, q: usize| p + 1 >= q && p <= q + 1;
    let v = SquareMatrix::from_fn(m, |p, q| if near(p, q) { pref * basis.dual_left[p].inner(&lowered[q]).norm_sqr() } else { 0.0 });
    let w = SquareMatrix::from_fn(m, |p, q| if near(p, q) { pref * basis.dual_right[p].inner(&lowered[q]).norm_sqr() } else { 0.0 });
    RateMatrices::new(v, w, RateVariant::Nonhermitian, spec.params.kappa, nth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::SystemParams;
    use crate::spectrum::solve_spectrum;
    use proptest::prelude::*;

    fn spec(eps2: f64, kappa: f64, nth: f64) -> ManifoldSpectrum {
        solve_spectrum(&SystemParams::new(1.0, eps2, kappa, nth)).unwrap()
    }

    #[test]
    fn full_rates_match_definition() {
        let s = spec(4.0, 0.025, 0.05);
        let r = transition_rates(&s).unwrap();
        let (a, ad) = crate::fock::make_ladder(crate::fock::FockSpace::new(s.fock_dim).unwrap());
        for p in 0..s.len() {
            for q in 0..s.len() {
                let l = &s.manifolds[p].state_left;
                let rr = &s.manifolds[p].state_right;
                let k = &s.manifolds[q].state_right;
                let v = 0.025 * 1.05 * a.matrix_element(l, k).norm_sqr() + 0.025 * 0.05 * ad.matrix_element(l, k).norm_sqr();
                let w = 0.025 * 1.05 * a.matrix_element(rr, k).norm_sqr() + 0.025 * 0.05 * ad.matrix_element(rr, k).norm_sqr();
                assert!((r.v.get(p, q) - v).abs() <= 1e-12 * v.max(1e-300));
                assert!((r.w.get(p, q) - w).abs() <= 1e-12 * w.max(1e-300));
            }
        }
    }

    #[test]
    fn rate_scales() {
        let s = spec(4.0, 0.01, 0.0);
        let r = transition_rates(&s).unwrap();
        let w00 = r.w.get(0, 0) / 0.01;
        assert!((w00 / 4.0 - 1.0).abs() < 0.03, "W00/kappa = {w00}");

        let s = spec(6.0, 0.01, 0.0);
        let r = transition_rates(&s).unwrap();
        assert!(r.v.get(0, 0) / r.w.get(0, 0) < (-18.0f64).exp());

        let s = spec(8.0, 0.01, 0.0);
        let r = transition_rates(&s).unwrap();
        let w01 = r.w.get(0, 1) / 0.01;
        assert!((w01 - 1.0).abs() < 0.2, "W01/kappa = {w01}");
    }

    #[test]
    fn dephasing_and_decay_scales() {
        let s = spec(6.0, 0.01, 0.01);
        let (mu, _) = dephasing_and_decay(&transition_rates(&s).unwrap()).unwrap();
        assert!((mu[0] / (2.0 * 0.01 * 6.0) - 1.0).abs() < 0.15, "mu0 = {}", mu[0]);

        let s = spec(9.0, 0.01, 0.0);
        let (_, lambda) = dephasing_and_decay(&transition_rates(&s).unwrap()).unwrap();
        assert!((lambda[1] / 0.01 - 1.0).abs() < 0.3, "lambda1 = {}", lambda[1]);
        assert!((lambda[2] / 0.02 - 1.0).abs() < 0.3, "lambda2 = {}", lambda[2]);
    }

    #[test]
    fn diagonal_only_rates_collapse() {
        let v = SquareMatrix::from_fn(3, |p, q| if p == q { 0.1 * (p + 1) as f64 } else { 0.0 });
        let w = SquareMatrix::from_fn(3, |p, q| if p == q { 0.5 + p as f64 } else { 0.0 });
        let r = RateMatrices::new(v.clone(), w.clone(), RateVariant::Full, 1.0, 0.0).unwrap();
        let (mu, lambda) = dephasing_and_decay(&r).unwrap();
        for n in 0..3 {
            assert_eq!(mu[n], 2.0 * w.get(n, n));
            assert_eq!(lambda[n], 2.0 * v.get(n, n));
        }
    }

    #[test]
    fn single_manifold() {
        let r = RateMatrices::new(
            SquareMatrix::from_fn(1, |_, _| 0.003),
            SquareMatrix::from_fn(1, |_, _| 0.2),
            RateVariant::Full,
            0.05,
            0.0,
        )
        .unwrap();
        let res = switching_semianalytic(&r, &[0.01], SemiAnalyticOptions::default()).unwrap();
        assert_eq!(res.k_factors, vec![1.0]);
        let expect: f64 = 0.01 * 0.01 / 0.4 + 2.0 * 0.003;
        assert!((res.gamma - expect).abs() < 1e-15);
    }

    #[test]
    fn ground_population_dominates_at_zero_temperature() {
        let s = spec(4.0, 0.025, 0.0);
        let r = transition_rates(&s).unwrap();
        let (mu, lambda) = dephasing_and_decay(&r).unwrap();
        let qe = quasi_equilibrium(&r, &s.splittings(), &mu, &lambda, SemiAnalyticOptions::default()).unwrap();
        assert!(qe.k[1] < 1e-3, "K1 = {}", qe.k[1]);
    }

    #[test]
    fn populations_decrease_upwards() {
        let s = spec(9.0, 0.025, 0.05);
        let r = transition_rates(&s).unwrap();
        let res = switching_semianalytic(&r, &s.splittings(), SemiAnalyticOptions::default()).unwrap();
        let k = &res.k_factors;
        assert!(k[0] > k[1] && k[1] > k[2], "{k:?}");
        assert!(k.iter().all(|&x| x >= 0.0));
        let sum: f64 = res.xbar.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(res.branching.iter().all(|&f| (0.0..=1.0).contains(&f)));
        let total: f64 = res.gamma_n.iter().sum();
        assert_eq!(total, res.gamma);
    }

    /// Sum over index paths from 0 to `n` that never revisit 0 and take at
    /// most one downward step.
    fn brute_force_k(r: &SquareMatrix<f64>, n: usize) -> f64 {
        fn walk(r: &SquareMatrix<f64>, at: usize, target: usize, descended: bool, weight: f64, acc: &mut f64) {
            if at == target {
                *acc += weight;
            }
            let m = r.size();
            for next in 1..m {
                if next == at {
                    continue;
                }
                let down = next < at;
                if down && descended {
                    continue;
                }
                walk(r, next, target, descended || down, weight * r.get(next, at), acc);
            }
        }
        let mut acc = 0.0;
        walk(r, 0, n, false, 1.0, &mut acc);
        acc
    }

    #[test]
    fn two_pass_matches_path_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut next = move || rng.gen::<f64>();
        for m in 2..=5 {
            for _ in 0..5 {
                let v = SquareMatrix::from_fn(m, |_, _| 0.1 * next());
                let w = SquareMatrix::from_fn(m, |_, _| 0.2 + next());
                let r = RateMatrices::new(v, w, RateVariant::Full, 1.0, 0.0).unwrap();
                let delta: Vec<f64> = (0..m).map(|_| next()).collect();
                let (mu, lambda) = dephasing_and_decay(&r).unwrap();
                let qe = quasi_equilibrium(&r, &delta, &mu, &lambda, SemiAnalyticOptions::default()).unwrap();
                for n in 1..m {
                    let b = brute_force_k(&qe.r, n);
                    assert!((qe.k[n] - b).abs() < 1e-12 * b.abs().max(1.0), "m={m} n={n}: {} vs {b}", qe.k[n]);
                }
            }
        }
    }

    #[test]
    fn variant_labels_parse_back() {
        for v in [
            RateVariant::Full,
            RateVariant::Direct,
            RateVariant::Ground,
            RateVariant::Nonhermitian,
            RateVariant::Cascaded { depth: None },
            RateVariant::Cascaded { depth: Some(3) },
        ] {
            assert_eq!(v.label().parse::<RateVariant>().unwrap(), v);
        }
        assert!("casc(0)".parse::<RateVariant>().is_err());
        assert!("cascade".parse::<RateVariant>().is_err());
    }

    #[test]
    fn variant_definitions() {
        let s = spec(6.0, 0.025, 0.0);
        let full = transition_rates(&s).unwrap();
        let casc = rate_variant(&s, RateVariant::Cascaded { depth: None }).unwrap();
        let dir = rate_variant(&s, RateVariant::Direct).unwrap();
        let el = matrix_elements(&s);
        for p in 0..s.len() {
            for q in 0..s.len() {
                assert_eq!(casc.v.get(p, q), dir.v.get(p, q));
                let keep = p + 1 >= q && p <= q;
                let expect = if keep { full.v.get(p, q) } else { 0.0 };
                assert_eq!(casc.v.get(p, q), expect);
                assert_eq!(casc.w.get(p, q), if keep { 0.025 * el.lower_right.get(p, q) } else { 0.0 });
            }
        }
        assert!(matches!(
            rate_variant(&s, RateVariant::Cascaded { depth: Some(0) }),
            Err(Error::InvalidVariant(_))
        ));
    }

    #[test]
    fn ground_variant_scaling() {
        let xs = [3.0, 4.0, 5.0, 6.0];
        let ys: Vec<f64> = xs
            .iter()
            .map(|&a2| {
                let s = solve_spectrum(&SystemParams::new(1.0, a2, 0.01, 0.0)).unwrap();
                (variant_switching_rate(&s, RateVariant::Ground, SemiAnalyticOptions::default()).unwrap() / 0.01).ln()
            })
            .collect();
        let slope = (ys[3] - ys[0]) / (xs[3] - xs[0]);
        assert!((slope + 4.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn nonhermitian_basis_properties() {
        let s = solve_spectrum(&SystemParams::new(1.0, 6.0, 0.1, 0.0).with_dim(80)).unwrap();
        let b = nonhermitian_basis(&s).unwrap();
        assert!(b.biorthogonality_residual < 1e-9, "{}", b.biorthogonality_residual);
        assert!(b.eigenvalues_even.iter().chain(&b.eigenvalues_odd).all(|z| z.im <= 0.0));
        for (k, m) in s.manifolds.iter().enumerate() {
            assert!((m.state_even.inner(&b.right_even[k]) - 1.0).norm() < 1e-12);
            assert!((b.dual_right[k].inner(&b.well_right[k]) - 1.0).norm() < 1e-9);
            assert!(b.dual_right[k].inner(&b.well_left[k]).norm() < 1e-9);
        }

        let s = solve_spectrum(&SystemParams::new(1.0, 6.0, 1e-12, 0.0).with_dim(80)).unwrap();
        let b = nonhermitian_basis(&s).unwrap();
        for (k, m) in s.manifolds.iter().enumerate() {
            assert!(m.state_even.distance(&b.right_even[k]) < 1e-8);
            assert!(m.state_odd.distance(&b.right_odd[k]) < 1e-8);
        }
    }

    #[test]
    fn generic_pipeline_in_single_precision() {
        let s = spec(6.0, 0.025, 0.05);
        let r = transition_rates(&s).unwrap();
        let r32 = RateMatrices::new(r.v.map(|x| x as f32), r.w.map(|x| x as f32), r.variant, 0.025f32, 0.05f32).unwrap();
        let d32: Vec<f32> = s.splittings().iter().map(|&x| x as f32).collect();
        let g64 = switching_semianalytic(&r, &s.splittings(), SemiAnalyticOptions::default()).unwrap().gamma;
        let g32 = switching_semianalytic(&r32, &d32, SemiAnalyticOptions::default()).unwrap().gamma;
        assert!(((g32 as f64) / g64 - 1.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn zeno_scaling(scale in 0.1f64..3.0, seed in 0u64..1000) {
            let m = 3;
            let f = |p: usize, q: usize, salt: u64| (((p * 7 + q * 13) as u64 + seed * 31 + salt) % 17) as f64 / 17.0 + 0.05;
            // Switching jumps negligible, splittings tiny against dephasing and decay.
            let v = SquareMatrix::from_fn(m, |p, q| 1e-16 * f(p, q, 1));
            let w = SquareMatrix::from_fn(m, |p, q| f(p, q, 2));
            let r = RateMatrices::new(v, w, RateVariant::Full, 1.0, 0.0).unwrap();
            let d: Vec<f64> = (0..m).map(|n| 1e-4 * (n + 1) as f64).collect();
            let ds: Vec<f64> = d.iter().map(|x| x * scale).collect();
            let a = switching_semianalytic(&r, &d, SemiAnalyticOptions::default()).unwrap();
            let b = switching_semianalytic(&r, &ds, SemiAnalyticOptions::default()).unwrap();
            for n in 0..m {
                prop_assert!(d[n] * d[n] * scale * scale / a.mu[n] < 1e-3 * a.lambda[n]);
                prop_assert!((b.gamma_n[n] / a.gamma_n[n] / (scale * scale) - 1.0).abs() < 0.05);
            }
        }

        #[test]
        fn branching_in_unit_interval(seed in 0u64..10_000) {
            let m = 4;
            let f = |p: usize, q: usize, salt: u64| ((((p * 131 + q * 71) as u64) ^ (seed.wrapping_mul(2654435761) + salt)) % 97) as f64 / 97.0;
            let v = SquareMatrix::from_fn(m, |p, q| 0.01 * f(p, q, 3));
            let w = SquareMatrix::from_fn(m, |p, q| 0.1 + f(p, q, 5));
            let r = RateMatrices::new(v, w, RateVariant::Full, 1.0, 0.0).unwrap();
            let d: Vec<f64> = (0..m).map(|n| f(n, n, 7)).collect();
            let res = switching_semianalytic(&r, &d, SemiAnalyticOptions::default()).unwrap();
            for &b in &res.branching {
                prop_assert!((0.0..=1.0 + 1e-15).contains(&b));
            }
            let total: f64 = res.gamma_n.iter().sum();
            prop_assert_eq!(total, res.gamma);
        }
    }
}
