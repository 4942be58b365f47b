//! Parity-resolved spectrum of the driven Kerr Hamiltonian, grouped into
//! two-level manifolds with left/right well states.

use faer::{Mat, Side};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{hamiltonian_entry, Cutoff, ManifoldCount, Operator, StateVector, SystemParams};

/// Largest Fock dimension the auto cutoff will try.
pub const MAX_AUTO_DIM: usize = 1024;

/// Threshold below which the x-quadrature coupling of a manifold is treated as zero.
const PHASE_TOL: f64 = 1e-13;

/// One even/odd doublet.
#[derive(Clone, Debug)]
pub struct Manifold {
    pub index: usize,
    pub energy_even: f64,
    pub energy_odd: f64,
    pub state_even: StateVector,
    /// Odd eigenstate after the well-state phase rotation.
    pub state_odd: StateVector,
    pub state_right: StateVector,
    pub state_left: StateVector,
    /// `energy_even - energy_odd`, signed.
    pub splitting: f64,
    /// Gap between the mean energies of this manifold and the next; `None` for the last.
    pub gap_below: Option<f64>,
    /// The x-quadrature coupling vanished, so the well-state phase is arbitrary.
    pub phase_ambiguous: bool,
}

impl Manifold {
    pub fn mean_energy(&self) -> f64 {
        0.5 * (self.energy_even + self.energy_odd)
    }
}

#[derive(Clone, Debug)]
pub struct ManifoldSpectrum {
    pub manifolds: Vec<Manifold>,
    pub params: SystemParams,
    pub fock_dim: usize,
    /// Every eigenvalue of the even sector, descending.
    pub even_energies: Vec<f64>,
    /// Every eigenvalue of the odd sector, descending.
    pub odd_energies: Vec<f64>,
}

impl ManifoldSpectrum {
    pub fn len(&self) -> usize {
        self.manifolds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifolds.is_empty()
    }

    pub fn splittings(&self) -> Vec<f64> {
        self.manifolds.iter().map(|m| m.splitting).collect()
    }
}

/// Fock indices of one parity sector.
pub fn sector_indices(dim: usize, odd: bool) -> Vec<usize> {
    (usize::from(odd)..dim).step_by(2).collect()
}

pub(crate) fn sector_matrix(params: &SystemParams, dim: usize, odd: bool) -> Mat<f64> {
    let idx = sector_indices(dim, odd);
    Mat::from_fn(idx.len(), idx.len(), |i, j| hamiltonian_entry(params, idx[i], idx[j]))
}

fn sector_eigenvalues_desc(params: &SystemParams, dim: usize, odd: bool) -> Result<Vec<f64>> {
    let mut ev = sector_matrix(params, dim, odd)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("sector eigenvalues at dim {dim}: {e:?}")))?;
    ev.reverse();
    Ok(ev)
}

/// Descending eigenvalues and real Fock-basis eigenvectors of one parity sector,
/// each vector signed so its largest-magnitude amplitude is positive.
fn sector_eigen(params: &SystemParams, dim: usize, odd: bool) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let idx = sector_indices(dim, odd);
    let evd = sector_matrix(params, dim, odd)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("sector eigen at dim {dim}: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let n = idx.len();
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Vec::with_capacity(n);
    for k in (0..n).rev() {
        vals.push(s[k]);
        let mut v = vec![0.0; dim];
        let mut big = 0usize;
        for (r, &fock) in idx.iter().enumerate() {
            v[fock] = u[(r, k)];
            if v[fock].abs() > v[big].abs() {
                big = fock;
            }
        }
        if v[big] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        vecs.push(v);
    }
    Ok((vals, vecs))
}

fn auto_manifold_count(alpha_sq: f64) -> usize {
    (alpha_sq / std::f64::consts::PI).floor() as usize + 4
}

/// Manifold count for a given truncation.
pub fn resolve_manifolds(params: &SystemParams, dim: usize) -> Result<usize> {
    let pairs = dim / 2;
    match params.manifolds {
        ManifoldCount::Auto => Ok(auto_manifold_count(params.alpha_sq()).min(pairs)),
        ManifoldCount::Fixed(m) if m <= pairs => Ok(m),
        ManifoldCount::Fixed(m) => Err(Error::InvalidParams(format!(
            "{m} manifolds requested but dim {dim} holds only {pairs}"
        ))),
    }
}

/// Initial auto-cutoff guess, rounded up to an even dimension.
pub fn initial_cutoff(alpha_sq: f64) -> usize {
    let d = (6.0 * alpha_sq + 30.0).ceil().max(32.0) as usize;
    d + d % 2
}

/// Fock dimension used for `params`: the fixed value, or the smallest doubling
/// of [`initial_cutoff`] whose top eigenvalues are stable under a further doubling.
pub fn resolve_cutoff(params: &SystemParams) -> Result<usize> {
    params.validate()?;
    if let Cutoff::Fixed(d) = params.cutoff {
        return Ok(d);
    }
    let mut dim = initial_cutoff(params.alpha_sq());
    let tol = params.cutoff_tol * params.kerr;
    let top = |d: usize, m: usize| -> Result<Vec<f64>> {
        let mut e = sector_eigenvalues_desc(params, d, false)?;
        e.truncate(m);
        let mut o = sector_eigenvalues_desc(params, d, true)?;
        o.truncate(m);
        e.extend(o);
        Ok(e)
    };
    while dim <= MAX_AUTO_DIM {
        let m = auto_manifold_count(params.alpha_sq()).min(dim / 2);
        let small = top(dim, m)?;
        let large = top(2 * dim, m)?;
        let drift = small.iter().zip(&large).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if drift < tol {
            return Ok(dim);
        }
        dim *= 2;
    }
    Err(Error::Truncation(format!(
        "top eigenvalues not converged below dim {MAX_AUTO_DIM} (alpha^2 = {})",
        params.alpha_sq()
    )))
}

fn real_state(v: &[f64]) -> StateVector {
    StateVector::from_real(v)
}

/// Rotates the odd state so its x-coupling to the even state is real positive.
/// Returns the rotated odd state and whether the coupling was degenerate.
fn align_odd(even: &StateVector, odd: &StateVector) -> (StateVector, f64) {
    let n = even.dim();
    let mut xo = vec![Complex64::new(0.0, 0.0); n];
    let o = odd.amplitudes();
    for k in 0..n {
        if k + 1 < n {
            xo[k] += ((k + 1) as f64).sqrt() * o[k + 1];
        }
        if k > 0 {
            xo[k] += (k as f64).sqrt() * o[k - 1];
        }
    }
    let c = even.inner(&StateVector::new(xo));
    if c.norm() < PHASE_TOL {
        return (odd.clone(), c.norm());
    }
    (odd.scale(c.conj() / c.norm()), c.norm())
}

fn split_wells(even: &StateVector, odd: &StateVector) -> (StateVector, StateVector) {
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    (even.add(odd).scale(s), even.sub(odd).scale(s))
}

/// Right and left well states of a manifold, `(|+> +- |->)/sqrt(2)` after
/// fixing the relative phase so that `<+|(a + a^dag)|->` is real positive.
pub fn well_states(m: &Manifold) -> Result<(StateVector, StateVector)> {
    let (odd, coupling) = align_odd(&m.state_even, &m.state_odd);
    if coupling < PHASE_TOL {
        return Err(Error::PhaseAmbiguous { manifold: m.index, coupling });
    }
    Ok(split_wells(&m.state_even, &odd))
}

pub fn solve_spectrum(params: &SystemParams) -> Result<ManifoldSpectrum> {
    let dim = resolve_cutoff(params)?;
    solve_spectrum_at(params, dim)
}

/// Spectrum at an explicit Fock dimension, ignoring `params.cutoff`.
pub fn solve_spectrum_at(params: &SystemParams, dim: usize) -> Result<ManifoldSpectrum> {
    params.validate()?;
    if dim < 2 {
        return Err(Error::InvalidSpace(format!("dim must be >= 2, got {dim}")));
    }
    let count = resolve_manifolds(params, dim)?;
    let (even_e, even_v) = sector_eigen(params, dim, false)?;
    let (odd_e, odd_v) = sector_eigen(params, dim, true)?;

    let mut manifolds = Vec::with_capacity(count);
    for k in 0..count {
        let even = real_state(&even_v[k]);
        let odd_raw = real_state(&odd_v[k]);
        let (odd, coupling) = align_odd(&even, &odd_raw);
        let (right, left) = split_wells(&even, &odd);
        manifolds.push(Manifold {
            index: k,
            energy_even: even_e[k],
            energy_odd: odd_e[k],
            state_even: even,
            state_odd: odd,
            state_right: right,
            state_left: left,
            splitting: even_e[k] - odd_e[k],
            gap_below: None,
            phase_ambiguous: coupling < PHASE_TOL,
        });
    }
    let pairs = even_e.len().min(odd_e.len());
    for k in 0..count {
        if k + 1 < pairs {
            let next = 0.5 * (even_e[k + 1] + odd_e[k + 1]);
            manifolds[k].gap_below = Some((next - manifolds[k].mean_energy()).abs());
        }
    }
    Ok(ManifoldSpectrum {
        manifolds,
        params: *params,
        fock_dim: dim,
        even_energies: even_e,
        odd_energies: odd_e,
    })
}

/// In-manifold projector and Pauli operators.
#[derive(Clone, Debug)]
pub struct PauliSet {
    pub identity: Operator,
    pub x: Operator,
    pub y: Operator,
    pub z: Operator,
}

pub fn pauli_operators(m: &Manifold) -> PauliSet {
    let (p, q) = (&m.state_even, &m.state_odd);
    let (r, l) = (&m.state_right, &m.state_left);
    let pp = Operator::outer(p, p);
    let qq = Operator::outer(q, q);
    let identity = &pp + &qq;
    let z = &pp - &qq;
    let x = &Operator::outer(r, r) - &Operator::outer(l, l);
    let y = (&x * &z).scale(Complex64::new(0.0, 1.0));
    PauliSet { identity, x, y, z }
}

/// Splittings of the first manifolds along a drive grid.
#[derive(Clone, Debug, Serialize)]
pub struct SplittingTable {
    pub eps2: Vec<f64>,
    /// `splittings[i][n]` is the splitting of manifold `n` at `eps2[i]`.
    pub splittings: Vec<Vec<f64>>,
}

pub fn tunnel_splitting_curve(base: &SystemParams, eps2_grid: &[f64]) -> Result<SplittingTable> {
    let rows: Result<Vec<Vec<f64>>> = eps2_grid
        .par_iter()
        .map(|&e| solve_spectrum(&base.with_eps2(e)).map(|s| s.splittings()))
        .collect();
    Ok(SplittingTable { eps2: eps2_grid.to_vec(), splittings: rows? })
}

/// One CSV row of a spectrum export, all energies in units of `kerr`.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumRow {
    pub eps2_over_k: f64,
    pub n: usize,
    pub energy_even_over_k: f64,
    pub energy_odd_over_k: f64,
    pub splitting_over_k: f64,
    pub gap_over_k: Option<f64>,
}

pub fn spectrum_rows(spec: &ManifoldSpectrum) -> Vec<SpectrumRow> {
    let k = spec.params.kerr;
    spec.manifolds
        .iter()
        .map(|m| SpectrumRow {
            eps2_over_k: spec.params.eps2 / k,
            n: m.index,
            energy_even_over_k: m.energy_even / k,
            energy_odd_over_k: m.energy_odd / k,
            splitting_over_k: m.splitting / k,
            gap_over_k: m.gap_below.map(|g| g / k),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, make_ladder, parity_operator, FockSpace};
    use approx::assert_abs_diff_eq;

    fn spec(eps2: f64) -> ManifoldSpectrum {
        solve_spectrum(&SystemParams::new(1.0, eps2, 0.0, 0.0)).unwrap()
    }

    #[test]
    fn ground_energy_is_exact() {
        let s = spec(4.0);
        assert_abs_diff_eq!(s.manifolds[0].energy_even, 16.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s.manifolds[0].energy_odd, 16.0, epsilon = 1e-8);
        let gap = s.manifolds[0].gap_below.unwrap();
        assert!((gap - 14.0).abs() < 0.15 * 14.0, "gap {gap}");
    }

    #[test]
    fn fock_limit_pairing() {
        let s = solve_spectrum(&SystemParams::new(1.0, 0.0, 0.0, 0.0).with_dim(20).with_manifolds(5)).unwrap();
        for m in &s.manifolds {
            let k = m.index as f64;
            assert_abs_diff_eq!(m.energy_even, -(2.0 * k) * (2.0 * k - 1.0), epsilon = 1e-12);
            assert_abs_diff_eq!(m.energy_odd, -(2.0 * k + 1.0) * (2.0 * k), epsilon = 1e-12);
            // E+ - E- with E = -K n(n-1) evaluated at n = 2k and 2k+1.
            assert_abs_diff_eq!(m.splitting, 4.0 * k, epsilon = 1e-12);
            assert_abs_diff_eq!(m.state_even.amplitudes()[2 * m.index].re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m.state_odd.amplitudes()[2 * m.index + 1].norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn auto_cutoff_rules() {
        assert_eq!(initial_cutoff(0.0), 32);
        assert_eq!(initial_cutoff(4.0), 54);
        assert_eq!(initial_cutoff(10.0), 90);
        let p = SystemParams::new(1.0, 6.0, 0.0, 0.0);
        let d = resolve_cutoff(&p).unwrap();
        let a = solve_spectrum_at(&p, d).unwrap();
        let b = solve_spectrum_at(&p, 2 * d).unwrap();
        for (x, y) in a.manifolds.iter().zip(&b.manifolds) {
            assert!((x.energy_even - y.energy_even).abs() < 1e-9);
            assert!((x.energy_odd - y.energy_odd).abs() < 1e-9);
        }
        assert_eq!(a.len(), (6.0 / std::f64::consts::PI) as usize + 4);
    }

    #[test]
    fn energies_descend_within_sectors() {
        let s = spec(7.0);
        for w in s.even_energies.windows(2).chain(s.odd_energies.windows(2)) {
            assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn well_state_conventions() {
        let s = spec(4.0);
        let sp = FockSpace::new(s.fock_dim).unwrap();
        let (a, _) = make_ladder(sp);
        let par = parity_operator(sp);
        let alpha = coherent_state(Complex64::new(2.0, 0.0), sp).unwrap();
        let m0 = &s.manifolds[0];
        assert!(m0.state_right.distance(&alpha) < 2.0 * (-8.0f64).exp());
        assert!((a.expectation(&m0.state_right).re - 2.0).abs() < 0.02);
        for m in &s.manifolds {
            let ar = a.expectation(&m.state_right);
            let al = a.expectation(&m.state_left);
            assert!(ar.re > 0.0);
            assert!((ar + al).norm() < 1e-9);
            assert!(m.state_right.inner(&m.state_left).norm() < 1e-12);
            assert_abs_diff_eq!(m.state_right.norm(), 1.0, epsilon = 1e-12);
            let image = par.apply(&m.state_right);
            let ph = m.state_left.inner(&image);
            assert!(image.distance(&m.state_left.scale(ph)) < 1e-9);
            // No equal-weight superposition pushes Re<a> further right.
            let best = ar.re;
            for t in 0..16 {
                let th = t as f64 * std::f64::consts::TAU / 16.0;
                let trial = split_wells(&m.state_even, &m.state_odd.scale(Complex64::from_polar(1.0, th))).0;
                assert!(a.expectation(&trial).re <= best + 1e-12);
            }
            let (r, l) = well_states(m).unwrap();
            assert!(r.distance(&m.state_right) < 1e-12 && l.distance(&m.state_left) < 1e-12);
        }
    }

    #[test]
    fn pauli_algebra() {
        let s = spec(5.0);
        let c = |x: f64, y: f64| Complex64::new(x, y);
        for m in s.manifolds.iter().take(4) {
            let p = pauli_operators(m);
            assert_abs_diff_eq!(p.x.trace().norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.identity.trace().re, 2.0, epsilon = 1e-12);
            for op in [&p.x, &p.y, &p.z] {
                assert!((op * op).max_abs_diff(&p.identity) < 1e-12);
            }
            assert!((&p.x * &p.y).max_abs_diff(&p.z.scale(c(0.0, 1.0))) < 1e-12);
            assert!((&(&p.x * &p.z) + &(&p.z * &p.x)).norm() < 1e-12);
            let rl = Operator::outer(&m.state_right, &m.state_left);
            let lr = Operator::outer(&m.state_left, &m.state_right);
            assert!((&rl - &lr).scale(c(0.0, 1.0)).max_abs_diff(&p.y) < 1e-12);
        }
    }

    #[test]
    fn manifold_projectors_are_complete() {
        let s = spec(6.0);
        let dim = s.fock_dim;
        let mut proj = Operator::zeros(dim);
        for m in &s.manifolds {
            proj = &proj + &pauli_operators(m).identity;
        }
        assert!((&proj * &proj).max_abs_diff(&proj) < 1e-10);
        assert_abs_diff_eq!(proj.trace().re, 2.0 * s.len() as f64, epsilon = 1e-10);
    }

    #[test]
    fn ground_degeneracy_over_drive() {
        for a2 in [1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0] {
            let s = spec(a2);
            assert!(s.manifolds[0].splitting.abs() < 1e-8, "alpha^2 {a2}: {}", s.manifolds[0].splitting);
        }
    }

    #[test]
    fn gap_dominance_inside_well() {
        for a2 in [4.0, 8.0, 11.0] {
            let s = spec(a2);
            for m in s.manifolds.iter().filter(|m| m.mean_energy() > 0.0) {
                if let Some(g) = m.gap_below {
                    assert!(m.splitting.abs() < g);
                }
            }
        }
    }

    #[test]
    fn perturbative_energies() {
        let s = spec(10.0);
        // n = 3 sits at the barrier top for alpha^2 = 10, where the expansion fails.
        for m in s.manifolds.iter().take(3) {
            let n = m.index as f64;
            let est = 100.0 - 40.0 * n + 2.0 * n * n;
            let gap = m.gap_below.unwrap();
            assert!((m.mean_energy() - est).abs() < 0.05 * gap, "n={n}: {} vs {est}", m.mean_energy());
        }
    }

    #[test]
    fn splitting_decays_like_exp_minus_two_alpha_sq() {
        let grid: Vec<f64> = (0..=8).map(|i| 8.0 + 0.5 * i as f64).collect();
        let t = tunnel_splitting_curve(&SystemParams::new(1.0, 0.0, 0.0, 0.0), &grid).unwrap();
        let ln: Vec<f64> = t.splittings.iter().map(|r| r[1].abs().ln()).collect();
        let slope = (ln[8] - ln[0]) / (grid[8] - grid[0]);
        // Leading exp(-2 alpha^2) times a power-law prefactor that flattens the slope.
        assert!(slope < -1.4 && slope > -2.2, "slope {slope}");
        let local = (ln[8] - ln[7]) / 0.5;
        assert!(local < -1.5, "local slope {local}");
        assert!(t.splittings[0][0].abs() < 1e-8);
    }
}
