//! Semiclassical treatment of the double well: rescaled phase-space actions,
//! the quantization rule matched across the barrier top, and closed-form
//! tunnel splittings and gaps.
//!
//! Energies are measured by `g = -(E + 3K/4) K / (4 eps2^2)`, the drive sets
//! the effective Planck constant `lambda = K / (2 eps2)` and the detuning
//! parameter `mu = 1 / alpha^2`.

use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::scalar::{lit, Real};
use crate::special::{digamma_complex, digamma_half, log_gamma_complex};

const QUAD_TOL: f64 = 1e-10;
const I_QUAD_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RescaledParams<T> {
    pub lambda: T,
    pub mu: T,
    /// Converts `g` back to energy: `4 eps2^2 / K`.
    pub energy_scale: T,
    pub kerr: T,
}

impl<T: Real> RescaledParams<T> {
    /// Zero-detuning rescaling for a Kerr oscillator with drive `eps2`.
    pub fn from_drive(kerr: T, eps2: T) -> Result<Self> {
        if !(kerr > T::zero() && eps2 > kerr) {
            return Err(Error::Domain(format!("need eps2 > K > 0 for a double well, got K={kerr}, eps2={eps2}")));
        }
        let two: T = lit(2.0);
        Ok(Self {
            lambda: kerr / (two * eps2),
            mu: kerr / eps2,
            energy_scale: lit::<T>(4.0) * eps2 * eps2 / kerr,
            kerr,
        })
    }

    /// Arbitrary `(lambda, mu)`; energies are then in units of `energy_scale = 1`.
    pub fn new(lambda: T, mu: T) -> Result<Self> {
        if !(lambda > T::zero() && mu.abs() < T::one()) {
            return Err(Error::Domain(format!("need lambda > 0 and |mu| < 1, got {lambda}, {mu}")));
        }
        Ok(Self { lambda, mu, energy_scale: T::one(), kerr: T::one() })
    }

    fn root_one_minus_mu_sq(&self) -> T {
        (T::one() - self.mu * self.mu).sqrt()
    }

    pub fn g_from_energy(&self, energy: T) -> T {
        -(energy + lit::<T>(0.75) * self.kerr) / self.energy_scale
    }

    pub fn energy_from_g(&self, g: T) -> T {
        -g * self.energy_scale - lit::<T>(0.75) * self.kerr
    }

    pub fn a_from_g(&self, g: T) -> T {
        -g / (self.lambda * self.root_one_minus_mu_sq())
    }

    pub fn g_from_a(&self, a: T) -> T {
        -a * self.lambda * self.root_one_minus_mu_sq()
    }

    /// Well bottom, below which no orbit exists.
    pub fn g_bottom(&self) -> T {
        let b = T::one() + self.mu;
        -b * b / lit(4.0)
    }

    /// Lower end of the tunnelling-action domain.
    pub fn g_tunnel_floor(&self) -> T {
        let b = T::one() - self.mu;
        -b * b / lit(4.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ActionMethod {
    Quadrature,
    AsymptoticTop,
    AsymptoticBottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ActionResult<T> {
    pub value: T,
    pub method: ActionMethod,
    /// Quadrature error estimate, or the size of the first omitted term.
    pub error: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    /// +1 for even, -1 for odd.
    pub fn sign<T: Real>(self) -> T {
        match self {
            Parity::Even => T::one(),
            Parity::Odd => -T::one(),
        }
    }
}

/// Absolute quadrature tolerance, loosened to what the precision of `T` allows.
fn quad_tol<T: Real>(base: f64) -> T {
    lit::<T>(base).max(T::epsilon() * lit(1e3))
}

fn check_mu<T: Real>(mu: T) -> Result<()> {
    if mu.abs() < T::one() {
        Ok(())
    } else {
        Err(Error::Domain(format!("|mu| must be < 1, got {mu}")))
    }
}

/// Area enclosed by one well's orbit at the barrier energy.
pub fn action_s_at_top<T: Real>(mu: T) -> T {
    let two: T = lit(2.0);
    T::PI() * mu / two + (T::one() - mu * mu).sqrt() + mu * mu.asin()
}

/// Phase-space area of the orbit at energy `g` inside one well (`g <= 0`), or
/// of the orbit encircling both wells (`g > 0`).
pub fn action_s<T: Real>(g: T, mu: T) -> Result<ActionResult<T>> {
    check_mu(mu)?;
    let four: T = lit(4.0);
    let two: T = lit(2.0);
    let bottom = -(T::one() + mu) * (T::one() + mu) / four;
    if !(g > bottom) {
        return Err(Error::Domain(format!("g = {g} lies below the well bottom {bottom}")));
    }
    let tol: T = quad_tol(QUAD_TOL);
    if g <= T::zero() {
        let turn = lit::<T>(0.5) * ((-four * g).sqrt() - mu).max(-T::one()).min(T::one()).acos();
        // theta = turn - u^2 removes the square-root zero at the turning point.
        let f = |u: T| {
            let th = turn - u * u;
            let c = (two * th).cos() + mu;
            let r = (c * c + four * g).max(T::zero()).sqrt();
            two * u * r
        };
        let q = integrate(f, T::zero(), turn.sqrt(), &[], tol / two)?;
        Ok(ActionResult { value: two * q.value, method: ActionMethod::Quadrature, error: two * q.error })
    } else {
        let f = |th: T| {
            let c = (two * th).cos() + mu;
            let r = (c * c + four * g).sqrt();
            if c >= T::zero() {
                (c + r) / two
            } else {
                two * g / (r - c)
            }
        };
        let kink = lit::<T>(0.5) * (-mu).acos();
        let q = integrate(f, T::zero(), T::FRAC_PI_2(), &[kink], tol / two)?;
        Ok(ActionResult { value: two * q.value, method: ActionMethod::Quadrature, error: two * q.error })
    }
}

/// Expansion of [`action_s`] about the barrier top through `g^2`.
pub fn action_s_asymptotic<T: Real>(g: T, mu: T) -> ActionResult<T> {
    let one = T::one();
    let s2 = one - mu * mu;
    let s = s2.sqrt();
    let four: T = lit(4.0);
    let value = if g == T::zero() {
        action_s_at_top(mu)
    } else {
        let lg = (g.abs() / (four * s2 * s2)).ln();
        let mu2 = mu * mu;
        action_s_at_top(mu)
            + (one - lg) * g / s
            + (lit::<T>(3.0) + lit::<T>(14.0) * mu2 + (two::<T>() + four * mu2) * lg) / (four * s2 * s2 * s) * g * g
    };
    let error = if g == T::zero() { T::zero() } else { (g.abs().powi(3) * g.abs().ln()).abs() };
    ActionResult { value, method: ActionMethod::AsymptoticTop, error }
}

fn two<T: Real>() -> T {
    lit(2.0)
}

/// Tunnelling action under the barrier between the two turning points of
/// energy `g`; continued analytically to `g > 0`.
pub fn action_i<T: Real>(g: T, mu: T) -> Result<ActionResult<T>> {
    check_mu(mu)?;
    let four: T = lit(4.0);
    let floor = -(T::one() - mu) * (T::one() - mu) / four;
    if !(g > floor) {
        return Err(Error::Domain(format!("g = {g} lies below the tunnelling floor {floor}")));
    }
    // (A - sqrt(A^2 + 4 g c^2)) / (2 c^2) rationalized to -2g / (A + sqrt(...)),
    // which is regular where cos(2 theta) vanishes.
    let f = |th: T| {
        let c = (two::<T>() * th).cos();
        let a = T::one() + mu * c;
        let r = (a * a + four * g * c * c).max(T::zero()).sqrt();
        -two::<T>() * g / (a + r)
    };
    let pi = T::PI();
    let breaks = [pi / four, pi / two::<T>(), lit::<T>(3.0) * pi / four];
    let q = integrate(f, T::zero(), pi, &breaks, quad_tol(I_QUAD_TOL))?;
    Ok(ActionResult { value: q.value, method: ActionMethod::Quadrature, error: q.error })
}

/// Expansion of [`action_i`] about `g = 0` through `g^3`.
pub fn action_i_asymptotic<T: Real>(g: T, mu: T) -> ActionResult<T> {
    let s2 = T::one() - mu * mu;
    let s = s2.sqrt();
    let pi = T::PI();
    let mu2 = mu * mu;
    let c1 = -pi / s;
    let c2 = pi * (T::one() + two::<T>() * mu2) / (two::<T>() * s2 * s2 * s);
    let c3 = pi * (-lit::<T>(3.0) - lit::<T>(8.0) * mu2 * (lit::<T>(3.0) + mu2)) / (lit::<T>(4.0) * s2.powi(4) * s);
    ActionResult {
        value: c1 * g + c2 * g * g + c3 * g * g * g,
        method: ActionMethod::AsymptoticTop,
        error: g.abs().powi(4),
    }
}

/// Small-`mu` expansion of [`action_i`] near the tunnelling floor, with the
/// energy written as `g = -(1 - mu)^2 / 4 + g_tilde * mu`.
pub fn action_i_bottom<T: Real>(g_tilde: T, mu: T) -> Result<ActionResult<T>> {
    if !(g_tilde > T::zero() && mu > T::zero() && mu < T::one()) {
        return Err(Error::Domain(format!("need g_tilde > 0 and 0 < mu < 1, got {g_tilde}, {mu}")));
    }
    let one = T::one();
    let half: T = lit(0.5);
    let quarter: T = lit(0.25);
    let gp = g_tilde + one;
    let prod = g_tilde * gp;
    let e3_over_16: T = lit(3.0f64.exp() / 16.0);
    let delta = -half * (mu * gp * (mu * gp).ln() + mu * g_tilde * (mu * g_tilde).ln())
        + (half + T::LN_2()) * (one + two::<T>() * g_tilde) * mu
        - quarter * mu * mu * prod * (e3_over_16 * mu * mu * prod).ln()
        - mu * mu / lit(8.0);
    Ok(ActionResult {
        value: one - delta,
        method: ActionMethod::AsymptoticBottom,
        error: (mu.powi(3) * mu.ln()).abs(),
    })
}

/// Level-`n` constant multiplying `alpha^(4n)` in the deep-well splitting.
pub fn level_constant_a<T: Real>(n: T) -> T {
    let half: T = lit(0.5);
    let four_e: T = lit(4.0 * std::f64::consts::E);
    let lo = n - half;
    let hi = n + half;
    four_e.powf(two::<T>() * n) / (lo.powf(lo) * hi.powf(hi))
}

/// Level-`n` constant in the `1/alpha^2` correction of the deep-well splitting.
pub fn level_constant_b<T: Real>(n: T) -> T {
    let eighth: T = lit(0.125);
    let quarter: T = lit(0.25);
    eighth - lit::<T>(1.5) * n * n + eighth * (quarter * (n * n - quarter).sqrt()).ln()
}

/// [`action_i_bottom`] evaluated at the perturbative energy of level `n >= 1`.
pub fn action_i_level<T: Real>(n: usize, mu: T) -> Result<ActionResult<T>> {
    if n == 0 || !(mu > T::zero() && mu < T::one()) {
        return Err(Error::Domain(format!("need n >= 1 and 0 < mu < 1, got n={n}, mu={mu}")));
    }
    let nf: T = lit(n as f64);
    let half: T = lit(0.5);
    let lm = mu.ln();
    let delta = half * mu * (-two::<T>() * nf * lm + level_constant_a(nf).ln())
        + half * mu * (lit::<T>(0.125) * mu * lm + mu * level_constant_b(nf));
    Ok(ActionResult {
        value: T::one() - delta,
        method: ActionMethod::AsymptoticBottom,
        error: (mu.powi(3) * lm).abs(),
    })
}

fn im_log_gamma_half<T: Real>(a: T) -> Result<T> {
    Ok(log_gamma_complex(Complex::new(lit::<T>(0.5), a))?.im)
}

fn re_digamma_half<T: Real>(a: T) -> Result<T> {
    Ok(digamma_complex(Complex::new(lit::<T>(0.5), a))?.re)
}

fn a_log_a<T: Real>(a: T) -> T {
    if a == T::zero() {
        T::zero()
    } else {
        a * a.abs().ln()
    }
}

/// Left minus right side of the quantization rule at energy `g`.
pub fn quantization_residual<T: Real>(g: T, n: usize, parity: Parity, rp: &RescaledParams<T>) -> Result<T> {
    let s = action_s(g, rp.mu)?.value;
    let i = action_i(g, rp.mu)?.value;
    let a = rp.a_from_g(g);
    let nf: T = lit(n as f64 + 0.5);
    let rhs = two::<T>() * T::PI() * nf + a_log_a(a) - a - im_log_gamma_half(a)?
        - parity.sign::<T>() * (-i / rp.lambda).exp().atan();
    Ok(s / rp.lambda - rhs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuantizedLevel<T> {
    pub g: T,
    pub a: T,
    pub residual: T,
}

/// Solves the quantization rule for level `n` of the given parity.
pub fn quantize<T: Real>(n: usize, parity: Parity, rp: &RescaledParams<T>) -> Result<QuantizedLevel<T>> {
    const SCAN: usize = 200;
    let lo = rp.g_tunnel_floor() * lit(0.999);
    let hi: T = lit(0.5);
    let step = (hi - lo) / lit(SCAN as f64);
    let f = |g: T| quantization_residual(g, n, parity, rp);
    let mut prev_g = lo;
    let mut prev_f = f(lo)?;
    for k in 1..=SCAN {
        let g = lo + step * lit(k as f64);
        let fg = f(g)?;
        if prev_f == T::zero() {
            return Ok(QuantizedLevel { g: prev_g, a: rp.a_from_g(prev_g), residual: prev_f });
        }
        if (prev_f < T::zero()) != (fg < T::zero()) {
            let (mut a, mut b, mut fa) = (prev_g, g, prev_f);
            let gtol: T = lit(1e-12);
            while b - a > gtol {
                let m = lit::<T>(0.5) * (a + b);
                if !(m > a && m < b) {
                    break;
                }
                let fm = f(m)?;
                if (fm < T::zero()) == (fa < T::zero()) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            let g = lit::<T>(0.5) * (a + b);
            return Ok(QuantizedLevel { g, a: rp.a_from_g(g), residual: f(g)? });
        }
        prev_g = g;
        prev_f = fg;
    }
    Err(Error::NoBracket(format!("level {n} ({parity:?}) has no root in g on ({lo}, {hi})")))
}

/// Detail of the near-barrier splitting evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BarrierSplitting<T> {
    /// Tunnel splitting in units of energy.
    pub delta: T,
    /// Splitting in the rescaled energy `a`.
    pub delta_a: T,
    /// Odd-level energy at zeroth and first iteration.
    pub a0: T,
    pub a1: T,
    /// Level index at which the barrier top is reached.
    pub n_top: T,
    /// `a1 < -1`: the level sits well above the barrier, outside the tested range.
    pub above_barrier: bool,
}

/// Correction factor of the barrier-top expansion of the tunnelling action.
fn barrier_q<T: Real>(a: T, rp: &RescaledParams<T>) -> T {
    let mu2 = rp.mu * rp.mu;
    let s2 = T::one() - mu2;
    let la = rp.lambda * a;
    T::one() + (T::one() + two::<T>() * mu2) / (two::<T>() * s2 * s2.sqrt()) * la
        + (lit::<T>(3.0) + lit::<T>(8.0) * mu2 * (lit::<T>(3.0) + mu2)) / (lit::<T>(4.0) * s2 * s2 * s2) * la * la
}

/// Splitting of manifold `n` from the quantization rule linearized about
/// the barrier top.
pub fn splitting_near_barrier<T: Real>(n: usize, rp: &RescaledParams<T>) -> Result<BarrierSplitting<T>> {
    let pi = T::PI();
    let s2 = T::one() - rp.mu * rp.mu;
    let s3 = s2 * s2.sqrt();
    let log_ratio = (rp.lambda / (lit::<T>(4.0) * s3)).ln();
    let n_top = action_s_at_top(rp.mu) / (two::<T>() * pi * rp.lambda) - lit(0.5);
    let offset = two::<T>() * pi * (lit::<T>(n as f64) - n_top);
    let h_odd = |a: T| -> Result<T> { Ok(-im_log_gamma_half(a)? + (-pi * a * barrier_q(a, rp)).exp().atan()) };
    let a0 = (offset + pi / lit(4.0)) / log_ratio;
    let a1 = (offset + h_odd(a0)?) / log_ratio;
    // -dn/da of the odd-level condition at a1.
    let slope = -log_ratio - re_digamma_half(a1)? - pi / two::<T>() / (pi * a1).cosh();
    if !(slope > T::zero()) {
        return Err(Error::Domain(format!("non-positive level density {slope} at a = {a1}")));
    }
    let delta_a = two::<T>() * (-pi * a1 * barrier_q(a1, rp)).exp().atan() / slope;
    Ok(BarrierSplitting {
        delta: rp.energy_scale * rp.lambda * s2.sqrt() * delta_a,
        delta_a,
        a0,
        a1,
        n_top,
        above_barrier: a1 < -T::one(),
    })
}

/// Deep-well splitting of level `n >= 1` at squared amplitude `alpha_sq`.
pub fn splitting_deep<T: Real>(n: usize, kerr: T, alpha_sq: T) -> Result<T> {
    if n == 0 {
        return Err(Error::Domain("deep-well splitting needs n >= 1".into()));
    }
    let nf: T = lit(n as f64);
    let prefactor = lit::<T>(4.0) / T::PI() * level_constant_a(nf);
    let correction = (T::one() - nf / alpha_sq)
        * (-alpha_sq.ln() / (lit::<T>(8.0) * alpha_sq) + level_constant_b(nf) / alpha_sq).exp();
    Ok(prefactor * kerr * alpha_sq.powf(two::<T>() * nf + T::one()) * (-two::<T>() * alpha_sq).exp() * correction)
}

/// Splitting `gap * exp(-I / lambda) / pi` for a level at energy `g` whose
/// neighbouring levels sit `gap` away.
pub fn splitting_from_action<T: Real>(gap: T, g: T, rp: &RescaledParams<T>) -> Result<T> {
    let i = action_i(g, rp.mu)?.value;
    Ok(gap * (-i / rp.lambda).exp() / T::PI())
}

/// Smallest level spacing within one parity sector.
pub fn min_energy_gap<T: Real>(kerr: T, alpha_sq: T, parity: Parity) -> T {
    let pi = T::PI();
    let denom = (lit::<T>(8.0) * alpha_sq).ln() - digamma_half::<T>() + parity.sign::<T>() * pi / two::<T>();
    lit::<T>(4.0) * pi * kerr * alpha_sq / denom
}

/// Smallest spacing between consecutive eigenvalues of a descending list.
pub fn exact_min_gap(descending: &[f64]) -> Option<f64> {
    descending.windows(2).map(|w| w[0] - w[1]).reduce(f64::min)
}
