//! Complex log-gamma and digamma (Lanczos, g = 7, nine terms).

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn check_pole<T: Real>(z: Complex<T>) -> Result<()> {
    if z.im == T::zero() && z.re <= T::zero() && z.re == z.re.round() {
        return Err(Error::Domain(format!("gamma pole at {}", z.re)));
    }
    Ok(())
}

/// Lanczos sum and its derivative at `w = z - 1`.
fn lanczos_sum<T: Real>(w: Complex<T>) -> (Complex<T>, Complex<T>) {
    let mut s = Complex::new(lit::<T>(LANCZOS[0]), T::zero());
    let mut ds = Complex::new(T::zero(), T::zero());
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        let d = w + lit::<T>(i as f64);
        let c: T = lit(c);
        s = s + (d.inv()).scale(c);
        ds = ds - (d * d).inv().scale(c);
    }
    (s, ds)
}

/// `ln Gamma(z)`, continuous in the right half plane; the reflection branch is
/// used for `Re z < 1/2`.
pub fn log_gamma_complex<T: Real>(z: Complex<T>) -> Result<Complex<T>> {
    check_pole(z)?;
    let half: T = lit(0.5);
    if z.re < half {
        let pi = T::PI();
        let one = Complex::new(T::one(), T::zero());
        let s = (z.scale(pi)).sin();
        let reflected = log_gamma_complex(one - z)?;
        return Ok(Complex::new(pi.ln(), T::zero()) - s.ln() - reflected);
    }
    let w = z - T::one();
    let t = w + lit::<T>(LANCZOS_G + 0.5);
    let (s, _) = lanczos_sum(w);
    let half_ln_two_pi: T = lit(0.918_938_533_204_672_7);
    Ok(Complex::new(half_ln_two_pi, T::zero()) + (w + half) * t.ln() - t + s.ln())
}

/// Digamma `Gamma'(z) / Gamma(z)`.
pub fn digamma_complex<T: Real>(z: Complex<T>) -> Result<Complex<T>> {
    check_pole(z)?;
    let half: T = lit(0.5);
    if z.re < half {
        let pi = T::PI();
        let one = Complex::new(T::one(), T::zero());
        let pz = z.scale(pi);
        let cot = pz.cos() / pz.sin();
        return Ok(digamma_complex(one - z)? - cot.scale(pi));
    }
    let w = z - T::one();
    let t = w + lit::<T>(LANCZOS_G + 0.5);
    let (s, ds) = lanczos_sum(w);
    Ok(t.ln() + (w + half) / t - T::one() + ds / s)
}

/// `Psi(1/2) = -gamma - 2 ln 2`.
pub fn digamma_half<T: Real>() -> T {
    lit::<T>(-EULER_GAMMA) - lit::<T>(2.0) * T::LN_2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    /// Stirling series after shifting `Re z` above 20, summing the shift logs
    /// term by term; independent of the Lanczos coefficients.
    fn stirling_log_gamma(z: Complex64) -> Complex64 {
        let mut shift = Complex64::new(0.0, 0.0);
        let mut x = z;
        while x.re < 20.0 {
            shift += x.ln();
            x += 1.0;
        }
        let b2k = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0, -3617.0 / 510.0];
        let mut series = Complex64::new(0.0, 0.0);
        let inv = x.inv();
        let inv2 = inv * inv;
        let mut pow = inv;
        for (k, b) in b2k.iter().enumerate() {
            let k = (k + 1) as f64;
            series += pow * (b / (2.0 * k * (2.0 * k - 1.0)));
            pow *= inv2;
        }
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
    }

    fn stirling_digamma(z: Complex64) -> Complex64 {
        let mut shift = Complex64::new(0.0, 0.0);
        let mut x = z;
        while x.re < 20.0 {
            shift += x.inv();
            x += 1.0;
        }
        let b2k = [1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0, 7.0 / 6.0];
        let inv = x.inv();
        let inv2 = inv * inv;
        let mut pow = inv2;
        let mut series = Complex64::new(0.0, 0.0);
        for (k, b) in b2k.iter().enumerate() {
            let k = (k + 1) as f64;
            series += pow * (b / (2.0 * k));
            pow *= inv2;
        }
        x.ln() - 0.5 * inv - series - shift
    }

    #[test]
    fn known_values() {
        let one = Complex64::new(1.0, 0.0);
        assert!(log_gamma_complex(one).unwrap().norm() < 1e-14);
        let half = log_gamma_complex(Complex64::new(0.5, 0.0)).unwrap();
        assert!((half.re - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        let psi = digamma_complex(Complex64::new(0.5, 0.0)).unwrap();
        assert!((psi.re - (-1.963_510_026_021_423_5)).abs() < 1e-13);
        assert!((digamma_half::<f64>() - psi.re).abs() < 1e-13);
        assert!((digamma_half::<f64>() + 1.96351).abs() < 1e-5);
    }

    #[test]
    fn critical_line_matches_stirling_oracle() {
        let mut worst: f64 = 0.0;
        let mut worst_psi: f64 = 0.0;
        for i in -500..=500 {
            let z = Complex64::new(0.5, i as f64 * 0.1);
            let a = log_gamma_complex(z).unwrap();
            let b = stirling_log_gamma(z);
            worst = worst.max((a - b).norm() / b.norm());
            let p = digamma_complex(z).unwrap();
            let q = stirling_digamma(z);
            worst_psi = worst_psi.max((p - q).norm() / q.norm());
        }
        assert!(worst < 1e-12, "log-gamma relative error {worst:e}");
        assert!(worst_psi < 1e-12, "digamma relative error {worst_psi:e}");
        let im = log_gamma_complex(Complex64::new(0.5, 1.0)).unwrap().im;
        assert!((im - stirling_log_gamma(Complex64::new(0.5, 1.0)).im).abs() < 1e-12 * im.abs());
    }

    #[test]
    fn reflection_and_poles() {
        let z = Complex64::new(-1.3, 0.7);
        let direct = stirling_log_gamma(z);
        let refl = log_gamma_complex(z).unwrap();
        // Same value up to the branch of the logarithm.
        let d = refl - direct;
        assert!(d.re.abs() < 1e-12);
        let turns = d.im / std::f64::consts::TAU;
        assert!((turns - turns.round()).abs() < 1e-12);
        let psi = digamma_complex(z).unwrap();
        assert!((psi - stirling_digamma(z)).norm() < 1e-11);
        assert!(log_gamma_complex(Complex64::new(-2.0, 0.0)).is_err());
        assert!(digamma_complex(Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn single_precision() {
        let v = log_gamma_complex(num_complex::Complex32::new(0.5, 2.0)).unwrap();
        let r = stirling_log_gamma(Complex64::new(0.5, 2.0));
        assert!((v.re as f64 - r.re).abs() < 1e-5 && (v.im as f64 - r.im).abs() < 1e-5);
    }
}
