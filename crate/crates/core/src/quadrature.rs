//! Globally adaptive 7/15-point Gauss-Kronrod integration.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Clone, Copy, Debug)]
pub struct Quadrature<T> {
    pub value: T,
    pub error: T,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

fn kronrod<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> Segment<T> {
    let half: T = lit(0.5);
    let centre = half * (a + b);
    let h = half * (b - a);
    let fc = f(centre);
    let mut gauss = fc * lit(WG[3]);
    let mut kron = fc * lit(WGK[7]);
    let mut abs_sum = kron.abs();
    let mut fv = [(T::zero(), T::zero()); 7];
    for j in 0..7 {
        let dx = h * lit(XGK[j]);
        let (f1, f2) = (f(centre - dx), f(centre + dx));
        fv[j] = (f1, f2);
        kron = kron + lit::<T>(WGK[j]) * (f1 + f2);
        abs_sum = abs_sum + lit::<T>(WGK[j]) * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss = gauss + lit::<T>(WG[j / 2]) * (f1 + f2);
        }
    }
    let mean = kron * half;
    let mut asc = lit::<T>(WGK[7]) * (fc - mean).abs();
    for j in 0..7 {
        asc = asc + lit::<T>(WGK[j]) * ((fv[j].0 - mean).abs() + (fv[j].1 - mean).abs());
    }
    let value = kron * h;
    let abs_sum = abs_sum * h.abs();
    let asc = asc * h.abs();
    let mut err = ((kron - gauss) * h).abs();
    if asc != T::zero() && err != T::zero() {
        let scale = (lit::<T>(200.0) * err / asc).powf(lit(1.5));
        err = if scale < T::one() { asc * scale } else { asc };
    }
    let floor = lit::<T>(50.0) * T::epsilon() * abs_sum;
    if abs_sum > T::min_positive_value() / (lit::<T>(50.0) * T::epsilon()) && floor > err {
        err = floor;
    }
    Segment { a, b, value, error: err }
}

/// Integrates `f` over `[a, b]` split at `breaks`, refining the worst segment
/// until the summed error estimate drops below `abs_tol`.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, breaks: &[T], abs_tol: T) -> Result<Quadrature<T>> {
    const MAX_SEGMENTS: usize = 4000;
    let mut cuts = vec![a];
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    let mut segs: Vec<Segment<T>> = cuts.windows(2).map(|w| kronrod(&f, w[0], w[1])).collect();
    let mut evals = 15 * segs.len();
    loop {
        let total_err = segs.iter().fold(T::zero(), |s, g| s + g.error);
        if total_err <= abs_tol {
            break;
        }
        if segs.len() >= MAX_SEGMENTS {
            let value = segs.iter().fold(T::zero(), |s, g| s + g.value);
            return Err(Error::NotFound(format!(
                "quadrature did not reach tolerance {abs_tol:e}: value {value}, error {total_err:e}"
            )));
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .fold((0, T::zero()), |(bi, be), (i, g)| if g.error > be { (i, g.error) } else { (bi, be) });
        let s = segs.swap_remove(worst);
        let mid = lit::<T>(0.5) * (s.a + s.b);
        if !(mid > s.a && mid < s.b) {
            // Interval exhausted at machine precision; accept what we have.
            segs.push(Segment { error: T::zero(), ..s });
            continue;
        }
        segs.push(kronrod(&f, s.a, mid));
        segs.push(kronrod(&f, mid, s.b));
        evals += 30;
    }
    let value = segs.iter().fold(T::zero(), |s, g| s + g.value);
    let error = segs.iter().fold(T::zero(), |s, g| s + g.error);
    Ok(Quadrature { value, error, evaluations: evals })
}
