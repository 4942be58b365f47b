//! Grid arguments: `start:stop[:step]` ranges and `a,b,c` lists.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

/// Parsed grid together with the text it came from, so configs can be
/// written back verbatim.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    text: String,
    values: Vec<f64>,
}

impl Grid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Elementwise `10^x`.
    pub fn pow10(&self) -> Vec<f64> {
        self.values.iter().map(|x| 10f64.powf(*x)).collect()
    }

    pub fn single(&self) -> Option<f64> {
        (self.values.len() == 1).then(|| self.values[0])
    }
}

fn number(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let x: f64 = t.parse().map_err(|_| format!("'{t}' is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("'{t}' is not finite"))
    }
}

/// Digits after the decimal point of a plain decimal literal; `None` for
/// exponent notation.
fn decimals(s: &str) -> Option<u32> {
    let t = s.trim();
    if t.contains(['e', 'E']) {
        return None;
    }
    Some(t.split_once('.').map_or(0, |(_, frac)| frac.len() as u32))
}

fn range(start: &str, stop: &str, step: Option<&str>) -> Result<Vec<f64>, String> {
    let a = number(start)?;
    let b = number(stop)?;
    let s = match step {
        Some(t) => number(t)?,
        None => 1.0,
    };
    if s <= 0.0 {
        return Err(format!("step must be positive, got {s}"));
    }
    if b < a {
        return Err(format!("stop {b} is below start {a}"));
    }
    // The last point is the lattice point nearest `stop`, so it may
    // overshoot by less than half a step.
    let count = ((b - a) / s + 0.5).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(format!("{count} grid points is too many"));
    }
    // Plain decimals are generated on an integer lattice so that 1:10:0.1
    // yields 1.3 rather than 1.3000000000000003.
    let places = [Some(start), Some(stop), step].into_iter().flatten().map(decimals).try_fold(0u32, |acc, d| d.map(|d| acc.max(d)));
    Ok(match places {
        Some(p) if p <= 12 => {
            let scale = 10f64.powi(p as i32);
            let (a_int, s_int) = ((a * scale).round(), (s * scale).round());
            (0..count).map(|i| (a_int + i as f64 * s_int) / scale).collect()
        }
        _ => (0..count).map(|i| a + i as f64 * s).collect(),
    })
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let text = s.trim().to_string();
        if text.is_empty() {
            return Err("empty grid".into());
        }
        let values = if text.contains(':') {
            let parts: Vec<&str> = text.split(':').collect();
            match parts.as_slice() {
                [a, b] => range(a, b, None)?,
                [a, b, c] => range(a, b, Some(c))?,
                _ => return Err(format!("'{text}': expected start:stop or start:stop:step")),
            }
        } else {
            text.split(',').map(number).collect::<Result<_, _>>()?
        };
        Ok(Grid { text, values })
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for Grid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(s: &str) -> Vec<f64> {
        s.parse::<Grid>().unwrap().values
    }

    #[test]
    fn staircase_grid_has_91_points() {
        let v = g("1:10:0.1");
        assert_eq!(v.len(), 91);
        assert_eq!(v[3], 1.3);
        assert_eq!(v[90], 10.0);
    }

    #[test]
    fn default_step_and_negative_bounds() {
        assert_eq!(g("2:20").len(), 19);
        assert_eq!(g("-9:-1"), (-9..=-1).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn stop_within_half_step() {
        assert_eq!(g("0:1:0.3"), vec![0.0, 0.3, 0.6, 0.9]);
        assert_eq!(g("0:1:0.35"), vec![0.0, 0.35, 0.7, 1.05]);
        assert_eq!(g("0:1:0.6"), vec![0.0, 0.6, 1.2]);
    }

    #[test]
    fn lists_and_exponents() {
        assert_eq!(g("1,2.5,7"), vec![1.0, 2.5, 7.0]);
        assert_eq!(g("1e-3"), vec![1e-3]);
        assert_eq!(g("0:1e-1:2.5e-2").len(), 5);
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in ["", "a,b", "1:2:0", "3:1", "1:2:3:4", "1,inf", "0:1e9:1e-9"] {
            assert!(bad.parse::<Grid>().is_err(), "{bad}");
        }
    }
}
