//! Per-point weight schemes: uniform, step (sub-interval fitting) and
//! quadratic recency weighting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LpplError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Uniform,
    /// `w(i) = 1` on `[start, end]` (1-based, inclusive), 0 elsewhere.
    Step { start: usize, end: usize },
    /// `w(i) = (W / (n - i + W))^2`.
    Quadratic { w: f64 },
}

impl WeightScheme {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            WeightScheme::Uniform => Ok(()),
            WeightScheme::Step { start, end } => {
                if start >= 1 && start <= end && end <= n {
                    Ok(())
                } else {
                    Err(LpplError::InvalidWeights(format!(
                        "step:{start},{end} needs 1 <= s <= t <= {n}"
                    )))
                }
            }
            WeightScheme::Quadratic { w } => {
                if w.is_finite() && w > 0.0 {
                    Ok(())
                } else {
                    Err(LpplError::InvalidWeights(format!("quad:{w} needs W > 0")))
                }
            }
        }
    }
}

/// Weights `w(1..=n)` for `scheme`.
pub fn build_weights(scheme: &WeightScheme, n: usize) -> Result<Vec<f64>> {
    scheme.validate(n)?;
    let weights = match *scheme {
        WeightScheme::Uniform => vec![1.0; n],
        WeightScheme::Step { start, end } => (1..=n)
            .map(|i| if (start..=end).contains(&i) { 1.0 } else { 0.0 })
            .collect(),
        WeightScheme::Quadratic { w } => (1..=n)
            .map(|i| {
                let q = w / ((n - i) as f64 + w);
                q * q
            })
            .collect(),
    };
    Ok(weights)
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::Uniform => write!(f, "uniform"),
            WeightScheme::Step { start, end } => write!(f, "step:{start},{end}"),
            WeightScheme::Quadratic { w } => write!(f, "quad:{w}"),
        }
    }
}

impl FromStr for WeightScheme {
    type Err = LpplError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || LpplError::InvalidWeights(format!("cannot parse weight scheme {s:?}"));
        let s = s.trim();
        if s == "uniform" {
            return Ok(WeightScheme::Uniform);
        }
        if let Some(rest) = s.strip_prefix("step:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            let start = a.trim().parse().map_err(|_| bad())?;
            let end = b.trim().parse().map_err(|_| bad())?;
            return Ok(WeightScheme::Step { start, end });
        }
        if let Some(rest) = s.strip_prefix("quad:") {
            let w: f64 = rest.trim().parse().map_err(|_| bad())?;
            if !(w.is_finite() && w > 0.0) {
                return Err(LpplError::InvalidWeights(format!("quad:{rest} needs W > 0")));
            }
            return Ok(WeightScheme::Quadratic { w });
        }
        Err(bad())
    }
}

impl Serialize for WeightScheme {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightScheme {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_step() {
        assert_eq!(build_weights(&WeightScheme::Uniform, 5).unwrap(), vec![1.0; 5]);
        assert_eq!(
            build_weights(&WeightScheme::Step { start: 3, end: 5 }, 5).unwrap(),
            vec![0.0, 0.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn quadratic_endpoints() {
        let w = build_weights(&WeightScheme::Quadratic { w: 10.0 }, 11).unwrap();
        assert_eq!(w[0], 0.25);
        assert_eq!(w[10], 1.0);
        assert!(w.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn smaller_w_lowers_old_weights() {
        let n = 50;
        let wide = build_weights(&WeightScheme::Quadratic { w: 20.0 }, n).unwrap();
        let narrow = build_weights(&WeightScheme::Quadratic { w: 5.0 }, n).unwrap();
        for i in 0..n - 1 {
            assert!(narrow[i] < wide[i], "i = {}", i + 1);
        }
        assert_eq!(narrow[n - 1], wide[n - 1]);
    }

    #[test]
    fn invalid_parameters() {
        for scheme in [
            WeightScheme::Step { start: 0, end: 3 },
            WeightScheme::Step { start: 4, end: 3 },
            WeightScheme::Step { start: 1, end: 6 },
            WeightScheme::Quadratic { w: 0.0 },
            WeightScheme::Quadratic { w: -1.0 },
            WeightScheme::Quadratic { w: f64::NAN },
        ] {
            assert!(build_weights(&scheme, 5).is_err(), "{scheme:?}");
        }
    }

    #[test]
    fn parse_and_display() {
        for s in ["uniform", "step:3,5", "quad:100"] {
            assert_eq!(s.parse::<WeightScheme>().unwrap().to_string(), s);
        }
        assert_eq!(
            "quad:2.5".parse::<WeightScheme>().unwrap(),
            WeightScheme::Quadratic { w: 2.5 }
        );
        for s in ["", "quad", "quad:-1", "step:1", "step:a,b", "cubic:3"] {
            assert!(s.parse::<WeightScheme>().is_err(), "{s}");
        }
    }
}
