//! Slack-variable parametrizations.
//!
//! An inequality constraint `c <= 0` is turned into the equality
//! `c + s(mu) = 0` by a slack function `s`. Three shapes are provided:
//!
//! | kind          | `s(mu)`                   | `s'(mu)`             |
//! |---------------|---------------------------|----------------------|
//! | `Quadratic`   | `mu^2 / 2`                | `mu`                 |
//! | `Exponential` | `exp(beta mu)`            | `beta exp(beta mu)`  |
//! | `SoftCorner`  | `log(1 + exp(beta mu))/beta` | `sigmoid(beta mu)` |
//!
//! `Exponential` and `SoftCorner` are bijections onto `(0, inf)`, so the slack
//! recovered from a measured constraint value is unique. `SoftCorner` has a
//! derivative that tends to one far from the boundary, which leaves the action
//! space untouched there, and to zero at the boundary.
//!
//! The quadratic inverse always returns the non-negative branch; the model is
//! kept as a comparison baseline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this magnitude of `beta * mu` the closed forms switch to asymptotic expansions.
const SWITCH: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlackKind {
    Quadratic,
    Exponential,
    SoftCorner,
}

impl SlackKind {
    pub const ALL: [SlackKind; 3] = [
        SlackKind::Quadratic,
        SlackKind::Exponential,
        SlackKind::SoftCorner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlackKind::Quadratic => "quadratic",
            SlackKind::Exponential => "exponential",
            SlackKind::SoftCorner => "softcorner",
        }
    }
}

impl fmt::Display for SlackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SlackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" => Ok(SlackKind::Quadratic),
            "exponential" => Ok(SlackKind::Exponential),
            "softcorner" => Ok(SlackKind::SoftCorner),
            other => Err(Error::Parse(format!("unknown slack type '{other}'"))),
        }
    }
}

/// A slack function together with its sharpness `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackModel {
    kind: SlackKind,
    beta: f64,
}

impl SlackModel {
    pub fn new(kind: SlackKind, beta: f64) -> Result<Self> {
        if kind != SlackKind::Quadratic && !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "slack beta must be positive and finite, got {beta}"
            )));
        }
        Ok(Self { kind, beta })
    }

    pub fn quadratic() -> Self {
        Self {
            kind: SlackKind::Quadratic,
            beta: 1.0,
        }
    }

    pub fn exponential(beta: f64) -> Result<Self> {
        Self::new(SlackKind::Exponential, beta)
    }

    pub fn soft_corner(beta: f64) -> Result<Self> {
        Self::new(SlackKind::SoftCorner, beta)
    }

    /// Builds a model from its config name (`quadratic`, `exponential`, `softcorner`).
    pub fn from_config(name: &str, beta: f64) -> Result<Self> {
        Self::new(name.parse()?, beta)
    }

    pub fn kind(&self) -> SlackKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `s(mu)`.
    pub fn value(&self, mu: f64) -> f64 {
        match self.kind {
            SlackKind::Quadratic => 0.5 * mu * mu,
            SlackKind::Exponential => (self.beta * mu).exp(),
            SlackKind::SoftCorner => softplus(self.beta * mu) / self.beta,
        }
    }

    /// `ds/dmu`, the diagonal entry of the slack Jacobian.
    pub fn derivative(&self, mu: f64) -> f64 {
        match self.kind {
            SlackKind::Quadratic => mu,
            SlackKind::Exponential => self.beta * (self.beta * mu).exp(),
            SlackKind::SoftCorner => sigmoid(self.beta * mu),
        }
    }

    /// The slack `mu` with `s(mu) = -c`. Requires `c < 0`.
    pub fn inverse(&self, c: f64) -> Result<f64> {
        if !(c < 0.0) {
            return Err(Error::Domain { value: c });
        }
        let mu = match self.kind {
            SlackKind::Quadratic => (-2.0 * c).sqrt(),
            SlackKind::Exponential => (-c).ln() / self.beta,
            SlackKind::SoftCorner => {
                let y = -self.beta * c;
                let z = if y > SWITCH {
                    // log(e^y - 1) = y + log(1 - e^-y)
                    y + (-(-y).exp()).ln_1p()
                } else {
                    y.exp_m1().ln()
                };
                z / self.beta
            }
        };
        Ok(mu)
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > SWITCH {
        z + (-z).exp()
    } else if z < -SWITCH {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn models() -> Vec<SlackModel> {
        vec![
            SlackModel::quadratic(),
            SlackModel::exponential(1.0).unwrap(),
            SlackModel::exponential(2.5).unwrap(),
            SlackModel::soft_corner(1.0).unwrap(),
            SlackModel::soft_corner(4.0).unwrap(),
        ]
    }

    #[test]
    fn value_examples() {
        assert_eq!(SlackModel::quadratic().value(2.0), 2.0);
        assert_eq!(SlackModel::exponential(1.0).unwrap().value(0.0), 1.0);
        // log 2
        assert_relative_eq!(
            SlackModel::soft_corner(1.0).unwrap().value(0.0),
            0.693_147_180_559_945_3,
            epsilon = 1e-15
        );
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(SlackModel::quadratic().derivative(3.0), 3.0);
        assert_eq!(SlackModel::soft_corner(1.0).unwrap().derivative(0.0), 0.5);
        let m = SlackModel::exponential(2.0).unwrap();
        let h = 1e-6;
        let fd = (m.value(h) - m.value(-h)) / (2.0 * h);
        assert_relative_eq!(fd, 2.0, max_relative = 1e-6);
        assert_eq!(m.derivative(0.0), 2.0);
    }

    #[test]
    fn inverse_examples() {
        let sc = SlackModel::soft_corner(1.0).unwrap();
        assert!(sc.inverse(-std::f64::consts::LN_2).unwrap().abs() < 1e-15);
        assert_eq!(SlackModel::exponential(1.0).unwrap().inverse(-1.0).unwrap(), 0.0);
        assert_eq!(SlackModel::quadratic().inverse(-2.0).unwrap(), 2.0);
    }

    #[test]
    fn inverse_rejects_boundary_and_violation() {
        for m in models() {
            assert!(matches!(m.inverse(0.0), Err(Error::Domain { .. })));
            assert!(matches!(m.inverse(0.3), Err(Error::Domain { .. })));
            assert!(m.inverse(f64::NAN).is_err());
        }
    }

    #[test]
    fn round_trip_over_range() {
        for m in models() {
            let mut c = -10.0;
            while c <= -1e-6 {
                let mu = m.inverse(c).unwrap();
                assert!((m.value(mu) + c).abs() <= 1e-9, "{m:?} c={c}");
                c = if c < -1e-3 { c + 0.01 } else { c * 0.5 };
            }
        }
    }

    #[test]
    fn derivative_matches_central_differences() {
        for m in models() {
            for i in 0..=400 {
                let mu = -20.0 + 0.1 * i as f64;
                let h = 1e-5 * mu.abs().max(1.0) / m.beta();
                let fd = (m.value(mu + h) - m.value(mu - h)) / (2.0 * h);
                let an = m.derivative(mu);
                let scale = an.abs().max(1e-300);
                if m.kind() == SlackKind::Quadratic && mu.abs() < 1e-9 {
                    continue;
                }
                assert!((fd - an).abs() / scale <= 1e-6, "{m:?} mu={mu} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn derivative_vanishes_toward_boundary() {
        for m in models() {
            let mut prev = f64::INFINITY;
            for i in 1..=6 {
                let c = -(10f64).powi(-i);
                let d = m.derivative(m.inverse(c).unwrap());
                assert!(d < prev, "{m:?} not decreasing at c={c}");
                assert!(d > 0.0);
                prev = d;
            }
        }
    }

    #[test]
    fn soft_corner_far_field_keeps_unit_gain() {
        let m = SlackModel::soft_corner(1.0).unwrap();
        assert!((m.derivative(40.0) - 1.0).abs() <= 1e-6);
        // linear tail of the overflow-safe branch
        assert_relative_eq!(m.value(1000.0), 1000.0, epsilon = 1e-12);
        assert_relative_eq!(m.inverse(-1000.0).unwrap(), 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn positivity() {
        for m in models() {
            for i in 0..=200 {
                let mu = -10.0 + 0.1 * i as f64;
                let s = m.value(mu);
                match m.kind() {
                    SlackKind::Quadratic => assert!(s >= 0.0),
                    _ => assert!(s > 0.0),
                }
            }
        }
        assert_eq!(SlackModel::quadratic().value(0.0), 0.0);
    }

    #[test]
    fn config_strings() {
        let m = SlackModel::from_config("softcorner", 2.0).unwrap();
        assert_eq!(m.kind(), SlackKind::SoftCorner);
        assert_eq!(m.beta(), 2.0);
        assert!(SlackModel::from_config("cubic", 1.0).is_err());
        assert!(SlackModel::from_config("exponential", 0.0).is_err());
        assert!(SlackModel::from_config("exponential", -1.0).is_err());
    }
}
