use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::suspension::InducedObservable;

/// The flow observables used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservableSpec {
    X,
    Z,
    CosZ,
    /// `x + δ cos z`.
    XPlusCosZ(f64),
}

impl ObservableSpec {
    pub fn induced(&self) -> InducedObservable {
        match *self {
            Self::X => InducedObservable::coordinate_x(),
            Self::Z => InducedObservable::coordinate_z(),
            Self::CosZ => InducedObservable::cos_z(),
            Self::XPlusCosZ(d) => InducedObservable::x_plus_cos_z(d),
        }
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match *self {
            Self::X => p[0],
            Self::Z => p[2],
            Self::CosZ => p[2].cos(),
            Self::XPlusCosZ(d) => p[0] + d * p[2].cos(),
        }
    }
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::X => write!(f, "x"),
            Self::Z => write!(f, "z"),
            Self::CosZ => write!(f, "cos(z)"),
            Self::XPlusCosZ(d) => write!(f, "x+{d}cos(z)"),
        }
    }
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "x" => return Ok(Self::X),
            "z" => return Ok(Self::Z),
            "cos(z)" => return Ok(Self::CosZ),
            _ => {}
        }
        let delta = s
            .strip_prefix("x+")
            .and_then(|r| r.strip_suffix("cos(z)"))
            .and_then(|d| d.trim_end_matches('*').parse::<f64>().ok())
            .filter(|d| d.is_finite());
        delta
            .map(Self::XPlusCosZ)
            .ok_or_else(|| Error::Config(format!("unknown observable '{s}' (expected x, z, cos(z) or x+<δ>cos(z))")))
    }
}

impl Serialize for ObservableSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for spec in [ObservableSpec::X, ObservableSpec::Z, ObservableSpec::CosZ, ObservableSpec::XPlusCosZ(0.0125)] {
            assert_eq!(spec.to_string().parse::<ObservableSpec>().unwrap(), spec);
            assert_eq!(spec.induced().name, spec.to_string());
        }
        assert_eq!("x+0.5*cos(z)".parse::<ObservableSpec>().unwrap(), ObservableSpec::XPlusCosZ(0.5));
        assert!("y".parse::<ObservableSpec>().is_err());
    }

    #[test]
    fn eval_matches_induced() {
        let p = [0.3, -0.2, 0.7];
        for spec in [ObservableSpec::X, ObservableSpec::Z, ObservableSpec::CosZ, ObservableSpec::XPlusCosZ(0.1)] {
            assert_eq!(spec.eval(p), spec.induced().eval(p));
        }
    }
}
