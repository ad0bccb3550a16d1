//! Experiments built from the lower modules: continuity in ε, the modulus in
//! the observable, the map-to-flow relation and CLT diagnostics.

mod criteria;
mod modulus;
mod normality;
mod observables;
mod relation;
mod sweep;

use serde::Serialize;

use crate::skewmap::Method;

pub use criteria::*;
pub use modulus::{modulus_experiment, modulus_ratio, modulus_scan, observable_norm, flow_average, ModulusConfig, ModulusFit, ModulusPoint, ModulusResult};
pub use normality::{clt_normality, NormalityRecord, MIN_BLOCKS, QQ_THRESHOLD};
pub use observables::ObservableSpec;
pub use relation::{map_oracle_check, relation_check, OracleComparison, RelationConfig, RelationRecord};
pub use sweep::{continuity_statistic, continuity_sweep, SweepCell, SweepConfig, SweepResult, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Pass => 0,
            Self::Inconclusive => 2,
            Self::Fail => 1,
        }
    }

    /// Worst of several verdicts.
    pub fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
        verdicts.into_iter().fold(Self::Pass, |acc, v| match (acc, v) {
            (Self::Fail, _) | (_, Self::Fail) => Self::Fail,
            (Self::Inconclusive, _) | (_, Self::Inconclusive) => Self::Inconclusive,
            _ => Self::Pass,
        })
    }

    pub fn from_bool(ok: bool) -> Verdict {
        if ok {
            Self::Pass
        } else {
            Self::Fail
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pass => "PASS",
            Self::Inconclusive => "INCONCLUSIVE",
            Self::Fail => "FAIL",
        })
    }
}

pub fn combined_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::GreenKubo => "green-kubo",
        Method::BatchMeans => "batch-means",
        Method::UlamPoisson => "ulam-poisson",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_combination() {
        use Verdict::*;
        assert_eq!(Verdict::combine([Pass, Pass]), Pass);
        assert_eq!(Verdict::combine([Pass, Inconclusive]), Inconclusive);
        assert_eq!(Verdict::combine([Inconclusive, Fail, Pass]), Fail);
        assert_eq!(Verdict::combine([]), Pass);
        assert_eq!([Pass, Inconclusive, Fail].map(Verdict::exit_code), [0, 2, 1]);
    }
}
