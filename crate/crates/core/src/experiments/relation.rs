use serde::Serialize;

use super::{combined_se, Verdict};
use crate::error::{Error, Result};
use crate::skewmap::{clt_oracle_map, green_kubo_map, sample_srb, PiecewiseObservable, SkewProduct, VarianceEstimate};
use crate::suspension::{flow_monte_carlo, flow_variance, GeometricModel, InducedObservable, RoofFunction};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationConfig {
    pub eps: f64,
    pub model: GeometricModel,
    pub samples: usize,
    pub burn_in: usize,
    pub blocks: usize,
    pub block_time: f64,
    pub seed: u64,
    /// Replace the log roof by this constant.
    pub constant_roof: Option<f64>,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self { eps: 0.0, model: GeometricModel::default(), samples: 1_000_000, burn_in: 1000, blocks: 10_000, block_time: 2000.0, seed: 0, constant_roof: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationRecord {
    pub eps: f64,
    pub observable: String,
    /// Direct time integrals along the suspension flow.
    pub flow_side: VarianceEstimate,
    /// `σ²_map(Ψ − m τ) / τ̄`.
    pub map_side: VarianceEstimate,
    pub sigma2_map: f64,
    pub mean_roof: f64,
    /// `|flow − map| / combined se`.
    pub z_score: f64,
    /// Relative error of `map_side = σ²_map / τ̄` on the central values.
    pub ratio_error: f64,
    pub verdict: Verdict,
}

/// Both sides of the map-to-flow variance relation. Agreement within three
/// combined standard errors passes; beyond five is an error.
pub fn relation_check(obs: &InducedObservable, cfg: &RelationConfig) -> Result<RelationRecord> {
    let mut s = cfg.model.suspension(cfg.eps)?;
    if let Some(c) = cfg.constant_roof {
        s = s.with_roof(RoofFunction::constant(c)?);
    }
    let ens = sample_srb(&s.map, cfg.samples, cfg.burn_in, cfg.seed)?;
    let fv = flow_variance(&s, obs, &ens)?;
    let flow_side = flow_monte_carlo(&s, obs, cfg.blocks, cfg.block_time, cfg.burn_in, cfg.seed)?.estimate;
    let map_side = fv.estimate.clone();
    let se = combined_se(flow_side.stderr, map_side.stderr);
    let diff = (flow_side.value - map_side.value).abs();
    let z_score = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    if z_score > 5.0 {
        return Err(Error::Disagreement(format!(
            "flow {} ± {} vs map {} ± {} ({z_score:.1} se)",
            flow_side.value, flow_side.stderr, map_side.value, map_side.stderr
        )));
    }
    let expected = fv.sigma2_map.value / fv.mean_roof;
    let ratio_error = if expected == 0.0 { map_side.value.abs() } else { (map_side.value - expected).abs() / expected.abs() };
    let verdict = if z_score <= 3.0 { Verdict::Pass } else { Verdict::Fail };
    Ok(RelationRecord {
        eps: cfg.eps,
        observable: obs.name.clone(),
        flow_side,
        map_side,
        sigma2_map: fv.sigma2_map.value,
        mean_roof: fv.mean_roof,
        z_score,
        ratio_error,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub observable: String,
    pub green_kubo: VarianceEstimate,
    pub monte_carlo: VarianceEstimate,
    pub z_score: f64,
    pub qq_max_deviation: f64,
    pub verdict: Verdict,
}

/// Green–Kubo on one long orbit against independent replica block sums.
pub fn map_oracle_check(
    map: &SkewProduct,
    psi: &PiecewiseObservable,
    samples: usize,
    n_block: usize,
    n_reps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<OracleComparison> {
    let ens = sample_srb(map, samples, burn_in, seed)?;
    let gk = green_kubo_map(psi, &ens, None);
    let mc = clt_oracle_map(map, psi, n_block, n_reps, burn_in, seed)?;
    // The two errors are added, not combined in quadrature.
    let se = gk.stderr + mc.estimate.stderr;
    let diff = (gk.value - mc.estimate.value).abs();
    let z_score = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(OracleComparison {
        observable: psi.name.clone(),
        verdict: if z_score <= 3.0 { Verdict::Pass } else { Verdict::Fail },
        green_kubo: gk,
        monte_carlo: mc.estimate,
        z_score,
        qq_max_deviation: mc.normality.qq_max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(constant_roof: Option<f64>) -> RelationConfig {
        RelationConfig { samples: 100_000, blocks: 500, block_time: 100.0, constant_roof, seed: 3, ..RelationConfig::default() }
    }

    #[test]
    fn constant_observable_gives_zero_on_both_sides() {
        let r = relation_check(&InducedObservable::constant(2.0), &small(None)).unwrap();
        assert_eq!(r.flow_side.value, 0.0);
        assert_eq!(r.map_side.value, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn constant_roof_ratio_is_exact() {
        let r = relation_check(&InducedObservable::coordinate_x(), &small(Some(1.5))).unwrap();
        assert_eq!(r.mean_roof, 1.5);
        assert!(r.ratio_error < 1e-15, "{}", r.ratio_error);
        assert!(r.z_score <= 3.0, "{r:?}");
    }

    #[test]
    fn doubling_cosine_variance_is_one_half() {
        let psi = PiecewiseObservable::new("cos(2πx)", 1.0, |x: f64, _| (2.0 * std::f64::consts::PI * x).cos());
        let r = map_oracle_check(&SkewProduct::doubling(), &psi, 200_000, 200, 500, 1000, 4).unwrap();
        assert!((r.green_kubo.value - 0.5).abs() < 3.0 * r.green_kubo.stderr, "{r:?}");
        assert!((r.monte_carlo.value - 0.5).abs() < 3.0 * r.monte_carlo.stderr, "{r:?}");
    }
}
