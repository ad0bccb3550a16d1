use serde::Serialize;

use crate::skewmap::clt_from_sums;

/// Smallest number of blocks for which the pass threshold applies.
pub const MIN_BLOCKS: usize = 1000;
/// Pass threshold on the probability-plot deviation.
pub const QQ_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalityRecord {
    pub blocks: usize,
    pub qq_max_deviation: f64,
    pub excess_kurtosis: f64,
    pub degenerate: bool,
    pub passed: bool,
}

/// Standardise block sums `S_r` over windows `t_r` and compare them with
/// the normal law.
pub fn clt_normality(sums: &[f64], lengths: &[f64]) -> NormalityRecord {
    let oracle = clt_from_sums(sums, lengths, 0);
    let n = oracle.normality;
    NormalityRecord {
        blocks: sums.len(),
        qq_max_deviation: n.qq_max_deviation,
        excess_kurtosis: n.excess_kurtosis,
        degenerate: n.degenerate,
        passed: !n.degenerate && sums.len() >= MIN_BLOCKS && n.qq_max_deviation < QQ_THRESHOLD,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, StreamRng};

    // Box–Muller on two uniforms.
    fn standard_normal(r: &mut StreamRng) -> f64 {
        let u = rng::uniform(r, f64::MIN_POSITIVE, 1.0);
        let v = rng::uniform(r, 0.0, 1.0);
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }

    #[test]
    fn gaussian_sums_pass() {
        let mut r = rng::stream(9, 0);
        let sums: Vec<f64> = (0..2000).map(|_| standard_normal(&mut r)).collect();
        let rec = clt_normality(&sums, &vec![1.0; 2000]);
        assert!(rec.passed, "{rec:?}");
        assert!(rec.excess_kurtosis.abs() < 0.5);
    }

    #[test]
    fn constant_sums_are_degenerate() {
        let rec = clt_normality(&vec![3.0; 1500], &vec![3.0; 1500]);
        assert!(rec.degenerate && !rec.passed);
    }

    #[test]
    fn too_few_blocks_never_pass() {
        let mut r = rng::stream(10, 0);
        let sums: Vec<f64> = (0..100).map(|_| standard_normal(&mut r)).collect();
        assert!(!clt_normality(&sums, &vec![1.0; 100]).passed);
    }

    #[test]
    fn skewed_sums_fail() {
        let mut r = rng::stream(11, 0);
        let sums: Vec<f64> = (0..2000).map(|_| standard_normal(&mut r).powi(2)).collect();
        assert!(!clt_normality(&sums, &vec![1.0; 2000]).passed);
    }
}
