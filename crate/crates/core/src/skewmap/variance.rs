use rayon::prelude::*;
use serde::Serialize;

use super::observable::PiecewiseObservable;
use super::product::{sample_srb, Orbit, OrbitEnsemble, SkewProduct};
use crate::error::{Error, Result};
use crate::onedmap::{Density, UlamOperator};
use crate::output::Csv;
use crate::rng;
use crate::stats::{self, AutocovTable, CompensatedSum, GeometricFit, NormalityDiagnostic};

/// Largest lag kept in autocovariance tables; also the truncation cap.
pub const MAX_LAG: usize = 60;
pub const JACKKNIFE_BLOCKS: usize = 50;
/// Truncation stops once the fitted tail drops below this fraction of `ĉ(0)`.
pub const TAIL_REL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GreenKubo,
    BatchMeans,
    UlamPoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    /// No geometric envelope could be fitted to the correlations.
    TailUnbounded,
    /// The mean roof has relative standard error above 5%.
    UnstableRoof,
    /// The series has (numerically) zero variance.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub method: Method,
    pub value: f64,
    pub stderr: f64,
    pub n_trunc: usize,
    pub theta_hat: Option<f64>,
    pub seed: u64,
    pub flags: Vec<Flag>,
}

impl VarianceEstimate {
    pub fn has(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }

    /// `|a − b| ≤ k (se_a + se_b)`.
    pub fn agrees_with(&self, other: &VarianceEstimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * (self.stderr + other.stderr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub n_trunc: usize,
    pub fit: Option<GeometricFit>,
    /// Bound on `Σ_{n > n_trunc} |c(n)|`; infinite without a fit.
    pub tail: f64,
    /// Leading lags whose autocovariance exceeds twice its standard error.
    pub significant: usize,
}

/// Fits a geometric envelope to the leading significant lags and picks the
/// smallest truncation whose tail is below `TAIL_REL_TOL · ĉ(0)`.
pub fn choose_truncation(table: &AutocovTable) -> Truncation {
    let c0 = table.autocov(0);
    let mut points = Vec::new();
    for k in 1..=table.max_lag() {
        let (c, se) = table.lag_with_error(k);
        if c.abs() <= 2.0 * se {
            break;
        }
        points.push((k, c.abs()));
    }
    let significant = points.len();
    let fit = if significant >= 3 { stats::fit_geometric(&points).filter(|f| f.rate < 1.0) } else { None };
    match fit {
        Some(fit) => {
            let cap = MAX_LAG.min(table.max_lag());
            let n = (1..=cap).find(|&n| fit.tail_after(n) < TAIL_REL_TOL * c0).unwrap_or(cap);
            Truncation { n_trunc: n, tail: fit.tail_after(n), fit: Some(fit), significant }
        }
        None => Truncation { n_trunc: significant.max(1), fit: None, tail: f64::INFINITY, significant },
    }
}

fn degenerate(series: &[f64]) -> bool {
    let m = stats::mean(series);
    let scale = m.abs().max(1e-300);
    series.iter().all(|v| (v - m).abs() <= 1e-12 * scale) || series.len() < 2
}

/// Green–Kubo variance of a stationary series with block-jackknife errors.
///
/// The standard error is the jackknife error of the truncated sum plus twice
/// the fitted tail bound (the truncated part of `2 Σ c(n)`).
pub fn green_kubo_series(series: &[f64], n_trunc: Option<usize>, seed: u64) -> VarianceEstimate {
    if degenerate(series) {
        return VarianceEstimate {
            method: Method::GreenKubo,
            value: 0.0,
            stderr: 0.0,
            n_trunc: 0,
            theta_hat: None,
            seed,
            flags: vec![Flag::Degenerate],
        };
    }
    let table = AutocovTable::new(series, MAX_LAG, JACKKNIFE_BLOCKS);
    let auto = choose_truncation(&table);
    let n = n_trunc.unwrap_or(auto.n_trunc).min(table.max_lag());
    let tail = match &auto.fit {
        Some(fit) => fit.tail_after(n),
        None => 0.0,
    };
    let (value, se) = table.green_kubo(n);
    let mut flags = Vec::new();
    if auto.fit.is_none() {
        flags.push(Flag::TailUnbounded);
    }
    VarianceEstimate {
        method: Method::GreenKubo,
        value,
        stderr: se + 2.0 * tail,
        n_trunc: n,
        theta_hat: auto.fit.map(|f| f.rate),
        seed,
        flags,
    }
}

pub fn green_kubo_map(psi: &PiecewiseObservable, ensemble: &OrbitEnsemble, n_trunc: Option<usize>) -> VarianceEstimate {
    green_kubo_series(&evaluate(psi, ensemble), n_trunc, ensemble.seed)
}

/// `Ψ` along the ensemble, evaluated in parallel.
pub fn evaluate(psi: &PiecewiseObservable, ensemble: &OrbitEnsemble) -> Vec<f64> {
    ensemble.xs.par_iter().zip(&ensemble.ys).map(|(&x, &y)| psi.eval(x, y)).collect()
}

/// Paired Green–Kubo difference `σ²(a) − σ²(b)` for two series on the same orbit.
pub fn green_kubo_pair(a: &[f64], b: &[f64], n_trunc: usize) -> (f64, f64) {
    let ta = AutocovTable::new(a, MAX_LAG, JACKKNIFE_BLOCKS);
    let tb = AutocovTable::new(b, MAX_LAG, JACKKNIFE_BLOCKS);
    stats::green_kubo_difference(&ta, &tb, n_trunc)
}

/// Centred autocovariance at lag `n` with its jackknife error.
pub fn correlation(psi: &PiecewiseObservable, ensemble: &OrbitEnsemble, n: usize) -> Result<(f64, f64)> {
    if n >= ensemble.len() {
        return Err(Error::Domain(format!("lag {n} not below ensemble length {}", ensemble.len())));
    }
    let table = AutocovTable::new(&evaluate(psi, ensemble), n, JACKKNIFE_BLOCKS);
    Ok(table.lag_with_error(n))
}

pub fn correlation_sequence(series: &[f64], max_lag: usize) -> Vec<(f64, f64)> {
    let table = AutocovTable::new(series, max_lag, JACKKNIFE_BLOCKS);
    (0..=max_lag).map(|k| table.lag_with_error(k)).collect()
}

pub fn correlation_csv(seq: &[(f64, f64)]) -> Csv {
    let mut csv = Csv::new(&["lag", "value", "stderr"]);
    for (k, &(v, se)) in seq.iter().enumerate() {
        csv.row(&[k.into(), v.into(), se.into()]);
    }
    csv
}

/// Monte-Carlo CLT variance from independent block sums.
#[derive(Debug, Clone, PartialEq)]
pub struct CltOracle {
    pub estimate: VarianceEstimate,
    pub normality: NormalityDiagnostic,
    /// Standardised block sums `(S − t m̂)/√t`.
    pub z: Vec<f64>,
    pub mean: f64,
}

/// Variance of `(S_r − t_r m̂)/√t_r` with `m̂ = ΣS/Σt`; the error comes from
/// the empirical fourth moment.
pub fn clt_from_sums(sums: &[f64], lengths: &[f64], seed: u64) -> CltOracle {
    let r = sums.len() as f64;
    let m = stats::sum(sums.iter().copied()) / stats::sum(lengths.iter().copied());
    let z: Vec<f64> = sums.iter().zip(lengths).map(|(s, t)| (s - t * m) / t.sqrt()).collect();
    let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
    let correction = r / (r - 1.0);
    let value = stats::mean(&z2) * correction;
    let stderr = (stats::variance(&z2) / r).sqrt() * correction;
    let normality = stats::normality(&z);
    let mut flags = Vec::new();
    if normality.degenerate {
        flags.push(Flag::Degenerate);
    }
    CltOracle {
        estimate: VarianceEstimate { method: Method::BatchMeans, value, stderr, n_trunc: 0, theta_hat: None, seed, flags },
        normality,
        z,
        mean: m,
    }
}

/// Independent replicas on disjoint random streams, each burned in and then
/// summed over `n_block` steps.
pub fn clt_oracle_map(
    map: &SkewProduct,
    psi: &PiecewiseObservable,
    n_block: usize,
    n_reps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<CltOracle> {
    if n_block == 0 || n_reps < 2 {
        return Err(Error::Domain("Monte-Carlo oracle needs n_block ≥ 1 and n_reps ≥ 2".into()));
    }
    let sums: Vec<f64> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut orbit = Orbit::new(map, rng::stream(seed, rng::REPLICA_BASE + r), burn_in);
            let mut s = CompensatedSum::default();
            for _ in 0..n_block {
                let (x, y) = orbit.point();
                s.add(psi.eval(x, y));
                orbit.advance();
            }
            s.value()
        })
        .collect();
    Ok(clt_from_sums(&sums, &vec![n_block as f64; n_reps], seed))
}

/// Variance of an observable of `x` alone from the Ulam operator:
/// `c(n) = ∫ f̂ · Pⁿ(f̂ h)`, summed until the terms fall below `1e-14 c(0)`.
pub fn ulam_poisson(op: &UlamOperator, density: &Density, f_cells: &[f64], n_max: usize) -> VarianceEstimate {
    let w = op.partition.width();
    let mean = stats::sum(f_cells.iter().zip(&density.weights).map(|(f, h)| f * h)) * w;
    let fc: Vec<f64> = f_cells.iter().map(|f| f - mean).collect();
    let mut g: Vec<f64> = fc.iter().zip(&density.weights).map(|(f, h)| f * h).collect();
    let c0 = stats::sum(fc.iter().zip(&g).map(|(a, b)| a * b)) * w;
    let mut total = CompensatedSum::default();
    total.add(c0);
    let mut last = c0;
    let mut n = 0;
    while n < n_max && last.abs() > 1e-14 * c0.abs().max(1e-300) {
        g = op.push(&g);
        last = stats::sum(fc.iter().zip(&g).map(|(a, b)| a * b)) * w;
        total.add(2.0 * last);
        n += 1;
    }
    let mut flags = Vec::new();
    if n == n_max && last.abs() > 1e-14 * c0.abs() {
        flags.push(Flag::TailUnbounded);
    }
    VarianceEstimate {
        method: Method::UlamPoisson,
        value: total.value(),
        stderr: 2.0 * last.abs(),
        n_trunc: n,
        theta_hat: None,
        seed: 0,
        flags,
    }
}

/// `∫ Ψ · (Ψ ∘ F₀ⁿ) dμ_{F_ε}` for each `ε`, sampled on orbits of `F_ε` with
/// a common seed; returns `(ε, value, standard error)`.
pub fn stability_profile(
    psi: &PiecewiseObservable,
    eps_grid: &[f64],
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let f0 = SkewProduct::geometric(0.0)?;
    let shifted = psi.compose(f0, n);
    eps_grid
        .iter()
        .map(|&eps| {
            let ens = sample_srb(&SkewProduct::geometric(eps)?, samples, 1000, seed)?;
            let prod: Vec<f64> = ens.points().map(|(x, y)| psi.eval(x, y) * shifted.eval(x, y)).collect();
            let (m, se) = stats::batch_means(&prod, 100);
            Ok((eps, m, se))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::onedmap::{build_ulam, invariant_density, Partition, POWER_MAX_ITER, POWER_TOL};
    use std::f64::consts::PI;

    fn cos_x_half_y() -> PiecewiseObservable {
        PiecewiseObservable::new("cos(2πx)+y/2", 1.0, |x: f64, y| (2.0 * PI * x).cos() + 0.5 * y)
    }

    #[test]
    fn constant_observable_has_zero_variance() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let ens = sample_srb(&f, 20_000, 1000, 1).unwrap();
        let c = PiecewiseObservable::constant(0.7);
        let gk = green_kubo_map(&c, &ens, None);
        assert_eq!((gk.value, gk.stderr), (0.0, 0.0));
        let mc = clt_oracle_map(&f, &c, 1000, 50, 1000, 1).unwrap();
        assert_eq!(mc.estimate.value, 0.0);
        assert!(mc.normality.degenerate);
        for k in 0..5 {
            assert_eq!(correlation(&c, &ens, k).unwrap().0, 0.0);
        }
    }

    #[test]
    fn lag_zero_is_variance_and_long_lag_rejected() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let ens = sample_srb(&f, 10_000, 1000, 2).unwrap();
        let (c0, _) = correlation(&cos_x_half_y(), &ens, 0).unwrap();
        let s = evaluate(&cos_x_half_y(), &ens);
        let var = stats::variance(&s) * (s.len() - 1) as f64 / s.len() as f64;
        assert!((c0 - var).abs() < 1e-12 && c0 > 0.0);
        assert!(correlation(&cos_x_half_y(), &ens, 10_000).is_err());
    }

    #[test]
    fn correlations_decay_geometrically() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let ens = sample_srb(&f, 400_000, 1000, 3).unwrap();
        let seq = correlation_sequence(&evaluate(&cos_x_half_y(), &ens), 30);
        let pts: Vec<(usize, f64)> = seq
            .iter()
            .enumerate()
            .skip(1)
            .take_while(|(_, (c, se))| c.abs() > 2.0 * se)
            .map(|(k, (c, _))| (k, c.abs()))
            .collect();
        assert!(pts.len() >= 3, "{seq:?}");
        let fit = stats::fit_geometric(&pts).unwrap();
        assert!(fit.rate < 1.0, "{fit:?}");
        assert!(seq[30].0.abs() < 4.0 * seq[30].1 + 1e-3 * seq[0].0);
        assert_eq!(correlation_csv(&seq[..2]).as_str().lines().count(), 3);
    }

    #[test]
    fn coboundary_has_zero_variance() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let v = |x: f64, y: f64| (3.0 * x).sin() + y * y;
        let cob = PiecewiseObservable::new("v - v∘F", 1.0, move |x, y| {
            let (a, b) = f.step(x, y).unwrap();
            v(x, y) - v(a, b)
        });
        let ens = sample_srb(&f, 200_000, 1000, 4).unwrap();
        let gk = green_kubo_map(&cob, &ens, None);
        assert!(gk.value.abs() <= 3.0 * gk.stderr, "{gk:?}");
    }

    #[test]
    fn doubling_cosine_variance_is_one_half() {
        let f = SkewProduct::doubling();
        let psi = PiecewiseObservable::new("cos(2πx)", 1.0, |x: f64, _| (2.0 * PI * x).cos());
        let ens = sample_srb(&f, 200_000, 1000, 5).unwrap();
        let gk = green_kubo_map(&psi, &ens, None);
        assert!((gk.value - 0.5).abs() <= 3.0 * gk.stderr, "{gk:?}");
        let mc = clt_oracle_map(&f, &psi, 1000, 400, 1000, 5).unwrap();
        assert!((mc.estimate.value - 0.5).abs() <= 3.0 * mc.estimate.stderr, "{:?}", mc.estimate);
        let part = Partition::new(0.0, 1.0, 1024).unwrap();
        let op = build_ulam(&crate::onedmap::DoublingMap, part).unwrap();
        let h = invariant_density(&op, POWER_TOL, POWER_MAX_ITER).unwrap();
        let up = ulam_poisson(&op, &h, &part.project(|x| (2.0 * PI * x).cos()), 50);
        assert!((up.value - 0.5).abs() < 1e-5, "{up:?}");
    }

    #[test]
    fn base_only_observable_matches_ulam() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let psi = PiecewiseObservable::new("cos(2πx)", 1.0, |x: f64, _| (2.0 * PI * x).cos());
        let ens = sample_srb(&f, 500_000, 1000, 6).unwrap();
        let gk = green_kubo_map(&psi, &ens, None);
        let part = Partition::new(-0.5, 0.5, 4096).unwrap();
        let op = build_ulam(f.family().unwrap(), part).unwrap();
        let h = invariant_density(&op, POWER_TOL, POWER_MAX_ITER).unwrap();
        let up = ulam_poisson(&op, &h, &part.project(|x| (2.0 * PI * x).cos()), 200);
        assert!((gk.value - up.value).abs() <= 3.0 * gk.stderr + 1e-3, "{gk:?} vs {up:?}");
    }

    #[test]
    fn green_kubo_matches_monte_carlo() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let psi = cos_x_half_y();
        let ens = sample_srb(&f, 300_000, 1000, 7).unwrap();
        let gk = green_kubo_map(&psi, &ens, None);
        let mc = clt_oracle_map(&f, &psi, 1000, 300, 1000, 7).unwrap();
        assert!(gk.agrees_with(&mc.estimate, 3.0), "{gk:?} vs {:?}", mc.estimate);
        assert!(gk.value >= -gk.stderr);
    }

    #[test]
    fn estimate_serialises_in_field_order() {
        let e = VarianceEstimate {
            method: Method::GreenKubo,
            value: 0.5,
            stderr: 0.01,
            n_trunc: 4,
            theta_hat: Some(0.3),
            seed: 9,
            flags: vec![Flag::TailUnbounded],
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"method":"green-kubo","value":0.5,"stderr":0.01,"n_trunc":4,"theta_hat":0.3,"seed":9,"flags":["tail-unbounded"]}"#
        );
    }

    #[test]
    fn statistical_stability_trend() {
        let psi = cos_x_half_y();
        let prof = stability_profile(&psi, &[0.04, 0.005, 0.0], 2, 300_000, 8).unwrap();
        let target = prof[2].1;
        let (far, near) = ((prof[0].1 - target).abs(), (prof[1].1 - target).abs());
        let se = prof.iter().map(|p| p.2).fold(0.0, f64::max);
        assert!(near <= far + 3.0 * se, "{prof:?}");
    }
}
