use rayon::prelude::*;
use serde::Serialize;

use super::induced::{InducedObservable, Suspension};
use super::roof::RoofKind;
use crate::error::{Error, Result};
use crate::onedmap::Density;
use crate::output::Csv;
use crate::quadrature;
use crate::rng;
use crate::skewmap::{clt_from_sums, green_kubo_series, CltOracle, Flag, Method, Orbit, OrbitEnsemble, VarianceEstimate};
use crate::stats::{self, CompensatedSum, LinearFit};

/// Relative standard error of the mean roof above which an estimate is flagged.
pub const ROOF_SE_LIMIT: f64 = 0.05;
const ROOF_BATCHES: usize = 100;

/// `∫ τ dμ̄` against a piecewise-constant base density, exact per cell.
pub fn mean_roof_density(s: &Suspension, density: &Density) -> f64 {
    let part = density.partition;
    // Antiderivative of −ln u on (0, ∞).
    let anti = |u: f64| if u == 0.0 { 0.0 } else { u - u * u.ln() };
    let cell_integral = |a: f64, b: f64| -> f64 {
        match s.roof.kind {
            RoofKind::Log { lambda1, tau2 } => {
                let log_part = if a >= 0.0 {
                    anti(b) - anti(a)
                } else if b <= 0.0 {
                    anti(-a) - anti(-b)
                } else {
                    anti(-a) + anti(b)
                };
                log_part / lambda1 + tau2 * (b - a)
            }
            RoofKind::Constant(c) => c * (b - a),
        }
    };
    stats::sum((0..part.n).map(|i| {
        let (a, b) = part.cell(i);
        density.weights[i] * cell_integral(a, b)
    }))
}

/// Flow variance through the map: `σ²_flow = σ²_map(Ψ − m τ)/τ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowVariance {
    pub eps: f64,
    pub estimate: VarianceEstimate,
    pub sigma2_map: VarianceEstimate,
    pub mean_roof: f64,
    pub mean_roof_se: f64,
    /// Flow average of `ψ̃`, `∫Ψ dμ / ∫τ dμ`.
    pub flow_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub eps: f64,
    pub sigma2_flow: f64,
    pub stderr: f64,
    pub sigma2_map: f64,
    pub mean_roof: f64,
    pub n_trunc: usize,
    pub seed: u64,
}

impl FlowVariance {
    pub fn record(&self) -> FlowRecord {
        FlowRecord {
            eps: self.eps,
            sigma2_flow: self.estimate.value,
            stderr: self.estimate.stderr,
            sigma2_map: self.sigma2_map.value,
            mean_roof: self.mean_roof,
            n_trunc: self.sigma2_map.n_trunc,
            seed: self.estimate.seed,
        }
    }
}

/// Induced values and roofs along an ensemble.
pub fn induced_series(s: &Suspension, obs: &InducedObservable, ensemble: &OrbitEnsemble) -> Result<(Vec<f64>, Vec<f64>)> {
    let psi: Vec<f64> = ensemble
        .xs
        .par_iter()
        .zip(&ensemble.ys)
        .map(|(&x, &y)| s.induce(obs, (x, y)))
        .collect::<Result<_>>()?;
    let tau: Vec<f64> = ensemble.points().map(|xi| s.roof.eval(xi)).collect::<Result<_>>()?;
    Ok((psi, tau))
}

/// The map-level series whose variance gives the flow variance. Under a
/// log roof the induced observable is recentred by the flow mean times the
/// roof, which is what makes the flow-time sums mean zero.
pub fn flow_centred_series(s: &Suspension, psi: &[f64], tau: &[f64]) -> (Vec<f64>, f64) {
    let m = stats::sum(psi.iter().copied()) / stats::sum(tau.iter().copied());
    let series = match s.roof.kind {
        RoofKind::Constant(_) => psi.to_vec(),
        RoofKind::Log { .. } => psi.iter().zip(tau).map(|(p, t)| p - m * t).collect(),
    };
    (series, m)
}

pub fn flow_variance_from_series(s: &Suspension, psi: &[f64], tau: &[f64], seed: u64) -> FlowVariance {
    let (series, m) = flow_centred_series(s, psi, tau);
    let map = green_kubo_series(&series, None, seed);
    let (tau_bar, tau_se) = match s.roof.kind {
        RoofKind::Constant(c) => (c, 0.0),
        RoofKind::Log { .. } => stats::batch_means(tau, ROOF_BATCHES),
    };
    let value = map.value / tau_bar;
    let stderr = ((map.stderr / tau_bar).powi(2) + (map.value * tau_se / (tau_bar * tau_bar)).powi(2)).sqrt();
    let mut flags = map.flags.clone();
    if tau_se / tau_bar > ROOF_SE_LIMIT {
        flags.push(Flag::UnstableRoof);
    }
    FlowVariance {
        eps: s.map.family().map_or(0.0, |f| f.eps),
        estimate: VarianceEstimate { value, stderr, flags, ..map.clone() },
        sigma2_map: map,
        mean_roof: tau_bar,
        mean_roof_se: tau_se,
        flow_mean: m,
    }
}

pub fn flow_variance(s: &Suspension, obs: &InducedObservable, ensemble: &OrbitEnsemble) -> Result<FlowVariance> {
    let (psi, tau) = induced_series(s, obs, ensemble)?;
    Ok(flow_variance_from_series(s, &psi, &tau, ensemble.seed))
}

/// Direct Monte-Carlo of the suspension flow: `n_blocks` independent windows
/// of length `block_time`, each started on the section after burn-in.
pub fn flow_monte_carlo(
    s: &Suspension,
    obs: &InducedObservable,
    n_blocks: usize,
    block_time: f64,
    burn_in: usize,
    seed: u64,
) -> Result<CltOracle> {
    if n_blocks < 2 || !(block_time > 0.0) {
        return Err(Error::Domain("flow Monte-Carlo needs ≥ 2 blocks of positive length".into()));
    }
    let sums: Vec<f64> = (0..n_blocks as u64)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut orbit = Orbit::new(&s.map, rng::stream(seed, rng::FLOW_BASE + r), burn_in);
            let mut total = CompensatedSum::default();
            let mut t = 0.0;
            loop {
                let xi = orbit.point();
                let tau = s.roof.full(xi.0)?;
                if t + tau <= block_time {
                    total.add(s.induce_between(obs, xi, 0.0, f64::INFINITY)?);
                    t += tau;
                    orbit.advance();
                } else {
                    total.add(s.induce_between(obs, xi, 0.0, block_time - t)?);
                    return Ok(total.value());
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut oracle = clt_from_sums(&sums, &vec![block_time; n_blocks], seed);
    oracle.estimate.method = Method::BatchMeans;
    Ok(oracle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationRegime {
    Sampled,
    /// No sampled point has a return time above `N`.
    ExactZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationError {
    pub n: f64,
    /// Tail quadrature of `∫|Ψ − Ψ_N| dμ` over the strip `τ > N`.
    pub value: f64,
    /// Plain ensemble average of `|Ψ − Ψ_N|`.
    pub sampled_value: f64,
    pub regime: TruncationRegime,
}

/// Number of fibre values used for the strip quadrature, taken from the
/// ensemble points closest to the singular line on each side.
pub const TAIL_FIBERS: usize = 32;
/// Width of the strip quadrature in units of `1/λ₁` (the weight drops by `e^{−40}`).
const TAIL_SPAN: f64 = 40.0;

/// `∫|Ψ − Ψ_N| dμ_F`.
///
/// `{τ > N}` is the strip `|x| < e^{−λ₁(N − τ₂)}`, far too thin to be hit by
/// sampling for moderate `N`. The reported value integrates over the strip
/// in the variable `w = −log|x|/λ₁` against the one-sided limits of the base
/// density, with fibres drawn from the sampled points nearest the strip.
pub fn truncation_error(s: &Suspension, obs: &InducedObservable, ensemble: &OrbitEnsemble, density: &Density, n: f64) -> Result<TruncationError> {
    let (lambda1, tau2) = match s.roof.kind {
        RoofKind::Log { lambda1, tau2 } => (lambda1, tau2),
        RoofKind::Constant(_) => return Err(Error::Domain("truncation needs a log roof".into())),
    };
    if n <= tau2 {
        return Err(Error::Domain(format!("truncation level {n} not above τ₂ = {tau2}")));
    }
    let tail = |xi: (f64, f64)| s.induce_between(obs, xi, n, f64::INFINITY).map(f64::abs);

    let mut sampled = CompensatedSum::default();
    for xi in ensemble.points() {
        if s.roof.full(xi.0)? > n {
            sampled.add(tail(xi)?);
        }
    }
    let sampled_value = sampled.value() / ensemble.len().max(1) as f64;

    let w0 = n - tau2;
    let part = density.partition;
    let zero_cell = part.locate(0.0);
    let mut value = 0.0;
    for side in [-1.0f64, 1.0] {
        let h0 = if side < 0.0 { density.weights[zero_cell.saturating_sub(1)] } else { density.weights[zero_cell] };
        let mut near: Vec<(f64, f64)> = ensemble.points().filter(|(x, _)| x.signum() == side).collect();
        near.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
        near.truncate(TAIL_FIBERS);
        if near.is_empty() {
            continue;
        }
        let mut err = None;
        let inner = |v: f64| {
            let x = side * (-(lambda1 * w0 + v)).exp();
            let mut acc = 0.0;
            for &(_, y) in &near {
                match tail((x, y)) {
                    Ok(d) => acc += d,
                    Err(e) => err = Some(e),
                }
            }
            acc / near.len() as f64 * (-v).exp()
        };
        // x = ±e^{−λ₁w}, dx = λ₁e^{−λ₁w}dw, v = λ₁(w − w₀): the strip weight is e^{−λ₁w₀} e^{−v} dv.
        let integral = quadrature::integrate(inner, 0.0, TAIL_SPAN, 1e-9)?.value;
        if let Some(e) = err {
            return Err(e);
        }
        value += h0 * (-lambda1 * w0).exp() * integral;
    }
    let regime = if sampled_value <= 1e-14 { TruncationRegime::ExactZero } else { TruncationRegime::Sampled };
    Ok(TruncationError { n, value, sampled_value, regime })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationCurve {
    pub points: Vec<TruncationError>,
    /// Fit of `log error` against `N`.
    pub fit: Option<LinearFit>,
}

impl TruncationCurve {
    pub fn csv(&self) -> Csv {
        let mut csv = Csv::new(&["N", "error"]);
        for p in &self.points {
            csv.row(&[p.n.into(), p.value.into()]);
        }
        csv
    }
}

pub fn truncation_curve(s: &Suspension, obs: &InducedObservable, ensemble: &OrbitEnsemble, density: &Density, ns: &[f64]) -> Result<TruncationCurve> {
    let points: Vec<TruncationError> = ns.iter().map(|&n| truncation_error(s, obs, ensemble, density, n)).collect::<Result<_>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter(|p| p.value > 0.0).map(|p| (p.n, p.value.ln())).unzip();
    Ok(TruncationCurve { fit: stats::linear_fit(&xs, &ys), points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::onedmap::{build_ulam, invariant_density, Partition, POWER_MAX_ITER, POWER_TOL};
    use crate::skewmap::sample_srb;
    use crate::suspension::RoofFunction;

    fn density(s: &Suspension) -> Density {
        let op = build_ulam(s.map.family().unwrap(), Partition::new(-0.5, 0.5, 2048).unwrap()).unwrap();
        invariant_density(&op, POWER_TOL, POWER_MAX_ITER).unwrap()
    }

    #[test]
    fn mean_roof_matches_sampling() {
        let s = Suspension::geometric(0.0).unwrap();
        let ens = sample_srb(&s.map, 200_000, 1000, 1).unwrap();
        let tau: Vec<f64> = ens.points().map(|xi| s.roof.eval(xi).unwrap()).collect();
        let (m, se) = stats::batch_means(&tau, 100);
        let exact = mean_roof_density(&s, &density(&s));
        assert!((m - exact).abs() < 3.0 * se + 1e-4, "{m} ± {se} vs {exact}");
        // Uniform density check of the cell formula: ∫ −log|x| dx over I is 1 + log 2.
        let flat = Density { partition: Partition::new(-0.5, 0.5, 7).unwrap(), weights: vec![1.0; 7] };
        let expect = (1.0 + 2f64.ln()) / s.flow.lambda1 + 1.0;
        assert!((mean_roof_density(&s, &flat) - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_roof_relation_is_exact() {
        let s = Suspension::geometric(0.0).unwrap().with_roof(RoofFunction::constant(1.5).unwrap());
        let ens = sample_srb(&s.map, 50_000, 1000, 2).unwrap();
        let fv = flow_variance(&s, &InducedObservable::coordinate_x(), &ens).unwrap();
        assert_eq!(fv.estimate.value, fv.sigma2_map.value / 1.5);
        assert_eq!(fv.mean_roof, 1.5);
    }

    #[test]
    fn constant_observable_gives_zero_and_shift_invariance() {
        let s = Suspension::geometric(0.0).unwrap();
        let ens = sample_srb(&s.map, 20_000, 1000, 3).unwrap();
        let fv = flow_variance(&s, &InducedObservable::constant(2.0), &ens).unwrap();
        assert_eq!(fv.estimate.value, 0.0);
        let a = flow_variance(&s, &InducedObservable::coordinate_x(), &ens).unwrap();
        let b = flow_variance(&s, &InducedObservable::coordinate_x().shifted(-4.0), &ens).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flow_variance_matches_flow_monte_carlo() {
        let s = Suspension::geometric(0.0).unwrap();
        let obs = InducedObservable::coordinate_x();
        let ens = sample_srb(&s.map, 200_000, 1000, 4).unwrap();
        let fv = flow_variance(&s, &obs, &ens).unwrap();
        let mc = flow_monte_carlo(&s, &obs, 1500, 200.0, 1000, 4).unwrap();
        assert!(fv.estimate.agrees_with(&mc.estimate, 3.0), "{:?} vs {:?}", fv.estimate, mc.estimate);
        assert!(!fv.estimate.has(Flag::UnstableRoof));
        let rec = serde_json::to_string(&fv.record()).unwrap();
        assert!(rec.starts_with("{\"eps\":0.0,\"sigma2_flow\":"));
    }

    #[test]
    fn truncation_decays_exponentially() {
        let s = Suspension::geometric(0.0).unwrap();
        let obs = InducedObservable::coordinate_x();
        let ens = sample_srb(&s.map, 50_000, 1000, 5).unwrap();
        let h = density(&s);
        let ns: Vec<f64> = (3..=10).map(f64::from).collect();
        let curve = truncation_curve(&s, &obs, &ens, &h, &ns).unwrap();
        let fit = curve.fit.unwrap();
        assert!(fit.slope <= -0.1 && fit.r_squared >= 0.9, "{fit:?}");
        let rate = -fit.slope;
        assert!(rate > s.flow.lambda1 / 2.0 && rate < 2.0 * s.flow.lambda1, "{rate}");
        assert!(curve.points[5].value < curve.points[1].value);
        assert!(curve.points.iter().all(|p| p.regime == TruncationRegime::ExactZero && p.sampled_value == 0.0));
        assert_eq!(curve.csv().as_str().lines().next(), Some("N,error"));
    }
}
