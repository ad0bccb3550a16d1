use rayon::prelude::*;
use serde::Serialize;

use super::{combined_se, Verdict};
use crate::error::{Error, Result};
use crate::skewmap::{green_kubo_series, sample_srb, OrbitEnsemble, VarianceEstimate, JACKKNIFE_BLOCKS, MAX_LAG};
use crate::stats::{self, AutocovTable};
use crate::suspension::{flow_centred_series, flow_monte_carlo, induced_series, GeometricModel, InducedObservable, Suspension};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusConfig {
    pub eps_values: Vec<f64>,
    pub model: GeometricModel,
    /// Amplitudes `δ₀` of the perturbation `ψ′ = x + δ₀ cos z`.
    pub deltas: Vec<f64>,
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Monte-Carlo cross-check of `σ²(ψ′)` for every perturbation; 0 disables it.
    pub mc_blocks: usize,
    pub mc_block_time: f64,
}

impl Default for ModulusConfig {
    fn default() -> Self {
        Self {
            eps_values: vec![0.0, 0.02],
            model: GeometricModel::default(),
            deltas: vec![0.1, 0.05, 0.025, 0.0125],
            samples: 1_000_000,
            burn_in: 1000,
            seed: 0,
            mc_blocks: 1000,
            mc_block_time: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusPoint {
    pub scale: f64,
    /// `‖ψ − ψ′‖ = ∫|ψ − ψ′| dμ₀ + |(ψ − ψ′)(0)|`.
    pub norm: f64,
    /// `|σ²(ψ) − σ²(ψ′)|` and its paired standard error.
    pub diff: f64,
    pub diff_se: f64,
    pub ratio: f64,
    pub oracle: Option<VarianceEstimate>,
    pub perturbed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusFit {
    pub eps: f64,
    pub base: VarianceEstimate,
    pub points: Vec<ModulusPoint>,
    /// Largest ratio over the scales, the fitted constant `C`.
    pub constant: f64,
    pub widened: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusResult {
    pub config: ModulusConfig,
    pub fits: Vec<ModulusFit>,
    pub verdict: Verdict,
}

/// `Δ / (δ (1 + |log δ|))`, zero when both vanish.
pub fn modulus_ratio(norm: f64, diff: f64) -> f64 {
    if norm == 0.0 {
        return if diff == 0.0 { 0.0 } else { f64::INFINITY };
    }
    diff / (norm * (1.0 + norm.ln().abs()))
}

/// Flow average `∫ψ dμ` of an observable from an ensemble on the section.
pub fn flow_average(s: &Suspension, obs: &InducedObservable, ens: &OrbitEnsemble) -> Result<f64> {
    let (psi, tau) = induced_series(s, obs, ens)?;
    Ok(stats::sum(psi) / stats::sum(tau) + obs.at_singularity())
}

/// `‖φ‖ = ∫|φ| dμ₀ + |φ(0)|`, the integral taken on the `ε = 0` ensemble.
pub fn observable_norm(s0: &Suspension, phi: &InducedObservable, ens0: &OrbitEnsemble) -> Result<f64> {
    let f = phi.clone();
    let abs = InducedObservable::new(format!("|{}|", phi.name), phi.beta, phi.holder_const, move |p| f.eval(p).abs());
    Ok(flow_average(s0, &abs, ens0)? + phi.at_singularity().abs())
}

/// No blow-up: at least four finite ratios and the finest one within twice the coarsest.
fn bounded(points: &[ModulusPoint]) -> bool {
    let mut sorted: Vec<&ModulusPoint> = points.iter().filter(|p| p.norm > 0.0).collect();
    sorted.sort_by(|a, b| b.norm.total_cmp(&a.norm));
    sorted.len() >= 4
        && sorted.iter().all(|p| p.ratio.is_finite())
        && sorted.last().unwrap().ratio <= 2.0 * sorted[0].ratio
}

/// Scan `ψ′ = ψ + φ_k` at one `ε`; `phis` are the differences with their
/// scale labels and `norms` their norms.
///
/// `σ²(ψ′) − σ²(ψ)` comes from the paired Green–Kubo difference on the
/// ensemble. When the skew product is symmetric the mirrored ensemble is an
/// equally valid orbit, and the leave-one-block-out replicates of both are
/// averaged (antithetic sampling).
pub fn modulus_scan(
    s: &Suspension,
    ens: &OrbitEnsemble,
    base: &InducedObservable,
    phis: &[(f64, InducedObservable)],
    norms: &[f64],
    mc: Option<(usize, f64, usize)>,
) -> Result<(VarianceEstimate, Vec<ModulusPoint>)> {
    let mirror = ens.mirrored(&s.map);
    let ensembles: Vec<&OrbitEnsemble> = std::iter::once(ens).chain(mirror.as_ref()).collect();
    let weight = 1.0 / ensembles.len() as f64;
    let series: Vec<(Vec<f64>, Vec<f64>)> = ensembles.iter().map(|e| induced_series(s, base, e)).collect::<Result<_>>()?;
    let tau_bar = stats::mean(&series[0].1);
    let centred: Vec<Vec<f64>> = series.iter().map(|(psi, tau)| flow_centred_series(s, psi, tau).0).collect();
    let tables: Vec<AutocovTable> = centred.iter().map(|a| AutocovTable::new(a, MAX_LAG, JACKKNIFE_BLOCKS)).collect();
    let map_base = green_kubo_series(&centred[0], None, ens.seed);
    let n_trunc = map_base.n_trunc;
    let base_est = VarianceEstimate {
        value: map_base.value / tau_bar,
        stderr: map_base.stderr / tau_bar,
        ..map_base
    };

    let mut points = Vec::with_capacity(phis.len());
    for ((scale, phi), &norm) in phis.iter().zip(norms) {
        let mut full = 0.0;
        let mut replicates = vec![0.0; JACKKNIFE_BLOCKS];
        let mut all_zero = true;
        for ((e, (psi, tau)), table) in ensembles.iter().zip(&series).zip(&tables) {
            let dphi: Vec<f64> = e.xs.par_iter().zip(&e.ys).map(|(&x, &y)| s.induce(phi, (x, y))).collect::<Result<_>>()?;
            all_zero &= dphi.iter().all(|v| *v == 0.0);
            let psi2: Vec<f64> = psi.iter().zip(&dphi).map(|(p, d)| p + d).collect();
            let (b, _) = flow_centred_series(s, &psi2, tau);
            let tb = AutocovTable::new(&b, MAX_LAG, JACKKNIFE_BLOCKS);
            let (f, reps) = stats::green_kubo_difference_replicates(&tb, table, n_trunc);
            full += weight * f;
            replicates.iter_mut().zip(&reps).for_each(|(acc, r)| *acc += weight * r);
        }
        let (diff, diff_se) = if all_zero { (0.0, 0.0) } else { (full.abs() / tau_bar, stats::jackknife_se(&replicates) / tau_bar) };
        let perturbed = if all_zero { base_est.value } else { base_est.value + full / tau_bar };
        let oracle = match mc {
            Some((blocks, time, burn_in)) if blocks > 0 && !all_zero => {
                let (b, f) = (base.clone(), phi.clone());
                let both = InducedObservable::new(format!("{}+{}", b.name, f.name), b.beta.min(f.beta), b.holder_const + f.holder_const, move |p| {
                    b.eval(p) + f.eval(p)
                });
                Some(flow_monte_carlo(s, &both, blocks, time, burn_in, ens.seed)?.estimate)
            }
            _ => None,
        };
        if let Some(o) = &oracle {
            let se = combined_se(o.stderr, base_est.stderr);
            if (o.value - perturbed).abs() > 3.0 * se {
                return Err(Error::Disagreement(format!(
                    "σ²(ψ′) at scale {scale}: Green–Kubo {perturbed} vs Monte-Carlo {} ± {}",
                    o.value, o.stderr
                )));
            }
        }
        points.push(ModulusPoint { scale: *scale, norm, diff, diff_se, ratio: modulus_ratio(norm, diff), oracle, perturbed });
    }
    Ok((base_est, points))
}

fn cos_perturbation(delta: f64) -> InducedObservable {
    InducedObservable::new(format!("{delta}cos(z)"), 1.0, delta.abs(), move |p| delta * p[2].cos())
}

/// `ψ = x` against `ψ′ = x + δ₀ cos z` at every `ε` in the config, with the
/// norm of the difference always measured against the `ε = 0` flow.
pub fn modulus_experiment(cfg: &ModulusConfig) -> Result<ModulusResult> {
    if cfg.deltas.len() < 4 || cfg.eps_values.is_empty() {
        return Err(Error::Config("modulus needs at least four scales and one ε".into()));
    }
    let s0 = cfg.model.suspension(0.0)?;
    let ens0 = sample_srb(&s0.map, cfg.samples, cfg.burn_in, cfg.seed)?;
    // ‖δ₀ cos z‖ = |δ₀| ‖cos z‖.
    let unit_norm = observable_norm(&s0, &cos_perturbation(1.0), &ens0)?;
    let base = InducedObservable::coordinate_x();
    let mut fits = Vec::new();
    for (k, &eps) in cfg.eps_values.iter().enumerate() {
        let s = cfg.model.suspension(eps)?;
        let ens = if eps == 0.0 { ens0.clone() } else { sample_srb(&s.map, cfg.samples, cfg.burn_in, cfg.seed.wrapping_add(k as u64))? };
        let mc = Some((cfg.mc_blocks, cfg.mc_block_time, cfg.burn_in));
        let mut widened = false;
        let mut deltas = cfg.deltas.clone();
        let (base_est, points) = loop {
            let phis: Vec<(f64, InducedObservable)> = deltas.iter().map(|&d| (d, cos_perturbation(d))).collect();
            let norms: Vec<f64> = deltas.iter().map(|d| d.abs() * unit_norm).collect();
            let (b, pts) = modulus_scan(&s, &ens, &base, &phis, &norms, mc)?;
            if pts.iter().any(|p| p.diff > 2.0 * p.diff_se) || widened {
                break (b, pts);
            }
            widened = true;
            deltas.iter_mut().for_each(|d| *d *= 4.0);
        };
        let verdict = if !points.iter().any(|p| p.diff > 2.0 * p.diff_se) {
            Verdict::Inconclusive
        } else if bounded(&points) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        let constant = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
        fits.push(ModulusFit { eps, base: base_est, points, constant, widened, verdict });
    }
    let verdict = Verdict::combine(fits.iter().map(|f| f.verdict));
    Ok(ModulusResult { config: cfg.clone(), fits, verdict })
}
