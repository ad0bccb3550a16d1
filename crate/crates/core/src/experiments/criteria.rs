use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::{
    continuity_sweep, map_oracle_check, modulus_experiment, relation_check, ModulusConfig, RelationConfig, SweepConfig, Tier,
    Verdict,
};
use crate::error::Result;
use crate::lorenzode::{empirical_quotient, return_time_regression, section_returns, singularity_eigenvalues, OdeParams};
use crate::onedmap::{
    build_ulam, duality_error, invariant_density, v1p, vp_norm, DoublingMap, MapFamily, Partition, BASE_GAMMA, POWER_MAX_ITER,
    POWER_TOL, RHO0,
};
use crate::rng;
use crate::skewmap::{measure_seminorms, sample_srb, PiecewiseObservable, SeminormGrid, SkewProduct};
use crate::suspension::{truncation_curve, GeometricModel, InducedObservable};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionOutcome {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
    /// Wall time; kept out of serialised records so reruns compare equal.
    #[serde(skip)]
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!("{} {} ({:.1} s): {}", self.verdict, self.name, self.seconds, self.detail)
    }

    /// Like [`line`](Self::line) without the wall time.
    pub fn untimed_line(&self) -> String {
        format!("{} {}: {}", self.verdict, self.name, self.detail)
    }
}

/// Runs `f` and turns a module error into a failed criterion.
pub fn timed<F>(name: &str, f: F) -> CriterionOutcome
where
    F: FnOnce() -> Result<(Verdict, String)>,
{
    let start = Instant::now();
    let (verdict, detail) = f().unwrap_or_else(|e| (Verdict::Fail, format!("error: {e}")));
    CriterionOutcome { name: name.to_string(), verdict, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Sample budgets of the criteria.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Budgets {
    pub seed: u64,
    pub model: GeometricModel,
    pub map_samples: usize,
    pub mc_block: usize,
    pub mc_reps: usize,
    pub truncation_samples: usize,
    pub crossings: usize,
    pub quotient_bins: usize,
    pub ode_tol: f64,
    pub sweep: SweepConfig,
    pub modulus: ModulusConfig,
    pub relation: RelationConfig,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            seed: 0,
            model: GeometricModel::default(),
            map_samples: 1_000_000,
            mc_block: 1000,
            mc_reps: 1000,
            truncation_samples: 200_000,
            crossings: 100_000,
            quotient_bins: 256,
            ode_tol: 1e-9,
            sweep: SweepConfig::default(),
            modulus: ModulusConfig::default(),
            relation: RelationConfig::default(),
        }
    }
}

/// Ulam rows stochastic, density normalised, doubling density uniform and
/// the duality error shrinking with the partition.
pub fn transfer_operator_suite() -> Result<(Verdict, String)> {
    let mut row_err = 0.0f64;
    let mut mass_err = 0.0f64;
    let mut min_weight = f64::INFINITY;
    for eps in [0.0, 0.02, 0.04] {
        let t = MapFamily::geometric(BASE_GAMMA, eps)?;
        let op = build_ulam(&t, Partition::of_map(&t, 4096)?)?;
        row_err = (0..op.n()).map(|i| (op.row_sum(i) - 1.0).abs()).fold(row_err, f64::max);
        let h = invariant_density(&op, POWER_TOL, POWER_MAX_ITER)?;
        mass_err = mass_err.max((h.integral() - 1.0).abs());
        min_weight = h.weights.iter().copied().fold(min_weight, f64::min);
    }
    let part = Partition::new(0.0, 1.0, 1024)?;
    let h = invariant_density(&build_ulam(&DoublingMap, part)?, POWER_TOL, POWER_MAX_ITER)?;
    let uniform_err = h.weights.iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max);
    let t = MapFamily::geometric(BASE_GAMMA, 0.0)?;
    let duality: Vec<f64> = [256, 1024, 4096]
        .iter()
        .map(|&n| duality_error(&t, Partition::of_map(&t, n)?, |x| 1.0 + 0.5 * (3.0 * x).sin(), |x| (2.0 * x).cos() + x * x))
        .collect::<Result<_>>()?;
    let ok = row_err <= 1e-12
        && mass_err <= 1e-10
        && min_weight >= 0.0
        && uniform_err < 1e-6
        && duality[0] > duality[1]
        && duality[1] > duality[2];
    Ok((
        Verdict::from_bool(ok),
        format!(
            "row error {row_err:.1e}, mass error {mass_err:.1e}, min density {min_weight:.3}, doubling deviation {uniform_err:.1e}, duality {:.2e} > {:.2e} > {:.2e}",
            duality[0], duality[1], duality[2]
        ),
    ))
}

// Maximum of the p-variation sum over every subpartition keeping both endpoints.
fn brute_force_vp(values: &[f64], p: f64) -> f64 {
    let interior = values.len() - 2;
    let mut best = 0.0f64;
    for mask in 0u32..(1 << interior) {
        let mut prev = values[0];
        let mut acc = 0.0;
        for (i, &v) in values[1..values.len() - 1].iter().enumerate() {
            if mask & (1 << i) != 0 {
                acc += (v - prev).abs().powf(p);
                prev = v;
            }
        }
        acc += (values[values.len() - 1] - prev).abs().powf(p);
        best = best.max(acc);
    }
    best.powf(1.0 / p)
}

/// The variation inequality on random step functions, the `V_p` dynamic
/// programme against exhaustive search, and the two seminorm lemmas.
pub fn norm_suite(seed: u64) -> Result<(Verdict, String)> {
    let mut r = rng::stream(seed, rng::ORBIT_STREAM);
    let mut worst_vv = f64::NEG_INFINITY;
    for _ in 0..200 {
        let steps: Vec<f64> = (0..r.random_range(2..30)).map(|_| r.random_range(-1.0..1.0)).collect();
        let m = r.random_range(50..400);
        let p = r.random_range(1.0..4.0);
        let f: Vec<f64> = (0..m).map(|i| steps[i * steps.len() / m]).collect();
        worst_vv = worst_vv.max(v1p(&f, -0.5, 0.5, p, RHO0)? - 2f64.powf(1.0 / p) * vp_norm(&f, p)?);
    }
    let mut worst_bf = 0.0f64;
    for _ in 0..50 {
        let f: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
        for p in [1.0, 1.5, 2.0, 3.0] {
            worst_bf = worst_bf.max((vp_norm(&f, p)? - brute_force_vp(&f, p)).abs());
        }
    }
    let map = SkewProduct::geometric(0.0)?;
    let grid = SeminormGrid { nx: 256, ..SeminormGrid::default() };
    let observables = [
        PiecewiseObservable::new("cos(2πx)y", 1.0, |x: f64, y| (2.0 * std::f64::consts::PI * x).cos() * y),
        PiecewiseObservable::new("cos(2πx)+y/2", 1.0, |x: f64, y| (2.0 * std::f64::consts::PI * x).cos() + y / 2.0),
        PiecewiseObservable::new("sqrt|y|+x", 0.5, |x: f64, y: f64| y.abs().sqrt() + x),
    ];
    let mut lemmas_ok = true;
    for psi in &observables {
        let rec = measure_seminorms(psi, &map, &grid)?;
        lemmas_ok &= rec.projection_ok && rec.iterates_ok && rec.iterate_checks.len() == 3;
    }
    let ok = worst_vv <= 1e-9 && worst_bf < 1e-12 && lemmas_ok;
    Ok((
        Verdict::from_bool(ok),
        format!("worst V₁,₁/ₚ − 2^(1/p)Vₚ = {worst_vv:.3e}, DP vs exhaustive {worst_bf:.1e}, seminorm lemmas {}", if lemmas_ok { "hold" } else { "violated" }),
    ))
}

/// Green–Kubo against replica block sums for the induced observables, the
/// doubling-map cosine and a coboundary.
pub fn oracle_suite(b: &Budgets) -> Result<(Verdict, String)> {
    let s = b.model.suspension(0.0)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for obs in [InducedObservable::coordinate_x(), InducedObservable::coordinate_z(), InducedObservable::cos_z()] {
        let psi = s.induced_map_observable(&obs);
        let c = map_oracle_check(&s.map, &psi, b.map_samples, b.mc_block, b.mc_reps, 1000, b.seed)?;
        ok &= c.verdict == Verdict::Pass;
        parts.push(format!("{}: {:.4e} vs {:.4e} ({:.2} se)", obs.name, c.green_kubo.value, c.monte_carlo.value, c.z_score));
    }
    let doubling = SkewProduct::doubling();
    let cos = PiecewiseObservable::new("cos(2πx)", 1.0, |x: f64, _| (2.0 * std::f64::consts::PI * x).cos());
    let c = map_oracle_check(&doubling, &cos, b.map_samples, b.mc_block, b.mc_reps, 1000, b.seed)?;
    let half = (c.green_kubo.value - 0.5).abs() <= 3.0 * c.green_kubo.stderr;
    ok &= half && c.verdict == Verdict::Pass;
    parts.push(format!("doubling cos(2πx): {:.4} ± {:.4}", c.green_kubo.value, c.green_kubo.stderr));

    let t = *s.map.family().expect("geometric base");
    let cob = PiecewiseObservable::new("x−T(x)", 1.0, move |x: f64, _| x - t.eval_unchecked(x));
    let c = map_oracle_check(&s.map, &cob, b.map_samples, b.mc_block, b.mc_reps, 1000, b.seed)?;
    // Block sums telescope to x₀ − xₙ ∈ [−1, 1], so the replica variance is at most 1/n.
    let bound = 1.0 / b.mc_block as f64;
    let zero = c.green_kubo.value.abs() <= 3.0 * c.green_kubo.stderr && c.monte_carlo.value <= bound * (1.0 + 1e-9);
    ok &= zero;
    parts.push(format!(
        "coboundary: {:.2e} ± {:.2e}, replicas {:.2e} ≤ {bound:.0e}",
        c.green_kubo.value, c.green_kubo.stderr, c.monte_carlo.value
    ));
    Ok((Verdict::from_bool(ok), parts.join("; ")))
}

/// Flow Monte-Carlo against the map-side relation, then the constant-roof case.
pub fn flow_relation(b: &Budgets) -> Result<(Verdict, String)> {
    let obs = InducedObservable::coordinate_x();
    let r = relation_check(&obs, &b.relation)?;
    let c = relation_check(&obs, &RelationConfig { constant_roof: Some(1.5), ..b.relation.clone() })?;
    let ok = r.verdict == Verdict::Pass && c.verdict == Verdict::Pass && c.ratio_error < 1e-15;
    Ok((
        Verdict::from_bool(ok),
        format!(
            "flow {:.4} ± {:.4} vs map {:.4} ± {:.4} ({:.2} se); constant roof {:.2} se, ratio error {:.1e}",
            r.flow_side.value, r.flow_side.stderr, r.map_side.value, r.map_side.stderr, r.z_score, c.z_score, c.ratio_error
        ),
    ))
}

pub fn continuity(b: &Budgets) -> Result<(Verdict, String)> {
    let r = continuity_sweep(&b.sweep, Tier::Geometric)?;
    let gaps: Vec<String> = r.cells.iter().map(|c| format!("{:.3}±{:.3}", c.gap_to_zero, c.gap_se)).collect();
    let dist: Vec<String> = r.cells.iter().map(|c| format!("{:.2e}", c.induced_distance.unwrap_or(f64::NAN))).collect();
    Ok((
        r.verdict,
        format!(
            "gaps [{}], monotone {}, final {}, ∫|Ψ_ε−Ψ₀| [{}]",
            gaps.join(", "),
            r.monotone,
            r.final_gap_ok,
            dist.join(", ")
        ),
    ))
}

pub fn modulus(b: &Budgets) -> Result<(Verdict, String)> {
    let r = modulus_experiment(&b.modulus)?;
    let parts: Vec<String> = r
        .fits
        .iter()
        .map(|f| {
            let ratios: Vec<String> = f.points.iter().map(|p| format!("{:.2e}", p.ratio)).collect();
            let resolved = f.points.iter().filter(|p| p.diff > 2.0 * p.diff_se).count();
            format!(
                "ε = {}: ratios [{}], C = {:.2e}, {resolved}/{} resolved{}",
                f.eps,
                ratios.join(", "),
                f.constant,
                f.points.len(),
                if f.widened { " after widening" } else { "" }
            )
        })
        .collect();
    Ok((r.verdict, parts.join("; ")))
}

pub fn truncation(b: &Budgets) -> Result<(Verdict, String)> {
    let s = b.model.suspension(0.0)?;
    let ens = sample_srb(&s.map, b.truncation_samples, 1000, b.seed)?;
    let family = s.map.family().expect("geometric base");
    let h = invariant_density(&build_ulam(family, Partition::of_map(family, 2048)?)?, POWER_TOL, POWER_MAX_ITER)?;
    let ns: Vec<f64> = (3..=10).map(f64::from).collect();
    let curve = truncation_curve(&s, &InducedObservable::coordinate_x(), &ens, &h, &ns)?;
    Ok(match curve.fit {
        Some(fit) => (
            Verdict::from_bool(fit.slope <= -0.1 && fit.r_squared >= 0.9 && curve.points.len() == ns.len()),
            format!("slope {:.3} (λ₁ = {:.3}), R² = {:.5}", fit.slope, s.flow.lambda1, fit.r_squared),
        ),
        None => (Verdict::Fail, "no positive truncation errors to fit".into()),
    })
}

/// Eigenvalues at the origin, section refinement, the return-time slope and
/// the two-branch quotient map.
pub fn ode_tier(b: &Budgets) -> Result<(Verdict, String)> {
    let p = OdeParams::new(0.0)?;
    let (l1, l2, l3) = singularity_eigenvalues(&p)?;
    let closed = ((-11.0 + 1201f64.sqrt()) / 2.0, (-11.0 - 1201f64.sqrt()) / 2.0, -8.0 / 3.0);
    let eig_err = (l1 - closed.0).abs().max((l2 - closed.1).abs()).max((l3 - closed.2).abs());
    let crossings = section_returns(&p, 27.0, b.crossings, b.seed, b.ode_tol)?;
    let section_err = crossings.iter().map(|c| (c.state[2] - 27.0).abs()).fold(0.0, f64::max);
    let transversal = crossings.iter().all(|c| c.zdot.abs() > 1e-3);
    let q = empirical_quotient(&crossings, b.quotient_bins)?;
    let fit = return_time_regression(&q, &crossings, 0.01, Some(-l3 / l1))?;
    let slope_err = (fit.slope * l1 - 1.0).abs();
    let ok = eig_err < 1e-9 && section_err < 1e-10 && transversal && slope_err <= 0.1 && q.lorenz_like();
    Ok((
        Verdict::from_bool(ok),
        format!(
            "eigenvalue error {eig_err:.1e}, max |z − 27| {section_err:.1e}, slope {:.5} vs 1/λ₁ = {:.5} ({:.1}%, uncorrected {:.5}), monotonicity violations {:.1}%, T(0⁺) = {:.3}, T(0⁻) = {:.3}",
            fit.slope,
            1.0 / l1,
            100.0 * slope_err,
            fit.naive.slope,
            100.0 * q.violation_fraction,
            q.right_limit,
            q.left_limit
        ),
    ))
}
