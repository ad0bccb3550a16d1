use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector3};

use super::section::SectionCrossing;
use crate::error::{Error, Result};
use crate::output::Csv;
use crate::stats::{self, LinearFit};

/// Largest tolerated fraction of monotonicity violations between adjacent bins.
pub const MAX_VIOLATIONS: f64 = 0.05;
/// Points nearest the discontinuity averaged for the one-sided limits.
const LIMIT_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotientBin {
    pub center: f64,
    pub image: f64,
    pub count: usize,
}

/// Empirical one-dimensional return map. The coordinate `u` runs along the
/// principal axis of the symmetry-folded crossing cloud, is unfolded by the
/// side of each crossing and has the discontinuity at `u = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientMap {
    /// Mean and principal axis of the crossing cloud folded onto `x ≥ 0`.
    pub center: [f64; 2],
    pub axis: [f64; 2],
    /// Position of the discontinuity along the folded axis.
    pub s0: f64,
    pub coords: Vec<f64>,
    pub bins: Vec<QuotientBin>,
    pub bin_width: f64,
    /// Histogram of `u` normalised to integrate to one.
    pub density: Vec<f64>,
    pub violation_fraction: f64,
    /// Fraction of crossings whose wing disagrees with their side of `u = 0`.
    pub misclassified: f64,
    /// `T(0⁺)` and `T(0⁻)`.
    pub right_limit: f64,
    pub left_limit: f64,
}

impl QuotientMap {
    pub fn csv(&self) -> Csv {
        let mut csv = Csv::new(&["bin_center", "image_estimate", "count"]);
        for b in &self.bins {
            csv.row(&[b.center.into(), b.image.into(), b.count.into()]);
        }
        csv
    }

    pub fn histogram_integral(&self) -> f64 {
        stats::sum(self.density.iter().map(|d| d * self.bin_width))
    }

    pub fn lorenz_like(&self) -> bool {
        self.right_limit < 0.0 && 0.0 < self.left_limit
    }
}

/// Split of sorted labels minimising disagreements with "left is −, right is +".
fn best_split(sorted: &[(f64, f64)]) -> (usize, usize) {
    let total_minus = sorted.iter().filter(|p| p.1 < 0.0).count();
    let (mut best, mut best_k) = (usize::MAX, 0);
    let (mut plus_left, mut minus_left) = (0usize, 0usize);
    for k in 0..=sorted.len() {
        let errors = plus_left + (total_minus - minus_left);
        if errors < best {
            best = errors;
            best_k = k;
        }
        if k < sorted.len() {
            if sorted[k].1 > 0.0 {
                plus_left += 1;
            } else {
                minus_left += 1;
            }
        }
    }
    (best_k, best)
}

pub fn empirical_quotient(crossings: &[SectionCrossing], n_bins: usize) -> Result<QuotientMap> {
    if crossings.len() < 100 || n_bins < 4 {
        return Err(Error::Domain("quotient map needs at least 100 crossings and 4 bins".into()));
    }
    let n = crossings.len() as f64;
    // Fold by the symmetry (x, y, z) -> (-x, -y, z) so both wings share one axis.
    let side = |c: &SectionCrossing| if c.state[0] < 0.0 { -1.0 } else { 1.0 };
    let folded: Vec<[f64; 2]> = crossings.iter().map(|c| [side(c) * c.state[0], side(c) * c.state[1]]).collect();
    let mx = stats::sum(folded.iter().map(|p| p[0])) / n;
    let my = stats::sum(folded.iter().map(|p| p[1])) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &folded {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let eig = SymmetricEigen::new(Matrix2::new(sxx, sxy, sxy, syy));
    let lead = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let mut axis = [eig.eigenvectors[(0, lead)], eig.eigenvectors[(1, lead)]];
    let project = |p: &[f64; 2], a: &[f64; 2]| (p[0] - mx) * a[0] + (p[1] - my) * a[1];

    // Label +1 when the orbit goes back to the wing it came from.
    let mut labelled: Vec<(f64, f64)> =
        folded.iter().zip(crossings).map(|(p, c)| (project(p, &axis), c.wing * side(c))).collect();
    labelled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (k_fwd, err_fwd) = best_split(&labelled);
    let flipped: Vec<(f64, f64)> = labelled.iter().rev().map(|&(s, w)| (-s, w)).collect();
    let (k_rev, err_rev) = best_split(&flipped);
    let (sorted, k) = if err_rev < err_fwd {
        axis = [-axis[0], -axis[1]];
        (flipped, k_rev)
    } else {
        (labelled, k_fwd)
    };
    let s0 = match (k.checked_sub(1).map(|i| sorted[i].0), sorted.get(k).map(|p| p.0)) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        _ => return Err(Error::Projection("crossings do not split into two sides".into())),
    };
    // Unfold: the sign of u predicts the next wing.
    let coords: Vec<f64> =
        folded.iter().zip(crossings).map(|(p, c)| side(c) * (project(p, &axis) - s0)).collect();
    let errors = coords.iter().zip(crossings).filter(|(u, c)| (**u > 0.0) != (c.wing > 0.0)).count();

    let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let bin_of = |u: f64| (((u - lo) / width) as usize).min(n_bins - 1);
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let mut hist = vec![0.0; n_bins];
    for w in coords.windows(2) {
        let b = bin_of(w[0]);
        sums[b] += w[1];
        counts[b] += 1;
    }
    for &u in &coords {
        hist[bin_of(u)] += 1.0;
    }
    let density: Vec<f64> = hist.iter().map(|h| h / (n * width)).collect();
    let bins: Vec<QuotientBin> = (0..n_bins)
        .map(|b| QuotientBin {
            center: lo + (b as f64 + 0.5) * width,
            image: if counts[b] > 0 { sums[b] / counts[b] as f64 } else { f64::NAN },
            count: counts[b],
        })
        .collect();

    // Monotonicity within each branch; the bin holding the discontinuity is skipped.
    let zero_bin = bin_of(0.0);
    let (mut comparisons, mut violations) = (0usize, 0usize);
    for branch in [0..zero_bin, zero_bin + 1..n_bins] {
        let filled: Vec<&QuotientBin> = bins[branch].iter().filter(|b| b.count > 0).collect();
        for w in filled.windows(2) {
            comparisons += 1;
            if w[1].image < w[0].image {
                violations += 1;
            }
        }
    }
    let violation_fraction = if comparisons == 0 { 1.0 } else { violations as f64 / comparisons as f64 };
    if violation_fraction > MAX_VIOLATIONS {
        return Err(Error::Projection(format!(
            "{:.1}% of adjacent bins violate monotonicity",
            100.0 * violation_fraction
        )));
    }

    let limit = |positive: bool| {
        let mut near: Vec<(f64, f64)> = coords
            .windows(2)
            .filter(|w| (w[0] > 0.0) == positive)
            .map(|w| (w[0].abs(), w[1]))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        near.truncate(LIMIT_POINTS);
        stats::mean(&near.iter().map(|p| p.1).collect::<Vec<_>>())
    };
    Ok(QuotientMap {
        center: [mx, my],
        axis,
        s0,
        bins,
        bin_width: width,
        density,
        violation_fraction,
        misclassified: errors as f64 / n,
        right_limit: limit(true),
        left_limit: limit(false),
        coords,
    })
}

/// Regression of the return time on `−log|u|` for crossings with `|u|`
/// below `window` (a fraction of the coordinate range).
///
/// With `kappa` set, the fit is `τ ≈ a + b·(−log d) + c·d^κ`; the extra term
/// absorbs the Hölder part of the return time coming from the weak stable
/// direction (`κ = −λ₃/λ₁`). The stable manifold of the origin cuts the
/// section along a curve, so near `u = 0` the distance to it is
/// `d = |u − δ − β·v|` with `v` the coordinate across the crossing band.
/// Offset and tilt are profiled out by least squares on a fixed set of
/// crossings. `naive` is the plain two-parameter fit in `|u|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnTimeFit {
    pub slope: f64,
    pub intercept: f64,
    pub correction: f64,
    /// Fitted origin shift, in units of the coordinate range.
    pub offset: f64,
    /// Fitted tilt of the stable-manifold trace against the band.
    pub tilt: f64,
    pub r_squared: f64,
    pub naive: LinearFit,
    pub points: usize,
    pub window: f64,
}

const GRID: usize = 40;
const MAX_TILT: f64 = 2.0;
const REFINE_ROUNDS: usize = 6;

/// Least-squares coefficients and residual sum of squares of the three-term
/// model for distances `|u − δ − β·v|`.
fn hoelder_fit(us: &[f64], vs: &[f64], ys: &[f64], kappa: f64, delta: f64, beta: f64) -> Option<(Vector3<f64>, f64)> {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    let mut yy = 0.0;
    for ((u, v), y) in us.iter().zip(vs).zip(ys) {
        let d = (u - delta - beta * v).abs();
        if d == 0.0 {
            return None;
        }
        let row = Vector3::new(1.0, -d.ln(), d.powf(kappa));
        ata += row * row.transpose();
        aty += row * *y;
        yy += y * y;
    }
    let coef = ata.cholesky()?.solve(&aty);
    // ‖Ac − y‖² = yᵀy − 2cᵀAᵀy + cᵀAᵀAc
    let rss = yy - 2.0 * coef.dot(&aty) + coef.dot(&(ata * coef));
    rss.is_finite().then_some((coef, rss.max(0.0)))
}

/// Golden-section minimum of `f` on `[a, b]`.
fn golden(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..40 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

pub fn return_time_regression(
    q: &QuotientMap,
    crossings: &[SectionCrossing],
    window_fraction: f64,
    kappa: Option<f64>,
) -> Result<ReturnTimeFit> {
    let lo = q.coords.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = q.coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let window = window_fraction * range;
    let normal = [-q.axis[1], q.axis[0]];
    let across = |c: &SectionCrossing| {
        let side = if c.state[0] < 0.0 { -1.0 } else { 1.0 };
        side * ((side * c.state[0] - q.center[0]) * normal[0] + (side * c.state[1] - q.center[1]) * normal[1])
    };
    // Normalised coordinates along and across the band.
    let mut us = Vec::new();
    let mut vs = Vec::new();
    let mut ys = Vec::new();
    for (u, w) in q.coords.iter().zip(crossings.windows(2)) {
        if u.abs() < window && *u != 0.0 {
            us.push(u / range);
            vs.push(across(&w[0]) / range);
            ys.push(w[1].time_since_prev);
        }
    }
    let xs: Vec<f64> = us.iter().map(|u| -u.abs().ln()).collect();
    let too_few = || Error::Projection("too few crossings near the discontinuity".into());
    let naive = stats::linear_fit(&xs, &ys).ok_or_else(too_few)?;
    let Some(kappa) = kappa else {
        return Ok(ReturnTimeFit {
            slope: naive.slope,
            intercept: naive.intercept,
            correction: 0.0,
            offset: 0.0,
            tilt: 0.0,
            r_squared: naive.r_squared,
            naive,
            points: xs.len(),
            window,
        });
    };
    if xs.len() < 10 {
        return Err(too_few());
    }
    let rss = |d: f64, b: f64| hoelder_fit(&us, &vs, &ys, kappa, d, b).map_or(f64::INFINITY, |(_, r)| r);
    // Coarse grid, then alternating golden sections on shrinking brackets.
    // Tilts that move points by more than the window are not resolvable.
    let half = 0.5 * window_fraction;
    let spread = stats::variance(&vs).sqrt();
    let max_tilt = if spread > 0.0 { MAX_TILT.min(window_fraction / spread) } else { 0.0 };
    let (mut d_step, mut b_step) = (2.0 * half / GRID as f64, 2.0 * max_tilt / GRID as f64);
    let mut best = (0.0, 0.0, rss(0.0, 0.0));
    for i in 0..=GRID {
        for j in 0..=GRID {
            let (d, b) = (-half + i as f64 * d_step, -max_tilt + j as f64 * b_step);
            let r = rss(d, b);
            if r < best.2 {
                best = (d, b, r);
            }
        }
    }
    let (mut delta, mut beta) = (best.0, best.1);
    for _ in 0..REFINE_ROUNDS {
        delta = golden(delta - d_step, delta + d_step, |d| rss(d, beta));
        beta = golden(beta - b_step, beta + b_step, |b| rss(delta, b));
        d_step *= 0.5;
        b_step *= 0.5;
    }
    if rss(delta, beta) > best.2 {
        (delta, beta) = (best.0, best.1);
    }
    let (coef, resid) =
        hoelder_fit(&us, &vs, &ys, kappa, delta, beta).ok_or_else(|| Error::Projection("return-time regression failed".into()))?;
    let my = stats::mean(&ys);
    let total = stats::sum(ys.iter().map(|y| (y - my) * (y - my)));
    Ok(ReturnTimeFit {
        slope: coef[1],
        intercept: coef[0],
        correction: coef[2],
        offset: delta,
        tilt: beta,
        r_squared: if total > 0.0 { 1.0 - resid / total } else { 1.0 },
        naive,
        points: xs.len(),
        window,
    })
}

/// Exponential rate of `P(τ > N)` over the levels where at least `min_count`
/// return times exceed `N`.
pub fn return_time_tail(crossings: &[SectionCrossing], min_count: usize) -> Option<LinearFit> {
    let mut taus: Vec<f64> = crossings.iter().map(|c| c.time_since_prev).collect();
    taus.sort_by(|a, b| a.total_cmp(b));
    let n = taus.len() as f64;
    let median = taus[taus.len() / 2];
    let top = taus[taus.len().saturating_sub(min_count)];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let levels = 20;
    for i in 0..levels {
        let level = median + (top - median) * i as f64 / levels as f64;
        let count = taus.len() - taus.partition_point(|t| *t <= level);
        if count >= min_count {
            xs.push(level);
            ys.push((count as f64 / n).ln());
        }
    }
    stats::linear_fit(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_finds_clean_boundary() {
        let pts = vec![(-2.0, -1.0), (-1.0, -1.0), (0.5, 1.0), (3.0, 1.0)];
        assert_eq!(best_split(&pts), (2, 0));
        let noisy = vec![(-2.0, -1.0), (-1.0, 1.0), (0.5, -1.0), (3.0, 1.0)];
        assert_eq!(best_split(&noisy).1, 1);
    }

    #[test]
    fn rejects_tiny_input() {
        assert!(empirical_quotient(&[], 16).is_err());
    }
}

#[cfg(test)]
mod lorenz_tests {
    use super::*;
    use crate::lorenzode::{section_returns, singularity_eigenvalues, OdeParams};

    #[test]
    fn classical_quotient_and_return_times() {
        let p = OdeParams::new(0.0).unwrap();
        let (l1, _, l3) = singularity_eigenvalues(&p).unwrap();
        let c = section_returns(&p, 27.0, 20_000, 1, 1e-9).unwrap();
        let q = empirical_quotient(&c, 128).unwrap();
        assert!(q.violation_fraction <= MAX_VIOLATIONS);
        assert!(q.lorenz_like(), "{} {}", q.right_limit, q.left_limit);
        assert!((q.histogram_integral() - 1.0).abs() < 1e-12);
        assert!(q.misclassified < 0.01);
        assert_eq!(q.csv().as_str().lines().count(), 129);

        let fit = return_time_regression(&q, &c, 0.01, Some(-l3 / l1)).unwrap();
        assert!((fit.slope * l1 - 1.0).abs() < 0.1, "slope {} vs {}", fit.slope, 1.0 / l1);
        let tail = return_time_tail(&c, 50).unwrap();
        assert!(-tail.slope > 0.5 * l1 && -tail.slope < 2.0 * l1, "{}", tail.slope);
        assert!(c.iter().all(|x| x.time_since_prev > 0.3));
    }
}
