//! p-variation and oscillation norms for functions sampled on a uniform grid.
//!
//! Sampled functions are read as piecewise constant on `values.len()` equal
//! cells of `[lo, hi]`.

use crate::error::{Error, Result};

/// Cap `ρ₀` of the oscillation radius.
pub const RHO0: f64 = 0.1;
/// Number of radii in the geometric grid used for `V_{1,1/p}`.
pub const RHO_GRID_LEN: usize = 40;

/// `V_p` over all subpartitions of the grid.
///
/// `p = 1` is the total variation. For `p > 1` the supremum over chains
/// from the first to the last sample is found by dynamic programming, which
/// is exact over the grid.
pub fn vp_norm(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("p-variation of an empty grid".into()));
    }
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("p = {p} must be at least 1")));
    }
    if p == 1.0 {
        return Ok(values.windows(2).map(|w| (w[1] - w[0]).abs()).sum());
    }
    let m = values.len();
    let mut best = vec![0.0f64; m];
    for j in 1..m {
        let fj = values[j];
        best[j] = (0..j)
            .map(|i| best[i] + (fj - values[i]).abs().powf(p))
            .fold(0.0, f64::max);
    }
    Ok(best[m - 1].powf(1.0 / p))
}

/// Sparse table for O(1) range minimum and maximum queries.
struct RangeTable {
    min: Vec<Vec<f64>>,
    max: Vec<Vec<f64>>,
}

impl RangeTable {
    fn new(values: &[f64]) -> Self {
        let mut min = vec![values.to_vec()];
        let mut max = vec![values.to_vec()];
        let mut width = 1;
        while 2 * width <= values.len() {
            let (pmin, pmax) = (min.last().unwrap(), max.last().unwrap());
            let len = values.len() - 2 * width + 1;
            let nmin = (0..len).map(|i| pmin[i].min(pmin[i + width])).collect();
            let nmax = (0..len).map(|i| pmax[i].max(pmax[i + width])).collect();
            min.push(nmin);
            max.push(nmax);
            width *= 2;
        }
        Self { min, max }
    }

    fn range(&self, lo: usize, hi: usize) -> f64 {
        let len = hi - lo + 1;
        let level = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let w = 1 << level;
        let mx = self.max[level][lo].max(self.max[level][hi + 1 - w]);
        let mn = self.min[level][lo].min(self.min[level][hi + 1 - w]);
        mx - mn
    }
}

/// `osc₁(f, ρ) = ∫ osc(f, ρ, x) dx` computed exactly for the piecewise
/// constant reading of `values`.
pub fn osc1(values: &[f64], lo: f64, hi: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("radius {rho} must be positive")));
    }
    if values.is_empty() || !(hi > lo) {
        return Err(Error::Domain("empty grid".into()));
    }
    let m = values.len();
    let w = (hi - lo) / m as f64;
    let table = RangeTable::new(values);
    let mut breaks = Vec::with_capacity(2 * m + 4);
    breaks.push(lo);
    breaks.push(hi);
    for k in 0..=m {
        let e = lo + (hi - lo) * k as f64 / m as f64;
        for b in [e - rho, e + rho] {
            if b > lo && b < hi {
                breaks.push(b);
            }
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    let mut total = 0.0;
    for seg in breaks.windows(2) {
        let len = seg[1] - seg[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (seg[0] + seg[1]);
        let k_lo = ((mid - rho - lo) / w).floor().max(0.0) as usize;
        let k_hi = (((mid + rho - lo) / w).ceil() as usize).saturating_sub(1).min(m - 1);
        if k_hi > k_lo {
            total += table.range(k_lo.min(m - 1), k_hi) * len;
        }
    }
    Ok(total)
}

/// Geometric grid of radii in `[min_rho, rho0]`.
pub fn rho_grid(min_rho: f64, rho0: f64, len: usize) -> Vec<f64> {
    if len == 1 || min_rho >= rho0 {
        return vec![rho0];
    }
    let ratio = (rho0 / min_rho).ln() / (len - 1) as f64;
    (0..len).map(|i| min_rho * (ratio * i as f64).exp()).collect()
}

/// `V_{1,1/p}(f) ≈ max_ρ osc₁(f, ρ) / ρ^{1/p}` over the radius grid.
pub fn v1p(values: &[f64], lo: f64, hi: f64, p: f64, rho0: f64) -> Result<f64> {
    let w = (hi - lo) / values.len() as f64;
    let mut best = 0.0f64;
    for rho in rho_grid(w, rho0, RHO_GRID_LEN) {
        best = best.max(osc1(values, lo, hi, rho)? / rho.powf(1.0 / p));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscNorm {
    pub osc1: f64,
    pub v1p: f64,
}

pub fn osc_norm(values: &[f64], lo: f64, hi: f64, rho: f64, rho0: f64, p: f64) -> Result<OscNorm> {
    if !(rho > 0.0 && rho <= rho0) {
        return Err(Error::Domain(format!("radius {rho} outside (0, {rho0}]")));
    }
    Ok(OscNorm { osc1: osc1(values, lo, hi, rho)?, v1p: v1p(values, lo, hi, p, rho0)? })
}

/// `‖f‖_{1,1/p} = V_{1,1/p}(f) + ‖f‖₁`.
pub fn bv_norm(values: &[f64], lo: f64, hi: f64, p: f64, rho0: f64) -> Result<f64> {
    let w = (hi - lo) / values.len() as f64;
    let l1: f64 = values.iter().map(|v| v.abs() * w).sum();
    Ok(v1p(values, lo, hi, p, rho0)? + l1)
}
