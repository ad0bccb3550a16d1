use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::product::SkewProduct;
use crate::error::{Error, Result};
use crate::onedmap::{bv_norm, v1p, RHO0};

pub type ObservableFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A function on `Σ = I × I`, Hölder on each side of the singular line.
#[derive(Clone)]
pub struct PiecewiseObservable {
    pub name: String,
    pub holder_alpha: f64,
    f: Arc<ObservableFn>,
}

impl fmt::Debug for PiecewiseObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PiecewiseObservable")
            .field("name", &self.name)
            .field("holder_alpha", &self.holder_alpha)
            .finish()
    }
}

impl PiecewiseObservable {
    pub fn new<F>(name: impl Into<String>, holder_alpha: f64, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.into(), holder_alpha, f: Arc::new(f) }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), 1.0, move |_, _| c)
    }

    /// `Ψ ∘ Fʲ`.
    pub fn compose(&self, map: SkewProduct, j: usize) -> Self {
        let inner = self.f.clone();
        Self::new(format!("{}∘F^{j}", self.name), self.holder_alpha, move |x0, y0| {
            let (mut a, mut b) = (x0, y0);
            for _ in 0..j {
                let x = x_or_nudge(a);
                b = map.fiber(x, b);
                a = map.base_eval(x);
            }
            inner(a, b)
        })
    }

    pub fn series(&self, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        xs.iter().zip(ys).map(|(&x, &y)| self.eval(x, y)).collect()
    }
}

// Grid evaluation never lands on the singular line; keep composition total anyway.
fn x_or_nudge(x: f64) -> f64 {
    if x == 0.0 {
        f64::MIN_POSITIVE
    } else {
        x
    }
}

/// Evaluation grid for seminorm estimates (cell midpoints in both directions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeminormGrid {
    pub nx: usize,
    pub ny: usize,
    pub k_min: u32,
    pub k_max: u32,
}

impl Default for SeminormGrid {
    fn default() -> Self {
        Self { nx: 2048, ny: 64, k_min: 3, k_max: 10 }
    }
}

/// Seminorms of one observable plus the two lemma checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeminormRecord {
    pub p: f64,
    pub sup_norm: f64,
    /// Fiber-direction Hölder seminorm `H_{α,s}`.
    pub holder_s: f64,
    /// Transverse p-variation `V̂_p`.
    pub vhat_p: f64,
    /// `‖ΠΨ‖_{1,1/p}`.
    pub pi_norm: f64,
    /// `V_{1,1/p}(ΠΨ)`.
    pub pi_v1p: f64,
    pub d_psi: f64,
    /// `(j, V̂_p(Ψ∘Fʲ), bound)` for the iterate inequality, `j = 1..3`.
    pub iterate_checks: Vec<(usize, f64, f64)>,
    pub projection_ok: bool,
    pub iterates_ok: bool,
    /// The largest Hölder quotient sits at the finest separation.
    pub coarse_grid: bool,
}

struct Sampled {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
}

impl Sampled {
    fn new(psi: &PiecewiseObservable, map: &SkewProduct, grid: &SeminormGrid) -> Self {
        let (lo, hi) = map.x_domain();
        let xs: Vec<f64> = (0..grid.nx).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / grid.nx as f64).collect();
        let ys: Vec<f64> = (0..grid.ny).map(|j| -0.5 + (j as f64 + 0.5) / grid.ny as f64).collect();
        let mut values = Vec::with_capacity(xs.len() * ys.len());
        for &x in &xs {
            for &y in &ys {
                values.push(psi.eval(x, y));
            }
        }
        Self { xs, ys, values }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ys.len() + j]
    }

    fn sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `max_y |Ψ(x_a, y) − Ψ(x_b, y)|`.
    fn transverse(&self, a: usize, b: usize) -> f64 {
        let ny = self.ys.len();
        let (ra, rb) = (&self.values[a * ny..(a + 1) * ny], &self.values[b * ny..(b + 1) * ny]);
        ra.iter().zip(rb).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
    }

    /// `V̂_p` over chains of grid points, each increment at its own worst `y`.
    fn vhat(&self, p: f64) -> f64 {
        let m = self.xs.len();
        if m < 2 {
            return 0.0;
        }
        if p == 1.0 {
            // The per-increment maximum obeys the triangle inequality, so
            // consecutive points are optimal.
            return (1..m).map(|i| self.transverse(i - 1, i)).sum();
        }
        let mut best = vec![0.0f64; m];
        for b in 1..m {
            let mut v = 0.0f64;
            for a in 0..b {
                v = v.max(best[a] + self.transverse(a, b).powf(p));
            }
            best[b] = v;
        }
        best[m - 1].powf(1.0 / p)
    }

    fn projection(&self) -> Vec<f64> {
        let ny = self.ys.len();
        (0..self.xs.len())
            .map(|i| self.values[i * ny..(i + 1) * ny].iter().sum::<f64>() / ny as f64)
            .collect()
    }
}

/// `H_{α,s}` from dyadic fiber separations; also returns whether the
/// maximum is attained at the finest scale by a clear margin.
fn fiber_holder(psi: &PiecewiseObservable, s: &Sampled, alpha: f64, grid: &SeminormGrid) -> (f64, bool) {
    let mut per_k = Vec::new();
    for k in grid.k_min..=grid.k_max {
        let h = (-(k as f64)).exp2();
        let mut q = 0.0f64;
        for (i, &x) in s.xs.iter().enumerate() {
            for (j, &y) in s.ys.iter().enumerate() {
                if y + h <= 0.5 {
                    q = q.max((psi.eval(x, y + h) - s.at(i, j)).abs());
                }
            }
        }
        per_k.push(q / h.powf(alpha));
    }
    let best = per_k.iter().copied().fold(0.0, f64::max);
    let n = per_k.len();
    let coarse = n >= 2 && per_k[n - 1] > 1.1 * per_k[n - 2] && per_k[n - 1] >= best;
    (best, coarse)
}

pub fn measure_seminorms(psi: &PiecewiseObservable, map: &SkewProduct, grid: &SeminormGrid) -> Result<SeminormRecord> {
    let alpha = psi.holder_alpha;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("Hölder exponent {alpha} outside (0, 1]")));
    }
    if grid.nx < 2 || grid.ny < 1 || grid.k_min > grid.k_max {
        return Err(Error::Domain("degenerate seminorm grid".into()));
    }
    let p = 1.0 / alpha;
    let (lo, hi) = map.x_domain();
    let s = Sampled::new(psi, map, grid);
    let sup_norm = s.sup();
    let (holder_s, coarse_grid) = fiber_holder(psi, &s, alpha, grid);
    let vhat_p = s.vhat(p);
    let proj = s.projection();
    let pi_v1p = v1p(&proj, lo, hi, p, RHO0)?;
    let pi_norm = bv_norm(&proj, lo, hi, p, RHO0)?;
    let norm_s = holder_s + sup_norm;
    let m_const = 4.0 * (1.0 + map.fiber_c1_norm().powf(alpha));
    let mut iterate_checks = Vec::new();
    for j in 1..=3usize {
        let sj = Sampled::new(&psi.compose(*map, j), map, grid);
        let lhs = sj.vhat(p);
        let bound = ((1u64 << j) - 1) as f64 * m_const * norm_s + (1u64 << j) as f64 * vhat_p;
        iterate_checks.push((j, lhs, bound));
    }
    Ok(SeminormRecord {
        p,
        sup_norm,
        holder_s,
        vhat_p,
        pi_norm,
        pi_v1p,
        d_psi: pi_norm + vhat_p + norm_s,
        projection_ok: pi_v1p <= (1.0 / p).exp2() * vhat_p + 1e-9,
        iterates_ok: iterate_checks.iter().all(|&(_, l, b)| l <= b + 1e-9),
        iterate_checks,
        coarse_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small() -> SeminormGrid {
        SeminormGrid { nx: 512, ny: 32, k_min: 3, k_max: 10 }
    }

    #[test]
    fn fiber_coordinate_has_no_transverse_variation() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let r = measure_seminorms(&PiecewiseObservable::new("y", 1.0, |_, y| y), &f, &small()).unwrap();
        assert_eq!(r.vhat_p, 0.0);
        assert!((r.holder_s - 1.0).abs() < 1e-9);
        assert!(r.projection_ok && r.iterates_ok);
    }

    #[test]
    fn sign_has_single_jump() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let psi = PiecewiseObservable::new("sign", 1.0, |x: f64, _| x.signum());
        let r = measure_seminorms(&psi, &f, &small()).unwrap();
        assert!((r.vhat_p - 2.0).abs() < 1e-12);
        assert_eq!(r.holder_s, 0.0);
        assert!(!r.coarse_grid);
    }

    #[test]
    fn lemma_inequalities_for_test_observables() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let grid = SeminormGrid::default();
        let observables = [
            PiecewiseObservable::new("cos(2πx)y", 1.0, |x: f64, y| (2.0 * PI * x).cos() * y),
            PiecewiseObservable::new("cos(2πx)+y/2", 1.0, |x: f64, y| (2.0 * PI * x).cos() + y / 2.0),
            PiecewiseObservable::new("sqrt|y|", 0.5, |x: f64, y: f64| y.abs().sqrt() + x),
        ];
        for psi in &observables {
            let r = measure_seminorms(psi, &f, &SeminormGrid { nx: 256, ..grid }).unwrap();
            assert!(r.projection_ok, "{}: {r:?}", psi.name);
            assert!(r.iterates_ok, "{}: {r:?}", psi.name);
            assert!(r.d_psi.is_finite());
        }
    }

    #[test]
    fn p_greater_than_one_uses_subchains() {
        // A monotone ramp: V̂_2 is the total rise (one increment) when p > 1.
        let f = SkewProduct::geometric(0.0).unwrap();
        let g = SeminormGrid { nx: 64, ny: 4, k_min: 3, k_max: 4 };
        let s = Sampled::new(&PiecewiseObservable::new("x", 0.5, |x, _| x), &f, &g);
        assert!((s.vhat(2.0) - (s.xs[63] - s.xs[0])).abs() < 1e-12);
        assert!((s.vhat(1.0) - (s.xs[63] - s.xs[0])).abs() < 1e-12);
    }

    #[test]
    fn invalid_exponent_rejected() {
        let f = SkewProduct::geometric(0.0).unwrap();
        assert!(measure_seminorms(&PiecewiseObservable::new("bad", 0.0, |_, _| 0.0), &f, &small()).is_err());
    }
}
