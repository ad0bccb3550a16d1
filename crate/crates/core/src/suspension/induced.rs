use std::fmt;
use std::sync::Arc;

use super::roof::{LinearizedLocalFlow, RoofFunction, RoofKind};
use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng;
use serde::Serialize;

use crate::onedmap::{MapFamily, BASE_GAMMA};
use crate::skewmap::{Base, PiecewiseObservable, SkewProduct, FIBER_OFFSET, FIBER_RHO};
use crate::stats;

/// Absolute tolerance for each segment integral.
pub const INDUCE_TOL: f64 = 1e-9;

pub type FlowFn = dyn Fn([f64; 3]) -> f64 + Send + Sync;

/// A Hölder observable `ψ` on ℝ³. Additive constants are carried separately
/// so that the centred form `ψ̃ = ψ − ψ(0)` does not depend on them at all.
#[derive(Clone)]
pub struct InducedObservable {
    pub name: String,
    /// Hölder exponent `β` and constant `H_β` on the region visited by the flow.
    pub beta: f64,
    pub holder_const: f64,
    pub offset: f64,
    psi: Arc<FlowFn>,
    origin: f64,
}

impl fmt::Debug for InducedObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InducedObservable")
            .field("name", &self.name)
            .field("beta", &self.beta)
            .field("holder_const", &self.holder_const)
            .field("offset", &self.offset)
            .finish()
    }
}

impl InducedObservable {
    pub fn new<F>(name: impl Into<String>, beta: f64, holder_const: f64, psi: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Send + Sync + 'static,
    {
        let origin = psi([0.0; 3]);
        Self { name: name.into(), beta, holder_const, offset: 0.0, psi: Arc::new(psi), origin }
    }

    pub fn coordinate_x() -> Self {
        Self::new("x", 1.0, 1.0, |p| p[0])
    }

    pub fn coordinate_z() -> Self {
        Self::new("z", 1.0, 1.0, |p| p[2])
    }

    pub fn cos_z() -> Self {
        Self::new("cos(z)", 1.0, 1.0, |p| p[2].cos())
    }

    /// `x + δ cos z`.
    pub fn x_plus_cos_z(delta: f64) -> Self {
        Self::new(format!("x+{delta}cos(z)"), 1.0, 1.0 + delta.abs(), move |p| p[0] + delta * p[2].cos())
    }

    pub fn constant(c: f64) -> Self {
        Self::new("const", 1.0, 0.0, |_| 0.0).shifted(c)
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { offset: self.offset + c, ..self.clone() }
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        (self.psi)(p) + self.offset
    }

    #[inline]
    pub fn centred(&self, p: [f64; 3]) -> f64 {
        (self.psi)(p) - self.origin
    }

    /// Value at the singularity (the equilibrium at the origin).
    pub fn at_singularity(&self) -> f64 {
        self.origin + self.offset
    }
}

/// Parameters of the geometric model family shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometricModel {
    /// Base exponent at `ε = 0`; the map uses `γ₀ + ε`.
    pub gamma0: f64,
    pub fiber_rho: f64,
    pub fiber_offset: f64,
    /// Bounded part of the return time.
    pub tau2: f64,
}

impl Default for GeometricModel {
    fn default() -> Self {
        Self { gamma0: BASE_GAMMA, fiber_rho: FIBER_RHO, fiber_offset: FIBER_OFFSET, tau2: 1.0 }
    }
}

impl GeometricModel {
    pub fn skew_product(&self, eps: f64) -> Result<SkewProduct> {
        SkewProduct::new(Base::Lorenz(MapFamily::geometric(self.gamma0, eps)?), self.fiber_rho, self.fiber_offset)
    }

    /// The suspension at `ε`, with Lorenz eigenvalues at `ρ = 28 + ε`.
    pub fn suspension(&self, eps: f64) -> Result<Suspension> {
        let flow = LinearizedLocalFlow::lorenz(eps)?;
        Suspension::new(self.skew_product(eps)?, flow, RoofFunction::log(flow.lambda1, self.tau2)?)
    }
}

/// The suspension over the skew product: local linear passage near the
/// singularity, then a fixed cubic arc of duration `τ₂` back to the section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Suspension {
    pub map: SkewProduct,
    pub flow: LinearizedLocalFlow,
    pub roof: RoofFunction,
}

impl Suspension {
    pub fn new(map: SkewProduct, flow: LinearizedLocalFlow, roof: RoofFunction) -> Result<Self> {
        if map.family().is_none() {
            return Err(Error::Domain("suspensions need a Lorenz-like base".into()));
        }
        if let RoofKind::Log { lambda1, .. } = roof.kind {
            if lambda1 != flow.lambda1 {
                return Err(Error::Domain("roof and local flow disagree on λ₁".into()));
            }
        }
        Ok(Self { map, flow, roof })
    }

    /// Default geometric model at `ε`: Lorenz eigenvalues at `ρ = 28 + ε`, `τ₂ ≡ 1`.
    pub fn geometric(eps: f64) -> Result<Self> {
        GeometricModel::default().suspension(eps)
    }

    pub fn with_roof(self, roof: RoofFunction) -> Self {
        Self { roof, ..self }
    }

    #[inline]
    fn local_point(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        let f = &self.flow;
        [x * (f.lambda1 * t).exp(), y * (f.lambda2 * t).exp(), (f.lambda3 * t).exp()]
    }

    /// Control polygon of the return arc from the box exit to `F(ξ)`.
    fn arc(&self, x: f64, y: f64) -> [[f64; 3]; 4] {
        let side = self.map.side(x);
        let (tx, gy) = (self.map.base_eval(x), self.map.fiber(x, y));
        let start = match self.roof.kind {
            RoofKind::Log { .. } => {
                let t = self.roof.local_time(x);
                self.local_point(x, y, t)
            }
            RoofKind::Constant(_) => [x, y, 1.0],
        };
        let end = [tx, gy, 1.0];
        let d = [side, 0.0, 1.0];
        [start, [start[0] + d[0], start[1], start[2] + d[2]], [end[0] + d[0], end[1], end[2] + d[2]], end]
    }

    /// `∫_{t0}^{t1} ψ̃(X(ξ, t)) dt` for `0 ≤ t0 ≤ t1`, clipped to one return.
    pub fn induce_between(&self, obs: &InducedObservable, xi: (f64, f64), t0: f64, t1: f64) -> Result<f64> {
        let (x, y) = xi;
        let local = self.roof.local_time(x);
        let tau2 = self.roof.tau2();
        if x == 0.0 && matches!(self.roof.kind, RoofKind::Log { .. }) {
            return Err(Error::InfiniteRoof);
        }
        let t1 = t1.min(local + tau2);
        if t1 <= t0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        if t0 < local {
            let b = t1.min(local);
            total += quadrature::integrate(|t| obs.centred(self.local_point(x, y, t)), t0, b, INDUCE_TOL)?.value;
        }
        if t1 > local {
            let s0 = ((t0 - local) / tau2).max(0.0);
            let s1 = ((t1 - local) / tau2).min(1.0);
            let [p0, p1, p2, p3] = self.arc(x, y);
            let bezier = |s: f64| {
                let u = 1.0 - s;
                let (a, b, c, d) = (u * u * u, 3.0 * u * u * s, 3.0 * u * s * s, s * s * s);
                [0, 1, 2].map(|k| a * p0[k] + b * p1[k] + c * p2[k] + d * p3[k])
            };
            total += tau2 * quadrature::integrate(|s| obs.centred(bezier(s)), s0, s1, INDUCE_TOL)?.value;
        }
        Ok(total)
    }

    /// `(Ψ̃, Ψ̂)`: the local passage and the return-arc contributions.
    pub fn induce_parts(&self, obs: &InducedObservable, xi: (f64, f64)) -> Result<(f64, f64)> {
        let local = self.roof.local_time(xi.0);
        let a = self.induce_between(obs, xi, 0.0, local)?;
        let b = self.induce_between(obs, xi, local, f64::INFINITY)?;
        Ok((a, b))
    }

    /// `Ψ(ξ) = ∫₀^{τ(ξ)} ψ̃(X(ξ, t)) dt`, honouring the roof cap if set.
    pub fn induce(&self, obs: &InducedObservable, xi: (f64, f64)) -> Result<f64> {
        let t1 = match self.roof.n_cap {
            Some(n) => n,
            None => f64::INFINITY,
        };
        self.induce_between(obs, xi, 0.0, t1)
    }

    /// The induced observable as a map-level observable (NaN on the singular line).
    pub fn induced_map_observable(&self, obs: &InducedObservable) -> PiecewiseObservable {
        let (s, o) = (*self, obs.clone());
        let alpha = self.flow.holder_limit(obs.beta).min(1.0);
        PiecewiseObservable::new(format!("Ψ[{}]", obs.name), alpha, move |x, y| {
            s.induce(&o, (x, y)).unwrap_or(f64::NAN)
        })
    }
}

pub fn induce(s: &Suspension, obs: &InducedObservable, xi: (f64, f64)) -> Result<f64> {
    s.induce(obs, xi)
}

/// Log-log slope of the largest dyadic increment of `Ψ` next to the singular line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderEstimate {
    pub exponent: f64,
    pub r_squared: f64,
    /// `−λ₃β/(λ₁ − λ₃)`.
    pub limit: f64,
}

/// Increments `|Ψ(±2h, y) − Ψ(±h, y)|` at `h = 2^{−k}`, maximised over
/// `n_y` random fibers and both sides.
pub fn holder_exponent(s: &Suspension, obs: &InducedObservable, ks: std::ops::RangeInclusive<u32>, n_y: usize, seed: u64) -> Result<HolderEstimate> {
    let mut r = rng::stream(seed, rng::ORBIT_STREAM);
    let ys: Vec<f64> = (0..n_y).map(|_| rng::uniform(&mut r, -0.5, 0.5)).collect();
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for k in ks {
        let h = (-(k as f64)).exp2();
        let mut q = 0.0f64;
        for &y in &ys {
            for side in [-1.0, 1.0] {
                let d = s.induce(obs, (2.0 * side * h, y))? - s.induce(obs, (side * h, y))?;
                q = q.max(d.abs());
            }
        }
        if q > 0.0 {
            lx.push(h.ln());
            ly.push(q.ln());
        }
    }
    let fit = stats::linear_fit(&lx, &ly).ok_or_else(|| Error::Domain("too few nonzero increments".into()))?;
    Ok(HolderEstimate { exponent: fit.slope, r_squared: fit.r_squared, limit: s.flow.holder_limit(obs.beta) })
}
