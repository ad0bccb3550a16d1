use crate::error::{Error, Result};
use crate::onedmap::{DoublingMap, MapFamily, BASE_GAMMA};
use crate::rng::{self, StreamRng};

/// Default fiber contraction.
pub const FIBER_RHO: f64 = 0.4;
/// Default fiber shift magnitude; the sign follows the side of the singular line.
pub const FIBER_OFFSET: f64 = 0.25;
/// Smallest burn-in accepted for SRB sampling.
pub const MIN_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Base {
    Lorenz(MapFamily),
    /// `2x mod 1` on `[0, 1)`; the side is `x ≥ 1/2`.
    Doubling,
}

/// `F(x, y) = (T x, ρ y + s(x) · offset)` with `s(x) = ±1` the side of the
/// discontinuity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewProduct {
    pub base: Base,
    pub rho: f64,
    pub offset: f64,
    /// Contraction prefactor; the affine fiber gives `K = 1`.
    pub k: f64,
}

impl SkewProduct {
    pub fn new(base: Base, rho: f64, offset: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Domain(format!("fiber contraction {rho} outside (0, 1)")));
        }
        if rho / 2.0 + offset.abs() > 0.5 + 1e-15 {
            return Err(Error::Domain(format!(
                "fiber map leaves I: rho/2 + |offset| = {} > 1/2",
                rho / 2.0 + offset.abs()
            )));
        }
        Ok(Self { base, rho, offset, k: 1.0 })
    }

    /// The default geometric model at perturbation `eps`.
    pub fn geometric(eps: f64) -> Result<Self> {
        Self::new(Base::Lorenz(MapFamily::geometric(BASE_GAMMA, eps)?), FIBER_RHO, FIBER_OFFSET)
    }

    pub fn doubling() -> Self {
        Self { base: Base::Doubling, rho: FIBER_RHO, offset: FIBER_OFFSET, k: 1.0 }
    }

    pub fn x_domain(&self) -> (f64, f64) {
        match self.base {
            Base::Lorenz(_) => (-0.5, 0.5),
            Base::Doubling => (0.0, 1.0),
        }
    }

    pub fn family(&self) -> Option<&MapFamily> {
        match &self.base {
            Base::Lorenz(m) => Some(m),
            Base::Doubling => None,
        }
    }

    /// `+1` right of the discontinuity, `−1` left of it.
    #[inline]
    pub fn side(&self, x: f64) -> f64 {
        match self.base {
            Base::Lorenz(_) => {
                if x > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Base::Doubling => {
                if x >= 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    #[inline]
    pub fn fiber(&self, x: f64, y: f64) -> f64 {
        self.rho * y + self.side(x) * self.offset
    }

    #[inline]
    pub fn base_eval(&self, x: f64) -> f64 {
        match &self.base {
            Base::Lorenz(m) => m.eval_unchecked(x),
            Base::Doubling => DoublingMap.eval(x),
        }
    }

    /// One step; fails on the singular line.
    pub fn step(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        if matches!(self.base, Base::Lorenz(_)) && x == 0.0 {
            return Err(Error::OrbitTerminated { steps: 0 });
        }
        Ok((self.base_eval(x), self.fiber(x, y)))
    }

    pub fn iterate(&self, xi: (f64, f64), n: usize) -> Result<(f64, f64)> {
        let (mut x, mut y) = xi;
        for k in 0..n {
            (x, y) = self.step(x, y).map_err(|_| Error::OrbitTerminated { steps: k })?;
        }
        Ok((x, y))
    }

    /// `sup ‖g‖_{C¹}`: sup norm plus the fiber Lipschitz constant.
    pub fn fiber_c1_norm(&self) -> f64 {
        self.rho / 2.0 + self.offset.abs() + self.rho
    }
}

/// A single forward orbit, burned in from a Lebesgue-random start.
///
/// Lorenz bases iterate in floating point and restart from a fresh random
/// point on the (probability zero) event of landing on the singular line.
/// The doubling base keeps the exact binary expansion of `x` in a 64-bit
/// shift register refilled with random bits, so its orbit never collapses
/// onto the dyadic rationals.
pub struct Orbit<'a> {
    map: &'a SkewProduct,
    rng: StreamRng,
    x: f64,
    y: f64,
    state: u64,
    bits: u64,
    bits_left: u32,
    burn_in: usize,
    pub restarts: usize,
}

impl<'a> Orbit<'a> {
    pub fn new(map: &'a SkewProduct, rng: StreamRng, burn_in: usize) -> Self {
        let mut orbit = Self { map, rng, x: 0.0, y: 0.0, state: 0, bits: 0, bits_left: 0, burn_in, restarts: 0 };
        orbit.restart();
        orbit
    }

    fn restart(&mut self) {
        self.y = rng::uniform(&mut self.rng, -0.5, 0.5);
        match self.map.base {
            Base::Lorenz(_) => {
                self.x = 0.0;
                while self.x == 0.0 {
                    self.x = rng::uniform(&mut self.rng, -0.5, 0.5);
                }
            }
            Base::Doubling => {
                self.state = rng::next_u64(&mut self.rng);
                self.x = (self.state >> 11) as f64 * (-53f64).exp2();
            }
        }
        for _ in 0..self.burn_in {
            self.raw_advance();
        }
    }

    #[inline]
    fn raw_advance(&mut self) {
        match &self.map.base {
            Base::Lorenz(m) => {
                if self.x == 0.0 {
                    self.restarts += 1;
                    self.restart();
                    return;
                }
                self.y = self.map.fiber(self.x, self.y);
                self.x = m.eval_unchecked(self.x);
            }
            Base::Doubling => {
                if self.bits_left == 0 {
                    self.bits = rng::next_u64(&mut self.rng);
                    self.bits_left = 64;
                }
                self.y = self.map.fiber(self.x, self.y);
                self.state = (self.state << 1) | (self.bits & 1);
                self.bits >>= 1;
                self.bits_left -= 1;
                self.x = (self.state >> 11) as f64 * (-53f64).exp2();
            }
        }
    }

    #[inline]
    pub fn point(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Advances one step; the new point is never on the singular line.
    #[inline]
    pub fn advance(&mut self) {
        self.raw_advance();
        if matches!(self.map.base, Base::Lorenz(_)) && self.x == 0.0 {
            self.restarts += 1;
            self.restart();
        }
    }
}

/// Points of one long orbit after burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitEnsemble {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub burn_in: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl OrbitEnsemble {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// Empirical density of the x-marginal on `bins` equal cells of `[lo, hi]`.
    pub fn x_histogram(&self, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let mut h = vec![0.0; bins];
        let w = (hi - lo) / bins as f64;
        for &x in &self.xs {
            let k = (((x - lo) / w).floor().max(0.0) as usize).min(bins - 1);
            h[k] += 1.0;
        }
        let scale = 1.0 / (self.xs.len() as f64 * w);
        h.iter_mut().for_each(|v| *v *= scale);
        h
    }
}

impl OrbitEnsemble {
    /// The image of the ensemble under `(x, y) ↦ (−x, −y)`, which commutes
    /// with Lorenz-like skew products. `None` for the doubling base.
    pub fn mirrored(&self, map: &SkewProduct) -> Option<OrbitEnsemble> {
        match map.base {
            Base::Lorenz(_) => Some(OrbitEnsemble {
                xs: self.xs.iter().map(|x| -x).collect(),
                ys: self.ys.iter().map(|y| -y).collect(),
                ..self.clone()
            }),
            Base::Doubling => None,
        }
    }
}

pub fn sample_srb(map: &SkewProduct, n_samples: usize, burn_in: usize, seed: u64) -> Result<OrbitEnsemble> {
    if burn_in < MIN_BURN_IN {
        return Err(Error::Domain(format!("burn-in {burn_in} below the minimum {MIN_BURN_IN}")));
    }
    let mut orbit = Orbit::new(map, rng::stream(seed, rng::ORBIT_STREAM), burn_in);
    let mut xs = Vec::with_capacity(n_samples);
    let mut ys = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let (x, y) = orbit.point();
        xs.push(x);
        ys.push(y);
        orbit.advance();
    }
    Ok(OrbitEnsemble { xs, ys, burn_in, seed, restarts: orbit.restarts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::onedmap::{build_ulam, invariant_density, Partition, POWER_MAX_ITER, POWER_TOL};
    use crate::stats;

    #[test]
    fn mirror_commutes_with_the_map() {
        let f = SkewProduct::geometric(0.03).unwrap();
        let ens = sample_srb(&f, 1000, 1000, 4).unwrap();
        let m = ens.mirrored(&f).unwrap();
        for ((x, y), (mx, my)) in ens.points().zip(m.points()) {
            let (a, b) = f.step(x, y).unwrap();
            assert_eq!(f.step(mx, my).unwrap(), (-a, -b));
        }
        assert!(ens.mirrored(&SkewProduct::doubling()).is_none());
    }

    #[test]
    fn zero_steps_is_identity() {
        let f = SkewProduct::geometric(0.0).unwrap();
        assert_eq!(f.iterate((0.123, -0.2), 0).unwrap(), (0.123, -0.2));
    }

    #[test]
    fn singular_line_terminates() {
        let f = SkewProduct::geometric(0.0).unwrap();
        assert!(matches!(f.iterate((0.0, 0.1), 3), Err(Error::OrbitTerminated { steps: 0 })));
    }

    #[test]
    fn rejects_fiber_leaving_interval() {
        let fam = MapFamily::geometric(BASE_GAMMA, 0.0).unwrap();
        assert!(SkewProduct::new(Base::Lorenz(fam), 0.6, 0.25).is_err());
        assert!(SkewProduct::new(Base::Lorenz(fam), 1.0, 0.0).is_err());
    }

    #[test]
    fn x_marginal_is_base_orbit() {
        let f = SkewProduct::geometric(0.02).unwrap();
        let fam = *f.family().unwrap();
        let (mut x, mut xi) = (0.3141, (0.3141, 0.1));
        for _ in 0..50 {
            xi = f.iterate(xi, 1).unwrap();
            x = fam.eval(x).unwrap();
            assert_eq!(xi.0.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn same_x_pairs_contract() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let mut r = rng::stream(11, 0);
        for _ in 0..1000 {
            let x = rng::uniform(&mut r, -0.5, 0.5);
            let (y1, y2) = (rng::uniform(&mut r, -0.5, 0.5), rng::uniform(&mut r, -0.5, 0.5));
            let (mut a, mut b) = ((x, y1), (x, y2));
            for n in 1..=20 {
                a = f.iterate(a, 1).unwrap();
                b = f.iterate(b, 1).unwrap();
                let bound = f.k * f.rho.powi(n) * (y1 - y2).abs();
                assert!((a.1 - b.1).abs() <= bound * (1.0 + 1e-9) + 1e-15);
            }
        }
        let a = f.iterate((0.2, 0.1), 10).unwrap();
        let b = f.iterate((0.2, -0.1), 10).unwrap();
        assert!((a.1 - b.1).abs() <= 0.4f64.powi(10) * 0.2 * (1.0 + 1e-9) + 1e-15);
    }

    #[test]
    fn ensemble_is_reproducible_and_stays_in_sigma() {
        let f = SkewProduct::geometric(0.01).unwrap();
        let a = sample_srb(&f, 10_000, 1000, 5).unwrap();
        let b = sample_srb(&f, 10_000, 1000, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.points().all(|(x, y)| x.abs() <= 0.5 && y.abs() <= 0.5 && x != 0.0));
        assert_eq!(stats::mean(&vec![1.0; a.len()]), 1.0);
        assert!(sample_srb(&f, 10, 999, 5).is_err());
    }

    #[test]
    fn x_marginal_matches_ulam_density() {
        let f = SkewProduct::geometric(0.0).unwrap();
        let ens = sample_srb(&f, 1_000_000, 1000, 3).unwrap();
        let part = Partition::new(-0.5, 0.5, 1024).unwrap();
        let h = invariant_density(&build_ulam(f.family().unwrap(), part).unwrap(), POWER_TOL, POWER_MAX_ITER).unwrap();
        let emp = ens.x_histogram(-0.5, 0.5, 1024);
        let dist = h.l1_distance(&emp);
        assert!(dist < 0.05, "L1 distance {dist}");
    }

    #[test]
    fn doubling_orbit_is_uniform() {
        let f = SkewProduct::doubling();
        let ens = sample_srb(&f, 200_000, 1000, 1).unwrap();
        let hist = ens.x_histogram(0.0, 1.0, 16);
        assert!(hist.iter().all(|v| (v - 1.0).abs() < 0.05), "{hist:?}");
        assert!(ens.ys.iter().all(|y| y.abs() <= 0.5));
    }
}
