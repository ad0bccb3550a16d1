use crate::error::{Error, Result};

/// Base branch exponent of the geometric family.
pub const BASE_GAMMA: f64 = 0.6;

/// A piecewise increasing interval map with finitely many full or partial
/// branches, each given with a closed-form inverse.
pub trait IntervalMap: Sync {
    fn domain(&self) -> (f64, f64);

    /// Branch domains, in increasing order, tiling the domain.
    fn branches(&self) -> Vec<(f64, f64)>;

    /// Value of branch `k` at `x`, extended continuously to the branch endpoints.
    fn eval_branch(&self, k: usize, x: f64) -> f64;

    /// Inverse of branch `k` at a point `y` of its image.
    fn invert_branch(&self, k: usize, y: f64) -> f64;

    fn branch_of(&self, x: f64) -> usize {
        let bs = self.branches();
        bs.iter().position(|&(_, b)| x < b).unwrap_or(bs.len() - 1)
    }
}

/// `T(x) = sign(x) (c |x|^γ − 1/2)` on `I = [−1/2, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapFamily {
    pub gamma: f64,
    pub c: f64,
    pub eps: f64,
}

impl MapFamily {
    /// The perturbed family `γ_ε = γ₀ + ε`, `c_ε = 2^{γ_ε}`.
    pub fn geometric(gamma0: f64, eps: f64) -> Result<Self> {
        let gamma = gamma0 + eps;
        Self::new(gamma, gamma.exp2(), eps)
    }

    pub fn new(gamma: f64, c: f64, eps: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!("branch exponent {gamma} outside (0, 1)")));
        }
        if !(eps >= 0.0) {
            return Err(Error::Domain(format!("perturbation {eps} must be nonnegative")));
        }
        if c * (-gamma).exp2() > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("coefficient {c} maps I outside itself")));
        }
        let fam = Self { gamma, c, eps };
        if fam.min_slope() <= 1.0 {
            return Err(Error::Domain(format!(
                "minimum slope {} is not expanding",
                fam.min_slope()
            )));
        }
        Ok(fam)
    }

    /// `c γ 2^{1−γ}`, attained at `|x| = 1/2`.
    pub fn min_slope(&self) -> f64 {
        self.c * self.gamma * (1.0 - self.gamma).exp2()
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Err(Error::Singularity);
        }
        if !(-0.5..=0.5).contains(&x) {
            return Err(Error::Domain(format!("x = {x} outside I")));
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        let v = self.c * x.abs().powf(self.gamma) - 0.5;
        if x > 0.0 {
            v
        } else {
            -v
        }
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Err(Error::Singularity);
        }
        Ok(self.c * self.gamma * x.abs().powf(self.gamma - 1.0))
    }
}

impl IntervalMap for MapFamily {
    fn domain(&self) -> (f64, f64) {
        (-0.5, 0.5)
    }

    fn branches(&self) -> Vec<(f64, f64)> {
        vec![(-0.5, 0.0), (0.0, 0.5)]
    }

    fn eval_branch(&self, k: usize, x: f64) -> f64 {
        let v = self.c * x.abs().powf(self.gamma) - 0.5;
        if k == 0 {
            -v
        } else {
            v
        }
    }

    fn invert_branch(&self, k: usize, y: f64) -> f64 {
        if k == 0 {
            -((0.5 - y).max(0.0) / self.c).powf(1.0 / self.gamma)
        } else {
            ((y + 0.5).max(0.0) / self.c).powf(1.0 / self.gamma)
        }
    }

    fn branch_of(&self, x: f64) -> usize {
        usize::from(x > 0.0)
    }
}

/// `t(x) = 2x mod 1` on `[0, 1)`, a test instance with known spectrum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoublingMap;

impl DoublingMap {
    pub fn eval(&self, x: f64) -> f64 {
        let y = 2.0 * x;
        if y >= 1.0 {
            y - 1.0
        } else {
            y
        }
    }
}

impl IntervalMap for DoublingMap {
    fn domain(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn branches(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 0.5), (0.5, 1.0)]
    }

    fn eval_branch(&self, k: usize, x: f64) -> f64 {
        2.0 * x - k as f64
    }

    fn invert_branch(&self, k: usize, y: f64) -> f64 {
        0.5 * (y + k as f64)
    }

    fn branch_of(&self, x: f64) -> usize {
        usize::from(x >= 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> MapFamily {
        MapFamily::geometric(BASE_GAMMA, 0.0).unwrap()
    }

    #[test]
    fn boundary_is_fixed() {
        assert!((base().eval(0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((base().eval(-0.5).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_sided_limits_at_singularity() {
        let t = base();
        assert!((t.eval(1e-300).unwrap() + 0.5).abs() < 1e-12);
        assert!((t.eval(-1e-300).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interior_value_matches_arithmetic() {
        let t = base();
        let expected = -(0.6f64.exp2() * 0.25f64.powf(0.6) - 0.5);
        assert!((t.eval(-0.25).unwrap() - expected).abs() < 1e-15);
        assert!((expected + 0.159_753).abs() < 1e-5);
    }

    #[test]
    fn singular_point_rejected() {
        assert!(matches!(base().eval(0.0), Err(Error::Singularity)));
        assert!(base().derivative(0.0).is_err());
    }

    #[test]
    fn expansion_certificate_on_fine_grid() {
        for eps in [0.0, 0.01, 0.02, 0.04] {
            let t = MapFamily::geometric(BASE_GAMMA, eps).unwrap();
            let bound = t.min_slope();
            assert!(bound > 1.0);
            let n = 100_000;
            let min = (0..n)
                .map(|i| -0.5 + (i as f64 + 0.5) / n as f64)
                .filter(|x| *x != 0.0)
                .map(|x| t.derivative(x).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(min >= bound - 1e-9, "eps {eps}: {min} < {bound}");
        }
    }

    #[test]
    fn rejects_non_expanding_parameters() {
        assert!(MapFamily::geometric(0.45, 0.0).is_err());
        assert!(MapFamily::new(1.5, 2.0, 0.0).is_err());
    }

    #[test]
    fn inverse_branches_roundtrip() {
        let t = base();
        for &x in &[-0.49, -0.2, -1e-6, 1e-6, 0.3, 0.5] {
            let k = t.branch_of(x);
            let y = t.eval_branch(k, x);
            assert!((t.invert_branch(k, y) - x).abs() < 1e-12, "{x}");
        }
        let d = DoublingMap;
        assert_eq!(d.invert_branch(1, d.eval_branch(1, 0.75)), 0.75);
    }
}
