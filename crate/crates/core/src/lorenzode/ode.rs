use nalgebra::Matrix3;

use crate::error::{Error, Result};

/// Classical Lorenz parameters with `ρ = 28 + ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub eps: f64,
}

impl OdeParams {
    pub fn new(eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Domain(format!("perturbation {eps} outside [0, 1]")));
        }
        Ok(Self { sigma: 10.0, rho: 28.0 + eps, beta: 8.0 / 3.0, eps })
    }

    #[inline]
    pub fn rhs(&self, s: &[f64; 3]) -> [f64; 3] {
        [self.sigma * (s[1] - s[0]), s[0] * (self.rho - s[2]) - s[1], s[0] * s[1] - self.beta * s[2]]
    }

    pub fn jacobian_at_origin(&self) -> Matrix3<f64> {
        Matrix3::new(-self.sigma, self.sigma, 0.0, self.rho, -1.0, 0.0, 0.0, 0.0, -self.beta)
    }
}

/// Eigenvalues at the origin from a real Schur decomposition, sorted as
/// `(λ₁, λ₂, λ₃)` with `λ₂ < λ₃ < 0 < λ₁` and `λ₁ + λ₃ > 0`.
pub fn singularity_eigenvalues(params: &OdeParams) -> Result<(f64, f64, f64)> {
    let ev = params
        .jacobian_at_origin()
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::ModelViolation("complex eigenvalues at the singularity".into()))?;
    let mut v = [ev[0], ev[1], ev[2]];
    v.sort_by(|a, b| a.total_cmp(b));
    let (l2, l3, l1) = (v[0], v[1], v[2]);
    if !(l2 < l3 && l3 < 0.0 && 0.0 < l1) || l1 + l3 <= 0.0 {
        return Err(Error::ModelViolation(format!("eigenvalues ({l1}, {l2}, {l3}) not Lorenz-like")));
    }
    Ok((l1, l2, l3))
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    r: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn start(&self) -> [f64; N] {
        self.r[0]
    }

    pub fn end(&self) -> [f64; N] {
        std::array::from_fn(|i| self.r[0][i] + self.r[1][i])
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        self.eval_fraction((t - self.t0) / self.h)
    }

    /// The interpolant at `t0 + θ h`; avoids the rounding of large absolute times.
    pub fn eval_fraction(&self, th: f64) -> [f64; N] {
        let th1 = 1.0 - th;
        std::array::from_fn(|i| {
            let r = &self.r;
            r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
        })
    }

    /// Time derivative of the interpolant.
    pub fn derivative(&self, t: f64) -> [f64; N] {
        let th = (t - self.t0) / self.h;
        self.derivative_fraction(th).map(|d| d / self.h)
    }

    /// Derivative of the interpolant with respect to `θ`.
    pub fn derivative_fraction(&self, th: f64) -> [f64; N] {
        std::array::from_fn(|i| {
            let (b, c, d, e) = (self.r[1][i], self.r[2][i], self.r[3][i], self.r[4][i]);
            // d/dθ of b θ + c θ(1−θ) + d θ²(1−θ) + e θ²(1−θ)²
            b + c * (1.0 - 2.0 * th) + d * (2.0 * th - 3.0 * th * th) + e * (2.0 * th - 6.0 * th * th + 4.0 * th * th * th)
        })
    }
}

/// Adaptive Dormand–Prince 5(4) integrator with dense output. The error
/// per step is controlled in the mixed norm `atol = rtol = tol`.
pub struct Dopri5<const N: usize, F: Fn(&[f64; N]) -> [f64; N]> {
    f: F,
    tol: f64,
    pub t: f64,
    pub y: [f64; N],
    h: f64,
    k1: [f64; N],
    pub steps: usize,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

pub fn check_tol(tol: f64) -> Result<()> {
    if !(1e-12..=1e-6).contains(&tol) {
        return Err(Error::Domain(format!("tolerance {tol:e} outside [1e-12, 1e-6]")));
    }
    Ok(())
}

impl<const N: usize, F: Fn(&[f64; N]) -> [f64; N]> Dopri5<N, F> {
    pub fn new(f: F, t0: f64, y0: [f64; N], tol: f64) -> Result<Self> {
        check_tol(tol)?;
        let k1 = f(&y0);
        Ok(Self { f, tol, t: t0, y: y0, h: 1e-3, k1, steps: 0 })
    }

    /// Takes one accepted step, never past `t_max`.
    pub fn step(&mut self, t_max: f64) -> Result<DenseStep<N>> {
        loop {
            let h = self.h.min(t_max - self.t);
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let (y, k1, f) = (&self.y, &self.k1, &self.f);
            let k2 = f(&axpy(y, h, &[(A21, k1)]));
            let k3 = f(&axpy(y, h, &[(A31, k1), (A32, &k2)]));
            let k4 = f(&axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(&axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
            let k6 = f(&axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
            let y1 = axpy(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let k7 = f(&y1);
            let mut err = 0.0;
            for i in 0..N {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol + self.tol * y[i].abs().max(y1[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / N as f64).sqrt();
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            if err <= 1.0 {
                let mut r = [[0.0; N]; 5];
                for i in 0..N {
                    let dy = y1[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    r[0][i] = y[i];
                    r[1][i] = dy;
                    r[2][i] = bspl;
                    r[3][i] = dy - h * k7[i] - bspl;
                    r[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                let dense = DenseStep { t0: self.t, h, r };
                self.t += h;
                self.y = y1;
                self.k1 = k7;
                self.h = h * fac;
                self.steps += 1;
                return Ok(dense);
            }
            self.h = h * fac.min(1.0);
        }
    }
}

/// Accepted steps of one integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<DenseStep<3>>,
}

impl Trajectory {
    pub fn end(&self) -> [f64; 3] {
        self.steps.last().map(|s| s.end()).unwrap_or([f64::NAN; 3])
    }

    /// Dense-output state at `t` inside the integrated range.
    pub fn at(&self, t: f64) -> Option<[f64; 3]> {
        let k = self.steps.partition_point(|s| s.t1() < t);
        self.steps.get(k).filter(|s| s.t0 <= t).map(|s| s.eval(t))
    }
}

pub fn integrate(params: &OdeParams, state0: [f64; 3], t_end: f64, tol: f64) -> Result<Trajectory> {
    let p = *params;
    let mut solver = Dopri5::new(move |s: &[f64; 3]| p.rhs(s), 0.0, state0, tol)?;
    let mut steps = Vec::new();
    if state0 == [0.0; 3] {
        // The equilibrium: one exact step covering the whole range.
        steps.push(DenseStep { t0: 0.0, h: t_end.max(f64::MIN_POSITIVE), r: [[0.0; 3]; 5] });
        return Ok(Trajectory { steps });
    }
    while solver.t < t_end {
        steps.push(solver.step(t_end)?);
    }
    Ok(Trajectory { steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_fixed() {
        let tr = integrate(&OdeParams::new(0.0).unwrap(), [0.0; 3], 10.0, 1e-10).unwrap();
        assert_eq!(tr.end(), [0.0; 3]);
        assert_eq!(tr.at(3.0), Some([0.0; 3]));
    }

    #[test]
    fn z_axis_is_invariant() {
        let tr = integrate(&OdeParams::new(0.0).unwrap(), [0.0, 0.0, 5.0], 2.0, 1e-12).unwrap();
        for t in [0.3, 1.1, 2.0] {
            let s = tr.at(t).unwrap();
            assert_eq!((s[0], s[1]), (0.0, 0.0));
            assert!((s[2] - 5.0 * (-8.0 * t / 3.0).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn tolerance_range_enforced() {
        let p = OdeParams::new(0.0).unwrap();
        assert!(integrate(&p, [1.0; 3], 1.0, 1e-5).is_err());
        assert!(integrate(&p, [1.0; 3], 1.0, 1e-13).is_err());
        assert!(OdeParams::new(1.5).is_err());
    }

    #[test]
    fn self_convergence_at_t10() {
        let p = OdeParams::new(0.0).unwrap();
        let s0 = [1.0, 1.0, 1.0];
        let reference = integrate(&p, s0, 10.0, 1e-12).unwrap().end();
        let dev = |tol: f64| {
            let e = integrate(&p, s0, 10.0, tol).unwrap().end();
            (0..3).map(|i| (e[i] - reference[i]).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (dev(1e-7), dev(1e-8));
        assert!(coarse >= 4.0 * fine, "{coarse:e} vs {fine:e}");
        // Halving the tolerance still reduces the deviation, though by the
        // controller's tol^{4/5} law rather than fourfold.
        assert!(dev(5e-8) > dev(2.5e-8) * 1.2);
    }

    #[test]
    fn dense_output_matches_step_ends_and_derivative() {
        let p = OdeParams::new(0.0).unwrap();
        let tr = integrate(&p, [1.0, 2.0, 20.0], 1.0, 1e-10).unwrap();
        for w in tr.steps.windows(2) {
            assert_eq!(w[0].end(), w[1].start());
            let tm = w[0].t0 + 0.37 * w[0].h;
            let (d, f) = (w[0].derivative(tm), p.rhs(&w[0].eval(tm)));
            assert!((0..3).all(|i| (d[i] - f[i]).abs() < 1e-5 * (1.0 + f[i].abs())));
        }
    }

    #[test]
    fn eigenvalues_match_closed_form() {
        let (l1, l2, l3) = singularity_eigenvalues(&OdeParams::new(0.0).unwrap()).unwrap();
        assert!((l1 - (-11.0 + 1201f64.sqrt()) / 2.0).abs() < 1e-9);
        assert!((l2 - (-11.0 - 1201f64.sqrt()) / 2.0).abs() < 1e-9);
        assert!((l3 + 8.0 / 3.0).abs() < 1e-9);
        for eps in [0.01, 0.1, 0.5] {
            let (a, _, _) = singularity_eigenvalues(&OdeParams::new(eps).unwrap()).unwrap();
            assert!((a - crate::suspension::lorenz_eigenvalues(eps).0).abs() < 1e-9);
        }
    }

    #[test]
    fn eigenvalue_continuity() {
        // dλ₁/dε = 10/√(1201 + 40ε) from the quadratic.
        let grid = [0.0, 0.005, 0.01, 0.02, 0.04];
        for w in grid.windows(2) {
            let a = singularity_eigenvalues(&OdeParams::new(w[0]).unwrap()).unwrap().0;
            let b = singularity_eigenvalues(&OdeParams::new(w[1]).unwrap()).unwrap().0;
            let deriv = 10.0 / (1201.0 + 40.0 * w[0]).sqrt();
            assert!(((b - a) / (w[1] - w[0])).abs() <= 2.0 * deriv);
        }
    }

    #[test]
    fn non_lorenz_parameters_rejected() {
        let p = OdeParams { sigma: 10.0, rho: 0.5, beta: 8.0 / 3.0, eps: 0.0 };
        assert!(matches!(singularity_eigenvalues(&p), Err(Error::ModelViolation(_))));
    }
}
