use crate::error::{Error, Result};

/// Lorenz system constants at the singularity: `σ = 10`, `β = 8/3`, `ρ = 28 + ε`.
pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;
pub const LORENZ_RHO: f64 = 28.0;

/// Closed-form eigenvalues of the Lorenz Jacobian at the origin, as
/// `(λ₁, λ₂, λ₃)` with `λ₂ < λ₃ < 0 < λ₁`: the roots of
/// `λ² + (σ + 1)λ + σ(1 − ρ) = 0` and `−β`.
pub fn lorenz_eigenvalues(eps: f64) -> (f64, f64, f64) {
    let rho = LORENZ_RHO + eps;
    let b = LORENZ_SIGMA + 1.0;
    let disc = (b * b - 4.0 * LORENZ_SIGMA * (1.0 - rho)).sqrt();
    ((-b + disc) / 2.0, (-b - disc) / 2.0, -LORENZ_BETA)
}

/// Linear flow `(x e^{λ₁t}, y e^{λ₂t}, z e^{λ₃t})` near the singularity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedLocalFlow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LinearizedLocalFlow {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        if !(lambda2 < lambda3 && lambda3 < 0.0 && 0.0 < lambda1) {
            return Err(Error::ModelViolation(format!(
                "eigenvalues ({lambda1}, {lambda2}, {lambda3}) not ordered as λ₂ < λ₃ < 0 < λ₁"
            )));
        }
        if lambda1 + lambda3 <= 0.0 {
            return Err(Error::ModelViolation(format!("λ₁ + λ₃ = {} is not positive", lambda1 + lambda3)));
        }
        Ok(Self { lambda1, lambda2, lambda3 })
    }

    pub fn lorenz(eps: f64) -> Result<Self> {
        let (l1, l2, l3) = lorenz_eigenvalues(eps);
        Self::new(l1, l2, l3)
    }

    /// Upper end of the admissible Hölder exponent of the induced observable
    /// for a `β`-Hölder `ψ`: `−λ₃β/(λ₁ − λ₃)`.
    pub fn holder_limit(&self, beta: f64) -> f64 {
        -self.lambda3 * beta / (self.lambda1 - self.lambda3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoofKind {
    /// `−log|x|/λ₁ + τ₂`.
    Log { lambda1: f64, tau2: f64 },
    /// Constant return time (test mode, no passage near the singularity).
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoofFunction {
    pub kind: RoofKind,
    /// Optional truncation level `N`: the roof becomes `min(τ, N)`.
    pub n_cap: Option<f64>,
}

impl RoofFunction {
    pub fn log(lambda1: f64, tau2: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && tau2 > 0.0) {
            return Err(Error::Domain(format!("roof needs λ₁ > 0 and τ₂ > 0, got {lambda1}, {tau2}")));
        }
        Ok(Self { kind: RoofKind::Log { lambda1, tau2 }, n_cap: None })
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Domain(format!("constant roof {c} must be positive")));
        }
        Ok(Self { kind: RoofKind::Constant(c), n_cap: None })
    }

    pub fn capped(self, n: f64) -> Self {
        Self { n_cap: Some(n), ..self }
    }

    /// Time spent in the linearised box before the bounded return segment.
    pub fn local_time(&self, x: f64) -> f64 {
        match self.kind {
            RoofKind::Log { lambda1, .. } => -x.abs().ln() / lambda1,
            RoofKind::Constant(_) => 0.0,
        }
    }

    pub fn tau2(&self) -> f64 {
        match self.kind {
            RoofKind::Log { tau2, .. } => tau2,
            RoofKind::Constant(c) => c,
        }
    }

    /// Uncapped return time.
    pub fn full(&self, x: f64) -> Result<f64> {
        if x == 0.0 && matches!(self.kind, RoofKind::Log { .. }) {
            return Err(Error::InfiniteRoof);
        }
        Ok(self.local_time(x) + self.tau2())
    }

    pub fn eval(&self, xi: (f64, f64)) -> Result<f64> {
        let t = self.full(xi.0)?;
        Ok(match self.n_cap {
            Some(n) => t.min(n),
            None => t,
        })
    }

    /// Lebesgue bound on `{ξ ∈ I × I : τ(ξ) > N}`: the strip `|x| < e^{−λ₁(N − τ₂)}`.
    pub fn tail_measure_bound(&self, n: f64) -> f64 {
        match self.kind {
            RoofKind::Log { lambda1, tau2 } => (2.0 * (-lambda1 * (n - tau2)).exp()).min(1.0),
            RoofKind::Constant(c) => {
                if n >= c {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

pub fn roof_eval(roof: &RoofFunction, xi: (f64, f64)) -> Result<f64> {
    roof.eval(xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_eigenvalues() {
        let (l1, l2, l3) = lorenz_eigenvalues(0.0);
        assert!((l1 - (-11.0 + 1201f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((l2 - (-11.0 - 1201f64.sqrt()) / 2.0).abs() < 1e-12);
        assert_eq!(l3, -8.0 / 3.0);
        assert!((l1 - 11.8277).abs() < 1e-4 && (l2 + 22.8277).abs() < 1e-4);
        assert!((l1 + l3 - 9.1611).abs() < 1e-4);
        assert!(LinearizedLocalFlow::lorenz(0.04).is_ok());
    }

    #[test]
    fn ordering_violation_rejected() {
        assert!(matches!(LinearizedLocalFlow::new(1.0, -0.5, -2.0), Err(Error::ModelViolation(_))));
        assert!(matches!(LinearizedLocalFlow::new(1.0, -3.0, -2.0), Err(Error::ModelViolation(_))));
    }

    #[test]
    fn roof_examples() {
        let lam = 11.8277;
        let roof = RoofFunction::log(lam, 1.0).unwrap();
        assert!((roof.eval(((-lam).exp(), 0.3)).unwrap() - 2.0).abs() < 1e-12);
        for x in [0.5, -0.5] {
            assert!((roof.eval((x, 0.0)).unwrap() - (2f64.ln() / lam + 1.0)).abs() < 1e-12);
        }
        assert!(matches!(roof.eval((0.0, 0.1)), Err(Error::InfiniteRoof)));
        let capped = roof.capped(5.0);
        assert_eq!(capped.eval((1e-300, 0.0)).unwrap(), 5.0);
        assert_eq!(capped.eval((0.25, 0.0)).unwrap(), roof.eval((0.25, 0.0)).unwrap());
    }

    #[test]
    fn tail_strip_bound_is_sharp() {
        let roof = RoofFunction::log(11.8277, 1.0).unwrap();
        let n = 5.0;
        let edge = (-11.8277f64 * (n - 1.0)).exp();
        assert!((roof.full(edge).unwrap() - n).abs() < 1e-12);
        assert!(roof.full(edge * 0.999).unwrap() > n);
        assert!((roof.tail_measure_bound(n) - 2.0 * edge).abs() < 1e-30);
    }

    #[test]
    fn constant_roof() {
        let roof = RoofFunction::constant(1.5).unwrap();
        assert_eq!(roof.eval((0.0, 0.0)).unwrap(), 1.5);
        assert!(RoofFunction::constant(0.0).is_err());
    }
}
