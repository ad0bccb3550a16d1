use super::ode::{Dopri5, OdeParams};
use crate::error::{Error, Result};
use crate::rng;
use crate::skewmap::{Flag, Method, VarianceEstimate};
use crate::stats;

/// Batch-means flow variance of `∫ψ dt` along one Lorenz trajectory, using
/// the augmented state `(x, y, z, q)` with `q̇ = ψ(x, y, z)`.
pub fn ode_flow_variance<P>(params: &OdeParams, psi: P, total_time: f64, n_batches: usize, tol: f64, seed: u64) -> Result<VarianceEstimate>
where
    P: Fn([f64; 3]) -> f64,
{
    if n_batches < 10 || !(total_time > 0.0) {
        return Err(Error::Domain("batch means need ≥ 10 batches and a positive horizon".into()));
    }
    let mut r = rng::stream(seed, rng::ORBIT_STREAM);
    let y0 = [1.0 + rng::uniform(&mut r, -0.5, 0.5), 1.0 + rng::uniform(&mut r, -0.5, 0.5), 20.0 + rng::uniform(&mut r, -0.5, 0.5), 0.0];
    let p = *params;
    let rhs = move |s: &[f64; 4]| {
        let d = p.rhs(&[s[0], s[1], s[2]]);
        [d[0], d[1], d[2], psi([s[0], s[1], s[2]])]
    };
    let mut solver = Dopri5::new(rhs, 0.0, y0, tol)?;
    let transient = super::section::TRANSIENT;
    while solver.t < transient {
        solver.step(transient)?;
    }
    let len = total_time / n_batches as f64;
    let mut sums = Vec::with_capacity(n_batches);
    let mut q_start = solver.y[3];
    for b in 1..=n_batches {
        let end = transient + len * b as f64;
        while solver.t < end {
            solver.step(end)?;
        }
        sums.push(solver.y[3] - q_start);
        q_start = solver.y[3];
    }
    let m = stats::mean(&sums);
    let value = stats::sum(sums.iter().map(|s| (s - m) * (s - m))) / ((n_batches - 1) as f64 * len);
    let stderr = value * (2.0 / (n_batches - 1) as f64).sqrt();
    let flags = if value == 0.0 { vec![Flag::Degenerate] } else { Vec::new() };
    Ok(VarianceEstimate { method: Method::BatchMeans, value, stderr, n_trunc: 0, theta_hat: None, seed, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_observable_has_zero_variance() {
        let p = OdeParams::new(0.0).unwrap();
        let v = ode_flow_variance(&p, |_| 2.0, 200.0, 20, 1e-9, 1).unwrap();
        assert!(v.value.abs() < 1e-12);
    }

    #[test]
    fn x_observable_has_positive_variance() {
        let p = OdeParams::new(0.0).unwrap();
        let v = ode_flow_variance(&p, |s| s[0], 4000.0, 40, 1e-8, 2).unwrap();
        assert!(v.value > 3.0 * v.stderr, "{v:?}");
    }
}
