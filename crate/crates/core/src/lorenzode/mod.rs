//! The classical Lorenz equations: adaptive integration with dense output,
//! section returns, the singularity spectrum and the empirical quotient map.

mod ode;
mod quotient;
mod section;
mod variance;

pub use ode::{check_tol, integrate, singularity_eigenvalues, DenseStep, Dopri5, OdeParams, Trajectory};
pub use quotient::{
    empirical_quotient, return_time_regression, return_time_tail, QuotientBin, QuotientMap, ReturnTimeFit,
    MAX_VIOLATIONS,
};
pub use section::{crossings_csv, section_returns, SectionCrossing, SECTION_TOL, TIME_PER_RETURN, TRANSIENT};
pub use variance::ode_flow_variance;
