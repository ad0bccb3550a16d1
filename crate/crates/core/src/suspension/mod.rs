//! Suspension flows over the skew product with a log-singular roof, induced
//! observables, truncation, and the flow variance obtained from the map.

mod induced;
mod roof;
mod variance;

pub use induced::{holder_exponent, induce, FlowFn, GeometricModel, HolderEstimate, InducedObservable, Suspension, INDUCE_TOL};
pub use roof::{
    lorenz_eigenvalues, roof_eval, LinearizedLocalFlow, RoofFunction, RoofKind, LORENZ_BETA, LORENZ_RHO, LORENZ_SIGMA,
};
pub use variance::{
    flow_centred_series, flow_monte_carlo, flow_variance, flow_variance_from_series, induced_series, mean_roof_density,
    truncation_curve, truncation_error, FlowRecord, FlowVariance, TruncationCurve, TruncationError, TruncationRegime,
    ROOF_SE_LIMIT, TAIL_FIBERS,
};
