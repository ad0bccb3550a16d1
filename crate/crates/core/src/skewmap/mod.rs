//! The normalised Poincaré skew product over the Lorenz-like base, SRB
//! sampling, anisotropic seminorms and map-level variance estimators.

mod observable;
mod product;
mod variance;

pub use observable::{measure_seminorms, ObservableFn, PiecewiseObservable, SeminormGrid, SeminormRecord};
pub use product::{sample_srb, Base, Orbit, OrbitEnsemble, SkewProduct, FIBER_OFFSET, FIBER_RHO, MIN_BURN_IN};
pub use variance::{
    choose_truncation, clt_from_sums, clt_oracle_map, correlation, correlation_csv, correlation_sequence,
    evaluate, green_kubo_map, green_kubo_pair, green_kubo_series, stability_profile, ulam_poisson, CltOracle,
    Flag, Method, Truncation, VarianceEstimate, JACKKNIFE_BLOCKS, MAX_LAG, TAIL_REL_TOL,
};
