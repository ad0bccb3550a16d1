//! Lorenz-like expanding maps of the interval and their transfer operators.

mod map;
mod norms;
mod ulam;

pub use map::{DoublingMap, IntervalMap, MapFamily, BASE_GAMMA};
pub use norms::{bv_norm, osc1, osc_norm, rho_grid, v1p, vp_norm, OscNorm, RHO0, RHO_GRID_LEN};
pub use ulam::{
    build_ulam, decay_rate, duality_error, invariant_density, DecayEstimate, Density, Partition, UlamOperator,
    POWER_MAX_ITER, POWER_TOL,
};
