//! First-return inducing of the LSV base onto `Ω̄ = [½, 1]`: return times,
//! induced branches and skew product, induced and unfolded densities, the
//! sectional unfolding operator, the response through the inducing scheme
//! and return-time tail statistics.

mod density;
mod induced;
mod response;
mod tails;
mod unfold;

pub use density::{induced_density, unfolded_density, DensityOptions, UnfoldedDensity};
pub use induced::{induced_branch, return_time, InducedBranch, InducedSystem, InducedWeights, MAX_DROPPED_MASS};
pub use response::{induced_response, InducedFamily, InducedResponse, InducedResponseOptions};
pub use tails::{sample_return_times, tail_statistics, TailRow, TailStatistics};
pub use unfold::{
    induced_operator_identity_check, unfold, unfold_at, unfold_difference, unfold_signed,
    unfolded_fixed_point_residual, IdentityCheck, UnfoldOptions, UnfoldReport, UnfoldedResidual, REPORTED_LEVELS,
};
