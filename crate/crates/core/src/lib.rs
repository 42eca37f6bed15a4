//! Runge-Kutta-Chebyshev (RKC) and multirate RKC (mRKC) integrators for
//! stiff split systems `y' = f_F(y) + f_S(y)`, with the stability
//! functions and scans used to study them.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cheb;
pub mod error;
pub mod experiments;
pub mod integrators;
pub mod par;
pub mod problems;
pub mod spectral;
pub mod stability_lab;
pub mod tableau;

pub use error::{Error, Result};
pub use integrators::{
    averaged_force, integrate, mrkc_step, rk4_reference, rkc_step, select_mrkc_parameters, EvalCounts, IntegrateConfig,
    Method, Mode, MrkcParameters, RhoPolicy, Solution, SpectralEstimates, SplitRhs, SplitSystem, StepRecord,
};
pub use spectral::{dense_spectral_radius, estimate_spectral_radius, PowerMethodConfig};
pub use tableau::{build_tableau, stability_interval, ChebTableau};
