//! Synthesis of time-varying ellipsoidal invariant funnels around a nominal
//! trajectory of a nonlinear system with Lipschitz nonlinearities and bounded
//! disturbances.
//!
//! The pipeline is:
//!
//! 1. [`system`] linearizes the dynamics along the nominal and splits them into
//!    a Lur'e form (linear time-varying part plus a norm-bounded nonlinearity),
//!    estimating the local Lipschitz constants `gamma_k`.
//! 2. [`lmi`] builds the matrix inequalities: the differential LMI block
//!    matrix, the state/input containment LMIs and the scalar `c_k` conditions.
//! 3. [`discretization`] turns the first block row of the differential LMI into
//!    a linear matrix ODE in `vec Q` and discretizes it exactly under
//!    first-order-hold inputs.
//! 4. [`sdp`] assembles the resulting multiple-shooting semidefinite program,
//!    solves it with Clarabel and extracts the funnel.
//! 5. [`validation`] checks the result: algebraic certificates at the nodes,
//!    Monte-Carlo propagation of the true nonlinear closed loop, and
//!    inter-sample diagnostics.
//!
//! The [`pipeline`] and [`config`] modules wire these together for the `funnel`
//! command-line tool.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

// Links the system OpenBLAS used by Clarabel's dense PSD-cone kernels.
extern crate openblas_src;

pub mod config;
pub mod discretization;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod lmi;
pub mod ode;
pub mod pipeline;
pub mod plot;
pub mod sdp;
pub mod system;
pub mod trajectory;
pub mod unicycle;
pub mod validation;

pub use error::{FunnelError, Result};
