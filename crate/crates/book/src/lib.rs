//! Doc-tests for the snippets of the guide.
//!
//! mdbook cannot link the snippets against this workspace, so each chapter
//! is included here as a module doc and run by `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/system-model.md")]
pub mod system_model {}
#[doc = include_str!("../../../book/src/nominal-trajectory.md")]
pub mod nominal_trajectory {}
#[doc = include_str!("../../../book/src/funnel-conditions.md")]
pub mod funnel_conditions {}
#[doc = include_str!("../../../book/src/discretization.md")]
pub mod discretization {}
#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod synthesis {}
#[doc = include_str!("../../../book/src/validation.md")]
pub mod validation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
