//! Sub-Riemannian heat flow on flat CR and quaternionic-contact
//! nilmanifolds, with residual checks and convergence-order measurement for
//! the entropy/energy identities along the flow.

pub mod calculus;
pub mod discretization;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod harness;
pub mod heat;
pub mod report;

pub use error::{Error, Result};
