//! Grids over the fundamental domain, frame-derivative stencils, quadrature,
//! initial data and field serialization.

mod field;
mod grid;
pub mod initial;
pub mod io;
mod stencil;

pub use field::{
    field_inner, integrate, integrate_by, pairwise_sum, pairwise_sum_by, tensor_inner, ScalarField, TensorField,
};
pub use grid::{Grid, StencilOrder};
pub use initial::{make_initial_density, InitialDataSpec, InitialShape};
pub use stencil::{e, frame_derivative, frame_derivative_acc, frame_derivative_into, horizontal_divergence, xi, FrameIndex};
