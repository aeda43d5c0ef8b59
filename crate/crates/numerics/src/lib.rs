//! Dense 64-bit tensors, a tape-based reverse-mode autodiff graph and an Adam
//! optimizer.
//!
//! There is no implicit broadcasting anywhere: every binary op requires equal
//! shapes, and expanding along an axis is an explicit [`Graph::repeat`].

mod adam;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NumericsError, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;

/// Rodrigues rotation matrix (row-major 3x3) for an axis-angle vector.
pub fn axis_angle_to_matrix(r: [f64; 3]) -> [f64; 9] {
    kernels::rodrigues(r)
}
