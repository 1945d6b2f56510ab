//! Dense `f64` tensors, a reverse-mode tape, the Adam optimizer and
//! the gradient-checking and weight-snapshot utilities built on them.

mod adam;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod snapshot;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, check_gradients_piecewise, finite_diff_check, GradCheckReport};
pub use graph::{BatchStats, Graph, Var};
#[cfg(test)]
pub(crate) use graph::sigmoid;
pub use params::{Param, ParamId, ParamStore};
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use tensor::Tensor;
