//! Minimal dense neural-network engine.
//!
//! Everything runs in `f64`. Networks are sequential stacks of affine and
//! element-wise activation layers operating on row-major batches
//! (`batch × features`). A training forward pass records a tape that the
//! matching backward pass consumes; parameter gradients accumulate into each
//! [`ParamTensor`] until an optimizer step clears them.

mod adam;
mod checkpoint;
mod error;
mod network;
mod param;
mod sgd;

pub use adam::{Adam, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{NnError, Result};
pub use network::{sigmoid, LayerKind, LayerSpec, Network};
pub use param::{param_distance, soft_update, zero_grads, ParamSet, ParamTensor};
pub use sgd::sgd_step;

pub use ndarray::{Array1, Array2, ArrayView2};
