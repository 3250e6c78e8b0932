//! Differentiation engine: parameter storage, the differentiable-op
//! contract, finite-difference verification, the momentum optimizer, and
//! checkpoint serialization.

pub mod checkpoint;
pub mod op;
pub mod store;

pub use checkpoint::{encode_checkpoint, load_checkpoint_into, save_checkpoint};
pub use op::{finite_difference_check, missing_forward, DiffOp, Mode};
pub use store::{lr_schedule, ParameterStore};
