//! Full network assembly: configuration, wiring algebra, and the model.

pub mod config;
pub mod model;
pub mod wiring;

pub use config::{AggregationMode, NetConfig};
pub use model::{build_model, Model, HEAD_MID_CHANNELS};
