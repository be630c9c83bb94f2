//! Minimal reverse-mode autodiff over `(B, C, H, W)` tensors: a parameter
//! store plus an eagerly evaluated tape with exactly the ops the
//! segmentation network needs.

mod graph;
mod params;

pub use graph::{Graph, Mode, NodeId};
pub use params::{BufId, ParamEntry, ParamId, ParamStore};
