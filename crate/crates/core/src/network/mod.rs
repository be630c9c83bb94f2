//! The segmentation network and its serialization.

mod checkpoint;
mod rsu;
mod u2netp;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, TensorBytes};
pub use rsu::{RebnConv, RsuBlock};
pub use u2netp::{ForwardPass, NetworkConfig, NetworkOutputs, U2NetPlus};
