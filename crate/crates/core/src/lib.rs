//! Semi-supervised sclera segmentation toolkit.
//!
//! Trains a nested-U encoder–decoder for binary sclera segmentation from a
//! few labeled images plus a pool of unlabeled ones, using two consistency
//! mechanisms over the unlabeled pool:
//!
//! 1. **Augmentation averaging** — each unlabeled image is photometrically
//!    augmented (CLAHE, gamma, contrast/brightness) `k` times; the averaged
//!    softmax prediction over the copies becomes a fixed "guessed label".
//! 2. **Transform equivariance** — copies additionally receive an invertible
//!    rigid transform; predictions are warped back before averaging, so the
//!    guessed label enforces spatial consistency.
//!
//! The crate ships the full pipeline: dataset loading and a synthetic toy
//! dataset, the augmentation and transform machinery, the segmentation
//! network with its own autodiff, the composite supervised loss with its
//! epoch schedule, the training loop with checkpoints and history, and the
//! evaluation/overlay tooling.
//!
//! All numerics are generic over the scalar type (`f32`/`f64`) through
//! [`Scalar`]; the concrete aliases below pin the training dtype.

pub mod augment;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
pub use model::SegmentationModel;
pub use scalar::Scalar;

/// Training dtype.
pub type Real = f32;

/// A `(C, H, W)` image tensor at the training dtype.
pub type Image = tensor::Tensor3<Real>;

/// A `(B, C, H, W)` batch tensor at the training dtype.
pub type Batch = tensor::Tensor4<Real>;
