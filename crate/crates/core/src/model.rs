use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Anything that maps an image batch to fused per-pixel class probabilities.
///
/// The trainer and evaluator only rely on this surface, so test stubs and
/// alternative networks can stand in for the real model.
pub trait SegmentationModel<T: Scalar> {
    fn num_classes(&self) -> usize;

    /// Inference-mode softmax probabilities `(B, P, H, W)` for a batch.
    /// Must not update any internal statistics.
    fn predict_probs(&mut self, batch: &Tensor4<T>) -> Result<Tensor4<T>>;
}
