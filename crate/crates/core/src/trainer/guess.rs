//! Label guessing for unlabeled data.
//!
//! Augmentation averaging: predict on `k` photometrically augmented copies
//! and average the fused softmax maps. Transform equivariance: additionally
//! warp each copy with a sampled rigid transform, predict, warp the
//! predictions back, and average over the pixels that survived the round
//! trip. Guessed labels are plain tensors; no gradient flows into them.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_k, AugmentConfig, AugmentMode};
use crate::error::{Error, Result};
use crate::model::SegmentationModel;
use crate::scalar::Scalar;
use crate::tensor::{stack_batch, Mask, Tensor3};
use crate::transform::{
    apply, compose_validity, inverse_grid, sample_transform, warp_field, Interp, SamplingGrid, SpatialTransform,
    TransformConfig,
};

/// Where a guessed label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessSource {
    /// Augmentation averaging over photometric copies.
    Ssld,
    /// Transform-equivariant averaging over warped copies.
    SslSs,
}

/// An averaged softmax probability map used as a fixed consistency target.
#[derive(Debug, Clone)]
pub struct GuessedLabel<T: Scalar> {
    /// `(P, H, W)`, normalized per pixel on valid pixels.
    pub probs: Tensor3<T>,
    /// All-ones for augmentation averaging; the union of per-copy
    /// round-trip validity for transform equivariance.
    pub validity: Mask,
    pub source: GuessSource,
}

/// One transformed copy with everything the loss pass needs to compare in
/// the original frame.
#[derive(Debug, Clone)]
pub struct TransformedCopy<T: Scalar> {
    /// The warped augmented image fed to the network.
    pub image: Tensor3<T>,
    pub transform: SpatialTransform,
    /// Validity of the forward warp of the image.
    pub forward_validity: Mask,
    /// Grid that maps predictions back to the original frame.
    pub inverse: SamplingGrid,
    /// Pixels valid through the full warp round trip.
    pub round_trip_validity: Mask,
}

/// Averages fused predictions over the given copies (all-ones validity).
pub fn ssld_from_copies<T: Scalar, M: SegmentationModel<T>>(
    model: &mut M,
    copies: &[Tensor3<T>],
) -> Result<GuessedLabel<T>> {
    let batch = stack_batch(copies);
    let probs = model.predict_probs(&batch)?;
    let (k, p, h, w) = probs.dim();
    let mut sum = Tensor3::<T>::zeros((p, h, w));
    for i in 0..k {
        sum += &probs.index_axis(Axis(0), i);
    }
    let inv_k = T::one() / T::of_usize(k);
    Ok(GuessedLabel {
        probs: sum.map(|&v| v * inv_k),
        validity: Array2::ones((h, w)),
        source: GuessSource::Ssld,
    })
}

/// Warps each copy with its transform, predicts, inverse-warps the
/// predictions, and averages them weighted by round-trip validity.
pub fn sslss_from_copies<T: Scalar, M: SegmentationModel<T>>(
    model: &mut M,
    copies: &[Tensor3<T>],
    transforms: &[SpatialTransform],
) -> Result<(GuessedLabel<T>, Vec<TransformedCopy<T>>)> {
    if copies.len() != transforms.len() {
        return Err(Error::Shape("one transform per copy required".into()));
    }
    let (_, h, w) = copies[0].dim();
    let mut warped = Vec::with_capacity(copies.len());
    for (copy, t) in copies.iter().zip(transforms) {
        let (image, forward_validity) = apply(t, copy, Interp::Bilinear);
        let inverse = inverse_grid(t, h, w);
        let round_trip_validity = compose_validity(&forward_validity, &inverse);
        warped.push(TransformedCopy { image, transform: *t, forward_validity, inverse, round_trip_validity });
    }

    let batch = stack_batch(&warped.iter().map(|c| c.image.clone()).collect::<Vec<_>>());
    let probs = model.predict_probs(&batch)?;
    let (k, p, _, _) = probs.dim();

    let mut sum = Tensor3::<T>::zeros((p, h, w));
    let mut weight = Array2::<T>::zeros((h, w));
    for i in 0..k {
        let pred = probs.index_axis(Axis(0), i).to_owned();
        let (back, _) = warp_field(&pred, &warped[i].inverse, Interp::Bilinear);
        let valid = &warped[i].round_trip_validity;
        for y in 0..h {
            for x in 0..w {
                if valid[(y, x)] != 0 {
                    weight[(y, x)] += T::one();
                    for c in 0..p {
                        sum[(c, y, x)] += back[(c, y, x)];
                    }
                }
            }
        }
    }

    let mut validity: Mask = Array2::zeros((h, w));
    let mut avg = Tensor3::<T>::zeros((p, h, w));
    for y in 0..h {
        for x in 0..w {
            let wv = weight[(y, x)];
            if wv > T::zero() {
                validity[(y, x)] = 1;
                // Average, then renormalize the channel sum: bilinear
                // resampling preserves it only to round-off.
                let mut total = T::zero();
                for c in 0..p {
                    let v = sum[(c, y, x)] / wv;
                    avg[(c, y, x)] = v;
                    total += v;
                }
                if total > T::of(0.5) {
                    for c in 0..p {
                        avg[(c, y, x)] = avg[(c, y, x)] / total;
                    }
                }
            }
        }
    }
    Ok((GuessedLabel { probs: avg, validity, source: GuessSource::SslSs }, warped))
}

/// Augmentation-averaged label guess: `k` photometric copies, averaged
/// fused predictions. Returns the copies for the subsequent loss pass.
pub fn guess_labels_ssld<T: Scalar, M: SegmentationModel<T>>(
    model: &mut M,
    image: &Tensor3<T>,
    k: usize,
    aug_cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(GuessedLabel<T>, Vec<Tensor3<T>>)> {
    let copies = augment_k(image, k, AugmentMode::Unlabeled, aug_cfg, rng)?;
    let guessed = ssld_from_copies(model, &copies)?;
    Ok((guessed, copies))
}

/// Transform-equivariant label guess. Augmentation parameters are drawn
/// first (so the copies match [`guess_labels_ssld`] under an identical rng
/// stream), then one transform per copy.
pub fn guess_labels_sslss<T: Scalar, M: SegmentationModel<T>>(
    model: &mut M,
    image: &Tensor3<T>,
    k: usize,
    aug_cfg: &AugmentConfig,
    tr_cfg: &TransformConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(GuessedLabel<T>, Vec<TransformedCopy<T>>)> {
    let copies = augment_k(image, k, AugmentMode::Unlabeled, aug_cfg, rng)?;
    let transforms: Vec<SpatialTransform> = (0..k).map(|_| sample_transform(rng, tr_cfg)).collect();
    sslss_from_copies(model, &copies, &transforms)
}
