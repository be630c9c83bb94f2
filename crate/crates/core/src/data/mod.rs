//! Dataset types, disk loading, partitioning, resizing, and the synthetic
//! toy dataset used for desk-scale verification.

mod loader;
mod resize;
mod toy;

pub use loader::{load_dataset, write_dataset, DatasetLayout, LoadReport};
pub use resize::resize_sample;
pub use toy::{generate_toy_dataset, ToyDatasetSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor3};
use crate::Real;

/// One eye image with an optional ground-truth sclera mask.
///
/// Pixel values are `[0, 1]` in memory; masks are `{0, 1}` with 1 = sclera.
#[derive(Debug, Clone)]
pub struct ImageSample<T: Scalar = Real> {
    pub id: String,
    /// `(C, H, W)` image, `C ∈ {1, 3}`.
    pub image: Tensor3<T>,
    pub mask: Option<Mask>,
    pub labeled: bool,
}

impl<T: Scalar> ImageSample<T> {
    pub fn new(id: impl Into<String>, image: Tensor3<T>, mask: Option<Mask>) -> Result<Self> {
        let labeled = mask.is_some();
        let sample = Self { id: id.into(), image, mask, labeled };
        sample.validate()?;
        Ok(sample)
    }

    /// Spatial dimensions `(H, W)`.
    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.image.dim();
        (h, w)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.image.dim();
        if c != 1 && c != 3 {
            return Err(Error::Shape(format!("sample {}: {} channels, expected 1 or 3", self.id, c)));
        }
        if self.labeled != self.mask.is_some() {
            return Err(Error::Data(format!("sample {}: labeled flag disagrees with mask presence", self.id)));
        }
        if let Some(mask) = &self.mask {
            if mask.dim() != (h, w) {
                return Err(Error::Shape(format!(
                    "sample {}: mask {:?} does not match image ({h}, {w})",
                    self.id,
                    mask.dim()
                )));
            }
            if mask.iter().any(|v| *v > 1) {
                return Err(Error::Data(format!("sample {}: mask values outside {{0, 1}}", self.id)));
            }
        }
        if self.image.iter().any(|v| *v < T::zero() || *v > T::one()) {
            return Err(Error::Data(format!("sample {}: image values outside [0, 1]", self.id)));
        }
        Ok(())
    }

    /// Hides the label, moving the sample to the unlabeled pool. The mask on
    /// disk is untouched; only the in-memory view forgets it.
    pub fn strip_label(mut self) -> Self {
        self.mask = None;
        self.labeled = false;
        self
    }
}

/// Train/validation/test partitions, with training further divided into
/// labeled and unlabeled pools.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit<T: Scalar = Real> {
    pub train_labeled: Vec<ImageSample<T>>,
    pub train_unlabeled: Vec<ImageSample<T>>,
    pub validation: Vec<ImageSample<T>>,
    pub test: Vec<ImageSample<T>>,
}

impl<T: Scalar> DatasetSplit<T> {
    pub fn validate(&self) -> Result<()> {
        for s in self.validation.iter().chain(&self.test) {
            if !s.labeled {
                return Err(Error::Data(format!("evaluation sample {} has no mask", s.id)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for s in self.all_samples() {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("sample id {} appears in more than one partition", s.id)));
            }
        }
        Ok(())
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &ImageSample<T>> {
        self.train_labeled
            .iter()
            .chain(&self.train_unlabeled)
            .chain(&self.validation)
            .chain(&self.test)
    }

    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (
            self.train_labeled.len(),
            self.train_unlabeled.len(),
            self.validation.len(),
            self.test.len(),
        )
    }
}

/// Keeps `x_l` labeled training samples and strips the labels from the rest,
/// which join the unlabeled pool. Selection is a deterministic function of
/// `seed`.
pub fn partition_labeled<T: Scalar>(
    train: Vec<ImageSample<T>>,
    x_l: usize,
    seed: u64,
) -> Result<(Vec<ImageSample<T>>, Vec<ImageSample<T>>)> {
    use rand::seq::SliceRandom;

    let available = train.iter().filter(|s| s.labeled).count();
    if x_l > available {
        return Err(Error::Config(format!(
            "x_l = {x_l} exceeds the {available} labeled samples available"
        )));
    }

    let mut labeled_idx: Vec<usize> = (0..train.len()).filter(|&i| train[i].labeled).collect();
    let mut rng = crate::rng::stream(seed, "partition", 0, 0);
    labeled_idx.shuffle(&mut rng);
    let keep: std::collections::HashSet<usize> = labeled_idx.into_iter().take(x_l).collect();

    let mut labeled = Vec::with_capacity(x_l);
    let mut unlabeled = Vec::new();
    for (i, sample) in train.into_iter().enumerate() {
        if sample.labeled && keep.contains(&i) {
            labeled.push(sample);
        } else if sample.labeled {
            unlabeled.push(sample.strip_label());
        } else {
            unlabeled.push(sample);
        }
    }
    Ok((labeled, unlabeled))
}
