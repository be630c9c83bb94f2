//! Segmentation metrics: pixel confusion counts, IoU / Recall / Precision /
//! F1, dataset aggregation, and TP/FP/FN overlay rendering.

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::model::SegmentationModel;
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize2d, stack_batch, Mask, Tensor3};

/// Pixel-level confusion counts for one binary mask pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Counts TP/FP/FN/TN pixels between a predicted and a ground-truth mask.
pub fn confusion_counts(pred: ArrayView2<u8>, gt: ArrayView2<u8>) -> Result<ConfusionCounts> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// The four ratio metrics derived from confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Computes IoU, Recall, Precision and F1 from pixel counts.
///
/// Degenerate denominators follow the empty-set convention: an empty
/// prediction against an empty ground truth scores 1, any other
/// zero-denominator case scores 0. This keeps all-background images from
/// poisoning dataset means.
pub fn compute_metrics(c: ConfusionCounts) -> Metrics {
    let (tp, fp, fn_) = (c.tp as f64, c.fp as f64, c.fn_ as f64);
    let pred_empty = c.tp + c.fp == 0;
    let gt_empty = c.tp + c.fn_ == 0;

    let precision = if pred_empty {
        if gt_empty {
            1.0
        } else {
            0.0
        }
    } else {
        tp / (tp + fp)
    };
    let recall = if gt_empty {
        if pred_empty {
            1.0
        } else {
            0.0
        }
    } else {
        tp / (tp + fn_)
    };
    let iou = if c.tp + c.fp + c.fn_ == 0 { 1.0 } else { tp / (tp + fp + fn_) };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics { iou, recall, precision, f1 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageMetrics {
    pub id: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Per-image metrics plus dataset-level aggregates.
///
/// `mean` is the macro (image-averaged) mean reported in result tables;
/// `micro` pools pixel counts over the whole dataset as a diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<PerImageMetrics>,
    pub mean: Metrics,
    pub micro: Metrics,
}

impl MetricsReport {
    pub fn from_counts(counts: Vec<(String, ConfusionCounts)>) -> Self {
        let mut pooled = ConfusionCounts::default();
        let mut per_image = Vec::with_capacity(counts.len());
        let mut sum = [0.0f64; 4];
        for (id, c) in counts {
            pooled.merge(&c);
            let m = compute_metrics(c);
            sum[0] += m.iou;
            sum[1] += m.recall;
            sum[2] += m.precision;
            sum[3] += m.f1;
            per_image.push(PerImageMetrics { id, metrics: m });
        }
        let n = per_image.len().max(1) as f64;
        MetricsReport {
            mean: Metrics {
                iou: sum[0] / n,
                recall: sum[1] / n,
                precision: sum[2] / n,
                f1: sum[3] / n,
            },
            micro: compute_metrics(pooled),
            per_image,
        }
    }

    /// Plain-text table with one row per image plus the dataset means.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>11} {:>8}\n",
            "image", "mIoU %", "Recall %", "Precision %", "F1 %"
        ));
        for row in &self.per_image {
            let m = &row.metrics;
            out.push_str(&format!(
                "{:<24} {:>8.2} {:>8.2} {:>11.2} {:>8.2}\n",
                row.id,
                100.0 * m.iou,
                100.0 * m.recall,
                100.0 * m.precision,
                100.0 * m.f1
            ));
        }
        let m = &self.mean;
        out.push_str(&format!(
            "{:<24} {:>8.2} {:>8.2} {:>11.2} {:>8.2}\n",
            "mean",
            100.0 * m.iou,
            100.0 * m.recall,
            100.0 * m.precision,
            100.0 * m.f1
        ));
        out
    }
}

/// Thresholds the foreground channel of a probability map into a mask.
pub fn threshold_mask<T: Scalar>(fg_prob: &ndarray::Array2<T>, threshold: f64) -> Mask {
    fg_prob.map(|&p| u8::from(p.to_f64() > threshold))
}

/// Runs the model over labeled samples and aggregates per-image metrics.
///
/// Images are resampled to `input_size` for the network when necessary, and
/// the predicted foreground probability is resampled back to native
/// resolution before thresholding, so counts are always computed against the
/// original mask.
pub fn evaluate<T: Scalar, M: SegmentationModel<T>>(
    model: &mut M,
    samples: &[ImageSample<T>],
    threshold: f64,
    input_size: (usize, usize),
) -> Result<MetricsReport> {
    const BATCH: usize = 8;
    let mut counts = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.mask.is_none() {
            return Err(Error::Data(format!("sample {} has no ground-truth mask", sample.id)));
        }
    }
    // Samples already at network resolution run in batches; the rest go
    // one by one through the resample path. Inference is per-sample
    // deterministic, so batching never changes results.
    let mut native = Vec::new();
    for sample in samples {
        if sample.size() == input_size {
            native.push(sample);
        } else {
            let (mask, _) = predict_mask(model, sample, threshold, input_size)?;
            let gt = sample.mask.as_ref().unwrap();
            counts.push((sample.id.clone(), confusion_counts(mask.view(), gt.view())?));
        }
    }
    for chunk in native.chunks(BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        let probs = model.predict_probs(&stack_batch(&images))?;
        for (i, sample) in chunk.iter().enumerate() {
            let fg = probs.index_axis(Axis(0), i);
            let fg = fg.index_axis(Axis(0), 1).to_owned();
            let mask = threshold_mask(&fg, threshold);
            let gt = sample.mask.as_ref().unwrap();
            counts.push((sample.id.clone(), confusion_counts(mask.view(), gt.view())?));
        }
    }
    counts.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(MetricsReport::from_counts(counts))
}

/// Predicts a native-resolution binary mask and foreground probability map
/// for one sample.
pub fn predict_mask<T: Scalar, M: SegmentationModel<T>>(
    model: &mut M,
    sample: &ImageSample<T>,
    threshold: f64,
    input_size: (usize, usize),
) -> Result<(Mask, ndarray::Array2<T>)> {
    let (h, w) = sample.size();
    let (ih, iw) = input_size;
    let image = if (h, w) == (ih, iw) {
        sample.image.clone()
    } else {
        crate::data::resize_sample(sample, input_size)?.image
    };
    let batch = stack_batch(std::slice::from_ref(&image));
    let probs = model.predict_probs(&batch)?;
    let fg = probs.index_axis(Axis(0), 0);
    let fg = fg.index_axis(Axis(0), 1).to_owned();
    let fg_native = if (h, w) == (ih, iw) { fg } else { bilinear_resize2d(&fg, h, w) };
    Ok((threshold_mask(&fg_native, threshold), fg_native))
}

/// Paints TP pixels blue, FP green, FN red over the source image; TN pixels
/// keep the source value. `alpha` blends tint against source (1.0 = solid).
pub fn render_overlay<T: Scalar>(
    pred: ArrayView2<u8>,
    gt: ArrayView2<u8>,
    image: &Tensor3<T>,
    alpha: f64,
) -> Result<Array3<u8>> {
    let (c, h, w) = image.dim();
    if pred.dim() != (h, w) || gt.dim() != (h, w) {
        return Err(Error::Shape("overlay inputs must share spatial dimensions".into()));
    }
    let mut out = Array3::<u8>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let src = |ch: usize| {
                let v = if c == 1 { image[(0, y, x)] } else { image[(ch, y, x)] };
                v.to_f64().clamp(0.0, 1.0) * 255.0
            };
            let tint: Option<[f64; 3]> = match (pred[(y, x)] != 0, gt[(y, x)] != 0) {
                (true, true) => Some([0.0, 0.0, 255.0]),
                (true, false) => Some([0.0, 255.0, 0.0]),
                (false, true) => Some([255.0, 0.0, 0.0]),
                (false, false) => None,
            };
            for ch in 0..3 {
                let v = match tint {
                    Some(color) => (1.0 - alpha) * src(ch) + alpha * color[ch],
                    None => src(ch),
                };
                out[(ch, y, x)] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}
