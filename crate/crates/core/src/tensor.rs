//! Tensor layout conventions and small array helpers.
//!
//! Images and feature maps are channel-first: single samples are `(C, H, W)`
//! and batches are `(B, C, H, W)`. Binary masks are `(H, W)` with values in
//! `{0, 1}`.

use ndarray::{Array2, Array3, Array4};

use crate::scalar::Scalar;

pub type Tensor2<T> = Array2<T>;
pub type Tensor3<T> = Array3<T>;
pub type Tensor4<T> = Array4<T>;

/// Binary mask, 1 = foreground.
pub type Mask = Array2<u8>;

/// Rec. 601 luma of a channel-first image; single-channel images pass through.
pub fn luminance<T: Scalar>(image: &Tensor3<T>) -> Array2<T> {
    let (c, h, w) = image.dim();
    if c == 1 {
        return image.index_axis(ndarray::Axis(0), 0).to_owned();
    }
    let (wr, wg, wb) = (T::of(0.299), T::of(0.587), T::of(0.114));
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[(y, x)] = wr * image[(0, y, x)] + wg * image[(1, y, x)] + wb * image[(2, y, x)];
        }
    }
    out
}

/// Stacks equally shaped `(C, H, W)` samples into a `(B, C, H, W)` batch.
pub fn stack_batch<T: Scalar>(items: &[Tensor3<T>]) -> Tensor4<T> {
    assert!(!items.is_empty(), "cannot stack an empty batch");
    let (c, h, w) = items[0].dim();
    let mut out = Tensor4::zeros((items.len(), c, h, w));
    for (b, item) in items.iter().enumerate() {
        assert_eq!(item.dim(), (c, h, w), "batch items must share shape");
        out.index_axis_mut(ndarray::Axis(0), b).assign(item);
    }
    out
}

/// Bilinear resample of a 2-D field to `(oh, ow)`, half-pixel-center
/// convention with edge clamping.
pub fn bilinear_resize2d<T: Scalar>(src: &Array2<T>, oh: usize, ow: usize) -> Array2<T> {
    let (ih, iw) = src.dim();
    if (ih, iw) == (oh, ow) {
        return src.clone();
    }
    let sy = ih as f64 / oh as f64;
    let sx = iw as f64 / ow as f64;
    let mut out = Array2::zeros((oh, ow));
    for oy in 0..oh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (ih - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(ih - 1);
        let dy = T::of(fy - y0 as f64);
        for ox in 0..ow {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (iw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(iw - 1);
            let dx = T::of(fx - x0 as f64);
            let top = src[(y0, x0)] * (T::one() - dx) + src[(y0, x1)] * dx;
            let bot = src[(y1, x0)] * (T::one() - dx) + src[(y1, x1)] * dx;
            out[(oy, ox)] = top * (T::one() - dy) + bot * dy;
        }
    }
    out
}

/// Nearest-neighbor resample of a 2-D field to `(oh, ow)`; preserves the
/// value set, so binary masks stay binary.
pub fn nearest_resize2d<T: Copy + num_traits::Zero>(src: &Array2<T>, oh: usize, ow: usize) -> Array2<T> {
    let (ih, iw) = src.dim();
    if (ih, iw) == (oh, ow) {
        return src.clone();
    }
    let sy = ih as f64 / oh as f64;
    let sx = iw as f64 / ow as f64;
    let mut out = Array2::zeros((oh, ow));
    for oy in 0..oh {
        let y = (((oy as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(ih - 1);
        for ox in 0..ow {
            let x = (((ox as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(iw - 1);
            out[(oy, ox)] = src[(y, x)];
        }
    }
    out
}
