//! Invertible rigid transforms (rotation about the image center, then
//! integer translation) with validity masks.
//!
//! Applying a transform resamples the field at the inverse-mapped source
//! coordinates: content moves forward with the transform, and output pixels
//! whose source falls outside the frame are marked invalid and filled with
//! zero. The inverse application undoes translation first, then rotation.

use ndarray::Array2;
use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// Probabilities and ranges for transform sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformConfig {
    pub p_rotate: f64,
    pub p_translate: f64,
    pub max_rotate_deg: f64,
    pub max_translate_px: i32,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self { p_rotate: 0.5, p_translate: 0.5, max_rotate_deg: 5.0, max_translate_px: 20 }
    }
}

/// Rotation by `rotate_deg` about the image center followed by an integer
/// pixel translation `(dx, dy)`. Components not sampled stay at identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialTransform {
    pub rotate_deg: f64,
    /// `(dx, dy)`: columns then rows, in pixels.
    pub translate: (i32, i32),
    pub rotation_applied: bool,
    pub translation_applied: bool,
}

impl SpatialTransform {
    pub fn identity() -> Self {
        Self { rotate_deg: 0.0, translate: (0, 0), rotation_applied: false, translation_applied: false }
    }

    pub fn is_identity(&self) -> bool {
        self.rotate_deg == 0.0 && self.translate == (0, 0)
    }

    /// Parameter-wise inverse: negated rotation and translation, applied in
    /// reversed order (translation undone before rotation).
    pub fn inverse(&self) -> Self {
        Self {
            rotate_deg: -self.rotate_deg,
            translate: (-self.translate.0, -self.translate.1),
            rotation_applied: self.rotation_applied,
            translation_applied: self.translation_applied,
        }
    }
}

/// Draws a transform: rotation included with probability `p_rotate` (angle
/// uniform over the range), translation with probability `p_translate`
/// (offsets uniform integers).
pub fn sample_transform<R: Rng>(rng: &mut R, cfg: &TransformConfig) -> SpatialTransform {
    let mut t = SpatialTransform::identity();
    if rng.gen::<f64>() < cfg.p_rotate {
        t.rotation_applied = true;
        t.rotate_deg = rng.gen_range(-cfg.max_rotate_deg..=cfg.max_rotate_deg);
    }
    if rng.gen::<f64>() < cfg.p_translate {
        t.translation_applied = true;
        let m = cfg.max_translate_px;
        t.translate = (rng.gen_range(-m..=m), rng.gen_range(-m..=m));
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Per-output-pixel source coordinates plus the in-frame validity mask.
/// Shared by the plain warps here and the differentiable warp op.
#[derive(Debug, Clone)]
pub struct SamplingGrid {
    /// `(sx, sy)` per output pixel, row-major.
    pub src: Vec<(f64, f64)>,
    pub valid: Array2<u8>,
    pub height: usize,
    pub width: usize,
    pub identity: bool,
}

impl SamplingGrid {
    fn identity_grid(h: usize, w: usize) -> Self {
        let mut src = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                src.push((x as f64, y as f64));
            }
        }
        Self { src, valid: Array2::ones((h, w)), height: h, width: w, identity: true }
    }

    fn from_affine(h: usize, w: usize, m: [[f64; 3]; 2]) -> Self {
        const EPS: f64 = 1e-9;
        let mut src = Vec::with_capacity(h * w);
        let mut valid = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let (xf, yf) = (x as f64, y as f64);
                let sx = m[0][0] * xf + m[0][1] * yf + m[0][2];
                let sy = m[1][0] * xf + m[1][1] * yf + m[1][2];
                let ok = sx >= -EPS && sx <= (w - 1) as f64 + EPS && sy >= -EPS && sy <= (h - 1) as f64 + EPS;
                valid[(y, x)] = u8::from(ok);
                src.push((sx, sy));
            }
        }
        Self { src, valid, height: h, width: w, identity: false }
    }
}

fn rotation_terms(t: &SpatialTransform) -> (f64, f64, f64, f64) {
    let theta = t.rotate_deg.to_radians();
    let (s, c) = theta.sin_cos();
    (c, s, t.translate.0 as f64, t.translate.1 as f64)
}

/// Grid for applying `t`: output pixel `q` samples `R⁻¹(q − c − d) + c`.
pub fn forward_grid(t: &SpatialTransform, h: usize, w: usize) -> SamplingGrid {
    if t.is_identity() {
        return SamplingGrid::identity_grid(h, w);
    }
    let (c, s, dx, dy) = rotation_terms(t);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    // Inverse of x' = R(x − c) + c + d, with R⁻¹ = Rᵀ.
    let m = [
        [c, s, cx - c * (cx + dx) - s * (cy + dy)],
        [-s, c, cy + s * (cx + dx) - c * (cy + dy)],
    ];
    SamplingGrid::from_affine(h, w, m)
}

/// Grid for applying `t⁻¹`: output pixel `q` samples `R(q − c) + c + d`.
pub fn inverse_grid(t: &SpatialTransform, h: usize, w: usize) -> SamplingGrid {
    if t.is_identity() {
        return SamplingGrid::identity_grid(h, w);
    }
    let (c, s, dx, dy) = rotation_terms(t);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let m = [
        [c, -s, cx + dx - c * cx + s * cy],
        [s, c, cy + dy - s * cx - c * cy],
    ];
    SamplingGrid::from_affine(h, w, m)
}

/// Gathers one output pixel from a source plane through the grid.
#[inline]
pub fn gather_at<T: Scalar>(plane: &ndarray::ArrayView2<T>, grid: &SamplingGrid, idx: usize, interp: Interp) -> T {
    let (h, w) = (grid.height, grid.width);
    let (sx, sy) = grid.src[idx];
    match interp {
        Interp::Nearest => {
            let x = (sx.round().max(0.0) as usize).min(w - 1);
            let y = (sy.round().max(0.0) as usize).min(h - 1);
            plane[(y, x)]
        }
        Interp::Bilinear => {
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = T::of(sx - x0 as f64);
            let fy = T::of(sy - y0 as f64);
            let top = plane[(y0, x0)] * (T::one() - fx) + plane[(y0, x1)] * fx;
            let bot = plane[(y1, x0)] * (T::one() - fx) + plane[(y1, x1)] * fx;
            top * (T::one() - fy) + bot * fy
        }
    }
}

/// Resamples a `(C, H, W)` field through a precomputed grid. Invalid output
/// pixels are filled with zero.
pub fn warp_field<T: Scalar>(field: &Tensor3<T>, grid: &SamplingGrid, interp: Interp) -> (Tensor3<T>, Array2<u8>) {
    let (ch, h, w) = field.dim();
    assert_eq!((h, w), (grid.height, grid.width), "grid size mismatch");
    if grid.identity {
        return (field.clone(), grid.valid.clone());
    }
    let mut out = Tensor3::zeros((ch, h, w));
    for c in 0..ch {
        let plane = field.index_axis(ndarray::Axis(0), c);
        let mut target = out.index_axis_mut(ndarray::Axis(0), c);
        for y in 0..h {
            for x in 0..w {
                if grid.valid[(y, x)] != 0 {
                    target[(y, x)] = gather_at(&plane, grid, y * w + x, interp);
                }
            }
        }
    }
    (out, grid.valid.clone())
}

/// Applies `t` to a field: rotation about the center, then translation.
pub fn apply<T: Scalar>(t: &SpatialTransform, field: &Tensor3<T>, interp: Interp) -> (Tensor3<T>, Array2<u8>) {
    let (_, h, w) = field.dim();
    warp_field(field, &forward_grid(t, h, w), interp)
}

/// Applies `t⁻¹`: translation undone first, then rotation.
pub fn apply_inverse<T: Scalar>(t: &SpatialTransform, field: &Tensor3<T>, interp: Interp) -> (Tensor3<T>, Array2<u8>) {
    let (_, h, w) = field.dim();
    warp_field(field, &inverse_grid(t, h, w), interp)
}

/// Validity of the warped validity mask itself: a round-tripped pixel is
/// valid only if its own resampling stayed in frame *and* every source tap
/// was valid under the first pass.
pub fn compose_validity(first_pass_valid: &Array2<u8>, grid: &SamplingGrid) -> Array2<u8> {
    let (h, w) = first_pass_valid.dim();
    if grid.identity {
        return first_pass_valid.clone();
    }
    let as_float: Array2<f64> = first_pass_valid.map(|&v| f64::from(v));
    let view = as_float.view();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if grid.valid[(y, x)] != 0 {
                let v = gather_at(&view, grid, y * w + x, Interp::Bilinear);
                out[(y, x)] = u8::from(v >= 1.0 - 1e-9);
            }
        }
    }
    out
}
