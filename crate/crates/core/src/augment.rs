//! Domain-specific photometric augmentation: CLAHE with clip-excess
//! redistribution, gamma correction, contrast/brightness jitter, and the
//! k-copy sampler used by label guessing.
//!
//! Labeled data is augmented with CLAHE only, drawing from the same paired
//! (clip, grid) list as unlabeled data; unlabeled data additionally gets
//! gamma and contrast/brightness jitter.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{luminance, Tensor3};

pub const HIST_BINS: usize = 256;

/// Parameter lists and jitter ranges for the augmentation sampler. The
/// (clip, grid) lists are paired: one index draw selects both.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub clahe_clips: Vec<f64>,
    pub clahe_grids: Vec<usize>,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_step: f64,
    pub contrast_jitter: f64,
    pub brightness_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            clahe_clips: vec![1.0, 1.2, 1.5, 1.5, 1.5, 2.0],
            clahe_grids: vec![2, 4, 8, 8, 8, 16],
            gamma_min: 0.8,
            gamma_max: 1.2,
            gamma_step: 0.05,
            contrast_jitter: 0.1,
            brightness_jitter: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clahe_clips.is_empty() || self.clahe_clips.len() != self.clahe_grids.len() {
            return Err(Error::Config("clahe clip and grid lists must be non-empty and equally long".into()));
        }
        if self.clahe_clips.iter().any(|&c| c < 1.0) {
            return Err(Error::Config("clahe clip limits must be >= 1.0".into()));
        }
        if self.clahe_grids.iter().any(|&g| g == 0) {
            return Err(Error::Config("clahe grid sizes must be >= 1".into()));
        }
        if self.gamma_step <= 0.0 || self.gamma_min <= 0.0 || self.gamma_max < self.gamma_min {
            return Err(Error::Config("invalid gamma range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub clip: f64,
    pub grid: usize,
}

/// One sampled photometric augmentation. `clahe: None` plus neutral scalar
/// values is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub clahe: Option<ClaheParams>,
    pub gamma: f64,
    pub contrast: f64,
    pub brightness: f64,
}

impl AugmentParams {
    pub fn neutral() -> Self {
        Self { clahe: None, gamma: 1.0, contrast: 1.0, brightness: 0.0 }
    }
}

/// Whether a sample draw is for labeled or unlabeled data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// CLAHE only; gamma/contrast/brightness stay neutral.
    Labeled,
    /// CLAHE plus gamma and contrast/brightness jitter.
    Unlabeled,
}

/// Integer clip limit for a 256-bin tile histogram: `clip` multiplies the
/// uniform bin height `tile_pixels / 256`, floored at 1.
pub fn clip_limit(clip: f64, tile_pixels: usize) -> u32 {
    ((clip * tile_pixels as f64 / HIST_BINS as f64) as u32).max(1)
}

/// Clips every bin at `limit` and redistributes the excess uniformly: each
/// bin gains `excess / 256`, and the remaining `excess % 256` counts are
/// spread one each at a constant stride across the range. Total mass is
/// conserved exactly; a single pass, no re-clipping.
pub fn clip_and_redistribute(hist: &mut [u32; HIST_BINS], limit: u32) {
    let mut excess: u32 = 0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let per_bin = excess / HIST_BINS as u32;
    if per_bin > 0 {
        for h in hist.iter_mut() {
            *h += per_bin;
        }
    }
    let mut residual = (excess % HIST_BINS as u32) as usize;
    if residual > 0 {
        let step = (HIST_BINS / residual).max(1);
        let mut i = 0;
        while i < HIST_BINS && residual > 0 {
            hist[i] += 1;
            residual -= 1;
            i += step;
        }
    }
}

fn bin_of<T: Scalar>(v: T) -> usize {
    ((v.to_f64() * HIST_BINS as f64) as isize).clamp(0, HIST_BINS as isize - 1) as usize
}

/// CLAHE on a single luminance plane with values in `[0, 1]`.
///
/// The image is divided into `grid x grid` tiles (edge tiles padded by
/// replication when the size does not divide evenly). Each tile's clipped
/// histogram defines a mapping `level -> cdf(level) / tile_pixels`, and each
/// output pixel bilinearly blends the mappings of its four nearest tile
/// centers.
pub fn apply_clahe<T: Scalar>(plane: &Array2<T>, clip: f64, grid: usize) -> Result<Array2<T>> {
    let (h, w) = plane.dim();
    if grid == 0 || grid > h || grid > w {
        return Err(Error::Config(format!("clahe grid {grid} invalid for a {h}x{w} image")));
    }
    if clip < 1.0 {
        return Err(Error::Config(format!("clahe clip {clip} must be >= 1.0")));
    }
    let th = h.div_ceil(grid);
    let tw = w.div_ceil(grid);
    let tile_pixels = th * tw;
    let limit = clip_limit(clip, tile_pixels);

    // Per-tile level mappings, tile-major.
    let mut maps = vec![[0.0f64; HIST_BINS]; grid * grid];
    for ty in 0..grid {
        for tx in 0..grid {
            let mut hist = [0u32; HIST_BINS];
            for y in ty * th..(ty + 1) * th {
                let sy = y.min(h - 1);
                for x in tx * tw..(tx + 1) * tw {
                    let sx = x.min(w - 1);
                    hist[bin_of(plane[(sy, sx)])] += 1;
                }
            }
            clip_and_redistribute(&mut hist, limit);
            // Midpoint CDF: half of a level's own mass counts toward its
            // rank, so spike histograms map near their input level instead
            // of the top of their bin.
            let map = &mut maps[ty * grid + tx];
            let mut below = 0u32;
            for (bin, &count) in hist.iter().enumerate() {
                map[bin] = (below as f64 + count as f64 * 0.5) / tile_pixels as f64;
                below += count;
            }
        }
    }

    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        let fy = (y as f64 + 0.5) / th as f64 - 0.5;
        let ty0 = fy.floor();
        let wy = fy - ty0;
        let t0 = (ty0 as isize).clamp(0, grid as isize - 1) as usize;
        let t1 = (ty0 as isize + 1).clamp(0, grid as isize - 1) as usize;
        for x in 0..w {
            let fx = (x as f64 + 0.5) / tw as f64 - 0.5;
            let tx0 = fx.floor();
            let wx = fx - tx0;
            let s0 = (tx0 as isize).clamp(0, grid as isize - 1) as usize;
            let s1 = (tx0 as isize + 1).clamp(0, grid as isize - 1) as usize;

            let bin = bin_of(plane[(y, x)]);
            let v00 = maps[t0 * grid + s0][bin];
            let v01 = maps[t0 * grid + s1][bin];
            let v10 = maps[t1 * grid + s0][bin];
            let v11 = maps[t1 * grid + s1][bin];
            let value = if v00 == v01 && v00 == v10 && v00 == v11 {
                v00
            } else {
                let top = v00 * (1.0 - wx) + v01 * wx;
                let bot = v10 * (1.0 - wx) + v11 * wx;
                top * (1.0 - wy) + bot * wy
            };
            out[(y, x)] = T::of(value.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// CLAHE on a channel-first image. Single-channel images are equalized
/// directly; RGB images are equalized on the luma plane and each channel is
/// rescaled by the luma ratio, preserving chromatic ratios up to clamping.
pub fn apply_clahe_image<T: Scalar>(image: &Tensor3<T>, clip: f64, grid: usize) -> Result<Tensor3<T>> {
    let (c, _, _) = image.dim();
    if c == 1 {
        let plane = image.index_axis(Axis(0), 0).to_owned();
        let eq = apply_clahe(&plane, clip, grid)?;
        let mut out = image.clone();
        out.index_axis_mut(Axis(0), 0).assign(&eq);
        return Ok(out);
    }
    let luma = luminance(image);
    let eq = apply_clahe(&luma, clip, grid)?;
    let eps = T::of(1e-6);
    let mut out = image.clone();
    let (_, h, w) = image.dim();
    for y in 0..h {
        for x in 0..w {
            let scale = eq[(y, x)] / luma[(y, x)].max(eps);
            for ch in 0..c {
                out[(ch, y, x)] = (image[(ch, y, x)] * scale).max(T::zero()).min(T::one());
            }
        }
    }
    Ok(out)
}

/// Elementwise `out = in^gamma`; `gamma` must be positive.
pub fn apply_gamma<T: Scalar>(image: &Tensor3<T>, gamma: f64) -> Result<Tensor3<T>> {
    if gamma <= 0.0 {
        return Err(Error::Config(format!("gamma {gamma} must be positive")));
    }
    if gamma == 1.0 {
        return Ok(image.clone());
    }
    let g = T::of(gamma);
    Ok(image.map(|&v| v.max(T::zero()).powf(g).min(T::one())))
}

/// `out = clamp(contrast * (in - 0.5) + 0.5 + brightness, 0, 1)`.
pub fn adjust_contrast_brightness<T: Scalar>(image: &Tensor3<T>, contrast: f64, brightness: f64) -> Tensor3<T> {
    let (c, b, half) = (T::of(contrast), T::of(brightness), T::of(0.5));
    image.map(|&v| (c * (v - half) + half + b).max(T::zero()).min(T::one()))
}

/// Applies one sampled augmentation: CLAHE, then gamma, then
/// contrast/brightness.
pub fn apply_augment<T: Scalar>(image: &Tensor3<T>, params: &AugmentParams) -> Result<Tensor3<T>> {
    let mut out = match params.clahe {
        Some(ClaheParams { clip, grid }) => apply_clahe_image(image, clip, grid)?,
        None => image.clone(),
    };
    if params.gamma != 1.0 {
        out = apply_gamma(&out, params.gamma)?;
    }
    if params.contrast != 1.0 || params.brightness != 0.0 {
        out = adjust_contrast_brightness(&out, params.contrast, params.brightness);
    }
    Ok(out)
}

/// Draws augmentation parameters. Both modes share one index draw into the
/// paired (clip, grid) lists; unlabeled mode additionally draws gamma from
/// the stepped range and contrast/brightness jitter.
pub fn sample_domain_augmentation<R: Rng>(rng: &mut R, mode: AugmentMode, cfg: &AugmentConfig) -> AugmentParams {
    let idx = rng.gen_range(0..cfg.clahe_clips.len());
    let clahe = Some(ClaheParams { clip: cfg.clahe_clips[idx], grid: cfg.clahe_grids[idx] });
    match mode {
        AugmentMode::Labeled => AugmentParams { clahe, ..AugmentParams::neutral() },
        AugmentMode::Unlabeled => {
            let steps = ((cfg.gamma_max - cfg.gamma_min) / cfg.gamma_step).round() as usize;
            let gamma = (cfg.gamma_min + rng.gen_range(0..=steps) as f64 * cfg.gamma_step).min(cfg.gamma_max);
            let contrast = 1.0 + rng.gen_range(-cfg.contrast_jitter..=cfg.contrast_jitter);
            let brightness = rng.gen_range(-cfg.brightness_jitter..=cfg.brightness_jitter);
            AugmentParams { clahe, gamma, contrast, brightness }
        }
    }
}

/// Produces `k` independently augmented copies of an image. Masks are never
/// touched by photometric augmentation, so only the image is transformed.
pub fn augment_k<T: Scalar, R: Rng>(
    image: &Tensor3<T>,
    k: usize,
    mode: AugmentMode,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<Tensor3<T>>> {
    if k < 1 {
        return Err(Error::Config("augmentation count k must be >= 1".into()));
    }
    let params: Vec<AugmentParams> = (0..k).map(|_| sample_domain_augmentation(rng, mode, cfg)).collect();
    params.iter().map(|p| apply_augment(image, p)).collect()
}
