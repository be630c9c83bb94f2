//! Boundary geometry for the supervised loss: exact Euclidean distance to
//! the mask boundary, Gaussian boundary weights, and the signed distance
//! map used by the surface term.

use ndarray::Array2;

use crate::scalar::Scalar;
use crate::tensor::Mask;

/// Boundary pixels: foreground pixels with at least one 4-neighbor
/// background pixel inside the image. All-0 and all-1 masks have none.
pub fn boundary_pixels(mask: &Mask) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        if mask[(y, x)] == 0 {
            return false;
        }
        (y > 0 && mask[(y - 1, x)] == 0)
            || (y + 1 < h && mask[(y + 1, x)] == 0)
            || (x > 0 && mask[(y, x - 1)] == 0)
            || (x + 1 < w && mask[(y, x + 1)] == 0)
    })
}

/// 1-D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            if f[p].is_infinite() {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = if f[p].is_infinite() {
            f64::INFINITY
        } else {
            let diff = q as f64 - p as f64;
            diff * diff + f[p]
        };
    }
}

/// Exact squared Euclidean distance from every pixel to the seed set.
/// Pixels unreachable (no seeds at all) come back infinite.
pub fn squared_distance_to(seeds: &Array2<bool>) -> Array2<f64> {
    let (h, w) = seeds.dim();
    let mut dist = Array2::from_shape_fn((h, w), |p| if seeds[p] { 0.0 } else { f64::INFINITY });

    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    // Columns, then rows.
    for x in 0..w {
        for y in 0..h {
            f[y] = dist[(y, x)];
        }
        edt_1d(&f[..h], &mut d[..h], &mut v[..h], &mut z[..h + 1]);
        for y in 0..h {
            dist[(y, x)] = d[y];
        }
    }
    for y in 0..h {
        for x in 0..w {
            f[x] = dist[(y, x)];
        }
        edt_1d(&f[..w], &mut d[..w], &mut v[..w], &mut z[..w + 1]);
        for x in 0..w {
            dist[(y, x)] = d[x];
        }
    }
    dist
}

/// Gaussian boundary weights `exp(-d²/(2σ²))`, truncated to zero beyond
/// `3σ`. Masks with no boundary yield all-zero weights.
pub fn boundary_weight_map<T: Scalar>(mask: &Mask, sigma: f64) -> Array2<T> {
    let (h, w) = mask.dim();
    let seeds = boundary_pixels(mask);
    if !seeds.iter().any(|&b| b) {
        return Array2::zeros((h, w));
    }
    let sq = squared_distance_to(&seeds);
    let cutoff = (3.0 * sigma) * (3.0 * sigma);
    let denom = 2.0 * sigma * sigma;
    Array2::from_shape_fn((h, w), |p| {
        let d2 = sq[p];
        if d2 <= cutoff {
            T::of((-d2 / denom).exp())
        } else {
            T::zero()
        }
    })
}

/// Signed distance to the mask boundary: negative inside the region,
/// positive outside, zero on boundary pixels. Masks with no boundary
/// (all-0 or all-1) yield an all-zero map.
pub fn signed_distance_map<T: Scalar>(mask: &Mask) -> Array2<T> {
    let (h, w) = mask.dim();
    let seeds = boundary_pixels(mask);
    if !seeds.iter().any(|&b| b) {
        return Array2::zeros((h, w));
    }
    let sq = squared_distance_to(&seeds);
    Array2::from_shape_fn((h, w), |p| {
        let d = sq[p].sqrt();
        if mask[p] != 0 {
            T::of(-d)
        } else {
            T::of(d)
        }
    })
}
