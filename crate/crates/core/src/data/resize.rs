use ndarray::Axis;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{bilinear_resize2d, nearest_resize2d, Tensor3};

use super::ImageSample;

/// Resamples a sample to `target = (H, W)`: bilinear for the image, nearest
/// for the mask so it stays binary. Returns the sample unchanged when the
/// target equals the current size.
pub fn resize_sample<T: Scalar>(sample: &ImageSample<T>, target: (usize, usize)) -> Result<ImageSample<T>> {
    let (th, tw) = target;
    if th < 8 || tw < 8 {
        return Err(Error::Config(format!("resize target {th}x{tw} below the 8x8 minimum")));
    }
    if sample.size() == target {
        return Ok(sample.clone());
    }
    let (c, _, _) = sample.image.dim();
    let mut image = Tensor3::zeros((c, th, tw));
    for ch in 0..c {
        let plane = sample.image.index_axis(Axis(0), ch).to_owned();
        // Bilinear weights can overshoot nothing, but keep the [0, 1]
        // invariant explicit against float round-off.
        let resized = bilinear_resize2d(&plane, th, tw);
        image
            .index_axis_mut(Axis(0), ch)
            .assign(&resized.map(|v| v.max(T::zero()).min(T::one())));
    }
    let mask = sample.mask.as_ref().map(|m| nearest_resize2d(m, th, tw));
    ImageSample::new(sample.id.clone(), image, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn downscale_to_target_shape() {
        let image = Tensor3::<f32>::from_elem((3, 120, 90), 0.25);
        let sample = ImageSample::new("big", image, None).unwrap();
        let out = resize_sample(&sample, (32, 48)).unwrap();
        assert_eq!(out.image.dim(), (3, 32, 48));
    }

    #[test]
    fn identity_target_returns_bit_identical_image() {
        let mut rng = crate::rng::stream(3, "resize-test", 0, 0);
        let image = Tensor3::<f32>::from_shape_fn((1, 16, 16), |_| rng.gen::<f32>());
        let sample = ImageSample::new("same", image.clone(), None).unwrap();
        let out = resize_sample(&sample, (16, 16)).unwrap();
        assert_eq!(out.image, image);
    }

    #[test]
    fn mask_stays_binary_over_random_resizes() {
        let mut rng = crate::rng::stream(4, "resize-test", 1, 0);
        for _ in 0..20 {
            let h = rng.gen_range(9..40);
            let w = rng.gen_range(9..40);
            let image = Tensor3::<f32>::from_elem((1, h, w), 0.5);
            let mask = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..2u8));
            let sample = ImageSample::new("m", image, Some(mask)).unwrap();
            let th = rng.gen_range(8..50);
            let tw = rng.gen_range(8..50);
            let out = resize_sample(&sample, (th, tw)).unwrap();
            let out_mask = out.mask.unwrap();
            assert_eq!(out_mask.dim(), (th, tw));
            assert!(out_mask.iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn rejects_tiny_targets() {
        let image = Tensor3::<f32>::from_elem((1, 16, 16), 0.5);
        let sample = ImageSample::new("s", image, None).unwrap();
        assert!(resize_sample(&sample, (4, 16)).is_err());
    }
}
