//! Disk layout: `<root>/{train,val,test}/images/*.png|jpg` with masks under
//! `<root>/<split>/masks/<same-stem>.png`. Images without a mask become
//! unlabeled training samples; evaluation splits require masks.

use std::path::{Path, PathBuf};

use image::GenericImageView;
use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor3};

use super::{DatasetSplit, ImageSample};

/// Directory names of the on-disk dataset layout.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub train: String,
    pub val: String,
    pub test: String,
    pub images_dir: String,
    pub masks_dir: String,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self {
            train: "train".into(),
            val: "val".into(),
            test: "test".into(),
            images_dir: "images".into(),
            masks_dir: "masks".into(),
        }
    }
}

/// Per-sample rejections collected while loading.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub rejected: Vec<(PathBuf, String)>,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn load_image<T: Scalar>(path: &Path) -> Result<Tensor3<T>> {
    let img = image::open(path)?;
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    // Level k maps to k/255 computed in f64, matching the toy generator's
    // quantization so write/read round trips are bit-exact.
    let level = |k: u8| T::of(k as f64 / 255.0);
    let gray = matches!(
        img.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if gray {
        let buf = img.to_luma8();
        let mut out = Tensor3::zeros((1, h, w));
        for (x, y, p) in buf.enumerate_pixels() {
            out[(0, y as usize, x as usize)] = level(p.0[0]);
        }
        Ok(out)
    } else {
        let buf = img.to_rgb8();
        let mut out = Tensor3::zeros((3, h, w));
        for (x, y, p) in buf.enumerate_pixels() {
            for c in 0..3 {
                out[(c, y as usize, x as usize)] = level(p.0[c]);
            }
        }
        Ok(out)
    }
}

/// Any pixel above 127 counts as foreground, tolerating anti-aliased label
/// exports.
fn load_mask(path: &Path) -> Result<Mask> {
    let buf = image::open(path)?.to_luma8();
    let (w, h) = buf.dimensions();
    let mut out = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in buf.enumerate_pixels() {
        out[(y as usize, x as usize)] = u8::from(p.0[0] > 127);
    }
    Ok(out)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

fn load_split_dir<T: Scalar>(
    split_dir: &Path,
    layout: &DatasetLayout,
    require_mask: bool,
    report: &mut LoadReport,
) -> Result<Vec<ImageSample<T>>> {
    let images_dir = split_dir.join(&layout.images_dir);
    let masks_dir = split_dir.join(&layout.masks_dir);
    let mut samples = Vec::new();
    for path in list_images(&images_dir)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mask_path = masks_dir.join(format!("{stem}.png"));
        let mask = if mask_path.is_file() {
            Some(load_mask(&mask_path)?)
        } else if require_mask {
            report.rejected.push((path.clone(), "missing mask for evaluation sample".into()));
            continue;
        } else {
            None
        };
        let image: Tensor3<T> = load_image(&path)?;
        let (_, h, w) = image.dim();
        if let Some(m) = &mask {
            if m.dim() != (h, w) {
                report.rejected.push((
                    path.clone(),
                    format!("mask size {:?} does not match image ({h}, {w})", m.dim()),
                ));
                continue;
            }
        }
        let split_name = split_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        samples.push(ImageSample::new(format!("{split_name}/{stem}"), image, mask)?);
    }
    Ok(samples)
}

/// Loads a dataset from disk. Returns the split plus a report of rejected
/// samples; rejection reasons are never silently dropped.
pub fn load_dataset<T: Scalar>(root: &Path, layout: &DatasetLayout) -> Result<(DatasetSplit<T>, LoadReport)> {
    if !root.is_dir() {
        return Err(Error::MissingPath(root.to_path_buf()));
    }
    let mut report = LoadReport::default();
    let train = load_split_dir::<T>(&root.join(&layout.train), layout, false, &mut report)?;
    let validation = load_split_dir::<T>(&root.join(&layout.val), layout, true, &mut report)?;
    let test = load_split_dir::<T>(&root.join(&layout.test), layout, true, &mut report)?;

    let (train_labeled, train_unlabeled): (Vec<_>, Vec<_>) = train.into_iter().partition(|s| s.labeled);
    if train_labeled.is_empty() {
        return Err(Error::Data(format!(
            "no labeled training samples under {}",
            root.display()
        )));
    }
    let split = DatasetSplit { train_labeled, train_unlabeled, validation, test };
    split.validate()?;
    Ok((split, report))
}

fn save_image<T: Scalar>(image: &Tensor3<T>, path: &Path) -> Result<()> {
    let (c, h, w) = image.dim();
    let to_u8 = |v: T| (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    if c == 1 {
        let plane = image.index_axis(Axis(0), 0);
        let buf = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(plane[(y as usize, x as usize)])])
        });
        buf.save(path)?;
    } else {
        let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            image::Rgb([
                to_u8(image[(0, y as usize, x as usize)]),
                to_u8(image[(1, y as usize, x as usize)]),
                to_u8(image[(2, y as usize, x as usize)]),
            ])
        });
        buf.save(path)?;
    }
    Ok(())
}

/// Writes a mask as an 8-bit PNG with values in `{0, 255}`.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[(y as usize, x as usize)] != 0 { 255 } else { 0 }])
    });
    buf.save(path)?;
    Ok(())
}

/// Writes a split to disk in the standard layout. Sample ids keep their
/// split prefix (`train/...`) or are placed by labeled/unlabeled pool.
pub fn write_dataset<T: Scalar>(split: &DatasetSplit<T>, root: &Path, layout: &DatasetLayout) -> Result<()> {
    let parts: [(&str, Vec<&ImageSample<T>>); 3] = [
        (
            layout.train.as_str(),
            split.train_labeled.iter().chain(&split.train_unlabeled).collect(),
        ),
        (layout.val.as_str(), split.validation.iter().collect()),
        (layout.test.as_str(), split.test.iter().collect()),
    ];
    for (part, samples) in parts {
        let images_dir = root.join(part).join(&layout.images_dir);
        let masks_dir = root.join(part).join(&layout.masks_dir);
        std::fs::create_dir_all(&images_dir)?;
        std::fs::create_dir_all(&masks_dir)?;
        for sample in samples {
            let stem = sample.id.rsplit('/').next().unwrap_or(&sample.id);
            save_image(&sample.image, &images_dir.join(format!("{stem}.png")))?;
            if let Some(mask) = &sample.mask {
                save_mask(mask, &masks_dir.join(format!("{stem}.png")))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_toy_dataset, ToyDatasetSpec};

    #[test]
    fn loader_counts_labeled_and_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToyDatasetSpec {
            count_labeled: 4,
            count_unlabeled: 10,
            count_val: 2,
            count_test: 2,
            image_size: (32, 32),
            seed: 5,
        };
        let split = generate_toy_dataset::<f32>(&spec).unwrap();
        let layout = DatasetLayout::default();
        write_dataset(&split, dir.path(), &layout).unwrap();
        let (loaded, report) = load_dataset::<f32>(dir.path(), &layout).unwrap();
        assert!(report.rejected.is_empty());
        assert_eq!(loaded.counts(), (4, 10, 2, 2));
    }

    #[test]
    fn toy_dataset_round_trips_pixel_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToyDatasetSpec {
            count_labeled: 2,
            count_unlabeled: 1,
            count_val: 1,
            count_test: 1,
            image_size: (32, 32),
            seed: 9,
        };
        let split = generate_toy_dataset::<f32>(&spec).unwrap();
        let layout = DatasetLayout::default();
        write_dataset(&split, dir.path(), &layout).unwrap();
        let (loaded, _) = load_dataset::<f32>(dir.path(), &layout).unwrap();

        let originals: Vec<_> = split.all_samples().collect();
        let reloaded: Vec<_> = loaded.all_samples().collect();
        assert_eq!(originals.len(), reloaded.len());
        for orig in originals {
            let copy = reloaded.iter().find(|s| s.id == orig.id).expect("id survives round trip");
            assert_eq!(orig.image, copy.image, "pixel content differs for {}", orig.id);
            assert_eq!(orig.mask, copy.mask);
        }
    }

    #[test]
    fn mismatched_mask_is_rejected_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::default();
        for part in ["train", "val", "test"] {
            std::fs::create_dir_all(dir.path().join(part).join("images")).unwrap();
            std::fs::create_dir_all(dir.path().join(part).join("masks")).unwrap();
        }
        let img = image::GrayImage::from_pixel(16, 16, image::Luma([100]));
        let small_mask = image::GrayImage::from_pixel(8, 8, image::Luma([255]));
        let good_mask = image::GrayImage::from_pixel(16, 16, image::Luma([255]));
        img.save(dir.path().join("train/images/a.png")).unwrap();
        small_mask.save(dir.path().join("train/masks/a.png")).unwrap();
        img.save(dir.path().join("train/images/b.png")).unwrap();
        good_mask.save(dir.path().join("train/masks/b.png")).unwrap();

        let (split, report) = load_dataset::<f32>(dir.path(), &layout).unwrap();
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(split.train_labeled.len(), 1);
        assert_eq!(split.train_labeled[0].id, "train/b");
    }

    #[test]
    fn missing_root_is_fatal() {
        let err = load_dataset::<f32>(Path::new("/nonexistent/nowhere"), &DatasetLayout::default());
        assert!(err.is_err());
    }

    #[test]
    fn empty_labeled_train_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        for part in ["train", "val", "test"] {
            std::fs::create_dir_all(dir.path().join(part).join("images")).unwrap();
        }
        let img = image::GrayImage::from_pixel(16, 16, image::Luma([100]));
        img.save(dir.path().join("train/images/u.png")).unwrap();
        assert!(load_dataset::<f32>(dir.path(), &DatasetLayout::default()).is_err());
    }
}
