//! PNG reading and writing, plus the `<root>/{hr,lr}/NNNN.png` dataset layout.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::Array3;

use super::{ImageTensor, SamplePair};
use crate::error::{Error, Result};

/// Loads an 8- or 16-bit gray/RGB PNG, mapping intensities to `[0, 1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file does not exist"),
        ));
    }
    let img = image::open(path).map_err(|e| Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match &img {
        DynamicImage::ImageLuma8(buf) => Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            buf.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
        }),
        DynamicImage::ImageLuma16(buf) => Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            buf.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0
        }),
        DynamicImage::ImageRgb8(buf) => Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            buf.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        }),
        DynamicImage::ImageRgb16(buf) => Array3::from_shape_fn((3, h, w), |(c, y, x)| {
            buf.get_pixel(x as u32, y as u32)[c] as f64 / 65535.0
        }),
        other => {
            return Err(Error::UnsupportedColor {
                path: path.to_path_buf(),
                color: format!("{:?}", other.color()),
            })
        }
    };
    ImageTensor::new(data)
}

/// Writes an 8-bit PNG; values are clipped to `[0, 1]` and rounded.
pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = img.dim();
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let data = img.data();
    let dynimg = match c {
        1 => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([q(data[[0, y as usize, x as usize]])])
        })),
        3 => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([q(data[[0, y, x]]), q(data[[1, y, x]]), q(data[[2, y, x]])])
        })),
        _ => return Err(Error::shape(format!("cannot save {c}-channel image as PNG"))),
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    dynimg
        .write_to(&mut writer, image::ImageFormat::Png)
        .map_err(|e| Error::Codec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Sorted list of `*.png` files directly inside `dir`.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        let is_png = p.extension().map(|e| e.eq_ignore_ascii_case("png")).unwrap_or(false);
        if p.is_file() && is_png {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every PNG in `dir`, returning `(file stem, image)` in name order.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, ImageTensor)>> {
    list_pngs(dir)?
        .into_iter()
        .map(|p| {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            load_png(&p).map(|img| (id, img))
        })
        .collect()
}

/// Loads a paired dataset stored as `<root>/hr/NNNN.png` and `<root>/lr/NNNN.png`.
///
/// Pairs are matched by file name; a file present on one side only is an error.
pub fn load_paired_dir(root: impl AsRef<Path>) -> Result<Vec<(String, SamplePair)>> {
    let root = root.as_ref();
    let hr = load_dir(root.join("hr"))?;
    let lr_dir = root.join("lr");
    let mut out = Vec::with_capacity(hr.len());
    for (id, hr_img) in hr {
        let lr_path = lr_dir.join(format!("{id}.png"));
        let lr_img = load_png(&lr_path)?;
        out.push((id, SamplePair { lr: lr_img, hr: hr_img }));
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("{}/hr holds no PNG files", root.display())));
    }
    Ok(out)
}

/// Writes pairs in the `<root>/{hr,lr}/NNNN.png` layout.
pub fn save_paired_dir(root: impl AsRef<Path>, pairs: &[SamplePair]) -> Result<()> {
    let root = root.as_ref();
    for sub in ["hr", "lr"] {
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for (i, pair) in pairs.iter().enumerate() {
        save_png(&pair.hr, root.join("hr").join(format!("{i:04}.png")))?;
        save_png(&pair.lr, root.join("lr").join(format!("{i:04}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn eight_bit_endpoints_and_midpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_fn(3, 1, |x, _| Luma([[0u8, 128, 255][x as usize]]));
        buf.save(&p).unwrap();
        let img = load_png(&p).unwrap();
        assert_eq!(img.dim(), (1, 1, 3));
        assert_eq!(img.get(0, 0, 0), 0.0);
        assert!((img.get(0, 0, 1) - 128.0 / 255.0).abs() < 1e-15);
        assert!((img.get(0, 0, 1) - 0.50196).abs() < 1e-5);
        assert_eq!(img.get(0, 0, 2), 1.0);
    }

    #[test]
    fn sixteen_bit_rgb_is_scaled_by_its_own_maximum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_fn(2, 2, |x, y| Rgb([65535, 0, (x + y) as u16 * 1000]));
        buf.save(&p).unwrap();
        let img = load_png(&p).unwrap();
        assert_eq!(img.dim(), (3, 2, 2));
        assert_eq!(img.get(0, 1, 1), 1.0);
        assert_eq!(img.get(1, 0, 0), 0.0);
        assert!((img.get(2, 1, 1) - 2000.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.png");
        let half = ImageTensor::constant(3, 5, 5, 0.5);
        save_png(&half, &p).unwrap();
        let back = load_png(&p).unwrap();
        assert!(back.max_abs_diff(&half) <= 1.0 / 510.0);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rnd = ImageTensor::from_fn(3, 4, 4, |_| rng.random::<f64>());
        save_png(&rnd, &p).unwrap();
        let back = load_png(&p).unwrap();
        assert!(back.max_abs_diff(&rnd) <= 1.0 / 510.0 + 1e-15);
    }

    #[test]
    fn rgba_is_rejected_with_a_descriptive_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let buf: ImageBuffer<image::Rgba<u8>, Vec<u8>> = ImageBuffer::from_fn(2, 2, |_, _| image::Rgba([1, 2, 3, 4]));
        buf.save(&p).unwrap();
        let err = load_png(&p).unwrap_err();
        assert!(matches!(err, Error::UnsupportedColor { .. }), "{err}");
        assert!(err.to_string().contains("Rgba8"));
    }

    #[test]
    fn missing_file_and_unwritable_path() {
        assert!(matches!(load_png("/nonexistent/x.png"), Err(Error::Io { .. })));
        let img = ImageTensor::constant(1, 2, 2, 0.1);
        assert!(save_png(&img, "/nonexistent-dir/sub/x.png").is_err());
    }
}
