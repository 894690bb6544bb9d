use ndarray::{Array2, ArrayView2, Axis};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::losses::FeatureExtractor;
use crate::networks::stack_images;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `10·log10(1/MSE)` in dB for intensities in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_dims(b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_1d() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(x: &Array2<f64>, g: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = g.len();
    let rows: Array2<f64> = Array2::from_shape_fn((h, w - k + 1), |(i, j)| (0..k).map(|t| g[t] * x[[i, j + t]]).sum());
    Array2::from_shape_fn((h - k + 1, w - k + 1), |(i, j)| {
        (0..k).map(|t| g[t] * rows[[i + t, j]]).sum()
    })
}

fn ssim_plane(a: ArrayView2<f64>, b: ArrayView2<f64>, g: &[f64]) -> f64 {
    let (a, b) = (a.to_owned(), b.to_owned());
    let mu_a = filter_valid(&a, g);
    let mu_b = filter_valid(&b, g);
    let aa = filter_valid(&(&a * &a), g);
    let bb = filter_valid(&(&b * &b), g);
    let ab = filter_valid(&(&a * &b), g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    ndarray::Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        });
    total / mu_a.len() as f64
}

/// Mean structural similarity: 11×11 Gaussian window (σ = 1.5) over the
/// valid region, dynamic range 1, averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_dims(b, "ssim")?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let g = gaussian_1d();
    let per_channel: f64 = a
        .data()
        .axis_iter(Axis(0))
        .zip(b.data().axis_iter(Axis(0)))
        .map(|(pa, pb)| ssim_plane(pa, pb, &g))
        .sum();
    Ok(per_channel / a.channels() as f64)
}

/// LPIPS-style distance: every feature vector is scaled to unit length over
/// channels, squared differences are summed over channels, averaged over
/// positions and summed over layers.
pub fn lpips_distance(ext: &dyn FeatureExtractor, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_dims(b, "lpips")?;
    if let Some(c) = ext.channels() {
        if c != a.channels() {
            return Err(Error::shape(format!(
                "feature extractor expects {c} channels, images have {}",
                a.channels()
            )));
        }
    }
    let tape = Tape::new();
    let fa = ext.features(&tape, tape.constant(stack_images(&[a])?))?;
    let fb = ext.features(&tape, tape.constant(stack_images(&[b])?))?;
    let mut total = 0.0;
    for (la, lb) in fa.into_iter().zip(fb) {
        let (va, vb) = (tape.value(la), tape.value(lb));
        let (va, vb) = (va.index_axis(Axis(0), 0), vb.index_axis(Axis(0), 0));
        let (c, h, w) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let mut layer = 0.0;
        for y in 0..h {
            for x in 0..w {
                let na = (0..c).map(|k| va[[k, y, x]].powi(2)).sum::<f64>().sqrt() + 1e-10;
                let nb = (0..c).map(|k| vb[[k, y, x]].powi(2)).sum::<f64>().sqrt() + 1e-10;
                layer += (0..c)
                    .map(|k| (va[[k, y, x]] / na - vb[[k, y, x]] / nb).powi(2))
                    .sum::<f64>();
            }
        }
        total += layer / (h * w) as f64;
    }
    Ok(total)
}
