use ndarray::{s, Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImageTensor, SamplePair};
use crate::error::{Error, Result};

/// Number of elements of the dihedral group acting on square pixel grids.
pub const D4_ORDER: usize = 8;

/// `t = 4·flip + rot`: mirror left-right when `flip` is set, then rotate
/// counter-clockwise by `rot` quarter turns.
pub(crate) fn transform_array(a: ArrayView3<f64>, t: usize) -> Array3<f64> {
    let mut v = a;
    if t >= 4 {
        v.invert_axis(ndarray::Axis(2));
    }
    for _ in 0..t % 4 {
        // quarter turn: transpose the spatial axes, then reverse rows
        v = v.permuted_axes([0, 2, 1]);
        v.invert_axis(ndarray::Axis(1));
    }
    v.as_standard_layout().into_owned()
}

pub(crate) fn inverse_index(t: usize) -> usize {
    if t < 4 {
        (4 - t) % 4
    } else {
        t
    }
}

fn check_t(t: usize) -> Result<()> {
    if t >= D4_ORDER {
        return Err(Error::invalid(format!("dihedral index must be in 0..8, got {t}")));
    }
    Ok(())
}

/// Applies element `t` of the dihedral group D4 (flips and quarter turns).
pub fn flip_rotate(img: &ImageTensor, t: usize) -> Result<ImageTensor> {
    check_t(t)?;
    Ok(ImageTensor::from_array_unchecked(transform_array(img.data().view(), t)))
}

/// Undoes [`flip_rotate`] with the same `t`.
pub fn flip_rotate_inverse(img: &ImageTensor, t: usize) -> Result<ImageTensor> {
    check_t(t)?;
    flip_rotate(img, inverse_index(t))
}

/// Convex combination of two pairs with one shared coefficient, so the
/// mixed LR is still the degradation of the mixed HR under any linear `H`.
pub fn mixup(a: &SamplePair, b: &SamplePair, lam: f64) -> Result<SamplePair> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::invalid(format!(
            "mixup coefficient must lie in [0,1], got {lam}"
        )));
    }
    Ok(SamplePair {
        lr: a.lr.axpby(lam, &b.lr, 1.0 - lam)?,
        hr: a.hr.axpby(lam, &b.hr, 1.0 - lam)?,
    })
}

/// `count` uniformly random top-left corners for `size×size` crops.
pub fn patch_positions<R: Rng>(
    height: usize,
    width: usize,
    size: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || size > height || size > width {
        return Err(Error::invalid(format!(
            "patch size {size} does not fit a {height}x{width} image"
        )));
    }
    Ok((0..count)
        .map(|_| (rng.random_range(0..=height - size), rng.random_range(0..=width - size)))
        .collect())
}

pub fn extract_patch_at(img: &ImageTensor, top: usize, left: usize, size: usize) -> Result<ImageTensor> {
    img.crop(top, left, size, size)
}

/// Seeded random square crops.
pub fn extract_patches(img: &ImageTensor, size: usize, count: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patch_positions(img.height(), img.width(), size, count, &mut rng)?
        .into_iter()
        .map(|(t, l)| {
            Ok(ImageTensor::from_array_unchecked(
                img.data().slice(s![.., t..t + size, l..l + size]).to_owned(),
            ))
        })
        .collect()
}
