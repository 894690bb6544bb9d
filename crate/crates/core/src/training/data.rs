use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::imaging::{
    bicubic_resize, estimate_noise_sigma, flip_rotate, mixup, patch_positions, ImageTensor, SamplePair,
};

/// One SR training batch; `sigmas[i]` is the noise level estimated from `lr[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SrBatch {
    pub lr: Vec<ImageTensor>,
    pub hr: Vec<ImageTensor>,
    pub sigmas: Vec<f64>,
}

/// One domain-stage batch: bicubic downscales of clean images (`z`) and crops
/// of real source images (`x`).
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch {
    pub z: Vec<ImageTensor>,
    pub x: Vec<ImageTensor>,
}

/// Dihedral element permitted by the augmentation flags.
fn random_transform(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> usize {
    match (cfg.flips, cfg.rot90) {
        (true, true) => rng.random_range(0..8),
        (true, false) => 4 * rng.random_range(0..2),
        (false, true) => rng.random_range(0..4),
        (false, false) => 0,
    }
}

pub fn check_sr_pairs(cfg: &TrainConfig, pairs: &[SamplePair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        p.check_scale(cfg.scale)?;
        if p.lr.height() < cfg.patch || p.lr.width() < cfg.patch {
            return Err(Error::invalid(format!(
                "pair {i}: LR image {}x{} is smaller than the {} patch",
                p.lr.height(),
                p.lr.width(),
                cfg.patch
            )));
        }
    }
    Ok(())
}

/// Aligned random LR/HR patches with dihedral augmentation and, on a random
/// subset of batches, MixUp against a shuffled copy of the batch.
pub fn sample_sr_batch(cfg: &TrainConfig, pairs: &[SamplePair], rng: &mut ChaCha8Rng) -> Result<SrBatch> {
    let (p, s) = (cfg.patch, cfg.scale);
    let mut items = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let pair = &pairs[rng.random_range(0..pairs.len())];
        let (top, left) = patch_positions(pair.lr.height(), pair.lr.width(), p, 1, rng)?[0];
        let lr = pair.lr.crop(top, left, p, p)?;
        let hr = pair.hr.crop(top * s, left * s, p * s, p * s)?;
        let t = random_transform(cfg, rng);
        items.push(SamplePair {
            lr: flip_rotate(&lr, t)?,
            hr: flip_rotate(&hr, t)?,
        });
    }
    if cfg.mixup && rng.random::<f64>() < cfg.mixup_prob {
        let beta =
            Beta::new(cfg.mixup_alpha, cfg.mixup_alpha).map_err(|e| Error::invalid(format!("mixup_alpha: {e}")))?;
        let lam = beta.sample(rng);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(rng);
        items = items
            .iter()
            .zip(&order)
            .map(|(a, &j)| mixup(a, &items[j], lam))
            .collect::<Result<_>>()?;
    }
    let sigmas = items
        .iter()
        .map(|p| estimate_noise_sigma(&p.lr))
        .collect::<Result<_>>()?;
    let (lr, hr) = items.into_iter().map(|p| (p.lr, p.hr)).unzip();
    Ok(SrBatch { lr, hr, sigmas })
}

pub fn check_domain_sets(cfg: &TrainConfig, sources: &[ImageTensor], targets: &[ImageTensor]) -> Result<()> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} source and {} target images",
            sources.len(),
            targets.len()
        )));
    }
    let big = cfg.patch * cfg.scale;
    for (name, set, need) in [("source", sources, cfg.patch), ("target", targets, big)] {
        if let Some(i) = set.iter().position(|im| im.height() < need || im.width() < need) {
            return Err(Error::invalid(format!(
                "{name} image {i} is smaller than the required {need}x{need} crop"
            )));
        }
    }
    Ok(())
}

pub fn sample_domain_batch(
    cfg: &TrainConfig,
    sources: &[ImageTensor],
    targets: &[ImageTensor],
    rng: &mut ChaCha8Rng,
) -> Result<DomainBatch> {
    let (p, s) = (cfg.patch, cfg.scale);
    let mut z = Vec::with_capacity(cfg.batch_size);
    let mut x = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let y = &targets[rng.random_range(0..targets.len())];
        let (top, left) = patch_positions(y.height(), y.width(), p * s, 1, rng)?[0];
        let small = bicubic_resize(&y.crop(top, left, p * s, p * s)?, 1.0 / s as f64)?;
        z.push(flip_rotate(&small, random_transform(cfg, rng))?);

        let src = &sources[rng.random_range(0..sources.len())];
        let (top, left) = patch_positions(src.height(), src.width(), p, 1, rng)?[0];
        x.push(flip_rotate(&src.crop(top, left, p, p)?, random_transform(cfg, rng))?);
    }
    Ok(DomainBatch { z, x })
}
