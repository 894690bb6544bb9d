//! Domain stage: learn to map bicubic-downscaled clean images to a noisy
//! source domain, then pair HR images with generated LR images.
//!
//! cargo run --release --example domain_stage

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use srres::imaging::{bicubic_resize, estimate_noise_sigma, ImageTensor};
use srres::training::{generate_lr_dataset, DomainTrainer, TrainConfig, TrainOptions};

fn scene(k: usize, side: usize) -> ImageTensor {
    ImageTensor::from_fn(3, side, side, |(c, y, x)| {
        0.5 + 0.3 * ((x as f64 * 0.11 + k as f64).sin() * (y as f64 * 0.09 + c as f64).cos())
    })
}

fn main() -> srres::Result<()> {
    let normal = Normal::new(0.0, 0.04).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sources: Vec<ImageTensor> = (0..4)
        .map(|k| scene(k, 48).add(&ImageTensor::from_fn(3, 48, 48, |_| normal.sample(&mut rng))))
        .collect::<srres::Result<_>>()?;
    let targets: Vec<ImageTensor> = (4..8).map(|k| scene(k, 128)).collect();

    let mut cfg = TrainConfig::domain();
    cfg.patch = 24;
    cfg.batch_size = 4;
    cfg.total = 4;
    cfg.gd_blocks = 2;
    cfg.gd_features = 16;
    cfg.dx_widths = vec![16, 32];
    let mut trainer = DomainTrainer::new(cfg, sources.clone(), targets)?;
    let ckpt = trainer.run(&TrainOptions::default())?;
    for r in trainer.trace() {
        println!(
            "step {:2} epoch {}: color {:.5} tex {:.4} per {:.4} total {:.5} d {:.4} lr {:.1e}",
            r.step, r.epoch, r.terms.color, r.terms.tex, r.terms.per, r.total, r.d_loss, r.lr
        );
    }

    let hr: Vec<ImageTensor> = (10..12).map(|k| scene(k, 96)).collect();
    let pairs = generate_lr_dataset(&ckpt, &hr, 4)?;
    for (p, h) in pairs.iter().zip(&hr) {
        let plain = bicubic_resize(h, 0.25)?;
        println!(
            "generated {}x{} LR: noise estimate {:.4} (bicubic {:.4}, source domain {:.4})",
            p.lr.height(),
            p.lr.width(),
            estimate_noise_sigma(&p.lr)?,
            estimate_noise_sigma(&plain)?,
            estimate_noise_sigma(&sources[0])?
        );
    }
    Ok(())
}
