//! Super-resolve a PNG with a checkpoint: estimated vs. supplied noise level,
//! and the eight-fold geometric self-ensemble.
//!
//! cargo run --release --example inference

use srres::evaluation::{psnr, self_ensemble};
use srres::imaging::{degrade, load_png, save_png, DegradationSpec, ImageTensor};
use srres::training::{load_checkpoint, save_checkpoint, train_sr, TrainConfig};

fn main() -> srres::Result<()> {
    let dir = std::env::temp_dir().join("srres-inference");
    std::fs::create_dir_all(&dir).map_err(|source| srres::Error::Io {
        path: dir.clone(),
        source,
    })?;
    let hr = ImageTensor::from_fn(3, 96, 96, |(c, y, x)| {
        0.5 + 0.3 * ((x as f64 * 0.2).sin() * (y as f64 * 0.15 + c as f64).cos())
    });
    let pair = srres::imaging::SamplePair::new(
        degrade(&hr, &DegradationSpec::from_8bit_sigma(4, 6.0, 0)?)?,
        hr.clone(),
        4,
    )?;
    save_png(&pair.lr, dir.join("lr.png"))?;

    let mut cfg = TrainConfig::desk();
    cfg.features = 8;
    cfg.total = 40;
    save_checkpoint(&train_sr(cfg, vec![pair])?, dir.join("model.ckpt"))?;

    let g = load_checkpoint(dir.join("model.ckpt"))?.sr_generator()?;
    let lr = load_png(dir.join("lr.png"))?;
    let outputs = [
        ("estimated sigma", g.infer(&lr, None)?),
        ("sigma 6/255", g.infer(&lr, Some(6.0 / 255.0))?),
        ("self-ensemble", self_ensemble(|x| g.infer(x, None), &lr)?),
    ];
    for (name, sr) in &outputs {
        println!(
            "{name:<16} {}x{} -> {}x{}, PSNR {:.2} dB",
            lr.height(),
            lr.width(),
            sr.height(),
            sr.width(),
            psnr(sr, &hr)?
        );
    }
    save_png(&outputs[2].1, dir.join("sr.png"))?;
    println!("wrote {}", dir.join("sr.png").display());
    Ok(())
}
