//! Trains a small SR model, then scores it with and without the geometric
//! self-ensemble and writes the CSV and JSON reports.
//!
//! cargo run --release --example evaluate

use srres::evaluation::{evaluate_dataset, evaluate_with, EvalOptions};
use srres::imaging::{bicubic_resize, degrade, DegradationSpec, ImageTensor, SamplePair};
use srres::losses::ConvFeatureExtractor;
use srres::training::{train_sr, TrainConfig};

fn scene(k: usize) -> ImageTensor {
    ImageTensor::from_fn(3, 64, 64, |(c, y, x)| {
        0.5 + 0.25 * ((x as f64 * 0.15 + k as f64).sin() + (y as f64 * 0.12 + c as f64).cos()) / 2.0
    })
}

fn main() -> srres::Result<()> {
    let data: Vec<(String, SamplePair)> = (0..4)
        .map(|k| {
            let hr = scene(k);
            let lr = degrade(&hr, &DegradationSpec::from_8bit_sigma(4, 4.0, k as u64)?)?;
            Ok((format!("img{k}"), SamplePair::new(lr, hr, 4)?))
        })
        .collect::<srres::Result<_>>()?;
    let mut cfg = TrainConfig::desk();
    cfg.features = 16;
    cfg.total = 60;
    let ckpt = train_sr(cfg, data.iter().map(|(_, p)| p.clone()).collect())?;
    let g = ckpt.sr_generator()?;
    let ext = ConvFeatureExtractor::builtin();

    let bicubic = evaluate_with(|lr| Ok(bicubic_resize(lr, 4.0)?.clipped()), &ext, &data, false, 4)?;
    let plain = evaluate_dataset(&g, &ext, &data, &EvalOptions::for_scale(4))?;
    let ensemble = evaluate_dataset(
        &g,
        &ext,
        &data,
        &EvalOptions {
            ensemble: true,
            ..EvalOptions::for_scale(4)
        },
    )?;
    for (name, r) in [("bicubic", &bicubic), ("model", &plain), ("model+ensemble", &ensemble)] {
        println!(
            "{name:<15} PSNR {:.2} dB  SSIM {:.4}  LPIPS {:.4}",
            r.mean_psnr, r.mean_ssim, r.mean_lpips
        );
    }
    let dir = std::env::temp_dir();
    ensemble.write_csv(dir.join("srres-report.csv"))?;
    ensemble.write_json(dir.join("srres-report.json"))?;
    print!("{}", ensemble.to_csv());
    Ok(())
}
