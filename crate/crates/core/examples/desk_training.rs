//! Desk-scale SR training on four synthetic pairs, compared with bicubic upsampling.
//!
//! cargo run --release --example desk_training

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srres::evaluation::psnr;
use srres::imaging::{bicubic_resize, degrade, DegradationSpec, ImageTensor, SamplePair};
use srres::training::{SrTrainer, TrainConfig, TrainOptions};

/// Sum of five random low-frequency sinusoids around mid-gray.
fn waves(seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<[f64; 5]> = (0..5).map(|_| std::array::from_fn(|_| rng.random())).collect();
    ImageTensor::from_fn(3, 64, 64, |(c, y, x)| {
        let v: f64 = comps
            .iter()
            .map(|p| {
                let (fy, fx) = ((p[0] - 0.5) * 0.8, (p[1] - 0.5) * 0.8);
                0.08 * (fy * y as f64 + fx * x as f64 + std::f64::consts::TAU * p[2] + c as f64 * p[3]).sin()
            })
            .sum();
        (0.5 + v).clamp(0.0, 1.0)
    })
}

fn main() -> srres::Result<()> {
    let pairs: Vec<SamplePair> = (0..4)
        .map(|k| {
            let hr = waves(k);
            let lr = degrade(&hr, &DegradationSpec::from_8bit_sigma(4, 4.0, k)?)?;
            SamplePair::new(lr, hr, 4)
        })
        .collect::<srres::Result<_>>()?;
    let start = Instant::now();
    let mut trainer = SrTrainer::new(TrainConfig::desk(), pairs.clone())?;
    trainer.run(&TrainOptions::default())?;
    let trace = trainer.trace();
    for r in trace.iter().step_by(20) {
        println!("iter {:4}  l1 {:.5}  total {:.5}", r.iteration, r.terms.l1, r.total);
    }
    let first = trace[0].terms.l1;
    let last = trace.last().unwrap().terms.l1;
    println!(
        "L1 {first:.5} -> {last:.5} ({:.1}% lower) in {:.1}s",
        100.0 * (1.0 - last / first),
        start.elapsed().as_secs_f64()
    );
    for (i, p) in pairs.iter().enumerate() {
        let sr = trainer.generator().infer(&p.lr, None)?;
        let bic = bicubic_resize(&p.lr, 4.0)?.clipped();
        println!(
            "pair {i}: model {:.2} dB, bicubic {:.2} dB",
            psnr(&sr, &p.hr)?,
            psnr(&bic, &p.hr)?
        );
    }
    Ok(())
}
