//! Interrupt SR training, resume from the saved checkpoint, and check the
//! result is bit-identical to an uninterrupted run.
//!
//! cargo run --release --example checkpoint_resume

use srres::imaging::{degrade, DegradationSpec, ImageTensor, SamplePair};
use srres::training::{Checkpoint, SrTrainer, TrainConfig, TrainOptions};

fn main() -> srres::Result<()> {
    let pairs: Vec<SamplePair> = (0..3)
        .map(|k| {
            let hr = ImageTensor::from_fn(3, 64, 64, |(c, y, x)| {
                0.5 + 0.3 * ((x * (k + 1)) as f64 * 0.1).sin() * ((y + c) as f64 * 0.13).cos()
            });
            SamplePair::new(degrade(&hr, &DegradationSpec::new(4, 0.02, k as u64)?)?, hr, 4)
        })
        .collect::<srres::Result<_>>()?;
    let mut cfg = TrainConfig::desk();
    cfg.features = 8;
    cfg.total = 40;
    cfg.weights.gan = 1.0;
    cfg.dy_width = 8;

    let dir = std::env::temp_dir().join("srres-resume");
    std::fs::create_dir_all(&dir).map_err(|source| srres::Error::Io {
        path: dir.clone(),
        source,
    })?;
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.clone()),
        trace_path: None,
    };
    let whole = SrTrainer::new(cfg.clone(), pairs.clone())?.run(&TrainOptions::default())?;

    let mut first = SrTrainer::new(cfg, pairs.clone())?;
    first.run_until(25, &opts)?;
    let path = dir.join("interrupted.ckpt");
    first.checkpoint().save(&path)?;
    let restored = Checkpoint::load(&path)?;
    println!(
        "restored iteration {}, rng word {}",
        restored.iteration, restored.rng.word_pos
    );
    let resumed = SrTrainer::resume(restored, pairs)?.run(&TrainOptions::default())?;

    let same = resumed.to_archive().to_bytes() == whole.to_archive().to_bytes();
    println!("resumed run identical to uninterrupted run: {same}");
    Ok(())
}
