//! Synthesizes LR observations `Y = H X + n` at the three supported scales
//! and recovers the noise level from each one.
//!
//! cargo run --example degrade

use srres::imaging::{bicubic_resize, degrade, estimate_noise_sigma, save_png, DegradationSpec, ImageTensor};

fn main() -> srres::Result<()> {
    let hr = ImageTensor::from_fn(3, 128, 128, |(c, y, x)| {
        let (y, x) = (y as f64 / 128.0, x as f64 / 128.0);
        0.5 + 0.2 * (6.0 * x + c as f64).sin() * (4.0 * y).cos()
    });
    let out = std::env::temp_dir().join("srres-degrade");
    std::fs::create_dir_all(&out).map_err(|e| srres::Error::Io {
        path: out.clone(),
        source: e,
    })?;
    for scale in [1, 2, 4] {
        for sigma_255 in [0.0, 8.0] {
            let spec = DegradationSpec::from_8bit_sigma(scale, sigma_255, 7)?;
            let lr = degrade(&hr, &spec)?;
            let clean = bicubic_resize(&hr, 1.0 / scale as f64)?;
            let residual = lr.sub(&clean)?;
            let std = (residual.map(|v| v * v).mean()).sqrt();
            let est = estimate_noise_sigma(&lr)?;
            println!(
                "scale {scale} sigma {sigma_255:>3}/255: {}x{} LR, noise std {:.2}/255, estimated {:.2}/255",
                lr.height(),
                lr.width(),
                std * 255.0,
                est * 255.0
            );
            save_png(&lr, out.join(format!("lr_x{scale}_s{sigma_255}.png")))?;
        }
    }
    println!("images written to {}", out.display());
    Ok(())
}
