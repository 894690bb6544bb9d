//! The fixed convolutional feature extractor behind the perceptual loss and
//! the LPIPS-style distance: save, reload, truncate and compare distortions.
//!
//! cargo run --example feature_extractor

use srres::evaluation::lpips_distance;
use srres::imaging::{gaussian_blur, BlurConfig, ImageTensor};
use srres::losses::{perceptual_loss, ConvFeatureExtractor};

fn main() -> srres::Result<()> {
    let ext = ConvFeatureExtractor::builtin();
    let path = std::env::temp_dir().join("srres-features.arc");
    ext.save(&path)?;
    let loaded = ConvFeatureExtractor::load(&path)?;
    assert_eq!(loaded, ext);

    let img = ImageTensor::from_fn(
        3,
        32,
        32,
        |(c, y, x)| if (x / 4 + y / 4 + c) % 2 == 0 { 0.3 } else { 0.7 },
    );
    let blurred = gaussian_blur(
        &img,
        &BlurConfig {
            kernel_size: 5,
            sigma: 1.5,
        },
    )?;
    let shifted = img.map(|v| v + 0.05);
    for (name, other) in [("blur", &blurred), ("brightness +0.05", &shifted)] {
        println!(
            "{name:<17} LPIPS {:.4}  perceptual L1 {:.4}  shallow-only perceptual {:.4}",
            lpips_distance(&ext, &img, other)?,
            perceptual_loss(&ext, std::slice::from_ref(&img), std::slice::from_ref(other))?,
            perceptual_loss(
                &ext.clone().truncated(1)?,
                std::slice::from_ref(&img),
                std::slice::from_ref(other)
            )?
        );
    }
    Ok(())
}
