//! Image-quality metrics, dihedral self-ensemble and dataset reports.

mod metrics;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use metrics::{lpips_distance, psnr, ssim, PSNR_CAP};

use crate::error::{Error, Result};
use crate::imaging::{flip_rotate, flip_rotate_inverse, ImageTensor, SamplePair, D4_ORDER};
use crate::losses::FeatureExtractor;
use crate::networks::GeneratorSR;

/// Averages the model output over the eight flips/rotations of `lr`, each
/// mapped back to the original orientation.
pub fn self_ensemble<F>(model_fn: F, lr: &ImageTensor) -> Result<ImageTensor>
where
    F: Fn(&ImageTensor) -> Result<ImageTensor>,
{
    let mut acc: Option<ImageTensor> = None;
    for t in 0..D4_ORDER {
        let out = flip_rotate_inverse(&model_fn(&flip_rotate(lr, t)?)?, t)?;
        acc = Some(match acc {
            None => out,
            Some(a) => {
                if !a.same_dims(&out) {
                    return Err(Error::shape(format!(
                        "model output for transform {t} is {:?}, earlier outputs {:?}",
                        out.dim(),
                        a.dim()
                    )));
                }
                a.add(&out)?
            }
        });
    }
    Ok(acc.expect("eight transforms").scaled(1.0 / D4_ORDER as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub ensemble: bool,
    /// Pixels removed from every border before scoring.
    pub crop_border: usize,
    /// Noise level passed to the generator; `None` estimates it per image.
    pub sigma: Option<f64>,
}

impl EvalOptions {
    /// Crops `scale` pixels, no ensemble, estimated noise level.
    pub fn for_scale(scale: usize) -> Self {
        EvalOptions {
            ensemble: false,
            crop_border: scale,
            sigma: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_lpips: f64,
    /// Rows that produced metrics.
    pub scored: usize,
}

impl MetricReport {
    /// Aggregates are means over the rows without an error.
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let ok: Vec<_> = rows.iter().filter(|r| r.error.is_none()).collect();
        let n = ok.len() as f64;
        let mean = |f: fn(&MetricRow) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| f(r)).sum::<f64>() / n
            }
        };
        MetricReport {
            mean_psnr: mean(|r| r.psnr),
            mean_ssim: mean(|r| r.ssim),
            mean_lpips: mean(|r| r.lpips),
            scored: ok.len(),
            rows,
        }
    }

    /// `id,psnr,ssim,lpips` per image plus a final `mean` row; failed rows hold NaN.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr,ssim,lpips\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.id, r.psnr, r.ssim, r.lpips));
        }
        s.push_str(&format!(
            "mean,{},{},{}\n",
            self.mean_psnr, self.mean_ssim, self.mean_lpips
        ));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn crop_border(img: &ImageTensor, b: usize) -> Result<ImageTensor> {
    if b == 0 {
        return Ok(img.clone());
    }
    let (h, w) = (img.height(), img.width());
    if h <= 2 * b || w <= 2 * b {
        return Err(Error::shape(format!(
            "{h}x{w} image too small to crop {b} border pixels"
        )));
    }
    img.crop(b, b, h - 2 * b, w - 2 * b)
}

/// PSNR, SSIM and LPIPS of one prediction against its reference.
pub fn score_image(
    ext: &dyn FeatureExtractor,
    sr: &ImageTensor,
    hr: &ImageTensor,
    border: usize,
) -> Result<(f64, f64, f64)> {
    sr.check_same_dims(hr, "prediction vs reference")?;
    let (a, b) = (crop_border(sr, border)?, crop_border(hr, border)?);
    Ok((psnr(&a, &b)?, ssim(&a, &b)?, lpips_distance(ext, &a, &b)?))
}

/// Scores an arbitrary LR→SR function over named pairs. Per-pair failures
/// are recorded in the row instead of aborting the report.
pub fn evaluate_with<F>(
    model_fn: F,
    ext: &dyn FeatureExtractor,
    pairs: &[(String, SamplePair)],
    ensemble: bool,
    border: usize,
) -> Result<MetricReport>
where
    F: Fn(&ImageTensor) -> Result<ImageTensor>,
{
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no evaluation pairs".into()));
    }
    let rows = pairs
        .iter()
        .map(|(id, p)| {
            let scored = if ensemble {
                self_ensemble(&model_fn, &p.lr)
            } else {
                model_fn(&p.lr)
            }
            .and_then(|sr| score_image(ext, &sr, &p.hr, border));
            match scored {
                Ok((psnr, ssim, lpips)) => MetricRow {
                    id: id.clone(),
                    psnr,
                    ssim,
                    lpips,
                    error: None,
                },
                Err(e) => {
                    log::warn!("{id}: {e}");
                    MetricRow {
                        id: id.clone(),
                        psnr: f64::NAN,
                        ssim: f64::NAN,
                        lpips: f64::NAN,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(MetricReport::from_rows(rows))
}

/// Evaluates an SR generator on named pairs.
pub fn evaluate_dataset(
    model: &GeneratorSR,
    ext: &dyn FeatureExtractor,
    pairs: &[(String, SamplePair)],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    evaluate_with(
        |lr| model.infer(lr, opts.sigma),
        ext,
        pairs,
        opts.ensemble,
        opts.crop_border,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{bicubic_resize, bilinear_upsample};
    use crate::losses::ConvFeatureExtractor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(3, h, w, |_| rng.random())
    }

    #[test]
    fn ensemble_of_equivariant_and_constant_models() {
        let lr = rand_img(6, 6, 1);
        let bic = |x: &ImageTensor| bicubic_resize(x, 4.0);
        let plain = bic(&lr).unwrap();
        assert!(self_ensemble(bic, &lr).unwrap().max_abs_diff(&plain) <= 1e-9);
        let c = ImageTensor::constant(3, 5, 5, 0.3);
        let out = self_ensemble(|_| Ok(c.clone()), &lr).unwrap();
        assert!(out.max_abs_diff(&c) < 1e-15);
    }

    #[test]
    fn ensemble_equals_explicit_loop() {
        let lr = rand_img(5, 7, 2);
        // not equivariant: weights depend on position
        let f = |x: &ImageTensor| {
            x.map(|v| v * v)
                .add(&ImageTensor::from_fn(3, x.height(), x.width(), |(_, y, _)| {
                    y as f64 * 0.01
                }))
        };
        let mut acc = ImageTensor::zeros(3, 5, 7);
        for t in 0..8 {
            acc = acc
                .add(&flip_rotate_inverse(&f(&flip_rotate(&lr, t).unwrap()).unwrap(), t).unwrap())
                .unwrap();
        }
        assert!(self_ensemble(f, &lr).unwrap().max_abs_diff(&acc.scaled(0.125)) < 1e-15);
        let bad = |x: &ImageTensor| Ok(ImageTensor::zeros(3, x.height(), 3));
        assert!(self_ensemble(bad, &lr).is_err());
    }

    #[test]
    fn identity_report_and_bad_rows() {
        let ext = ConvFeatureExtractor::builtin();
        let imgs: Vec<_> = (0..3)
            .map(|k| {
                let hr = rand_img(16, 16, k);
                (format!("img{k}"), SamplePair::new(hr.clone(), hr, 1).unwrap())
            })
            .collect();
        let r = evaluate_with(|x| Ok(x.clone()), &ext, &imgs, false, 1).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!((r.mean_psnr, r.mean_ssim, r.mean_lpips), (PSNR_CAP, 1.0, 0.0));
        let mut mixed = imgs.clone();
        mixed.push((
            "small".into(),
            SamplePair::new(rand_img(4, 4, 9), rand_img(4, 4, 9), 1).unwrap(),
        ));
        let r = evaluate_with(|x| Ok(x.clone()), &ext, &mixed, false, 0).unwrap();
        assert_eq!((r.rows.len(), r.scored), (4, 3));
        assert!(r.rows[3].error.is_some());
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().last().unwrap().starts_with("mean,100,1,0"));
        assert!(r.to_json().contains("\"error\""));
    }

    #[test]
    fn ensemble_flag_only_changes_inference() {
        let ext = ConvFeatureExtractor::builtin();
        let pairs: Vec<_> = (0..2)
            .map(|k| {
                let hr = rand_img(24, 24, k + 10);
                let lr = bicubic_resize(&hr, 0.5).unwrap();
                (k.to_string(), SamplePair::new(lr, hr, 2).unwrap())
            })
            .collect();
        let up = |x: &ImageTensor| bilinear_upsample(x, 2);
        let a = evaluate_with(up, &ext, &pairs, false, 2).unwrap();
        let b = evaluate_with(up, &ext, &pairs, true, 2).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!(
                (x.psnr - y.psnr).abs() < 1e-9 && (x.ssim - y.ssim).abs() < 1e-9 && (x.lpips - y.lpips).abs() < 1e-9
            );
        }
        let m = a.rows.iter().map(|r| r.psnr).sum::<f64>() / 2.0;
        assert_eq!(a.mean_psnr, m);
    }
}
