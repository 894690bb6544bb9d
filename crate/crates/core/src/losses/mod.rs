//! Training objectives. Every norm is divided by its element count, so loss
//! magnitudes do not depend on patch size.
//!
//! Each term exists twice: as a tape function (`l1`, `tv`, ...) used inside
//! training, and as a plain function over image batches (`l1_loss`, ...).

mod features;

pub use features::{ConvFeatureExtractor, ConvLayer, FeatureExtractor, IdentityExtractor, BUILTIN_SEED};

use ndarray::{Array4, IxDyn};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::{gaussian_kernel, BlurConfig, ImageTensor};
use crate::networks::stack_images;

/// Lower bound applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub per: f64,
    pub gan: f64,
    pub tv: f64,
    pub l1: f64,
    pub color: f64,
    pub tex: f64,
    pub per_domain: f64,
    /// Feed only the high band of images to the critic (D_y or D_x).
    pub highpass_gan: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            per: 1.0,
            gan: 1.0,
            tv: 1.0,
            l1: 10.0,
            color: 1.0,
            tex: 0.005,
            per_domain: 0.01,
            highpass_gan: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_per", self.per),
            ("w_gan", self.gan),
            ("w_tv", self.tv),
            ("w_l1", self.l1),
            ("w_color", self.color),
            ("w_tex", self.tex),
            ("w_per_d", self.per_domain),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!(
                    "loss weight {name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Values of the SR objective's terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SrTerms {
    pub per: f64,
    pub gan: f64,
    pub tv: f64,
    pub l1: f64,
}

/// Values of the domain objective's terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DomainTerms {
    pub color: f64,
    pub tex: f64,
    pub per: f64,
}

fn check_finite(terms: &[(&str, f64)]) -> Result<()> {
    match terms.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(Error::NonFinite(format!("loss term {name} = {v}"))),
        None => Ok(()),
    }
}

/// `w_per·L_per + w_gan·L_GAN + w_tv·L_tv + w_l1·L_1`.
pub fn sr_composite_loss(w: &LossWeights, t: &SrTerms) -> Result<f64> {
    check_finite(&[("per", t.per), ("gan", t.gan), ("tv", t.tv), ("l1", t.l1)])?;
    Ok(w.per * t.per + w.gan * t.gan + w.tv * t.tv + w.l1 * t.l1)
}

/// `w_color·L_color + w_tex·L_tex + w_per_d·L_per`.
pub fn domain_composite_loss(w: &LossWeights, t: &DomainTerms) -> Result<f64> {
    check_finite(&[("color", t.color), ("tex", t.tex), ("per", t.per)])?;
    Ok(w.color * t.color + w.tex * t.tex + w.per_domain * t.per)
}

// ---- tape functions --------------------------------------------------------

fn check_same(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    check_same(tape, a, b, "l1 loss")?;
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    Ok(tape.mean(d))
}

/// `(Σ|∇ₕsr − ∇ₕhr| + Σ|∇ᵥsr − ∇ᵥhr|) / numel(sr)` with forward differences.
pub fn tv(tape: &Tape, sr: Var, hr: Var) -> Result<Var> {
    check_same(tape, sr, hr, "tv loss")?;
    let s = tape.shape(sr);
    if s.len() != 4 {
        return Err(Error::shape(format!("tv loss expects NCHW, got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let count = s.iter().product::<usize>() as f64;
    let mut parts = Vec::new();
    let diff = |x: Var, horizontal: bool| {
        if horizontal {
            let a = tape.crop(x, 0, 1, h, w - 1);
            let b = tape.crop(x, 0, 0, h, w - 1);
            tape.sub(a, b)
        } else {
            let a = tape.crop(x, 1, 0, h - 1, w);
            let b = tape.crop(x, 0, 0, h - 1, w);
            tape.sub(a, b)
        }
    };
    for (horizontal, extent) in [(true, w), (false, h)] {
        if extent < 2 {
            continue;
        }
        let e = tape.sub(diff(sr, horizontal), diff(hr, horizontal));
        let e = tape.abs(e);
        parts.push(tape.sum(e));
    }
    if parts.is_empty() {
        return Ok(tape.constant(crate::autograd::scalar(0.0)));
    }
    let terms: Vec<(f64, Var)> = parts.into_iter().map(|p| (1.0 / count, p)).collect();
    Ok(tape.weighted_sum(&terms))
}

/// Mean over feature layers of the mean absolute feature difference.
pub fn perceptual(tape: &Tape, ext: &dyn FeatureExtractor, sr: Var, hr: Var) -> Result<Var> {
    check_same(tape, sr, hr, "perceptual loss")?;
    let fa = ext.features(tape, sr)?;
    let fb = ext.features(tape, hr)?;
    let n = fa.len() as f64;
    let terms = fa
        .into_iter()
        .zip(fb)
        .map(|(a, b)| l1(tape, a, b).map(|v| (1.0 / n, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.weighted_sum(&terms))
}

/// `−E[log σ(a − E[b])]` over all score elements.
fn neg_log_rel(tape: &Tape, a: Var, b: Var) -> Var {
    let mb = tape.mean(b);
    let d = tape.sub_scalar(a, mb);
    let p = tape.sigmoid(d);
    let l = tape.log_clamped(p, LOG_FLOOR);
    let m = tape.mean(l);
    tape.scale(m, -1.0)
}

fn check_scores(tape: &Tape, real: Var, fake: Var) -> Result<()> {
    for v in [real, fake] {
        let x = tape.value(v);
        if x.is_empty() {
            return Err(Error::EmptyDataset("score batch is empty".into()));
        }
        if x.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("discriminator score".into()));
        }
    }
    Ok(())
}

/// Relativistic-average generator loss
/// `−E_y[log(1 − D(y, ŷ))] − E_ŷ[log D(ŷ, y)]`, with `1 − σ(t)` computed as `σ(−t)`.
pub fn ragan_generator(tape: &Tape, real: Var, fake: Var) -> Result<Var> {
    check_scores(tape, real, fake)?;
    let neg_real = tape.scale(real, -1.0);
    let neg_fake = tape.scale(fake, -1.0);
    // 1 − σ(r − E f) = σ(−r − E[−f])
    let a = neg_log_rel(tape, neg_real, neg_fake);
    let b = neg_log_rel(tape, fake, real);
    Ok(tape.add(a, b))
}

/// Relativistic-average critic loss `−E_y[log D(y, ŷ)] − E_ŷ[log(1 − D(ŷ, y))]`.
pub fn ragan_discriminator(tape: &Tape, real: Var, fake: Var) -> Result<Var> {
    check_scores(tape, real, fake)?;
    let a = neg_log_rel(tape, real, fake);
    let neg_real = tape.scale(real, -1.0);
    let neg_fake = tape.scale(fake, -1.0);
    let b = neg_log_rel(tape, neg_fake, neg_real);
    Ok(tape.add(a, b))
}

/// Depthwise Gaussian blur with reflection padding, matching `imaging::gaussian_blur`.
pub fn blur(tape: &Tape, x: Var, cfg: &BlurConfig) -> Result<Var> {
    let k = gaussian_kernel(cfg)?;
    let s = tape.shape(x);
    let c = s[1];
    let ks = cfg.kernel_size;
    let mut w = Array4::<f64>::zeros((c, c, ks, ks));
    for ch in 0..c {
        w.slice_mut(ndarray::s![ch, ch, .., ..]).assign(&k);
    }
    let p = ks / 2;
    if s[2] <= p || s[3] <= p {
        return Err(Error::shape(format!(
            "{}x{} image too small for a {ks}x{ks} blur",
            s[2], s[3]
        )));
    }
    let padded = tape.reflect_pad(x, p);
    let w = tape.constant(w.into_dyn());
    Ok(tape.conv2d(padded, w, None, 1))
}

/// `x − blur(x)`.
pub fn high_pass(tape: &Tape, x: Var, cfg: &BlurConfig) -> Result<Var> {
    let low = blur(tape, x, cfg)?;
    Ok(tape.sub(x, low))
}

/// L1 between low bands.
pub fn color(tape: &Tape, a: Var, b: Var, cfg: &BlurConfig) -> Result<Var> {
    check_same(tape, a, b, "color loss")?;
    let la = blur(tape, a, cfg)?;
    let lb = blur(tape, b, cfg)?;
    l1(tape, la, lb)
}

// ---- batch functions -------------------------------------------------------

fn pair_batch(tape: &Tape, a: &[ImageTensor], b: &[ImageTensor]) -> Result<(Var, Var)> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("batches of {} and {} images", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        x.check_same_dims(y, "loss operands")?;
    }
    let sa = stack_images(&a.iter().collect::<Vec<_>>())?;
    let sb = stack_images(&b.iter().collect::<Vec<_>>())?;
    Ok((tape.constant(sa), tape.constant(sb)))
}

fn eval_pair(a: &[ImageTensor], b: &[ImageTensor], f: impl Fn(&Tape, Var, Var) -> Result<Var>) -> Result<f64> {
    let tape = Tape::new();
    let (x, y) = pair_batch(&tape, a, b)?;
    let v = f(&tape, x, y)?;
    Ok(tape.scalar_value(v))
}

pub fn l1_loss(a: &[ImageTensor], b: &[ImageTensor]) -> Result<f64> {
    eval_pair(a, b, l1)
}

pub fn tv_loss(sr: &[ImageTensor], hr: &[ImageTensor]) -> Result<f64> {
    eval_pair(sr, hr, tv)
}

pub fn perceptual_loss(ext: &dyn FeatureExtractor, sr: &[ImageTensor], hr: &[ImageTensor]) -> Result<f64> {
    eval_pair(sr, hr, |t, a, b| perceptual(t, ext, a, b))
}

pub fn color_loss(a: &[ImageTensor], b: &[ImageTensor], cfg: &BlurConfig) -> Result<f64> {
    eval_pair(a, b, |t, x, y| color(t, x, y, cfg))
}

fn eval_scores(real: &[f64], fake: &[f64], f: impl Fn(&Tape, Var, Var) -> Result<Var>) -> Result<f64> {
    let tape = Tape::new();
    let r = tape.constant(Tensor::from_shape_vec(IxDyn(&[real.len()]), real.to_vec()).unwrap());
    let g = tape.constant(Tensor::from_shape_vec(IxDyn(&[fake.len()]), fake.to_vec()).unwrap());
    let v = f(&tape, r, g)?;
    Ok(tape.scalar_value(v))
}

pub fn ragan_generator_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    eval_scores(real_scores, fake_scores, ragan_generator)
}

pub fn ragan_discriminator_loss(real_scores: &[f64], fake_scores: &[f64]) -> Result<f64> {
    eval_scores(real_scores, fake_scores, ragan_discriminator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::check;
    use crate::imaging::frequency_split;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::LN_2;

    fn rand_img(c: usize, h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_| rng.random())
    }

    fn rnd(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>())
    }

    #[test]
    fn l1_values() {
        let a = [ImageTensor::constant(3, 4, 4, 0.2)];
        let b = [ImageTensor::constant(3, 4, 4, 0.5)];
        assert!((l1_loss(&a, &b).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let (x, y) = (rand_img(3, 5, 5, 1), rand_img(3, 5, 5, 2));
        let xy = l1_loss(std::slice::from_ref(&x), std::slice::from_ref(&y)).unwrap();
        assert_eq!(xy, l1_loss(&[y], &[x]).unwrap());
        assert!(l1_loss(&a, &[ImageTensor::zeros(3, 4, 5)]).is_err());
    }

    #[test]
    fn tv_values() {
        let c1 = [ImageTensor::constant(1, 4, 4, 0.1)];
        let c2 = [ImageTensor::constant(1, 4, 4, 0.9)];
        assert_eq!(tv_loss(&c1, &c2).unwrap(), 0.0);
        // 2×2 unit ramp [[0,1],[0,1]] vs constant: two horizontal differences of 1,
        // vertical differences 0, divided by 4 elements
        let ramp = [ImageTensor::from_fn(1, 2, 2, |(_, _, x)| x as f64)];
        let flat = [ImageTensor::constant(1, 2, 2, 0.5)];
        assert!((tv_loss(&ramp, &flat).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(tv_loss(&ramp, &ramp).unwrap(), 0.0);
    }

    #[test]
    fn perceptual_with_identity_is_l1() {
        let a = [rand_img(3, 8, 8, 3), rand_img(3, 8, 8, 4)];
        let b = [rand_img(3, 8, 8, 5), rand_img(3, 8, 8, 6)];
        let p = perceptual_loss(&IdentityExtractor, &a, &b).unwrap();
        assert!((p - l1_loss(&a, &b).unwrap()).abs() < 1e-15);
        let ext = ConvFeatureExtractor::builtin();
        assert_eq!(perceptual_loss(&ext, &a, &a).unwrap(), 0.0);
        assert!(perceptual_loss(&ext, &a, &b).unwrap() > 0.0);
        assert!(perceptual_loss(&ext, &[rand_img(1, 8, 8, 1)], &[rand_img(1, 8, 8, 2)]).is_err());
    }

    #[test]
    fn ragan_closed_forms() {
        let s = [0.3, 0.3, 0.3];
        let g = ragan_generator_loss(&s, &s).unwrap();
        let d = ragan_discriminator_loss(&s, &s).unwrap();
        assert!((g - 2.0 * LN_2).abs() < 1e-12);
        assert!((d - 2.0 * LN_2).abs() < 1e-12);
        assert!((g + d - 4.0 * LN_2).abs() < 1e-12);
        // the generator wins when fakes score 40 above reals
        assert!(ragan_generator_loss(&[0.0], &[40.0]).unwrap() < 1e-12);
        assert!(ragan_discriminator_loss(&[40.0], &[0.0]).unwrap() < 1e-12);
        // reals 40 above fakes: both log arguments hit the 1e-12 floor
        let sat = ragan_generator_loss(&[40.0], &[0.0]).unwrap();
        assert!((sat - 2.0 * 1e12f64.ln()).abs() < 1e-9, "{sat}");
        assert!(ragan_generator_loss(&[], &[1.0]).is_err());
        assert!(ragan_generator_loss(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn color_values() {
        let cfg = BlurConfig::default();
        let a = [ImageTensor::constant(3, 8, 8, 0.2)];
        let b = [ImageTensor::constant(3, 8, 8, 0.5)];
        assert!((color_loss(&a, &b, &cfg).unwrap() - 0.3).abs() < 1e-12);
        let x = rand_img(3, 9, 7, 7);
        assert_eq!(
            color_loss(std::slice::from_ref(&x), std::slice::from_ref(&x), &cfg).unwrap(),
            0.0
        );
        // the tape blur equals the imaging blur
        let y = rand_img(3, 9, 7, 8);
        let (lx, _) = frequency_split(&x, &cfg).unwrap();
        let (ly, _) = frequency_split(&y, &cfg).unwrap();
        let want = l1_loss(&[lx], &[ly]).unwrap();
        assert!((color_loss(&[x], &[y], &cfg).unwrap() - want).abs() < 1e-14);
    }

    /// The reflect-padded blur is diagonalized by cosines `cos(πk·j/(n−1))`,
    /// each scaled by the kernel's frequency response. Adding such a mode to
    /// an image changes the color loss by exactly `|G|·mean|mode|`, which is
    /// tiny for the mode nearest the response's zero.
    #[test]
    fn color_loss_of_a_high_band_mode() {
        let cfg = BlurConfig::default();
        let g1: Vec<f64> = (-2i32..=2).map(|d| (-(d * d) as f64 / 4.5).exp()).collect();
        let norm: f64 = g1.iter().sum();
        let (n, k) = (25usize, 13usize);
        let omega = std::f64::consts::PI * k as f64 / (n - 1) as f64;
        let response: f64 = g1
            .iter()
            .zip(-2i32..=2)
            .map(|(g, d)| g * (omega * d as f64).cos())
            .sum::<f64>()
            / norm;
        let base = rand_img(1, 6, n, 9);
        let amp = 0.1;
        let mode = ImageTensor::from_fn(1, 6, n, |(_, _, x)| amp * (omega * x as f64).cos());
        let shifted = base.add(&mode).unwrap();
        let got = color_loss(&[base], &[shifted], &cfg).unwrap();
        let want = response.abs() * mode.data().mapv(f64::abs).mean().unwrap();
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        assert!(response.abs() < 1e-3, "{response}");
    }

    #[test]
    fn composites() {
        let w = LossWeights::default();
        assert_eq!(sr_composite_loss(&w, &SrTerms::default()).unwrap(), 0.0);
        let t = SrTerms {
            per: 0.1,
            gan: 0.2,
            tv: 0.3,
            l1: 0.05,
        };
        assert!((sr_composite_loss(&w, &t).unwrap() - 1.1).abs() < 1e-15);
        let t2 = SrTerms { l1: 0.1, ..t };
        assert!((sr_composite_loss(&w, &t2).unwrap() - sr_composite_loss(&w, &t).unwrap() - 0.5).abs() < 1e-15);
        let d = DomainTerms {
            color: 1.0,
            tex: 1.0,
            per: 1.0,
        };
        assert!((domain_composite_loss(&w, &d).unwrap() - 1.015).abs() < 1e-15);
        let c = DomainTerms {
            color: 0.7,
            ..Default::default()
        };
        assert_eq!(domain_composite_loss(&w, &c).unwrap(), 0.7);
        let bad = SrTerms { tv: f64::INFINITY, ..t };
        let err = sr_composite_loss(&w, &bad).unwrap_err().to_string();
        assert!(err.contains("tv"), "{err}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let ins = [rnd(&[2, 3, 4, 4], 10), rnd(&[2, 3, 4, 4], 11)];
        let ext = ConvFeatureExtractor::builtin();
        type Build = Box<dyn Fn(&Tape, Var, Var) -> Var>;
        let cases: Vec<(&str, Build)> = vec![
            ("l1", Box::new(|t, a, b| l1(t, a, b).unwrap())),
            ("tv", Box::new(|t, a, b| tv(t, a, b).unwrap())),
            (
                "perceptual",
                Box::new(move |t, a, b| perceptual(t, &ext, a, b).unwrap()),
            ),
            (
                "color",
                Box::new(|t, a, b| {
                    color(
                        t,
                        a,
                        b,
                        &BlurConfig {
                            kernel_size: 3,
                            sigma: 1.0,
                        },
                    )
                    .unwrap()
                }),
            ),
        ];
        for (name, f) in &cases {
            let err = check(&ins, 1e-6, |t, v| f(t, v[0], v[1]));
            assert!(err < 1e-6, "{name}: {err}");
        }
        let scores = [rnd(&[5], 12), rnd(&[5], 13)];
        for (name, f) in [
            ("ragan_g", ragan_generator as fn(&Tape, Var, Var) -> Result<Var>),
            ("ragan_d", ragan_discriminator),
        ] {
            let err = check(&scores, 1e-6, |t, v| f(t, v[0], v[1]).unwrap());
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}
