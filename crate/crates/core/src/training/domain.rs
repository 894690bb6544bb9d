use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::{Checkpoint, RngState};
use super::config::{Stage, TrainConfig};
use super::data::{check_domain_sets, sample_domain_batch};
use super::schedule::lr_schedule_domain;
use super::{abort, save_rotating, TrainOptions};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, ImageTensor, SamplePair};
use crate::losses::{self, ConvFeatureExtractor, DomainTerms, FeatureExtractor};
use crate::networks::{stack_images, Discriminator, DomainGenerator};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainTraceRow {
    pub step: usize,
    pub epoch: usize,
    pub terms: DomainTerms,
    pub total: f64,
    pub d_loss: f64,
    pub lr: f64,
}

impl DomainTraceRow {
    pub const HEADER: &'static str = "step,epoch,color,tex,per,total,d_loss,lr";

    pub fn to_csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.epoch, t.color, t.tex, t.per, self.total, self.d_loss, self.lr
        )
    }
}

/// Step-wise domain trainer: G_d learns to turn bicubic downscales of clean
/// images into images that the patch critic cannot tell from source crops.
pub struct DomainTrainer {
    cfg: TrainConfig,
    generator: DomainGenerator,
    critic: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    step: usize,
    sources: Vec<ImageTensor>,
    targets: Vec<ImageTensor>,
    extractor: Box<dyn FeatureExtractor>,
    trace: Vec<DomainTraceRow>,
    freeze_critic: bool,
}

const SAMPLER_STREAM: u64 = 11;

impl DomainTrainer {
    pub fn new(cfg: TrainConfig, sources: Vec<ImageTensor>, targets: Vec<ImageTensor>) -> Result<Self> {
        check_stage(&cfg)?;
        let generator = DomainGenerator::new(cfg.gd_config(), cfg.seed)?;
        let critic = Discriminator::new(cfg.dx_config(), cfg.seed.wrapping_add(1))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SAMPLER_STREAM);
        let opt = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
        Self::assemble(cfg, sources, targets, generator, critic, 0, (opt.clone(), opt), rng)
    }

    pub fn resume(ckpt: Checkpoint, sources: Vec<ImageTensor>, targets: Vec<ImageTensor>) -> Result<Self> {
        let cfg = ckpt.config;
        check_stage(&cfg)?;
        let mut generator = DomainGenerator::new(cfg.gd_config(), cfg.seed)?;
        let mut critic = Discriminator::new(cfg.dx_config(), cfg.seed.wrapping_add(1))?;
        generator.params.check_layout(&ckpt.generator)?;
        critic.params.check_layout(&ckpt.discriminator)?;
        generator.params = ckpt.generator;
        critic.params = ckpt.discriminator;
        let rng = ckpt.rng.to_rng();
        Self::assemble(
            cfg,
            sources,
            targets,
            generator,
            critic,
            ckpt.iteration,
            (ckpt.opt_g, ckpt.opt_d),
            rng,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: TrainConfig,
        sources: Vec<ImageTensor>,
        targets: Vec<ImageTensor>,
        generator: DomainGenerator,
        critic: Discriminator,
        step: usize,
        (opt_g, opt_d): (Adam, Adam),
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        check_domain_sets(&cfg, &sources, &targets)?;
        let min = critic.cfg.min_input();
        if cfg.weights.tex > 0.0 && cfg.patch < min {
            return Err(Error::Config {
                key: "patch".into(),
                message: format!("the patch critic needs crops of at least {min}"),
            });
        }
        Ok(DomainTrainer {
            cfg,
            generator,
            critic,
            opt_g,
            opt_d,
            rng,
            step,
            sources,
            targets,
            extractor: Box::new(ConvFeatureExtractor::builtin()),
            trace: Vec::new(),
            freeze_critic: false,
        })
    }

    pub fn with_extractor(mut self, ext: Box<dyn FeatureExtractor>) -> Self {
        self.extractor = ext;
        self
    }

    /// Stops critic updates (its scores still enter the texture term).
    pub fn freeze_critic(mut self, freeze: bool) -> Self {
        self.freeze_critic = freeze;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One epoch visits every target image once on average.
    pub fn steps_per_epoch(&self) -> usize {
        self.targets.len().div_ceil(self.cfg.batch_size)
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn generator(&self) -> &DomainGenerator {
        &self.generator
    }

    pub fn critic(&self) -> &Discriminator {
        &self.critic
    }

    pub fn trace(&self) -> &[DomainTraceRow] {
        &self.trace
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            iteration: self.step,
            generator: self.generator.params.clone(),
            discriminator: self.critic.params.clone(),
            opt_g: self.opt_g.clone(),
            opt_d: self.opt_d.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    fn critic_input(&self, tape: &Tape, x: Var) -> Result<Var> {
        if self.cfg.weights.highpass_gan {
            losses::high_pass(tape, x, &self.cfg.blur)
        } else {
            Ok(x)
        }
    }

    pub fn step(&mut self) -> Result<DomainTraceRow> {
        let epoch = self.step / self.steps_per_epoch();
        let rate = lr_schedule_domain(self.cfg.base_lr, epoch, self.cfg.total)?;
        let mut rng = self.rng.clone();
        let batch = sample_domain_batch(&self.cfg, &self.sources, &self.targets, &mut rng)?;
        let z_t = stack_images(&batch.z.iter().collect::<Vec<_>>())?;
        let x_t = stack_images(&batch.x.iter().collect::<Vec<_>>())?;
        let w = self.cfg.weights;
        let textured = w.tex > 0.0;

        let mut critic = self.critic.clone();
        let mut opt_d = self.opt_d.clone();
        let mut d_loss = 0.0;
        if textured && !self.freeze_critic {
            let fake = {
                let tape = Tape::new();
                let b = self.generator.params.bind(&tape, false);
                let y = self.generator.forward(&tape, &b, tape.constant(z_t.clone()))?;
                (*tape.value(y)).clone()
            };
            let tape = Tape::new();
            let b = critic.params.bind(&tape, true);
            let real = self.critic_input(&tape, tape.constant(x_t.clone()))?;
            let fake = self.critic_input(&tape, tape.constant(fake))?;
            let (sr, ur) = critic.score(&tape, &b, real, true)?;
            let (sf, uf) = critic.score(&tape, &b, fake, true)?;
            let loss = losses::ragan_discriminator(&tape, sr, sf)?;
            d_loss = tape.scalar_value(loss);
            if !d_loss.is_finite() {
                return Err(Error::NonFinite(format!("critic loss = {d_loss}")));
            }
            let mut g = tape.backward(loss);
            let grads = b.grads(&tape, &mut g);
            opt_d.step(&mut critic.params, &grads, rate)?;
            critic.apply_bn_updates(&ur, self.cfg.bn_momentum);
            critic.apply_bn_updates(&uf, self.cfg.bn_momentum);
        }

        let tape = Tape::new();
        let b = self.generator.params.bind(&tape, true);
        let z = tape.constant(z_t);
        let out = self.generator.forward(&tape, &b, z)?;
        let color = losses::color(&tape, out, z, &self.cfg.blur)?;
        let mut terms = DomainTerms {
            color: tape.scalar_value(color),
            ..DomainTerms::default()
        };
        let mut parts = vec![(w.color, color)];
        if w.per_domain > 0.0 {
            let per = losses::perceptual(&tape, self.extractor.as_ref(), out, z)?;
            terms.per = tape.scalar_value(per);
            parts.push((w.per_domain, per));
        }
        if textured {
            let bd = critic.params.bind(&tape, false);
            let train_mode = !self.freeze_critic;
            let real = self.critic_input(&tape, tape.constant(x_t))?;
            let fake = self.critic_input(&tape, out)?;
            let (s_real, _) = critic.score(&tape, &bd, real, train_mode)?;
            let (s_fake, _) = critic.score(&tape, &bd, fake, train_mode)?;
            let tex = losses::ragan_generator(&tape, s_real, s_fake)?;
            terms.tex = tape.scalar_value(tex);
            parts.push((w.tex, tex));
        }
        let total = losses::domain_composite_loss(&w, &terms)?;
        let loss = tape.weighted_sum(&parts);
        let mut g = tape.backward(loss);
        let grads = b.grads(&tape, &mut g);
        let mut generator = self.generator.clone();
        let mut opt_g = self.opt_g.clone();
        opt_g.step(&mut generator.params, &grads, rate)?;
        generator.params.check_finite()?;
        critic.params.check_finite()?;

        self.generator = generator;
        self.critic = critic;
        self.opt_g = opt_g;
        self.opt_d = opt_d;
        self.rng = rng;
        self.step += 1;
        let row = DomainTraceRow {
            step: self.step,
            epoch,
            terms,
            total,
            d_loss,
            lr: rate,
        };
        self.trace.push(row);
        Ok(row)
    }

    /// Trains for `cfg.total` epochs.
    pub fn run(&mut self, opts: &TrainOptions) -> Result<Checkpoint> {
        self.run_until(self.cfg.total * self.steps_per_epoch(), opts)
    }

    pub fn run_until(&mut self, until_step: usize, opts: &TrainOptions) -> Result<Checkpoint> {
        while self.step < until_step {
            match self.step() {
                Ok(row) => {
                    if row.step % self.steps_per_epoch() == 0 {
                        log::info!(
                            "domain epoch {} color {:.5} total {:.5} lr {:.2e}",
                            row.epoch + 1,
                            row.terms.color,
                            row.total,
                            row.lr
                        );
                    }
                    if let Some(dir) = &opts.checkpoint_dir {
                        if row.step % self.cfg.checkpoint_every == 0 {
                            save_rotating(&self.checkpoint(), dir, "domain", self.cfg.keep_checkpoints)?;
                        }
                    }
                }
                Err(Error::NonFinite(reason)) => return Err(abort(&self.checkpoint(), opts, reason)),
                Err(e) => return Err(e),
            }
        }
        if let Some(path) = &opts.trace_path {
            self.write_trace_csv(path)?;
        }
        Ok(self.checkpoint())
    }

    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from(DomainTraceRow::HEADER);
        text.push('\n');
        for r in &self.trace {
            text.push_str(&r.to_csv());
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_stage(cfg: &TrainConfig) -> Result<()> {
    if cfg.stage != Stage::Domain {
        return Err(Error::Config {
            key: "stage".into(),
            message: format!("domain training needs a domain config, got {}", cfg.stage),
        });
    }
    cfg.validate()
}

/// Trains G_d for `cfg.total` epochs. `sources` are real images of the
/// corrupted domain, `targets` clean high-resolution images.
pub fn train_domain(cfg: TrainConfig, sources: Vec<ImageTensor>, targets: Vec<ImageTensor>) -> Result<Checkpoint> {
    train_domain_with(cfg, sources, targets, &TrainOptions::default())
}

pub fn train_domain_with(
    cfg: TrainConfig,
    sources: Vec<ImageTensor>,
    targets: Vec<ImageTensor>,
    opts: &TrainOptions,
) -> Result<Checkpoint> {
    DomainTrainer::new(cfg, sources, targets)?.run(opts)
}

/// Pairs every HR image with `G_d(B(y))`, its learned realistic degradation.
pub fn generate_lr_dataset(gd: &Checkpoint, hr_images: &[ImageTensor], scale: usize) -> Result<Vec<SamplePair>> {
    let net = gd.domain_generator()?;
    if gd.config.scale != scale {
        return Err(Error::invalid(format!(
            "checkpoint was trained for scale {}, requested {scale}",
            gd.config.scale
        )));
    }
    hr_images
        .iter()
        .enumerate()
        .map(|(i, y)| {
            if y.height() % scale != 0 || y.width() % scale != 0 {
                return Err(Error::shape(format!(
                    "HR image {i} is {}x{}, not divisible by scale {scale}",
                    y.height(),
                    y.width()
                )));
            }
            let z = bicubic_resize(y, 1.0 / scale as f64)?;
            SamplePair::new(net.infer(&z)?, y.clone(), scale)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        let mut c = TrainConfig::domain();
        c.patch = 12;
        c.batch_size = 2;
        c.total = 1;
        c.gd_blocks = 1;
        c.gd_features = 4;
        c.dx_widths = vec![2];
        c
    }

    fn images(n: usize, side: usize, seed: usize) -> Vec<ImageTensor> {
        (0..n)
            .map(|k| {
                ImageTensor::from_fn(3, side, side, |(c, y, x)| {
                    0.5 + 0.3 * ((x as f64 * 0.21 + (k + seed) as f64).sin() * (y as f64 * 0.17 + c as f64).cos())
                })
            })
            .collect()
    }

    #[test]
    fn one_epoch_is_deterministic_with_full_trace() {
        let (src, tgt) = (images(2, 20, 0), images(3, 56, 5));
        let a = train_domain(tiny_cfg(), src.clone(), tgt.clone()).unwrap();
        let b = train_domain(tiny_cfg(), src.clone(), tgt.clone()).unwrap();
        assert_eq!(a, b);
        let mut t = DomainTrainer::new(tiny_cfg(), src, tgt).unwrap();
        t.run(&TrainOptions::default()).unwrap();
        assert_eq!(t.steps_per_epoch(), 2);
        assert_eq!(t.trace().len(), 2);
        assert!(t.trace().iter().all(|r| r.d_loss > 0.0 && r.terms.tex > 0.0));
    }

    #[test]
    fn highpass_flag_filters_critic_inputs() {
        let (src, tgt) = (images(2, 20, 0), images(3, 56, 5));
        let mut hp = tiny_cfg();
        hp.weights.highpass_gan = true;
        let raw = train_domain(tiny_cfg(), src.clone(), tgt.clone()).unwrap();
        let a = train_domain(hp.clone(), src.clone(), tgt.clone()).unwrap();
        let b = train_domain(hp, src, tgt).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.discriminator, raw.discriminator);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let mut cfg = tiny_cfg();
        cfg.total = 2;
        let (src, tgt) = (images(2, 20, 0), images(2, 56, 1));
        let full = train_domain(cfg.clone(), src.clone(), tgt.clone()).unwrap();
        let mut t = DomainTrainer::new(cfg, src.clone(), tgt.clone()).unwrap();
        t.run_until(1, &TrainOptions::default()).unwrap();
        let mut r = DomainTrainer::resume(t.checkpoint(), src, tgt).unwrap();
        assert_eq!(r.run(&TrainOptions::default()).unwrap(), full);
    }

    #[test]
    fn untrained_generator_reproduces_bicubic_downscale() {
        let t = DomainTrainer::new(tiny_cfg(), images(1, 20, 0), images(1, 56, 0)).unwrap();
        let ck = t.checkpoint();
        let hr = images(2, 32, 3);
        let pairs = generate_lr_dataset(&ck, &hr, 4).unwrap();
        for (p, y) in pairs.iter().zip(&hr) {
            assert_eq!(p.hr.dim(), (3, 32, 32));
            assert_eq!(p.lr.dim(), (3, 8, 8));
            assert!(p.lr.max_abs_diff(&bicubic_resize(y, 0.25).unwrap()) <= 1e-3 + 1e-12);
        }
        assert_eq!(pairs, generate_lr_dataset(&ck, &hr, 4).unwrap());
        assert!(generate_lr_dataset(&ck, &hr, 2).is_err());
        assert!(generate_lr_dataset(&ck, &images(1, 30, 0), 4).is_err());
    }
}
