use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::{Checkpoint, RngState};
use super::config::{Stage, TrainConfig};
use super::data::{check_sr_pairs, sample_sr_batch};
use super::schedule::lr_schedule_sr;
use super::{abort, save_rotating, TrainOptions};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::imaging::SamplePair;
use crate::losses::{self, ConvFeatureExtractor, FeatureExtractor, SrTerms};
use crate::networks::{stack_images, Discriminator, GeneratorSR};

/// Losses of one SR iteration. Terms whose weight is zero and that are
/// expensive to evaluate (perceptual, adversarial) are reported as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrTraceRow {
    pub iteration: usize,
    pub terms: SrTerms,
    pub total: f64,
    pub d_loss: f64,
    pub lr: f64,
}

impl SrTraceRow {
    pub const HEADER: &'static str = "iteration,per,gan,tv,l1,total,d_loss,lr";

    pub fn to_csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration, t.per, t.gan, t.tv, t.l1, self.total, self.d_loss, self.lr
        )
    }
}

/// Step-wise SR trainer: G_SR against the HR critic on fixed pairs.
pub struct SrTrainer {
    cfg: TrainConfig,
    generator: GeneratorSR,
    critic: Discriminator,
    opt_g: Adam,
    opt_d: Adam,
    rng: ChaCha8Rng,
    iteration: usize,
    pairs: Vec<SamplePair>,
    extractor: Box<dyn FeatureExtractor>,
    trace: Vec<SrTraceRow>,
}

/// RNG stream used for batch sampling (weights use the plain seed).
const SAMPLER_STREAM: u64 = 7;

impl SrTrainer {
    pub fn new(cfg: TrainConfig, pairs: Vec<SamplePair>) -> Result<Self> {
        check_stage(&cfg)?;
        let generator = GeneratorSR::new(cfg.gsr_config(), cfg.seed)?;
        let critic = Discriminator::new(cfg.dy_config(), cfg.seed.wrapping_add(1))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SAMPLER_STREAM);
        Self::assemble(cfg, pairs, generator, critic, 0, None, rng)
    }

    /// Continues from a checkpoint; the result is bit-identical to never
    /// having stopped.
    pub fn resume(ckpt: Checkpoint, pairs: Vec<SamplePair>) -> Result<Self> {
        let cfg = ckpt.config;
        check_stage(&cfg)?;
        let mut generator = GeneratorSR::new(cfg.gsr_config(), cfg.seed)?;
        let mut critic = Discriminator::new(cfg.dy_config(), cfg.seed.wrapping_add(1))?;
        generator.params.check_layout(&ckpt.generator)?;
        critic.params.check_layout(&ckpt.discriminator)?;
        generator.params = ckpt.generator;
        critic.params = ckpt.discriminator;
        let rng = ckpt.rng.to_rng();
        Self::assemble(
            cfg,
            pairs,
            generator,
            critic,
            ckpt.iteration,
            Some((ckpt.opt_g, ckpt.opt_d)),
            rng,
        )
    }

    fn assemble(
        cfg: TrainConfig,
        pairs: Vec<SamplePair>,
        generator: GeneratorSR,
        critic: Discriminator,
        iteration: usize,
        opts: Option<(Adam, Adam)>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        check_sr_pairs(&cfg, &pairs)?;
        let (opt_g, opt_d) = opts.unwrap_or_else(|| {
            let a = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
            (a.clone(), a)
        });
        Ok(SrTrainer {
            cfg,
            generator,
            critic,
            opt_g,
            opt_d,
            rng,
            iteration,
            pairs,
            extractor: Box::new(ConvFeatureExtractor::builtin()),
            trace: Vec::new(),
        })
    }

    /// Replaces the builtin perceptual feature extractor.
    pub fn with_extractor(mut self, ext: Box<dyn FeatureExtractor>) -> Self {
        self.extractor = ext;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn generator(&self) -> &GeneratorSR {
        &self.generator
    }

    pub fn critic(&self) -> &Discriminator {
        &self.critic
    }

    pub fn trace(&self) -> &[SrTraceRow] {
        &self.trace
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            iteration: self.iteration,
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

    /// One critic step (when the adversarial weight is positive) followed by
    /// one generator step. On a non-finite loss the trainer is left untouched.
    pub fn step(&mut self) -> Result<SrTraceRow> {
        let mut rng = self.rng.clone();
        let batch = sample_sr_batch(&self.cfg, &self.pairs, &mut rng)?;
        let lr_refs: Vec<_> = batch.lr.iter().collect();
        let hr_refs: Vec<_> = batch.hr.iter().collect();
        let lr_t = stack_images(&lr_refs)?;
        let hr_t = stack_images(&hr_refs)?;
        let rate = lr_schedule_sr(self.cfg.base_lr, self.iteration);
        let w = self.cfg.weights;
        let adversarial = w.gan > 0.0;

        let mut critic = self.critic.clone();
        let mut opt_d = self.opt_d.clone();
        let mut d_loss = 0.0;
        if adversarial {
            let fake = {
                let tape = Tape::new();
                let b = self.generator.params.bind(&tape, false);
                let x = tape.constant(lr_t.clone());
                let y = self.generator.forward(&tape, &b, x, &batch.sigmas)?;
                (*tape.value(y)).clone()
            };
            let tape = Tape::new();
            let b = critic.params.bind(&tape, true);
            let real = self.critic_input(&tape, tape.constant(hr_t.clone()))?;
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
        let x = tape.constant(lr_t);
        let sr = self.generator.forward(&tape, &b, x, &batch.sigmas)?;
        let hr = tape.constant(hr_t);
        let l1 = losses::l1(&tape, sr, hr)?;
        let tv = losses::tv(&tape, sr, hr)?;
        let mut parts = vec![(w.l1, l1), (w.tv, tv)];
        let mut terms = SrTerms {
            l1: tape.scalar_value(l1),
            tv: tape.scalar_value(tv),
            ..SrTerms::default()
        };
        if w.per > 0.0 {
            let per = losses::perceptual(&tape, self.extractor.as_ref(), sr, hr)?;
            terms.per = tape.scalar_value(per);
            parts.push((w.per, per));
        }
        if adversarial {
            let bd = critic.params.bind(&tape, false);
            let real = self.critic_input(&tape, hr)?;
            let fake = self.critic_input(&tape, sr)?;
            let (s_real, _) = critic.score(&tape, &bd, real, true)?;
            let (s_fake, _) = critic.score(&tape, &bd, fake, true)?;
            let gan = losses::ragan_generator(&tape, s_real, s_fake)?;
            terms.gan = tape.scalar_value(gan);
            parts.push((w.gan, gan));
        }
        let total = losses::sr_composite_loss(&w, &terms)?;
        let loss = tape.weighted_sum(&parts);
        let mut g = tape.backward(loss);
        let grads = b.grads(&tape, &mut g);
        let mut generator = self.generator.clone();
        let mut opt_g = self.opt_g.clone();
        opt_g.step(&mut generator.params, &grads, rate)?;
        generator.renormalize()?;
        generator.params.check_finite()?;
        critic.params.check_finite()?;

        self.generator = generator;
        self.critic = critic;
        self.opt_g = opt_g;
        self.opt_d = opt_d;
        self.rng = rng;
        self.iteration += 1;
        let row = SrTraceRow {
            iteration: self.iteration,
            terms,
            total,
            d_loss,
            lr: rate,
        };
        self.trace.push(row);
        Ok(row)
    }

    /// Trains until `cfg.total` iterations, checkpointing per `opts`.
    pub fn run(&mut self, opts: &TrainOptions) -> Result<Checkpoint> {
        self.run_until(self.cfg.total, opts)
    }

    pub fn run_until(&mut self, until: usize, opts: &TrainOptions) -> Result<Checkpoint> {
        while self.iteration < until {
            match self.step() {
                Ok(row) => {
                    if row.iteration % 50 == 0 || row.iteration == 1 {
                        log::info!(
                            "sr iter {} l1 {:.5} total {:.5} lr {:.2e}",
                            row.iteration,
                            row.terms.l1,
                            row.total,
                            row.lr
                        );
                    }
                    if let Some(dir) = &opts.checkpoint_dir {
                        if row.iteration % self.cfg.checkpoint_every == 0 {
                            save_rotating(&self.checkpoint(), dir, "sr", self.cfg.keep_checkpoints)?;
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
        let mut text = String::from(SrTraceRow::HEADER);
        text.push('\n');
        for r in &self.trace {
            text.push_str(&r.to_csv());
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_stage(cfg: &TrainConfig) -> Result<()> {
    if cfg.stage != Stage::Sr {
        return Err(Error::Config {
            key: "stage".into(),
            message: format!("SR training needs an sr config, got {}", cfg.stage),
        });
    }
    cfg.validate()
}

/// Trains G_SR on `pairs` for `cfg.total` iterations.
pub fn train_sr(cfg: TrainConfig, pairs: Vec<SamplePair>) -> Result<Checkpoint> {
    train_sr_with(cfg, pairs, &TrainOptions::default())
}

pub fn train_sr_with(cfg: TrainConfig, pairs: Vec<SamplePair>, opts: &TrainOptions) -> Result<Checkpoint> {
    SrTrainer::new(cfg, pairs)?.run(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{degrade, DegradationSpec, ImageTensor};

    pub(crate) fn tiny_cfg() -> TrainConfig {
        let mut c = TrainConfig::desk();
        c.features = 4;
        c.blocks = 1;
        c.batch_size = 2;
        c.patch = 8;
        c.dy_width = 2;
        c.total = 6;
        c.weights.per = 0.0;
        c
    }

    fn pairs(n: usize) -> Vec<SamplePair> {
        (0..n)
            .map(|k| {
                let hr = ImageTensor::from_fn(3, 48, 48, |(c, y, x)| {
                    0.5 + 0.4 * ((x as f64 * 0.3 + k as f64).sin() * (y as f64 * 0.2 + c as f64).cos())
                });
                let lr = degrade(&hr, &DegradationSpec::new(4, 0.03, k as u64).unwrap()).unwrap();
                SamplePair::new(lr, hr, 4).unwrap()
            })
            .collect()
    }

    #[test]
    fn deterministic_and_resumable_with_critic() {
        let mut cfg = tiny_cfg();
        cfg.weights.gan = 0.5;
        cfg.weights.highpass_gan = true;
        let a = train_sr(cfg.clone(), pairs(2)).unwrap();
        let b = train_sr(cfg.clone(), pairs(2)).unwrap();
        assert_eq!(a, b);
        let mut t = SrTrainer::new(cfg.clone(), pairs(2)).unwrap();
        t.run_until(3, &TrainOptions::default()).unwrap();
        let ck = Checkpoint::from_archive(&t.checkpoint().to_archive()).unwrap();
        let mut r = SrTrainer::resume(ck, pairs(2)).unwrap();
        assert_eq!(r.run(&TrainOptions::default()).unwrap(), a);
        assert!(a.discriminator != Discriminator::new(cfg.dy_config(), cfg.seed + 1).unwrap().params);
    }

    #[test]
    fn checkpoints_rotate_and_trace_is_written() {
        let mut cfg = tiny_cfg();
        cfg.checkpoint_every = 1;
        cfg.keep_checkpoints = 2;
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            checkpoint_dir: Some(dir.path().join("ck")),
            trace_path: Some(dir.path().join("trace.csv")),
        };
        train_sr_with(cfg, pairs(1), &opts).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(dir.path().join("ck"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["sr_0000005.ckpt", "sr_0000006.ckpt"]);
        let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with(SrTraceRow::HEADER));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(train_sr(tiny_cfg(), vec![]), Err(Error::EmptyDataset(_))));
        assert!(train_sr(TrainConfig::domain(), pairs(1)).is_err());
    }
}
