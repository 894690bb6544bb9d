use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::{Stage, TrainConfig};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::networks::{DomainGenerator, GeneratorSR, Params};

pub const CHECKPOINT_VERSION: u32 = 1;
const KIND: &str = "checkpoint";

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn to_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn seed_hex(&self) -> String {
        self.seed.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn parse_seed(hex: &str) -> Result<[u8; 32]> {
        let bad = || Error::Format(format!("bad rng seed `{hex}`"));
        if hex.len() != 64 {
            return Err(bad());
        }
        let mut out = [0u8; 32];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(hex.get(2 * i..2 * i + 2).ok_or_else(bad)?, 16).map_err(|_| bad())?;
        }
        Ok(out)
    }
}

/// Complete training state of one stage: the generator/critic pair of that
/// stage, both optimizers, the step counter and the sampling RNG.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Optimizer steps taken so far.
    pub iteration: usize,
    pub generator: Params,
    pub discriminator: Params,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new();
        a.set_meta("kind", KIND);
        a.set_meta("checkpoint_version", CHECKPOINT_VERSION);
        a.set_meta("iteration", self.iteration);
        a.set_meta("rng.seed", self.rng.seed_hex());
        a.set_meta("rng.stream", self.rng.stream);
        a.set_meta("rng.word_pos", self.rng.word_pos);
        for (k, v) in self.config.to_pairs() {
            a.set_meta(format!("cfg.{k}"), v);
        }
        self.generator.store(&mut a, "g/");
        self.discriminator.store(&mut a, "d/");
        self.opt_g.store(&mut a, "opt_g/");
        self.opt_d.store(&mut a, "opt_d/");
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let kind = a.meta("kind")?;
        if kind != KIND {
            return Err(Error::Format(format!("archive is a `{kind}`, not a {KIND}")));
        }
        let found: u32 = a.meta_as("checkpoint_version")?;
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = TrainConfig::from_pairs(
            a.meta
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("cfg.").map(|k| (k, v.as_str()))),
        )?;
        Ok(Checkpoint {
            config,
            iteration: a.meta_as("iteration")?,
            generator: Params::restore(a, "g/"),
            discriminator: Params::restore(a, "d/"),
            opt_g: Adam::restore(a, "opt_g/")?,
            opt_d: Adam::restore(a, "opt_d/")?,
            rng: RngState {
                seed: RngState::parse_seed(a.meta("rng.seed")?)?,
                stream: a.meta_as("rng.stream")?,
                word_pos: a.meta_as("rng.word_pos")?,
            },
        })
    }

    /// The trained SR generator of an SR-stage checkpoint.
    pub fn sr_generator(&self) -> Result<GeneratorSR> {
        self.require(Stage::Sr)?;
        let mut g = GeneratorSR::new(self.config.gsr_config(), 0)?;
        g.params.check_layout(&self.generator)?;
        g.params = self.generator.clone();
        Ok(g)
    }

    /// The trained domain generator of a domain-stage checkpoint.
    pub fn domain_generator(&self) -> Result<DomainGenerator> {
        self.require(Stage::Domain)?;
        let mut g = DomainGenerator::new(self.config.gd_config(), 0)?;
        g.params.check_layout(&self.generator)?;
        g.params = self.generator.clone();
        Ok(g)
    }

    fn require(&self, stage: Stage) -> Result<()> {
        if self.config.stage != stage {
            return Err(Error::invalid(format!(
                "expected a {stage}-stage checkpoint, got a {} one",
                self.config.stage
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    c.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
