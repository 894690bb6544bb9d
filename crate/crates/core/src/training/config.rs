use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::BlurConfig;
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorConfig, DomainGeneratorConfig, GeneratorSRConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Domain,
    Sr,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Domain => "domain",
            Stage::Sr => "sr",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "domain" => Ok(Stage::Domain),
            "sr" => Ok(Stage::Sr),
            _ => Err(format!("unknown stage `{s}` (expected domain or sr)")),
        }
    }
}

/// All training settings of one stage.
///
/// `patch` is the source crop side for the domain stage and the LR patch side
/// for the SR stage; `total` counts epochs (domain) or iterations (SR).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub seed: u64,
    pub scale: usize,
    pub batch_size: usize,
    pub patch: usize,
    pub total: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    pub flips: bool,
    pub rot90: bool,
    pub mixup: bool,
    pub mixup_alpha: f64,
    pub mixup_prob: f64,
    pub checkpoint_every: usize,
    pub keep_checkpoints: usize,
    pub bn_momentum: f64,
    pub blur: BlurConfig,
    // SR generator
    pub features: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub block_kernel: usize,
    // domain generator
    pub gd_blocks: usize,
    pub gd_features: usize,
    // critics
    pub dx_widths: Vec<usize>,
    pub dy_width: usize,
}

impl TrainConfig {
    pub fn domain() -> Self {
        TrainConfig {
            stage: Stage::Domain,
            seed: 0,
            scale: 4,
            batch_size: 16,
            patch: 128,
            total: 300,
            base_lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            flips: true,
            rot90: true,
            mixup: false,
            mixup_alpha: 0.2,
            mixup_prob: 0.5,
            checkpoint_every: 1000,
            keep_checkpoints: 3,
            bn_momentum: 0.1,
            blur: BlurConfig::default(),
            features: 64,
            kernel: 5,
            blocks: 5,
            block_kernel: 3,
            gd_blocks: 8,
            gd_features: 64,
            dx_widths: vec![64, 128, 256],
            dy_width: 64,
        }
    }

    pub fn sr() -> Self {
        TrainConfig {
            stage: Stage::Sr,
            batch_size: 16,
            patch: 32,
            total: 51_000,
            base_lr: 1e-4,
            beta1: 0.9,
            mixup: true,
            ..Self::domain()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Domain => Self::domain(),
            Stage::Sr => Self::sr(),
        }
    }

    /// Small SR preset without the adversarial term; trains in minutes on
    /// one CPU core. The narrower generator and larger step compensate for
    /// the 255× shorter schedule.
    pub fn desk() -> Self {
        let base = Self::sr();
        TrainConfig {
            total: 200,
            batch_size: 4,
            patch: 16,
            blocks: 2,
            features: 32,
            base_lr: 1e-3,
            weights: LossWeights {
                gan: 0.0,
                ..base.weights
            },
            ..base
        }
    }

    pub fn gsr_config(&self) -> GeneratorSRConfig {
        GeneratorSRConfig {
            scale: self.scale,
            channels: 3,
            features: self.features,
            kernel: self.kernel,
            blocks: self.blocks,
            block_kernel: self.block_kernel,
            analytic: false,
        }
    }

    pub fn gd_config(&self) -> DomainGeneratorConfig {
        DomainGeneratorConfig {
            channels: 3,
            blocks: self.gd_blocks,
            features: self.gd_features,
            kernel: 3,
        }
    }

    pub fn dx_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            widths: self.dx_widths.clone(),
            ..DiscriminatorConfig::patch()
        }
    }

    pub fn dy_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            widths: vec![self.dy_width],
            ..DiscriminatorConfig::hr(self.patch * self.scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("patch", self.patch),
            ("total", self.total),
            ("checkpoint_every", self.checkpoint_every),
            ("features", self.features),
            ("gd_features", self.gd_features),
            ("dy_width", self.dy_width),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(config_err(k, "must be positive"));
            }
        }
        for (k, v) in [
            ("base_lr", self.base_lr),
            ("adam_eps", self.adam_eps),
            ("mixup_alpha", self.mixup_alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(k, "must be positive"));
            }
        }
        for (k, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("bn_momentum", self.bn_momentum),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(config_err(k, "must lie in [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.mixup_prob) {
            return Err(config_err("mixup_prob", "must lie in [0, 1]"));
        }
        if self.dx_widths.is_empty() || self.dx_widths.contains(&0) {
            return Err(config_err("dx_widths", "must be a non-empty list of positive widths"));
        }
        self.weights.validate()?;
        self.blur.validate()?;
        self.gsr_config().validate()?;
        self.gd_config().validate()?;
        if self.stage == Stage::Sr && !(self.patch * self.scale).is_multiple_of(32) {
            return Err(config_err(
                "patch",
                "patch × scale must be a multiple of 32 for the HR critic",
            ));
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let w = &self.weights;
        vec![
            ("stage", self.stage.to_string()),
            ("seed", self.seed.to_string()),
            ("scale", self.scale.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patch", self.patch.to_string()),
            ("total", self.total.to_string()),
            ("base_lr", fmt_f64(self.base_lr)),
            ("beta1", fmt_f64(self.beta1)),
            ("beta2", fmt_f64(self.beta2)),
            ("adam_eps", fmt_f64(self.adam_eps)),
            ("w_per", fmt_f64(w.per)),
            ("w_gan", fmt_f64(w.gan)),
            ("w_tv", fmt_f64(w.tv)),
            ("w_l1", fmt_f64(w.l1)),
            ("w_color", fmt_f64(w.color)),
            ("w_tex", fmt_f64(w.tex)),
            ("w_per_d", fmt_f64(w.per_domain)),
            ("highpass_gan", w.highpass_gan.to_string()),
            ("flips", self.flips.to_string()),
            ("rot90", self.rot90.to_string()),
            ("mixup", self.mixup.to_string()),
            ("mixup_alpha", fmt_f64(self.mixup_alpha)),
            ("mixup_prob", fmt_f64(self.mixup_prob)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("keep_checkpoints", self.keep_checkpoints.to_string()),
            ("bn_momentum", fmt_f64(self.bn_momentum)),
            ("blur_size", self.blur.kernel_size.to_string()),
            ("blur_sigma", fmt_f64(self.blur.sigma)),
            ("features", self.features.to_string()),
            ("kernel", self.kernel.to_string()),
            ("blocks", self.blocks.to_string()),
            ("block_kernel", self.block_kernel.to_string()),
            ("gd_blocks", self.gd_blocks.to_string()),
            ("gd_features", self.gd_features.to_string()),
            (
                "dx_widths",
                self.dx_widths
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("dy_width", self.dy_width.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::sr().to_pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key from its text form. `stage` cannot be changed here.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let w = &mut self.weights;
        match key {
            "stage" => {
                let s: Stage = value.parse().map_err(|e: String| config_err(key, &e))?;
                if s != self.stage {
                    return Err(config_err(key, &format!("config is for stage {}, not {s}", self.stage)));
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "scale" => self.scale = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "total" => self.total = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "w_per" => w.per = parse(key, value)?,
            "w_gan" => w.gan = parse(key, value)?,
            "w_tv" => w.tv = parse(key, value)?,
            "w_l1" => w.l1 = parse(key, value)?,
            "w_color" => w.color = parse(key, value)?,
            "w_tex" => w.tex = parse(key, value)?,
            "w_per_d" => w.per_domain = parse(key, value)?,
            "highpass_gan" => w.highpass_gan = parse(key, value)?,
            "flips" => self.flips = parse(key, value)?,
            "rot90" => self.rot90 = parse(key, value)?,
            "mixup" => self.mixup = parse(key, value)?,
            "mixup_alpha" => self.mixup_alpha = parse(key, value)?,
            "mixup_prob" => self.mixup_prob = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "keep_checkpoints" => self.keep_checkpoints = parse(key, value)?,
            "bn_momentum" => self.bn_momentum = parse(key, value)?,
            "blur_size" => self.blur.kernel_size = parse(key, value)?,
            "blur_sigma" => self.blur.sigma = parse(key, value)?,
            "features" => self.features = parse(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "blocks" => self.blocks = parse(key, value)?,
            "block_kernel" => self.block_kernel = parse(key, value)?,
            "gd_blocks" => self.gd_blocks = parse(key, value)?,
            "gd_features" => self.gd_features = parse(key, value)?,
            "dx_widths" => {
                self.dx_widths = value
                    .split(',')
                    .map(|p| parse::<usize>(key, p.trim()))
                    .collect::<Result<_>>()?
            }
            "dy_width" => self.dy_width = parse(key, value)?,
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Rebuilds a config from the pairs written by [`to_pairs`](Self::to_pairs).
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let stage = pairs
            .iter()
            .find(|(k, _)| *k == "stage")
            .map(|(_, v)| v.parse::<Stage>().map_err(|e| config_err("stage", &e)))
            .transpose()?
            .unwrap_or(Stage::Sr);
        let mut cfg = TrainConfig::for_stage(stage);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn fmt_f64(v: f64) -> String {
    // `{:?}` round-trips exactly
    format!("{v:?}")
}

fn config_err(key: &str, msg: &str) -> Error {
    Error::Config {
        key: key.to_string(),
        message: msg.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        let ty = std::any::type_name::<T>().rsplit("::").next().unwrap_or("value");
        config_err(key, &format!("cannot parse `{value}` as {ty}"))
    })
}
