//! Batch command-line front end. Every verb reads and writes files only;
//! exit codes are 0 (success), 1 (usage or config error) and 2 (runtime failure).

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{config_echo, parse_kv, resolve_config, SEED_ENV};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_dataset, self_ensemble, EvalOptions};
use crate::imaging::io::{load_dir, load_paired_dir, save_paired_dir};
use crate::imaging::{degrade, load_png, save_png, DegradationSpec, ImageTensor, SamplePair};
use crate::losses::{ConvFeatureExtractor, FeatureExtractor};
use crate::training::{
    generate_lr_dataset, load_checkpoint, save_checkpoint, Checkpoint, DomainTrainer, SrTrainer, Stage, TrainConfig,
    TrainOptions,
};
use crate::variational::{estimate_lipschitz, pgm_solve, BallConstraint, EnergyModel, FilterBank, SolveOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "srres",
    version,
    about = "Real-world super-resolution: degradation, training, inference, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Bicubic downscale plus Gaussian noise for every PNG in a directory.
    Degrade {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        /// Noise standard deviation in 8-bit units (0–255).
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Domain stage: learn the source-domain corruptions.
    TrainDomain {
        /// Real images of the corrupted (source) domain.
        #[arg(long)]
        source: PathBuf,
        /// Clean high-resolution images.
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Pair HR images with LR images produced by a trained domain generator.
    GenerateLr {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        /// Output root; receives `hr/` and `lr/`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
    /// SR stage: train the generator on an `hr/` + `lr/` pair directory.
    TrainSr {
        #[arg(long)]
        pairs: PathBuf,
        /// Start from the small desk-scale preset.
        #[arg(long)]
        desk: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Super-resolve one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Must match the checkpoint's scale.
        #[arg(long)]
        scale: Option<usize>,
        /// Average over the eight flips/rotations.
        #[arg(long)]
        ensemble: bool,
        /// Noise level in 8-bit units; estimated from the input when absent.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// PSNR / SSIM / LPIPS of a checkpoint on an `hr/` + `lr/` pair directory.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Report CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        ensemble: bool,
        /// Score full images instead of cropping `scale` border pixels.
        #[arg(long)]
        no_crop: bool,
        #[arg(long)]
        sigma: Option<f64>,
        /// Feature extractor archive (defaults to the builtin one).
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Classical baseline: iterate proximal-gradient steps on the explicit energy.
    Solve {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        /// Slope of the potential gradient (1 gives a quadratic prior).
        #[arg(long, default_value_t = 1.0)]
        slope: f64,
        /// Radius of the noise ball around the upsampled input, in 8-bit units
        /// per pixel; unconstrained when absent.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 500)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Energy trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Final checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Periodic checkpoint directory.
    #[arg(long)]
    pub ckpt_dir: Option<PathBuf>,
    /// Loss trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Continue from a checkpoint of the same stage (its config is used).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the verb.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn sigma_from_8bit(s: f64) -> Result<f64> {
    if !(0.0..255.0).contains(&s) {
        return Err(Error::invalid(format!("--sigma must lie in [0, 255), got {s}")));
    }
    Ok(s / 255.0)
}

fn create_dir(d: &Path) -> Result<()> {
    std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))
}

fn write_echo(cfg: &TrainConfig, out: &Path) -> Result<()> {
    let echo = config_echo(cfg);
    eprint!("resolved config:\n{echo}");
    let mut path = out.as_os_str().to_owned();
    path.push(".config");
    let path = PathBuf::from(path);
    std::fs::write(&path, echo).map_err(|e| Error::io(&path, e))
}

fn seed_or_env(seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => match std::env::var(SEED_ENV) {
            Ok(v) => v.parse().map_err(|_| Error::Config {
                key: SEED_ENV.into(),
                message: format!("cannot parse `{v}` as u64"),
            }),
            Err(_) => Ok(0),
        },
    }
}

fn train_options(run: &RunArgs) -> TrainOptions {
    TrainOptions {
        checkpoint_dir: run.ckpt_dir.clone(),
        trace_path: run.trace.clone(),
    }
}

fn load_resume(run: &RunArgs, stage: Stage) -> Result<Option<Checkpoint>> {
    let Some(path) = &run.resume else { return Ok(None) };
    let ck = load_checkpoint(path)?;
    if ck.config.stage != stage {
        return Err(Error::invalid(format!(
            "{} holds a {}-stage checkpoint",
            path.display(),
            ck.config.stage
        )));
    }
    if run.config.is_some() || !run.overrides.is_empty() {
        log::warn!("--resume uses the checkpoint's config; --config/--set are ignored");
    }
    Ok(Some(ck))
}

fn images(dir: &Path) -> Result<Vec<ImageTensor>> {
    let imgs: Vec<_> = load_dir(dir)?.into_iter().map(|(_, im)| im).collect();
    if imgs.is_empty() {
        return Err(Error::EmptyDataset(format!("{} holds no PNG files", dir.display())));
    }
    Ok(imgs)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Degrade {
            input,
            out,
            scale,
            sigma,
            seed,
        } => {
            let seed = seed_or_env(seed)?;
            let files = load_dir(&input)?;
            if files.is_empty() {
                return Err(Error::EmptyDataset(format!("{} holds no PNG files", input.display())));
            }
            create_dir(&out)?;
            eprintln!("degrade: scale={scale} sigma={sigma}/255 seed={seed}");
            for (i, (id, img)) in files.iter().enumerate() {
                let spec = DegradationSpec::new(scale, sigma_from_8bit(sigma)?, seed.wrapping_add(i as u64))?;
                save_png(&degrade(img, &spec)?, out.join(format!("{id}.png")))?;
            }
            Ok(())
        }
        Command::TrainDomain { source, target, run } => {
            let (sources, targets) = (images(&source)?, images(&target)?);
            let mut trainer = match load_resume(&run, Stage::Domain)? {
                Some(ck) => DomainTrainer::resume(ck, sources, targets)?,
                None => {
                    let cfg = resolve_config(Stage::Domain, false, run.config.as_deref(), &run.overrides)?;
                    DomainTrainer::new(cfg, sources, targets)?
                }
            };
            write_echo(trainer.config(), &run.out)?;
            let ck = trainer.run(&train_options(&run))?;
            save_checkpoint(&ck, &run.out)
        }
        Command::GenerateLr { ckpt, hr, out, scale } => {
            let ck = load_checkpoint(&ckpt)?;
            write_echo(&ck.config, &out)?;
            let pairs = generate_lr_dataset(&ck, &images(&hr)?, scale)?;
            save_paired_dir(&out, &pairs)
        }
        Command::TrainSr { pairs, desk, run } => {
            let data: Vec<SamplePair> = load_paired_dir(&pairs)?.into_iter().map(|(_, p)| p).collect();
            let mut trainer = match load_resume(&run, Stage::Sr)? {
                Some(ck) => SrTrainer::resume(ck, data)?,
                None => {
                    let cfg = resolve_config(Stage::Sr, desk, run.config.as_deref(), &run.overrides)?;
                    SrTrainer::new(cfg, data)?
                }
            };
            write_echo(trainer.config(), &run.out)?;
            let ck = trainer.run(&train_options(&run))?;
            save_checkpoint(&ck, &run.out)
        }
        Command::Infer {
            ckpt,
            input,
            out,
            scale,
            ensemble,
            sigma,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            if let Some(s) = scale {
                if s != ck.config.scale {
                    return Err(Error::invalid(format!(
                        "--scale {s} but the checkpoint upscales by {}",
                        ck.config.scale
                    )));
                }
            }
            let g = ck.sr_generator()?;
            let lr = load_png(&input)?;
            let sigma = sigma.map(sigma_from_8bit).transpose()?;
            eprintln!("infer: scale={} ensemble={ensemble} sigma={sigma:?}", ck.config.scale);
            let sr = if ensemble {
                self_ensemble(|x| g.infer(x, sigma), &lr)?
            } else {
                g.infer(&lr, sigma)?
            };
            save_png(&sr, &out)
        }
        Command::Evaluate {
            ckpt,
            pairs,
            out,
            json,
            ensemble,
            no_crop,
            sigma,
            features,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let g = ck.sr_generator()?;
            let ext: Box<dyn FeatureExtractor> = match features {
                Some(p) => Box::new(ConvFeatureExtractor::load(p)?),
                None => Box::new(ConvFeatureExtractor::builtin()),
            };
            let opts = EvalOptions {
                ensemble,
                crop_border: if no_crop { 0 } else { ck.config.scale },
                sigma: sigma.map(sigma_from_8bit).transpose()?,
            };
            eprintln!("evaluate: {opts:?}");
            let data = load_paired_dir(&pairs)?;
            let report = evaluate_dataset(&g, ext.as_ref(), &data, &opts)?;
            report.write_csv(&out)?;
            if let Some(j) = json {
                report.write_json(j)?;
            }
            eprintln!(
                "mean psnr {:.3} dB, ssim {:.4}, lpips {:.4} over {}/{} images",
                report.mean_psnr,
                report.mean_ssim,
                report.mean_lpips,
                report.scored,
                report.rows.len()
            );
            Ok(())
        }
        Command::Solve {
            input,
            out,
            scale,
            lambda,
            slope,
            sigma,
            max_iters,
            tol,
            trace,
        } => {
            let y = load_png(&input)?;
            let bank = FilterBank::finite_differences(y.channels())?;
            let model = EnergyModel::with_uniform_slope(scale, lambda, bank, slope, 1.0)?;
            let dims = (y.channels(), y.height() * scale, y.width() * scale);
            let lip = estimate_lipschitz(&model, dims, 50)?;
            let model = model.with_step(1.0 / lip);
            let c = match sigma {
                None => BallConstraint::unbounded(),
                Some(s) => {
                    let n = (dims.0 * dims.1 * dims.2) as f64;
                    let center = crate::imaging::bilinear_upsample(&y, scale)?;
                    BallConstraint::new(sigma_from_8bit(s)? * n.sqrt())?.centered_at(center)
                }
            };
            eprintln!(
                "solve: scale={scale} lambda={lambda} slope={slope} step={:.4e} sigma={sigma:?}",
                1.0 / lip
            );
            let report = pgm_solve(
                &model,
                &y,
                &c,
                &SolveOptions {
                    max_iters,
                    tol,
                    ..SolveOptions::default()
                },
            )?;
            eprintln!(
                "solve: {} iterations, converged={}",
                report.iterations, report.converged
            );
            if let Some(t) = trace {
                report.write_trace_csv(t)?;
            }
            save_png(&report.x.clipped(), &out)
        }
    }
}
