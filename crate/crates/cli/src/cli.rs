use std::path::PathBuf;

use acdl::data::Split;
use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::Value;

use crate::commands::{self, Log};
use crate::config::{load_config, parse_override, RunConfig};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "acdl", version, about = "Accident-detection training pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset root
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run output directory (default: runs/<timestamp>-seed<seed>)
    #[arg(long)]
    pub out: Option<String>,
    /// Override any config key, e.g. --set train.beta1=0.8
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Bce,
    Lsgan,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset to the dataset root
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Images per class per split
        #[arg(long)]
        n: Option<usize>,
        /// Image side length
        #[arg(long)]
        size: Option<usize>,
        /// Replace an existing dataset
        #[arg(long)]
        force: bool,
    },
    /// Resize and enhance every split into <out>/data
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Train one GAN per class on the training split
    TrainGan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long)]
        latent_dim: Option<usize>,
    },
    /// Copy the dataset to <out>/augmented and merge generated images into its train split
    Augment {
        #[command(flatten)]
        common: Common,
        /// Generated images per class
        #[arg(long)]
        per_class: Option<usize>,
        /// Directory holding the per-class GAN checkpoints (default: <out>/gan)
        #[arg(long)]
        gan_dir: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train a classifier and save <out>/model.ckpt
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        input: Option<usize>,
        /// ViT patch size
        #[arg(long)]
        patch: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint and write the structured report and ROC points
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint (default: <out>/model.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Render <out>/report.json, plus any extra reports, as a table
    Report {
        #[command(flatten)]
        common: Common,
        /// Further structured reports to include as extra rows
        #[arg(long)]
        include: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Cnn,
    Ftcnn,
    Vit,
}

/// Collects `(key, value)` overrides in flag order.
#[derive(Default)]
struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn put<T: Into<Value>>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.into()));
        }
    }

    fn usize(&mut self, key: &str, value: Option<usize>) {
        self.put(key, value.map(|v| v as i64));
    }
}

fn resolve(common: &Common, extra: impl FnOnce(&mut Overrides)) -> CliResult<RunConfig> {
    let mut o = Overrides::default();
    for item in &common.set {
        o.0.push(parse_override(item)?);
    }
    o.put("seed", common.seed.map(|s| s as i64));
    o.put("data", common.data.as_ref().map(|p| p.display().to_string()));
    o.put("out", common.out.clone());
    extra(&mut o);
    Ok(load_config(common.config.as_deref(), &o.0)?)
}

pub fn run(cli: Cli, log: Log) -> CliResult<()> {
    match cli.command {
        Command::SynthData { common, n, size, force } => {
            let config = resolve(&common, |o| {
                o.usize("synth.n_per_class", n);
                o.usize("synth.size", size);
            })?;
            commands::synth_data(&config, force, log)
        }
        Command::Preprocess { common, input, force } => {
            let config = resolve(&common, |o| o.usize("input", input))?;
            commands::preprocess_data(&config, force, log).map(drop)
        }
        Command::TrainGan {
            common,
            epochs,
            batch_size,
            loss,
            latent_dim,
        } => {
            let config = resolve(&common, |o| {
                o.usize("gan.epochs", epochs);
                o.usize("gan.batch_size", batch_size);
                o.put(
                    "gan.loss",
                    loss.map(|l| match l {
                        LossArg::Bce => "bce",
                        LossArg::Lsgan => "lsgan",
                    }),
                );
                o.usize("gan.latent_dim", latent_dim);
            })?;
            commands::train_gans(&config, log).map(drop)
        }
        Command::Augment {
            common,
            per_class,
            gan_dir,
            force,
        } => {
            let config = resolve(&common, |o| o.usize("gan.per_class", per_class))?;
            commands::augment(&config, gan_dir.as_deref(), force, log).map(drop)
        }
        Command::Train {
            common,
            model,
            input,
            patch,
            epochs,
            batch_size,
            lr,
        } => {
            let config = resolve(&common, |o| {
                o.put(
                    "model",
                    model.map(|m| match m {
                        ModelArg::Cnn => "cnn",
                        ModelArg::Ftcnn => "ftcnn",
                        ModelArg::Vit => "vit",
                    }),
                );
                o.usize("input", input);
                o.usize("vit.patch", patch);
                o.usize("train.epochs", epochs);
                o.usize("train.batch_size", batch_size);
                o.put("train.lr", lr);
            })?;
            commands::train(&config, log).map(drop)
        }
        Command::Evaluate { common, checkpoint, split } => {
            let config = resolve(&common, |_| {})?;
            commands::evaluate_model(&config, checkpoint.as_deref(), split.into(), log).map(drop)
        }
        Command::Report { common, include } => {
            let config = resolve(&common, |_| {})?;
            commands::report(&config, &include, log).map(drop)
        }
    }
}
