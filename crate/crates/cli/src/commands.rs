//! One function per subcommand. Each reads its inputs, writes only under
//! its output directory, and reports progress through `log`.

use std::fs;
use std::path::{Path, PathBuf};

use acdl::data::{
    index_dataset, index_split, make_synthetic_dataset, merge_augmented, ppm, preprocess, Split, SynthConfig,
};
use acdl::gan::{generate_images, train_gan, Gan};
use acdl::metrics::{build_report, render_table, roc_csv, MetricsReport};
use acdl::models::{build, build_dcgan};
use acdl::train::{evaluate, load_checkpoint, save_checkpoint, train_classifier};
use acdl::{Architecture, ImageSpec, ModelGraph};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub type Log<'a> = &'a mut dyn FnMut(&str);

pub const MODEL_FILE: &str = "model.ckpt";
pub const CURVES_FILE: &str = "curves.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const ROC_FILE: &str = "roc.csv";
pub const EVAL_FILE: &str = "evaluation.json";
pub const GAN_DIR: &str = "gan";
pub const AUGMENTED_DIR: &str = "augmented";
pub const PREPROCESSED_DIR: &str = "data";

/// The run directory: `config.out`, or `runs/<timestamp>-seed<seed>` when
/// that is empty.
pub fn run_dir(config: &RunConfig) -> PathBuf {
    if config.out.is_empty() {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        PathBuf::from("runs").join(format!("{stamp}-seed{}", config.seed))
    } else {
        PathBuf::from(&config.out)
    }
}

/// Creates `dir` and writes the resolved config as `config-<command>.toml`.
pub fn echo_config(config: &RunConfig, dir: &Path, command: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut resolved = config.clone();
    resolved.out = dir.display().to_string();
    let path = dir.join(format!("config-{command}.toml"));
    fs::write(&path, resolved.to_toml())?;
    Ok(path)
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, what))
    }
}

/// Makes `dir` empty and ready for writing. A non-empty directory is only
/// cleared with `force`.
fn fresh_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(CliError::usage(
                "output_exists",
                format!("{} is not empty; pass --force to replace it", dir.display()),
            ));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn copy_tree(from: &Path, to: &Path) -> CliResult<()> {
    fs::create_dir_all(to)?;
    let mut entries: Vec<_> = fs::read_dir(from)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

pub fn model_name(arch: &Architecture) -> &'static str {
    match arch {
        Architecture::Cnn { .. } => "CNN",
        Architecture::Ftcnn { .. } => "FTCNN",
        Architecture::Vit(_) => "ViT",
        Architecture::GanGenerator { .. } => "Generator",
        Architecture::GanDiscriminator { .. } => "Discriminator",
    }
}

fn input_spec(arch: &Architecture) -> CliResult<ImageSpec> {
    match arch {
        Architecture::Cnn { input } | Architecture::Ftcnn { input } => Ok(*input),
        Architecture::Vit(v) => Ok(v.input),
        other => Err(CliError::usage(
            "invalid_argument",
            format!("checkpoint holds a {}, not a classifier", other.tag()),
        )),
    }
}

pub fn synth_data(config: &RunConfig, force: bool, log: Log) -> CliResult<()> {
    if config.data.exists() && fs::read_dir(&config.data)?.next().is_some() && !force {
        return Err(CliError::usage(
            "output_exists",
            format!("{} is not empty; pass --force to replace it", config.data.display()),
        ));
    }
    let mut synth = SynthConfig::new(config.seed, config.synth.n_per_class, config.synth.size);
    synth.classes = config.class_names();
    let manifest = make_synthetic_dataset(&config.data, &synth, force)?;
    for s in &manifest.splits {
        log(&format!(
            "split={} {}={} {}={}",
            s.split, config.classes[0], s.counts[0], config.classes[1], s.counts[1]
        ));
    }
    log(&format!("wrote {}", config.data.display()));
    Ok(())
}

/// Resizes and enhances every split of the dataset into `<run>/data`.
pub fn preprocess_data(config: &RunConfig, force: bool, log: Log) -> CliResult<PathBuf> {
    let out = run_dir(config);
    let classes = config.class_names();
    let splits = index_dataset(&config.data, &classes)?;
    let dest = out.join(PREPROCESSED_DIR);
    fresh_dir(&dest, force)?;
    for split in Split::ALL {
        let index = splits.get(split);
        for label in 0..2 {
            fs::create_dir_all(dest.join(split.as_str()).join(classes.name(label)))?;
        }
        for (path, label) in index.entries() {
            let img = ppm::read(path)?;
            let done = preprocess(&img, config.input, config.input, &config.enhance)?;
            let name = path.file_name().expect("indexed files have names");
            ppm::write(&dest.join(split.as_str()).join(classes.name(label.into())).join(name), &done)?;
        }
        log(&format!("split={} files={}", split, index.len()));
    }
    echo_config(config, &out, "preprocess")?;
    log(&format!("wrote {}", dest.display()));
    Ok(dest)
}

/// Seed of the GAN for one class.
fn class_seed(seed: u64, label: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(label as u64 + 1)
}

fn gan_class_dir(gan_root: &Path, label: usize) -> PathBuf {
    gan_root.join(label.to_string())
}

/// Trains one GAN per class on that class's training images.
pub fn train_gans(config: &RunConfig, log: Log) -> CliResult<PathBuf> {
    let out = run_dir(config);
    let classes = config.class_names();
    let train = index_split(&config.data, Split::Train, &classes)?.load(None)?;
    let (h, w, c) = train.image_shape();
    echo_config(config, &out, "train-gan")?;
    let gan_root = out.join(GAN_DIR);
    for label in 0..2u8 {
        let dir = gan_class_dir(&gan_root, label.into());
        fs::create_dir_all(&dir)?;
        let mut gan_config = config.gan_config();
        gan_config.seed = class_seed(config.seed, label.into());
        let (g, d) = build_dcgan(gan_config.latent.dim, ImageSpec::new(h, w, c), gan_config.seed)?;
        let mut gan = Gan::new(g, d, gan_config.adam, gan_config.latent)?;
        let real = train.class_inputs(label)?;
        let name = classes.name(label.into()).to_string();
        log(&format!("class={name} images={}", real.shape()[0]));
        let history = train_gan(&mut gan, &real, &gan_config, Some(&dir), &mut |line| {
            log(&format!("class={name} {line}"))
        })?;

        let mut csv = String::from("epoch,steps,l_d,l_g,d_acc_real,d_acc_fake\n");
        for e in &history.epochs {
            let m = e.mean;
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.steps, m.l_d, m.l_g, m.d_acc_real, m.d_acc_fake
            ));
        }
        fs::write(dir.join("losses.csv"), csv)?;
        let meta = json!({
            "class": name,
            "label": label,
            "seed": gan_config.seed,
            "epochs": gan_config.epochs,
            "latent": gan_config.latent,
        });
        save_checkpoint(&gan.generator, &dir.join("generator.ckpt"), meta.clone())?;
        save_checkpoint(&gan.discriminator, &dir.join("discriminator.ckpt"), meta)?;
        log(&format!("class={name} wrote {}", dir.display()));
    }
    Ok(gan_root)
}

/// Copies the dataset to `<run>/augmented` and merges `gan.per_class`
/// generated images into each training class there.
pub fn augment(config: &RunConfig, gan_root: Option<&Path>, force: bool, log: Log) -> CliResult<PathBuf> {
    let out = run_dir(config);
    let classes = config.class_names();
    let gan_root = gan_root.map(Path::to_path_buf).unwrap_or_else(|| out.join(GAN_DIR));
    let mut generators: Vec<(ModelGraph, serde_json::Value)> = Vec::new();
    for label in 0..2 {
        let path = gan_class_dir(&gan_root, label).join("generator.ckpt");
        require(&path, "generator checkpoint")?;
        generators.push(load_checkpoint(&path)?);
    }
    let before = index_dataset(&config.data, &classes)?;
    let dest = out.join(AUGMENTED_DIR);
    fresh_dir(&dest, force)?;
    copy_tree(&config.data, &dest)?;

    let mut generated = Vec::new();
    for (label, (generator, meta)) in generators.iter().enumerate() {
        let latent = serde_json::from_value(meta["latent"].clone())
            .map_err(|e| CliError::usage("checkpoint", format!("generator metadata lacks a latent spec: {e}")))?;
        let seed = class_seed(config.seed, label).wrapping_add(1);
        for img in generate_images(generator, &latent, config.gan.per_class, seed)? {
            generated.push((img, label as u8));
        }
    }
    let merged = merge_augmented(&dest, &classes, &generated, &format!("seed{}", config.seed))?;
    let (b, a) = (before.train.counts(), merged.counts());
    log(&format!(
        "train {}: {} -> {}, {}: {} -> {}",
        config.classes[0], b[0], a[0], config.classes[1], b[1], a[1]
    ));
    echo_config(config, &out, "augment")?;
    log(&format!("wrote {}", dest.display()));
    Ok(dest)
}

pub fn train(config: &RunConfig, log: Log) -> CliResult<PathBuf> {
    let out = run_dir(config);
    let classes = config.class_names();
    let arch = config.architecture();
    let mut model = build(&arch, config.seed)?;
    let size = Some((config.input, config.input));
    let train_set = index_split(&config.data, Split::Train, &classes)?.load(size)?;
    let val_set = index_split(&config.data, Split::Val, &classes)?.load(size)?;
    echo_config(config, &out, "train")?;
    log(&format!(
        "model={} params={} train={} val={}",
        arch.tag(),
        model.num_params(),
        train_set.len(),
        val_set.len()
    ));
    let outcome = train_classifier(&mut model, &train_set, &val_set, &config.train_config(), log)?;
    outcome.curves.write_csv(&out.join(CURVES_FILE))?;
    let meta = json!({
        "seed": config.seed,
        "epochs": outcome.curves.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_acc": outcome.best_val_acc,
    });
    let path = out.join(MODEL_FILE);
    save_checkpoint(&model, &path, meta)?;
    if let (Some(e), Some(a)) = (outcome.best_epoch, outcome.best_val_acc) {
        log(&format!("best epoch={e} val_acc={a:.6}"));
    }
    log(&format!("wrote {}", path.display()));
    Ok(path)
}

pub fn evaluate_model(config: &RunConfig, checkpoint: Option<&Path>, split: Split, log: Log) -> CliResult<MetricsReport> {
    let out = run_dir(config);
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join(MODEL_FILE));
    require(&path, "model checkpoint")?;
    let (model, _) = load_checkpoint(&path)?;
    let spec = input_spec(&model.architecture)?;
    let set = index_split(&config.data, split, &config.class_names())?.load(Some((spec.height, spec.width)))?;
    let eval = evaluate(&model, &set)?;
    let mut report = build_report(model_name(&model.architecture), &eval.labels, &eval.predictions, &eval.scores)?;
    report.class_names = config.class_names();
    fs::create_dir_all(&out)?;
    echo_config(config, &out, "evaluate")?;
    fs::write(out.join(EVAL_FILE), serde_json::to_string_pretty(&eval).map_err(acdl::Error::from)?)?;
    fs::write(out.join(REPORT_JSON), report.to_json()?)?;
    fs::write(out.join(ROC_FILE), roc_csv(&report.roc))?;
    log(&format!(
        "split={split} n={} accuracy={:.6} auc={}",
        set.len(),
        report.accuracy,
        report.auc.map(|a| format!("{a:.6}")).unwrap_or_else(|| "undefined".into())
    ));
    Ok(report)
}

/// Renders the run's report, followed by any `extra` structured reports,
/// into `<run>/report.txt`.
pub fn report(config: &RunConfig, extra: &[PathBuf], log: Log) -> CliResult<String> {
    let out = run_dir(config);
    let mut paths = vec![out.join(REPORT_JSON)];
    paths.extend(extra.iter().cloned());
    let mut reports = Vec::new();
    for p in &paths {
        require(p, "structured report")?;
        reports.push(MetricsReport::from_json(&fs::read_to_string(p)?)?);
    }
    let text = render_table(&reports.iter().collect::<Vec<_>>());
    fs::write(out.join(REPORT_TEXT), &text)?;
    for line in text.lines() {
        log(line);
    }
    Ok(text)
}
