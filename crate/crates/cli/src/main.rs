//! `cdlnet` command line: train, denoise, estimate, eval, dump-filters.
//!
//! Exit codes: 0 success, 1 usage or contract error, 2 data error
//! (unreadable or malformed input), 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cdlnet::config::KeyValues;
use cdlnet::eval::{denoise, evaluate, load_dataset, load_image, save_image, EvalConfig, SigmaMode};
use cdlnet::model::filter_grid;
use cdlnet::noise::{estimate, EstimatorConfig, Method};
use cdlnet::training::{resume, train, Backtrack, Checkpoint, EpochStats, TrainConfig, TrainError, TrainObserver};
use cdlnet::{Error, Image, ModelConfig};

#[derive(Parser, Debug)]
#[command(name = "cdlnet", version, about = "Convolutional dictionary learning denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from a `key = value` config file.
    Train(TrainArgs),
    /// Denoise one PGM image.
    Denoise(DenoiseArgs),
    /// Estimate the noise level of one PGM image (0-255 scale).
    Estimate(EstimateArgs),
    /// Add synthetic noise to a dataset, denoise it and report PSNR.
    Eval(EvalArgs),
    /// Write the dictionary filters of a checkpoint as a tiled PGM.
    DumpFilters(DumpArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Continue from this checkpoint instead of initialising a new model.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory (overrides `out.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `train.max_epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// auto-pca, auto-mad, none, or a noise level on the 0-255 scale.
    /// Defaults to auto-pca for adaptive models and none otherwise.
    #[arg(long)]
    sigma: Option<String>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "pca")]
    method: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated noise levels on the 0-255 scale.
    #[arg(long, value_delimiter = ',', default_value = "25")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV report path. The table is always printed.
    #[arg(long)]
    report: Option<PathBuf>,
    /// gt, mad or pca.
    #[arg(long, default_value = "gt")]
    estimator: String,
    /// Append per-image wall-clock time to the CSV.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) => 1,
        Error::Shape(_) | Error::UnsupportedImage(_) | Error::Format { .. } | Error::Io { .. } => 2,
        Error::NonFinite { .. } | Error::Diverged { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Denoise(a) => run_denoise(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Eval(a) => run_eval(a),
        Command::DumpFilters(a) => run_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>, Error> {
    Checkpoint::load(path)
}

fn read_config(path: &Path, overrides: &[String]) -> Result<KeyValues, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut kv = KeyValues::parse(&text)?;
    let extra = KeyValues::parse(&overrides.join("\n"))?;
    kv.merge(&extra);
    Ok(kv)
}

/// Resolves a config path relative to the directory of the config file.
fn config_path(config: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn load_images(dir: &Path) -> Result<Vec<Image<f32>>, Error> {
    Ok(load_dataset(dir)?.into_iter().map(|(_, x)| x.cast()).collect())
}

/// Prints progress and writes `best.ckpt` / `latest.ckpt` as training goes.
struct Progress {
    dir: PathBuf,
}

impl TrainObserver<f32> for Progress {
    fn on_epoch(&mut self, s: &EpochStats) {
        println!(
            "epoch {:>5}  train {:.6e}  val {:.6e}  lr {:.3e}",
            s.epoch, s.train_loss, s.validation_loss, s.lr
        );
    }

    fn on_backtrack(&mut self, b: &Backtrack) {
        eprintln!(
            "divergence at epoch {} batch {} (loss {:.3e}): restored epoch {}, lr {:.3e} -> {:.3e}",
            b.epoch, b.batch, b.loss, b.restored_epoch, b.lr_before, b.lr_after
        );
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint<f32>, best: bool) -> Result<(), Error> {
        ckpt.save(self.dir.join(if best { "best.ckpt" } else { "latest.ckpt" }))
    }
}

fn run_train(a: TrainArgs) -> Result<(), Error> {
    let kv = read_config(&a.config, &a.overrides)?;
    let train_dir = config_path(&a.config, kv.get_str("data.train").ok_or_else(|| {
        Error::Contract("config needs `data.train` (directory of PGM images)".into())
    })?);
    let val_dir = kv.get_str("data.val").map(|v| config_path(&a.config, v));
    let out = match (&a.out, kv.get_str("out.dir")) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => config_path(&a.config, o),
        (None, None) => PathBuf::from("runs"),
    };
    std::fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;

    let dataset = load_images(&train_dir)?;
    let validation = match &val_dir {
        Some(d) => load_images(d)?,
        None => Vec::new(),
    };
    let mut observer = Progress { dir: out.clone() };
    let start = Instant::now();
    let report = match &a.resume {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            ckpt.train_config = TrainConfig::from_kv(&kv, ckpt.train_config.clone())?;
            if let Some(e) = a.epochs {
                ckpt.train_config.max_epochs = e;
            }
            println!("resuming {} at epoch {}", path.display(), ckpt.epoch);
            resume(ckpt, &dataset, &validation, &mut observer)
        }
        None => {
            let model = ModelConfig::from_kv(&kv, ModelConfig::small())?;
            let mut cfg = TrainConfig::from_kv(&kv, TrainConfig::default())?;
            if let Some(e) = a.epochs {
                cfg.max_epochs = e;
            }
            println!(
                "training K={} M={} p={} s={} adaptive={} on {} images",
                model.k,
                model.m,
                model.filter_size,
                model.stride,
                model.adaptive,
                dataset.len()
            );
            train(&dataset, &validation, model, &cfg, &mut observer)
        }
    };
    let report = match report {
        Ok(r) => r,
        Err(TrainError::Unrecoverable { epoch, last_good }) => {
            last_good.save(out.join("last_good.ckpt"))?;
            return Err(Error::Diverged { epoch });
        }
        Err(e) => return Err(e.into_error()),
    };
    report.best.save(out.join("best.ckpt"))?;
    report.last.save(out.join("last.ckpt"))?;
    println!(
        "done: {} epochs in {:.1}s, best validation loss {:.6e}{}; checkpoints in {}",
        report.last.epoch,
        start.elapsed().as_secs_f64(),
        report.best.best_validation_loss,
        if report.converged { " (converged)" } else { "" },
        out.display()
    );
    Ok(())
}

fn run_denoise(a: DenoiseArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let mode = match &a.sigma {
        Some(s) => s.parse()?,
        None if ckpt.params.config.adaptive => SigmaMode::AutoPca,
        None => SigmaMode::None,
    };
    let y = load_image(&a.input)?;
    let out = denoise(&ckpt.params, &y, mode)?;
    save_image(&a.out, &out.image)?;
    match (out.sigma, out.estimator) {
        (Some(s), Some(m)) => println!("sigma {:.4} ({m})", s * 255.0),
        (Some(s), None) => println!("sigma {:.4} (given)", s * 255.0),
        _ => println!("sigma none"),
    }
    println!("time {:.1} ms", out.millis);
    Ok(())
}

fn run_estimate(a: EstimateArgs) -> Result<(), Error> {
    let method: Method = a.method.parse()?;
    if method == Method::GroundTruth {
        return Err(Error::Contract("estimate needs --method mad or pca".into()));
    }
    let y = load_image(&a.input)?;
    let est = estimate(&y, &EstimatorConfig::with_method(method), None)?;
    let note = if est.fell_back { " (fell back to mad)" } else { "" };
    println!("{:.4}{note}", est.sigma * 255.0);
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let images = load_dataset(&a.data)?;
    let cfg = EvalConfig {
        sigmas: a.sigmas,
        estimator: a.estimator.parse()?,
        seed: a.seed,
        model_id: a.ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let report = evaluate(&ckpt.params, &images, &cfg)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.report {
        std::fs::write(path, report.to_csv(a.timing)).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

fn run_dump(a: DumpArgs) -> Result<(), Error> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    save_image(&a.out, &filter_grid(&ckpt.params.d))
}
