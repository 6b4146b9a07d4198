use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use vmbeauty::bench::{self, BenchConfig};
use vmbeauty::checkpoint;
use vmbeauty::config::{ModelConfig, Precision, RunConfig};
use vmbeauty::data::{synth_dataset, Loader, Manifest, Record, SynthParams};
use vmbeauty::error::ErrorClass;
use vmbeauty::eval::ablation::REPORT_HEADER;
use vmbeauty::eval::saliency::saliency_maps;
use vmbeauty::eval::{ablate, evaluate, Branch, MetricsReport};
use vmbeauty::train::{cross_validate, train, TrainJob};
use vmbeauty::{Error, Scalar, Variant, VmBeautyNet};

#[derive(Parser)]
#[command(name = "vmbeauty", version, about = "Dual-branch image score regression")]
struct Cli {
    /// Suppress human-readable tables.
    #[arg(long, global = true)]
    quiet: bool,
    /// Data-loading worker threads (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural dataset and manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Train one model with one fold held out.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        fold: usize,
        #[arg(long, default_value = "learned_fusion")]
        variant: String,
        /// Continue from an epoch checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// K-fold cross-validation of one variant.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "learned_fusion")]
        variant: String,
    },
    /// Train and compare all four variants.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Metrics of a checkpoint on one fold.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the fold the checkpoint held out.
        #[arg(long)]
        fold: Option<usize>,
        /// Defaults to the variant the checkpoint was trained as.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fused and per-branch scores for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Token saliency maps as CSV grids and PNG overlays.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// vit, mamba, fused or all.
        #[arg(long, default_value = "all")]
        branch: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the selective scan against attention over sequence lengths.
    BenchScan {
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the full default configuration.
    PrintConfig {
        /// Start from the small test model instead of the full-size one.
        #[arg(long)]
        tiny: bool,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Root seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self, workers: Option<usize>) -> Result<(RunConfig, Manifest)> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            config.train.seed = s;
        }
        if let Some(w) = workers {
            config.train.workers = w;
        }
        let manifest = Manifest::load(&self.manifest, config.data.folds)?;
        create_dir(&self.out)?;
        std::fs::write(self.out.join("config.toml"), config.to_toml())
            .with_context(|| format!("writing {}", self.out.display()))?;
        Ok((config, manifest))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn loader(config: &RunConfig) -> Result<Loader> {
    Ok(Loader::new(config.model.image_size, config.train.workers)?)
}

fn metrics_row(variant: &str, m: &MetricsReport, hash: &str) -> String {
    format!("{variant},{},{},{},{},{hash}\n", m.pc, m.mae, m.rmse, m.n)
}

fn print_metrics(quiet: bool, rows: &[(String, &MetricsReport)]) {
    if quiet {
        return;
    }
    println!("{:<16} {:>8} {:>8} {:>8} {:>6}", "", "PC", "MAE", "RMSE", "n");
    for (label, m) in rows {
        println!("{label:<16} {:>8.4} {:>8.4} {:>8.4} {:>6}", m.pc, m.mae, m.rmse, m.n);
    }
}

fn precision_of(config: &RunConfig) -> Precision {
    Precision::resolve(config.train.precision)
}

/// Dispatches `$body` with `$f` bound to the run precision.
macro_rules! with_precision {
    ($prec:expr, $f:ident => $body:expr) => {
        match $prec {
            Precision::F32 => {
                type $f = f32;
                $body
            }
            Precision::F64 => {
                type $f = f64;
                $body
            }
        }
    };
}

fn cmd_train(cli: &Cli, run: &RunArgs, fold: usize, variant: &str, resume: Option<&Path>) -> Result<()> {
    let variant = Variant::parse(variant)?;
    let (config, manifest) = run.load(cli.workers)?;
    let (train_set, test_set) = manifest.fold_split(fold)?;
    let loader = loader(&config)?;
    let job = TrainJob {
        config: &config,
        variant,
        train: &train_set,
        val: &test_set,
        test_fold: Some(fold),
        out_dir: Some(&run.out),
        resume,
    };
    let history = with_precision!(precision_of(&config), F => train::<F>(&job, &loader)?.history);
    if !cli.quiet {
        println!(
            "{:>5} {:>14} {:>8} {:>8} {:>8}",
            "epoch", "train_loss", "val_pc", "val_mae", "val_rmse"
        );
        for r in &history {
            let v = r.val.clone().unwrap_or(MetricsReport {
                pc: f64::NAN,
                mae: f64::NAN,
                rmse: f64::NAN,
                n: 0,
                residuals: vec![],
            });
            println!(
                "{:>5} {:>14.6} {:>8.4} {:>8.4} {:>8.4}",
                r.epoch, r.mean_train_loss, v.pc, v.mae, v.rmse
            );
        }
    }
    Ok(())
}

fn cmd_cv(cli: &Cli, run: &RunArgs, variant: &str) -> Result<()> {
    let variant = Variant::parse(variant)?;
    let (config, manifest) = run.load(cli.workers)?;
    let loader = loader(&config)?;
    let cv = with_precision!(precision_of(&config), F =>
        cross_validate::<F>(&config, &manifest, variant, &loader, Some(&run.out), None)?);
    let hash = config.hash("");
    let mut csv = format!("fold,{REPORT_HEADER}\n");
    let mut rows = Vec::new();
    for (k, m) in &cv.folds {
        csv.push_str(&format!("{k},{}", metrics_row(variant.name(), m, &hash)));
        rows.push((format!("fold {k}"), m));
    }
    csv.push_str(&format!("mean,{}", metrics_row(variant.name(), &cv.mean, &hash)));
    rows.push(("mean".to_string(), &cv.mean));
    let path = run.out.join("cv.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    print_metrics(cli.quiet, &rows);
    Ok(())
}

fn cmd_ablate(cli: &Cli, run: &RunArgs) -> Result<()> {
    let (config, manifest) = run.load(cli.workers)?;
    let loader = loader(&config)?;
    let report = with_precision!(precision_of(&config), F => ablate::<F>(&config, &manifest, &loader, Some(&run.out))?);
    if !cli.quiet {
        print!("{}", report.table());
    }
    Ok(())
}

fn eval_typed<F: Scalar>(
    cli: &Cli,
    path: &Path,
    manifest_path: &Path,
    fold: Option<usize>,
    variant: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let (model, meta, _) = checkpoint::load_model::<F>(path)?;
    let variant = variant.map(Variant::parse).transpose()?.unwrap_or(meta.variant);
    let manifest = Manifest::load(manifest_path, meta.config.data.folds)?;
    let records = match fold.or(meta.test_fold) {
        Some(k) => manifest.fold_split(k)?.1,
        None => manifest.records.clone(),
    };
    let workers = cli.workers.unwrap_or(meta.config.train.workers);
    let loader = Loader::new(model.config.image_size, workers)?;
    let samples = loader.load_eval::<F>(&records)?;
    let report = evaluate(&model, variant, &samples)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("metrics.csv");
        let text = format!(
            "{REPORT_HEADER}\n{}",
            metrics_row(variant.name(), &report, &meta.config.hash(""))
        );
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    print_metrics(cli.quiet, &[(variant.name().to_string(), &report)]);
    Ok(())
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let (meta, _) = checkpoint::read::<f32>(path)?;
    Ok(precision_of(&meta.config))
}

fn load_image<F: Scalar>(model: &VmBeautyNet<F>, image: &Path) -> Result<vmbeauty::Tensor<F>> {
    let loader = Loader::new(model.config.image_size, 1)?;
    let record = Record {
        image_path: image.to_path_buf(),
        score: 1.0,
        fold: 1,
    };
    Ok(loader.load_eval::<F>(&[record])?.remove(0).pixels)
}

fn predict_typed<F: Scalar>(path: &Path, image: &Path) -> Result<()> {
    let (model, _, _) = checkpoint::load_model::<F>(path)?;
    let p = model.predict(&load_image(&model, image)?)?;
    println!("y_hat,p_vit,p_mamba");
    println!("{},{},{}", p.fused, p.vit, p.mamba);
    Ok(())
}

fn saliency_typed<F: Scalar>(cli: &Cli, path: &Path, image: &Path, branch: &str, out: &Path) -> Result<()> {
    let wanted: Vec<Branch> = match branch {
        "all" => Branch::ALL.to_vec(),
        tag => vec![Branch::parse(tag)?],
    };
    let (model, _, _) = checkpoint::load_model::<F>(path)?;
    let pixels = load_image(&model, image)?;
    create_dir(out)?;
    let stem = image
        .file_stem()
        .map_or("image".into(), |s| s.to_string_lossy().into_owned());
    for map in saliency_maps(&model, &pixels)? {
        if wanted.contains(&map.branch) {
            map.write(out, &stem, &pixels)?;
            if !cli.quiet {
                println!("{}:", map.branch.name());
                print!("{}", map.to_csv());
            }
        }
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, lengths: &[usize], trials: usize, out: Option<&Path>) -> Result<()> {
    let cfg = BenchConfig {
        lengths: lengths.to_vec(),
        trials,
        ..BenchConfig::default()
    };
    let report = bench::run(&cfg)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("bench_scan.csv");
        std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    if !cli.quiet {
        print!("{}", report.table());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            out,
            n,
            size,
            seed,
            folds,
        } => {
            let m = synth_dataset(
                out,
                SynthParams {
                    n: *n,
                    size: *size,
                    seed: *seed,
                    folds: *folds,
                },
            )?;
            if !cli.quiet {
                println!("wrote {} images and {}", m.records.len(), m.path.display());
            }
            Ok(())
        }
        Command::Train {
            run,
            fold,
            variant,
            resume,
        } => cmd_train(cli, run, *fold, variant, resume.as_deref()),
        Command::Cv { run, variant } => cmd_cv(cli, run, variant),
        Command::Ablate { run } => cmd_ablate(cli, run),
        Command::Eval {
            checkpoint,
            manifest,
            fold,
            variant,
            out,
        } => with_precision!(checkpoint_precision(checkpoint)?, F =>
            eval_typed::<F>(cli, checkpoint, manifest, *fold, variant.as_deref(), out.as_deref())),
        Command::Predict { checkpoint, image } => {
            with_precision!(checkpoint_precision(checkpoint)?, F => predict_typed::<F>(checkpoint, image))
        }
        Command::Saliency {
            checkpoint,
            image,
            branch,
            out,
        } => {
            if branch != "all" {
                Branch::parse(branch)?;
            }
            with_precision!(checkpoint_precision(checkpoint)?, F =>
                saliency_typed::<F>(cli, checkpoint, image, branch, out))
        }
        Command::BenchScan { lengths, trials, out } => cmd_bench(cli, lengths, *trials, out.as_deref()),
        Command::PrintConfig { tiny } => {
            let mut config = RunConfig::default();
            if *tiny {
                config.model = ModelConfig::tiny();
            }
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Argument) => 2,
        Some(ErrorClass::Numerical) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<Error>() {
                Some(inner) => eprintln!("error: {inner}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
