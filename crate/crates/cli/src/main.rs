//! `sharpxr` command-line interface.
//!
//! Subcommands cover the full laboratory loop: synthesize phantoms, degrade
//! images with the Poisson-Gaussian model, train any architecture variant,
//! evaluate checkpoints (overall or per noise level), run the four-variant
//! ablation, and compute metrics for a single image pair.
//!
//! Exit code 0 on success; on failure a single-line `error: ...` goes to
//! stderr and the exit code is 1. No environment variables are consulted.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sharpxr::bench::{
    emit_report, eval_grid, eval_overall, report_to_csv, run_ablation, BenchReport, ReportFormat,
};
use sharpxr::image::{load_dataset_dir, load_image, save_image, stratified_split};
use sharpxr::metrics::evaluate_all;
use sharpxr::model::{load_checkpoint, save_checkpoint, Variant, WidthScale};
use sharpxr::noise::{apply_noise, NoiseParams};
use sharpxr::phantom::generate_dataset;
use sharpxr::rng::stream;
use sharpxr::trainer::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "sharpxr",
    version,
    about = "Structure-aware denoising laboratory for low-dose radiographs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom radiographs
    Phantom {
        #[command(subcommand)]
        action: PhantomAction,
    },
    /// Degrade images with the Poisson-Gaussian model
    Noise {
        #[command(subcommand)]
        action: NoiseAction,
    },
    /// Train a model variant on a dataset directory
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory
    Eval(EvalArgs),
    /// Train and evaluate all four architecture variants
    Ablate(AblateArgs),
    /// Print RMSE, PSNR, SSIM, SNR for a reference/test pair
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomAction {
    /// Write a balanced two-class phantom dataset as PGM files
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum NoiseAction {
    /// Apply noise at a fixed (eta, sigma) to one image
    Apply {
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long = "width-scale", default_value = "1")]
    width_scale: String,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory used as the evaluation set
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Overall)]
    mode: EvalMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long = "width-scale", default_value = "1/4")]
    width_scale: String,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for checkpoints, loss logs, and the report
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Single,
    Dual,
    DualLaplacian,
    Full,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Single => Variant::SingleDecoder,
            VariantArg::Dual => Variant::DualOnly,
            VariantArg::DualLaplacian => Variant::DualLaplacianNoFusion,
            VariantArg::Full => Variant::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Overall,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Md => ReportFormat::Markdown,
        }
    }
}

/// The standard split used throughout: 75% train, 10% val, 15% test.
const SPLIT_FRACTIONS: (f64, f64, f64) = (0.75, 0.10, 0.15);

fn parse_width_scale(s: &str) -> Result<WidthScale> {
    s.parse::<WidthScale>().map_err(|e| anyhow::anyhow!("{e}"))
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Phantom {
            action:
                PhantomAction::Generate {
                    count,
                    size,
                    seed,
                    out,
                },
        } => {
            let ds = generate_dataset(count, size, seed, &out)?;
            println!(
                "wrote {} phantoms ({}x{}) under {}",
                ds.len(),
                size,
                size,
                out.display()
            );
        }
        Command::Noise {
            action:
                NoiseAction::Apply {
                    eta,
                    sigma,
                    seed,
                    input,
                    out,
                },
        } => {
            let img = load_image(&input)?;
            let params = NoiseParams::new(eta, sigma)?;
            let mut rng = stream(seed, "noise-apply-cli", &[]);
            let noisy = apply_noise(&img, &params, &mut rng)?;
            save_image(&noisy, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train(args) => {
            let ds = load_dataset_dir(&args.data)?;
            let (train_split, val_split, _test) =
                stratified_split(&ds, SPLIT_FRACTIONS, args.seed)?;
            let cfg = TrainConfig {
                learning_rate: args.lr,
                batch_size: args.batch,
                max_epochs: args.epochs,
                seed: args.seed,
                width_scale: parse_width_scale(&args.width_scale)?,
                variant: args.variant.into(),
                ..TrainConfig::default()
            };
            let (store, log) = train(&train_split, &val_split, &cfg)?;
            save_checkpoint(&store, &args.out)?;
            let log_path = args.out.with_extension("loss.csv");
            std::fs::write(&log_path, log.to_csv())
                .with_context(|| format!("cannot write {}", log_path.display()))?;
            let best = log
                .rows
                .iter()
                .find(|r| r.epoch == log.best_epoch)
                .expect("best row");
            println!(
                "trained {} epochs; best epoch {} (val rmse {:.6}); checkpoint {}",
                log.rows.len(),
                log.best_epoch,
                best.val_rmse,
                args.out.display()
            );
        }
        Command::Eval(args) => {
            let store = load_checkpoint(&args.ckpt)?;
            let test = load_dataset_dir(&args.data)?;
            let report = match args.mode {
                EvalMode::Overall => eval_overall(&store, &test, args.seed)?,
                EvalMode::Grid => eval_grid(&store, &test, args.seed)?,
            };
            emit_report(&report, args.format.into(), &args.out)?;
            println!("wrote {} rows to {}", report.rows.len(), args.out.display());
        }
        Command::Ablate(args) => {
            let ds = load_dataset_dir(&args.data)?;
            let (train_split, val_split, test_split) =
                stratified_split(&ds, SPLIT_FRACTIONS, args.seed)?;
            let base = TrainConfig {
                learning_rate: args.lr,
                batch_size: args.batch,
                max_epochs: args.epochs,
                seed: args.seed,
                width_scale: parse_width_scale(&args.width_scale)?,
                ..TrainConfig::default()
            };
            std::fs::create_dir_all(&args.out)
                .with_context(|| format!("cannot create {}", args.out.display()))?;
            let outcome = run_ablation(&train_split, &val_split, &test_split, &base)?;
            for (variant, store) in &outcome.checkpoints {
                save_checkpoint(store, &args.out.join(format!("{variant}.sxr")))?;
            }
            for (variant, log) in &outcome.logs {
                std::fs::write(args.out.join(format!("{variant}.loss.csv")), log.to_csv())?;
            }
            let mut full = BenchReport {
                rows: outcome.report.rows.clone(),
            };
            full.rows.push(outcome.noisy_reference.clone());
            emit_report(&full, ReportFormat::Csv, &args.out.join("ablation.csv"))?;
            emit_report(&full, ReportFormat::Markdown, &args.out.join("ablation.md"))?;
            print!("{}", report_to_csv(&full));
        }
        Command::Metrics { reference, test } => {
            let r = load_image(&reference)?;
            let t = load_image(&test)?;
            let m = evaluate_all(&r, &t)?;
            println!("{:.4},{:.2},{:.4},{:.2}", m.rmse, m.psnr, m.ssim, m.snr);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // single-line machine-parsable failure
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
