//! Evaluation harness: overall benchmark rows, per-noise-level grids, the
//! ablation runner, and CSV/markdown report emission.
//!
//! Every harness entry point is deterministic for a fixed (checkpoint,
//! dataset, run seed). The overall and grid evaluators draw noise from
//! disjoint stream purposes (`eval-noise` vs `grid-noise`), so adding one
//! never perturbs the other. External baselines are out of scope; the
//! un-denoised noisy input serves as the reference row, and the report
//! schema accepts arbitrary model tags so third-party results can be
//! merged.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::image::{Image, ImageError, LabeledDataset};
use crate::metrics::{evaluate_all, MetricsError, MetricsRecord};
use crate::model::{ModelError, ParamStore};
use crate::noise::{apply_noise, noise_grid, NoiseError, NoiseParams};
use crate::rng::named_stream;
use crate::trainer::{infer_image, make_pairs, train, LossLog, PairMode, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("cannot write report {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("ablation aborted while training {failed} (completed: {completed:?}): {source}")]
    Ablation {
        completed: Vec<String>,
        failed: String,
        source: Box<BenchError>,
    },
}

/// Tag used for the un-denoised reference row.
pub const NOISY_INPUT_TAG: &str = "noisy-input";

/// One benchmark report row: a model tag, a noise setting (`None` means the
/// mixed "all" setting), per-metric mean and std over test images, and the
/// image count.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model_tag: String,
    pub sigma8: Option<f64>,
    pub eta: Option<f64>,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub snr_mean: f64,
    pub snr_std: f64,
    pub n_images: usize,
}

/// Rows of a benchmark report, in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn row_from_records(
    tag: &str,
    sigma8: Option<f64>,
    eta: Option<f64>,
    records: &[MetricsRecord],
) -> BenchRow {
    let col = |f: fn(&MetricsRecord) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = records.iter().map(f).collect();
        mean_std(&vals)
    };
    let (rmse_mean, rmse_std) = col(|r| r.rmse);
    let (psnr_mean, psnr_std) = col(|r| r.psnr);
    let (ssim_mean, ssim_std) = col(|r| r.ssim);
    let (snr_mean, snr_std) = col(|r| r.snr);
    BenchRow {
        model_tag: tag.to_string(),
        sigma8,
        eta,
        rmse_mean,
        rmse_std,
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        snr_mean,
        snr_std,
        n_images: records.len(),
    }
}

/// Evaluate a denoiser and the raw noisy input over (noisy, clean) pairs.
fn paired_rows<F>(
    pairs: &[(Image, Image)],
    model_tag: &str,
    sigma8: Option<f64>,
    eta: Option<f64>,
    denoise: F,
) -> Result<(BenchRow, BenchRow), BenchError>
where
    F: Fn(&Image) -> Result<Image, BenchError>,
{
    let mut model_records = Vec::with_capacity(pairs.len());
    let mut noisy_records = Vec::with_capacity(pairs.len());
    for (noisy, clean) in pairs {
        let denoised = denoise(noisy)?;
        model_records.push(evaluate_all(clean, &denoised)?);
        noisy_records.push(evaluate_all(clean, noisy)?);
    }
    Ok((
        row_from_records(model_tag, sigma8, eta, &model_records),
        row_from_records(NOISY_INPUT_TAG, sigma8, eta, &noisy_records),
    ))
}

fn model_tag(store: &ParamStore<f32>) -> String {
    format!("sharpxr-{}", store.meta.variant)
}

/// Overall benchmark: mixed eval-mode noise over the test set. Emits the
/// model row followed by the noisy-input reference row.
pub fn eval_overall(
    store: &ParamStore<f32>,
    test: &LabeledDataset,
    run_seed: u64,
) -> Result<BenchReport, BenchError> {
    let cfg = store.meta.config();
    let pairs = make_pairs(test, PairMode::Eval { split_name: "test" }, run_seed)?;
    let (model_row, noisy_row) = paired_rows(&pairs, &model_tag(store), None, None, |noisy| {
        infer_image(noisy, &cfg, store).map_err(BenchError::from)
    })?;
    Ok(BenchReport {
        rows: vec![model_row, noisy_row],
    })
}

/// Per-noise-level grid: the test set is re-noised at each of the six fixed
/// (sigma8, eta) settings with cell-specific streams. Emits the six model
/// rows in grid order, then the six noisy-input rows in the same order.
pub fn eval_grid(
    store: &ParamStore<f32>,
    test: &LabeledDataset,
    run_seed: u64,
) -> Result<BenchReport, BenchError> {
    let cfg = store.meta.config();
    let mut model_rows = Vec::new();
    let mut noisy_rows = Vec::new();
    for (row_ix, &(sigma8, eta)) in noise_grid().iter().enumerate() {
        let params = NoiseParams::new(eta, sigma8)?;
        let mut pairs = Vec::with_capacity(test.len());
        for (idx, (clean, _)) in test.items.iter().enumerate() {
            let mut rng =
                named_stream(run_seed, "grid-noise", "test", &[row_ix as u64, idx as u64]);
            let noisy = apply_noise(clean, &params, &mut rng)?;
            pairs.push((noisy, clean.clone()));
        }
        let (m, n) = paired_rows(
            &pairs,
            &model_tag(store),
            Some(sigma8),
            Some(eta),
            |noisy| infer_image(noisy, &cfg, store).map_err(BenchError::from),
        )?;
        model_rows.push(m);
        noisy_rows.push(n);
    }
    model_rows.extend(noisy_rows);
    Ok(BenchReport { rows: model_rows })
}

/// Everything the ablation runner produces.
pub struct AblationOutcome {
    /// Four model rows in the fixed variant order.
    pub report: BenchReport,
    /// The shared noisy-input reference (identical for every variant).
    pub noisy_reference: BenchRow,
    pub logs: Vec<(crate::model::Variant, LossLog)>,
    pub checkpoints: Vec<(crate::model::Variant, ParamStore<f32>)>,
}

/// Train all four variants with identical seeds and hyperparameters, then
/// evaluate each on the test split. Rows follow the fixed variant order
/// (single, dual, dual-laplacian, full).
pub fn run_ablation(
    train_split: &LabeledDataset,
    val_split: &LabeledDataset,
    test_split: &LabeledDataset,
    base_cfg: &TrainConfig,
) -> Result<AblationOutcome, BenchError> {
    let mut rows = Vec::new();
    let mut noisy_reference: Option<BenchRow> = None;
    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    for variant in crate::model::Variant::ALL {
        let cfg = TrainConfig {
            variant,
            ..base_cfg.clone()
        };
        let trained = train(train_split, val_split, &cfg)
            .map_err(BenchError::from)
            .and_then(|(store, log)| {
                let report = eval_overall(&store, test_split, cfg.seed)?;
                Ok((store, log, report))
            });
        match trained {
            Ok((store, log, report)) => {
                rows.push(report.rows[0].clone());
                noisy_reference.get_or_insert_with(|| report.rows[1].clone());
                logs.push((variant, log));
                checkpoints.push((variant, store));
            }
            Err(source) => {
                return Err(BenchError::Ablation {
                    completed: rows.iter().map(|r| r.model_tag.clone()).collect(),
                    failed: variant.to_string(),
                    source: Box::new(source),
                });
            }
        }
    }
    Ok(AblationOutcome {
        report: BenchReport { rows },
        noisy_reference: noisy_reference.expect("at least one variant evaluated"),
        logs,
        checkpoints,
    })
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str =
    "model,sigma,eta,rmse_mean,rmse_std,psnr_mean,psnr_std,ssim_mean,ssim_std,snr_mean,snr_std,n";

fn noise_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "all".to_string(),
    }
}

/// Render a report as CSV (fixed header, 6-decimal metric precision).
pub fn report_to_csv(report: &BenchReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.model_tag,
            noise_cell(r.sigma8),
            noise_cell(r.eta),
            r.rmse_mean,
            r.rmse_std,
            r.psnr_mean,
            r.psnr_std,
            r.ssim_mean,
            r.ssim_std,
            r.snr_mean,
            r.snr_std,
            r.n_images
        ));
    }
    out
}

/// Render a report as an aligned markdown table with the benchmark-table
/// precisions (RMSE 4 dp, PSNR/SNR 2 dp, SSIM 4 dp).
pub fn report_to_markdown(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str(
        "| Model | sigma | eta | RMSE | PSNR | SSIM | SNR | n |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for r in &report.rows {
        out.push_str(&format!(
            "| {} | {} | {} | {:.4} ± {:.4} | {:.2} ± {:.2} | {:.4} ± {:.4} | {:.2} ± {:.2} | {} |\n",
            r.model_tag,
            noise_cell(r.sigma8),
            noise_cell(r.eta),
            r.rmse_mean,
            r.rmse_std,
            r.psnr_mean,
            r.psnr_std,
            r.ssim_mean,
            r.ssim_std,
            r.snr_mean,
            r.snr_std,
            r.n_images
        ));
    }
    out
}

/// Write a report to disk in the requested format.
pub fn emit_report(
    report: &BenchReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), BenchError> {
    let text = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Markdown => report_to_markdown(report),
    };
    fs::write(path, text).map_err(|source| BenchError::Write {
        path: path.display().to_string(),
        source,
    })
}
