//! Evaluation metrics: RMSE, PSNR, SSIM, and SNR.
//!
//! Conventions, fixed so results are comparable to the literature:
//!
//! - PSNR = 20*log10(1/RMSE) with peak 1 on the unit intensity scale.
//! - SNR = 10*log10(total reference signal power / error power).
//! - SSIM uses the canonical 11x11 Gaussian window (std 1.5), k1 = 0.01,
//!   k2 = 0.03, dynamic range 1, aggregated over fully valid (non-padded)
//!   window centers only.
//! - Identical images yield infinite PSNR/SNR; both are reported as a 99.0 dB
//!   sentinel so CSV reports remain numeric.
//!
//! All computations accumulate in `f64` regardless of pixel storage width.

use thiserror::Error;

use crate::image::Image;

/// Sentinel for infinite-quality PSNR/SNR (identical images).
pub const DB_SENTINEL: f64 = 99.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} smaller than the {2}x{2} SSIM window")]
    TooSmallForWindow(usize, usize, usize),
    #[error("SNR undefined for an all-zero reference")]
    ZeroSignal,
}

/// The four metrics for one reference/test pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub snr: f64,
}

/// SSIM window and stabilization constants.
#[derive(Debug, Clone)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(MetricsError::DimensionMismatch(
            a.height(),
            a.width(),
            b.height(),
            b.width(),
        ));
    }
    Ok(())
}

/// Root mean square error over all pixels.
pub fn rmse(reference: &Image, test: &Image) -> Result<f64, MetricsError> {
    check_dims(reference, test)?;
    let n = reference.pixels().len() as f64;
    let sum_sq: f64 = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(&r, &t)| {
            let d = r as f64 - t as f64;
            d * d
        })
        .sum();
    Ok((sum_sq / n).sqrt())
}

/// Peak signal-to-noise ratio in dB, peak 1.0.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64, MetricsError> {
    let e = rmse(reference, test)?;
    if e == 0.0 {
        return Ok(DB_SENTINEL);
    }
    Ok(20.0 * (1.0 / e).log10())
}

/// Signal-to-noise ratio in dB: reference power over error power.
pub fn snr(reference: &Image, test: &Image) -> Result<f64, MetricsError> {
    check_dims(reference, test)?;
    let signal: f64 = reference
        .pixels()
        .iter()
        .map(|&r| (r as f64) * (r as f64))
        .sum();
    if signal == 0.0 {
        return Err(MetricsError::ZeroSignal);
    }
    let error: f64 = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(&r, &t)| {
            let d = t as f64 - r as f64;
            d * d
        })
        .sum();
    if error == 0.0 {
        return Ok(DB_SENTINEL);
    }
    Ok(10.0 * (signal / error).log10())
}

/// Normalized 1-D Gaussian taps for the SSIM window.
fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window as isize - 1) / 2;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Horizontal then vertical valid-mode filtering with the separable window.
/// Output is (h - window + 1) x (w - window + 1).
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * src[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all fully valid window centers.
pub fn ssim(reference: &Image, test: &Image, cfg: &SsimConfig) -> Result<f64, MetricsError> {
    check_dims(reference, test)?;
    let (h, w) = (reference.height(), reference.width());
    if h < cfg.window || w < cfg.window {
        return Err(MetricsError::TooSmallForWindow(h, w, cfg.window));
    }
    let a: Vec<f64> = reference.pixels().iter().map(|&p| p as f64).collect();
    let b: Vec<f64> = test.pixels().iter().map(|&p| p as f64).collect();
    let aa: Vec<f64> = a.iter().map(|&x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|&x| x * x).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| x * y).collect();

    let taps = gaussian_taps(cfg.window, cfg.sigma);
    let mu_a = filter_valid(&a, h, w, &taps);
    let mu_b = filter_valid(&b, h, w, &taps);
    let m_aa = filter_valid(&aa, h, w, &taps);
    let m_bb = filter_valid(&bb, h, w, &taps);
    let m_ab = filter_valid(&ab, h, w, &taps);

    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let mut total = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// All four metrics in one record.
pub fn evaluate_all(reference: &Image, test: &Image) -> Result<MetricsRecord, MetricsError> {
    Ok(MetricsRecord {
        rmse: rmse(reference, test)?,
        psnr: psnr(reference, test)?,
        ssim: ssim(reference, test, &SsimConfig::default())?,
        snr: snr(reference, test)?,
    })
}
