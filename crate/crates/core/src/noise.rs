//! Hybrid Poisson-Gaussian low-dose degradation.
//!
//! A clean intensity `x` in `[0,1]` is degraded to
//! `clamp(k/eta + g, 0, 1)` with `k ~ Poisson(eta*x)` and
//! `g ~ Normal(0, (sigma8/255)^2)`. `eta` is the photons-per-unit-intensity
//! rate; `sigma8` is the Gaussian standard deviation expressed in 8-bit gray
//! levels. Images live on a unit scale, so a sigma of 30 *gray levels* maps
//! to 30/255 in intensity — applying it unscaled would bury the signal
//! entirely, which is why the 8-bit interpretation is used throughout.
//!
//! Poisson sampling is exact (inversion by sequential search below
//! `lambda = 30`, transformed rejection above), never a normal
//! approximation: the moment and goodness-of-fit gates depend on it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::image::Image;

/// Largest rate accepted by [`poisson_sample`].
pub const MAX_LAMBDA: f64 = 1e6;

/// Rate threshold between sequential-search inversion and transformed
/// rejection.
const INVERSION_CUTOFF: f64 = 30.0;

/// Admissible training range for `eta`.
pub const ETA_RANGE: (f64, f64) = (50.0, 300.0);
/// Admissible training range for `sigma8`.
pub const SIGMA8_RANGE: (f64, f64) = (5.0, 30.0);

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("poisson rate must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("poisson rate {0} exceeds supported maximum {MAX_LAMBDA}")]
    LambdaTooLarge(f64),
    #[error("noise params: {0}")]
    InvalidParams(String),
}

/// The (eta, sigma8) pair controlling Poisson rate and Gaussian std.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub eta: f64,
    pub sigma8: f64,
}

impl NoiseParams {
    pub fn new(eta: f64, sigma8: f64) -> Result<Self, NoiseError> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(NoiseError::InvalidParams(format!(
                "eta must be > 0, got {eta}"
            )));
        }
        if !sigma8.is_finite() || sigma8 < 0.0 {
            return Err(NoiseError::InvalidParams(format!(
                "sigma8 must be >= 0, got {sigma8}"
            )));
        }
        Ok(Self { eta, sigma8 })
    }

    /// Gaussian std on the unit intensity scale.
    pub fn sigma_unit(&self) -> f64 {
        self.sigma8 / 255.0
    }
}

/// Draw `(eta, sigma8)` independently and uniformly from the training ranges.
pub fn sample_params(rng: &mut ChaCha8Rng) -> NoiseParams {
    let eta = rng.random_range(ETA_RANGE.0..ETA_RANGE.1);
    let sigma8 = rng.random_range(SIGMA8_RANGE.0..SIGMA8_RANGE.1);
    NoiseParams { eta, sigma8 }
}

/// Exact Poisson draw.
pub fn poisson_sample(lambda: f64, rng: &mut ChaCha8Rng) -> Result<u64, NoiseError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(NoiseError::InvalidLambda(lambda));
    }
    if lambda > MAX_LAMBDA {
        return Err(NoiseError::LambdaTooLarge(lambda));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda < INVERSION_CUTOFF {
        Ok(poisson_inversion(lambda, rng))
    } else {
        Ok(poisson_ptrs(lambda, rng))
    }
}

/// Inversion by sequential search: count uniform factors until the running
/// product drops below exp(-lambda). Expected cost O(lambda).
fn poisson_inversion(lambda: f64, rng: &mut ChaCha8Rng) -> u64 {
    let limit = (-lambda).exp();
    let mut count = 0u64;
    let mut product: f64 = rng.random();
    while product >= limit {
        count += 1;
        product *= rng.random::<f64>();
    }
    count
}

/// Transformed rejection with squeeze (Hormann's PTRS), exact for
/// lambda >= 10; used here from the inversion cutoff upward.
fn poisson_ptrs(lambda: f64, rng: &mut ChaCha8Rng) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);

    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        let rhs = k * loglam - lambda - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// ln(k!) — table for small k, Stirling series beyond.
pub fn ln_factorial(k: u64) -> f64 {
    const TABLE_LEN: usize = 128;
    static TABLE: std::sync::OnceLock<[f64; TABLE_LEN]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0.0f64; TABLE_LEN];
        let mut acc = 0.0f64;
        for (i, slot) in t.iter_mut().enumerate().skip(1) {
            acc += (i as f64).ln();
            *slot = acc;
        }
        t
    });
    if (k as usize) < TABLE_LEN {
        return table[k as usize];
    }
    let x = k as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Stirling: x ln x - x + 0.5 ln(2 pi x) + 1/(12x) - 1/(360x^3) + 1/(1260x^5)
    x * x.ln() - x
        + 0.5 * (2.0 * std::f64::consts::PI * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}

/// Degrade an image: per pixel `x`, draw `k ~ Poisson(eta*x)` and output
/// `clamp(k/eta + g, 0, 1)` with `g ~ Normal(0, sigma_unit^2)`.
pub fn apply_noise(
    img: &Image,
    params: &NoiseParams,
    rng: &mut ChaCha8Rng,
) -> Result<Image, NoiseError> {
    let sigma = params.sigma_unit();
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for &x in img.pixels() {
        let k = poisson_sample(params.eta * x as f64, rng)?;
        let g = if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            z * sigma
        } else {
            0.0
        };
        let noisy = (k as f64 / params.eta + g).clamp(0.0, 1.0);
        pixels.push(noisy as f32);
    }
    Ok(Image::new(img.height(), img.width(), pixels).expect("clamped pixels are in range"))
}

/// The fixed six-point (sigma8, eta) evaluation grid, in report row order.
pub fn noise_grid() -> [(f64, f64); 6] {
    [
        (5.0, 300.0),
        (10.0, 200.0),
        (15.0, 150.0),
        (20.0, 100.0),
        (25.0, 50.0),
        (30.0, 100.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn params_validate() {
        assert!(NoiseParams::new(100.0, 10.0).is_ok());
        assert!(NoiseParams::new(0.0, 10.0).is_err());
        assert!(NoiseParams::new(-5.0, 10.0).is_err());
        assert!(NoiseParams::new(100.0, -1.0).is_err());
        assert!(NoiseParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn sample_params_deterministic_and_in_range() {
        let mut a = stream(9, "noise-params", &[0]);
        let mut b = stream(9, "noise-params", &[0]);
        for _ in 0..100 {
            let pa = sample_params(&mut a);
            let pb = sample_params(&mut b);
            assert_eq!(pa, pb);
            assert!((ETA_RANGE.0..ETA_RANGE.1).contains(&pa.eta));
            assert!((SIGMA8_RANGE.0..SIGMA8_RANGE.1).contains(&pa.sigma8));
        }
    }

    #[test]
    fn sample_params_uniform_moments_and_independence() {
        let n = 100_000;
        let mut rng = stream(11, "noise-params-mc", &[]);
        let draws: Vec<NoiseParams> = (0..n).map(|_| sample_params(&mut rng)).collect();
        let mean_eta = draws.iter().map(|p| p.eta).sum::<f64>() / n as f64;
        let mean_sig = draws.iter().map(|p| p.sigma8).sum::<f64>() / n as f64;
        assert!((mean_eta - 175.0).abs() < 2.0, "mean eta {mean_eta}");
        assert!((mean_sig - 17.5).abs() < 0.2, "mean sigma {mean_sig}");
        let min_eta = draws.iter().map(|p| p.eta).fold(f64::INFINITY, f64::min);
        let max_eta = draws.iter().map(|p| p.eta).fold(0.0, f64::max);
        assert!(min_eta >= 50.0 && max_eta < 300.0);
        // sample correlation
        let (se, ss) = (
            (draws
                .iter()
                .map(|p| (p.eta - mean_eta).powi(2))
                .sum::<f64>()
                / n as f64)
                .sqrt(),
            (draws
                .iter()
                .map(|p| (p.sigma8 - mean_sig).powi(2))
                .sum::<f64>()
                / n as f64)
                .sqrt(),
        );
        let cov = draws
            .iter()
            .map(|p| (p.eta - mean_eta) * (p.sigma8 - mean_sig))
            .sum::<f64>()
            / n as f64;
        let corr = cov / (se * ss);
        assert!(corr.abs() < 0.02, "corr {corr}");
    }

    #[test]
    fn poisson_zero_rate_is_always_zero() {
        let mut rng = stream(1, "poisson", &[]);
        for _ in 0..100 {
            assert_eq!(poisson_sample(0.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn poisson_rejects_bad_rates() {
        let mut rng = stream(1, "poisson", &[]);
        assert!(poisson_sample(-1.0, &mut rng).is_err());
        assert!(poisson_sample(f64::NAN, &mut rng).is_err());
        assert!(poisson_sample(f64::INFINITY, &mut rng).is_err());
        assert!(poisson_sample(2e6, &mut rng).is_err());
    }

    #[test]
    fn poisson_lambda_4_moments() {
        let n = 1_000_000;
        let mut rng = stream(2, "poisson-mc", &[4]);
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for _ in 0..n {
            let k = poisson_sample(4.0, &mut rng).unwrap() as f64;
            sum += k;
            sumsq += k * k;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 4.0).abs() < 0.02, "mean {mean}");
        assert!((var - 4.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn poisson_large_lambda_moments() {
        // Exercises the transformed-rejection branch.
        let n = 200_000;
        let lambda = 150.0;
        let mut rng = stream(3, "poisson-mc", &[150]);
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for _ in 0..n {
            let k = poisson_sample(lambda, &mut rng).unwrap() as f64;
            sum += k;
            sumsq += k * k;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - lambda).abs() < 0.2, "mean {mean}");
        assert!((var - lambda).abs() < 2.5, "var {var}");
    }

    #[test]
    fn ln_factorial_matches_direct_products() {
        // Direct ln-sum for a few values spanning the table/Stirling switch.
        for &k in &[0u64, 1, 2, 10, 127, 128, 129, 500, 10_000] {
            let direct: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
            let got = ln_factorial(k);
            assert!(
                (got - direct).abs() <= 1e-9 * direct.max(1.0),
                "k={k}: got {got}, direct {direct}"
            );
        }
    }

    #[test]
    fn apply_noise_zero_image_zero_sigma_is_exact_zero() {
        let img = Image::constant(16, 16, 0.0).unwrap();
        let params = NoiseParams::new(123.0, 0.0).unwrap();
        let mut rng = stream(5, "apply", &[]);
        let out = apply_noise(&img, &params, &mut rng).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn apply_noise_is_bitwise_deterministic() {
        let img = Image::constant(32, 32, 0.5).unwrap();
        let params = NoiseParams::new(100.0, 10.0).unwrap();
        let a = apply_noise(&img, &params, &mut stream(6, "apply", &[1])).unwrap();
        let b = apply_noise(&img, &params, &mut stream(6, "apply", &[1])).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn apply_noise_stays_in_unit_interval() {
        let img = Image::constant(64, 64, 0.95).unwrap();
        let params = NoiseParams::new(50.0, 30.0).unwrap();
        let out = apply_noise(&img, &params, &mut stream(7, "apply", &[])).unwrap();
        assert!(out.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn apply_noise_mid_gray_moments_match_analytic() {
        // mean 0.5, variance x/eta + sigma_unit^2; clamping is negligible at
        // mid-gray (the bounds sit ~6 sigma away).
        let img = Image::constant(1000, 1000, 0.5).unwrap();
        let params = NoiseParams::new(100.0, 10.0).unwrap();
        let out = apply_noise(&img, &params, &mut stream(8, "apply-mc", &[])).unwrap();
        let n = out.pixels().len() as f64;
        let mean = out.pixels().iter().map(|&p| p as f64).sum::<f64>() / n;
        let var = out
            .pixels()
            .iter()
            .map(|&p| (p as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let want_var = 0.5 / 100.0 + (10.0f64 / 255.0).powi(2);
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
        assert!(
            (var - want_var).abs() < 0.05 * want_var,
            "var {var}, want {want_var}"
        );
    }

    #[test]
    fn high_rate_noise_free_converges_to_clean() {
        let img = Image::constant(200, 200, 0.5).unwrap();
        let params = NoiseParams::new(1e5, 0.0).unwrap();
        let out = apply_noise(&img, &params, &mut stream(9, "apply-mad", &[])).unwrap();
        let mad = out
            .pixels()
            .iter()
            .zip(img.pixels())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / out.pixels().len() as f64;
        assert!(mad < 0.002, "mad {mad}");
    }

    #[test]
    fn noisy_psnr_strictly_decreases_along_grid_rows_one_to_five() {
        // Row 6 (30,100) has slightly lower total variance than row 5 (25,50)
        // and is excluded from the strict chain.
        let clean = Image::constant(32, 32, 0.5).unwrap();
        let mut mean_psnr = Vec::new();
        for (row, &(sigma8, eta)) in noise_grid().iter().enumerate().take(5) {
            let params = NoiseParams::new(eta, sigma8).unwrap();
            let mut acc = 0.0f64;
            let n_images = 100;
            for i in 0..n_images {
                let mut rng = stream(33, "grid-mono", &[row as u64, i]);
                let noisy = apply_noise(&clean, &params, &mut rng).unwrap();
                acc += crate::metrics::psnr(&clean, &noisy).unwrap();
            }
            mean_psnr.push(acc / n_images as f64);
        }
        for pair in mean_psnr.windows(2) {
            assert!(pair[1] < pair[0], "grid PSNR not decreasing: {mean_psnr:?}");
        }
    }

    #[test]
    fn grid_is_the_fixed_six_pairs() {
        let grid = noise_grid();
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[0], (5.0, 300.0));
        assert_eq!(grid[5], (30.0, 100.0));
        assert_eq!(
            grid,
            [
                (5.0, 300.0),
                (10.0, 200.0),
                (15.0, 150.0),
                (20.0, 100.0),
                (25.0, 50.0),
                (30.0, 100.0)
            ]
        );
    }
}
