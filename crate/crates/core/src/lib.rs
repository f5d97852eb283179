//! SharpXR: a self-contained laboratory for structure-aware denoising of
//! low-dose radiographs.
//!
//! The crate provides, end to end and with no external data:
//!
//! - [`image`] — grayscale images in `[0,1]`, PGM I/O, bilinear resizing,
//!   seeded augmentation, and stratified dataset splitting.
//! - [`noise`] — the hybrid Poisson-Gaussian low-dose degradation model with
//!   exact Poisson sampling and the fixed six-point evaluation grid.
//! - [`phantom`] — deterministic chest-radiograph-like synthetic images so
//!   every experiment runs without clinical data.
//! - [`metrics`] — RMSE, PSNR, SSIM, and SNR with reference semantics.
//! - [`model`] — the SharpXR dual-decoder U-Net with Laplacian-enhanced skip
//!   connections and a learnable softmax fusion head, its ablation variants,
//!   and binary checkpointing.
//! - [`trainer`] — RMSE-loss Adam training with deterministic pair
//!   generation, early stopping, and loss logging.
//! - [`bench`] — the evaluation harness: overall benchmark rows, per-noise-
//!   level grids, ablation sweeps, and CSV/markdown report emission.
//!
//! Everything is seeded explicitly: the same root seed produces byte-identical
//! checkpoints and reports within one build. See [`rng`] for how per-purpose
//! random streams are derived.

pub mod bench;
pub mod image;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod phantom;
pub mod rng;
pub mod trainer;

pub use image::Image;
pub use metrics::MetricsRecord;
pub use noise::NoiseParams;
