//! Deterministic chest-radiograph-like phantoms.
//!
//! Phantoms target structure statistics rather than anatomical fidelity:
//! a smooth background gradient, two dark elliptical lung fields, bright
//! sinusoidal rib bands (the high-frequency content that makes edge
//! preservation measurable), low-amplitude texture, and, for class 1,
//! blurred bright opacities confined to the lung fields.
//!
//! Every component draws from its own derived stream, so class 0 and
//! class 1 phantoms with the same seed share all structure outside the
//! opacities and differ only inside the lung masks.

use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::image::{save_image, Image, ImageError, LabeledDataset};
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("phantom size {0} must be >= 32 and divisible by 16")]
    BadSize(usize),
    #[error("dataset needs at least 2 phantoms, got {0}")]
    CountTooSmall(usize),
    #[error(transparent)]
    Io(#[from] ImageError),
    #[error("cannot create {path}: {source}")]
    CreateDir {
        path: String,
        source: std::io::Error,
    },
}

/// What to generate: a square image of `size` pixels from `seed`, class 0
/// (clear lung) or 1 (opacity present).
#[derive(Debug, Clone, Copy)]
pub struct PhantomSpec {
    pub size: usize,
    pub seed: u64,
    pub class_label: u8,
}

impl PhantomSpec {
    fn validate(&self) -> Result<(), PhantomError> {
        if self.size < 32 || !self.size.is_multiple_of(16) {
            return Err(PhantomError::BadSize(self.size));
        }
        Ok(())
    }
}

/// Pixel masks for the structural components, used by structure-statistics
/// checks.
pub struct PhantomMasks {
    /// Inside either lung ellipse.
    pub lung: Vec<bool>,
    /// Within one band half-width of a rib center line.
    pub rib: Vec<bool>,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        self.normalized_dist2(y, x) <= 1.0
    }

    fn normalized_dist2(&self, y: f64, x: f64) -> f64 {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx
    }
}

struct Rib {
    base_y: f64,
    bow: f64,
    freq: f64,
    phase: f64,
    amplitude: f64,
    half_width_px: f64,
}

struct TextureWave {
    fy: f64,
    fx: f64,
    phase: f64,
    amplitude: f64,
}

/// Generate a phantom image.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Image, PhantomError> {
    generate_phantom_with_masks(spec).map(|(img, _)| img)
}

/// Generate a phantom along with its lung and rib masks.
pub fn generate_phantom_with_masks(
    spec: &PhantomSpec,
) -> Result<(Image, PhantomMasks), PhantomError> {
    spec.validate()?;
    let n = spec.size;
    let nf = n as f64;
    let px_scale = nf / 256.0;

    // Lung fields: nominal geometry with +-10% jitter on centers and axes.
    let mut lung_rng = stream(spec.seed, "phantom-lungs", &[]);
    let mut jitter = |nominal: f64| -> f64 { nominal * lung_rng.random_range(0.9..1.1) };
    let lungs = [
        Ellipse {
            cx: jitter(0.31),
            cy: jitter(0.48),
            rx: jitter(0.155),
            ry: jitter(0.27),
        },
        Ellipse {
            cx: jitter(0.69),
            cy: jitter(0.48),
            rx: jitter(0.155),
            ry: jitter(0.27),
        },
    ];

    // Ribs: 6-9 bright sinusoidal bands, width 2-4 px at size 256, scaled
    // proportionally with the image.
    let mut rib_rng = stream(spec.seed, "phantom-ribs", &[]);
    let n_ribs = rib_rng.random_range(6..=9usize);
    let ribs: Vec<Rib> = (0..n_ribs)
        .map(|i| {
            let frac = (i as f64 + 0.5) / n_ribs as f64;
            Rib {
                base_y: 0.22 + 0.58 * frac + rib_rng.random_range(-0.015..0.015),
                bow: rib_rng.random_range(0.02..0.05),
                freq: rib_rng.random_range(0.8..1.2),
                phase: rib_rng.random_range(-0.3..0.3),
                amplitude: rib_rng.random_range(0.10..0.18),
                half_width_px: rib_rng.random_range(2.0..4.0) * px_scale,
            }
        })
        .collect();

    // Smooth texture: a few low-frequency waves, total amplitude <= 0.03.
    let mut tex_rng = stream(spec.seed, "phantom-texture", &[]);
    let n_waves = 3usize;
    let waves: Vec<TextureWave> = (0..n_waves)
        .map(|_| TextureWave {
            fy: tex_rng.random_range(1.0..4.0),
            fx: tex_rng.random_range(1.0..4.0),
            phase: tex_rng.random_range(0.0..std::f64::consts::TAU),
            amplitude: 0.03 / n_waves as f64,
        })
        .collect();

    // Opacities: class 1 only, from a stream untouched by class 0, confined
    // to a lung field so the two classes differ only inside the lung masks.
    let opacities: Vec<(Ellipse, f64)> = if spec.class_label == 1 {
        let mut op_rng = stream(spec.seed, "phantom-opacity", &[]);
        let count = op_rng.random_range(1..=3usize);
        (0..count)
            .map(|_| {
                let lung = &lungs[op_rng.random_range(0..2usize)];
                // Center well inside the lung so most of the bump survives
                // the mask cut.
                let oy = lung.cy + lung.ry * op_rng.random_range(-0.5..0.5);
                let ox = lung.cx + lung.rx * op_rng.random_range(-0.4..0.4);
                let r = op_rng.random_range(0.035..0.08);
                let delta = op_rng.random_range(0.12..0.25);
                (
                    Ellipse {
                        cy: oy,
                        cx: ox,
                        ry: r * op_rng.random_range(0.8..1.2),
                        rx: r * op_rng.random_range(0.8..1.2),
                    },
                    delta,
                )
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut pixels = Vec::with_capacity(n * n);
    let mut lung_mask = vec![false; n * n];
    let mut rib_mask = vec![false; n * n];
    for iy in 0..n {
        let y = (iy as f64 + 0.5) / nf;
        for ix in 0..n {
            let x = (ix as f64 + 0.5) / nf;
            // Vertical gradient 0.55 (top) to 0.75 (bottom).
            let mut v = 0.55 + 0.20 * y;

            let in_lung = lungs.iter().any(|l| l.contains(y, x));
            if in_lung {
                v *= 0.45;
                lung_mask[iy * n + ix] = true;
            }

            for rib in &ribs {
                let yc = rib.base_y
                    + rib.bow * (std::f64::consts::PI * rib.freq * (x - 0.5) + rib.phase).sin();
                let d_px = (y - yc) * nf;
                let t = d_px / rib.half_width_px;
                if t.abs() < 1.0 {
                    rib_mask[iy * n + ix] = true;
                }
                if t.abs() < 4.0 {
                    v += rib.amplitude * (-t * t).exp();
                }
            }

            for w in &waves {
                v += w.amplitude * (std::f64::consts::TAU * (w.fy * y + w.fx * x) + w.phase).sin();
            }

            if in_lung {
                for (e, delta) in &opacities {
                    let d2 = e.normalized_dist2(y, x);
                    if d2 < 9.0 {
                        v += delta * (-d2).exp();
                    }
                }
            }

            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let img = Image::new(n, n, pixels)?;
    Ok((
        img,
        PhantomMasks {
            lung: lung_mask,
            rib: rib_mask,
        },
    ))
}

/// Generate `count` phantoms with alternating class labels, write them as
/// PGM files under `out_dir/<class_name>/`, and return the in-memory
/// dataset in generation order.
pub fn generate_dataset(
    count: usize,
    size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<LabeledDataset, PhantomError> {
    if count < 2 {
        return Err(PhantomError::CountTooSmall(count));
    }
    let class_names = ["clear", "opacity"];
    for name in class_names {
        let dir = out_dir.join(name);
        fs::create_dir_all(&dir).map_err(|source| PhantomError::CreateDir {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut ds = LabeledDataset::default();
    for i in 0..count {
        let class_label = (i % 2) as u8;
        let item_seed = stream(seed, "phantom-dataset", &[i as u64]).random::<u64>();
        let spec = PhantomSpec {
            size,
            seed: item_seed,
            class_label,
        };
        let img = generate_phantom(&spec)?;
        let path = out_dir
            .join(class_names[class_label as usize])
            .join(format!("phantom_{i:05}.pgm"));
        save_image(&img, &path)?;
        ds.items.push((img, class_label));
    }
    Ok(ds)
}
