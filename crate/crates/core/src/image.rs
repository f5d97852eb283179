//! Grayscale images in `[0,1]`, 8-bit PGM I/O, bilinear resizing, seeded
//! augmentation, and stratified dataset splitting.
//!
//! [`Image`] is the universal pixel currency of the crate: row-major `f32`
//! intensities, every value in the unit interval. All operations here are
//! pure functions of their inputs (randomness is passed in explicitly), so
//! they are safe to call from many threads at once.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Errors from image I/O and geometry operations.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("pixel value {value} outside [0,1]")]
    PixelRange { value: f32 },
    #[error("pixel buffer has {got} values, expected {expected} for {h}x{w}")]
    SizeMismatch {
        got: usize,
        expected: usize,
        h: usize,
        w: usize,
    },
    #[error("target dimensions must be nonzero")]
    ZeroDimension,
    #[error("dataset split: {0}")]
    Split(String),
    #[error("dataset directory {0}: no class subdirectories with .pgm files")]
    EmptyDataset(String),
}

/// A 2-D grid of unit-interval grayscale intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// Build an image, validating the `[0,1]` pixel invariant and the
    /// buffer length.
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if pixels.len() != height * width {
            return Err(ImageError::SizeMismatch {
                got: pixels.len(),
                expected: height * width,
                h: height,
                w: width,
            });
        }
        for &p in &pixels {
            if !(0.0..=1.0).contains(&p) {
                return Err(ImageError::PixelRange { value: p });
            }
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Constant-intensity image.
    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self, ImageError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Mean intensity over all pixels.
    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Dataset of images with integer class labels (0 = normal,
/// 1 = pneumonia-like for the phantom corpus).
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub items: Vec<(Image, u8)>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct labels present, ascending.
    pub fn classes(&self) -> Vec<u8> {
        let mut cs: Vec<u8> = self.items.iter().map(|(_, c)| *c).collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    }

    fn count_class(&self, class: u8) -> usize {
        self.items.iter().filter(|(_, c)| *c == class).count()
    }
}

/// Augmentation knobs: horizontal flip, brightness/contrast jitter, rotation.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub brightness_delta_max: f64,
    pub contrast_factor_range: (f64, f64),
    pub rotation_deg_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            brightness_delta_max: 0.10,
            contrast_factor_range: (0.9, 1.1),
            rotation_deg_max: 15.0,
        }
    }
}

impl AugmentConfig {
    /// Config under which `augment` is the exact identity on pixels.
    pub fn identity() -> Self {
        Self {
            flip_prob: 0.0,
            brightness_delta_max: 0.0,
            contrast_factor_range: (1.0, 1.0),
            rotation_deg_max: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// PGM I/O (P5 binary, 8-bit, maxval 255)
// ---------------------------------------------------------------------------

/// Load an 8-bit single-channel image; each byte `v` maps to `v/255`.
pub fn load_image(path: &Path) -> Result<Image, ImageError> {
    let bytes = fs::read(path).map_err(|source| ImageError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_pgm(&bytes).map_err(|reason| ImageError::Format {
        path: path.display().to_string(),
        reason,
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<Image, String> {
    if bytes.len() < 2 {
        return Err("file too short for a PGM header".into());
    }
    match &bytes[..2] {
        b"P5" => {}
        b"P6" => return Err("P6 is a 3-channel PPM; expected single-channel P5".into()),
        b"P2" => return Err("ASCII P2 is unsupported; expected binary P5".into()),
        other => {
            return Err(format!(
                "bad magic {:?}; expected binary PGM (P5)",
                String::from_utf8_lossy(other)
            ))
        }
    }
    let mut pos = 2usize;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        *field = next_header_int(bytes, &mut pos)?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(format!(
            "maxval {maxval}: only 8-bit (maxval 255) supported"
        ));
    }
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator after header".into());
    }
    pos += 1;
    let need = width * height;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format!(
            "truncated raster: need {need} bytes, found {}",
            raster.len()
        ));
    }
    let pixels: Vec<f32> = raster[..need].iter().map(|&v| v as f32 / 255.0).collect();
    Image::new(height, width, pixels).map_err(|e| e.to_string())
}

fn next_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize, String> {
    // Skip whitespace and '#' comments that run to end of line.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err("malformed PGM header".into());
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| "malformed PGM header integer".into())
}

/// Quantize an intensity to its 8-bit code, rounding half up.
pub fn quantize_u8(p: f32) -> u8 {
    let v = (p as f64 * 255.0 + 0.5).floor();
    v.clamp(0.0, 255.0) as u8
}

/// Save as binary PGM. Round-trip through `load_image` recovers the image
/// quantized to the nearest 1/255 step.
pub fn save_image(img: &Image, path: &Path) -> Result<(), ImageError> {
    let mut out = Vec::with_capacity(img.pixels.len() + 32);
    write!(out, "P5\n{} {}\n255\n", img.width, img.height).expect("vec write");
    out.extend(img.pixels.iter().map(|&p| quantize_u8(p)));
    fs::write(path, out).map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Bilinear resize with half-pixel-center alignment.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image, ImageError> {
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::ZeroDimension);
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let scale_y = img.height as f64 / out_h as f64;
    let scale_x = img.width as f64 / out_w as f64;
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        for ox in 0..out_w {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            pixels.push(sample_bilinear_clamped(img, sy, sx));
        }
    }
    // Interpolation of values in [0,1] stays in [0,1]; clamp guards only
    // against float round-off at the boundaries.
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    Image::new(out_h, out_w, pixels)
}

/// Bilinear sample with coordinates clamped to the valid pixel grid.
fn sample_bilinear_clamped(img: &Image, y: f64, x: f64) -> f32 {
    let h = img.height as isize;
    let w = img.width as isize;
    let y0 = y.floor() as isize;
    let x0 = x.floor() as isize;
    let fy = (y - y0 as f64) as f32;
    let fx = (x - x0 as f64) as f32;
    let at = |r: isize, c: isize| -> f32 {
        let r = r.clamp(0, h - 1) as usize;
        let c = c.clamp(0, w - 1) as usize;
        img.pixels[r * img.width + c]
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear sample that returns `fill` outside the image bounds.
fn sample_bilinear_fill(img: &Image, y: f64, x: f64, fill: f32) -> f32 {
    let h = img.height as isize;
    let w = img.width as isize;
    let y0 = y.floor() as isize;
    let x0 = x.floor() as isize;
    let fy = (y - y0 as f64) as f32;
    let fx = (x - x0 as f64) as f32;
    let at = |r: isize, c: isize| -> f32 {
        if r < 0 || r >= h || c < 0 || c >= w {
            fill
        } else {
            img.pixels[r as usize * img.width + c as usize]
        }
    };
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Mirror an image left-right.
pub fn flip_horizontal(img: &Image) -> Image {
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for row in img.pixels.chunks(img.width) {
        pixels.extend(row.iter().rev());
    }
    Image {
        height: img.height,
        width: img.width,
        pixels,
    }
}

/// Rotate about the image center by `degrees`, bilinear resampling,
/// out-of-bounds fill 0.
fn rotate(img: &Image, degrees: f64) -> Image {
    let theta = degrees.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for oy in 0..img.height {
        let dy = oy as f64 - cy;
        for ox in 0..img.width {
            let dx = ox as f64 - cx;
            // Inverse mapping: rotate the destination coordinate back.
            let sy = cy + dx * sin_t + dy * cos_t;
            let sx = cx + dx * cos_t - dy * sin_t;
            let v = sample_bilinear_fill(img, sy, sx, 0.0).clamp(0.0, 1.0);
            pixels.push(v);
        }
    }
    Image {
        height: img.height,
        width: img.width,
        pixels,
    }
}

/// Apply, in order: horizontal mirror with probability `flip_prob`; the
/// pivoted intensity map `x -> clamp((x - 0.5)*c + 0.5 + b)`; rotation about
/// the center with bilinear resampling and fill 0.
///
/// Exactly four draws are consumed from `rng` (flip, contrast, brightness,
/// angle) regardless of the config, so the stream position is predictable.
pub fn augment(img: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Image {
    let flip_u: f64 = rng.random();
    let c = if cfg.contrast_factor_range.0 == cfg.contrast_factor_range.1 {
        let _ = rng.random::<f64>();
        cfg.contrast_factor_range.0
    } else {
        rng.random_range(cfg.contrast_factor_range.0..cfg.contrast_factor_range.1)
    };
    let b = if cfg.brightness_delta_max == 0.0 {
        let _ = rng.random::<f64>();
        0.0
    } else {
        rng.random_range(-cfg.brightness_delta_max..cfg.brightness_delta_max)
    };
    let angle = if cfg.rotation_deg_max == 0.0 {
        let _ = rng.random::<f64>();
        0.0
    } else {
        rng.random_range(-cfg.rotation_deg_max..cfg.rotation_deg_max)
    };

    let mut out = if flip_u < cfg.flip_prob {
        flip_horizontal(img)
    } else {
        img.clone()
    };
    if c != 1.0 || b != 0.0 {
        let cf = c as f32;
        let bf = b as f32;
        for p in &mut out.pixels {
            *p = ((*p - 0.5) * cf + 0.5 + bf).clamp(0.0, 1.0);
        }
    }
    if angle != 0.0 {
        out = rotate(&out, angle);
    }
    out
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

/// Per-class shuffled partition into train/val/test with floor-then-largest-
/// remainder apportionment. Deterministic for a fixed seed.
pub fn stratified_split(
    ds: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset), ImageError> {
    let (a, b, c) = fractions;
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(ImageError::Split(format!(
            "fractions {a}+{b}+{c} do not sum to 1"
        )));
    }
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(ImageError::Split("negative fraction".into()));
    }
    let classes = ds.classes();
    if classes.is_empty() {
        return Err(ImageError::Split("empty dataset".into()));
    }
    for &k in &classes {
        if ds.count_class(k) < 3 {
            return Err(ImageError::Split(format!(
                "class {k} has fewer than 3 items"
            )));
        }
    }

    let mut train = LabeledDataset::default();
    let mut val = LabeledDataset::default();
    let mut test = LabeledDataset::default();
    for &k in &classes {
        let mut idx: Vec<usize> = ds
            .items
            .iter()
            .enumerate()
            .filter(|(_, (_, c))| *c == k)
            .map(|(i, _)| i)
            .collect();
        let mut rng = crate::rng::stream(seed, "stratified-split", &[k as u64]);
        shuffle(&mut idx, &mut rng);
        let counts = apportion(idx.len(), &[a, b, c]);
        let (n_train, n_val) = (counts[0], counts[1]);
        for (pos, &i) in idx.iter().enumerate() {
            let item = ds.items[i].clone();
            if pos < n_train {
                train.items.push(item);
            } else if pos < n_train + n_val {
                val.items.push(item);
            } else {
                test.items.push(item);
            }
        }
    }
    Ok((train, val, test))
}

/// Fisher-Yates with draws from the given stream.
fn shuffle<T>(xs: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}

/// Floor-then-largest-remainder apportionment of `n` items over `fractions`.
/// Remainder ties go to the earlier split.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Dataset directory layout: <root>/<class_name>/<image>.pgm
// ---------------------------------------------------------------------------

/// Load a dataset directory; class names sorted lexicographically assign
/// integer labels 0, 1, ...
pub fn load_dataset_dir(root: &Path) -> Result<LabeledDataset, ImageError> {
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|source| ImageError::Read {
            path: root.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();

    let mut ds = LabeledDataset::default();
    for (label, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|source| ImageError::Read {
                path: dir.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "pgm").unwrap_or(false))
            .collect();
        files.sort();
        for f in files {
            ds.items.push((load_image(&f)?, label as u8));
        }
    }
    if ds.is_empty() {
        return Err(ImageError::EmptyDataset(root.display().to_string()));
    }
    Ok(ds)
}
