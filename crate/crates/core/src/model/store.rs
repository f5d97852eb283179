//! Named, ordered weight tensors and the binary checkpoint format.
//!
//! Checkpoint layout (little-endian, no alignment padding):
//!
//! ```text
//! magic "SXR1" (4 bytes)
//! format_version: u32
//! metadata block: u32 byte length, then UTF-8 key=value lines
//!                 (variant, width_scale, epoch, seed)
//! tensor count: u32
//! per tensor: name (u32 length + UTF-8), rank u32, dims u32 x rank,
//!             raw f32 data
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::tensor::Scalar;
use super::{ModelConfig, ModelError, Variant, WidthScale};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SXR1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint metadata carried alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreMeta {
    pub variant: Variant,
    pub width_scale: WidthScale,
    pub epoch: u32,
    pub seed: u64,
}

impl StoreMeta {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            width_scale: self.width_scale,
        }
    }
}

/// Ordered collection of named weight tensors; the checkpoint unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T = f32> {
    pub meta: StoreMeta,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(meta: StoreMeta) -> Self {
        Self {
            meta,
            names: Vec::new(),
            shapes: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Append a tensor; names must be unique.
    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>) -> Result<(), ModelError> {
        if self.index.contains_key(name) {
            return Err(ModelError::DuplicateTensor(name.to_string()));
        }
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(ModelError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.clone(),
                got: vec![data.len()],
            });
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.data.push(data);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn total_scalars(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.index.get(name).map(|&i| self.shapes[i].as_slice())
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.index.get(name).map(|&i| self.data[i].as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let i = *self.index.get(name)?;
        Some(self.data[i].as_mut_slice())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_index(&self, i: usize) -> (&str, &[usize], &[T]) {
        (&self.names[i], &self.shapes[i], &self.data[i])
    }

    pub fn data_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    /// Convert element precision, keeping names, shapes, and order.
    pub fn convert<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new(self.meta.clone());
        for i in 0..self.len() {
            let data = self.data[i]
                .iter()
                .map(|&v| U::from_f64(v.to_f64()))
                .collect();
            out.push(&self.names[i], self.shapes[i].clone(), data)
                .expect("names already unique");
        }
        out
    }
}

/// Per-tensor gradient (or moment) buffers aligned with a store's order.
#[derive(Debug, Clone)]
pub struct GradBuffer<T> {
    data: Vec<Vec<T>>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn zeros_like<U: Scalar>(store: &ParamStore<U>) -> Self {
        Self {
            data: (0..store.len())
                .map(|i| vec![T::ZERO; store.by_index(i).2.len()])
                .collect(),
        }
    }

    pub fn by_index(&self, i: usize) -> &[T] {
        &self.data[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i]
    }

    pub fn get_mut_for<U: Scalar>(&mut self, store: &ParamStore<U>, name: &str) -> &mut [T] {
        let i = store
            .index_of(name)
            .unwrap_or_else(|| panic!("gradient for unknown tensor {name}"));
        &mut self.data[i]
    }

    /// Two distinct tensors' buffers at once (weight and bias of one layer).
    pub fn pair_mut(&mut self, i: usize, j: usize) -> (&mut [T], &mut [T]) {
        assert_ne!(i, j);
        if i < j {
            let (a, b) = self.data.split_at_mut(j);
            (a[i].as_mut_slice(), b[0].as_mut_slice())
        } else {
            let (a, b) = self.data.split_at_mut(i);
            (b[0].as_mut_slice(), a[j].as_mut_slice())
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O (f32 storage only)
// ---------------------------------------------------------------------------

impl ParamStore<f32> {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = format!(
            "variant={}\nwidth_scale={}\nepoch={}\nseed={}\n",
            self.meta.variant, self.meta.width_scale, self.meta.epoch, self.meta.seed
        );
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for i in 0..self.len() {
            let (name, shape, data) = self.by_index(i);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
        };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ModelError::BadCheckpoint(format!(
                "bad magic {:02x?}, expected {CHECKPOINT_MAGIC:02x?}",
                magic
            )));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::BadCheckpoint(format!(
                "format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| ModelError::BadCheckpoint("metadata is not UTF-8".into()))?;
        let meta = parse_meta(meta_text)?;

        let count = r.u32()? as usize;
        let mut store = ParamStore::new(meta);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ModelError::BadCheckpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let mut data = Vec::with_capacity(n);
            for ch in raw.chunks_exact(4) {
                let v = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]);
                if !v.is_finite() {
                    return Err(ModelError::BadCheckpoint(format!(
                        "non-finite value in tensor {name}"
                    )));
                }
                data.push(v);
            }
            store.push(&name, shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "{} trailing bytes after tensor data",
                bytes.len() - r.pos
            )));
        }
        // Refuse stores that do not match their own declared architecture.
        super::audit(&store.meta.config(), &store)?;
        Ok(store)
    }
}

fn parse_meta(text: &str) -> Result<StoreMeta, ModelError> {
    let mut variant = None;
    let mut width_scale = None;
    let mut epoch = None;
    let mut seed = None;
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ModelError::BadCheckpoint(format!("bad metadata line {line:?}")))?;
        match key {
            "variant" => variant = Some(value.parse::<Variant>()?),
            "width_scale" => width_scale = Some(value.parse::<WidthScale>()?),
            "epoch" => {
                epoch = Some(
                    value
                        .parse::<u32>()
                        .map_err(|_| ModelError::BadCheckpoint(format!("bad epoch {value:?}")))?,
                )
            }
            "seed" => {
                seed = Some(
                    value
                        .parse::<u64>()
                        .map_err(|_| ModelError::BadCheckpoint(format!("bad seed {value:?}")))?,
                )
            }
            other => {
                return Err(ModelError::BadCheckpoint(format!(
                    "unknown metadata key {other:?}"
                )))
            }
        }
    }
    Ok(StoreMeta {
        variant: variant.ok_or_else(|| ModelError::BadCheckpoint("missing variant".into()))?,
        width_scale: width_scale
            .ok_or_else(|| ModelError::BadCheckpoint("missing width_scale".into()))?,
        epoch: epoch.ok_or_else(|| ModelError::BadCheckpoint("missing epoch".into()))?,
        seed: seed.ok_or_else(|| ModelError::BadCheckpoint("missing seed".into()))?,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
