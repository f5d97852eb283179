//! The SharpXR network: shared encoder, denoise decoder, Laplacian-enhanced
//! edge decoder, learnable softmax fusion, and the ablation variants.
//!
//! Architecture at full width (`width_scale = 1`): encoder double-conv
//! stages with channels {64, 128, 256, 512} and a 1024-channel bottleneck;
//! each decoder runs four stages of [2x2 stride-2 transposed conv, skip
//! concatenation, double conv] followed by a 1x1 head with linear output.
//! The fusion head maps the two concatenated decoder outputs through a
//! 2->16->2 conv stack to per-pixel softmax weights and blends the decoders
//! convexly.
//!
//! The blend is computed as `xe + a1 * (xd - xe)`, which makes equal decoder
//! outputs an exact fixed point and makes a zeroed fusion head bit-identical
//! to the fixed 0.5/0.5 averaging used by the no-fusion variants.
//!
//! All learnable tensors live in a [`ParamStore`]; the fixed Laplacian
//! stencil is not learnable and never appears in the store.

mod layers;
mod store;
mod tensor;


use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use layers::{
    laplacian_depthwise, laplacian_enhance, laplacian_enhance_backward, LAPLACIAN_KERNEL,
};
pub use store::{GradBuffer, ParamStore, StoreMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::{concat_channels, split_channels, Scalar, Tensor};

use layers::{
    conv2d_backward_input, conv2d_backward_params, conv2d_forward, convt2_backward_input,
    convt2_backward_params, convt2_forward, maxpool2_backward, maxpool2_forward, relu_backward,
    relu_forward, softmax2_backward, softmax2_forward, PoolCache,
};

/// Fixed base channel count; scaled by [`WidthScale`].
pub const BASE_CHANNELS: usize = 64;
/// Hidden width of the fusion head.
pub const FUSION_HIDDEN: usize = 16;
/// Encoder/decoder depth (pooling stages); input dims must be divisible by
/// 2^STAGES.
pub const STAGES: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate tensor name {0}")]
    DuplicateTensor(String),
    #[error("tensor {name}: shape {expected:?} does not match data {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("parameter audit: {0}")]
    Audit(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("unknown variant {0:?} (expected single|dual|dual-laplacian|full)")]
    BadVariant(String),
    #[error("unknown width scale {0:?} (expected 1, 1/2, 1/4, 1/8, or 1/16)")]
    BadWidthScale(String),
}

/// Ablation variant, in the report row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    SingleDecoder,
    DualOnly,
    DualLaplacianNoFusion,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SingleDecoder,
        Variant::DualOnly,
        Variant::DualLaplacianNoFusion,
        Variant::Full,
    ];

    fn has_edge_decoder(self) -> bool {
        !matches!(self, Variant::SingleDecoder)
    }

    fn edge_skips_enhanced(self) -> bool {
        matches!(self, Variant::DualLaplacianNoFusion | Variant::Full)
    }

    fn has_fusion(self) -> bool {
        matches!(self, Variant::Full)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::SingleDecoder => "single",
            Variant::DualOnly => "dual",
            Variant::DualLaplacianNoFusion => "dual-laplacian",
            Variant::Full => "full",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Variant::SingleDecoder),
            "dual" => Ok(Variant::DualOnly),
            "dual-laplacian" => Ok(Variant::DualLaplacianNoFusion),
            "full" => Ok(Variant::Full),
            other => Err(ModelError::BadVariant(other.to_string())),
        }
    }
}

/// Uniform multiplier on channel counts; 1 reproduces the full layer
/// inventory, smaller scales keep training and finite-difference checks
/// tractable on a workstation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WidthScale {
    Full,
    Half,
    Quarter,
    Eighth,
    Sixteenth,
}

impl WidthScale {
    pub const ALL: [WidthScale; 5] = [
        WidthScale::Full,
        WidthScale::Half,
        WidthScale::Quarter,
        WidthScale::Eighth,
        WidthScale::Sixteenth,
    ];

    pub fn denominator(self) -> usize {
        match self {
            WidthScale::Full => 1,
            WidthScale::Half => 2,
            WidthScale::Quarter => 4,
            WidthScale::Eighth => 8,
            WidthScale::Sixteenth => 16,
        }
    }

    pub fn value(self) -> f64 {
        1.0 / self.denominator() as f64
    }
}

impl std::fmt::Display for WidthScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.denominator() {
            1 => f.write_str("1"),
            d => write!(f, "1/{d}"),
        }
    }
}

impl FromStr for WidthScale {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" | "1.0" => Ok(WidthScale::Full),
            "1/2" | "0.5" => Ok(WidthScale::Half),
            "1/4" | "0.25" => Ok(WidthScale::Quarter),
            "1/8" | "0.125" => Ok(WidthScale::Eighth),
            "1/16" | "0.0625" => Ok(WidthScale::Sixteenth),
            other => Err(ModelError::BadWidthScale(other.to_string())),
        }
    }
}

/// Variant plus width scale; fully determines the architecture and the
/// parameter inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub variant: Variant,
    pub width_scale: WidthScale,
}

impl ModelConfig {
    pub fn new(variant: Variant, width_scale: WidthScale) -> Self {
        Self {
            variant,
            width_scale,
        }
    }

    /// Channel count at encoder depth `d` (0-based).
    pub fn channels(&self, d: usize) -> usize {
        (BASE_CHANNELS / self.width_scale.denominator()) << d
    }

    /// Bottleneck channels: double the deepest stage.
    pub fn bottleneck_channels(&self) -> usize {
        self.channels(STAGES - 1) * 2
    }
}

/// Which decoder head a name belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderHead {
    Denoise,
    Edge,
}

impl DecoderHead {
    fn prefix(self) -> &'static str {
        match self {
            DecoderHead::Denoise => "decoder.denoise",
            DecoderHead::Edge => "decoder.edge",
        }
    }
}

// ---------------------------------------------------------------------------
// Layer inventory
// ---------------------------------------------------------------------------

/// Ordered (name, shape) list of every learnable tensor for a config.
pub fn layer_inventory(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut inv = Vec::new();
    let double_conv =
        |inv: &mut Vec<(String, Vec<usize>)>, prefix: &str, c_in: usize, c_out: usize| {
            inv.push((format!("{prefix}.conv1.weight"), vec![c_out, c_in, 3, 3]));
            inv.push((format!("{prefix}.conv1.bias"), vec![c_out]));
            inv.push((format!("{prefix}.conv2.weight"), vec![c_out, c_out, 3, 3]));
            inv.push((format!("{prefix}.conv2.bias"), vec![c_out]));
        };

    let mut c_in = 1;
    for d in 0..STAGES {
        let c_out = cfg.channels(d);
        double_conv(&mut inv, &format!("encoder.stage{d}"), c_in, c_out);
        c_in = c_out;
    }
    double_conv(
        &mut inv,
        "encoder.bottleneck",
        c_in,
        cfg.bottleneck_channels(),
    );

    let decoder = |inv: &mut Vec<(String, Vec<usize>)>, head: DecoderHead| {
        let p = head.prefix();
        let mut c_from = cfg.bottleneck_channels();
        for s in 0..STAGES {
            let c_to = cfg.channels(STAGES - 1 - s);
            inv.push((format!("{p}.up{s}.weight"), vec![c_from, c_to, 2, 2]));
            inv.push((format!("{p}.up{s}.bias"), vec![c_to]));
            double_conv(inv, &format!("{p}.stage{s}"), 2 * c_to, c_to);
            c_from = c_to;
        }
        inv.push((format!("{p}.head.weight"), vec![1, cfg.channels(0), 1, 1]));
        inv.push((format!("{p}.head.bias"), vec![1]));
    };
    decoder(&mut inv, DecoderHead::Denoise);
    if cfg.variant.has_edge_decoder() {
        decoder(&mut inv, DecoderHead::Edge);
    }
    if cfg.variant.has_fusion() {
        inv.push(("fusion.conv1.weight".into(), vec![FUSION_HIDDEN, 2, 3, 3]));
        inv.push(("fusion.conv1.bias".into(), vec![FUSION_HIDDEN]));
        inv.push(("fusion.conv2.weight".into(), vec![2, FUSION_HIDDEN, 3, 3]));
        inv.push(("fusion.conv2.bias".into(), vec![2]));
    }
    inv
}

/// Total learnable scalar count for a config.
pub fn param_count(cfg: &ModelConfig) -> usize {
    layer_inventory(cfg)
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum()
}

/// He-normal initialization (std `sqrt(2 / fan_in)`) for weights, zero
/// biases; each tensor draws from its own name-keyed stream so the store is
/// reproducible tensor by tensor.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f32> {
    let meta = StoreMeta {
        variant: cfg.variant,
        width_scale: cfg.width_scale,
        epoch: 0,
        seed,
    };
    let mut store = ParamStore::new(meta);
    for (name, shape) in layer_inventory(cfg) {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".weight") {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = crate::rng::named_stream(seed, "init", &name, &[]);
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * std) as f32
                })
                .collect()
        } else {
            vec![0.0f32; n]
        };
        store
            .push(&name, shape, data)
            .expect("inventory names are unique");
    }
    store
}

/// Verify that a store's names and shapes exactly match the config's
/// inventory, in order.
pub fn audit<T: Scalar>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<(), ModelError> {
    let inv = layer_inventory(cfg);
    if inv.len() != store.len() {
        return Err(ModelError::Audit(format!(
            "expected {} tensors for {:?}/{}, store has {}",
            inv.len(),
            cfg.variant,
            cfg.width_scale,
            store.len()
        )));
    }
    for (i, (name, shape)) in inv.iter().enumerate() {
        let (got_name, got_shape, _) = store.by_index(i);
        if got_name != name {
            return Err(ModelError::Audit(format!(
                "tensor {i}: expected {name}, found {got_name}"
            )));
        }
        if got_shape != shape.as_slice() {
            return Err(ModelError::Audit(format!(
                "tensor {name}: expected shape {shape:?}, found {got_shape:?}"
            )));
        }
    }
    Ok(())
}

pub fn save_checkpoint(store: &ParamStore<f32>, path: &std::path::Path) -> Result<(), ModelError> {
    store.save(path)
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ParamStore<f32>, ModelError> {
    ParamStore::load(path)
}

// ---------------------------------------------------------------------------
// Forward with caching
// ---------------------------------------------------------------------------

struct DoubleConvCache<T> {
    input: Tensor<T>,
    a1: Tensor<T>,
    out: Tensor<T>,
}

fn double_conv_fwd<T: Scalar>(
    input: Tensor<T>,
    prefix: &str,
    store: &ParamStore<T>,
) -> DoubleConvCache<T> {
    let w1 = store.get(&format!("{prefix}.conv1.weight")).unwrap();
    let b1 = store.get(&format!("{prefix}.conv1.bias")).unwrap();
    let w2 = store.get(&format!("{prefix}.conv2.weight")).unwrap();
    let b2 = store.get(&format!("{prefix}.conv2.bias")).unwrap();
    let c_out = b1.len();
    let z1 = conv2d_forward(&input, w1, b1, c_out, 3, 1);
    let a1 = relu_forward(&z1);
    let z2 = conv2d_forward(&a1, w2, b2, c_out, 3, 1);
    let out = relu_forward(&z2);
    DoubleConvCache { input, a1, out }
}

fn double_conv_bwd<T: Scalar>(
    g_out: &Tensor<T>,
    cache: &DoubleConvCache<T>,
    prefix: &str,
    store: &ParamStore<T>,
    grads: &mut GradBuffer<T>,
) -> Tensor<T> {
    let w1 = store.get(&format!("{prefix}.conv1.weight")).unwrap();
    let w2 = store.get(&format!("{prefix}.conv2.weight")).unwrap();
    let g_z2 = relu_backward(g_out, &cache.out);
    {
        let (gw, gb) = grads.pair_mut(
            store.index_of(&format!("{prefix}.conv2.weight")).unwrap(),
            store.index_of(&format!("{prefix}.conv2.bias")).unwrap(),
        );
        conv2d_backward_params(&g_z2, &cache.a1, gw, gb, 3, 1);
    }
    let g_a1 = conv2d_backward_input(&g_z2, w2, cache.a1.channels, 3, 1);
    let g_z1 = relu_backward(&g_a1, &cache.a1);
    {
        let (gw, gb) = grads.pair_mut(
            store.index_of(&format!("{prefix}.conv1.weight")).unwrap(),
            store.index_of(&format!("{prefix}.conv1.bias")).unwrap(),
        );
        conv2d_backward_params(&g_z1, &cache.input, gw, gb, 3, 1);
    }
    conv2d_backward_input(&g_z1, w1, cache.input.channels, 3, 1)
}

struct EncoderCache<T> {
    stages: Vec<DoubleConvCache<T>>,
    pools: Vec<PoolCache>,
    bottleneck: DoubleConvCache<T>,
}

fn encoder_fwd<T: Scalar>(x: &Tensor<T>, store: &ParamStore<T>) -> EncoderCache<T> {
    let mut stages = Vec::with_capacity(STAGES);
    let mut pools = Vec::with_capacity(STAGES);
    let mut cur = x.clone();
    for d in 0..STAGES {
        let stage = double_conv_fwd(cur, &format!("encoder.stage{d}"), store);
        let (pooled, pc) = maxpool2_forward(&stage.out);
        stages.push(stage);
        pools.push(pc);
        cur = pooled;
    }
    let bottleneck = double_conv_fwd(cur, "encoder.bottleneck", store);
    EncoderCache {
        stages,
        pools,
        bottleneck,
    }
}

/// Backward through the encoder. `skip_grads` carries the gradients flowing
/// into each stage output from the decoder side, ordered `[f4, f3, f2, f1]`.
fn encoder_bwd<T: Scalar>(
    g_bottleneck: &Tensor<T>,
    skip_grads: &[Tensor<T>],
    cache: &EncoderCache<T>,
    store: &ParamStore<T>,
    grads: &mut GradBuffer<T>,
) -> Tensor<T> {
    let mut g = double_conv_bwd(
        g_bottleneck,
        &cache.bottleneck,
        "encoder.bottleneck",
        store,
        grads,
    );
    for d in (0..STAGES).rev() {
        let mut g_stage_out = maxpool2_backward(&g, &cache.pools[d]);
        let sg = &skip_grads[STAGES - 1 - d];
        for (a, b) in g_stage_out.data.iter_mut().zip(&sg.data) {
            *a += *b;
        }
        g = double_conv_bwd(
            &g_stage_out,
            &cache.stages[d],
            &format!("encoder.stage{d}"),
            store,
            grads,
        );
    }
    g
}

struct DecoderCache<T> {
    stages: Vec<DoubleConvCache<T>>,
    out: Tensor<T>,
}

fn decoder_fwd<T: Scalar>(
    bottleneck: &Tensor<T>,
    skips: &[&Tensor<T>],
    head: DecoderHead,
    store: &ParamStore<T>,
) -> DecoderCache<T> {
    let p = head.prefix();
    let mut stages = Vec::with_capacity(STAGES);
    let mut cur = bottleneck.clone();
    for (s, skip) in skips.iter().enumerate() {
        let wu = store.get(&format!("{p}.up{s}.weight")).unwrap();
        let bu = store.get(&format!("{p}.up{s}.bias")).unwrap();
        let up = convt2_forward(&cur, wu, bu, bu.len());
        let cat = concat_channels(&up, skip);
        let stage = double_conv_fwd(cat, &format!("{p}.stage{s}"), store);
        cur = stage.out.clone();
        stages.push(stage);
    }
    let wh = store.get(&format!("{p}.head.weight")).unwrap();
    let bh = store.get(&format!("{p}.head.bias")).unwrap();
    let out = conv2d_forward(&cur, wh, bh, 1, 1, 0);
    DecoderCache { stages, out }
}

/// Backward through a decoder head. Returns the gradient w.r.t. the
/// bottleneck and the four skip gradients in `[f4, f3, f2, f1]` order.
fn decoder_bwd<T: Scalar>(
    g_out: &Tensor<T>,
    cache: &DecoderCache<T>,
    bottleneck: &Tensor<T>,
    head: DecoderHead,
    store: &ParamStore<T>,
    grads: &mut GradBuffer<T>,
) -> (Tensor<T>, Vec<Tensor<T>>) {
    let p = head.prefix();
    let wh = store.get(&format!("{p}.head.weight")).unwrap();
    {
        let (gw, gb) = grads.pair_mut(
            store.index_of(&format!("{p}.head.weight")).unwrap(),
            store.index_of(&format!("{p}.head.bias")).unwrap(),
        );
        conv2d_backward_params(g_out, &cache.stages[STAGES - 1].out, gw, gb, 1, 0);
    }
    let mut g = conv2d_backward_input(g_out, wh, cache.stages[STAGES - 1].out.channels, 1, 0);

    let mut skip_grads: Vec<Option<Tensor<T>>> = (0..STAGES).map(|_| None).collect();
    for s in (0..STAGES).rev() {
        let g_cat = double_conv_bwd(&g, &cache.stages[s], &format!("{p}.stage{s}"), store, grads);
        let up_channels = cache.stages[s].input.channels - skip_channels(&cache.stages[s]);
        let (g_up, g_skip) = split_channels(&g_cat, up_channels);
        skip_grads[s] = Some(g_skip);
        let up_input = if s == 0 {
            bottleneck
        } else {
            &cache.stages[s - 1].out
        };
        let wu = store.get(&format!("{p}.up{s}.weight")).unwrap();
        {
            let (gw, gb) = grads.pair_mut(
                store.index_of(&format!("{p}.up{s}.weight")).unwrap(),
                store.index_of(&format!("{p}.up{s}.bias")).unwrap(),
            );
            convt2_backward_params(&g_up, up_input, gw, gb);
        }
        g = convt2_backward_input(&g_up, wu, up_input.channels);
    }
    (g, skip_grads.into_iter().map(Option::unwrap).collect())
}

/// Concat layout is `[up | skip]` with equal halves.
fn skip_channels<T>(stage: &DoubleConvCache<T>) -> usize
where
    T: Scalar,
{
    stage.input.channels / 2
}

struct FusionCache<T> {
    cat: Tensor<T>,
    hidden: Tensor<T>,
    alpha: Tensor<T>,
}

fn fusion_fwd<T: Scalar>(
    xd: &Tensor<T>,
    xe: &Tensor<T>,
    store: &ParamStore<T>,
) -> (Tensor<T>, FusionCache<T>) {
    let cat = concat_channels(xd, xe);
    let w1 = store.get("fusion.conv1.weight").unwrap();
    let b1 = store.get("fusion.conv1.bias").unwrap();
    let w2 = store.get("fusion.conv2.weight").unwrap();
    let b2 = store.get("fusion.conv2.bias").unwrap();
    let hidden = relu_forward(&conv2d_forward(&cat, w1, b1, FUSION_HIDDEN, 3, 1));
    let logits = conv2d_forward(&hidden, w2, b2, 2, 3, 1);
    let alpha = softmax2_forward(&logits);
    let xhat = blend(xd, xe, BlendWeights::PerPixel(&alpha));
    (xhat, FusionCache { cat, hidden, alpha })
}

enum BlendWeights<'a, T> {
    /// Fixed 0.5/0.5 averaging for the no-fusion variants.
    Half,
    /// Per-pixel softmax weights; channel 0 weights the denoise output.
    PerPixel(&'a Tensor<T>),
}

/// Convex blend `xe + a1 * (xd - xe)`: equal inputs pass through exactly,
/// and `a1 = 0.5` reproduces the fixed average bit for bit.
fn blend<T: Scalar>(xd: &Tensor<T>, xe: &Tensor<T>, weights: BlendWeights<'_, T>) -> Tensor<T> {
    let half = T::from_f64(0.5);
    let data = match weights {
        BlendWeights::Half => xd
            .data
            .iter()
            .zip(&xe.data)
            .map(|(&d, &e)| e + half * (d - e))
            .collect(),
        BlendWeights::PerPixel(alpha) => {
            let mut v = Vec::with_capacity(xd.data.len());
            for b in 0..xd.batch {
                let a1 = alpha.plane(b, 0);
                let pd = xd.plane(b, 0);
                let pe = xe.plane(b, 0);
                for i in 0..pd.len() {
                    v.push(pe[i] + a1[i] * (pd[i] - pe[i]));
                }
            }
            v
        }
    };
    Tensor::from_vec(xd.batch, 1, xd.height, xd.width, data)
}

/// Everything the backward pass needs, produced by [`forward_training`].
pub struct TrainingCache<T> {
    enc: EncoderCache<T>,
    den: DecoderCache<T>,
    edge: Option<DecoderCache<T>>,
    fusion: Option<FusionCache<T>>,
}

fn validate_input<T: Scalar>(x: &Tensor<T>) -> Result<(), ModelError> {
    if x.channels != 1 {
        return Err(ModelError::BadInput(format!(
            "expected 1 input channel, got {}",
            x.channels
        )));
    }
    let stride = 1 << STAGES;
    if x.height == 0
        || x.width == 0
        || !x.height.is_multiple_of(stride)
        || !x.width.is_multiple_of(stride)
    {
        return Err(ModelError::BadInput(format!(
            "spatial dims {}x{} must be positive and divisible by {stride}",
            x.height, x.width
        )));
    }
    if x.batch == 0 {
        return Err(ModelError::BadInput("empty batch".into()));
    }
    if !x.all_finite() {
        return Err(ModelError::BadInput("non-finite input values".into()));
    }
    Ok(())
}

/// Forward pass with caching, linear (unclamped) output — training mode.
pub fn forward_training<T: Scalar>(
    x: &Tensor<T>,
    cfg: &ModelConfig,
    store: &ParamStore<T>,
) -> Result<(Tensor<T>, TrainingCache<T>), ModelError> {
    audit(cfg, store)?;
    validate_input(x)?;
    let enc = encoder_fwd(x, store);
    let raw_skips: Vec<&Tensor<T>> = (0..STAGES).rev().map(|d| &enc.stages[d].out).collect();
    let den = decoder_fwd(&enc.bottleneck.out, &raw_skips, DecoderHead::Denoise, store);

    let (out, edge, fusion) = match cfg.variant {
        Variant::SingleDecoder => (den.out.clone(), None, None),
        Variant::DualOnly => {
            let edge = decoder_fwd(&enc.bottleneck.out, &raw_skips, DecoderHead::Edge, store);
            let out = blend(&den.out, &edge.out, BlendWeights::Half);
            (out, Some(edge), None)
        }
        Variant::DualLaplacianNoFusion | Variant::Full => {
            let enhanced: Vec<Tensor<T>> = raw_skips.iter().map(|f| laplacian_enhance(f)).collect();
            let enhanced_refs: Vec<&Tensor<T>> = enhanced.iter().collect();
            let edge = decoder_fwd(
                &enc.bottleneck.out,
                &enhanced_refs,
                DecoderHead::Edge,
                store,
            );
            if cfg.variant.has_fusion() {
                let (out, fc) = fusion_fwd(&den.out, &edge.out, store);
                (out, Some(edge), Some(fc))
            } else {
                let out = blend(&den.out, &edge.out, BlendWeights::Half);
                (out, Some(edge), None)
            }
        }
    };
    Ok((
        out,
        TrainingCache {
            enc,
            den,
            edge,
            fusion,
        },
    ))
}

/// Inference forward: same computation, output clamped to `[0,1]`.
pub fn forward<T: Scalar>(
    x: &Tensor<T>,
    cfg: &ModelConfig,
    store: &ParamStore<T>,
) -> Result<Tensor<T>, ModelError> {
    let (out, _) = forward_training(x, cfg, store)?;
    Ok(out.map(|v| {
        if v < T::ZERO {
            T::ZERO
        } else if v > T::ONE {
            T::ONE
        } else {
            v
        }
    }))
}

/// Full backward pass. Returns parameter gradients aligned with the store
/// and the gradient w.r.t. the network input.
pub fn backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &TrainingCache<T>,
    cfg: &ModelConfig,
    store: &ParamStore<T>,
) -> (GradBuffer<T>, Tensor<T>) {
    let mut grads = GradBuffer::zeros_like(store);
    let half = T::from_f64(0.5);

    // Split the output gradient between the decoder heads.
    let (g_xd, g_xe) = match cfg.variant {
        Variant::SingleDecoder => (grad_out.clone(), None),
        Variant::DualOnly | Variant::DualLaplacianNoFusion => {
            let g_half = grad_out.map(|v| v * half);
            (g_half.clone(), Some(g_half))
        }
        Variant::Full => {
            let fc = cache.fusion.as_ref().expect("full variant caches fusion");
            let xd = &cache.den.out;
            let xe = &cache.edge.as_ref().unwrap().out;
            // xhat = xe + a1*(xd - xe)
            let mut g_xd = Tensor::zeros(xd.batch, 1, xd.height, xd.width);
            let mut g_xe = g_xd.clone();
            let mut g_alpha = Tensor::zeros(xd.batch, 2, xd.height, xd.width);
            for b in 0..xd.batch {
                let a1 = fc.alpha.plane(b, 0);
                let g = grad_out.plane(b, 0);
                let pd = xd.plane(b, 0);
                let pe = xe.plane(b, 0);
                let gd = g_xd.plane_mut(b, 0);
                for i in 0..g.len() {
                    gd[i] = a1[i] * g[i];
                }
                let ge = g_xe.plane_mut(b, 0);
                for i in 0..g.len() {
                    ge[i] = g[i] - a1[i] * g[i];
                }
                let ga1 = g_alpha.plane_mut(b, 0);
                for i in 0..g.len() {
                    ga1[i] = g[i] * (pd[i] - pe[i]);
                }
            }
            let g_logits = softmax2_backward(&g_alpha, &fc.alpha);
            let w2 = store.get("fusion.conv2.weight").unwrap();
            {
                let (gw, gb) = grads.pair_mut(
                    store.index_of("fusion.conv2.weight").unwrap(),
                    store.index_of("fusion.conv2.bias").unwrap(),
                );
                conv2d_backward_params(&g_logits, &fc.hidden, gw, gb, 3, 1);
            }
            let g_hidden_pre = conv2d_backward_input(&g_logits, w2, FUSION_HIDDEN, 3, 1);
            let g_hidden = relu_backward(&g_hidden_pre, &fc.hidden);
            let w1 = store.get("fusion.conv1.weight").unwrap();
            {
                let (gw, gb) = grads.pair_mut(
                    store.index_of("fusion.conv1.weight").unwrap(),
                    store.index_of("fusion.conv1.bias").unwrap(),
                );
                conv2d_backward_params(&g_hidden, &fc.cat, gw, gb, 3, 1);
            }
            let g_cat = conv2d_backward_input(&g_hidden, w1, 2, 3, 1);
            let (g_xd_cat, g_xe_cat) = split_channels(&g_cat, 1);
            for (a, b) in g_xd.data.iter_mut().zip(&g_xd_cat.data) {
                *a += *b;
            }
            for (a, b) in g_xe.data.iter_mut().zip(&g_xe_cat.data) {
                *a += *b;
            }
            (g_xd, Some(g_xe))
        }
    };

    let (g_bott_d, skips_d) = decoder_bwd(
        &g_xd,
        &cache.den,
        &cache.enc.bottleneck.out,
        DecoderHead::Denoise,
        store,
        &mut grads,
    );
    let mut g_bott = g_bott_d;
    let mut skip_grads = skips_d;

    if let Some(g_xe) = g_xe {
        let edge = cache
            .edge
            .as_ref()
            .expect("dual variants cache the edge decoder");
        let (g_bott_e, skips_e) = decoder_bwd(
            &g_xe,
            edge,
            &cache.enc.bottleneck.out,
            DecoderHead::Edge,
            store,
            &mut grads,
        );
        for (a, b) in g_bott.data.iter_mut().zip(&g_bott_e.data) {
            *a += *b;
        }
        for (acc, g_skip) in skip_grads.iter_mut().zip(skips_e) {
            let g_raw = if cfg.variant.edge_skips_enhanced() {
                laplacian_enhance_backward(&g_skip)
            } else {
                g_skip
            };
            for (a, b) in acc.data.iter_mut().zip(&g_raw.data) {
                *a += *b;
            }
        }
    }

    let g_input = encoder_bwd(&g_bott, &skip_grads, &cache.enc, store, &mut grads);
    (grads, g_input)
}

// ---------------------------------------------------------------------------
// Standalone operations on plain feature maps
// ---------------------------------------------------------------------------

/// Multi-scale encoder features plus the bottleneck.
pub struct EncoderFeatures<T> {
    /// `f[d]` has `channels(d)` channels at `H/2^d x W/2^d`.
    pub features: Vec<Tensor<T>>,
    pub bottleneck: Tensor<T>,
}

/// Run the shared encoder alone.
pub fn encoder_forward<T: Scalar>(
    x: &Tensor<T>,
    cfg: &ModelConfig,
    store: &ParamStore<T>,
) -> Result<EncoderFeatures<T>, ModelError> {
    audit(cfg, store)?;
    validate_input(x)?;
    let enc = encoder_fwd(x, store);
    Ok(EncoderFeatures {
        features: enc.stages.into_iter().map(|s| s.out).collect(),
        bottleneck: enc.bottleneck.out,
    })
}

/// Run one decoder head on explicit skips, ordered `[f4, f3, f2, f1]`.
pub fn decoder_forward<T: Scalar>(
    bottleneck: &Tensor<T>,
    skips: &[&Tensor<T>],
    head: DecoderHead,
    store: &ParamStore<T>,
) -> Result<Tensor<T>, ModelError> {
    if skips.len() != STAGES {
        return Err(ModelError::BadInput(format!(
            "expected {STAGES} skips, got {}",
            skips.len()
        )));
    }
    let mut c = bottleneck.channels;
    for (s, skip) in skips.iter().enumerate() {
        if skip.channels * 2 != c {
            return Err(ModelError::BadInput(format!(
                "skip {s} has {} channels, expected {}",
                skip.channels,
                c / 2
            )));
        }
        c = skip.channels;
    }
    Ok(decoder_fwd(bottleneck, skips, head, store).out)
}

/// Internals re-exported for benchmarks and oracle tests.
#[doc(hidden)]
pub mod test_support {
    use super::*;

    pub fn conv2d_forward_public<T: Scalar>(
        input: &Tensor<T>,
        weight: &[T],
        bias: &[T],
        c_out: usize,
        k: usize,
        pad: usize,
    ) -> Tensor<T> {
        layers::conv2d_forward(input, weight, bias, c_out, k, pad)
    }

    pub fn conv2d_backward_input_public<T: Scalar>(
        grad_out: &Tensor<T>,
        weight: &[T],
        c_in: usize,
        k: usize,
        pad: usize,
    ) -> Tensor<T> {
        layers::conv2d_backward_input(grad_out, weight, c_in, k, pad)
    }

    pub fn conv2d_backward_params_public<T: Scalar>(
        grad_out: &Tensor<T>,
        input: &Tensor<T>,
        grad_w: &mut [T],
        grad_b: &mut [T],
        k: usize,
        pad: usize,
    ) {
        layers::conv2d_backward_params(grad_out, input, grad_w, grad_b, k, pad)
    }

    pub fn convt2_forward_public<T: Scalar>(
        input: &Tensor<T>,
        weight: &[T],
        bias: &[T],
        c_out: usize,
    ) -> Tensor<T> {
        layers::convt2_forward(input, weight, bias, c_out)
    }
}

/// Run the fusion head on two single-channel maps; returns the blended
/// output and the `[B,2,H,W]` weight map.
pub fn fusion_forward<T: Scalar>(
    xd: &Tensor<T>,
    xe: &Tensor<T>,
    store: &ParamStore<T>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    if xd.shape() != xe.shape() || xd.channels != 1 {
        return Err(ModelError::BadInput(format!(
            "fusion inputs must be equal single-channel maps, got {:?} and {:?}",
            xd.shape(),
            xe.shape()
        )));
    }
    let (xhat, fc) = fusion_fwd(xd, xe, store);
    Ok((xhat, fc.alpha))
}
