//! Multilabel artefact detector.
//!
//! Pipeline per 1-minute slice, given its 10-minute parent:
//! multi-kernel convolutions at both scales (value + missing-mask input
//! channels), projection to `d_model` with learned positional embeddings,
//! pre-norm encoders per scale, cross-attention from local tokens to
//! context tokens, class-specific attention pooling, and one two-layer
//! sigmoid head per class.
//!
//! The context path does not depend on which slice is being classified,
//! so [`forward_parent`] computes it once for all ten slices.

use crate::error::{Error, Result};
use crate::nn::{self, EncoderSpec};
use crate::noise::ArtefactClass;
use crate::signal::{NormalizedSegment, MINUTES_PER_SEGMENT, SEGMENT10_LEN, SEGMENT1_LEN};
use crate::tensor::{Graph, ModelState, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameter group of the detector.
pub const GROUP: &str = "det";

/// Present values are fed to the network as `(v - INPUT_CENTER) * INPUT_SCALE`;
/// missing samples are fed as 0 with the mask channel set.
pub const INPUT_CENTER: f64 = 0.6;
pub const INPUT_SCALE: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub local_kernels: Vec<usize>,
    pub context_kernels: Vec<usize>,
    /// Output channels per kernel.
    pub channels: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Encoder layers per scale.
    pub encoder_layers: usize,
    pub ffn_dim: usize,
    pub context_stride: usize,
    pub class_count: usize,
    pub head_hidden: usize,
    pub gate_threshold: f64,
    /// Optional per-class override of `gate_threshold`.
    pub class_thresholds: Option<[f64; ArtefactClass::COUNT]>,
    pub dropout: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            local_kernels: vec![3, 5, 7],
            context_kernels: vec![9, 15, 31],
            channels: 32,
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            ffn_dim: 128,
            context_stride: 10,
            class_count: ArtefactClass::COUNT,
            head_hidden: 64,
            gate_threshold: 0.5,
            class_thresholds: None,
            dropout: 0.1,
        }
    }
}

impl DetectorConfig {
    /// Reduced sizes that train in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            channels: 8,
            d_model: 32,
            heads: 4,
            encoder_layers: 1,
            ffn_dim: 64,
            head_hidden: 32,
            dropout: 0.0,
            ..Self::default()
        }
    }

    /// Minimal sizes for gradient checks.
    pub fn tiny() -> Self {
        Self {
            local_kernels: vec![3],
            context_kernels: vec![5],
            channels: 2,
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            ffn_dim: 8,
            head_hidden: 4,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("heads {} must divide d_model {}", self.heads, self.d_model));
        }
        if !(self.gate_threshold > 0.0 && self.gate_threshold < 1.0) {
            return bad(format!("gate threshold {} not in (0, 1)", self.gate_threshold));
        }
        if let Some(t) = self.class_thresholds {
            if t.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return bad("class thresholds must lie in (0, 1]".into());
            }
        }
        if self.class_count != ArtefactClass::COUNT {
            return bad(format!("class_count must be {}", ArtefactClass::COUNT));
        }
        if self.local_kernels.is_empty() || self.context_kernels.is_empty() {
            return bad("kernel lists must be non-empty".into());
        }
        if self.local_kernels.iter().chain(&self.context_kernels).any(|k| k % 2 == 0) {
            return bad("kernel sizes must be odd".into());
        }
        if self.context_stride == 0 || !SEGMENT10_LEN.is_multiple_of(self.context_stride) {
            return bad(format!("context stride {} must divide {SEGMENT10_LEN}", self.context_stride));
        }
        if self.channels == 0 || self.ffn_dim == 0 || self.head_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn context_tokens(&self) -> usize {
        SEGMENT10_LEN / self.context_stride
    }

    pub fn threshold(&self, c: ArtefactClass) -> f64 {
        self.class_thresholds.map_or(self.gate_threshold, |t| t[c.index()])
    }

    fn encoder(&self) -> EncoderSpec {
        EncoderSpec {
            d_model: self.d_model,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
        }
    }
}

/// Randomly initialised detector parameters.
pub fn init(cfg: &DetectorConfig, seed: u64) -> Result<ModelState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ModelState::new();
    let d = cfg.d_model;
    let spec = cfg.encoder();
    for (scale, kernels, tokens) in [
        ("local", &cfg.local_kernels, SEGMENT1_LEN),
        ("ctx", &cfg.context_kernels, cfg.context_tokens()),
    ] {
        for &k in kernels {
            let bound = (6.0 / ((k * 2) + cfg.channels) as f64).sqrt();
            s.insert(format!("det.{scale}.conv{k}.w"), Tensor::uniform(&[k, 2, cfg.channels], bound, &mut rng))?;
            s.insert(format!("det.{scale}.conv{k}.b"), Tensor::zeros(&[cfg.channels]))?;
        }
        nn::init_linear(&mut s, &mut rng, &format!("det.{scale}.proj"), cfg.channels * kernels.len(), d)?;
        s.insert(format!("det.{scale}.pos"), Tensor::randn(&[tokens, d], 0.02, &mut rng))?;
        for l in 0..cfg.encoder_layers {
            nn::init_encoder(&mut s, &mut rng, &format!("det.{scale}.enc{l}"), &spec)?;
        }
    }
    s.insert("det.local.minute", Tensor::randn(&[MINUTES_PER_SEGMENT, d], 0.02, &mut rng))?;
    nn::init_layer_norm(&mut s, "det.cross.lnq", d)?;
    nn::init_layer_norm(&mut s, "det.cross.lnkv", d)?;
    nn::init_attention(&mut s, &mut rng, "det.cross.attn", d)?;
    nn::init_layer_norm(&mut s, "det.cross.ln2", d)?;
    nn::init_feed_forward(&mut s, &mut rng, "det.cross.ffn", d, cfg.ffn_dim)?;
    s.insert("det.pool.query", Tensor::randn(&[ArtefactClass::COUNT, d], 0.5, &mut rng))?;
    nn::init_linear(&mut s, &mut rng, "det.pool.k", d, d)?;
    for c in ArtefactClass::ALL {
        nn::init_linear(&mut s, &mut rng, &format!("det.head.{c}.fc1"), d, cfg.head_hidden)?;
        nn::init_linear(&mut s, &mut rng, &format!("det.head.{c}.fc2"), cfg.head_hidden, 1)?;
    }
    Ok(s)
}

/// `[len, 2]` network input: encoded value and missing mask.
pub fn encode_input(seg: &NormalizedSegment) -> Tensor {
    let mut data = Vec::with_capacity(seg.len() * 2);
    for (v, m) in seg.values.iter().zip(&seg.missing_mask) {
        if *m {
            data.extend([0.0, 1.0]);
        } else {
            data.extend([(v - INPUT_CENTER) * INPUT_SCALE, 0.0]);
        }
    }
    Tensor::new(vec![seg.len(), 2], data).expect("two channels per sample")
}

fn conv_bank(g: &mut Graph, state: &ModelState, scale: &str, kernels: &[usize], x: Var) -> Result<Var> {
    let mut outs = Vec::with_capacity(kernels.len());
    for &k in kernels {
        let w = g.param(state, &format!("det.{scale}.conv{k}.w"))?;
        let b = g.param(state, &format!("det.{scale}.conv{k}.b"))?;
        let y = g.conv1d(x, w, Some(b))?;
        outs.push(g.gelu(y));
    }
    g.concat(&outs, 1)
}

fn encoders(g: &mut Graph, state: &ModelState, cfg: &DetectorConfig, scale: &str, mut x: Var) -> Result<Var> {
    let spec = cfg.encoder();
    for l in 0..cfg.encoder_layers {
        x = nn::encoder_layer(g, state, &format!("det.{scale}.enc{l}"), x, &spec)?;
    }
    Ok(x)
}

/// Context tokens `[T_c, d_model]` of a 600-sample segment, after the
/// context encoders.
pub fn context_tokens(g: &mut Graph, state: &ModelState, cfg: &DetectorConfig, seg10: &NormalizedSegment) -> Result<Var> {
    if seg10.len() != SEGMENT10_LEN {
        return Err(Error::Shape(format!("context segment has {} samples, expected {SEGMENT10_LEN}", seg10.len())));
    }
    let x = g.constant(encode_input(seg10));
    let h = conv_bank(g, state, "ctx", &cfg.context_kernels, x)?;
    let h = g.avg_pool_rows(h, cfg.context_stride)?;
    let h = nn::linear(g, state, "det.ctx.proj", h)?;
    let pos = g.param(state, "det.ctx.pos")?;
    let h = g.add(h, pos)?;
    encoders(g, state, cfg, "ctx", h)
}

/// Local tokens `[60, d_model]` of one slice at `minute` within its parent.
pub fn local_tokens(
    g: &mut Graph,
    state: &ModelState,
    cfg: &DetectorConfig,
    seg1: &NormalizedSegment,
    minute: usize,
) -> Result<Var> {
    if seg1.len() != SEGMENT1_LEN {
        return Err(Error::Shape(format!("slice has {} samples, expected {SEGMENT1_LEN}", seg1.len())));
    }
    if minute >= MINUTES_PER_SEGMENT {
        return Err(Error::OutOfRange(format!("minute {minute} not in 0..{MINUTES_PER_SEGMENT}")));
    }
    let x = g.constant(encode_input(seg1));
    let h = conv_bank(g, state, "local", &cfg.local_kernels, x)?;
    let h = nn::linear(g, state, "det.local.proj", h)?;
    let pos = g.param(state, "det.local.pos")?;
    let h = g.add(h, pos)?;
    let minutes = g.param(state, "det.local.minute")?;
    let m = g.slice(minutes, 0, minute, 1)?;
    let h = g.add(h, m)?;
    encoders(g, state, cfg, "local", h)
}

/// Local tokens attend to every context token; residual plus feed-forward.
/// Returns the fused tokens and the attention node.
pub fn cross_attend(
    g: &mut Graph,
    state: &ModelState,
    cfg: &DetectorConfig,
    local: Var,
    context: Var,
) -> Result<(Var, Var)> {
    let q = nn::layer_norm(g, state, "det.cross.lnq", local)?;
    let kv = nn::layer_norm(g, state, "det.cross.lnkv", context)?;
    let (a, att) = nn::multi_head_attention(g, state, "det.cross.attn", q, kv, cfg.heads)?;
    let a = g.dropout(a, cfg.dropout);
    let x = g.add(local, a)?;
    let h = nn::layer_norm(g, state, "det.cross.ln2", x)?;
    let f = nn::feed_forward(g, state, "det.cross.ffn", h, cfg.dropout)?;
    let f = g.dropout(f, cfg.dropout);
    Ok((g.add(x, f)?, att))
}

/// One learned query per class attends over the fused tokens; values are
/// the fused tokens themselves, so each class vector is a convex
/// combination of them. Returns `[5, d_model]` and the attention node.
pub fn class_pool(g: &mut Graph, state: &ModelState, fused: Var) -> Result<(Var, Var)> {
    let q = g.param(state, "det.pool.query")?;
    let k = nn::linear(g, state, "det.pool.k", fused)?;
    let att = g.attention(q, k, fused, 1)?;
    Ok((att, att))
}

/// Per-class two-layer heads; `[5, 1]` probabilities.
pub fn classify(g: &mut Graph, state: &ModelState, class_vectors: Var) -> Result<Var> {
    let mut outs = Vec::with_capacity(ArtefactClass::COUNT);
    for c in ArtefactClass::ALL {
        let row = g.slice(class_vectors, 0, c.index(), 1)?;
        let h = nn::linear(g, state, &format!("det.head.{c}.fc1"), row)?;
        let h = g.gelu(h);
        let z = nn::linear(g, state, &format!("det.head.{c}.fc2"), h)?;
        outs.push(g.sigmoid(z));
    }
    g.concat(&outs, 0)
}

/// Graph handles of one slice's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SliceVars {
    pub minute: usize,
    pub local: Var,
    pub fused: Var,
    pub cross_att: Var,
    pub class_vectors: Var,
    pub probs: Var,
}

/// Forward pass of the slice at `minute`, reusing `context` when given.
pub fn forward_slice(
    g: &mut Graph,
    state: &ModelState,
    cfg: &DetectorConfig,
    seg10: &NormalizedSegment,
    minute: usize,
    context: Var,
) -> Result<SliceVars> {
    let seg1 = seg10.slice(minute * SEGMENT1_LEN, SEGMENT1_LEN);
    let local = local_tokens(g, state, cfg, &seg1, minute)?;
    let (fused, cross_att) = cross_attend(g, state, cfg, local, context)?;
    let (class_vectors, _) = class_pool(g, state, fused)?;
    let probs = classify(g, state, class_vectors)?;
    Ok(SliceVars { minute, local, fused, cross_att, class_vectors, probs })
}

/// Forward passes of the given minutes of one parent, sharing the context path.
pub fn forward_parent(
    g: &mut Graph,
    state: &ModelState,
    cfg: &DetectorConfig,
    seg10: &NormalizedSegment,
    minutes: &[usize],
) -> Result<(Var, Vec<SliceVars>)> {
    let context = context_tokens(g, state, cfg, seg10)?;
    let slices = minutes
        .iter()
        .map(|&m| forward_slice(g, state, cfg, seg10, m, context))
        .collect::<Result<_>>()?;
    Ok((context, slices))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub probs: [f64; ArtefactClass::COUNT],
    pub gates: [bool; ArtefactClass::COUNT],
    /// `[5, d_model]`, row-major.
    pub class_vectors: Vec<f64>,
}

/// `g_c = probs_c > threshold_c`.
pub fn gates_for(probs: &[f64; ArtefactClass::COUNT], cfg: &DetectorConfig) -> [bool; ArtefactClass::COUNT] {
    ArtefactClass::ALL.map(|c| probs[c.index()] > cfg.threshold(c))
}

/// Detection plus the fused tokens that the reconstructor consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceDetection {
    pub result: DetectionResult,
    /// `[60, d_model]`.
    pub fused: Tensor,
}

/// Inference on every slice of a parent segment.
pub fn detect_parent(state: &ModelState, cfg: &DetectorConfig, seg10: &NormalizedSegment) -> Result<Vec<SliceDetection>> {
    let minutes: Vec<usize> = (0..MINUTES_PER_SEGMENT).collect();
    detect_minutes(state, cfg, seg10, &minutes)
}

pub fn detect_minutes(
    state: &ModelState,
    cfg: &DetectorConfig,
    seg10: &NormalizedSegment,
    minutes: &[usize],
) -> Result<Vec<SliceDetection>> {
    let mut g = Graph::new();
    let (_, slices) = forward_parent(&mut g, state, cfg, seg10, minutes)?;
    Ok(slices
        .iter()
        .map(|s| {
            let p = g.value(s.probs).data();
            let probs: [f64; ArtefactClass::COUNT] = std::array::from_fn(|i| p[i]);
            SliceDetection {
                result: DetectionResult {
                    gates: gates_for(&probs, cfg),
                    probs,
                    class_vectors: g.value(s.class_vectors).data().to_vec(),
                },
                fused: g.value(s.fused).clone(),
            }
        })
        .collect())
}

/// Detection for one slice.
pub fn detect(state: &ModelState, cfg: &DetectorConfig, seg10: &NormalizedSegment, minute: usize) -> Result<SliceDetection> {
    Ok(detect_minutes(state, cfg, seg10, &[minute])?.remove(0))
}

/// Mean BCE over the given slices' probabilities.
pub fn bce_over(g: &mut Graph, slices: &[SliceVars], labels: &[[bool; ArtefactClass::COUNT]]) -> Result<Var> {
    if slices.len() != labels.len() || slices.is_empty() {
        return Err(Error::Shape(format!("{} slices vs {} label rows", slices.len(), labels.len())));
    }
    let probs: Vec<Var> = slices.iter().map(|s| s.probs).collect();
    let all = g.concat(&probs, 0)?;
    let target: Vec<f64> = labels.iter().flat_map(|l| l.iter().map(|b| if *b { 1.0 } else { 0.0 })).collect();
    g.bce_loss(all, &target)
}
