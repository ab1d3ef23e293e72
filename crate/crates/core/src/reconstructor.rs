//! Gated, artefact-specific reconstruction of a 1-minute slice.
//!
//! Halving and doubling are repaired by a predicted position mask `M` and
//! exact amplitude correction `x * ((1 - M) + M * f)`. MHR, missing and
//! spike artefacts are repaired by small transformer denoisers. Each
//! branch output passes through its detector gate
//! (`x_hat * g + x * (1 - g)`), and a per-position softmax over the five
//! gated candidates plus the original signal fuses them.

use crate::baselines::linear_interpolate;
use crate::detector::{SliceDetection, INPUT_CENTER, INPUT_SCALE};
use crate::error::{Error, Result};
use crate::nn::{self, EncoderSpec};
use crate::noise::ArtefactClass;
use crate::signal::{NormalizedSegment, SEGMENT10_LEN, SEGMENT1_LEN};
use crate::tensor::{Graph, ModelState, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameter group of the reconstructor.
pub const GROUP: &str = "rec";

/// Candidates: the five branches in class order, then the original signal.
pub const CANDIDATES: usize = ArtefactClass::COUNT + 1;

fn denoiser_active(gates: &[bool; ArtefactClass::COUNT]) -> bool {
    ArtefactClass::ALL.iter().any(|c| gates[c.index()] && correction_factor(*c).is_none())
}

/// Score offset removing a candidate from the fusion softmax.
const PASS_THROUGH_EXCLUDED: f64 = -1e4;

/// Per-position input features: value, missing mask, bridged value,
/// ratio to the context median, short and long running medians, plus the
/// five gates.
const INPUT_FEATURES: usize = 6 + ArtefactClass::COUNT;

/// Band of plausible ratios to the parent median; samples outside it do
/// not anchor the bridged reference.
const REFERENCE_BAND: (f64, f64) = (0.85, 1.3);

/// Half-widths of the running medians (9 and 61 samples).
const SHORT_MEDIAN_RADIUS: usize = 4;
const LONG_MEDIAN_RADIUS: usize = 30;

/// Centred running median of the present samples, falling back to `fill`
/// where a window has none.
fn running_median(values: &[f64], missing: &[bool], radius: usize, fill: f64) -> Vec<f64> {
    let n = values.len();
    let mut buf = Vec::with_capacity(2 * radius + 1);
    (0..n)
        .map(|t| {
            buf.clear();
            let lo = t.saturating_sub(radius);
            let hi = (t + radius + 1).min(n);
            buf.extend((lo..hi).filter(|&s| !missing[s]).map(|s| values[s]));
            if buf.is_empty() {
                return fill;
            }
            buf.sort_by(f64::total_cmp);
            let k = buf.len();
            if k % 2 == 1 {
                buf[k / 2]
            } else {
                0.5 * (buf[k / 2 - 1] + buf[k / 2])
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructorConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Encoder layers per branch.
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Threshold binarising the position masks at inference.
    pub mask_threshold: f64,
    /// Width of the detector's fused tokens.
    pub detector_dim: usize,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn_dim: 128,
            dropout: 0.1,
            mask_threshold: 0.5,
            detector_dim: 64,
        }
    }
}

impl ReconstructorConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            layers: 1,
            ffn_dim: 64,
            dropout: 0.0,
            detector_dim: 32,
            ..Self::default()
        }
    }

    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            layers: 1,
            ffn_dim: 8,
            dropout: 0.0,
            detector_dim: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("heads {} must divide d_model {}", self.heads, self.d_model)));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::Config("mask threshold must lie in (0, 1)".into()));
        }
        if self.layers == 0 || self.ffn_dim == 0 || self.detector_dim == 0 {
            return Err(Error::Config("layer counts and widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
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

/// Amplitude factor applied by the scaling branches.
pub fn correction_factor(c: ArtefactClass) -> Option<f64> {
    match c {
        ArtefactClass::Halving => Some(2.0),
        ArtefactClass::Doubling => Some(0.5),
        _ => None,
    }
}

/// `x_t * ((1 - M_t) + M_t * f)`.
pub fn math_correct(x: &[f64], m: &[f64], f: f64) -> Vec<f64> {
    x.iter().zip(m).map(|(x, m)| x * ((1.0 - m) + m * f)).collect()
}

/// `x_hat * g + x * (1 - g)` with a binary gate.
pub fn gate_combine(x: &[f64], x_hat: &[f64], g: bool) -> Vec<f64> {
    if g {
        x_hat.to_vec()
    } else {
        x.to_vec()
    }
}

/// Per-position convex combination of candidate rows.
pub fn fuse(candidates: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = candidates.first().map_or(0, Vec::len);
    if weights.len() != n || candidates.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("fusion candidates and weights disagree".into()));
    }
    Ok((0..n)
        .map(|t| candidates.iter().zip(&weights[t]).map(|(c, w)| w * c[t]).sum())
        .collect())
}

pub fn init(cfg: &ReconstructorConfig, seed: u64) -> Result<ModelState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ModelState::new();
    let d = cfg.d_model;
    let spec = cfg.encoder();
    nn::init_linear(&mut s, &mut rng, "rec.in", INPUT_FEATURES, d)?;
    nn::init_linear(&mut s, &mut rng, "rec.feat", cfg.detector_dim, d)?;
    s.insert("rec.pos", Tensor::randn(&[SEGMENT1_LEN, d], 0.02, &mut rng))?;
    for c in ArtefactClass::ALL {
        for l in 0..cfg.layers {
            nn::init_encoder(&mut s, &mut rng, &format!("rec.{c}.enc{l}"), &spec)?;
        }
        nn::init_layer_norm(&mut s, &format!("rec.{c}.ln"), d)?;
        nn::init_linear(&mut s, &mut rng, &format!("rec.{c}.head"), d, 1)?;
    }
    // Denoisers start at their reference; masks start mostly off.
    for c in ArtefactClass::ALL.into_iter().filter(|c| correction_factor(*c).is_none()) {
        s.get_mut(&format!("rec.{c}.head.w")).expect("just inserted").data_mut().fill(0.0);
    }
    for c in [ArtefactClass::Halving, ArtefactClass::Doubling] {
        s.get_mut(&format!("rec.{c}.head.b")).expect("just inserted").data_mut()[0] = -2.0;
    }
    nn::init_encoder(&mut s, &mut rng, "rec.fuse.enc0", &spec)?;
    nn::init_layer_norm(&mut s, "rec.fuse.ln", d)?;
    nn::init_linear(&mut s, &mut rng, "rec.fuse.score", d + 2 * CANDIDATES + 1, CANDIDATES)?;
    // Prefer the original signal until trained.
    s.get_mut("rec.fuse.score.b").expect("just inserted").data_mut()[CANDIDATES - 1] = 2.0;
    Ok(s)
}

/// Everything the reconstructor needs about one slice, precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceInput {
    /// Normalised corrupted values; 0 where missing.
    pub x: Vec<f64>,
    pub missing: Vec<bool>,
    /// `x` with missing and implausible samples bridged linearly across the
    /// parent.
    pub x_ref: Vec<f64>,
    /// Median of the parent's present samples.
    pub context_median: f64,
    /// Running medians of the parent's present samples over 9 and 61
    /// samples.
    pub median_short: Vec<f64>,
    pub median_long: Vec<f64>,
    /// Detector fused tokens `[60, detector_dim]`.
    pub fused: Tensor,
}

impl SliceInput {
    pub fn new(seg10: &NormalizedSegment, minute: usize, fused: Tensor) -> Result<Self> {
        if seg10.len() != SEGMENT10_LEN {
            return Err(Error::Shape(format!("parent has {} samples, expected {SEGMENT10_LEN}", seg10.len())));
        }
        let start = minute * SEGMENT1_LEN;
        if start + SEGMENT1_LEN > SEGMENT10_LEN {
            return Err(Error::OutOfRange(format!("minute {minute}")));
        }
        let mut present: Vec<f64> =
            seg10.values.iter().zip(&seg10.missing_mask).filter(|(_, m)| !**m).map(|(v, _)| *v).collect();
        let context_median = if present.is_empty() {
            INPUT_CENTER
        } else {
            present.sort_by(f64::total_cmp);
            present[present.len() / 2]
        };
        let med = context_median.max(1e-3);
        let implausible: Vec<bool> = seg10
            .values
            .iter()
            .zip(&seg10.missing_mask)
            .map(|(v, m)| *m || !(REFERENCE_BAND.0..=REFERENCE_BAND.1).contains(&(v / med)))
            .collect();
        let bridged = linear_interpolate(&seg10.values, &implausible)
            .unwrap_or_else(|_| vec![context_median; SEGMENT10_LEN]);
        let r = start..start + SEGMENT1_LEN;
        // Only the slice and its neighbourhood are needed for the medians.
        let lo = start.saturating_sub(LONG_MEDIAN_RADIUS);
        let hi = (start + SEGMENT1_LEN + LONG_MEDIAN_RADIUS).min(SEGMENT10_LEN);
        let (vals, miss) = (&seg10.values[lo..hi], &seg10.missing_mask[lo..hi]);
        let inner = start - lo..start - lo + SEGMENT1_LEN;
        let short = running_median(vals, miss, SHORT_MEDIAN_RADIUS, f64::NAN);
        let long = running_median(vals, miss, LONG_MEDIAN_RADIUS, context_median);
        let median_short = inner
            .clone()
            .zip(r.clone())
            .map(|(i, t)| if short[i].is_nan() { bridged[t] } else { short[i] })
            .collect();
        Ok(Self {
            x: seg10.values[r.clone()].to_vec(),
            missing: seg10.missing_mask[r.clone()].to_vec(),
            x_ref: bridged[r].to_vec(),
            context_median,
            median_short,
            median_long: long[inner].to_vec(),
            fused,
        })
    }

    fn features(&self, gates: &[bool; ArtefactClass::COUNT]) -> Tensor {
        let mut data = Vec::with_capacity(SEGMENT1_LEN * INPUT_FEATURES);
        let med = self.context_median.max(1e-3);
        for t in 0..SEGMENT1_LEN {
            let (xv, ratio) = if self.missing[t] {
                (0.0, 0.0)
            } else {
                ((self.x[t] - INPUT_CENTER) * INPUT_SCALE, (self.x[t] / med - 1.0).clamp(-1.0, 1.5))
            };
            data.extend([
                xv,
                f64::from(u8::from(self.missing[t])),
                (self.x_ref[t] - INPUT_CENTER) * INPUT_SCALE,
                ratio,
                (self.median_short[t] - INPUT_CENTER) * INPUT_SCALE,
                (self.median_long[t] - INPUT_CENTER) * INPUT_SCALE,
            ]);
            data.extend(gates.iter().map(|g| f64::from(u8::from(*g))));
        }
        Tensor::new(vec![SEGMENT1_LEN, INPUT_FEATURES], data).expect("fixed feature width")
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(0.01, 0.99);
    (p / (1.0 - p)).ln()
}

/// Graph handles of one reconstruction.
#[derive(Clone, Debug)]
pub struct ReconVars {
    /// `[60, 1]` fused output.
    pub output: Var,
    /// Raw branch outputs, for active branches.
    pub branch: [Option<Var>; ArtefactClass::COUNT],
    /// Soft position masks of the active scaling branches.
    pub masks: [Option<Var>; ArtefactClass::COUNT],
    /// `[60, 6]` fusion weights.
    pub weights: Var,
    /// `[60, 6]` gated candidates.
    pub candidates: Var,
}

/// Builds the reconstruction graph. Branches whose gate is off are not
/// evaluated: their candidate is `x`. With `binarize`, scaling branches use
/// the thresholded mask (inference); otherwise the soft mask (training).
/// `mask_override` replaces a scaling branch's mask with a given binary one.
pub fn forward(
    g: &mut Graph,
    state: &ModelState,
    cfg: &ReconstructorConfig,
    input: &SliceInput,
    gates: &[bool; ArtefactClass::COUNT],
    binarize: bool,
    mask_override: &[Option<Vec<bool>>; ArtefactClass::COUNT],
) -> Result<ReconVars> {
    if input.fused.shape() != [SEGMENT1_LEN, cfg.detector_dim] {
        return Err(Error::Shape(format!(
            "detector features {:?}, expected [{SEGMENT1_LEN}, {}]",
            input.fused.shape(),
            cfg.detector_dim
        )));
    }
    let spec = cfg.encoder();
    let feats = g.constant(input.features(gates));
    let det = g.constant(input.fused.clone());
    let a = nn::linear(g, state, "rec.in", feats)?;
    let b = nn::linear(g, state, "rec.feat", det)?;
    let h0 = g.add(a, b)?;
    let pos = g.param(state, "rec.pos")?;
    let h0 = g.add(h0, pos)?;

    let x = g.constant(Tensor::new(vec![SEGMENT1_LEN, 1], input.x.clone())?);
    let mut branch: [Option<Var>; ArtefactClass::COUNT] = Default::default();
    let mut masks: [Option<Var>; ArtefactClass::COUNT] = Default::default();
    let mut cands = Vec::with_capacity(CANDIDATES);
    for c in ArtefactClass::ALL {
        if !gates[c.index()] {
            cands.push(x);
            continue;
        }
        let i = c.index();
        let mut h = h0;
        for l in 0..cfg.layers {
            h = nn::encoder_layer(g, state, &format!("rec.{c}.enc{l}"), h, &spec)?;
        }
        h = nn::layer_norm(g, state, &format!("rec.{c}.ln"), h)?;
        let z = nn::linear(g, state, &format!("rec.{c}.head"), h)?;
        let out = if let Some(f) = correction_factor(c) {
            let soft = g.sigmoid(z);
            masks[i] = Some(soft);
            let m = if let Some(ov) = &mask_override[i] {
                g.constant(binary_column(ov)?)
            } else if binarize {
                let mv = g.value(soft).data().iter().map(|v| *v > cfg.mask_threshold).collect::<Vec<_>>();
                g.constant(binary_column(&mv)?)
            } else {
                soft
            };
            if binarize || mask_override[i].is_some() {
                // Exact arithmetic for a binary mask.
                let mv: Vec<f64> = g.value(m).data().to_vec();
                g.constant(Tensor::new(vec![SEGMENT1_LEN, 1], math_correct(&input.x, &mv, f))?)
            } else {
                let xm = g.mul(x, m)?;
                let delta = g.scale(xm, f - 1.0);
                g.add(x, delta)?
            }
        } else {
            let reference = if c == ArtefactClass::Spike { &input.median_short } else { &input.x_ref };
            let skip: Vec<f64> = reference.iter().map(|v| logit(*v)).collect();
            let skip = g.constant(Tensor::new(vec![SEGMENT1_LEN, 1], skip)?);
            let z = g.add(z, skip)?;
            g.sigmoid(z)
        };
        branch[i] = Some(out);
        cands.push(out);
    }
    cands.push(x);
    let candidates = g.concat(&cands, 1)?;

    let mut f = nn::encoder_layer(g, state, "rec.fuse.enc0", h0, &spec)?;
    f = nn::layer_norm(g, state, "rec.fuse.ln", f)?;
    let xs = g.constant(Tensor::new(vec![SEGMENT1_LEN, CANDIDATES], tile(&input.x, CANDIDATES))?);
    let diff = g.sub(candidates, xs)?;
    let pos_part = g.relu(diff);
    let neg = g.scale(diff, -1.0);
    let neg_part = g.relu(neg);
    let abs = g.add(pos_part, neg_part)?;
    let scaled_c = g.add_scalar(candidates, -INPUT_CENTER);
    let scaled_c = g.scale(scaled_c, INPUT_SCALE);
    let abs = g.scale(abs, INPUT_SCALE);
    let miss = g.constant(Tensor::new(
        vec![SEGMENT1_LEN, 1],
        input.missing.iter().map(|m| f64::from(u8::from(*m))).collect(),
    )?);
    let score_in = g.concat(&[f, scaled_c, abs, miss], 1)?;
    let mut scores = nn::linear(g, state, "rec.fuse.score", score_in)?;
    if gates.iter().any(|g| *g) {
        // A gated-off candidate duplicates x; only the original slot carries it.
        // A missing sample has no value to pass through or rescale: where
        // it is missing, only active denoiser branches may contribute.
        let fill_missing = denoiser_active(gates);
        let mut bias = vec![0.0; SEGMENT1_LEN * CANDIDATES];
        for (t, row) in bias.chunks_mut(CANDIDATES).enumerate() {
            let missing = fill_missing && input.missing[t];
            for (k, b) in row.iter_mut().enumerate() {
                let excluded = if k == ArtefactClass::COUNT {
                    missing
                } else {
                    !gates[k] || (missing && correction_factor(ArtefactClass::ALL[k]).is_some())
                };
                if excluded {
                    *b = PASS_THROUGH_EXCLUDED;
                }
            }
        }
        let bias = g.constant(Tensor::new(vec![SEGMENT1_LEN, CANDIDATES], bias)?);
        scores = g.add(scores, bias)?;
    }
    let weights = g.softmax(scores, 1)?;
    let prod = g.mul(weights, candidates)?;
    let output = g.sum_axis(prod, 1)?;
    Ok(ReconVars { output, branch, masks, weights, candidates })
}

fn binary_column(m: &[bool]) -> Result<Tensor> {
    if m.len() != SEGMENT1_LEN {
        return Err(Error::Shape(format!("mask of length {}, expected {SEGMENT1_LEN}", m.len())));
    }
    Tensor::new(vec![SEGMENT1_LEN, 1], m.iter().map(|b| f64::from(u8::from(*b))).collect())
}

fn tile(x: &[f64], k: usize) -> Vec<f64> {
    x.iter().flat_map(|v| std::iter::repeat_n(*v, k)).collect()
}

/// Inference result for one slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// Normalised cleaned slice.
    pub cleaned: Vec<f64>,
    pub gates: [bool; ArtefactClass::COUNT],
    /// Binarised masks of the active scaling branches.
    pub masks: [Option<Vec<bool>>; ArtefactClass::COUNT],
    /// Per-position fusion weights, candidates in class order then original.
    pub weights: Vec<[f64; CANDIDATES]>,
}

impl Reconstruction {
    /// Mean fusion weight per candidate.
    pub fn contributions(&self) -> [f64; CANDIDATES] {
        let mut acc = [0.0; CANDIDATES];
        for w in &self.weights {
            for (a, v) in acc.iter_mut().zip(w) {
                *a += v;
            }
        }
        let n = self.weights.len().max(1) as f64;
        acc.map(|a| a / n)
    }
}

/// Optional oracle replacements for gates and scaling masks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub gates: Option<[bool; ArtefactClass::COUNT]>,
    pub masks: [Option<Vec<bool>>; ArtefactClass::COUNT],
}

/// Detector gates with the missing gate also opened by any observed
/// missing sample: missingness is known, not inferred.
pub fn observed_gates(mut gates: [bool; ArtefactClass::COUNT], missing: &[bool]) -> [bool; ArtefactClass::COUNT] {
    gates[ArtefactClass::Missing.index()] |= missing.iter().any(|m| *m);
    gates
}

/// Reconstructs the slice at `minute` of `seg10`, given its detection.
pub fn reconstruct(
    state: &ModelState,
    cfg: &ReconstructorConfig,
    seg10: &NormalizedSegment,
    minute: usize,
    detection: &SliceDetection,
    overrides: &Overrides,
) -> Result<Reconstruction> {
    let input = SliceInput::new(seg10, minute, detection.fused.clone())?;
    let gates = overrides.gates.unwrap_or_else(|| observed_gates(detection.result.gates, &input.missing));
    reconstruct_input(state, cfg, &input, &gates, &overrides.masks)
}

pub fn reconstruct_input(
    state: &ModelState,
    cfg: &ReconstructorConfig,
    input: &SliceInput,
    gates: &[bool; ArtefactClass::COUNT],
    mask_override: &[Option<Vec<bool>>; ArtefactClass::COUNT],
) -> Result<Reconstruction> {
    let mut g = Graph::new();
    let v = forward(&mut g, state, cfg, input, gates, true, mask_override)?;
    let masks = std::array::from_fn(|i| {
        v.masks[i].map(|m| match &mask_override[i] {
            Some(ov) => ov.clone(),
            None => g.value(m).data().iter().map(|p| *p > cfg.mask_threshold).collect(),
        })
    });
    let w = g.value(v.weights).data();
    Ok(Reconstruction {
        cleaned: g.value(v.output).data().to_vec(),
        gates: *gates,
        masks,
        weights: w.chunks(CANDIDATES).map(|r| std::array::from_fn(|i| r[i])).collect(),
    })
}

/// Training targets of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceTarget {
    pub clean: Vec<f64>,
    pub masks: [Vec<bool>; ArtefactClass::COUNT],
}

/// Composite loss: mask BCE for the active scaling branches, MSE of each
/// active branch on its own and clean positions, and MSE of the fused
/// output over the whole slice.
pub fn loss(
    g: &mut Graph,
    vars: &ReconVars,
    target: &SliceTarget,
    lambda_bce: f64,
    lambda_mse: f64,
) -> Result<Var> {
    let mut terms = Vec::new();
    let any: Vec<bool> = (0..SEGMENT1_LEN).map(|t| target.masks.iter().any(|m| m[t])).collect();
    for c in ArtefactClass::ALL {
        let i = c.index();
        if let Some(m) = vars.masks[i] {
            if lambda_bce > 0.0 {
                let tgt: Vec<f64> = target.masks[i].iter().map(|b| f64::from(u8::from(*b))).collect();
                let l = g.bce_loss(m, &tgt)?;
                terms.push(g.scale(l, lambda_bce));
            }
        }
        if let Some(out) = vars.branch[i] {
            if lambda_mse > 0.0 {
                let w: Vec<f64> = (0..SEGMENT1_LEN)
                    .map(|t| f64::from(u8::from(target.masks[i][t] || !any[t])))
                    .collect();
                let l = weighted_mse(g, out, &target.clean, &w)?;
                terms.push(g.scale(l, lambda_mse));
            }
        }
    }
    if lambda_mse > 0.0 {
        let l = g.mse_loss(vars.output, &target.clean)?;
        terms.push(g.scale(l, lambda_mse));
    }
    let mut total = *terms.first().ok_or_else(|| Error::Config("both loss weights are zero".into()))?;
    for t in &terms[1..] {
        total = g.add(total, *t)?;
    }
    Ok(total)
}

/// `sum_t w_t (p_t - y_t)^2 / sum_t w_t`.
fn weighted_mse(g: &mut Graph, pred: Var, target: &[f64], w: &[f64]) -> Result<Var> {
    let wsum: f64 = w.iter().sum();
    let n = w.len() as f64;
    let wt = g.constant(Tensor::new(vec![w.len(), 1], w.to_vec())?);
    let pw = g.mul(pred, wt)?;
    let tw: Vec<f64> = target.iter().zip(w).map(|(y, w)| y * w).collect();
    let l = g.mse_loss(pw, &tw)?;
    Ok(g.scale(l, n / wsum.max(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn math_correct_examples() {
        assert_eq!(math_correct(&[0.5; 4], &[1.0; 4], 2.0), vec![1.0; 4]);
        let x = [0.3, 0.71, 0.2];
        assert_eq!(math_correct(&x, &[0.0; 3], 2.0), x.to_vec());
    }

    #[test]
    fn gate_combine_examples() {
        let x = [0.1, 0.2];
        let h = [0.5, 0.6];
        assert_eq!(gate_combine(&x, &h, false), x.to_vec());
        assert_eq!(gate_combine(&x, &h, true), h.to_vec());
    }

    #[test]
    fn fuse_examples() {
        let x = vec![0.4, 0.5];
        let other = vec![0.9, 0.1];
        let onehot = vec![vec![0.0, 1.0]; 2];
        assert_eq!(fuse(&[other.clone(), x.clone()], &onehot).unwrap(), x);
        let half = vec![vec![0.5, 0.5]; 2];
        assert_eq!(fuse(&[x.clone(), x.clone()], &half).unwrap(), x);
    }

    #[test]
    fn all_gates_off_is_identity() {
        let cfg = ReconstructorConfig::tiny();
        let st = init(&cfg, 3).unwrap();
        let vals: Vec<f64> = (0..600).map(|i| 0.5 + 0.1 * ((i as f64) * 0.1).sin()).collect();
        let seg = NormalizedSegment { values: vals.clone(), missing_mask: vec![false; 600] };
        let input = SliceInput::new(&seg, 2, Tensor::zeros(&[60, 8])).unwrap();
        let r = reconstruct_input(&st, &cfg, &input, &[false; 5], &Default::default()).unwrap();
        for (a, b) in r.cleaned.iter().zip(&vals[120..180]) {
            assert!((a - b).abs() <= 1e-12);
        }
        for w in &r.weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
