//! Dataset assembly and the two-stage training protocol.
//!
//! Stage 1 trains the detector with mean BCE and keeps the checkpoint with
//! the best validation macro AU-ROC. Stage 2 freezes the detector, feeds
//! its gates and fused tokens to the reconstructor, and trains the
//! reconstructor on the composite BCE + MSE loss.
//!
//! Gradients of a mini-batch are computed in parallel and summed in a
//! fixed order, so results do not depend on the thread count.

use crate::detector::{self, DetectorConfig, SliceDetection};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::noise::{self, ArtefactClass, CorruptionRecord, InjectionConfig};
use crate::reconstructor::{self, ReconstructorConfig, SliceInput, SliceTarget};
use crate::signal::{normalize, normalize_bpm, NormalizedSegment, Segment10, MINUTES_PER_SEGMENT, SEGMENT1_LEN};
use crate::synth::mix_seed;
use crate::tensor::{clip_global_norm, Adam, AdamConfig, Gradients, Graph, ModelState};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Examples per mini-batch (stage 1 rounds to whole parents).
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Optional cap on optimiser steps (smoke runs).
    pub max_steps: Option<usize>,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub lambda_bce: f64,
    pub lambda_mse: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 64,
            max_epochs: 30,
            patience: 5,
            max_steps: None,
            test_fraction: 0.05,
            val_fraction: 0.1,
            lambda_bce: 1.0,
            lambda_mse: 1.0,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("split fractions must lie in [0, 1)".into()));
        }
        if self.lambda_bce < 0.0 || self.lambda_mse < 0.0 || self.lambda_bce + self.lambda_mse == 0.0 {
            return Err(Error::Config("loss weights must be non-negative and not both zero".into()));
        }
        Ok(())
    }
}

/// One corrupted 10-minute parent with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Parent {
    pub id: String,
    pub record: CorruptionRecord,
    pub corrupted: NormalizedSegment,
    /// Normalised clean values.
    pub clean: Vec<f64>,
    pub masks: [Vec<bool>; ArtefactClass::COUNT],
}

impl Parent {
    pub fn from_record(id: impl Into<String>, record: CorruptionRecord) -> Self {
        Self {
            id: id.into(),
            corrupted: normalize(&record.corrupted),
            clean: record.clean.iter().map(|v| normalize_bpm(*v)).collect(),
            masks: record.masks(),
            record,
        }
    }

    pub fn slice_labels(&self, minute: usize) -> [bool; ArtefactClass::COUNT] {
        let r = minute * SEGMENT1_LEN..(minute + 1) * SEGMENT1_LEN;
        std::array::from_fn(|c| self.masks[c][r.clone()].iter().any(|m| *m))
    }

    pub fn slice_target(&self, minute: usize) -> SliceTarget {
        let r = minute * SEGMENT1_LEN..(minute + 1) * SEGMENT1_LEN;
        SliceTarget {
            clean: self.clean[r.clone()].to_vec(),
            masks: std::array::from_fn(|c| self.masks[c][r.clone()].to_vec()),
        }
    }
}

/// One 1-minute training example, addressed within its parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExampleRef {
    pub parent: usize,
    pub minute: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub parents: Vec<Parent>,
}

impl Dataset {
    /// Number of 1-minute examples.
    pub fn len(&self) -> usize {
        self.parents.len() * MINUTES_PER_SEGMENT
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn examples(&self, parents: &[usize]) -> Vec<ExampleRef> {
        parents
            .iter()
            .flat_map(|&p| (0..MINUTES_PER_SEGMENT).map(move |minute| ExampleRef { parent: p, minute }))
            .collect()
    }

    /// Parent-level split of this dataset.
    pub fn split(&self, cfg: &TrainConfig) -> Split {
        split_parents(self.parents.len(), cfg)
    }

    pub fn labels(&self, e: ExampleRef) -> [bool; ArtefactClass::COUNT] {
        self.parents[e.parent].slice_labels(e.minute)
    }
}

/// Share of parents corrupted by a few isolated runs instead of the full
/// injector, so that training also covers artefacts in clean context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseMix {
    pub fraction: f64,
    /// Isolated runs per sparse parent (inclusive range).
    pub runs: [usize; 2],
    /// Run length range (inclusive) for the non-spike classes; spikes use
    /// the injector's spike lengths.
    pub length: [usize; 2],
}

impl Default for SparseMix {
    fn default() -> Self {
        Self { fraction: 0.0, runs: [1, 3], length: [3, 60] }
    }
}

impl SparseMix {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config(format!("sparse fraction {} not in [0, 1]", self.fraction)));
        }
        if self.runs[0] == 0 || self.runs[0] > self.runs[1] || self.length[0] == 0 || self.length[0] > self.length[1] {
            return Err(Error::Config("sparse run count and length ranges must be positive and ordered".into()));
        }
        if self.length[1] > SEGMENT1_LEN {
            return Err(Error::Config(format!("sparse runs longer than {SEGMENT1_LEN} samples")));
        }
        Ok(())
    }
}

/// Draws non-overlapping isolated runs, each at least one minute apart.
fn sparse_runs(rng: &mut ChaCha8Rng, n: usize, mix: &SparseMix, inj: &InjectionConfig) -> Vec<(ArtefactClass, noise::Run)> {
    let count = rng.random_range(mix.runs[0]..=mix.runs[1]);
    let mut out: Vec<(ArtefactClass, noise::Run)> = Vec::new();
    for _ in 0..count * 20 {
        if out.len() == count {
            break;
        }
        let class = ArtefactClass::ALL[rng.random_range(0..ArtefactClass::COUNT)];
        let (lo, hi) = if class == ArtefactClass::Spike { (inj.spike_run[0], inj.spike_run[1]) } else { (mix.length[0], mix.length[1]) };
        let len = rng.random_range(lo..=hi);
        let start = rng.random_range(0..=n - len);
        let run = noise::Run::new(start, start + len);
        let clear = out.iter().all(|(_, r)| run.end + SEGMENT1_LEN <= r.start || r.end + SEGMENT1_LEN <= run.start);
        if clear {
            out.push((class, run));
        }
    }
    out
}

/// Injects every clean segment (segment `i` uses seed `mix(cfg.seed, i)`)
/// and keeps the ten 1-minute slices of each as examples.
pub fn build_dataset(clean: &[Segment10], cfg: &InjectionConfig) -> Result<Dataset> {
    build_dataset_with(clean, cfg, &SparseMix::default())
}

/// [`build_dataset`], with a share of parents corrupted sparsely instead.
pub fn build_dataset_with(clean: &[Segment10], cfg: &InjectionConfig, mix: &SparseMix) -> Result<Dataset> {
    cfg.validate()?;
    mix.validate()?;
    let parents = clean
        .par_iter()
        .enumerate()
        .map(|(i, seg)| {
            let seed = mix_seed(cfg.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SPARSE_STREAM));
            let rec = if mix.fraction > 0.0 && rng.random_bool(mix.fraction) {
                let values: Vec<f64> = seg.values().iter().map(|v| v.unwrap_or(f64::NAN)).collect();
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::UncleanInput(format!("{} has missing samples", seg.source_id())));
                }
                let runs = sparse_runs(&mut rng, values.len(), mix, cfg);
                noise::inject_runs(&values, &runs, &cfg.with_seed(seed))?
            } else {
                noise::inject(seg, &cfg.with_seed(seed))?
            };
            Ok(Parent::from_record(format!("{}@{}", seg.source_id(), seg.start_index()), rec))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { parents })
}

const SPARSE_STREAM: u64 = 0x5_9a75e;

/// Disjoint parent index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Parent-level split: `test_fraction` of parents for testing, then
/// `val_fraction` of the remainder for validation.
pub fn split_parents(n: usize, cfg: &TrainConfig) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5eed)));
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let rest = n - n_test;
    let n_val = ((rest as f64 * cfg.val_fraction).round() as usize).min(rest.saturating_sub(1));
    let mut test = idx[..n_test].to_vec();
    let mut val = idx[n_test..n_test + n_val].to_vec();
    let mut train = idx[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Split { train, val, test }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Stage 1: validation macro AU-ROC; stage 2: validation output MSE.
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best parameters of the trained group.
    pub state: ModelState,
    pub history: Vec<EpochLog>,
    /// Loss of every optimiser step, in order.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
}

fn sum_gradients(parts: Vec<(f64, Gradients)>) -> (f64, Gradients) {
    let mut total = Gradients::new();
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (k, v) in g {
            match total.get_mut(&k) {
                Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
                None => {
                    total.insert(k, v);
                }
            }
        }
    }
    (loss, total)
}

fn scale_gradients(g: &mut Gradients, s: f64) {
    for v in g.values_mut() {
        v.iter_mut().for_each(|x| *x *= s);
    }
}

fn check_finite(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("loss {loss} at epoch {epoch}, step {step}")))
    }
}

/// Validation macro AU-ROC and mean BCE of the detector.
pub fn validate_detector(ds: &Dataset, parents: &[usize], state: &ModelState, cfg: &DetectorConfig) -> Result<(f64, Option<f64>)> {
    let rows = parents
        .par_iter()
        .map(|&p| {
            let det = detector::detect_parent(state, cfg, &ds.parents[p].corrupted)?;
            Ok(det.into_iter().enumerate().map(|(m, d)| (d.result.probs, ds.parents[p].slice_labels(m))).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    let mut bce = 0.0;
    for (p, l) in &rows {
        for c in 0..ArtefactClass::COUNT {
            let q = p[c].clamp(1e-7, 1.0 - 1e-7);
            bce -= if l[c] { q.ln() } else { (1.0 - q).ln() };
        }
    }
    bce /= (rows.len() * ArtefactClass::COUNT).max(1) as f64;
    let aucs: Vec<f64> = (0..ArtefactClass::COUNT)
        .filter_map(|c| {
            let s: Vec<f64> = rows.iter().map(|r| r.0[c]).collect();
            let l: Vec<bool> = rows.iter().map(|r| r.1[c]).collect();
            auroc(&s, &l).ok()
        })
        .collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    Ok((bce, macro_auc))
}

/// Stage 1: trains a fresh detector.
pub fn train_stage1(ds: &Dataset, split: &Split, dcfg: &DetectorConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    train_stage1_with(ds, split, dcfg, tcfg, |_| {})
}

pub fn train_stage1_with(
    ds: &Dataset,
    split: &Split,
    dcfg: &DetectorConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    dcfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Precondition("empty training split".into()));
    }
    let mut state = detector::init(dcfg, mix_seed(tcfg.seed, 1))?;
    let mut adam = Adam::new(AdamConfig { lr: tcfg.lr, ..AdamConfig::default() })?;
    let parents_per_batch = tcfg.batch.div_ceil(MINUTES_PER_SEGMENT).max(1);
    let minutes: Vec<usize> = (0..MINUTES_PER_SEGMENT).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, 2));

    let mut best = (state.clone(), f64::NEG_INFINITY, f64::INFINITY, 0usize);
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut stale = 0;
    'epochs: for epoch in 0..tcfg.max_epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(parents_per_batch) {
            let step = step_losses.len();
            let parts = batch
                .par_iter()
                .map(|&p| {
                    let parent = &ds.parents[p];
                    let mut g = Graph::training(mix_seed(tcfg.seed, (step * 7919 + p) as u64));
                    let (_, slices) = detector::forward_parent(&mut g, &state, dcfg, &parent.corrupted, &minutes)?;
                    let labels: Vec<_> = minutes.iter().map(|&m| parent.slice_labels(m)).collect();
                    let l = detector::bce_over(&mut g, &slices, &labels)?;
                    g.backward(l)?;
                    Ok((g.value(l).data()[0], g.param_grads()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = sum_gradients(parts);
            let loss = loss / batch.len() as f64;
            check_finite(loss, epoch, step)?;
            scale_gradients(&mut grads, 1.0 / batch.len() as f64);
            clip_global_norm(&mut grads, tcfg.clip_norm);
            adam.step(&mut state, &grads)?;
            step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
            if tcfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                let log = finish_epoch1(ds, split, &state, dcfg, epoch, &step_losses, epoch_loss / batches as f64)?;
                on_epoch(&log);
                update_best(&mut best, &state, &log, &mut stale);
                history.push(log);
                break 'epochs;
            }
        }
        let log = finish_epoch1(ds, split, &state, dcfg, epoch, &step_losses, epoch_loss / batches.max(1) as f64)?;
        on_epoch(&log);
        update_best(&mut best, &state, &log, &mut stale);
        history.push(log);
        if stale >= tcfg.patience {
            break;
        }
    }
    Ok(TrainOutcome { state: best.0, history, step_losses, best_epoch: best.3 })
}

fn finish_epoch1(
    ds: &Dataset,
    split: &Split,
    state: &ModelState,
    dcfg: &DetectorConfig,
    epoch: usize,
    steps: &[f64],
    train_loss: f64,
) -> Result<EpochLog> {
    let (val_loss, val_metric) = if split.val.is_empty() {
        (None, None)
    } else {
        let (l, m) = validate_detector(ds, &split.val, state, dcfg)?;
        (Some(l), m)
    };
    Ok(EpochLog { epoch, steps: steps.len(), train_loss, val_loss, val_metric })
}

/// Keeps the state with the highest validation AU-ROC (ties: lower loss).
/// Without a validation set the latest state wins.
fn update_best(best: &mut (ModelState, f64, f64, usize), state: &ModelState, log: &EpochLog, stale: &mut usize) {
    let metric = log.val_metric.unwrap_or(f64::INFINITY);
    let loss = log.val_loss.unwrap_or(log.train_loss);
    if metric > best.1 || (metric == best.1 && loss < best.2) {
        *best = (state.clone(), metric, loss, log.epoch);
        *stale = 0;
    } else {
        *stale += 1;
    }
}

/// Frozen-detector outputs for one parent's ten slices.
pub fn precompute_detections(
    ds: &Dataset,
    parents: &[usize],
    det: &ModelState,
    dcfg: &DetectorConfig,
) -> Result<Vec<Vec<SliceDetection>>> {
    parents
        .par_iter()
        .map(|&p| detector::detect_parent(det, dcfg, &ds.parents[p].corrupted))
        .collect()
}

/// Stage-2 example: inputs, gates used in training and targets.
struct ReconExample {
    input: SliceInput,
    gates: [bool; ArtefactClass::COUNT],
    target: SliceTarget,
}

fn recon_examples(
    ds: &Dataset,
    parents: &[usize],
    dets: &[Vec<SliceDetection>],
    teacher_gates: bool,
) -> Result<Vec<ReconExample>> {
    let mut out = Vec::new();
    for (&p, pd) in parents.iter().zip(dets) {
        let parent = &ds.parents[p];
        for (m, d) in pd.iter().enumerate() {
            let labels = parent.slice_labels(m);
            let input = SliceInput::new(&parent.corrupted, m, d.fused.clone())?;
            let observed = reconstructor::observed_gates(d.result.gates, &input.missing);
            let gates: [bool; ArtefactClass::COUNT] =
                std::array::from_fn(|c| observed[c] || (teacher_gates && labels[c]));
            if !gates.iter().any(|g| *g) {
                continue;
            }
            out.push(ReconExample {
                input,
                gates,
                target: parent.slice_target(m),
            });
        }
    }
    Ok(out)
}

fn has_detector(state: &ModelState) -> bool {
    state.names().any(|n| crate::tensor::group_of(n) == detector::GROUP)
}

/// Stage 2: trains the reconstructor against a frozen detector. Training
/// gates are the detector's gates or'ed with the ground-truth labels;
/// slices with neither are skipped (their output is the input).
pub fn train_stage2(
    ds: &Dataset,
    split: &Split,
    det: &ModelState,
    dcfg: &DetectorConfig,
    rcfg: &ReconstructorConfig,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_stage2_with(ds, split, det, dcfg, rcfg, tcfg, |_| {})
}

pub fn train_stage2_with(
    ds: &Dataset,
    split: &Split,
    det: &ModelState,
    dcfg: &DetectorConfig,
    rcfg: &ReconstructorConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if !has_detector(det) {
        return Err(Error::StageOrder("stage 2 needs a trained stage-1 detector checkpoint".into()));
    }
    tcfg.validate()?;
    rcfg.validate()?;
    if rcfg.detector_dim != dcfg.d_model {
        return Err(Error::Config(format!(
            "reconstructor expects detector width {}, detector has {}",
            rcfg.detector_dim, dcfg.d_model
        )));
    }
    let train_dets = precompute_detections(ds, &split.train, det, dcfg)?;
    let val_dets = precompute_detections(ds, &split.val, det, dcfg)?;
    let train = recon_examples(ds, &split.train, &train_dets, true)?;
    let val = recon_examples(ds, &split.val, &val_dets, false)?;
    drop(train_dets);
    if train.is_empty() {
        return Err(Error::Precondition("no corrupted training slices".into()));
    }

    let mut state = reconstructor::init(rcfg, mix_seed(tcfg.seed, 3))?;
    let mut adam = Adam::new(AdamConfig { lr: tcfg.lr, ..AdamConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, 4));
    let no_override: [Option<Vec<bool>>; ArtefactClass::COUNT] = Default::default();

    let mut best = (state.clone(), f64::INFINITY, 0usize);
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..tcfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(tcfg.batch) {
            let step = step_losses.len();
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train[i];
                    let mut g = Graph::training(mix_seed(tcfg.seed, (step * 7919 + i) as u64));
                    let v = reconstructor::forward(&mut g, &state, rcfg, &ex.input, &ex.gates, false, &no_override)?;
                    let l = reconstructor::loss(&mut g, &v, &ex.target, tcfg.lambda_bce, tcfg.lambda_mse)?;
                    g.backward(l)?;
                    Ok((g.value(l).data()[0], g.param_grads()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, mut grads) = sum_gradients(parts);
            let loss = loss / batch.len() as f64;
            check_finite(loss, epoch, step)?;
            scale_gradients(&mut grads, 1.0 / batch.len() as f64);
            clip_global_norm(&mut grads, tcfg.clip_norm);
            adam.step(&mut state, &grads)?;
            step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
            if tcfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                break;
            }
        }
        let val_metric = validate_reconstructor(&val, &state, rcfg)?;
        let log = EpochLog {
            epoch,
            steps: step_losses.len(),
            train_loss: epoch_loss / batches.max(1) as f64,
            val_loss: val_metric,
            val_metric,
        };
        on_epoch(&log);
        let score = val_metric.unwrap_or(log.train_loss);
        if score < best.1 {
            best = (state.clone(), score, epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        history.push(log);
        if stale >= tcfg.patience || tcfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
            break 'epochs;
        }
    }
    Ok(TrainOutcome { state: best.0, history, step_losses, best_epoch: best.2 })
}

/// Mean squared error of the inference output over validation slices.
fn validate_reconstructor(val: &[ReconExample], state: &ModelState, rcfg: &ReconstructorConfig) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let no_override: [Option<Vec<bool>>; ArtefactClass::COUNT] = Default::default();
    let sse = val
        .par_iter()
        .map(|ex| {
            let r = reconstructor::reconstruct_input(state, rcfg, &ex.input, &ex.gates, &no_override)?;
            Ok(r.cleaned.iter().zip(&ex.target.clean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some(sse.iter().sum::<f64>() / (val.len() * SEGMENT1_LEN) as f64))
}
