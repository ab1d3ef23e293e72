//! End-to-end use of a trained model: denoising traces, evaluation against
//! the classical baselines, the corruption-length sweep and the paired
//! screening cohort.

use crate::baselines::{ar_impute, linear_interpolate, ArConfig};
use crate::detector::{self, DetectorConfig, SliceDetection};
use crate::error::{Error, Result};
use crate::metrics::{
    detection_report, youden_threshold, ClassAccumulator, DetectionReport, MethodMse, ReconReport, SplitAccumulator, SweepPoint,
    SweepReport,
};
use crate::noise::{self, ArtefactClass, InjectionConfig, MaskLine};
use crate::reconstructor::{self, Overrides, Reconstruction, ReconstructorConfig};
use crate::screen::{self, CohortSummary, PairedComparison, ScreenCriteria};
use crate::signal::{
    denormalize_value, normalize, normalize_bpm, FhrSignal, NormalizedSegment, Sample, Segment10, MIN_BPM,
    MINUTES_PER_SEGMENT, SEGMENT10_LEN, SEGMENT1_LEN,
};
use crate::synth::{self, mix_seed, SynthConfig};
use crate::tensor::{load_checkpoint, save_checkpoint, ModelState};
use crate::training::{Dataset, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct ModelConfig {
    pub detector: DetectorConfig,
    pub reconstructor: ReconstructorConfig,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self { detector: DetectorConfig::desk(), reconstructor: ReconstructorConfig::desk() }
    }
}


/// Detector and (optionally) reconstructor parameters with their config.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub state: ModelState,
    /// Parent split of the dataset the model was trained on, if known.
    pub split: Option<Split>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    stages: Vec<String>,
    #[serde(default)]
    split: Option<Split>,
}

impl Model {
    pub fn has_detector(&self) -> bool {
        self.state.names().any(|n| crate::tensor::group_of(n) == detector::GROUP)
    }

    pub fn has_reconstructor(&self) -> bool {
        self.state.names().any(|n| crate::tensor::group_of(n) == reconstructor::GROUP)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut stages = Vec::new();
        if self.has_detector() {
            stages.push(detector::GROUP.to_string());
        }
        if self.has_reconstructor() {
            stages.push(reconstructor::GROUP.to_string());
        }
        let m = Manifest { format: "cleanctg-model".into(), config: self.config.clone(), stages, split: self.split.clone() };
        save_checkpoint(&self.state, path, &serde_json::to_value(m)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (state, manifest) = load_checkpoint(path)?;
        let m: Manifest = serde_json::from_value(manifest)
            .map_err(|e| Error::Checkpoint(format!("missing or invalid manifest sidecar: {e}")))?;
        let model = Self { config: m.config, state, split: m.split };
        model.config.detector.validate()?;
        model.config.reconstructor.validate()?;
        Ok(model)
    }

    pub fn detect_parent(&self, seg10: &NormalizedSegment) -> Result<Vec<SliceDetection>> {
        if !self.has_detector() {
            return Err(Error::StageOrder("model has no detector".into()));
        }
        detector::detect_parent(&self.state, &self.config.detector, seg10)
    }

    pub fn reconstruct(
        &self,
        seg10: &NormalizedSegment,
        minute: usize,
        det: &SliceDetection,
        overrides: &Overrides,
    ) -> Result<Reconstruction> {
        if !self.has_reconstructor() {
            return Err(Error::StageOrder("model has no reconstructor".into()));
        }
        reconstructor::reconstruct(&self.state, &self.config.reconstructor, seg10, minute, det, overrides)
    }

    /// Cleans all ten slices of a corrupted parent.
    pub fn denoise_segment(&self, seg10: &NormalizedSegment) -> Result<SegmentDenoise> {
        let dets = self.detect_parent(seg10)?;
        let mut cleaned = Vec::with_capacity(SEGMENT10_LEN);
        let mut slices = Vec::with_capacity(MINUTES_PER_SEGMENT);
        for (m, d) in dets.iter().enumerate() {
            let r = self.reconstruct(seg10, m, d, &Overrides::default())?;
            cleaned.extend_from_slice(&r.cleaned);
            slices.push(SliceReport::new(m, d, &r));
        }
        Ok(SegmentDenoise { cleaned, slices })
    }

    /// Cleans a 1 Hz trace segment by segment; a trailing partial segment
    /// is passed through unchanged.
    pub fn denoise_trace(&self, signal: &FhrSignal) -> Result<DenoisedTrace> {
        if signal.rate_hz() != 1 {
            return Err(Error::InvalidRate(signal.rate_hz(), "1"));
        }
        let full = signal.len() / SEGMENT10_LEN;
        let parts = (0..full)
            .into_par_iter()
            .map(|k| {
                let raw = &signal.samples()[k * SEGMENT10_LEN..(k + 1) * SEGMENT10_LEN];
                let seg = normalize(raw);
                let out = self.denoise_segment(&seg)?;
                Ok((to_bpm(&out.cleaned, raw), out.slices))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut samples = Vec::with_capacity(signal.len());
        let mut reports = Vec::new();
        for (k, (s, r)) in parts.into_iter().enumerate() {
            samples.extend(s);
            reports.push(SegmentReport { segment: k, start_index: k * SEGMENT10_LEN, slices: r });
        }
        samples.extend_from_slice(&signal.samples()[full * SEGMENT10_LEN..]);
        Ok(DenoisedTrace { samples, segments: reports })
    }
}

/// Back to bpm. A position that was missing stays missing unless the
/// model produced a plausible value for it.
fn to_bpm(cleaned: &[f64], raw: &[Sample]) -> Vec<Sample> {
    cleaned
        .iter()
        .zip(raw)
        .map(|(v, r)| {
            let bpm = denormalize_value(*v);
            if r.is_none() && bpm < MIN_BPM {
                None
            } else {
                Some(bpm.clamp(MIN_BPM, crate::signal::MAX_BPM))
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub minute: usize,
    pub probs: [f64; ArtefactClass::COUNT],
    pub gates: noise::ClassMap<bool>,
    /// Runs of the binarised halving/doubling masks, slice-relative.
    pub mask_runs: noise::ClassMap<Vec<noise::Run>>,
    /// Mean fusion weight per branch, then the original signal.
    pub contributions: noise::ClassMap<f64>,
    pub original_contribution: f64,
}

impl SliceReport {
    fn new(minute: usize, d: &SliceDetection, r: &Reconstruction) -> Self {
        let c = r.contributions();
        Self {
            minute,
            probs: d.result.probs,
            gates: noise::ClassMap::from_array(r.gates),
            mask_runs: noise::ClassMap::from_array(std::array::from_fn(|i| {
                r.masks[i].as_deref().map(noise::mask_to_runs).unwrap_or_default()
            })),
            contributions: noise::ClassMap::from_array(std::array::from_fn(|i| c[i])),
            original_contribution: c[ArtefactClass::COUNT],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentDenoise {
    /// Normalised cleaned values.
    pub cleaned: Vec<f64>,
    pub slices: Vec<SliceReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: usize,
    pub start_index: usize,
    pub slices: Vec<SliceReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoisedTrace {
    pub samples: Vec<Sample>,
    pub segments: Vec<SegmentReport>,
}

/// Injects every complete 10-minute segment of a 1 Hz trace (segment `k`
/// with seed `mix(cfg.seed, k)`); a trailing partial segment is copied.
pub fn inject_trace(signal: &FhrSignal, cfg: &InjectionConfig) -> Result<(Vec<Sample>, Vec<MaskLine>)> {
    cfg.validate()?;
    let segs = signal.segment()?;
    let parts = segs
        .par_iter()
        .enumerate()
        .map(|(k, seg)| {
            let rec = noise::inject(seg, &cfg.with_seed(mix_seed(cfg.seed, k as u64)))?;
            let line = MaskLine::from_record(format!("{}@{}", signal.id(), seg.start_index()), &rec);
            Ok((rec.corrupted, line))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(signal.len());
    let mut lines = Vec::with_capacity(parts.len());
    for (s, l) in parts {
        out.extend(s);
        lines.push(l);
    }
    out.extend_from_slice(&signal.samples()[out.len()..]);
    Ok((out, lines))
}

/// Segment-level detection metrics over the given parents.
type DetectionRows = (Vec<[f64; ArtefactClass::COUNT]>, Vec<[bool; ArtefactClass::COUNT]>);

/// Per-slice probabilities and labels over the given parents.
fn detection_rows(model: &Model, ds: &Dataset, parents: &[usize]) -> Result<DetectionRows> {
    let rows = parents
        .par_iter()
        .map(|&p| {
            let dets = model.detect_parent(&ds.parents[p].corrupted)?;
            Ok(dets.iter().enumerate().map(|(m, d)| (d.result.probs, ds.parents[p].slice_labels(m))).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().unzip())
}

pub fn evaluate_detection(model: &Model, ds: &Dataset, parents: &[usize]) -> Result<DetectionReport> {
    let (probs, labels) = detection_rows(model, ds, parents)?;
    let cfg = &model.config.detector;
    detection_report(&probs, &labels, ArtefactClass::ALL.map(|c| cfg.threshold(c)))
}

/// Per-class gate thresholds maximising Youden's J on the given parents;
/// classes without both label values keep the global threshold.
pub fn calibrate_thresholds(model: &Model, ds: &Dataset, parents: &[usize]) -> Result<[f64; ArtefactClass::COUNT]> {
    let (probs, labels) = detection_rows(model, ds, parents)?;
    Ok(ArtefactClass::ALL.map(|c| {
        let p: Vec<f64> = probs.iter().map(|r| r[c.index()]).collect();
        let l: Vec<bool> = labels.iter().map(|r| r[c.index()]).collect();
        youden_threshold(&p, &l).unwrap_or(model.config.detector.gate_threshold).clamp(1e-6, 1.0 - 1e-6)
    }))
}

#[derive(Clone, Debug, Default)]
struct ReconAcc {
    model: SplitAccumulator,
    linear: SplitAccumulator,
    ar: SplitAccumulator,
    classes: ClassAccumulator,
}

impl ReconAcc {
    fn merge(&mut self, o: &ReconAcc) {
        self.model.merge(&o.model);
        self.linear.merge(&o.linear);
        self.ar.merge(&o.ar);
        self.classes.merge(&o.classes);
    }
}

/// Baseline repairs of a parent given the positions to repair.
pub fn baseline_repairs(x: &NormalizedSegment, union: &[bool], ar: &ArConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let lin = linear_interpolate(&x.values, union)?;
    let arv = ar_impute(&x.values, union, ar)?.values;
    Ok((lin, arv))
}

/// Split MSE of the model and both baselines over every slice of the
/// given parents, plus the per-class breakdown.
pub fn evaluate_reconstruction(model: &Model, ds: &Dataset, parents: &[usize], ar: &ArConfig) -> Result<ReconReport> {
    let parts = parents
        .par_iter()
        .map(|&p| {
            let parent = &ds.parents[p];
            let union = parent.record.union_mask();
            let out = model.denoise_segment(&parent.corrupted)?;
            let (lin, arv) = baseline_repairs(&parent.corrupted, &union, ar)?;
            let mut acc = ReconAcc::default();
            acc.model.add(&out.cleaned, &parent.clean, &union)?;
            acc.linear.add(&lin, &parent.clean, &union)?;
            acc.ar.add(&arv, &parent.clean, &union)?;
            acc.classes.add([&out.cleaned, &lin, &arv], &parent.clean, &parent.masks);
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = ReconAcc::default();
    for a in &parts {
        acc.merge(a);
    }
    Ok(ReconReport {
        n: parents.len() * MINUTES_PER_SEGMENT,
        mse_corrupt: acc.model.mse_corrupt(),
        mse_clean: acc.model.mse_clean(),
        linear: MethodMse::from(&acc.linear),
        ar: MethodMse::from(&acc.ar),
        per_class: acc.classes.rows(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub min_length: usize,
    pub max_length: usize,
    pub per_length: usize,
    /// Adds a length-0 control point.
    pub control: bool,
    /// Classes rotated across the corruptions of each length.
    pub classes: Vec<ArtefactClass>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            min_length: 3,
            max_length: 60,
            per_length: 200,
            control: true,
            classes: vec![ArtefactClass::Halving, ArtefactClass::Doubling, ArtefactClass::Mhr, ArtefactClass::Missing],
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Default)]
struct SweepAcc {
    sse: [f64; 3],
    n: usize,
    clean_sse: f64,
    clean_n: usize,
}

/// Single-run corruptions of controlled length inside one slice of a clean
/// parent; MSE over the run positions for the model (when given) and the
/// baselines, which repair exactly the run.
pub fn length_sweep(model: Option<&Model>, clean: &[Segment10], cfg: &SweepConfig, ar: &ArConfig) -> Result<SweepReport> {
    if clean.is_empty() || cfg.classes.is_empty() {
        return Err(Error::Precondition("sweep needs clean segments and at least one class".into()));
    }
    if cfg.min_length == 0 || cfg.max_length > SEGMENT1_LEN || cfg.min_length > cfg.max_length {
        return Err(Error::Config(format!("sweep lengths must lie in 1..={SEGMENT1_LEN}")));
    }
    let clean_values: Vec<Vec<f64>> = clean
        .iter()
        .map(|s| {
            s.values()
                .iter()
                .map(|v| v.ok_or_else(|| Error::UncleanInput(format!("{} has missing samples", s.source_id()))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut lengths: Vec<usize> = (cfg.min_length..=cfg.max_length).collect();
    if cfg.control {
        lengths.insert(0, 0);
    }
    let jobs: Vec<(usize, usize)> = lengths.iter().flat_map(|&l| (0..cfg.per_length).map(move |j| (l, j))).collect();
    let results = jobs
        .par_iter()
        .map(|&(len, j)| sweep_one(model, &clean_values, cfg, ar, len, j).map(|a| (len, a)))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for &len in &lengths {
        let mut acc = SweepAcc::default();
        for (_, a) in results.iter().filter(|(l, _)| *l == len) {
            for k in 0..3 {
                acc.sse[k] += a.sse[k];
            }
            acc.n += a.n;
            acc.clean_sse += a.clean_sse;
            acc.clean_n += a.clean_n;
        }
        let m = |k: usize| (acc.n > 0).then(|| acc.sse[k] / acc.n as f64);
        points.push(SweepPoint {
            run_length: len,
            segments: cfg.per_length,
            model: if model.is_some() { m(0) } else { None },
            linear: m(1),
            ar: m(2),
            model_clean: (model.is_some() && acc.clean_n > 0).then(|| acc.clean_sse / acc.clean_n as f64),
        });
    }
    Ok(SweepReport::from_points(points))
}

fn sweep_one(
    model: Option<&Model>,
    clean: &[Vec<f64>],
    cfg: &SweepConfig,
    ar: &ArConfig,
    len: usize,
    j: usize,
) -> Result<SweepAcc> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, (len * 1_000_003 + j) as u64));
    let seg = &clean[rng.random_range(0..clean.len())];
    let minute = rng.random_range(0..MINUTES_PER_SEGMENT);
    let offset = rng.random_range(0..=SEGMENT1_LEN - len);
    let class = cfg.classes[j % cfg.classes.len()];
    let start = minute * SEGMENT1_LEN + offset;
    let inj = InjectionConfig { seed: rng.random(), ..InjectionConfig::default() };
    let rec = noise::inject_single_run(seg, class, start, len, &inj)?;
    let corrupted = normalize(&rec.corrupted);
    let truth: Vec<f64> = seg.iter().map(|v| normalize_bpm(*v)).collect();
    let union = rec.union_mask();
    let r = minute * SEGMENT1_LEN..(minute + 1) * SEGMENT1_LEN;

    let mut acc = SweepAcc::default();
    let model_out = match model {
        Some(m) => {
            let d = detector::detect(&m.state, &m.config.detector, &corrupted, minute)?;
            Some(m.reconstruct(&corrupted, minute, &d, &Overrides::default())?.cleaned)
        }
        None => None,
    };
    let (lin, arv) = if len > 0 {
        baseline_repairs(&corrupted, &union, ar)?
    } else {
        (corrupted.values.clone(), corrupted.values.clone())
    };
    for (k, t) in r.clone().enumerate() {
        let sq = |v: f64| (v - truth[t]) * (v - truth[t]);
        if union[t] {
            acc.n += 1;
            acc.sse[0] += model_out.as_ref().map_or(0.0, |o| sq(o[k]));
            acc.sse[1] += sq(lin[t]);
            acc.sse[2] += sq(arv[t]);
        } else if let Some(o) = &model_out {
            acc.clean_n += 1;
            acc.clean_sse += sq(o[k]);
        }
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub traces: usize,
    /// Fraction of clean traces generated without accelerations and with
    /// low variability.
    pub non_reactive_fraction: f64,
    pub injection: InjectionConfig,
    pub synth: SynthConfig,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            traces: 200,
            non_reactive_fraction: 0.2,
            injection: InjectionConfig::default(),
            synth: SynthConfig::default(),
            seed: 0,
        }
    }
}

/// A clean 60-minute trace and its corrupted version.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortTrace {
    pub clean: Vec<Sample>,
    pub corrupted: Vec<Sample>,
    pub masks: Vec<MaskLine>,
}

/// Builds trace `i` of a cohort: clean 60-minute trace, then independent
/// injection into each of its six 10-minute segments.
pub fn cohort_trace(cfg: &CohortConfig, criteria: &ScreenCriteria, i: usize) -> Result<CohortTrace> {
    let len = criteria.max_duration_min * SEGMENT1_LEN;
    let seed = mix_seed(cfg.seed, i as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reactive = !rng.random_bool(cfg.non_reactive_fraction.clamp(0.0, 1.0));
    let clean = synth::trace(len, reactive, &cfg.synth, rng.random())?;
    let mut corrupted = Vec::with_capacity(len);
    let mut masks = Vec::new();
    for (k, seg) in clean.segment()?.iter().enumerate() {
        let rec = noise::inject(seg, &cfg.injection.with_seed(mix_seed(seed, k as u64 + 1)))?;
        masks.push(MaskLine::from_record(format!("trace{i}-seg{k}"), &rec));
        corrupted.extend(rec.corrupted);
    }
    corrupted.extend_from_slice(&clean.samples()[corrupted.len()..]);
    Ok(CohortTrace { clean: clean.samples().to_vec(), corrupted, masks })
}

/// Screens clean, corrupted and denoised versions of every cohort trace.
pub fn screen_cohort(
    model: &Model,
    cfg: &CohortConfig,
    criteria: &ScreenCriteria,
) -> Result<(Vec<PairedComparison>, CohortSummary)> {
    let records = (0..cfg.traces)
        .into_par_iter()
        .map(|i| {
            let t = cohort_trace(cfg, criteria, i)?;
            let corrupted = t.corrupted.iter().map(|s| s.map(|v| v.clamp(MIN_BPM, crate::signal::MAX_BPM))).collect();
            let signal = FhrSignal::new(format!("trace{i}"), 1, corrupted)?;
            let denoised = model.denoise_trace(&signal)?;
            screen::paired_comparison(&t.clean, &t.corrupted, &denoised.samples, criteria)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = screen::summarize_cohort(&records, criteria)?;
    Ok((records, summary))
}
