//! Deterministic synthetic corruption of clean ten-minute segments.
//!
//! Five artefact classes are injected (halving, doubling, maternal heart
//! rate, missing runs and spikes). Every injected run is recorded so each
//! corrupted segment carries per-class position masks and segment-level
//! labels.
//!
//! Per segment: each class participates with its own probability; the
//! participating classes are visited in a seeded random order and each
//! places runs until a randomly drawn sample budget or the global cap is
//! reached. When the missing class participates, missing flanks are also
//! placed immediately before and after halving, doubling and MHR runs.

use crate::error::{Error, Result};
use crate::signal::{Sample, Segment10, MAX_BPM, MIN_BPM};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtefactClass {
    Halving,
    Doubling,
    Mhr,
    Missing,
    Spike,
}

impl ArtefactClass {
    pub const COUNT: usize = 5;
    pub const ALL: [ArtefactClass; 5] = [
        ArtefactClass::Halving,
        ArtefactClass::Doubling,
        ArtefactClass::Mhr,
        ArtefactClass::Missing,
        ArtefactClass::Spike,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ArtefactClass::Halving => "halving",
            ArtefactClass::Doubling => "doubling",
            ArtefactClass::Mhr => "mhr",
            ArtefactClass::Missing => "missing",
            ArtefactClass::Spike => "spike",
        }
    }

    /// Classes repaired by amplitude scaling.
    pub fn is_scaling(self) -> bool {
        matches!(self, ArtefactClass::Halving | ArtefactClass::Doubling)
    }
}

impl fmt::Display for ArtefactClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ArtefactClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown artefact class {s:?}")))
    }
}

/// Half-open sample range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", from = "[usize; 2]")]
pub struct Run {
    pub start: usize,
    pub end: usize,
}

impl Run {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<Run> for [usize; 2] {
    fn from(r: Run) -> Self {
        [r.start, r.end]
    }
}

impl From<[usize; 2]> for Run {
    fn from(a: [usize; 2]) -> Self {
        Run::new(a[0], a[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionConfig {
    pub p_halving: f64,
    pub p_doubling: f64,
    pub p_mhr: f64,
    pub p_missing: f64,
    pub p_spike: f64,
    /// Cap on the union of all masks, as a fraction of segment length.
    pub max_total_fraction: f64,
    /// Cap on any maximal single-class run, as a fraction of segment length.
    pub max_run_fraction: f64,
    /// Per participating class, the sample budget is drawn uniformly from
    /// this fraction range of the segment length.
    pub budget_fraction: [f64; 2],
    /// Shortest run for halving, doubling, MHR and missing runs.
    pub min_run: usize,
    /// Spike run length range (inclusive).
    pub spike_run: [usize; 2],
    pub spike_delta_range: [f64; 2],
    pub mhr_range: [f64; 2],
    pub mhr_baseline_range: [f64; 2],
    pub mhr_step_std: f64,
    pub compound_enabled: bool,
    /// Length range (inclusive) of the missing flanks of compound patterns.
    pub flank_len: [usize; 2],
    pub seed: u64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            p_halving: 0.05,
            p_doubling: 0.05,
            p_mhr: 0.10,
            p_missing: 0.10,
            p_spike: 0.10,
            max_total_fraction: 0.5,
            max_run_fraction: 0.05,
            budget_fraction: [0.05, 0.25],
            min_run: 3,
            spike_run: [1, 3],
            spike_delta_range: [5.0, 40.0],
            mhr_range: [70.0, 110.0],
            mhr_baseline_range: [80.0, 100.0],
            mhr_step_std: 0.5,
            compound_enabled: true,
            flank_len: [2, 10],
            seed: 0,
        }
    }
}

impl InjectionConfig {
    pub fn probability(&self, c: ArtefactClass) -> f64 {
        match c {
            ArtefactClass::Halving => self.p_halving,
            ArtefactClass::Doubling => self.p_doubling,
            ArtefactClass::Mhr => self.p_mhr,
            ArtefactClass::Missing => self.p_missing,
            ArtefactClass::Spike => self.p_spike,
        }
    }

    pub fn set_probability(&mut self, c: ArtefactClass, p: f64) {
        match c {
            ArtefactClass::Halving => self.p_halving = p,
            ArtefactClass::Doubling => self.p_doubling = p,
            ArtefactClass::Mhr => self.p_mhr = p,
            ArtefactClass::Missing => self.p_missing = p,
            ArtefactClass::Spike => self.p_spike = p,
        }
    }

    /// Config injecting only `class`, always.
    pub fn only(class: ArtefactClass, seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            compound_enabled: false,
            ..Self::default()
        };
        for c in ArtefactClass::ALL {
            cfg.set_probability(c, if c == class { 1.0 } else { 0.0 });
        }
        cfg
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in ArtefactClass::ALL {
            let p = self.probability(c);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability for {c} = {p} not in [0, 1]")));
            }
        }
        if !(self.max_total_fraction > 0.0 && self.max_total_fraction <= 1.0) {
            return Err(Error::Config("max_total_fraction must lie in (0, 1]".into()));
        }
        if !(self.max_run_fraction > 0.0 && self.max_run_fraction <= self.max_total_fraction) {
            return Err(Error::Config(
                "max_run_fraction must lie in (0, max_total_fraction]".into(),
            ));
        }
        let ordered = |r: [f64; 2]| r[0] <= r[1];
        if !ordered(self.budget_fraction)
            || !ordered(self.spike_delta_range)
            || !ordered(self.mhr_range)
            || !ordered(self.mhr_baseline_range)
            || self.spike_run[0] == 0
            || self.spike_run[0] > self.spike_run[1]
            || self.flank_len[0] == 0
            || self.flank_len[0] > self.flank_len[1]
            || self.min_run == 0
        {
            return Err(Error::Config("a range in the injection config is empty".into()));
        }
        Ok(())
    }
}

/// Ground truth for one corrupted segment.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionRecord {
    pub clean: Vec<f64>,
    pub corrupted: Vec<Sample>,
    /// Per-class runs in placement order.
    pub runs: [Vec<Run>; ArtefactClass::COUNT],
}

impl CorruptionRecord {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn mask(&self, c: ArtefactClass) -> Vec<bool> {
        runs_to_mask(&self.runs[c.index()], self.len())
    }

    pub fn masks(&self) -> [Vec<bool>; ArtefactClass::COUNT] {
        ArtefactClass::ALL.map(|c| self.mask(c))
    }

    pub fn labels(&self) -> [bool; ArtefactClass::COUNT] {
        ArtefactClass::ALL.map(|c| self.runs[c.index()].iter().any(|r| !r.is_empty()))
    }

    /// Union of all class masks.
    pub fn union_mask(&self) -> Vec<bool> {
        let mut u = vec![false; self.len()];
        for runs in &self.runs {
            for r in runs {
                u[r.positions()].iter_mut().for_each(|v| *v = true);
            }
        }
        u
    }
}

pub fn runs_to_mask(runs: &[Run], len: usize) -> Vec<bool> {
    let mut m = vec![false; len];
    for r in runs {
        m[r.start.min(len)..r.end.min(len)].iter_mut().for_each(|v| *v = true);
    }
    m
}

/// Maximal runs of `true`.
pub fn mask_to_runs(mask: &[bool]) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(Run::new(s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(Run::new(s, mask.len()));
    }
    runs
}

fn check_runs(runs: &[Run], len: usize) -> Result<()> {
    for r in runs {
        if r.start > r.end || r.end > len {
            return Err(Error::Range {
                start: r.start,
                end: r.end,
                len,
            });
        }
    }
    Ok(())
}

fn scale_runs(seg: &[Sample], runs: &[Run], factor: f64) -> Result<Vec<Sample>> {
    check_runs(runs, seg.len())?;
    let mut out = seg.to_vec();
    for r in runs {
        for v in &mut out[r.positions()] {
            *v = v.map(|x| x * factor);
        }
    }
    Ok(out)
}

/// Multiplies run positions by 0.5.
pub fn apply_halving(seg: &[Sample], runs: &[Run]) -> Result<Vec<Sample>> {
    scale_runs(seg, runs, 0.5)
}

/// Multiplies run positions by 2.
pub fn apply_doubling(seg: &[Sample], runs: &[Run]) -> Result<Vec<Sample>> {
    scale_runs(seg, runs, 2.0)
}

/// Marks run positions missing.
pub fn apply_missing(seg: &[Sample], runs: &[Run]) -> Result<Vec<Sample>> {
    check_runs(runs, seg.len())?;
    let mut out = seg.to_vec();
    for r in runs {
        out[r.positions()].iter_mut().for_each(|v| *v = None);
    }
    Ok(out)
}

/// Offsets each run by one draw of `±|δ|`, `|δ|` uniform in `delta_range`.
/// Returns the corrupted segment and the signed offsets, one per run.
pub fn apply_spike<R: Rng + ?Sized>(
    seg: &[Sample],
    runs: &[Run],
    delta_range: [f64; 2],
    rng: &mut R,
) -> Result<(Vec<Sample>, Vec<f64>)> {
    check_runs(runs, seg.len())?;
    let mut out = seg.to_vec();
    let mut deltas = Vec::with_capacity(runs.len());
    for r in runs {
        let mag = rng.random_range(delta_range[0]..=delta_range[1]);
        let delta = if rng.random_bool(0.5) { mag } else { -mag };
        deltas.push(delta);
        for v in &mut out[r.positions()] {
            *v = v.map(|x| x + delta);
        }
    }
    Ok((out, deltas))
}

/// A maternal heart rate trace: a baseline drawn uniformly from
/// `baseline_range` followed by a random walk with Gaussian steps of
/// `step_std`, clamped to `range`.
pub fn synthesize_mhr<R: Rng + ?Sized>(
    len: usize,
    range: [f64; 2],
    baseline_range: [f64; 2],
    step_std: f64,
    rng: &mut R,
) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut v = rng.random_range(baseline_range[0]..=baseline_range[1]);
    let step = Normal::new(0.0, step_std.max(0.0)).expect("finite std");
    (0..len)
        .map(|_| {
            let out = v.clamp(range[0], range[1]);
            v = (v + step.sample(rng)).clamp(range[0], range[1]);
            out
        })
        .collect()
}

/// Replaces run positions with synthesised MHR values.
pub fn apply_mhr<R: Rng + ?Sized>(
    seg: &[Sample],
    runs: &[Run],
    cfg: &InjectionConfig,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    check_runs(runs, seg.len())?;
    let mut out = seg.to_vec();
    for r in runs {
        let trace = synthesize_mhr(r.len(), cfg.mhr_range, cfg.mhr_baseline_range, cfg.mhr_step_std, rng);
        for (v, m) in out[r.positions()].iter_mut().zip(trace) {
            *v = Some(m);
        }
    }
    Ok(out)
}

/// Bookkeeping for run placement within one segment.
struct Placement {
    owner: Vec<Option<ArtefactClass>>,
    used: usize,
    total_cap: usize,
    max_run: usize,
}

impl Placement {
    fn new(len: usize, cfg: &InjectionConfig) -> Self {
        Self {
            owner: vec![None; len],
            used: 0,
            total_cap: (cfg.max_total_fraction * len as f64).floor() as usize,
            max_run: ((cfg.max_run_fraction * len as f64).floor() as usize).max(1),
        }
    }

    /// A run fits when its positions are free, the global cap holds and it
    /// does not touch another run of the same class.
    fn fits(&self, c: ArtefactClass, run: Run) -> bool {
        let n = self.owner.len();
        if run.is_empty() || run.end > n || self.used + run.len() > self.total_cap {
            return false;
        }
        if self.owner[run.positions()].iter().any(Option::is_some) {
            return false;
        }
        let touches = |i: usize| self.owner.get(i).copied().flatten() == Some(c);
        !(run.start > 0 && touches(run.start - 1)) && !touches(run.end)
    }

    fn place(&mut self, c: ArtefactClass, run: Run) {
        self.owner[run.positions()].iter_mut().for_each(|o| *o = Some(c));
        self.used += run.len();
    }
}

const PLACEMENT_ATTEMPTS: usize = 200;

/// Corrupts a clean segment. The result is a pure function of the segment
/// values and `cfg` (including its seed).
pub fn inject(seg: &Segment10, cfg: &InjectionConfig) -> Result<CorruptionRecord> {
    let clean: Vec<f64> = seg
        .values()
        .iter()
        .enumerate()
        .map(|(i, s)| match s {
            Some(v) if (MIN_BPM..=MAX_BPM).contains(v) => Ok(*v),
            Some(v) => Err(Error::UncleanInput(format!("sample {i} = {v} bpm out of range"))),
            None => Err(Error::UncleanInput(format!("sample {i} is missing"))),
        })
        .collect::<Result<_>>()?;
    inject_values(&clean, cfg)
}

/// [`inject`] over raw clean bpm values of any length.
pub fn inject_values(clean: &[f64], cfg: &InjectionConfig) -> Result<CorruptionRecord> {
    cfg.validate()?;
    if let Some(i) = clean.iter().position(|v| !v.is_finite()) {
        return Err(Error::UncleanInput(format!("sample {i} is not finite")));
    }
    let n = clean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let participating: [bool; ArtefactClass::COUNT] =
        ArtefactClass::ALL.map(|c| rng.random_bool(cfg.probability(c)));
    let mut order = ArtefactClass::ALL;
    order.shuffle(&mut rng);

    let mut place = Placement::new(n, cfg);
    let mut runs: [Vec<Run>; ArtefactClass::COUNT] = Default::default();

    for c in order {
        if !participating[c.index()] {
            continue;
        }
        let frac = rng.random_range(cfg.budget_fraction[0]..=cfg.budget_fraction[1]);
        let budget = ((frac * n as f64).round() as usize).max(1);
        let (lo, hi) = if c == ArtefactClass::Spike {
            (cfg.spike_run[0], cfg.spike_run[1].min(place.max_run))
        } else {
            (cfg.min_run.min(place.max_run), place.max_run)
        };
        let lo = lo.min(hi);
        let mut placed = 0;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let remaining = budget.saturating_sub(placed);
            if remaining < lo && placed > 0 {
                break;
            }
            let len = rng.random_range(lo..=hi).min(remaining.max(lo));
            if len == 0 || len > n {
                break;
            }
            let start = rng.random_range(0..=n - len);
            let run = Run::new(start, start + len);
            if place.fits(c, run) {
                place.place(c, run);
                runs[c.index()].push(run);
                placed += len;
            }
        }
    }

    if cfg.compound_enabled && participating[ArtefactClass::Missing.index()] {
        let mut anchors: Vec<Run> = [ArtefactClass::Halving, ArtefactClass::Doubling, ArtefactClass::Mhr]
            .iter()
            .flat_map(|c| runs[c.index()].iter().copied())
            .collect();
        anchors.sort();
        for a in anchors {
            for before in [true, false] {
                let want = rng.random_range(cfg.flank_len[0]..=cfg.flank_len[1]).min(place.max_run);
                for len in (1..=want).rev() {
                    let run = if before {
                        if a.start < len {
                            continue;
                        }
                        Run::new(a.start - len, a.start)
                    } else {
                        Run::new(a.end, a.end + len)
                    };
                    if place.fits(ArtefactClass::Missing, run) {
                        place.place(ArtefactClass::Missing, run);
                        runs[ArtefactClass::Missing.index()].push(run);
                        break;
                    }
                }
            }
        }
    }

    let mut corrupted: Vec<Sample> = clean.iter().map(|v| Some(*v)).collect();
    corrupted = apply_halving(&corrupted, &runs[ArtefactClass::Halving.index()])?;
    corrupted = apply_doubling(&corrupted, &runs[ArtefactClass::Doubling.index()])?;
    corrupted = apply_mhr(&corrupted, &runs[ArtefactClass::Mhr.index()], cfg, &mut rng)?;
    corrupted = apply_missing(&corrupted, &runs[ArtefactClass::Missing.index()])?;
    corrupted = apply_spike(
        &corrupted,
        &runs[ArtefactClass::Spike.index()],
        cfg.spike_delta_range,
        &mut rng,
    )?
    .0;

    Ok(CorruptionRecord {
        clean: clean.to_vec(),
        corrupted,
        runs,
    })
}

/// Corrupts exactly one run `[start, start + len)` with `class`; used by
/// the corruption-length sweep.
pub fn inject_single_run(
    clean: &[f64],
    class: ArtefactClass,
    start: usize,
    len: usize,
    cfg: &InjectionConfig,
) -> Result<CorruptionRecord> {
    inject_runs(clean, &[(class, Run::new(start, start + len))], cfg)
}

/// Corrupts the given runs, in order, each with its class. Runs must not
/// overlap.
pub fn inject_runs(clean: &[f64], runs: &[(ArtefactClass, Run)], cfg: &InjectionConfig) -> Result<CorruptionRecord> {
    let all: Vec<Run> = runs.iter().map(|(_, r)| *r).collect();
    check_runs(&all, clean.len())?;
    let mut sorted = all;
    sorted.sort();
    if sorted.windows(2).any(|w| w[0].end > w[1].start) {
        return Err(Error::Precondition("injected runs overlap".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut corrupted: Vec<Sample> = clean.iter().map(|v| Some(*v)).collect();
    let mut by_class: [Vec<Run>; ArtefactClass::COUNT] = Default::default();
    for &(class, run) in runs {
        let r = [run];
        corrupted = match class {
            ArtefactClass::Halving => apply_halving(&corrupted, &r)?,
            ArtefactClass::Doubling => apply_doubling(&corrupted, &r)?,
            ArtefactClass::Mhr => apply_mhr(&corrupted, &r, cfg, &mut rng)?,
            ArtefactClass::Missing => apply_missing(&corrupted, &r)?,
            ArtefactClass::Spike => apply_spike(&corrupted, &r, cfg.spike_delta_range, &mut rng)?.0,
        };
        if !run.is_empty() {
            by_class[class.index()].push(run);
        }
    }
    for v in &mut by_class {
        v.sort();
    }
    Ok(CorruptionRecord {
        clean: clean.to_vec(),
        corrupted,
        runs: by_class,
    })
}

/// Per-class flags keyed by class name, in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMap<T> {
    pub halving: T,
    pub doubling: T,
    pub mhr: T,
    pub missing: T,
    pub spike: T,
}

impl<T: Clone> ClassMap<T> {
    pub fn from_array(a: [T; ArtefactClass::COUNT]) -> Self {
        let [halving, doubling, mhr, missing, spike] = a;
        Self {
            halving,
            doubling,
            mhr,
            missing,
            spike,
        }
    }

    pub fn into_array(self) -> [T; ArtefactClass::COUNT] {
        [self.halving, self.doubling, self.mhr, self.missing, self.spike]
    }
}

/// One line of the mask JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskLine {
    pub id: String,
    pub labels: ClassMap<bool>,
    pub runs: ClassMap<Vec<Run>>,
}

impl MaskLine {
    pub fn from_record(id: impl Into<String>, rec: &CorruptionRecord) -> Self {
        Self {
            id: id.into(),
            labels: ClassMap::from_array(rec.labels()),
            runs: ClassMap::from_array(rec.runs.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> Segment10 {
        Segment10::from_bpm(&[v; 600], "flat", 0).unwrap()
    }

    fn wavy(seed: u64) -> Segment10 {
        let vals: Vec<f64> = (0..600)
            .map(|i| 140.0 + 8.0 * ((i as f64 + seed as f64) * 0.05).sin())
            .collect();
        Segment10::from_bpm(&vals, "wavy", 0).unwrap()
    }

    #[test]
    fn halving_only_on_constant() {
        let rec = inject(&flat(140.0), &InjectionConfig::only(ArtefactClass::Halving, 7)).unwrap();
        let mask = rec.mask(ArtefactClass::Halving);
        assert!(mask.iter().any(|m| *m));
        for (v, m) in rec.corrupted.iter().zip(&mask) {
            assert_eq!(v.unwrap(), if *m { 70.0 } else { 140.0 });
        }
        assert_eq!(rec.labels(), [true, false, false, false, false]);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = InjectionConfig { seed: 42, p_halving: 0.6, p_mhr: 0.6, p_missing: 0.6, ..Default::default() };
        let a = inject(&wavy(1), &cfg).unwrap();
        let b = inject(&wavy(1), &cfg).unwrap();
        assert_eq!(a, b);
        let c = inject(&wavy(1), &cfg.with_seed(43)).unwrap();
        assert_ne!(a.runs, c.runs);
    }

    #[test]
    fn rejects_unclean_input() {
        let mut v = vec![Some(140.0); 600];
        v[3] = None;
        let seg = Segment10::new(v, "x", 0).unwrap();
        assert!(matches!(inject(&seg, &InjectionConfig::default()), Err(Error::UncleanInput(_))));
    }

    #[test]
    fn scaling_ops() {
        let seg = vec![Some(150.0), Some(150.0), Some(150.0)];
        let h = apply_halving(&seg, &[Run::new(1, 2)]).unwrap();
        assert_eq!(h, vec![Some(150.0), Some(75.0), Some(150.0)]);
        assert_eq!(apply_halving(&seg, &[]).unwrap(), seg);
        assert!(matches!(apply_doubling(&seg, &[Run::new(2, 4)]), Err(Error::Range { .. })));
        let vals: Vec<Sample> = (0..20).map(|i| Some(97.3 + i as f64 * 1.37)).collect();
        let runs = [Run::new(3, 11)];
        let back = apply_halving(&apply_doubling(&vals, &runs).unwrap(), &runs).unwrap();
        for (a, b) in vals.iter().zip(&back) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_op() {
        let seg = vec![Some(140.0); 30];
        let m = apply_missing(&seg, &[Run::new(10, 20)]).unwrap();
        assert!(m[10..20].iter().all(Option::is_none));
        assert!(m[..10].iter().chain(&m[20..]).all(Option::is_some));
        assert_eq!(apply_missing(&seg, &[]).unwrap(), seg);
    }

    #[test]
    fn missing_runs_are_capped_at_five_percent() {
        for seed in 0..200 {
            let cfg = InjectionConfig::only(ArtefactClass::Missing, seed);
            let rec = inject(&flat(140.0), &cfg).unwrap();
            for r in mask_to_runs(&rec.mask(ArtefactClass::Missing)) {
                assert!(r.len() <= 30);
            }
        }
    }

    #[test]
    fn spike_on_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg = vec![Some(140.0); 10];
        let (out, d) = apply_spike(&seg, &[Run::new(4, 5)], [5.0, 40.0], &mut rng).unwrap();
        let v = out[4].unwrap();
        assert!((100.0..=135.0).contains(&v) || (145.0..=180.0).contains(&v));
        assert_eq!(d.len(), 1);
        assert_eq!(apply_spike(&seg, &[], [5.0, 40.0], &mut rng).unwrap().0, seg);
    }

    #[test]
    fn mhr_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(synthesize_mhr(0, [70.0, 110.0], [80.0, 100.0], 0.5, &mut rng).is_empty());
        let v = synthesize_mhr(30, [70.0, 110.0], [80.0, 100.0], 0.5, &mut rng);
        assert_eq!(v.len(), 30);
        assert!(v.iter().all(|x| (70.0..=110.0).contains(x)));
    }

    #[test]
    fn compound_flanks_touch_anchor_runs() {
        let mut cfg = InjectionConfig::default();
        cfg.p_mhr = 1.0;
        cfg.p_missing = 1.0;
        let mut seen = 0;
        for seed in 0..20 {
            let rec = inject(&wavy(seed), &cfg.with_seed(seed)).unwrap();
            let missing = rec.mask(ArtefactClass::Missing);
            for r in &rec.runs[ArtefactClass::Mhr.index()] {
                if r.start > 0 && missing[r.start - 1] {
                    seen += 1;
                }
            }
        }
        assert!(seen > 20, "only {seen} flanked MHR runs");
    }

    #[test]
    fn mask_jsonl_layout() {
        let rec = inject(&flat(140.0), &InjectionConfig::only(ArtefactClass::Spike, 1)).unwrap();
        let line = serde_json::to_string(&MaskLine::from_record("seg-1", &rec)).unwrap();
        assert!(line.starts_with(r#"{"id":"seg-1","labels":{"halving":false,"doubling":false,"mhr":false,"missing":false,"spike":true},"runs":{"halving":[],"#));
        let back: MaskLine = serde_json::from_str(&line).unwrap();
        assert_eq!(back.runs.spike, rec.runs[ArtefactClass::Spike.index()]);
    }
}
