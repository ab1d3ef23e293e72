//! Detection and reconstruction metrics.

use crate::error::{Error, Result};
use crate::noise::ArtefactClass;
use serde::{Deserialize, Serialize};

/// Area under the ROC curve via the rank-sum formulation, ties counted
/// one half. O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AU-ROC needs both positive and negative labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Average 1-based rank over the tie block.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Sensitivity, specificity and accuracy at `prob > tau`. A metric whose
/// denominator is empty is `None`.
pub fn confusion_metrics(probs: &[f64], labels: &[bool], tau: f64) -> Result<Confusion> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} probs vs {} labels", probs.len(), labels.len())));
    }
    let (mut tp, mut tn, mut fp, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in probs.iter().zip(labels) {
        match (p > tau, l) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(Confusion {
        sensitivity: ratio(tp, tp + fne),
        specificity: ratio(tn, tn + fp),
        accuracy: ratio(tp + tn, probs.len()),
    })
}

/// Threshold on probabilities maximising Youden's J (sensitivity +
/// specificity - 1) for the rule `prob > t`. Candidates lie at logit
/// midpoints between consecutive distinct scores; ties in J go to the
/// widest logit gap. Without a cut of positive J the threshold lies above
/// every score.
pub fn youden_threshold(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} probs vs {} labels", probs.len(), labels.len())));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("threshold needs both positive and negative labels".into()));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::UndefinedMetric("NaN probability".into()));
    }
    let logit = |p: f64| {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).ln()
    };
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut i = 0;
    while i < idx.len() {
        let s = probs[idx[i]];
        while i < idx.len() && probs[idx[i]] == s {
            if labels[idx[i]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        let Some(&next) = idx.get(i) else { break };
        let (a, b) = (logit(s), logit(probs[next]));
        let j = neg_below as f64 / neg as f64 - pos_below as f64 / pos as f64;
        let better = match best {
            None => true,
            Some((bj, gap, _)) => j > bj + 1e-12 || ((j - bj).abs() <= 1e-12 && b - a > gap),
        };
        if better {
            let m = 0.5 * (a + b);
            best = Some((j, b - a, 1.0 / (1.0 + (-m).exp())));
        }
    }
    match best {
        Some((j, _, t)) if j > 0.0 => Ok(t),
        // No informative cut: never gate.
        _ => {
            let top = probs[idx[idx.len() - 1]];
            Ok(0.5 * (top + 1.0))
        }
    }
}

/// Squared-error sums and counts over corrupted and clean positions.
/// Accumulating these (rather than averaging per segment) keeps cohort
/// MSE exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAccumulator {
    pub sse_corrupt: f64,
    pub n_corrupt: usize,
    pub sse_clean: f64,
    pub n_clean: usize,
}

impl SplitAccumulator {
    pub fn add(&mut self, cleaned: &[f64], clean: &[f64], union: &[bool]) -> Result<()> {
        if cleaned.len() != clean.len() || clean.len() != union.len() {
            return Err(Error::Shape(format!(
                "lengths {} / {} / {} differ",
                cleaned.len(),
                clean.len(),
                union.len()
            )));
        }
        for ((a, b), &m) in cleaned.iter().zip(clean).zip(union) {
            let e = (a - b) * (a - b);
            if m {
                self.sse_corrupt += e;
                self.n_corrupt += 1;
            } else {
                self.sse_clean += e;
                self.n_clean += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, o: &SplitAccumulator) {
        self.sse_corrupt += o.sse_corrupt;
        self.n_corrupt += o.n_corrupt;
        self.sse_clean += o.sse_clean;
        self.n_clean += o.n_clean;
    }

    pub fn mse_corrupt(&self) -> Option<f64> {
        (self.n_corrupt > 0).then(|| self.sse_corrupt / self.n_corrupt as f64)
    }

    pub fn mse_clean(&self) -> Option<f64> {
        (self.n_clean > 0).then(|| self.sse_clean / self.n_clean as f64)
    }
}

/// `(mse_corrupt, mse_clean)` over the positions inside and outside `union`.
pub fn split_mse(cleaned: &[f64], clean: &[f64], union: &[bool]) -> Result<(Option<f64>, Option<f64>)> {
    let mut acc = SplitAccumulator::default();
    acc.add(cleaned, clean, union)?;
    Ok((acc.mse_corrupt(), acc.mse_clean()))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::UndefinedMetric("Spearman needs two equal-length series of length >= 2".into()));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry).ok_or_else(|| Error::UndefinedMetric("constant series".into()))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = rank;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDetection {
    pub class: ArtefactClass,
    pub auroc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub n: usize,
    /// Gate threshold per class, in class order.
    pub thresholds: [f64; ArtefactClass::COUNT],
    pub per_class: Vec<ClassDetection>,
    /// Unweighted means over the classes where the metric is defined.
    pub macro_auroc: Option<f64>,
    pub macro_sensitivity: Option<f64>,
    pub macro_specificity: Option<f64>,
    pub macro_accuracy: Option<f64>,
}

/// Builds the per-class and macro detection report from per-example
/// probabilities and labels (rows in canonical class order).
pub fn detection_report(
    probs: &[[f64; ArtefactClass::COUNT]],
    labels: &[[bool; ArtefactClass::COUNT]],
    thresholds: [f64; ArtefactClass::COUNT],
) -> Result<DetectionReport> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} prob rows vs {} label rows", probs.len(), labels.len())));
    }
    let mut per_class = Vec::new();
    for c in ArtefactClass::ALL {
        let p: Vec<f64> = probs.iter().map(|r| r[c.index()]).collect();
        let l: Vec<bool> = labels.iter().map(|r| r[c.index()]).collect();
        let conf = confusion_metrics(&p, &l, thresholds[c.index()])?;
        per_class.push(ClassDetection {
            class: c,
            auroc: auroc(&p, &l).ok(),
            sensitivity: conf.sensitivity,
            specificity: conf.specificity,
            accuracy: conf.accuracy,
            positives: l.iter().filter(|x| **x).count(),
        });
    }
    let macro_of = |f: fn(&ClassDetection) -> Option<f64>| {
        let v: Vec<f64> = per_class.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(DetectionReport {
        n: probs.len(),
        thresholds,
        macro_auroc: macro_of(|c| c.auroc),
        macro_sensitivity: macro_of(|c| c.sensitivity),
        macro_specificity: macro_of(|c| c.specificity),
        macro_accuracy: macro_of(|c| c.accuracy),
        per_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMse {
    pub mse_corrupt: Option<f64>,
    pub mse_clean: Option<f64>,
}

impl From<&SplitAccumulator> for MethodMse {
    fn from(a: &SplitAccumulator) -> Self {
        Self {
            mse_corrupt: a.mse_corrupt(),
            mse_clean: a.mse_clean(),
        }
    }
}

/// Corrupted-position MSE restricted to the positions of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMse {
    pub class: ArtefactClass,
    pub model: Option<f64>,
    pub linear: Option<f64>,
    pub ar: Option<f64>,
    pub positions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub n: usize,
    /// Model figures, normalised units squared.
    pub mse_corrupt: Option<f64>,
    pub mse_clean: Option<f64>,
    pub linear: MethodMse,
    pub ar: MethodMse,
    pub per_class: Vec<ClassMse>,
}

/// Per-class squared-error accumulator for (model, linear, AR).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassAccumulator {
    pub sse: [[f64; 3]; ArtefactClass::COUNT],
    pub n: [usize; ArtefactClass::COUNT],
}

impl ClassAccumulator {
    /// `outputs` holds (model, linear, AR) reconstructions.
    pub fn add(&mut self, outputs: [&[f64]; 3], clean: &[f64], masks: &[Vec<bool>; ArtefactClass::COUNT]) {
        for c in 0..ArtefactClass::COUNT {
            for (t, &m) in masks[c].iter().enumerate() {
                if m {
                    self.n[c] += 1;
                    for (k, o) in outputs.iter().enumerate() {
                        let e = o[t] - clean[t];
                        self.sse[c][k] += e * e;
                    }
                }
            }
        }
    }

    pub fn merge(&mut self, o: &ClassAccumulator) {
        for c in 0..ArtefactClass::COUNT {
            self.n[c] += o.n[c];
            for k in 0..3 {
                self.sse[c][k] += o.sse[c][k];
            }
        }
    }

    pub fn rows(&self) -> Vec<ClassMse> {
        ArtefactClass::ALL
            .iter()
            .map(|&c| {
                let i = c.index();
                let m = |k: usize| (self.n[i] > 0).then(|| self.sse[i][k] / self.n[i] as f64);
                ClassMse { class: c, model: m(0), linear: m(1), ar: m(2), positions: self.n[i] }
            })
            .collect()
    }
}

/// One point of the corruption-length sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub run_length: usize,
    pub segments: usize,
    pub model: Option<f64>,
    pub linear: Option<f64>,
    pub ar: Option<f64>,
    /// Clean-position MSE of the model, tracked for the length-0 control.
    pub model_clean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    pub spearman_linear: Option<f64>,
}

impl SweepReport {
    pub fn from_points(points: Vec<SweepPoint>) -> Self {
        let pairs: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.run_length > 0)
            .filter_map(|p| p.linear.map(|l| (p.run_length as f64, l)))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        Self {
            spearman_linear: spearman(&x, &y).ok(),
            points,
        }
    }

    /// `run_length,mse` rows for the model (plus the baselines).
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut s = String::from("run_length,mse,mse_linear,mse_ar\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{},{}\n", p.run_length, f(p.model), f(p.linear), f(p.ar)));
        }
        s
    }
}
