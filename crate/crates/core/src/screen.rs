//! Rule-based normality screen with a growing-window time-to-decision
//! loop: first assessment at minute 10, then every 2 minutes up to 60.
//!
//! The criteria are an explicit surrogate; every threshold lives in
//! [`ScreenCriteria`]:
//!
//! * baseline: median of present samples over the trailing 10 minutes,
//!   within `baseline_range`;
//! * variation: mean absolute successive difference of present samples
//!   (excluded minutes dropped) at least `min_short_term_variation`;
//! * accelerations: at least `min_accelerations` episodes of
//!   `accel_rise` bpm or more above the rolling baseline for
//!   `accel_min_duration` consecutive seconds;
//! * decelerations: at most `max_decelerations` episodes of `decel_drop`
//!   bpm or more below the rolling baseline for `decel_min_duration`
//!   consecutive seconds;
//! * signal quality: no 1-minute window in the trailing 10 minutes with
//!   more than `max_missing_fraction` missing samples. Such windows are
//!   excluded and never contribute to variation or accelerations.
//!
//! The rolling baseline for minute `m` is the median over the 10 minutes
//! ending with `m`; before minute 10 the first 10 minutes are used.

use crate::error::{Error, Result};
use crate::signal::{Sample, SEGMENT1_LEN};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreenCriteria {
    pub baseline_range: [f64; 2],
    pub min_short_term_variation: f64,
    pub accel_rise: f64,
    pub accel_min_duration: usize,
    pub min_accelerations: usize,
    pub decel_drop: f64,
    pub decel_min_duration: usize,
    pub max_decelerations: usize,
    pub max_missing_fraction: f64,
    pub min_duration_min: usize,
    pub baseline_window_min: usize,
    pub review_interval_min: usize,
    pub max_duration_min: usize,
}

impl Default for ScreenCriteria {
    fn default() -> Self {
        Self {
            baseline_range: [110.0, 160.0],
            min_short_term_variation: 1.5,
            accel_rise: 10.0,
            accel_min_duration: 15,
            min_accelerations: 1,
            decel_drop: 15.0,
            decel_min_duration: 60,
            max_decelerations: 0,
            max_missing_fraction: 0.5,
            min_duration_min: 10,
            baseline_window_min: 10,
            review_interval_min: 2,
            max_duration_min: 60,
        }
    }
}

impl ScreenCriteria {
    pub fn validate(&self) -> Result<()> {
        let ok = self.baseline_range[0] < self.baseline_range[1]
            && self.min_short_term_variation > 0.0
            && self.accel_rise > 0.0
            && self.accel_min_duration > 0
            && self.decel_drop > 0.0
            && self.decel_min_duration > 0
            && (0.0..=1.0).contains(&self.max_missing_fraction)
            && self.min_duration_min > 0
            && self.baseline_window_min > 0
            && self.review_interval_min > 0
            && self.max_duration_min >= self.min_duration_min;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("screen criteria thresholds must be positive and ranges ordered".into()))
        }
    }

    /// Checkpoint minutes: 10, 12, ..., 60 for the defaults.
    pub fn checkpoints(&self) -> Vec<usize> {
        (self.min_duration_min..=self.max_duration_min)
            .step_by(self.review_interval_min)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowEvaluation {
    pub minutes: usize,
    pub baseline: Option<f64>,
    pub baseline_ok: bool,
    pub short_term_variation: Option<f64>,
    pub variation_ok: bool,
    pub accelerations: usize,
    pub accelerations_ok: bool,
    pub decelerations: usize,
    pub decelerations_ok: bool,
    pub excluded_minutes: Vec<usize>,
    pub quality_ok: bool,
    pub all_pass: bool,
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Counts maximal runs of consecutive `true` of length at least `min_len`.
fn count_episodes(flags: impl Iterator<Item = bool>, min_len: usize) -> usize {
    let mut count = 0;
    let mut run = 0;
    for f in flags.chain(std::iter::once(false)) {
        if f {
            run += 1;
        } else {
            if run >= min_len {
                count += 1;
            }
            run = 0;
        }
    }
    count
}

/// Evaluates every criterion on a prefix of a 1 Hz trace.
pub fn evaluate_window(prefix: &[Sample], c: &ScreenCriteria) -> Result<WindowEvaluation> {
    c.validate()?;
    let min_len = c.min_duration_min * SEGMENT1_LEN;
    if prefix.len() < min_len {
        return Err(Error::Precondition(format!(
            "screen window has {} samples, needs at least {min_len}",
            prefix.len()
        )));
    }
    let minutes = prefix.len() / SEGMENT1_LEN;
    let prefix = &prefix[..minutes * SEGMENT1_LEN];

    let excluded: Vec<bool> = prefix
        .chunks(SEGMENT1_LEN)
        .map(|w| w.iter().filter(|s| s.is_none()).count() as f64 / SEGMENT1_LEN as f64 > c.max_missing_fraction)
        .collect();
    let usable: Vec<Sample> = prefix
        .iter()
        .enumerate()
        .map(|(i, s)| if excluded[i / SEGMENT1_LEN] { None } else { *s })
        .collect();

    let window = c.baseline_window_min;
    let baseline_for = |m: usize| -> Option<f64> {
        let end = (m + 1).max(window).min(minutes);
        let start = end.saturating_sub(window);
        let mut vals: Vec<f64> = prefix[start * SEGMENT1_LEN..end * SEGMENT1_LEN].iter().flatten().copied().collect();
        median(&mut vals)
    };
    let per_minute: Vec<Option<f64>> = (0..minutes).map(baseline_for).collect();
    let baseline = per_minute[minutes - 1];
    let baseline_ok = baseline.is_some_and(|b| (c.baseline_range[0]..=c.baseline_range[1]).contains(&b));

    let (mut sad, mut pairs) = (0.0, 0usize);
    for w in usable.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            sad += (b - a).abs();
            pairs += 1;
        }
    }
    let stv = (pairs > 0).then(|| sad / pairs as f64);
    let variation_ok = stv.is_some_and(|s| s >= c.min_short_term_variation);

    let relative = |i: usize| -> Option<f64> { Some(usable[i]? - per_minute[i / SEGMENT1_LEN]?) };
    let accelerations = count_episodes(
        (0..usable.len()).map(|i| relative(i).is_some_and(|d| d >= c.accel_rise)),
        c.accel_min_duration,
    );
    // Decelerations are judged on the raw prefix: an excluded minute must
    // not hide a drop.
    let raw_relative = |i: usize| -> Option<f64> { Some(prefix[i]? - per_minute[i / SEGMENT1_LEN]?) };
    let decelerations = count_episodes(
        (0..prefix.len()).map(|i| raw_relative(i).is_some_and(|d| d <= -c.decel_drop)),
        c.decel_min_duration,
    );
    let accelerations_ok = accelerations >= c.min_accelerations;
    let decelerations_ok = decelerations <= c.max_decelerations;

    let recent = minutes.saturating_sub(window);
    let quality_ok = !excluded[recent..].iter().any(|e| *e);
    let excluded_minutes = excluded.iter().enumerate().filter(|(_, e)| **e).map(|(i, _)| i).collect();

    Ok(WindowEvaluation {
        minutes,
        baseline,
        baseline_ok,
        short_term_variation: stv,
        variation_ok,
        accelerations,
        accelerations_ok,
        decelerations,
        decelerations_ok,
        excluded_minutes,
        quality_ok,
        all_pass: baseline_ok && variation_ok && accelerations_ok && decelerations_ok && quality_ok,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    NormalMet,
    NotMet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenDecision {
    pub verdict: Verdict,
    pub decision_minute: Option<usize>,
    pub trace: Vec<WindowEvaluation>,
}

impl ScreenDecision {
    /// Decision time with `NotMet` censored at the end of monitoring.
    pub fn censored_minute(&self, max_minute: usize) -> usize {
        self.decision_minute.unwrap_or(max_minute)
    }
}

/// Evaluates the checkpoints in order and stops at the first all-pass.
pub fn time_to_decision(signal: &[Sample], c: &ScreenCriteria) -> Result<ScreenDecision> {
    c.validate()?;
    let want = c.max_duration_min * SEGMENT1_LEN;
    if signal.len() != want {
        return Err(Error::Precondition(format!(
            "screening needs exactly {want} samples at 1 Hz, got {}",
            signal.len()
        )));
    }
    let mut trace = Vec::new();
    for m in c.checkpoints() {
        let eval = evaluate_window(&signal[..m * SEGMENT1_LEN], c)?;
        let pass = eval.all_pass;
        trace.push(eval);
        if pass {
            return Ok(ScreenDecision { verdict: Verdict::NormalMet, decision_minute: Some(m), trace });
        }
    }
    Ok(ScreenDecision { verdict: Verdict::NotMet, decision_minute: None, trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub clean: ScreenDecision,
    pub corrupted: ScreenDecision,
    pub denoised: ScreenDecision,
    pub denoised_agrees: bool,
    pub corrupted_agrees: bool,
}

/// Screens the three aligned versions of one trace. Agreement means the
/// same verdict as the clean trace.
pub fn paired_comparison(
    clean: &[Sample],
    corrupted: &[Sample],
    denoised: &[Sample],
    c: &ScreenCriteria,
) -> Result<PairedComparison> {
    let clean = time_to_decision(clean, c)?;
    let corrupted = time_to_decision(corrupted, c)?;
    let denoised = time_to_decision(denoised, c)?;
    Ok(PairedComparison {
        denoised_agrees: denoised.verdict == clean.verdict,
        corrupted_agrees: corrupted.verdict == clean.verdict,
        clean,
        corrupted,
        denoised,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    /// Fraction of clean-normal traces judged normal in this arm.
    pub specificity_proxy: Option<f64>,
    /// Fraction of clean-not-met traces still judged not met.
    pub sensitivity_proxy: Option<f64>,
    /// Verdict agreement with the clean arm.
    pub agreement: f64,
    /// Censored at the monitoring limit for not-met traces.
    pub mean_time: f64,
    pub median_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub arms: Vec<ArmSummary>,
    /// Relative reduction of the median decision time, denoised vs corrupted.
    pub median_improvement_pct: f64,
}

impl CohortSummary {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == name)
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from("arm,specificity_proxy,sensitivity_proxy,agreement,mean_time_min,median_time_min\n");
        for a in &self.arms {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.arm,
                f(a.specificity_proxy),
                f(a.sensitivity_proxy),
                a.agreement,
                a.mean_time,
                a.median_time
            ));
        }
        s
    }
}

pub fn summarize_cohort(records: &[PairedComparison], c: &ScreenCriteria) -> Result<CohortSummary> {
    if records.is_empty() {
        return Err(Error::Precondition("empty cohort".into()));
    }
    let max = c.max_duration_min;
    let arm = |name: &str, pick: fn(&PairedComparison) -> &ScreenDecision| {
        let normal: Vec<&PairedComparison> =
            records.iter().filter(|r| r.clean.verdict == Verdict::NormalMet).collect();
        let abnormal: Vec<&PairedComparison> = records.iter().filter(|r| r.clean.verdict == Verdict::NotMet).collect();
        let frac = |set: &[&PairedComparison], v: Verdict| {
            (!set.is_empty()).then(|| set.iter().filter(|r| pick(r).verdict == v).count() as f64 / set.len() as f64)
        };
        let mut times: Vec<f64> = records.iter().map(|r| pick(r).censored_minute(max) as f64).collect();
        let mean_time = times.iter().sum::<f64>() / times.len() as f64;
        ArmSummary {
            arm: name.to_string(),
            specificity_proxy: frac(&normal, Verdict::NormalMet),
            sensitivity_proxy: frac(&abnormal, Verdict::NotMet),
            agreement: records.iter().filter(|r| pick(r).verdict == r.clean.verdict).count() as f64
                / records.len() as f64,
            mean_time,
            median_time: median(&mut times).unwrap_or(f64::NAN),
        }
    };
    let arms = vec![arm("clean", |r| &r.clean), arm("corrupted", |r| &r.corrupted), arm("denoised", |r| &r.denoised)];
    let improvement = 100.0 * (arms[1].median_time - arms[2].median_time) / arms[1].median_time;
    Ok(CohortSummary { n: records.len(), arms, median_improvement_pct: improvement })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[f64]) -> Vec<Sample> {
        v.iter().map(|x| Some(*x)).collect()
    }

    fn reactive(len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| {
                if (100..120).contains(&i) {
                    152.0
                } else if i % 2 == 0 {
                    142.0
                } else {
                    138.0
                }
            })
            .collect()
    }

    #[test]
    fn constant_fails_variation_only() {
        let e = evaluate_window(&some(&[140.0; 600]), &ScreenCriteria::default()).unwrap();
        assert!(e.baseline_ok && e.quality_ok && e.decelerations_ok);
        assert!(!e.variation_ok && !e.all_pass);
    }

    #[test]
    fn constructed_reactive_trace_passes_every_rule() {
        let e = evaluate_window(&some(&reactive(600)), &ScreenCriteria::default()).unwrap();
        assert_eq!(e.baseline, Some(142.0));
        assert!(e.baseline_ok, "{e:?}");
        assert!(e.variation_ok, "{e:?}");
        assert_eq!(e.accelerations, 1);
        assert!(e.decelerations_ok && e.quality_ok && e.all_pass);
    }

    #[test]
    fn sparse_minute_is_excluded() {
        let mut s = some(&reactive(600));
        s[300..336].iter_mut().for_each(|v| *v = None);
        let e = evaluate_window(&s, &ScreenCriteria::default()).unwrap();
        assert_eq!(e.excluded_minutes, vec![5]);
        assert!(!e.quality_ok && !e.all_pass);
    }

    #[test]
    fn short_prefix_is_rejected() {
        assert!(matches!(
            evaluate_window(&some(&[140.0; 599]), &ScreenCriteria::default()),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            time_to_decision(&some(&[140.0; 600]), &ScreenCriteria::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn decision_grid() {
        let c = ScreenCriteria::default();
        let d = time_to_decision(&some(&reactive(3600)), &c).unwrap();
        assert_eq!((d.verdict, d.decision_minute), (Verdict::NormalMet, Some(10)));
        assert_eq!(d.trace.len(), 1);

        let d = time_to_decision(&some(&[140.0; 3600]), &c).unwrap();
        assert_eq!((d.verdict, d.decision_minute), (Verdict::NotMet, None));
        assert_eq!(d.trace.len(), 26);

        // The only acceleration finishes during minute 13.
        let mut v: Vec<f64> = (0..3600).map(|i| 140.0 + if i % 2 == 0 { 2.0 } else { -2.0 }).collect();
        v[760..780].iter_mut().for_each(|x| *x = 152.0);
        let d = time_to_decision(&some(&v), &c).unwrap();
        assert_eq!(d.decision_minute, Some(14));
    }
}
