//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so that the report is always
//! printed. Criteria listed in `REPORTED_ONLY` are evaluated and reported
//! but do not fail the run; set `ACCEPTANCE_STRICT=1` to enforce them too.

#[path = "common/grad_suite.rs"]
#[allow(dead_code)]
mod grad_suite;

use cleanctg::baselines::ArConfig;
use cleanctg::detector::{self, DetectorConfig};
use cleanctg::metrics::auroc;
use cleanctg::noise::{self, mask_to_runs, ArtefactClass, InjectionConfig};
use cleanctg::pipeline::{
    evaluate_detection, evaluate_reconstruction, length_sweep, screen_cohort, CohortConfig, Model, ModelConfig,
    SweepConfig,
};
use cleanctg::reconstructor::{self, Overrides, ReconstructorConfig, SliceInput};
use cleanctg::screen::ScreenCriteria;
use cleanctg::signal::{normalize, Sample};
use cleanctg::synth::{clean_segments, mix_seed, SynthConfig};
use cleanctg::tensor::Graph;
use cleanctg::training::{build_dataset, train_stage1, train_stage2, Dataset, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

/// Criteria that are reported but not enforced by default.
const REPORTED_ONLY: &[usize] = &[6, 7];

const TRAIN_PARENTS: usize = 500;
const HELD_OUT_PARENTS: usize = 100;

struct Outcome {
    id: usize,
    pass: bool,
}

fn report(out: &mut Vec<Outcome>, id: usize, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, pass });
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

/// Desk recipe: stage 1 for 15 epochs, stage 2 with smaller batches and more patience.
fn train_desk(ds: &Dataset) -> Model {
    let s1cfg = TrainConfig { seed: 5, max_epochs: 15, ..TrainConfig::default() };
    let s2cfg = TrainConfig { seed: 5, max_epochs: 40, batch: 32, patience: 8, ..TrainConfig::default() };
    let cfg = ModelConfig::desk();
    let split = ds.split(&s1cfg);
    let s1 = train_stage1(ds, &split, &cfg.detector, &s1cfg).unwrap();
    let s2 = train_stage2(ds, &split, &s1.state, &cfg.detector, &cfg.reconstructor, &s2cfg).unwrap();
    let mut state = s1.state;
    state.merge(s2.state).unwrap();
    Model { config: cfg, state, split: Some(split) }
}

fn injector_compliance(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    const N: usize = 10_000;
    let segs = clean_segments(N, &SynthConfig::default(), 101);
    let base = InjectionConfig::default();
    let mut violations = 0usize;
    let mut present = [0usize; ArtefactClass::COUNT];
    for (i, seg) in segs.iter().enumerate() {
        let rec = noise::inject(seg, &base.with_seed(mix_seed(202, i as u64))).unwrap();
        if rec.union_mask().iter().filter(|m| **m).count() > 300 {
            violations += 1;
        }
        for (k, m) in rec.masks().iter().enumerate() {
            let runs = mask_to_runs(m);
            violations += runs.iter().filter(|r| r.len() > 30).count();
            present[k] += usize::from(!runs.is_empty());
        }
    }
    let elapsed = t0.elapsed();
    let rates = present.map(|p| p as f64 / N as f64);
    let worst = ArtefactClass::ALL
        .iter()
        .map(|c| (rates[c.index()] - base.probability(*c)).abs())
        .fold(0.0, f64::max);
    let pass = violations == 0 && worst <= 0.02 && elapsed <= Duration::from_secs(60);
    let rates: Vec<String> = rates.iter().map(|r| format!("{:.2}%", 100.0 * r)).collect();
    report(
        out,
        1,
        "injector compliance",
        pass,
        format!("violations {violations}; rates {}; max deviation {:.2} pp; {}", rates.join("/"), 100.0 * worst, secs(elapsed)),
    );
}

fn gradient_suite(out: &mut Vec<Outcome>) {
    let t0 = Instant::now();
    let mut worst = (0.0f64, "");
    for (name, check) in grad_suite::CHECKS {
        let w = check();
        if w >= worst.0 {
            worst = (w, name);
        }
    }
    let elapsed = t0.elapsed();
    let pass = worst.0 < grad_suite::TOL && elapsed <= Duration::from_secs(300);
    report(
        out,
        2,
        "gradient suite",
        pass,
        format!(
            "{} checks x {} instances; max relative error {:.2e} ({}); {}",
            grad_suite::CHECKS.len(),
            grad_suite::INSTANCES,
            worst.0,
            worst.1,
            secs(elapsed)
        ),
    );
}

fn identity_invariant(out: &mut Vec<Outcome>, model: &Model) {
    const N: usize = 1000;
    let segs = clean_segments(N, &SynthConfig::default(), 303);
    let base = InjectionConfig::default();
    let off = Overrides { gates: Some([false; ArtefactClass::COUNT]), ..Overrides::default() };
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    for (i, seg) in segs.iter().enumerate() {
        let rec = noise::inject(seg, &base.with_seed(mix_seed(305, i as u64))).unwrap();
        let x = normalize(&rec.corrupted);
        let minute = rng.random_range(0..10);
        let d = detector::detect(&model.state, &model.config.detector, &x, minute).unwrap();
        let r = model.reconstruct(&x, minute, &d, &off).unwrap();
        for (k, v) in r.cleaned.iter().enumerate() {
            worst = worst.max((v - x.values[minute * 60 + k]).abs());
        }
    }
    report(out, 3, "identity with gates off", worst <= 1e-12, format!("{N} segments; max |y - x| {worst:.1e}"));
}

fn oracle_correction(out: &mut Vec<Outcome>, model: &Model) {
    const PER_CLASS: usize = 500;
    let segs = clean_segments(PER_CLASS, &SynthConfig::default(), 404);
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let mut lines = Vec::new();
    let mut pass = true;
    for class in [ArtefactClass::Halving, ArtefactClass::Doubling] {
        let (mut sse, mut n) = (0.0, 0usize);
        for seg in &segs {
            let clean: Vec<f64> = seg.values().iter().map(|v| v.unwrap()).collect();
            let minute = rng.random_range(0..10);
            let len = rng.random_range(1..=30);
            let start = minute * 60 + rng.random_range(0..=60 - len);
            let inj = InjectionConfig::default().with_seed(rng.random());
            let rec = noise::inject_single_run(&clean, class, start, len, &inj).unwrap();
            let x = normalize(&rec.corrupted);
            let truth = normalize(&rec.clean.iter().map(|v| Some(*v)).collect::<Vec<Sample>>()).values;
            let d = detector::detect(&model.state, &model.config.detector, &x, minute).unwrap();
            let input = SliceInput::new(&x, minute, d.fused.clone()).unwrap();
            let mut gates = [false; ArtefactClass::COUNT];
            gates[class.index()] = true;
            let mut masks: [Option<Vec<bool>>; ArtefactClass::COUNT] = Default::default();
            let gt = rec.mask(class)[minute * 60..(minute + 1) * 60].to_vec();
            masks[class.index()] = Some(gt.clone());
            let mut g = Graph::new();
            let v = reconstructor::forward(&mut g, &model.state, &model.config.reconstructor, &input, &gates, true, &masks)
                .unwrap();
            let repaired = g.value(v.branch[class.index()].unwrap()).data().to_vec();
            for (k, on) in gt.iter().enumerate() {
                if *on {
                    sse += (repaired[k] - truth[minute * 60 + k]).powi(2);
                    n += 1;
                }
            }
        }
        let mse = sse / n as f64;
        pass &= mse <= 1e-12;
        lines.push(format!("{class} MSE {mse:.1e} over {n} positions"));
    }
    report(out, 4, "oracle halving/doubling correction", pass, lines.join("; "));
}

fn detection(out: &mut Vec<Outcome>, model: &Model, held: &Dataset, train_time: Option<Duration>) {
    let all: Vec<usize> = (0..held.parents.len()).collect();
    let r = evaluate_detection(model, held, &all).unwrap();
    let per: Vec<f64> = r.per_class.iter().map(|c| c.auroc.unwrap_or(f64::NAN)).collect();
    let macro_auc = r.macro_auroc.unwrap_or(f64::NAN);
    let pass = macro_auc >= 0.95 && per.iter().all(|a| *a >= 0.90) && train_time.is_none_or(|t| t <= Duration::from_secs(1800));
    let per: Vec<String> = r.per_class.iter().zip(&per).map(|(c, a)| format!("{} {a:.4}", c.class)).collect();
    report(
        out,
        5,
        "desk-scale detection",
        pass,
        format!(
            "{} held-out slices; macro AU-ROC {macro_auc:.4}; {}; training {}",
            r.n,
            per.join(", "),
            train_time.map_or("not measured (cached model)".into(), secs)
        ),
    );
}

fn reconstruction(out: &mut Vec<Outcome>, model: &Model, held: &Dataset) {
    let all: Vec<usize> = (0..held.parents.len()).collect();
    let r = evaluate_reconstruction(model, held, &all, &ArConfig::default()).unwrap();
    let m = r.mse_corrupt.unwrap();
    let clean = r.mse_clean.unwrap();
    let lin = r.linear.mse_corrupt.unwrap();
    let ar = r.ar.mse_corrupt.unwrap();
    let pass = m <= 0.5 * lin && m <= 0.5 * ar && clean <= 0.1 * m;
    report(
        out,
        6,
        "desk-scale reconstruction",
        pass,
        format!(
            "corrupted MSE {m:.3e} vs linear {lin:.3e} ({:.2}x) and AR {ar:.3e} ({:.2}x); clean MSE {clean:.3e} ({:.3}x corrupted)",
            m / lin,
            m / ar,
            clean / m
        ),
    );
}

fn sweep(out: &mut Vec<Outcome>, model: &Model) {
    let clean = clean_segments(HELD_OUT_PARENTS, &SynthConfig::default(), 606);
    let r = length_sweep(Some(model), &clean, &SweepConfig { seed: 607, ..SweepConfig::default() }, &ArConfig::default())
        .unwrap();
    let rho = r.spearman_linear.unwrap_or(f64::NAN);
    let long: Vec<_> = r.points.iter().filter(|p| p.run_length >= 10).collect();
    let above: Vec<usize> =
        long.iter().filter(|p| p.model.unwrap() > p.linear.unwrap()).map(|p| p.run_length).collect();
    let pass = rho > 0.9 && above.is_empty();
    report(
        out,
        7,
        "length sweep",
        pass,
        format!(
            "linear Spearman rho {rho:.3}; model at or below linear at {}/{} lengths >= 10; above at {above:?}",
            long.len() - above.len(),
            long.len()
        ),
    );
}

/// Pairwise concordance: P(score_pos > score_neg) + 0.5 P(tie).
fn auroc_oracle(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (si, li) in s.iter().zip(l) {
        for (sj, lj) in s.iter().zip(l) {
            if *li && !*lj {
                den += 1.0;
                num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn auroc_equivalence(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.random_range(2..300);
        let coarse = rng.random_bool(0.5);
        let s: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(rng.random_range(0..20u32)) / 20.0 } else { rng.random() })
            .collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if l.iter().all(|b| *b) || l.iter().all(|b| !*b) {
            continue;
        }
        worst = worst.max((auroc(&s, &l).unwrap() - auroc_oracle(&s, &l)).abs());
        cases += 1;
    }
    let fixed = [
        auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
        auroc(&[0.5, 0.5, 0.5, 0.5], &[false, true, false, true]).unwrap(),
        auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
    ];
    let pass = worst <= 1e-9 && fixed == [1.0, 0.5, 0.75];
    report(out, 8, "AU-ROC oracle equivalence", pass, format!("{cases} cases; max deviation {worst:.1e}; fixed {fixed:?}"));
}

fn screen_proxy(out: &mut Vec<Outcome>, model: &Model) {
    let cfg = CohortConfig { seed: 909, ..CohortConfig::default() };
    let (_, s) = screen_cohort(model, &cfg, &ScreenCriteria::default()).unwrap();
    let (c, d) = (s.arm("corrupted").unwrap(), s.arm("denoised").unwrap());
    let pass = d.agreement >= c.agreement && d.median_time <= c.median_time;
    report(
        out,
        9,
        "screen proxy",
        pass,
        format!(
            "{} traces; agreement corrupted {:.3} denoised {:.3}; median minutes corrupted {} denoised {}; improvement {:.1}%",
            s.n, c.agreement, d.agreement, c.median_time, d.median_time, s.median_improvement_pct
        ),
    );
}

fn json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).unwrap()
}

/// Every report of the suite recomputed from scratch, serialised.
fn report_bytes(model: &Model, held: &Dataset) -> Vec<Vec<u8>> {
    let all: Vec<usize> = (0..held.parents.len()).collect();
    let clean = clean_segments(20, &SynthConfig::default(), 1001);
    let ds = build_dataset(&clean, &InjectionConfig::default().with_seed(1002)).unwrap();
    let tiny = ModelConfig { detector: DetectorConfig::tiny(), reconstructor: ReconstructorConfig::tiny() };
    let tcfg = TrainConfig { seed: 3, max_epochs: 1, max_steps: Some(4), ..TrainConfig::default() };
    let split = ds.split(&tcfg);
    let s1 = train_stage1(&ds, &split, &tiny.detector, &tcfg).unwrap();
    let s2 = train_stage2(&ds, &split, &s1.state, &tiny.detector, &tiny.reconstructor, &tcfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let mut state = s1.state;
    state.merge(s2.state).unwrap();
    Model { config: tiny, state, split: Some(split) }.save(&ckpt).unwrap();
    vec![
        std::fs::read(&ckpt).unwrap(),
        json(&(s1.history, s2.history)),
        json(&ds.parents.iter().map(|p| p.corrupted.values.clone()).collect::<Vec<_>>()),
        json(&evaluate_detection(model, held, &all).unwrap()),
        json(&evaluate_reconstruction(model, held, &all, &ArConfig::default()).unwrap()),
        json(
            &length_sweep(Some(model), &clean, &SweepConfig { per_length: 4, seed: 1003, ..SweepConfig::default() }, &ArConfig::default())
                .unwrap(),
        ),
        json(&screen_cohort(model, &CohortConfig { traces: 10, seed: 1004, ..CohortConfig::default() }, &ScreenCriteria::default()).unwrap().1),
    ]
}

fn reproducibility(out: &mut Vec<Outcome>, model: &Model, held: &Dataset) {
    let a = report_bytes(model, held);
    let b = report_bytes(model, held);
    let differing: Vec<usize> = (0..a.len()).filter(|i| a[*i] != b[*i]).collect();
    report(
        out,
        10,
        "byte-identical reruns",
        differing.is_empty(),
        format!("{} reports (checkpoint, training logs, dataset, detection, reconstruction, sweep, cohort); differing {differing:?}", a.len()),
    );
}

fn main() {
    let t0 = Instant::now();
    let mut out = Vec::new();
    injector_compliance(&mut out);
    gradient_suite(&mut out);
    auroc_equivalence(&mut out);

    let train = build_dataset(&clean_segments(TRAIN_PARENTS, &SynthConfig::default(), 7), &InjectionConfig::default().with_seed(11))
        .unwrap();
    // ACCEPTANCE_MODEL=<path> reuses a model trained by an earlier run (saving it on first use).
    let cache = std::env::var_os("ACCEPTANCE_MODEL").map(std::path::PathBuf::from);
    let t_train = Instant::now();
    let (model, train_time) = match cache.as_deref().filter(|p| p.exists()) {
        Some(p) => (Model::load(p).unwrap(), None),
        None => {
            let m = train_desk(&train);
            if let Some(p) = &cache {
                m.save(p).unwrap();
            }
            (m, Some(t_train.elapsed()))
        }
    };
    let held = build_dataset(
        &clean_segments(HELD_OUT_PARENTS, &SynthConfig::default(), 1234),
        &InjectionConfig::default().with_seed(77),
    )
    .unwrap();

    identity_invariant(&mut out, &model);
    oracle_correction(&mut out, &model);
    detection(&mut out, &model, &held, train_time);
    reconstruction(&mut out, &model, &held);
    sweep(&mut out, &model);
    screen_proxy(&mut out, &model);
    reproducibility(&mut out, &model, &held);

    out.sort_by_key(|o| o.id);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let enforced_failures: Vec<usize> =
        out.iter().filter(|o| !o.pass && (strict || !REPORTED_ONLY.contains(&o.id))).map(|o| o.id).collect();
    let passed = out.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass; total {}", out.len(), secs(t0.elapsed()));
    if !enforced_failures.is_empty() {
        println!("acceptance: enforced criteria failed: {enforced_failures:?}");
        std::process::exit(1);
    }
}
