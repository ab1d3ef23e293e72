//! Property tests of the public invariants.

use cleanctg::baselines::{ar_impute, linear_interpolate, ArConfig};
use cleanctg::detector::{gates_for, DetectorConfig};
use cleanctg::metrics::{auroc, split_mse, youden_threshold, confusion_metrics};
use cleanctg::noise::{self, mask_to_runs, runs_to_mask, ArtefactClass, InjectionConfig};
use cleanctg::reconstructor::{self, fuse, math_correct, ReconstructorConfig, SliceInput};
use cleanctg::signal::{normalize, Segment10};
use cleanctg::synth::{self, SynthConfig};
use cleanctg::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pairwise concordance: P(score_pos > score_neg) + 0.5 P(tie).
fn auroc_oracle(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            // Coarse grid so that ties occur.
            proptest::collection::vec((0u32..40).prop_map(|k| f64::from(k) / 40.0), n),
            proptest::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, l)| l.iter().any(|b| *b) && l.iter().any(|b| !*b))
    })
}

fn clean_segment(seed: u64) -> Segment10 {
    synth::clean_segments(1, &SynthConfig::default(), seed).remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_matches_pairwise_oracle((s, l) in scored_labels()) {
        let fast = auroc(&s, &l).unwrap();
        prop_assert!((fast - auroc_oracle(&s, &l)).abs() < 1e-9);
    }

    #[test]
    fn auroc_invariant_under_monotone_transform((s, l) in scored_labels(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        prop_assert!((auroc(&s, &l).unwrap() - auroc(&t, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn youden_threshold_is_optimal_among_observed_cuts((s, l) in scored_labels()) {
        let j = |t: f64| {
            let c = confusion_metrics(&s, &l, t).unwrap();
            c.sensitivity.unwrap() + c.specificity.unwrap() - 1.0
        };
        let best = j(youden_threshold(&s, &l).unwrap());
        for &t in &s {
            prop_assert!(best >= j(t) - 1e-12);
        }
    }

    #[test]
    fn split_mse_partitions_positions(mask in proptest::collection::vec(any::<bool>(), 1..300)) {
        let n = mask.len();
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        let (c, k) = split_mse(&a, &b, &mask).unwrap();
        let corrupt = mask.iter().filter(|m| **m).count();
        prop_assert_eq!(c.is_some(), corrupt > 0);
        prop_assert_eq!(k.is_some(), corrupt < n);
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let recombined = c.unwrap_or(0.0) * corrupt as f64 + k.unwrap_or(0.0) * (n - corrupt) as f64;
        prop_assert!((recombined - total).abs() < 1e-9);
    }

    #[test]
    fn injection_respects_caps_and_leaves_clean_positions(seed in any::<u64>(), synth_seed in 0u64..50) {
        let seg = clean_segment(synth_seed);
        let cfg = InjectionConfig::default().with_seed(seed);
        let rec = noise::inject(&seg, &cfg).unwrap();
        let union = rec.union_mask();
        prop_assert!(union.iter().filter(|m| **m).count() <= 300);
        let masks = rec.masks();
        for t in 0..600 {
            prop_assert!(masks.iter().filter(|m| m[t]).count() <= 1, "classes overlap at {}", t);
            if !union[t] {
                prop_assert_eq!(rec.corrupted[t], Some(rec.clean[t]));
            }
        }
        for m in &masks {
            for r in mask_to_runs(m) {
                prop_assert!(r.len() <= 30);
            }
        }
    }

    #[test]
    fn runs_and_masks_roundtrip(mask in proptest::collection::vec(any::<bool>(), 0..200)) {
        prop_assert_eq!(runs_to_mask(&mask_to_runs(&mask), mask.len()), mask);
    }

    #[test]
    fn linear_interpolation_is_identity_off_mask_and_bounded_on_it(
        vals in proptest::collection::vec(0.2f64..0.9, 2..120),
        mask_bits in proptest::collection::vec(any::<bool>(), 120),
    ) {
        let n = vals.len();
        let mut mask = mask_bits[..n].to_vec();
        mask[0] = false;
        let y = linear_interpolate(&vals, &mask).unwrap();
        let (lo, hi) = vals.iter().zip(&mask).filter(|(_, m)| !**m).fold((f64::MAX, f64::MIN), |(a, b), (v, _)| (a.min(*v), b.max(*v)));
        for t in 0..n {
            if mask[t] {
                prop_assert!(y[t] >= lo - 1e-12 && y[t] <= hi + 1e-12);
            } else {
                prop_assert_eq!(y[t], vals[t]);
            }
        }
    }

    #[test]
    fn ar_imputation_keeps_observed_values(seed in 0u64..30, start in 0usize..500, len in 1usize..60) {
        let seg = clean_segment(seed);
        let x = normalize(seg.values()).values;
        let mut mask = vec![false; 600];
        mask[start..(start + len).min(600)].iter_mut().for_each(|m| *m = true);
        let r = ar_impute(&x, &mask, &ArConfig::default()).unwrap();
        for t in 0..600 {
            if !mask[t] {
                prop_assert_eq!(r.values[t], x[t]);
            } else {
                prop_assert!(r.values[t].is_finite());
            }
        }
    }

    #[test]
    fn oracle_masks_invert_scaling(seed in 0u64..50, start in 0usize..560, len in 1usize..40, halve in any::<bool>()) {
        let seg = clean_segment(seed);
        let clean: Vec<f64> = seg.values().iter().map(|v| v.unwrap()).collect();
        let class = if halve { ArtefactClass::Halving } else { ArtefactClass::Doubling };
        let rec = noise::inject_single_run(&clean, class, start, len, &InjectionConfig::default()).unwrap();
        let x = normalize(&rec.corrupted).values;
        let m: Vec<f64> = rec.mask(class).iter().map(|b| f64::from(u8::from(*b))).collect();
        let f = reconstructor::correction_factor(class).unwrap();
        let fixed = math_correct(&x, &m, f);
        let truth = normalize(&rec.clean.iter().map(|v| Some(*v)).collect::<Vec<_>>()).values;
        for t in 0..600 {
            prop_assert!((fixed[t] - truth[t]).powi(2) <= 1e-12);
        }
    }

    #[test]
    fn fusion_is_convex(rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 6), 1..20), seed in any::<u64>()) {
        let n = rows.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Tensor::randn(&[n, 6], 2.0, &mut rng);
        let weights: Vec<Vec<f64>> = logits
            .data()
            .chunks(6)
            .map(|r| {
                let m = r.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            })
            .collect();
        let candidates: Vec<Vec<f64>> = (0..6).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
        let out = fuse(&candidates, &weights).unwrap();
        for t in 0..n {
            let lo = rows[t].iter().cloned().fold(f64::MAX, f64::min);
            let hi = rows[t].iter().cloned().fold(f64::MIN, f64::max);
            prop_assert!(out[t] >= lo - 1e-12 && out[t] <= hi + 1e-12);
        }
    }

    #[test]
    fn gates_are_monotone_in_threshold(p in proptest::collection::vec(0.0f64..1.0, 5), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let probs: [f64; 5] = p.try_into().unwrap();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let at = |t: f64| gates_for(&probs, &DetectorConfig { gate_threshold: t, ..DetectorConfig::tiny() });
        let (a, b) = (at(lo), at(hi));
        for c in 0..5 {
            prop_assert!(!b[c] || a[c], "a gate opened when the threshold rose");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reconstruction_is_identity_with_all_gates_off(seed in any::<u64>(), synth_seed in 0u64..40, minute in 0usize..10) {
        let cfg = ReconstructorConfig::tiny();
        let state = reconstructor::init(&cfg, seed).unwrap();
        let seg = clean_segment(synth_seed);
        let rec = noise::inject(&seg, &InjectionConfig::default().with_seed(seed)).unwrap();
        let x = normalize(&rec.corrupted);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = SliceInput::new(&x, minute, Tensor::randn(&[60, cfg.detector_dim], 1.0, &mut rng)).unwrap();
        let r = reconstructor::reconstruct_input(&state, &cfg, &input, &[false; 5], &Default::default()).unwrap();
        for (a, b) in r.cleaned.iter().zip(&input.x) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
