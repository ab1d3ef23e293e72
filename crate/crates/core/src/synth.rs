//! Seeded generator of clean, physiologically plausible FHR traces.
//!
//! A trace is a slowly wandering baseline plus AR(1) beat-to-beat
//! variability plus trapezoidal accelerations. Non-reactive traces have
//! reduced variability and no accelerations, so the normality screen can
//! be exercised on both outcomes.

use crate::error::{Error, Result};
use crate::signal::{FhrSignal, Segment10, SEGMENT10_LEN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub baseline_range: [f64; 2],
    /// Std of the per-second baseline random walk step.
    pub wander_std: f64,
    /// Pull of the wandering baseline back to its starting level.
    pub wander_reversion: f64,
    pub ar_coef: f64,
    /// Innovation std range of the AR(1) variability (reactive traces).
    pub variability_std: [f64; 2],
    /// Innovation std range for non-reactive traces.
    pub quiet_variability_std: [f64; 2],
    pub accel_per_minute: f64,
    pub accel_amplitude: [f64; 2],
    /// Total duration in seconds, including the 5 s ramps.
    pub accel_duration: [usize; 2],
    /// Probability that a generated trace is non-reactive.
    pub p_non_reactive: f64,
    pub clamp: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            baseline_range: [120.0, 155.0],
            wander_std: 0.08,
            wander_reversion: 0.002,
            ar_coef: 0.8,
            variability_std: [1.8, 2.6],
            quiet_variability_std: [0.5, 0.9],
            accel_per_minute: 0.3,
            accel_amplitude: [15.0, 25.0],
            accel_duration: [20, 45],
            p_non_reactive: 0.0,
            clamp: [50.0, 220.0],
        }
    }
}

const RAMP: usize = 5;

/// Generates `len` samples at 1 Hz. `reactive` selects the variability and
/// acceleration regime.
pub fn generate<R: Rng + ?Sized>(len: usize, reactive: bool, cfg: &SynthConfig, rng: &mut R) -> Vec<f64> {
    let base0 = rng.random_range(cfg.baseline_range[0]..=cfg.baseline_range[1]);
    let var_range = if reactive { cfg.variability_std } else { cfg.quiet_variability_std };
    let sigma = rng.random_range(var_range[0]..=var_range[1]);
    let wander = Normal::new(0.0, cfg.wander_std).expect("finite std");
    let noise = Normal::new(0.0, sigma).expect("finite std");

    let mut out = Vec::with_capacity(len);
    let mut base = base0;
    let mut ar = noise.sample(rng) / (1.0 - cfg.ar_coef * cfg.ar_coef).sqrt();
    for _ in 0..len {
        base += wander.sample(rng) - cfg.wander_reversion * (base - base0);
        ar = cfg.ar_coef * ar + noise.sample(rng);
        out.push(base + ar);
    }

    if reactive && cfg.accel_per_minute > 0.0 {
        let p = (cfg.accel_per_minute / 60.0).min(1.0);
        let mut t = 0;
        while t < len {
            if rng.random_bool(p) {
                let dur = rng.random_range(cfg.accel_duration[0]..=cfg.accel_duration[1]);
                let amp = rng.random_range(cfg.accel_amplitude[0]..=cfg.accel_amplitude[1]);
                for i in 0..dur.min(len - t) {
                    out[t + i] += amp * trapezoid(i, dur);
                }
                t += dur + 30;
            } else {
                t += 1;
            }
        }
    }

    for v in &mut out {
        *v = v.clamp(cfg.clamp[0], cfg.clamp[1]);
    }
    out
}

fn trapezoid(i: usize, dur: usize) -> f64 {
    let ramp = RAMP.min(dur / 2).max(1) as f64;
    let up = (i as f64 + 1.0) / ramp;
    let down = (dur - i) as f64 / ramp;
    up.min(down).min(1.0)
}

/// `n` clean 10-minute segments; segment `i` depends only on `(seed, i)`.
pub fn clean_segments(n: usize, cfg: &SynthConfig, seed: u64) -> Vec<Segment10> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let reactive = !rng.random_bool(cfg.p_non_reactive.clamp(0.0, 1.0));
            let vals = generate(SEGMENT10_LEN, reactive, cfg, &mut rng);
            Segment10::from_bpm(&vals, format!("synth-{seed}-{i}"), 0).expect("generated values lie in range")
        })
        .collect()
}

/// A clean trace of `len_sec` seconds at 1 Hz.
pub fn trace(len_sec: usize, reactive: bool, cfg: &SynthConfig, seed: u64) -> Result<FhrSignal> {
    if len_sec == 0 {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = generate(len_sec, reactive, cfg, &mut rng);
    FhrSignal::new(format!("synth-{seed}"), 1, vals.into_iter().map(Some).collect())
}

/// SplitMix64 finaliser over `(seed, index)`; used wherever per-item
/// streams must be independent of iteration order.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mad(v: &[f64]) -> f64 {
        v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn deterministic_and_in_range() {
        let cfg = SynthConfig::default();
        let a = clean_segments(5, &cfg, 3);
        let b = clean_segments(5, &cfg, 3);
        assert_eq!(a, b);
        for s in &a {
            assert!(s.values().iter().all(|v| (50.0..=220.0).contains(&v.unwrap())));
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn reactive_traces_vary_more_than_quiet_ones() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = generate(600, true, &cfg, &mut rng);
            let q = generate(600, false, &cfg, &mut rng);
            assert!(mad(&r) > 1.5, "reactive mad {}", mad(&r));
            assert!(mad(&q) < 1.5, "quiet mad {}", mad(&q));
        }
    }

    #[test]
    fn trapezoid_shape() {
        assert_eq!(trapezoid(0, 20), 0.2);
        assert_eq!(trapezoid(10, 20), 1.0);
        assert_eq!(trapezoid(19, 20), 0.2);
    }
}
