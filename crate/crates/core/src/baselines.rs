//! Classical gap-filling baselines: linear interpolation and AR(p)
//! forecasting. Both receive the positions to repair explicitly and leave
//! every other position untouched.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Replaces every masked run with a straight line between its nearest
/// unmasked neighbours; leading and trailing runs copy the nearest
/// unmasked value.
pub fn linear_interpolate(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if x.len() != mask.len() {
        return Err(Error::Shape(format!("signal length {} vs mask length {}", x.len(), mask.len())));
    }
    if !mask.contains(&false) {
        return Err(Error::Unfillable);
    }
    let mut out = x.to_vec();
    let mut prev: Option<usize> = None;
    let mut i = 0;
    while i < x.len() {
        if !mask[i] {
            prev = Some(i);
            i += 1;
            continue;
        }
        let start = i;
        while i < x.len() && mask[i] {
            i += 1;
        }
        let next = (i < x.len()).then_some(i);
        for t in start..i {
            out[t] = match (prev, next) {
                (Some(a), Some(b)) => {
                    let w = (t - a) as f64 / (b - a) as f64;
                    x[a] + w * (x[b] - x[a])
                }
                (Some(a), None) => x[a],
                (None, Some(b)) => x[b],
                (None, None) => unreachable!("at least one clean sample"),
            };
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArConfig {
    pub order: usize,
    /// Minimum clean samples per coefficient before fitting is attempted.
    pub min_samples_per_coef: usize,
    /// Relative singular value cut-off of the least-squares solve.
    pub rcond: f64,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            order: 5,
            min_samples_per_coef: 3,
            rcond: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArResult {
    pub values: Vec<f64>,
    /// True when the interpolation fallback replaced the AR fit.
    pub fell_back: bool,
    /// Intercept followed by the lag coefficients, when fitted.
    pub coefficients: Option<Vec<f64>>,
}

/// AR(p) with intercept, fitted by least squares (mean-centred) on every window of `p + 1`
/// consecutive unmasked samples, then used to forecast each masked run
/// forward from the preceding context. Runs without a full `p`-sample
/// history, and segments too sparse to fit, use linear interpolation.
pub fn ar_impute(x: &[f64], mask: &[bool], cfg: &ArConfig) -> Result<ArResult> {
    if cfg.order == 0 {
        return Err(Error::Config("AR order must be at least 1".into()));
    }
    let fallback = linear_interpolate(x, mask)?;
    if !mask.contains(&true) {
        return Ok(ArResult { values: x.to_vec(), fell_back: false, coefficients: None });
    }
    let p = cfg.order;
    let clean = mask.iter().filter(|m| !**m).count();
    let fit = if clean >= cfg.min_samples_per_coef * p { fit_ar(x, mask, p, cfg.rcond) } else { None };
    let Some(coef) = fit else {
        return Ok(ArResult { values: fallback, fell_back: true, coefficients: None });
    };

    let mut out = x.to_vec();
    let mut any_fallback = false;
    let mut i = 0;
    while i < x.len() {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < x.len() && mask[i] {
            i += 1;
        }
        if start < p {
            out[start..i].copy_from_slice(&fallback[start..i]);
            any_fallback = true;
            continue;
        }
        for t in start..i {
            let mut v = coef[0];
            for (k, c) in coef[1..].iter().enumerate() {
                v += c * out[t - 1 - k];
            }
            out[t] = v;
        }
    }
    Ok(ArResult { values: out, fell_back: any_fallback, coefficients: Some(coef) })
}

fn fit_ar(x: &[f64], mask: &[bool], p: usize, rcond: f64) -> Option<Vec<f64>> {
    let rows: Vec<usize> = (p..x.len()).filter(|&t| mask[t - p..=t].iter().all(|m| !m)).collect();
    if rows.len() < p + 1 {
        return None;
    }
    // Fit on the mean-centred series; the intercept follows from the mean.
    let clean: Vec<f64> = x.iter().zip(mask).filter(|(_, m)| !**m).map(|(v, _)| *v).collect();
    let mu = clean.iter().sum::<f64>() / clean.len() as f64;
    let a = DMatrix::from_fn(rows.len(), p, |r, c| x[rows[r] - 1 - c] - mu);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&t| x[t] - mu));
    let scale = a.amax();
    let phi: Vec<f64> = if scale <= 1e-12 * mu.abs().max(1.0) {
        vec![0.0; p]
    } else {
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        svd.solve(&b, rcond * smax).ok()?.iter().copied().collect()
    };
    let intercept = mu * (1.0 - phi.iter().sum::<f64>());
    let coef: Vec<f64> = std::iter::once(intercept).chain(phi).collect();
    coef.iter().all(|c| c.is_finite()).then_some(coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_examples() {
        assert_eq!(linear_interpolate(&[1.0, 0.0, 3.0], &[false, true, false]).unwrap(), vec![1.0, 2.0, 3.0]);
        let x = [4.0, 5.0, 6.0];
        assert_eq!(linear_interpolate(&x, &[false; 3]).unwrap(), x.to_vec());
        assert_eq!(
            linear_interpolate(&[0.0, 0.0, 5.0, 6.0], &[true, true, false, false]).unwrap(),
            vec![5.0, 5.0, 5.0, 6.0]
        );
        assert!(matches!(linear_interpolate(&x, &[true; 3]), Err(Error::Unfillable)));
    }

    #[test]
    fn ar1_gap_is_recovered() {
        let mut x = vec![10.0];
        for _ in 1..60 {
            x.push(0.9 * x.last().unwrap());
        }
        let mut mask = vec![false; 60];
        mask[30..35].iter_mut().for_each(|m| *m = true);
        let r = ar_impute(&x, &mask, &ArConfig::default()).unwrap();
        assert!(!r.fell_back);
        for t in 30..35 {
            assert!((r.values[t] - x[t]).abs() < 1e-6, "t={t}: {} vs {}", r.values[t], x[t]);
        }
    }

    #[test]
    fn constant_fill_and_fallback() {
        let x = vec![140.0; 60];
        let mut mask = vec![false; 60];
        mask[20..30].iter_mut().for_each(|m| *m = true);
        let r = ar_impute(&x, &mask, &ArConfig::default()).unwrap();
        let worst = r.values.iter().map(|v| (v - 140.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "worst {worst} {:?}", r.coefficients);

        let mut mask = vec![true; 60];
        mask[7] = false;
        let r = ar_impute(&x, &mask, &ArConfig::default()).unwrap();
        assert!(r.fell_back);
    }
}
