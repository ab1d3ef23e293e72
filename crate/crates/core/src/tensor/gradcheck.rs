//! Central finite-difference gradient checking.

use super::{Graph, ModelState, Tensor, Var};
use crate::error::Result;

/// Step used by the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so that near-zero gradients
/// do not amplify rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Reduces an arbitrary output to a scalar via a fixed pseudo-random
/// projection, so that every output element carries a distinct upstream
/// gradient.
pub fn project_to_scalar(g: &mut Graph, out: Var) -> Result<Var> {
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = g.value(out).shape().to_vec();
    let n = g.value(out).len();
    let weights: Vec<f64> = (0..n)
        .map(|i| ((i as f64 * 0.754_877_666 + 0.137).fract() - 0.5) * 2.0)
        .collect();
    let w = g.constant(Tensor::new(shape, weights)?);
    let prod = g.mul(out, w)?;
    Ok(g.mean(prod))
}

/// Maximum relative error between analytic input gradients and central
/// differences of `build(inputs)`.
pub fn check_inputs<F>(inputs: &[Tensor], build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let s = project_to_scalar(&mut g, out)?;
        Ok(g.value(s).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let loss = project_to_scalar(&mut g, out)?;
    g.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (idx, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[idx].len()]);
        for j in 0..inputs[idx].len() {
            let orig = probe[idx].data()[j];
            probe[idx].data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe[idx].data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe[idx].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    Ok(worst)
}

/// Maximum relative error between analytic parameter gradients and central
/// differences, over every entry of every trainable parameter (or every
/// `stride`-th entry, to bound cost on larger models).
pub fn check_params<F>(state: &ModelState, stride: usize, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ModelState) -> Result<Var>,
{
    let eval = |s: &ModelState| -> Result<f64> {
        let mut g = Graph::new();
        let out = build(&mut g, s)?;
        let l = project_to_scalar(&mut g, out)?;
        Ok(g.value(l).data()[0])
    };
    let mut g = Graph::new();
    let out = build(&mut g, state)?;
    let loss = project_to_scalar(&mut g, out)?;
    g.backward(loss)?;
    let grads = g.param_grads();

    let mut probe = state.clone();
    let mut worst: f64 = 0.0;
    let mut counter = 0usize;
    let names: Vec<String> = state.names().cloned().collect();
    for name in names {
        if state.is_frozen(&name) {
            continue;
        }
        let n = state.get(&name).map_or(0, Tensor::len);
        for j in 0..n {
            counter += 1;
            if stride > 1 && !counter.is_multiple_of(stride) {
                continue;
            }
            let analytic = grads.get(&name).map_or(0.0, |g| g[j]);
            let orig = probe.get(&name).unwrap().data()[j];
            probe.get_mut(&name).unwrap().data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}
