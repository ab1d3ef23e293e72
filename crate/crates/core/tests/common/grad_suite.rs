//! Finite-difference checks of every differentiable primitive and composite
//! block; each check returns its worst relative error.

use cleanctg::tensor::gradcheck::check_inputs;
use cleanctg::tensor::{Graph, Tensor, Var};
use cleanctg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 100;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn probs(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(0.05..0.95)).collect())
}

fn run<G, F>(seed: u64, mut gen: G, build: F) -> f64
where
    G: FnMut(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let inputs = gen(&mut rng);
        worst = worst.max(check_inputs(&inputs, &build).unwrap());
    }
    worst
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5))
}

pub fn matmul() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(1, |r| {
        let (m, k, n) = dims(r);
        vec![rand_t(r, &[m, k]), rand_t(r, &[k, n])]
    }, |g, v| g.matmul(v[0], v[1])));
    w
}

pub fn add_and_broadcasts() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(2, |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[3, 4])], |g, v| g.add(v[0], v[1])));
    w = w.max(run(3, |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[4])], |g, v| g.add(v[0], v[1])));
    w = w.max(run(4, |r| vec![rand_t(r, &[3, 4]), rand_t(r, &[3, 1])], |g, v| g.sub(v[0], v[1])));
    w
}

pub fn mul_and_broadcasts() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(5, |r| vec![rand_t(r, &[2, 5]), rand_t(r, &[2, 5])], |g, v| g.mul(v[0], v[1])));
    w = w.max(run(6, |r| vec![rand_t(r, &[4, 3]), rand_t(r, &[4, 1])], |g, v| g.mul(v[0], v[1])));
    w = w.max(run(7, |r| vec![rand_t(r, &[6])], |g, v| g.mul(v[0], v[0])));
    w
}

pub fn conv1d() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(8, |r| {
        let l = r.random_range(1..9);
        let k = [1, 3, 5][r.random_range(0..3)];
        let cin = r.random_range(1..3);
        let cout = r.random_range(1..4);
        vec![rand_t(r, &[l, cin]), rand_t(r, &[k, cin, cout]), rand_t(r, &[cout])]
    }, |g, v| g.conv1d(v[0], v[1], Some(v[2]))));
    w
}

pub fn layer_norm() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(9, |r| {
        let c = r.random_range(2..6);
        vec![rand_t(r, &[3, c]), rand_t(r, &[c]), rand_t(r, &[c])]
    }, |g, v| g.layer_norm(v[0], v[1], v[2])));
    w
}

pub fn softmax() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(10, |r| vec![rand_t(r, &[3, 4])], |g, v| g.softmax(v[0], 1)));
    w = w.max(run(11, |r| vec![rand_t(r, &[3, 4])], |g, v| g.softmax(v[0], 0)));
    w
}

pub fn activations() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(12, |r| vec![rand_t(r, &[7])], |g, v| Ok(g.sigmoid(v[0]))));
    w = w.max(run(13, |r| vec![rand_t(r, &[7])], |g, v| Ok(g.gelu(v[0]))));
    w = w.max(run(14, |r| vec![rand_t(r, &[7])], |g, v| Ok(g.relu(v[0]))));
    w
}

pub fn reductions_and_reshaping() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(15, |r| vec![rand_t(r, &[3, 5])], |g, v| Ok(g.mean(v[0]))));
    w = w.max(run(16, |r| vec![rand_t(r, &[3, 5])], |g, v| {
        let a = g.sum_axis(v[0], 1)?;
        let b = g.sum_axis(v[0], 0)?;
        let a = g.mean(a);
        let b = g.mean(b);
        let s = g.scale(b, 0.3);
        g.add(a, s)
    }));
    w = w.max(run(17, |r| vec![rand_t(r, &[2, 3]), rand_t(r, &[2, 2]), rand_t(r, &[1, 5])], |g, v| {
        let c = g.concat(&[v[0], v[1]], 1)?;
        g.concat(&[c, v[2]], 0)
    }));
    w = w.max(run(18, |r| vec![rand_t(r, &[4, 5])], |g, v| {
        let a = g.slice(v[0], 0, 1, 2)?;
        g.slice(a, 1, 2, 3)
    }));
    w = w.max(run(19, |r| vec![rand_t(r, &[2, 3])], |g, v| g.transpose(v[0])));
    w = w.max(run(20, |r| vec![rand_t(r, &[6, 2])], |g, v| g.avg_pool_rows(v[0], 3)));
    w = w.max(run(21, |r| vec![rand_t(r, &[4])], |g, v| {
        let s = g.scale(v[0], -1.7);
        Ok(g.add_scalar(s, 0.4))
    }));
    w
}

pub fn attention() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(22, |r| {
        let lq = r.random_range(1..5);
        let lk = r.random_range(1..5);
        vec![rand_t(r, &[lq, 4]), rand_t(r, &[lk, 4]), rand_t(r, &[lk, 6])]
    }, |g, v| g.attention(v[0], v[1], v[2], 2)));
    w
}

pub fn losses() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run(23, |r| {
        let p = probs(r, 5);
        let _ = r.random::<u8>();
        vec![p]
    }, |g, v| g.bce_loss(v[0], &[1.0, 0.0, 1.0, 0.0, 0.3])));
    w = w.max(run(24, |r| vec![rand_t(r, &[2, 3])], |g, v| g.mse_loss(v[0], &[0.1, 0.2, 0.3, -1.0, 2.0, 0.0])));
    w
}

// Composite blocks: gradients with respect to inputs and parameters.

use cleanctg::detector::{self, DetectorConfig};
use cleanctg::nn::{self, EncoderSpec};
use cleanctg::noise::ArtefactClass;
use cleanctg::reconstructor::{self, ReconstructorConfig, SliceInput, SliceTarget};
use cleanctg::signal::NormalizedSegment;
use cleanctg::tensor::gradcheck::check_params;
use cleanctg::tensor::ModelState;

const SPEC: EncoderSpec = EncoderSpec { d_model: 4, heads: 2, ffn_dim: 6, dropout: 0.0 };

/// Checks about `target` parameter entries per instance.
fn stride_for(state: &ModelState, target: usize) -> usize {
    let total: usize = state.names().map(|n| state.get(n).unwrap().len()).sum();
    (total / target).max(1) | 1
}

fn run_params<F>(seed: u64, mut build_state: impl FnMut(&mut ChaCha8Rng) -> (ModelState, F), instances: usize) -> f64
where
    F: Fn(&mut Graph, &ModelState) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (state, build) = build_state(&mut rng);
        let stride = stride_for(&state, 40);
        worst = worst.max(check_params(&state, stride, build).unwrap());
    }
    worst
}

fn encoder_state(r: &mut ChaCha8Rng) -> ModelState {
    let mut s = ModelState::new();
    nn::init_encoder(&mut s, r, "enc", &SPEC).unwrap();
    // Non-trivial norms and biases.
    let names: Vec<String> = s.names().cloned().collect();
    for n in names {
        for v in s.get_mut(&n).unwrap().data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    s
}

pub fn encoder_layer_inputs() -> f64 {
    let mut w: f64 = 0.0;
    let mut r = ChaCha8Rng::seed_from_u64(30);
    let state = encoder_state(&mut r);
    w = w.max(run(31, |r| {
        let n = r.random_range(1..6);
        vec![rand_t(r, &[n, 4])]
    }, |g, v| {
        nn::encoder_layer(g, &state, "enc", v[0], &SPEC)
    }));
    w
}

pub fn encoder_layer_params() -> f64 {
    let mut w: f64 = 0.0;
    w = w.max(run_params(
        32,
        |r| {
            let state = encoder_state(r);
            let x = rand_t(r, &[5, 4]);
            (state, move |g: &mut Graph, s: &ModelState| {
                let xv = g.constant(x.clone());
                nn::encoder_layer(g, s, "enc", xv, &SPEC)
            })
        },
        INSTANCES,
    ));
    w
}

pub fn cross_attention_block() -> f64 {
    let mut w: f64 = 0.0;
    let mut r = ChaCha8Rng::seed_from_u64(33);
    let mut state = ModelState::new();
    nn::init_attention(&mut state, &mut r, "x", 4).unwrap();
    w = w.max(run(34, |r| {
        let n = r.random_range(1..7);
        vec![rand_t(r, &[3, 4]), rand_t(r, &[n, 4])]
    }, |g, v| {
        Ok(nn::multi_head_attention(g, &state, "x", v[0], v[1], 2)?.0)
    }));
    w
}

fn random_parent(r: &mut ChaCha8Rng) -> NormalizedSegment {
    let base = r.random_range(0.5..0.65);
    let missing: Vec<bool> = (0..600).map(|_| r.random_bool(0.05)).collect();
    let values = missing
        .iter()
        .map(|m| if *m { 0.0 } else { base + r.random_range(-0.05..0.05) })
        .collect();
    NormalizedSegment { values, missing_mask: missing }
}

pub fn detector_forward_params() -> f64 {
    let mut w: f64 = 0.0;
    let cfg = DetectorConfig::tiny();
    w = w.max(run_params(
        35,
        |r| {
            let state = detector::init(&cfg, r.random()).unwrap();
            let seg = random_parent(r);
            let minute = r.random_range(0..10);
            let cfg = cfg.clone();
            (state, move |g: &mut Graph, s: &ModelState| {
                let (_, slices) = detector::forward_parent(g, s, &cfg, &seg, &[minute])?;
                let p = slices[0].probs;
                g.bce_loss(p, &[1.0, 0.0, 0.0, 1.0, 0.0])
            })
        },
        INSTANCES,
    ));
    w
}

pub fn reconstructor_forward_and_loss_params() -> f64 {
    let mut w: f64 = 0.0;
    let cfg = ReconstructorConfig::tiny();
    w = w.max(run_params(
        36,
        |r| {
            let mut state = reconstructor::init(&cfg, r.random()).unwrap();
            // Move the zero-initialised heads off zero.
            for c in ArtefactClass::ALL {
                for v in state.get_mut(&format!("rec.{c}.head.w")).unwrap().data_mut() {
                    *v = r.random_range(-0.5..0.5);
                }
            }
            let seg = random_parent(r);
            let minute = r.random_range(0..10);
            let fused = Tensor::randn(&[60, cfg.detector_dim], 1.0, r);
            let input = SliceInput::new(&seg, minute, fused).unwrap();
            let gates: [bool; 5] = std::array::from_fn(|_| r.random_bool(0.6));
            let masks: [Vec<bool>; 5] = std::array::from_fn(|_| (0..60).map(|_| r.random_bool(0.2)).collect());
            let target = SliceTarget { clean: (0..60).map(|_| r.random_range(0.5..0.65)).collect(), masks };
            let cfg = cfg.clone();
            (state, move |g: &mut Graph, s: &ModelState| {
                let v = reconstructor::forward(g, s, &cfg, &input, &gates, false, &Default::default())?;
                reconstructor::loss(g, &v, &target, 1.0, 1.0)
            })
        },
        INSTANCES,
    ));
    w
}

pub const CHECKS: &[(&str, fn() -> f64)] = &[
    ("matmul", matmul),
    ("add_and_broadcasts", add_and_broadcasts),
    ("mul_and_broadcasts", mul_and_broadcasts),
    ("conv1d", conv1d),
    ("layer_norm", layer_norm),
    ("softmax", softmax),
    ("activations", activations),
    ("reductions_and_reshaping", reductions_and_reshaping),
    ("attention", attention),
    ("losses", losses),
    ("encoder_layer_inputs", encoder_layer_inputs),
    ("encoder_layer_params", encoder_layer_params),
    ("cross_attention_block", cross_attention_block),
    ("detector_forward_params", detector_forward_params),
    ("reconstructor_forward_and_loss_params", reconstructor_forward_and_loss_params),
];
