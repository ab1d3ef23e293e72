//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and accumulates exact analytic gradients.
//! Tensors used by the ops are rank 1 or rank 2 (`[rows, cols]`); a
//! rank-1 tensor behaves as a single row.

use super::state::{Gradients, ModelState};
use super::Tensor;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const BCE_CLAMP: f64 = 1e-7;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    Scalar,
    /// rhs is a row vector repeated over rows; holds the column count.
    Row(usize),
    /// rhs is a column vector repeated over columns; holds the column count.
    Col(usize),
}

impl Bcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Row(c) => i % c,
            Bcast::Col(c) => i / c,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Sigmoid,
    Relu,
    Gelu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
        bcast: Bcast,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Unary {
        kind: UnKind,
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
        cin: usize,
        cols: Vec<f64>,
    },
    Mean(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    AvgPoolRows {
        x: Var,
        k: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Bce {
        p: Var,
        target: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// A computation tape. One graph per forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// strided GEMM

#[derive(Clone, Copy)]
struct View {
    off: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn rm(off: usize, row_stride: usize) -> Self {
        View {
            off,
            rs: row_stride,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        View {
            off: self.off,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn last(self, rows: usize, cols: usize) -> usize {
        self.off + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(cv.last(m, n) < c.len(), "gemm: c view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = cv.off + i * cv.rs + j * cv.cs;
                c[idx] *= beta;
            }
        }
        return;
    }
    assert!(av.last(m, k) < a.len(), "gemm: a view out of bounds");
    assert!(bv.last(k, n) < b.len(), "gemm: b view out of bounds");
    // SAFETY: every view was bounds-checked above against its slice, and `c`
    // is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.off),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.off),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place softmax over groups of `len` elements spaced `stride` apart.
fn softmax_groups(data: &mut [f64], rows: usize, cols: usize, axis: usize) {
    let (groups, len, outer_stride, inner_stride) = if axis == 1 {
        (rows, cols, cols, 1)
    } else {
        (cols, rows, 1, cols)
    };
    for g in 0..groups {
        let base = g * outer_stride;
        let mut max = f64::NEG_INFINITY;
        for i in 0..len {
            max = max.max(data[base + i * inner_stride]);
        }
        let mut sum = 0.0;
        for i in 0..len {
            let idx = base + i * inner_stride;
            let e = (data[idx] - max).exp();
            data[idx] = e;
            sum += e;
        }
        for i in 0..len {
            data[base + i * inner_stride] /= sum;
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// A graph in training mode: dropout is active and driven by `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives gradients.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Loads a parameter from `state`; repeated loads return the same node.
    /// Parameters of frozen groups do not receive gradients.
    pub fn param(&mut self, state: &ModelState, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = state.require(name)?.clone();
        let v = self.push(t, Op::Leaf, !state.is_frozen(name));
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Attention probabilities `[heads, Lq, Lk]` of an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Gradients of every trainable parameter touched by this graph.
    pub fn param_grads(&self) -> Gradients {
        let mut out = Gradients::new();
        for name in &self.param_order {
            let v = self.params[name];
            let node = &self.nodes[v.0];
            if !node.needs_grad {
                continue;
            }
            let g = node
                .grad
                .clone()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            out.insert(name.clone(), g);
        }
        out
    }

    // -----------------------------------------------------------------------
    // forward ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul needs matrices, got {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            ta.data(),
            View::rm(0, k),
            tb.data(),
            View::rm(0, n),
            0.0,
            &mut out,
            View::rm(0, n),
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        if t.rank() != 2 {
            return Err(Error::Shape(format!("transpose of {:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), ng))
    }

    fn bcast_of(&self, a: Var, b: Var) -> Result<Bcast> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() == tb.shape() {
            return Ok(Bcast::Same);
        }
        if tb.len() == 1 {
            return Ok(Bcast::Scalar);
        }
        let (r, c) = ta.dims2();
        let sb = tb.shape();
        let is_row = (sb.len() == 1 && sb[0] == c) || (sb.len() == 2 && sb[0] == 1 && sb[1] == c);
        if is_row && ta.rank() >= 1 {
            return Ok(Bcast::Row(c));
        }
        if ta.rank() == 2 && sb.len() == 2 && sb[0] == r && sb[1] == 1 {
            return Ok(Bcast::Col(c));
        }
        Err(Error::Shape(format!(
            "cannot broadcast {:?} onto {:?}",
            tb.shape(),
            ta.shape()
        )))
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let bcast = self.bcast_of(a, b)?;
        let (ta, tb) = (self.val(a), self.val(b));
        let bd = tb.data();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[bcast.index(i)];
                match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                }
            })
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Binary { kind, a, b, bcast }, ng))
    }

    /// Elementwise sum; `b` may be a scalar, a row vector or a column vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let t = self.val(x);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v * s).collect(),
        };
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.val(x);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v + c).collect(),
        };
        let ng = self.ng(x);
        self.push(out, Op::AddScalar(x), ng)
    }

    fn unary(&mut self, kind: UnKind, x: Var) -> Var {
        let t = self.val(x);
        let f: fn(f64) -> f64 = match kind {
            UnKind::Sigmoid => sigmoid,
            UnKind::Relu => |v: f64| v.max(0.0),
            UnKind::Gelu => gelu,
        };
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f(v)).collect(),
        };
        let ng = self.ng(x);
        self.push(out, Op::Unary { kind, x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnKind::Relu, x)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(UnKind::Gelu, x)
    }

    /// Softmax along `axis` (0 or 1) with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.val(x);
        let (r, c) = t.dims2();
        let axis = if t.rank() == 1 { 1 } else { axis };
        if axis > 1 || t.rank() > 2 {
            return Err(Error::Shape(format!(
                "softmax axis {axis} on {:?}",
                t.shape()
            )));
        }
        let mut out = t.data().to_vec();
        softmax_groups(&mut out, r, c, axis);
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Softmax { x, axis }, ng))
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let t = self.val(x);
        let (r, c) = t.dims2();
        if self.val(gamma).len() != c || self.val(beta).len() != c {
            return Err(Error::Shape(format!(
                "layer_norm affine params must have {c} entries"
            )));
        }
        let g = self.val(gamma).data();
        let b = self.val(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Stride-1 convolution with "same" zero padding.
    ///
    /// `x` is `[L, cin]` (time-major), `w` is `[k, cin, cout]`, `b` is `[cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let tx = self.val(x);
        let tw = self.val(w);
        if tx.rank() != 2 || tw.rank() != 3 || tw.shape()[1] != tx.shape()[1] {
            return Err(Error::Shape(format!(
                "conv1d input {:?} with kernel {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        let (l, cin) = (tx.shape()[0], tx.shape()[1]);
        let (k, cout) = (tw.shape()[0], tw.shape()[2]);
        if let Some(b) = b {
            if self.val(b).len() != cout {
                return Err(Error::Shape("conv1d bias length".into()));
            }
        }
        let pad = (k - 1) / 2;
        let kc = k * cin;
        let mut cols = vec![0.0; l * kc];
        let xd = tx.data();
        for t in 0..l {
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src >= l as isize {
                    continue;
                }
                let src = src as usize;
                cols[t * kc + j * cin..t * kc + (j + 1) * cin]
                    .copy_from_slice(&xd[src * cin..(src + 1) * cin]);
            }
        }
        let mut out = vec![0.0; l * cout];
        if let Some(b) = b {
            let bd = self.val(b).data();
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bd);
            }
        }
        gemm(
            l,
            kc,
            cout,
            1.0,
            &cols,
            View::rm(0, kc),
            tw.data(),
            View::rm(0, cout),
            1.0,
            &mut out,
            View::rm(0, cout),
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::new(vec![l, cout], out)?;
        Ok(self.push(
            t,
            Op::Conv1d {
                x,
                w,
                b,
                k,
                cin,
                cols,
            },
            ng,
        ))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.val(x);
        let m = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(m), Op::Mean(x), ng)
    }

    /// Sum over `axis` of a matrix, keeping the reduced axis with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.val(x);
        if t.rank() != 2 || axis > 1 {
            return Err(Error::Shape(format!("sum_axis {axis} on {:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let d = t.data();
        let out = if axis == 1 {
            Tensor::new(
                vec![r, 1],
                (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect(),
            )?
        } else {
            let mut s = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    s[j] += d[i * c + j];
                }
            }
            Tensor::new(vec![1, c], s)?
        };
        let ng = self.ng(x);
        Ok(self.push(out, Op::SumAxis { x, axis }, ng))
    }

    /// Concatenation of matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of nothing".into()));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|p| self.val(*p).dims2()).collect();
        let out = match axis {
            0 => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(Error::Shape(format!("concat rows: column counts {dims:?}")));
                }
                let mut data = Vec::new();
                for p in parts {
                    data.extend_from_slice(self.val(*p).data());
                }
                let r = dims.iter().map(|d| d.0).sum();
                Tensor::new(vec![r, c], data)?
            }
            1 => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(Error::Shape(format!("concat cols: row counts {dims:?}")));
                }
                let c: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    for (p, d) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&self.val(*p).data()[i * d.1..(i + 1) * d.1]);
                    }
                }
                Tensor::new(vec![r, c], data)?
            }
            _ => return Err(Error::Shape(format!("concat axis {axis}"))),
        };
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.val(x);
        let (r, c) = t.dims2();
        let d = t.data();
        let out = match axis {
            0 if start + len <= r => {
                Tensor::new(vec![len, c], d[start * c..(start + len) * c].to_vec())?
            }
            1 if start + len <= c => {
                let mut data = Vec::with_capacity(r * len);
                for i in 0..r {
                    data.extend_from_slice(&d[i * c + start..i * c + start + len]);
                }
                Tensor::new(vec![r, len], data)?
            }
            _ => {
                return Err(Error::Shape(format!(
                    "slice axis {axis} [{start}, {}) of {:?}",
                    start + len,
                    t.shape()
                )))
            }
        };
        let ng = self.ng(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, ng))
    }

    /// Mean over non-overlapping blocks of `k` rows.
    pub fn avg_pool_rows(&mut self, x: Var, k: usize) -> Result<Var> {
        let t = self.val(x);
        let (r, c) = t.dims2();
        if k == 0 || r % k != 0 {
            return Err(Error::Shape(format!("avg_pool_rows: {r} rows by {k}")));
        }
        let ro = r / k;
        let mut out = vec![0.0; ro * c];
        for i in 0..r {
            for j in 0..c {
                out[(i / k) * c + j] += t.data()[i * c + j] / k as f64;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(vec![ro, c], out)?, Op::AvgPoolRows { x, k }, ng))
    }

    /// Multi-head scaled dot-product attention on already-projected inputs.
    ///
    /// `q` is `[Lq, d]`, `k` is `[Lk, d]`, `v` is `[Lk, dv]`; head `h` uses
    /// columns `h*d/heads..(h+1)*d/heads` and logits are divided by
    /// `sqrt(d/heads)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.val(q), self.val(k), self.val(v));
        if tq.rank() != 2 || tk.rank() != 2 || tv.rank() != 2 {
            return Err(Error::Shape("attention needs matrices".into()));
        }
        let (lq, d) = (tq.shape()[0], tq.shape()[1]);
        let (lk, dk) = (tk.shape()[0], tk.shape()[1]);
        let (lv, dv) = (tv.shape()[0], tv.shape()[1]);
        if d != dk || lk != lv {
            return Err(Error::Shape(format!(
                "attention q {:?} k {:?} v {:?}",
                tq.shape(),
                tk.shape(),
                tv.shape()
            )));
        }
        if heads == 0 || d % heads != 0 || dv % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide model width {d}"
            )));
        }
        let dh = d / heads;
        let dvh = dv / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * dv];
        for h in 0..heads {
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            gemm(
                lq,
                dh,
                lk,
                scale,
                tq.data(),
                View::rm(h * dh, d),
                tk.data(),
                View::rm(h * dh, d).t(),
                0.0,
                p,
                View::rm(0, lk),
            );
            softmax_groups(p, lq, lk, 1);
            gemm(
                lq,
                lk,
                dvh,
                1.0,
                p,
                View::rm(0, lk),
                tv.data(),
                View::rm(h * dvh, dv),
                0.0,
                &mut out,
                View::rm(h * dvh, dv),
            );
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::new(vec![lq, dv], out)?,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        ))
    }

    /// Mean binary cross-entropy of probabilities `p` against `target`,
    /// with `p` clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_loss(&mut self, p: Var, target: &[f64]) -> Result<Var> {
        let tp = self.val(p);
        if tp.len() != target.len() || target.is_empty() {
            return Err(Error::Shape(format!(
                "bce: {} predictions vs {} targets",
                tp.len(),
                target.len()
            )));
        }
        let n = target.len() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln())
            })
            .sum::<f64>()
            / n;
        let ng = self.ng(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    /// Mean squared error of `pred` against `target`.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let tp = self.val(pred);
        if tp.len() != target.len() || target.is_empty() {
            return Err(Error::Shape(format!(
                "mse: {} predictions vs {} targets",
                tp.len(),
                target.len()
            )));
        }
        let loss = tp
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / target.len() as f64;
        let ng = self.ng(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            ng,
        ))
    }

    /// Inverted dropout; identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let n = self.val(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let t = self.val(x);
        let out = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        };
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.val(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    // -----------------------------------------------------------------------
    // backward

    /// Back-propagates from a scalar `loss`, replacing any previous gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.val(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.val(loss).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dg) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.needs_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        g,
                        View::rm(0, n),
                        tb.data(),
                        View::rm(0, n).t(),
                        0.0,
                        &mut da,
                        View::rm(0, k),
                    );
                    out.push((*a, da));
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        ta.data(),
                        View::rm(0, k).t(),
                        g,
                        View::rm(0, n),
                        0.0,
                        &mut db,
                        View::rm(0, n),
                    );
                    out.push((*b, db));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.val(*x).shape()[0], self.val(*x).shape()[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                out.push((*x, dx));
            }
            Op::Binary { kind, a, b, bcast } => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                if self.ng(*a) {
                    let da = match kind {
                        BinKind::Add | BinKind::Sub => g.to_vec(),
                        BinKind::Mul => g
                            .iter()
                            .enumerate()
                            .map(|(i, gi)| gi * tb.data()[bcast.index(i)])
                            .collect(),
                    };
                    out.push((*a, da));
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; tb.len()];
                    for (i, gi) in g.iter().enumerate() {
                        let j = bcast.index(i);
                        db[j] += match kind {
                            BinKind::Add => *gi,
                            BinKind::Sub => -gi,
                            BinKind::Mul => gi * ta.data()[i],
                        };
                    }
                    out.push((*b, db));
                }
            }
            Op::Scale(x, s) => out.push((*x, g.iter().map(|v| v * s).collect())),
            Op::AddScalar(x) | Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Unary { kind, x } => {
                let xs = self.val(*x).data();
                let ys = node.value.data();
                let dx = match kind {
                    UnKind::Sigmoid => g
                        .iter()
                        .zip(ys)
                        .map(|(gi, y)| gi * y * (1.0 - y))
                        .collect(),
                    UnKind::Relu => g
                        .iter()
                        .zip(xs)
                        .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                        .collect(),
                    UnKind::Gelu => g
                        .iter()
                        .zip(xs)
                        .map(|(gi, x)| gi * gelu_grad(*x))
                        .collect(),
                };
                out.push((*x, dx));
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (r, c) = node.value.dims2();
                let mut dx = vec![0.0; y.len()];
                let (groups, len, os, is) = if *axis == 1 {
                    (r, c, c, 1)
                } else {
                    (c, r, 1, c)
                };
                for gi in 0..groups {
                    let base = gi * os;
                    let dot: f64 = (0..len)
                        .map(|t| g[base + t * is] * y[base + t * is])
                        .sum();
                    for t in 0..len {
                        let idx = base + t * is;
                        dx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
                out.push((*x, dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = node.value.dims2();
                let gm = self.val(*gamma).data();
                if self.ng(*x) {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let dh = g[i * c + j] * gm[j];
                            s1 += dh;
                            s2 += dh * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let dh = g[i * c + j] * gm[j];
                            dx[i * c + j] = rstd[i] / c as f64
                                * (c as f64 * dh - s1 - xhat[i * c + j] * s2);
                        }
                    }
                    out.push((*x, dx));
                }
                if self.ng(*gamma) {
                    let mut dg = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                    out.push((*gamma, dg));
                }
                if self.ng(*beta) {
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g[i * c + j];
                        }
                    }
                    out.push((*beta, db));
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                k,
                cin,
                cols,
            } => {
                let (l, cout) = (node.value.shape()[0], node.value.shape()[1]);
                let kc = k * cin;
                if self.ng(*w) {
                    let mut dw = vec![0.0; kc * cout];
                    gemm(
                        kc,
                        l,
                        cout,
                        1.0,
                        cols,
                        View::rm(0, kc).t(),
                        g,
                        View::rm(0, cout),
                        0.0,
                        &mut dw,
                        View::rm(0, cout),
                    );
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        let mut db = vec![0.0; cout];
                        for row in g.chunks(cout) {
                            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                        out.push((*b, db));
                    }
                }
                if self.ng(*x) {
                    let mut dcols = vec![0.0; l * kc];
                    gemm(
                        l,
                        cout,
                        kc,
                        1.0,
                        g,
                        View::rm(0, cout),
                        self.val(*w).data(),
                        View::rm(0, cout).t(),
                        0.0,
                        &mut dcols,
                        View::rm(0, kc),
                    );
                    let pad = (k - 1) / 2;
                    let mut dx = vec![0.0; l * cin];
                    for t in 0..l {
                        for j in 0..*k {
                            let src = t as isize + j as isize - pad as isize;
                            if src < 0 || src >= l as isize {
                                continue;
                            }
                            let src = src as usize;
                            for ci in 0..*cin {
                                dx[src * cin + ci] += dcols[t * kc + j * cin + ci];
                            }
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::Mean(x) => {
                let n = self.val(*x).len();
                out.push((*x, vec![g[0] / n as f64; n]));
            }
            Op::SumAxis { x, axis } => {
                let (r, c) = self.val(*x).dims2();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = if *axis == 1 { g[i] } else { g[j] };
                    }
                }
                out.push((*x, dx));
            }
            Op::Concat { parts, axis } => {
                let (_, c) = node.value.dims2();
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.val(*p).dims2();
                    if self.ng(*p) {
                        let dp = if *axis == 0 {
                            g[offset * c..(offset + pr) * c].to_vec()
                        } else {
                            let mut dp = Vec::with_capacity(pr * pc);
                            for i in 0..pr {
                                dp.extend_from_slice(&g[i * c + offset..i * c + offset + pc]);
                            }
                            dp
                        };
                        out.push((*p, dp));
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { x, axis, start } => {
                let (r, c) = self.val(*x).dims2();
                let (_, oc) = node.value.dims2();
                let mut dx = vec![0.0; r * c];
                if *axis == 0 {
                    dx[start * c..start * c + g.len()].copy_from_slice(g);
                } else {
                    for i in 0..r {
                        dx[i * c + start..i * c + start + oc].copy_from_slice(&g[i * oc..(i + 1) * oc]);
                    }
                }
                out.push((*x, dx));
            }
            Op::AvgPoolRows { x, k } => {
                let (r, c) = self.val(*x).dims2();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[(i / k) * c + j] / *k as f64;
                    }
                }
                out.push((*x, dx));
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (tq, tk, tv) = (self.val(*q), self.val(*k), self.val(*v));
                let (lq, d) = (tq.shape()[0], tq.shape()[1]);
                let lk = tk.shape()[0];
                let dv = tv.shape()[1];
                let dh = d / heads;
                let dvh = dv / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = vec![0.0; lq * d];
                let mut dk = vec![0.0; lk * d];
                let mut dvv = vec![0.0; lk * dv];
                let mut dp = vec![0.0; lq * lk];
                for h in 0..*heads {
                    let p = &probs[h * lq * lk..(h + 1) * lq * lk];
                    // dV_h = P^T dO_h
                    gemm(
                        lk,
                        lq,
                        dvh,
                        1.0,
                        p,
                        View::rm(0, lk).t(),
                        g,
                        View::rm(h * dvh, dv),
                        0.0,
                        &mut dvv,
                        View::rm(h * dvh, dv),
                    );
                    // dP = dO_h V_h^T
                    gemm(
                        lq,
                        dvh,
                        lk,
                        1.0,
                        g,
                        View::rm(h * dvh, dv),
                        tv.data(),
                        View::rm(h * dvh, dv).t(),
                        0.0,
                        &mut dp,
                        View::rm(0, lk),
                    );
                    // dS = P * (dP - rowsum(dP * P)) * scale
                    for i in 0..lq {
                        let row = i * lk;
                        let dot: f64 = (0..lk).map(|j| dp[row + j] * p[row + j]).sum();
                        for j in 0..lk {
                            dp[row + j] = p[row + j] * (dp[row + j] - dot) * scale;
                        }
                    }
                    // dQ_h = dS K_h ; dK_h = dS^T Q_h
                    gemm(
                        lq,
                        lk,
                        dh,
                        1.0,
                        &dp,
                        View::rm(0, lk),
                        tk.data(),
                        View::rm(h * dh, d),
                        0.0,
                        &mut dq,
                        View::rm(h * dh, d),
                    );
                    gemm(
                        lk,
                        lq,
                        dh,
                        1.0,
                        &dp,
                        View::rm(0, lk).t(),
                        tq.data(),
                        View::rm(h * dh, d),
                        0.0,
                        &mut dk,
                        View::rm(h * dh, d),
                    );
                }
                out.push((*q, dq));
                out.push((*k, dk));
                out.push((*v, dvv));
            }
            Op::Bce { p, target } => {
                let n = target.len() as f64;
                let dp = self
                    .val(*p)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                            0.0
                        } else {
                            g[0] * (p - t) / (p * (1.0 - p)) / n
                        }
                    })
                    .collect();
                out.push((*p, dp));
            }
            Op::Mse { pred, target } => {
                let n = target.len() as f64;
                let dp = self
                    .val(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| g[0] * 2.0 * (p - t) / n)
                    .collect();
                out.push((*pred, dp));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, g.iter().zip(mask).map(|(a, m)| a * m).collect()));
            }
        }
        out
    }
}
