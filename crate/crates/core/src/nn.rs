//! Parameterised building blocks on top of the autodiff graph: linear
//! layers, layer norm, multi-head attention and pre-norm encoder layers.

use crate::error::Result;
use crate::tensor::{Graph, ModelState, Tensor, Var};
use rand::Rng;

/// Glorot-uniform weight `[din, dout]` plus zero bias.
pub fn init_linear<R: Rng + ?Sized>(
    state: &mut ModelState,
    rng: &mut R,
    name: &str,
    din: usize,
    dout: usize,
) -> Result<()> {
    let bound = (6.0 / (din + dout) as f64).sqrt();
    state.insert(format!("{name}.w"), Tensor::uniform(&[din, dout], bound, rng))?;
    state.insert(format!("{name}.b"), Tensor::zeros(&[dout]))?;
    Ok(())
}

pub fn init_layer_norm(state: &mut ModelState, name: &str, d: usize) -> Result<()> {
    state.insert(format!("{name}.gamma"), Tensor::full(&[d], 1.0))?;
    state.insert(format!("{name}.beta"), Tensor::zeros(&[d]))?;
    Ok(())
}

pub fn init_attention<R: Rng + ?Sized>(
    state: &mut ModelState,
    rng: &mut R,
    name: &str,
    d: usize,
) -> Result<()> {
    for proj in ["q", "k", "v", "o"] {
        init_linear(state, rng, &format!("{name}.{proj}"), d, d)?;
    }
    Ok(())
}

pub fn init_feed_forward<R: Rng + ?Sized>(
    state: &mut ModelState,
    rng: &mut R,
    name: &str,
    d: usize,
    hidden: usize,
) -> Result<()> {
    init_linear(state, rng, &format!("{name}.fc1"), d, hidden)?;
    init_linear(state, rng, &format!("{name}.fc2"), hidden, d)
}

/// Shape of a pre-norm transformer encoder layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderSpec {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

pub fn init_encoder<R: Rng + ?Sized>(
    state: &mut ModelState,
    rng: &mut R,
    name: &str,
    spec: &EncoderSpec,
) -> Result<()> {
    init_layer_norm(state, &format!("{name}.ln1"), spec.d_model)?;
    init_attention(state, rng, &format!("{name}.attn"), spec.d_model)?;
    init_layer_norm(state, &format!("{name}.ln2"), spec.d_model)?;
    init_feed_forward(state, rng, &format!("{name}.ffn"), spec.d_model, spec.ffn_dim)
}

pub fn linear(g: &mut Graph, state: &ModelState, name: &str, x: Var) -> Result<Var> {
    let w = g.param(state, &format!("{name}.w"))?;
    let b = g.param(state, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

pub fn layer_norm(g: &mut Graph, state: &ModelState, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(state, &format!("{name}.gamma"))?;
    let beta = g.param(state, &format!("{name}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

/// Multi-head attention with learned projections. Returns the projected
/// output and the raw attention node (whose probabilities are inspectable
/// through [`Graph::attention_probs`]).
pub fn multi_head_attention(
    g: &mut Graph,
    state: &ModelState,
    name: &str,
    query: Var,
    context: Var,
    heads: usize,
) -> Result<(Var, Var)> {
    let q = linear(g, state, &format!("{name}.q"), query)?;
    let k = linear(g, state, &format!("{name}.k"), context)?;
    let v = linear(g, state, &format!("{name}.v"), context)?;
    let att = g.attention(q, k, v, heads)?;
    let out = linear(g, state, &format!("{name}.o"), att)?;
    Ok((out, att))
}

pub fn feed_forward(
    g: &mut Graph,
    state: &ModelState,
    name: &str,
    x: Var,
    dropout: f64,
) -> Result<Var> {
    let h = linear(g, state, &format!("{name}.fc1"), x)?;
    let h = g.gelu(h);
    let h = g.dropout(h, dropout);
    linear(g, state, &format!("{name}.fc2"), h)
}

/// `x + MHA(LN(x))` then `x + FFN(LN(x))`.
pub fn encoder_layer(
    g: &mut Graph,
    state: &ModelState,
    name: &str,
    x: Var,
    spec: &EncoderSpec,
) -> Result<Var> {
    let h = layer_norm(g, state, &format!("{name}.ln1"), x)?;
    let (a, _) = multi_head_attention(g, state, &format!("{name}.attn"), h, h, spec.heads)?;
    let a = g.dropout(a, spec.dropout);
    let x = g.add(x, a)?;
    let h = layer_norm(g, state, &format!("{name}.ln2"), x)?;
    let f = feed_forward(g, state, &format!("{name}.ffn"), h, spec.dropout)?;
    let f = g.dropout(f, spec.dropout);
    g.add(x, f)
}
