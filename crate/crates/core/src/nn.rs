//! Transformer building blocks expressed on the autodiff graph.
//!
//! Parameter naming for a pre-norm block rooted at `prefix`:
//! `ln1.{gamma,beta}`, `attn.query.{weight,bias}`, `attn.key.weight`,
//! `attn.value.{weight,bias}`, `attn.out.{weight,bias}`, `ln2.{gamma,beta}`,
//! `mlp.fc1.{weight,bias}`, `mlp.fc2.{weight,bias}`. Linear weights are stored
//! `in × out` and applied as `x · W + b`.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::{AttentionMask, Tensor};

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
pub const MLP_RATIO: usize = 4;

pub fn init_linear<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    std: f64,
    rng: &mut R,
) -> Result<()> {
    params.insert(format!("{prefix}.weight"), trunc_normal(&[fan_in, fan_out], std, rng), true)?;
    if bias {
        params.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]), true)?;
    }
    Ok(())
}

pub fn init_layer_norm<T: Scalar>(params: &mut ModelParams<T>, prefix: &str, dim: usize) -> Result<()> {
    params.insert(format!("{prefix}.gamma"), Tensor::full(&[dim], T::one()), true)?;
    params.insert(format!("{prefix}.beta"), Tensor::zeros(&[dim]), true)
}

/// Registers the parameters of one pre-norm transformer block.
pub fn init_block<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    prefix: &str,
    dim: usize,
    std: f64,
    rng: &mut R,
) -> Result<()> {
    init_layer_norm(params, &format!("{prefix}.ln1"), dim)?;
    init_linear(params, &format!("{prefix}.attn.query"), dim, dim, true, std, rng)?;
    // Keys carry no bias: a key bias shifts every logit of a row equally and
    // cancels in the softmax.
    init_linear(params, &format!("{prefix}.attn.key"), dim, dim, false, std, rng)?;
    init_linear(params, &format!("{prefix}.attn.value"), dim, dim, true, std, rng)?;
    init_linear(params, &format!("{prefix}.attn.out"), dim, dim, true, std, rng)?;
    init_layer_norm(params, &format!("{prefix}.ln2"), dim)?;
    init_linear(params, &format!("{prefix}.mlp.fc1"), dim, MLP_RATIO * dim, true, std, rng)?;
    init_linear(params, &format!("{prefix}.mlp.fc2"), MLP_RATIO * dim, dim, true, std, rng)
}

pub fn linear<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let bias_name = format!("{prefix}.bias");
    let b = if params.contains(&bias_name) {
        Some(g.param(params, &bias_name)?)
    } else {
        None
    };
    g.linear(x, w, b)
}

pub fn layer_norm<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, prefix: &str, x: Var) -> Result<Var> {
    let gamma = g.param(params, &format!("{prefix}.gamma"))?;
    let beta = g.param(params, &format!("{prefix}.beta"))?;
    g.layer_norm(x, gamma, beta, T::of(LN_EPS))
}

/// Multi-head self-attention: per-head scaled dot-product attention with
/// scale `1/√(D/H)`, heads concatenated and passed through the output
/// projection.
pub fn multi_head_self_attention<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    prefix: &str,
    x: Var,
    heads: usize,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let dim = g.value(x).cols();
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::shape("multi_head_self_attention", format!("D={dim} is not divisible by H={heads}")));
    }
    let q = linear(g, params, &format!("{prefix}.query"), x)?;
    let k = linear(g, params, &format!("{prefix}.key"), x)?;
    let v = linear(g, params, &format!("{prefix}.value"), x)?;
    let ctx = g.attention(q, k, v, heads, mask)?;
    linear(g, params, &format!("{prefix}.out"), ctx)
}

/// `fc2(GELU(fc1(x)))` with hidden width `4·D`.
pub fn mlp_block<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, prefix: &str, x: Var) -> Result<Var> {
    let dim = g.value(x).cols();
    let hidden = params.tensor(&format!("{prefix}.fc1.weight"))?.cols();
    if hidden != MLP_RATIO * dim {
        return Err(Error::shape("mlp_block", format!("hidden width {hidden} for D={dim}")));
    }
    let h = linear(g, params, &format!("{prefix}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, params, &format!("{prefix}.fc2"), h)
}

/// Pre-norm residual block: `h' = MSA(LN(h)) + h`, `out = MLP(LN(h')) + h'`.
pub fn transformer_block<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    prefix: &str,
    h: Var,
    heads: usize,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let normed = layer_norm(g, params, &format!("{prefix}.ln1"), h)?;
    let attn = multi_head_self_attention(g, params, &format!("{prefix}.attn"), normed, heads, mask)?;
    let h1 = g.add(attn, h)?;
    let normed = layer_norm(g, params, &format!("{prefix}.ln2"), h1)?;
    let mlp = mlp_block(g, params, &format!("{prefix}.mlp"), normed)?;
    g.add(mlp, h1)
}
