//! Prefix-masked caption decoder.
//!
//! The projected audio-visual tokens and the embedded text tokens are
//! concatenated into one sequence and run through pre-norm blocks under the
//! prefix mask: audio-visual tokens attend to each other only, text tokens
//! attend to every audio-visual token and causally to earlier real text.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::encoder::AvFeature;
use crate::error::{Error, Result};
use crate::kernels;
use crate::nn::{self, LN_EPS};
use crate::params::{trunc_normal, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::AttentionMask;

pub const PROJECTION: &str = "projection";
pub const TOKEN_EMB: &str = "decoder.token_emb";
pub const TEXT_POS: &str = "decoder.pos";
pub const LN_OUT: &str = "decoder.ln_out";
pub const HEAD: &str = "head";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    /// Filled in from the vocabulary at training time when zero.
    #[serde(default)]
    pub vocab_size: usize,
    pub max_positions: usize,
    #[serde(default)]
    pub tie_output_embedding: bool,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "decoder dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!("vocab_size {} < 4", self.vocab_size)));
        }
        if self.max_positions == 0 {
            return Err(Error::Config("decoder max_positions must be positive".into()));
        }
        Ok(())
    }
}

pub fn init_decoder_params<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    cfg: &DecoderConfig,
    encoder_dim: usize,
    std: f64,
    rng: &mut R,
) -> Result<()> {
    nn::init_linear(params, PROJECTION, encoder_dim, cfg.dim, true, std, rng)?;
    params.insert(TOKEN_EMB, trunc_normal(&[cfg.vocab_size, cfg.dim], std, rng), true)?;
    params.insert(TEXT_POS, trunc_normal(&[cfg.max_positions, cfg.dim], std, rng), true)?;
    for l in 0..cfg.layers {
        nn::init_block(params, &layer_prefix(l), cfg.dim, std, rng)?;
    }
    nn::init_layer_norm(params, LN_OUT, cfg.dim)?;
    if !cfg.tie_output_embedding {
        nn::init_linear(params, HEAD, cfg.dim, cfg.vocab_size, true, std, rng)?;
    }
    Ok(())
}

fn layer_prefix(l: usize) -> String {
    format!("decoder.layers.{l}")
}

/// `h_{av→t} = z_av · W_t + b_t`, token by token.
pub fn project_av<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, z: Var) -> Result<Var> {
    nn::linear(g, params, PROJECTION, z)
}

/// Prefix-LM mask over `n_av` audio-visual tokens followed by `pad_mask.len()`
/// text positions.
pub fn build_attention_mask(n_av: usize, pad_mask: &[bool]) -> AttentionMask {
    let size = n_av + pad_mask.len();
    AttentionMask::from_fn(size, n_av, |i, j| {
        if j < n_av {
            return true;
        }
        if i < n_av {
            return false;
        }
        let (row, col) = (i - n_av, j - n_av);
        col <= row && pad_mask[col]
    })
}

/// Token embeddings plus text-segment positional embeddings (0-based).
pub fn text_embed<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, ids: &[usize]) -> Result<Var> {
    let table = g.param(params, TOKEN_EMB)?;
    let pos = g.param(params, TEXT_POS)?;
    if ids.len() > g.value(pos).rows() {
        return Err(Error::InvalidInput(format!(
            "text of {} tokens exceeds {} decoder positions",
            ids.len(),
            g.value(pos).rows()
        )));
    }
    let tok = g.embedding(table, ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let p = g.embedding(pos, &positions)?;
    g.add(tok, p)
}

/// Masked decoder stack over `concat(h_av, h_t)` followed by a final layer norm.
pub fn decode<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    cfg: &DecoderConfig,
    h_av: Option<Var>,
    h_t: Var,
    mask: &AttentionMask,
) -> Result<Var> {
    let mut x = match h_av {
        Some(h_av) => g.concat_rows(&[h_av, h_t])?,
        None => h_t,
    };
    if g.value(x).cols() != cfg.dim {
        return Err(Error::shape("decode", format!("width {} vs D={}", g.value(x).cols(), cfg.dim)));
    }
    for l in 0..cfg.layers {
        x = nn::transformer_block(g, params, &layer_prefix(l), x, cfg.heads, Some(mask))?;
    }
    nn::layer_norm(g, params, LN_OUT, x)
}

/// Vocabulary logits for the text rows `n_av..` of the decoder output.
pub fn text_logits<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    cfg: &DecoderConfig,
    z_t: Var,
    n_av: usize,
) -> Result<Var> {
    let rows = g.value(z_t).rows();
    if n_av >= rows {
        return Err(Error::shape("text_logits", format!("n_av={n_av} leaves no text rows of {rows}")));
    }
    let text = g.slice_rows(z_t, n_av, rows)?;
    if cfg.tie_output_embedding {
        let table = g.param(params, TOKEN_EMB)?;
        g.matmul_bt(text, table)
    } else {
        nn::linear(g, params, HEAD, text)
    }
}

struct BlockWeights<'a, T> {
    ln1: (&'a [T], &'a [T]),
    query: (&'a [T], &'a [T]),
    key: &'a [T],
    value: (&'a [T], &'a [T]),
    out: (&'a [T], &'a [T]),
    ln2: (&'a [T], &'a [T]),
    fc1: (&'a [T], &'a [T]),
    fc2: (&'a [T], &'a [T]),
}

impl<'a, T: Scalar> BlockWeights<'a, T> {
    fn resolve(params: &'a ModelParams<T>, prefix: &str) -> Result<Self> {
        let t = |name: &str| -> Result<&'a [T]> { Ok(params.tensor(&format!("{prefix}.{name}"))?.data()) };
        Ok(Self {
            ln1: (t("ln1.gamma")?, t("ln1.beta")?),
            query: (t("attn.query.weight")?, t("attn.query.bias")?),
            key: t("attn.key.weight")?,
            value: (t("attn.value.weight")?, t("attn.value.bias")?),
            out: (t("attn.out.weight")?, t("attn.out.bias")?),
            ln2: (t("ln2.gamma")?, t("ln2.beta")?),
            fc1: (t("mlp.fc1.weight")?, t("mlp.fc1.bias")?),
            fc2: (t("mlp.fc2.weight")?, t("mlp.fc2.bias")?),
        })
    }
}

/// Keys and values of one decoder layer for a run of positions.
#[derive(Clone, Debug, Default)]
struct LayerKv<T> {
    keys: Vec<T>,
    values: Vec<T>,
}

/// Text-side key/value cache of one hypothesis.
#[derive(Clone, Debug)]
pub struct DecoderState<T> {
    layers: Vec<LayerKv<T>>,
    position: usize,
}

impl<T> DecoderState<T> {
    /// Number of text tokens consumed so far.
    pub fn position(&self) -> usize {
        self.position
    }
}

/// Step-by-step decoder that caches per-layer keys and values.
///
/// Audio-visual rows never attend to text, so their keys and values are
/// computed once and shared by every hypothesis; each text step only
/// processes the new row against the cache.
pub struct IncrementalDecoder<'a, T> {
    cfg: &'a DecoderConfig,
    blocks: Vec<BlockWeights<'a, T>>,
    token_emb: &'a [T],
    text_pos: &'a [T],
    ln_out: (&'a [T], &'a [T]),
    head: Option<(&'a [T], &'a [T])>,
    av: Rc<Vec<LayerKv<T>>>,
    n_av: usize,
}

impl<'a, T: Scalar> IncrementalDecoder<'a, T> {
    pub fn new(params: &'a ModelParams<T>, cfg: &'a DecoderConfig, av: &AvFeature<T>) -> Result<Self> {
        let blocks = (0..cfg.layers)
            .map(|l| BlockWeights::resolve(params, &layer_prefix(l)))
            .collect::<Result<Vec<_>>>()?;
        let head = if cfg.tie_output_embedding {
            None
        } else {
            Some((params.tensor(&format!("{HEAD}.weight"))?.data(), params.tensor(&format!("{HEAD}.bias"))?.data()))
        };
        let mut dec = Self {
            cfg,
            blocks,
            token_emb: params.tensor(TOKEN_EMB)?.data(),
            text_pos: params.tensor(TEXT_POS)?.data(),
            ln_out: (
                params.tensor(&format!("{LN_OUT}.gamma"))?.data(),
                params.tensor(&format!("{LN_OUT}.beta"))?.data(),
            ),
            head,
            av: Rc::new(Vec::new()),
            n_av: av.len(),
        };
        let enc_dim = av.tokens.cols();
        let proj_w = params.tensor(&format!("{PROJECTION}.weight"))?;
        if proj_w.rows() != enc_dim {
            return Err(Error::shape("project_av", format!("encoder width {enc_dim} vs W_t rows {}", proj_w.rows())));
        }
        let proj_b = params.tensor(&format!("{PROJECTION}.bias"))?.data();
        let x = kernels::linear(av.tokens.data(), proj_w.data(), Some(proj_b), dec.n_av, enc_dim, cfg.dim);
        dec.av = Rc::new(dec.prime(x)?);
        Ok(dec)
    }

    pub fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    pub fn max_positions(&self) -> usize {
        self.cfg.max_positions
    }

    /// Runs the audio-visual rows through every layer, keeping keys/values.
    fn prime(&self, mut x: Vec<T>) -> Result<Vec<LayerKv<T>>> {
        let (n, d) = (self.n_av, self.cfg.dim);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            if n == 0 {
                caches.push(LayerKv::default());
                continue;
            }
            let eps = T::of(LN_EPS);
            let (xn, _, _) = kernels::layer_norm(&x, b.ln1.0, b.ln1.1, eps);
            let q = kernels::linear(&xn, b.query.0, Some(b.query.1), n, d, d);
            let k = kernels::linear(&xn, b.key, None, n, d, d);
            let v = kernels::linear(&xn, b.value.0, Some(b.value.1), n, d, d);
            let (ctx, _) = kernels::attention(&q, &k, &v, n, n, d, self.cfg.heads, None)?;
            residual_tail(b, &mut x, &ctx, n, d);
            caches.push(LayerKv { keys: k, values: v });
        }
        Ok(caches)
    }

    pub fn start(&self) -> DecoderState<T> {
        DecoderState {
            layers: vec![LayerKv::default(); self.blocks.len()],
            position: 0,
        }
    }

    /// Feeds `token` at the next text position and returns the vocabulary
    /// logits for the following token.
    pub fn step(&self, state: &mut DecoderState<T>, token: usize) -> Result<Vec<T>> {
        let d = self.cfg.dim;
        if token >= self.cfg.vocab_size {
            return Err(Error::UnknownToken(token));
        }
        if state.position >= self.cfg.max_positions {
            return Err(Error::InvalidInput(format!(
                "decoder has only {} text positions",
                self.cfg.max_positions
            )));
        }
        let p = state.position;
        let mut x: Vec<T> = self.token_emb[token * d..(token + 1) * d]
            .iter()
            .zip(&self.text_pos[p * d..(p + 1) * d])
            .map(|(&a, &b)| a + b)
            .collect();
        let eps = T::of(LN_EPS);
        for (l, b) in self.blocks.iter().enumerate() {
            let (xn, _, _) = kernels::layer_norm(&x, b.ln1.0, b.ln1.1, eps);
            let q = kernels::linear(&xn, b.query.0, Some(b.query.1), 1, d, d);
            let k = kernels::linear(&xn, b.key, None, 1, d, d);
            let v = kernels::linear(&xn, b.value.0, Some(b.value.1), 1, d, d);
            let cache = &mut state.layers[l];
            cache.keys.extend_from_slice(&k);
            cache.values.extend_from_slice(&v);
            let av = &self.av[l];
            let keys: Vec<T> = av.keys.iter().chain(&cache.keys).copied().collect();
            let values: Vec<T> = av.values.iter().chain(&cache.values).copied().collect();
            let n_k = keys.len() / d;
            let (ctx, _) = kernels::attention(&q, &keys, &values, 1, n_k, d, self.cfg.heads, None)?;
            residual_tail(b, &mut x, &ctx, 1, d);
        }
        state.position += 1;
        let (z, _, _) = kernels::layer_norm(&x, self.ln_out.0, self.ln_out.1, eps);
        let v = self.cfg.vocab_size;
        let logits = match self.head {
            Some((w, bias)) => kernels::linear(&z, w, Some(bias), 1, d, v),
            None => kernels::matmul_bt(&z, self.token_emb, 1, d, v),
        };
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "decoder_step" });
        }
        Ok(logits)
    }
}

/// `x += ctx·W_o + b_o; x += MLP(LN2(x))`
fn residual_tail<T: Scalar>(b: &BlockWeights<'_, T>, x: &mut [T], ctx: &[T], n: usize, d: usize) {
    let attn = kernels::linear(ctx, b.out.0, Some(b.out.1), n, d, d);
    x.iter_mut().zip(&attn).for_each(|(a, &v)| *a += v);
    let (xn, _, _) = kernels::layer_norm(x, b.ln2.0, b.ln2.1, T::of(LN_EPS));
    let hidden = b.fc1.1.len();
    let mut h = kernels::linear(&xn, b.fc1.0, Some(b.fc1.1), n, d, hidden);
    h.iter_mut().for_each(|v| *v = kernels::gelu(*v));
    let mlp = kernels::linear(&h, b.fc2.0, Some(b.fc2.1), n, hidden, d);
    x.iter_mut().zip(&mlp).for_each(|(a, &v)| *a += v);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct enumeration of the prefix-LM rule.
    fn oracle(n_av: usize, pad: &[bool]) -> Vec<Vec<u8>> {
        let n = n_av + pad.len();
        let mut m = vec![vec![0u8; n]; n];
        for i in 0..n {
            for j in 0..n {
                let av_i = i < n_av;
                let av_j = j < n_av;
                let v = if av_i {
                    av_j
                } else if av_j {
                    true
                } else {
                    j <= i && pad[j - n_av]
                };
                m[i][j] = u8::from(v);
            }
        }
        m
    }

    #[test]
    fn mask_examples() {
        let m = build_attention_mask(2, &[true, true]);
        assert_eq!(
            m.to_matrix(),
            vec![vec![1, 1, 0, 0], vec![1, 1, 0, 0], vec![1, 1, 1, 0], vec![1, 1, 1, 1]]
        );
        let causal = build_attention_mask(0, &[true; 3]);
        assert_eq!(causal.to_matrix(), vec![vec![1, 0, 0], vec![1, 1, 0], vec![1, 1, 1]]);
        let padded = build_attention_mask(1, &[true, false]);
        assert_eq!(padded.to_matrix(), vec![vec![1, 0, 0], vec![1, 1, 0], vec![1, 1, 0]]);
    }

    proptest! {
        #[test]
        fn mask_is_well_formed(n_av in 0usize..12, pad in prop::collection::vec(any::<bool>(), 1..12)) {
            let m = build_attention_mask(n_av, &pad);
            prop_assert_eq!(m.to_matrix(), oracle(n_av, &pad));
            for i in 0..m.size() {
                // AV rows never see text; real positions always see themselves.
                if i < n_av {
                    prop_assert!((n_av..m.size()).all(|j| !m.allowed(i, j)));
                    prop_assert!(m.allowed(i, i));
                } else {
                    prop_assert!((0..n_av).all(|j| m.allowed(i, j)));
                    prop_assert_eq!(m.allowed(i, i), pad[i - n_av]);
                }
                for (k, &real) in pad.iter().enumerate() {
                    if !real {
                        prop_assert!(!m.allowed(i, n_av + k));
                    }
                }
            }
        }
    }
}
