//! Modality-specific encoders and the joint audio-visual encoder.
//!
//! Each modality: `h_0 = patches · E + E_pos`, then `L` pre-norm blocks and a
//! final layer norm (per token, or after mean pooling). The joint encoder
//! concatenates audio tokens then video tokens and applies `S` more blocks
//! with unmasked attention followed by a final layer norm.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn;
use crate::params::{trunc_normal, ModelParams};
use crate::patches::PatchSequence;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "A")]
    Audio,
    #[serde(rename = "V")]
    Video,
    #[serde(rename = "A+V")]
    AudioVisual,
}

impl Modality {
    pub fn uses_audio(self) -> bool {
        matches!(self, Modality::Audio | Modality::AudioVisual)
    }

    pub fn uses_video(self) -> bool {
        matches!(self, Modality::Video | Modality::AudioVisual)
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Audio => "A",
            Modality::Video => "V",
            Modality::AudioVisual => "A+V",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Keep every token; layer norm applied token-wise.
    #[default]
    None,
    /// Mean over tokens, then layer norm: one token per modality.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub modality_layers: usize,
    pub joint_layers: usize,
    pub heads: usize,
    #[serde(default)]
    pub pool_mode: PoolMode,
    #[serde(default)]
    pub modality_embeddings: bool,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modality_layers + self.joint_layers == 0 {
            return Err(Error::Config("encoder needs L + S ≥ 1".into()));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "encoder dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Number and width of the patch tokens a modality feeds the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenShape {
    pub count: usize,
    pub dim: usize,
}

/// Encoder output values: `(n_audio + n_video) × D`, audio tokens first.
#[derive(Clone, Debug, PartialEq)]
pub struct AvFeature<T> {
    pub tokens: Tensor<T>,
    pub n_audio: usize,
    pub n_video: usize,
}

impl<T: Scalar> AvFeature<T> {
    pub fn len(&self) -> usize {
        self.n_audio + self.n_video
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Encoder output as a graph node.
#[derive(Clone, Copy, Debug)]
pub struct EncodedAv {
    pub z: Var,
    pub n_audio: usize,
    pub n_video: usize,
}

impl EncodedAv {
    pub fn len(&self) -> usize {
        self.n_audio + self.n_video
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const AUDIO: &str = "encoder.audio";
pub const VIDEO: &str = "encoder.video";
pub const JOINT: &str = "encoder.joint";

pub fn init_modality_params<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    prefix: &str,
    shape: TokenShape,
    cfg: &EncoderConfig,
    std: f64,
    rng: &mut R,
) -> Result<()> {
    params.insert(format!("{prefix}.patch_proj"), trunc_normal(&[shape.dim, cfg.dim], std, rng), true)?;
    params.insert(format!("{prefix}.pos"), trunc_normal(&[shape.count, cfg.dim], std, rng), true)?;
    for l in 0..cfg.modality_layers {
        nn::init_block(params, &format!("{prefix}.layers.{l}"), cfg.dim, std, rng)?;
    }
    nn::init_layer_norm(params, &format!("{prefix}.ln_out"), cfg.dim)
}

pub fn init_joint_params<T: Scalar, R: Rng + ?Sized>(
    params: &mut ModelParams<T>,
    cfg: &EncoderConfig,
    std: f64,
    rng: &mut R,
) -> Result<()> {
    if cfg.modality_embeddings {
        params.insert(format!("{JOINT}.modality_emb"), trunc_normal(&[2, cfg.dim], std, rng), true)?;
    }
    for l in 0..cfg.joint_layers {
        nn::init_block(params, &format!("{JOINT}.layers.{l}"), cfg.dim, std, rng)?;
    }
    nn::init_layer_norm(params, &format!("{JOINT}.ln_out"), cfg.dim)
}

/// `h_0[i] = patches[i] · proj + pos[i]`.
pub fn embed_patches<T: Scalar>(g: &mut Graph<T>, patches: Var, proj: Var, pos: Var) -> Result<Var> {
    let n = g.value(patches).rows();
    if g.value(pos).rows() != n {
        return Err(Error::shape(
            "embed_patches",
            format!("{n} patches but {} positional rows", g.value(pos).rows()),
        ));
    }
    let h = g.matmul(patches, proj)?;
    g.add(h, pos)
}

pub fn patches_to_tensor<T: Scalar>(ps: &PatchSequence) -> Tensor<T> {
    Tensor::new(
        vec![ps.count(), ps.dim()],
        ps.data().iter().map(|&v| T::of(v as f64)).collect(),
    )
    .expect("patch sequence is rectangular")
}

/// One unmasked pre-norm encoder block.
pub fn encoder_layer<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, prefix: &str, h: Var, heads: usize) -> Result<Var> {
    nn::transformer_block(g, params, prefix, h, heads, None)
}

pub fn encode_modality<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    prefix: &str,
    ps: &PatchSequence,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let x = g.constant(patches_to_tensor(ps))?;
    let proj = g.param(params, &format!("{prefix}.patch_proj"))?;
    let pos = g.param(params, &format!("{prefix}.pos"))?;
    let mut h = embed_patches(g, x, proj, pos)?;
    for l in 0..cfg.modality_layers {
        h = encoder_layer(g, params, &format!("{prefix}.layers.{l}"), h, cfg.heads)?;
    }
    if cfg.pool_mode == PoolMode::Mean {
        h = g.mean_rows(h)?;
    }
    nn::layer_norm(g, params, &format!("{prefix}.ln_out"), h)
}

pub fn joint_encode<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    cfg: &EncoderConfig,
    h_a: Option<Var>,
    h_v: Option<Var>,
) -> Result<EncodedAv> {
    let mut parts = Vec::new();
    let mut counts = [0usize; 2];
    for (slot, h) in [h_a, h_v].into_iter().enumerate() {
        let Some(mut h) = h else { continue };
        if g.value(h).cols() != cfg.dim {
            return Err(Error::shape("joint_encode", format!("token width {} vs D={}", g.value(h).cols(), cfg.dim)));
        }
        counts[slot] = g.value(h).rows();
        if cfg.modality_embeddings {
            let table = g.param(params, &format!("{JOINT}.modality_emb"))?;
            let e = g.embedding(table, &vec![slot; counts[slot]])?;
            h = g.add(h, e)?;
        }
        parts.push(h);
    }
    if parts.is_empty() {
        return Err(Error::InvalidInput("joint encoder received no modality".into()));
    }
    let mut z = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
    for l in 0..cfg.joint_layers {
        z = encoder_layer(g, params, &format!("{JOINT}.layers.{l}"), z, cfg.heads)?;
    }
    let z = nn::layer_norm(g, params, &format!("{JOINT}.ln_out"), z)?;
    Ok(EncodedAv {
        z,
        n_audio: counts[0],
        n_video: counts[1],
    })
}
