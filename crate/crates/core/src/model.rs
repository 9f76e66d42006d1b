//! The full audio-visual captioning model: encoders, projection, prefix
//! decoder and vocabulary head over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::decoder::{self, DecoderConfig, IncrementalDecoder};
use crate::encoder::{self, AvFeature, EncodedAv, EncoderConfig, Modality, TokenShape};
use crate::error::{Error, Result};
use crate::nn::INIT_STD;
use crate::params::ModelParams;
use crate::patches::PatchSequence;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::TokenSequence;

fn default_init_std() -> f64 {
    INIT_STD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub modality: Modality,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Audio patch tokens; required when the modality uses audio.
    #[serde(default)]
    pub audio: Option<TokenShape>,
    /// Video patch tokens; required when the modality uses video.
    #[serde(default)]
    pub video: Option<TokenShape>,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.modality.uses_audio() != self.audio.is_some() {
            return Err(Error::Config(format!("modality {} vs audio token shape {:?}", self.modality, self.audio)));
        }
        if self.modality.uses_video() != self.video.is_some() {
            return Err(Error::Config(format!("modality {} vs video token shape {:?}", self.modality, self.video)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std {} must be positive", self.init_std)));
        }
        Ok(())
    }

    /// Audio-visual tokens the decoder sees.
    pub fn av_tokens(&self) -> usize {
        let per = |s: Option<TokenShape>| match (s, self.encoder.pool_mode) {
            (None, _) => 0,
            (Some(_), encoder::PoolMode::Mean) => 1,
            (Some(s), encoder::PoolMode::None) => s.count,
        };
        per(self.audio) + per(self.video)
    }
}

/// Patch inputs of one example; absent modalities are `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct AvInput<'a> {
    pub audio: Option<&'a PatchSequence>,
    pub video: Option<&'a PatchSequence>,
}

#[derive(Clone, Debug)]
pub struct AvCap<T> {
    config: ModelConfig,
    params: ModelParams<T>,
}

impl<T: Scalar> AvCap<T> {
    /// Fresh model with truncated-normal weights drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        let mut params = ModelParams::new();
        if let Some(shape) = config.audio {
            encoder::init_modality_params(&mut params, encoder::AUDIO, shape, &config.encoder, std, &mut rng)?;
        }
        if let Some(shape) = config.video {
            encoder::init_modality_params(&mut params, encoder::VIDEO, shape, &config.encoder, std, &mut rng)?;
        }
        encoder::init_joint_params(&mut params, &config.encoder, std, &mut rng)?;
        decoder::init_decoder_params(&mut params, &config.decoder, config.encoder.dim, std, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters after checking every expected tensor is
    /// present with the expected shape.
    pub fn from_parts(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        let skeleton = Self::init(config, 0)?;
        for (name, p) in skeleton.params.iter() {
            let found = params
                .get(name)
                .map_err(|_| Error::CheckpointMissing(name.to_string()))?;
            if found.tensor.shape() != p.tensor.shape() {
                return Err(Error::CheckpointShape {
                    name: name.to_string(),
                    expected: p.tensor.shape().to_vec(),
                    found: found.tensor.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = params.names().find(|n| !skeleton.params.contains(n)) {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            config: skeleton.config,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    fn check_input(&self, input: &AvInput<'_>) -> Result<()> {
        let check = |name: &str, ps: Option<&PatchSequence>, shape: Option<TokenShape>| -> Result<()> {
            match (ps, shape) {
                (None, None) => Ok(()),
                (Some(ps), Some(s)) if ps.count() == s.count && ps.dim() == s.dim => Ok(()),
                (Some(ps), Some(s)) => Err(Error::shape(
                    "encode",
                    format!("{name} patches {}×{} vs expected {}×{}", ps.count(), ps.dim(), s.count, s.dim),
                )),
                (Some(_), None) => Err(Error::InvalidInput(format!(
                    "{name} input given to a {} model",
                    self.config.modality
                ))),
                (None, Some(_)) => Err(Error::InvalidInput(format!(
                    "{} model needs {name} input",
                    self.config.modality
                ))),
            }
        };
        check("audio", input.audio, self.config.audio)?;
        check("video", input.video, self.config.video)
    }

    pub fn encode_graph(&self, g: &mut Graph<T>, input: &AvInput<'_>) -> Result<EncodedAv> {
        self.check_input(input)?;
        let cfg = &self.config.encoder;
        let h_a = input
            .audio
            .map(|ps| encoder::encode_modality(g, &self.params, encoder::AUDIO, ps, cfg))
            .transpose()?;
        let h_v = input
            .video
            .map(|ps| encoder::encode_modality(g, &self.params, encoder::VIDEO, ps, cfg))
            .transpose()?;
        encoder::joint_encode(g, &self.params, cfg, h_a, h_v)
    }

    /// Decoder output `z_t` over `n_av + T` rows.
    pub fn decoder_graph(&self, g: &mut Graph<T>, enc: &EncodedAv, ids: &[usize], pad_mask: &[bool]) -> Result<Var> {
        if ids.len() != pad_mask.len() || ids.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} token ids with {} mask entries",
                ids.len(),
                pad_mask.len()
            )));
        }
        let h_av = decoder::project_av(g, &self.params, enc.z)?;
        let h_t = decoder::text_embed(g, &self.params, ids)?;
        let mask = decoder::build_attention_mask(enc.len(), pad_mask);
        decoder::decode(g, &self.params, &self.config.decoder, Some(h_av), h_t, &mask)
    }

    /// Teacher-forced text logits `T × V`.
    pub fn logits_graph(&self, g: &mut Graph<T>, input: &AvInput<'_>, ids: &[usize], pad_mask: &[bool]) -> Result<Var> {
        let enc = self.encode_graph(g, input)?;
        let z_t = self.decoder_graph(g, &enc, ids, pad_mask)?;
        decoder::text_logits(g, &self.params, &self.config.decoder, z_t, enc.len())
    }

    /// Summed label-smoothed cross-entropy over the real positions of `seq`.
    pub fn loss_sum_graph(&self, g: &mut Graph<T>, input: &AvInput<'_>, seq: &TokenSequence, eps: T) -> Result<Var> {
        let logits = self.logits_graph(g, input, &seq.input_ids, &seq.pad_mask)?;
        g.smoothed_ce_sum(logits, &seq.target_ids, &seq.pad_mask, eps)
    }

    pub fn encode(&self, input: &AvInput<'_>) -> Result<AvFeature<T>> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, input)?;
        Ok(AvFeature {
            tokens: g.value(enc.z).clone(),
            n_audio: enc.n_audio,
            n_video: enc.n_video,
        })
    }

    pub fn logits(&self, input: &AvInput<'_>, ids: &[usize], pad_mask: &[bool]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let v = self.logits_graph(&mut g, input, ids, pad_mask)?;
        Ok(g.value(v).clone())
    }

    /// Full decoder output rows (audio-visual rows first).
    pub fn decoder_output(&self, input: &AvInput<'_>, ids: &[usize], pad_mask: &[bool]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, input)?;
        let z = self.decoder_graph(&mut g, &enc, ids, pad_mask)?;
        Ok(g.value(z).clone())
    }

    pub fn incremental(&self, av: &AvFeature<T>) -> Result<IncrementalDecoder<'_, T>> {
        IncrementalDecoder::new(&self.params, &self.config.decoder, av)
    }
}
