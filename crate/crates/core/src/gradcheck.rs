//! Finite-difference verification of the analytic gradients of the full
//! captioning loss, reported per parameter group.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{BackwardFault, Graph};
use crate::config::RunConfig;
use crate::encoder::TokenShape;
use crate::error::{Error, Result};
use crate::model::{AvCap, ModelConfig};
use crate::params::ParamGroup;
use crate::patches::{PatchGeometry, PatchSequence};
use crate::tensor::Tensor;
use crate::text::TokenSequence;
use crate::training::{set_group_flags, DecoderPolicy, EncoderPolicy, Example};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error; central differences at
/// `STEP` carry about 1e-10 absolute error.
pub const REL_FLOOR: f64 = 1e-6;
/// The loss is checked with smoothing on so every target term is exercised.
pub const SMOOTHING: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GroupStatus {
    Checked { max_rel_error: f64, worst: String, values: usize },
    SkippedFrozen,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub groups: BTreeMap<String, GroupStatus>,
    pub loss: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .groups
            .iter()
            .map(|(g, s)| match s {
                GroupStatus::Checked { max_rel_error, worst, values } => format!(
                    "{g:<16} {:<4} max_rel_error={max_rel_error:.3e} values={values} worst={worst}",
                    if *max_rel_error < TOLERANCE { "pass" } else { "FAIL" }
                ),
                GroupStatus::SkippedFrozen => format!("{g:<16} skipped (frozen)"),
            })
            .collect();
        out.push(format!("gradcheck {}", if self.passed { "PASSED" } else { "FAILED" }));
        out
    }
}

/// Group label used in reports: `encoder.<part>` or the top-level group.
pub fn report_group(name: &str) -> String {
    let mut parts = name.split('.');
    match (parts.next(), parts.next()) {
        (Some("encoder"), Some(part)) => format!("encoder.{part}"),
        (Some(top), _) => top.to_string(),
        _ => name.to_string(),
    }
}

/// Shrinks a run configuration to gradient-check size: D = 8, two heads, one
/// layer per stack, two tokens per modality, a vocabulary of 9.
pub fn tiny_model_config(cfg: &RunConfig) -> ModelConfig {
    let mut m = cfg.model_config(9);
    m.encoder.dim = 8;
    m.encoder.heads = 2;
    m.encoder.modality_layers = m.encoder.modality_layers.min(1);
    m.encoder.joint_layers = m.encoder.joint_layers.min(1);
    if m.encoder.modality_layers + m.encoder.joint_layers == 0 {
        m.encoder.joint_layers = 1;
    }
    m.decoder.dim = 8;
    m.decoder.heads = 2;
    m.decoder.layers = 1;
    m.decoder.max_positions = 8;
    m.audio = m.audio.map(|_| TokenShape { count: 2, dim: 4 });
    m.video = m.video.map(|_| TokenShape { count: 2, dim: 6 });
    m.init_std = 0.5;
    m
}

fn random_patches(shape: TokenShape, rng: &mut ChaCha8Rng) -> PatchSequence {
    let data = (0..shape.count * shape.dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    PatchSequence::new(data, shape.dim, PatchGeometry { temporal: 1, rows: 1, cols: shape.count })
        .expect("consistent sizes")
}

/// Two examples with captions of different lengths; the shorter is padded.
pub fn tiny_batch(m: &ModelConfig, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = m.decoder.vocab_size;
    let lens = [5usize, 3];
    lens.iter()
        .enumerate()
        .map(|(i, &len)| {
            let mut ids = vec![crate::text::BOS];
            ids.extend((1..len).map(|_| rng.random_range(4..v)));
            let mut target = ids[1..].to_vec();
            target.push(crate::text::EOS);
            let mut tokens = TokenSequence {
                input_ids: ids,
                target_ids: target,
                pad_mask: vec![true; len],
            };
            tokens = tokens.padded_to(lens[0]);
            Example {
                id: format!("g{i}"),
                audio: m.audio.map(|s| random_patches(s, &mut rng)),
                video: m.video.map(|s| random_patches(s, &mut rng)),
                tokens,
            }
        })
        .collect()
}

fn batch_loss_with(
    model: &AvCap<f64>,
    batch: &[Example],
    eps: f64,
    fault: Option<BackwardFault>,
    grads: bool,
) -> Result<(f64, BTreeMap<String, Tensor<f64>>)> {
    let real: usize = batch.iter().map(|e| e.tokens.real_len()).sum();
    let scale = 1.0 / real as f64;
    let mut total = 0.0;
    let mut acc: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
    for ex in batch {
        let mut g = Graph::new();
        if let Some(f) = fault {
            g.inject_fault(f);
        }
        let loss = model.loss_sum_graph(&mut g, &ex.input(), &ex.tokens, eps)?;
        total += g.value(loss).item();
        if grads {
            for (name, gr) in g.backward_scaled(loss, scale)?.into_param_grads(&g) {
                match acc.get_mut(&name) {
                    Some(a) => a.data_mut().iter_mut().zip(gr.data()).for_each(|(x, y)| *x += y),
                    None => {
                        acc.insert(name, gr);
                    }
                }
            }
        }
    }
    Ok((total * scale, acc))
}

/// Compares analytic and central-difference gradients for every trainable
/// value. Frozen groups are reported as skipped.
pub fn gradcheck(model: &mut AvCap<f64>, batch: &[Example], eps: f64, fault: Option<BackwardFault>) -> Result<GradcheckReport> {
    let (loss, analytic) = batch_loss_with(model, batch, eps, fault, true)?;
    let mut groups: BTreeMap<String, GroupStatus> = BTreeMap::new();
    let names: Vec<(String, bool)> = model
        .params()
        .iter()
        .map(|(n, p)| (n.to_string(), p.trainable))
        .collect();
    for (name, trainable) in names {
        let group = report_group(&name);
        if !trainable {
            groups.entry(group).or_insert(GroupStatus::SkippedFrozen);
            continue;
        }
        let a = analytic
            .get(&name)
            .ok_or_else(|| Error::InvalidInput(format!("no analytic gradient for `{name}`")))?
            .clone();
        let n = a.numel();
        let mut worst = (0.0f64, String::new());
        for i in 0..n {
            let orig = model.params().tensor(&name)?.data()[i];
            let mut eval = |x: f64| -> Result<f64> {
                model.params_mut().get_mut(&name)?.tensor.data_mut()[i] = x;
                Ok(batch_loss_with(model, batch, eps, None, false)?.0)
            };
            let plus = eval(orig + STEP)?;
            let minus = eval(orig - STEP)?;
            eval(orig)?;
            let numeric = (plus - minus) / (2.0 * STEP);
            let an = a.data()[i];
            if !numeric.is_finite() || !an.is_finite() {
                return Err(Error::NonFinite { op: "gradcheck" });
            }
            let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(REL_FLOOR);
            if rel > worst.0 || worst.1.is_empty() {
                worst = (rel, format!("{name}[{i}]"));
            }
        }
        let entry = groups.entry(group).or_insert(GroupStatus::Checked {
            max_rel_error: 0.0,
            worst: String::new(),
            values: 0,
        });
        if let GroupStatus::SkippedFrozen = entry {
            *entry = GroupStatus::Checked {
                max_rel_error: 0.0,
                worst: String::new(),
                values: 0,
            };
        }
        if let GroupStatus::Checked { max_rel_error, worst: w, values } = entry {
            *values += n;
            if worst.0 > *max_rel_error || w.is_empty() {
                *max_rel_error = worst.0;
                *w = worst.1;
            }
        }
    }
    let passed = groups.values().all(|s| match s {
        GroupStatus::Checked { max_rel_error, .. } => *max_rel_error < TOLERANCE,
        GroupStatus::SkippedFrozen => true,
    });
    Ok(GradcheckReport { groups, loss, passed })
}

/// Builds the tiny model for `cfg` (freeze flags applied per group, no
/// checkpoint needed) and checks it end to end.
pub fn run_gradcheck(cfg: &RunConfig, fault: Option<BackwardFault>) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mcfg = tiny_model_config(cfg);
    let mut model = AvCap::<f64>::init(mcfg.clone(), cfg.train.seed)?;
    let policy = &cfg.train.policy;
    set_group_flags(model.params_mut(), |g| match g {
        Some(ParamGroup::Encoder) => policy.encoder != EncoderPolicy::PretrainedFreeze,
        Some(ParamGroup::Decoder) => policy.text_decoder == DecoderPolicy::Train,
        _ => true,
    })?;
    let batch = tiny_batch(&mcfg, cfg.train.seed);
    gradcheck(&mut model, &batch, SMOOTHING, fault)
}
