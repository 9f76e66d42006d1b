//! Label-smoothed cross-entropy, warmup/cosine schedule, AdamW, freeze
//! policies and the minibatch training loop.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::model::{AvCap, AvInput};
use crate::params::{ModelParams, ParamGroup};
use crate::patches::PatchSequence;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::TokenSequence;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderPolicy {
    #[default]
    Scratch,
    PretrainedTrain,
    PretrainedFreeze,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderPolicy {
    #[default]
    Train,
    Freeze,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezePolicy {
    #[serde(default)]
    pub encoder: EncoderPolicy,
    #[serde(default)]
    pub text_decoder: DecoderPolicy,
    /// Source of pretrained weights for `pretrained_*` encoder policies.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl FreezePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.encoder != EncoderPolicy::Scratch && self.checkpoint.is_none() {
            return Err(Error::Config(format!(
                "encoder policy {:?} needs a checkpoint path",
                self.encoder
            )));
        }
        Ok(())
    }

    fn trainable(&self, group: Option<ParamGroup>) -> bool {
        match group {
            Some(ParamGroup::Encoder) => self.encoder != EncoderPolicy::PretrainedFreeze,
            Some(ParamGroup::Decoder) => self.text_decoder == DecoderPolicy::Train,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub label_smoothing: f64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub policy: FreezePolicy,
}

impl TrainConfig {
    /// Full-size optimisation settings.
    pub fn full() -> Self {
        Self {
            label_smoothing: 0.1,
            peak_lr: 1e-4,
            warmup_steps: 50,
            total_steps: 2500,
            weight_decay: 5e-7,
            beta1: 0.95,
            beta2: 0.999,
            batch_size: 8,
            seed: 0,
            policy: FreezePolicy::default(),
        }
    }

    /// Small-budget settings for from-scratch runs on a handful of samples.
    pub fn desk() -> Self {
        Self {
            label_smoothing: 0.0,
            peak_lr: 3e-3,
            warmup_steps: 20,
            total_steps: 300,
            batch_size: 4,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!("label_smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        if self.total_steps > 0 && self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::Config("peak_lr and weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.policy.validate()
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::InvalidInput(format!("step {step} beyond total_steps {}", cfg.total_steps)));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_steps as f64);
    }
    if step == cfg.total_steps {
        return Ok(0.0);
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    Ok(cfg.peak_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Token-mean label-smoothed cross-entropy over the real positions.
pub fn label_smoothed_ce<T: Scalar>(logits: &Tensor<T>, targets: &[usize], pad_mask: &[bool], eps: f64) -> Result<T> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!("label smoothing {eps} outside [0, 1)")));
    }
    let real = pad_mask.iter().filter(|&&m| m).count();
    if real == 0 {
        return Err(Error::InvalidInput("every position is padding".into()));
    }
    let mut g = Graph::new();
    let x = g.constant(logits.clone())?;
    let sum = g.smoothed_ce_sum(x, targets, pad_mask, T::of(eps))?;
    Ok(g.value(sum).item() / T::of(real as f64))
}

/// Parameters that are exempt from weight decay.
pub fn skips_weight_decay(name: &str) -> bool {
    name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta")
}

#[derive(Clone, Debug, Default)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Decoupled-weight-decay Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    step: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            weight_decay,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.weight_decay)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads` must cover exactly the trainable tensors.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        for (name, p) in params.iter() {
            if p.trainable != grads.contains_key(name) {
                return Err(Error::InvalidInput(format!(
                    "gradient set mismatch at `{name}` (trainable = {})",
                    p.trainable
                )));
            }
        }
        if let Some(extra) = grads.keys().find(|k| !params.contains(k)) {
            return Err(Error::InvalidInput(format!("gradient for unknown parameter `{extra}`")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (lr_t, eps) = (T::of(lr), T::of(ADAM_EPS));
        let (c1, c2) = (T::of(c1), T::of(c2));
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.tensor.shape() {
                return Err(Error::shape(
                    "adamw",
                    format!("`{name}` gradient {:?} vs parameter {:?}", g.shape(), p.tensor.shape()),
                ));
            }
            let n = g.numel();
            let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            });
            let decay = if skips_weight_decay(name) {
                T::one()
            } else {
                T::one() - lr_t * T::of(self.weight_decay)
            };
            let data = p.tensor.data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                st.m[i] = b1 * st.m[i] + (T::one() - b1) * gi;
                st.v[i] = b2 * st.v[i] + (T::one() - b2) * gi * gi;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                data[i] = data[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Sets trainable flags per policy. Projection and head stay trainable.
pub fn apply_freeze_policy<T: Scalar>(params: &mut ModelParams<T>, policy: &FreezePolicy) -> Result<()> {
    policy.validate()?;
    set_group_flags(params, |g| policy.trainable(g))?;
    if !params.iter().any(|(_, p)| p.trainable) {
        return Err(Error::Config("freeze policy leaves no trainable parameter".into()));
    }
    Ok(())
}

/// Low-level flag setter over parameter groups.
pub fn set_group_flags<T: Scalar>(params: &mut ModelParams<T>, f: impl Fn(Option<ParamGroup>) -> bool) -> Result<()> {
    for (name, p) in params.iter_mut() {
        p.trainable = f(ParamGroup::of(name));
    }
    Ok(())
}

/// Copies pretrained encoder weights (and decoder weights when the decoder is
/// frozen and the checkpoint carries them), then applies the flags.
pub fn prepare_params<T: Scalar>(params: &mut ModelParams<T>, policy: &FreezePolicy) -> Result<()> {
    policy.validate()?;
    if let Some(path) = &policy.checkpoint {
        let source = ModelParams::<f32>::load(path)?.cast::<T>();
        if policy.encoder != EncoderPolicy::Scratch {
            let copied = params.copy_from(&source, |n| ParamGroup::of(n) == Some(ParamGroup::Encoder))?;
            if copied == 0 {
                return Err(Error::Checkpoint(format!("{} holds no encoder tensors", path.display())));
            }
        }
        if policy.text_decoder == DecoderPolicy::Freeze {
            params.copy_from(&source, |n| ParamGroup::of(n) == Some(ParamGroup::Decoder))?;
        }
    }
    apply_freeze_policy(params, policy)
}

/// One training sample: preprocessed patches plus the tokenized caption.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub audio: Option<PatchSequence>,
    pub video: Option<PatchSequence>,
    pub tokens: TokenSequence,
}

impl Example {
    pub fn input(&self) -> AvInput<'_> {
        AvInput {
            audio: self.audio.as_ref(),
            video: self.video.as_ref(),
        }
    }
}

pub trait TrainingData {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `index`; `rng` drives any stochastic preprocessing.
    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Cow<'_, Example>>;
}

impl TrainingData for [Example] {
    fn len(&self) -> usize {
        <[Example]>::len(self)
    }

    fn example(&self, index: usize, _rng: &mut ChaCha8Rng) -> Result<Cow<'_, Example>> {
        self.get(index)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::InvalidInput(format!("example {index} out of range")))
    }
}

impl TrainingData for Vec<Example> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Cow<'_, Example>> {
        self.as_slice().example(index, rng)
    }
}

pub struct BatchResult<T> {
    /// Token-mean loss over the batch.
    pub loss: T,
    pub real_tokens: usize,
    /// Gradients of `loss` for the trainable tensors.
    pub grads: Option<BTreeMap<String, Tensor<T>>>,
}

/// Loss (and optionally gradients) of a minibatch: one graph per sample,
/// each seeded with `1 / real_tokens`, gradients summed in batch order.
pub fn batch_loss<T: Scalar>(model: &AvCap<T>, batch: &[&Example], eps: f64, with_grads: bool) -> Result<BatchResult<T>> {
    let real_tokens: usize = batch.iter().map(|e| e.tokens.real_len()).sum();
    if real_tokens == 0 {
        return Err(Error::InvalidInput("batch has no real target tokens".into()));
    }
    let scale = T::one() / T::of(real_tokens as f64);
    let mut total = T::zero();
    let mut acc: Option<BTreeMap<String, Tensor<T>>> = None;
    for ex in batch {
        let mut g = Graph::new();
        let loss = model.loss_sum_graph(&mut g, &ex.input(), &ex.tokens, T::of(eps))?;
        total += g.value(loss).item();
        if !with_grads {
            continue;
        }
        let grads = g.backward_scaled(loss, scale)?.into_param_grads(&g);
        match acc.as_mut() {
            None => acc = Some(grads),
            Some(acc) => {
                for (name, gr) in grads {
                    let slot = acc
                        .get_mut(&name)
                        .ok_or_else(|| Error::InvalidInput(format!("gradient for `{name}` missing in batch")))?;
                    slot.data_mut().iter_mut().zip(gr.data()).for_each(|(a, &b)| *a += b);
                }
            }
        }
    }
    Ok(BatchResult {
        loss: total * scale,
        real_tokens,
        grads: acc,
    })
}

/// Token-mean loss over a whole dataset, without gradients.
pub fn dataset_loss<T: Scalar, D: TrainingData + ?Sized>(model: &AvCap<T>, data: &D, eps: f64, seed: u64) -> Result<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..data.len())
        .map(|i| data.example(i, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Example> = examples.iter().map(|e| e.as_ref()).collect();
    Ok(batch_loss(model, &refs, eps, false)?.loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<StepLog>,
    pub final_step: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|l| l.loss)
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,lr,loss\n");
        for l in &self.log {
            s.push_str(&format!("{},{:e},{}\n", l.step, l.lr, l.loss));
        }
        s
    }
}

/// Seeded cyclic sampler: a fresh permutation every epoch.
struct Sampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle_if_done();
        s
    }

    fn reshuffle_if_done(&mut self) {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
    }

    fn next(&mut self) -> usize {
        self.reshuffle_if_done();
        let i = self.order[self.cursor];
        self.cursor += 1;
        i
    }
}

/// Runs `cfg.total_steps` AdamW updates; update `k` (1-based) uses
/// `lr_at(k)`. The model's trainable flags must already be set.
pub fn train_loop<T: Scalar, D: TrainingData + ?Sized>(
    model: &mut AvCap<T>,
    data: &D,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let mut sampler = Sampler::new(data.len(), cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt = AdamW::from_config(cfg);
    let mut log = Vec::with_capacity(cfg.total_steps);
    for step in 1..=cfg.total_steps {
        let examples = (0..cfg.batch_size)
            .map(|_| data.example(sampler.next(), &mut aug_rng))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Example> = examples.iter().map(|e| e.as_ref()).collect();
        let res = match batch_loss(model, &refs, cfg.label_smoothing, true) {
            Err(Error::NonFinite { op }) => {
                return Err(Error::Diverged {
                    step,
                    detail: format!("non-finite value in {op}"),
                })
            }
            other => other?,
        };
        let loss = res.loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss = {loss}"),
            });
        }
        let lr = lr_at(step, cfg)?;
        let grads = res.grads.unwrap_or_default();
        opt.step(model.params_mut(), &grads, lr)?;
        let entry = StepLog { step, lr, loss };
        on_step(&entry);
        log.push(entry);
    }
    Ok(TrainReport {
        log,
        final_step: cfg.total_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched() -> TrainConfig {
        TrainConfig::full()
    }

    #[test]
    fn schedule_values() {
        let c = sched();
        assert_eq!(lr_at(50, &c).unwrap(), 1e-4);
        assert_eq!(lr_at(25, &c).unwrap(), 5e-5);
        assert_eq!(lr_at(2500, &c).unwrap(), 0.0);
        assert_eq!(lr_at(0, &c).unwrap(), 0.0);
        assert!((lr_at(1275, &c).unwrap() - 5e-5).abs() < 1e-12);
        assert!(lr_at(2501, &c).is_err());
    }

    #[test]
    fn schedule_is_continuous_and_decreasing_after_warmup() {
        let c = sched();
        let before = lr_at(49, &c).unwrap();
        let at = lr_at(50, &c).unwrap();
        assert!((at - before - 1e-4 / 50.0).abs() < 1e-15);
        let mut prev = at;
        for s in 51..=2500 {
            let lr = lr_at(s, &c).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn ce_examples() {
        let uniform = Tensor::<f64>::zeros(&[3, 4]);
        for eps in [0.0, 0.1, 0.5, 0.9] {
            let l = label_smoothed_ce(&uniform, &[0, 1, 3], &[true; 3], eps).unwrap();
            assert!((l - 4f64.ln()).abs() < 1e-12);
        }
        let two = Tensor::<f64>::zeros(&[1, 2]);
        let l = label_smoothed_ce(&two, &[0], &[true], 0.1).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let sharp = Tensor::<f64>::from_f64(&[1, 3], &[50.0, 0.0, 0.0]).unwrap();
        assert!(label_smoothed_ce(&sharp, &[0], &[true], 0.0).unwrap() < 1e-20);
        assert!(label_smoothed_ce(&two, &[0], &[false], 0.1).is_err());
    }

    #[test]
    fn ce_asymmetric_three_way_matches_brute_force() {
        let z = [0.3, -1.2, 2.0];
        let lse = z.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        let eps = 0.2;
        let q = [eps / 2.0, 1.0 - eps, eps / 2.0];
        let expected: f64 = (0..3).map(|j| -q[j] * (z[j] - lse)).sum();
        let t = Tensor::<f64>::from_f64(&[1, 3], &z).unwrap();
        assert!((label_smoothed_ce(&t, &[1], &[true], eps).unwrap() - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn zero_smoothing_is_plain_ce(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 5), 1..6), seed in 0usize..100) {
            let targets: Vec<usize> = (0..rows.len()).map(|i| (i * 7 + seed) % 5).collect();
            let t = Tensor::from_rows(&rows).unwrap();
            let plain: f64 = rows.iter().zip(&targets).map(|(r, &y)| {
                let lse = r.iter().map(|v| v.exp()).sum::<f64>().ln();
                lse - r[y]
            }).sum::<f64>() / rows.len() as f64;
            let l = label_smoothed_ce(&t, &targets, &vec![true; rows.len()], 0.0).unwrap();
            prop_assert!((l - plain).abs() < 1e-7);
        }

        #[test]
        fn padded_rows_do_not_count(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..6)) {
            let n = rows.len();
            let targets = vec![1; n];
            let t = Tensor::from_rows(&rows).unwrap();
            let full = label_smoothed_ce(&t, &targets, &vec![true; n], 0.1).unwrap();
            let mut extra = rows.clone();
            extra.push(vec![100.0, -3.0, 0.0, 7.0]);
            let mut mask = vec![true; n];
            mask.push(false);
            let mut tg = targets.clone();
            tg.push(0);
            let padded = label_smoothed_ce(&Tensor::from_rows(&extra).unwrap(), &tg, &mask, 0.1).unwrap();
            prop_assert!((full - padded).abs() < 1e-7);
        }
    }

    fn scalar_params(name: &str, v: f64) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        p.insert(name, Tensor::from_f64(&[1], &[v]).unwrap(), true).unwrap();
        p
    }

    fn grads(name: &str, v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([(name.to_string(), Tensor::from_f64(&[1], &[v]).unwrap())])
    }

    #[test]
    fn adamw_examples() {
        let mut p = scalar_params("w.weight", 1.0);
        let mut opt = AdamW::new(0.95, 0.999, 0.0);
        opt.step(&mut p, &grads("w.weight", 0.0), 0.1).unwrap();
        assert_eq!(p.tensor("w.weight").unwrap().data(), &[1.0]);

        let mut p = scalar_params("w.weight", 1.0);
        let mut opt = AdamW::new(0.95, 0.999, 0.0);
        opt.step(&mut p, &grads("w.weight", 1.0), 0.1).unwrap();
        assert!((p.tensor("w.weight").unwrap().data()[0] - 0.9).abs() < 1e-9);

        let mut p = scalar_params("w.weight", 2.0);
        let mut opt = AdamW::new(0.95, 0.999, 0.5);
        opt.step(&mut p, &grads("w.weight", 0.0), 0.1).unwrap();
        assert!((p.tensor("w.weight").unwrap().data()[0] - 0.95 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn adamw_skips_decay_on_bias_and_norms() {
        let mut p = scalar_params("w.bias", 2.0);
        let mut opt = AdamW::new(0.95, 0.999, 0.5);
        opt.step(&mut p, &grads("w.bias", 0.0), 0.1).unwrap();
        assert_eq!(p.tensor("w.bias").unwrap().data(), &[2.0]);
    }

    #[test]
    fn adamw_rejects_mismatched_gradients() {
        let mut p = scalar_params("w.weight", 1.0);
        let mut opt = AdamW::<f64>::new(0.9, 0.999, 0.0);
        assert!(opt.step(&mut p, &BTreeMap::new(), 0.1).is_err());
        let bad = BTreeMap::from([("w.weight".to_string(), Tensor::<f64>::zeros(&[2]))]);
        assert!(opt.step(&mut p, &bad, 0.1).is_err());
        p.set_trainable("w.weight", false).unwrap();
        assert!(opt.step(&mut p, &grads("w.weight", 1.0), 0.1).is_err());
    }

    fn grouped() -> ModelParams<f64> {
        let mut p = ModelParams::new();
        for n in ["encoder.a", "projection.weight", "decoder.b", "head.weight"] {
            p.insert(n, Tensor::zeros(&[1]), true).unwrap();
        }
        p
    }

    fn flags(p: &ModelParams<f64>) -> Vec<bool> {
        p.iter().map(|(_, x)| x.trainable).collect()
    }

    #[test]
    fn freeze_policy_examples() {
        let ck = Some(PathBuf::from("unused.avcp"));
        let mut p = grouped();
        apply_freeze_policy(&mut p, &FreezePolicy::default()).unwrap();
        assert_eq!(flags(&p), vec![true; 4]);

        // Name order: decoder, encoder, head, projection.
        let policy = FreezePolicy {
            encoder: EncoderPolicy::PretrainedFreeze,
            text_decoder: DecoderPolicy::Freeze,
            checkpoint: ck.clone(),
        };
        apply_freeze_policy(&mut p, &policy).unwrap();
        assert_eq!(flags(&p), vec![false, false, true, true]);

        let policy = FreezePolicy {
            encoder: EncoderPolicy::PretrainedTrain,
            text_decoder: DecoderPolicy::Freeze,
            checkpoint: ck,
        };
        apply_freeze_policy(&mut p, &policy).unwrap();
        assert_eq!(flags(&p), vec![false, true, true, true]);

        let no_ck = FreezePolicy {
            encoder: EncoderPolicy::PretrainedTrain,
            ..FreezePolicy::default()
        };
        assert!(apply_freeze_policy(&mut p, &no_ck).unwrap_err().is_config_error());
    }

    #[test]
    fn freezing_everything_without_head_is_rejected() {
        let mut p = ModelParams::<f64>::new();
        p.insert("encoder.a", Tensor::zeros(&[1]), true).unwrap();
        p.insert("decoder.b", Tensor::zeros(&[1]), true).unwrap();
        let policy = FreezePolicy {
            encoder: EncoderPolicy::PretrainedFreeze,
            text_decoder: DecoderPolicy::Freeze,
            checkpoint: Some(PathBuf::from("x.avcp")),
        };
        assert!(apply_freeze_policy(&mut p, &policy).is_err());
    }

    #[test]
    fn sampler_visits_every_index_each_epoch() {
        let mut s = Sampler::new(5, 3);
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..5).map(|_| s.next()).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::full().validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
        let mut c = TrainConfig::desk();
        c.warmup_steps = c.total_steps;
        assert!(c.validate().is_err());
        c.total_steps = 0;
        c.warmup_steps = 0;
        assert!(c.validate().is_ok());
        c.label_smoothing = 1.0;
        assert!(c.validate().is_err());
    }
}
