//! Greedy and beam-search caption generation from `[BOS]`.

use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderState, IncrementalDecoder};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::{BOS, EOS};

pub const DEFAULT_BEAM: usize = 4;
pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_MAX_LEN: usize = 30;

/// Anything that scores the next token given a running state.
pub trait CaptionModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    fn start(&self) -> Self::State;

    /// Consumes `token` and returns next-token logits.
    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;
}

impl<T: Scalar> CaptionModel for IncrementalDecoder<'_, T> {
    type State = DecoderState<T>;

    fn vocab_size(&self) -> usize {
        IncrementalDecoder::vocab_size(self)
    }

    fn start(&self) -> Self::State {
        IncrementalDecoder::start(self)
    }

    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>> {
        Ok(IncrementalDecoder::step(self, state, token)?
            .into_iter()
            .map(Scalar::as_f64)
            .collect())
    }
}

/// GNMT length penalty `((5 + length) / 6)^alpha`.
pub fn length_penalty(length: usize, alpha: f64) -> Result<f64> {
    if length < 1 {
        return Err(Error::InvalidInput("length penalty needs length ≥ 1".into()));
    }
    Ok(((5.0 + length as f64) / 6.0).powf(alpha))
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Lowest index among the maxima.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Generated ids (without the leading BOS), ending in EOS if finished.
pub fn greedy_decode<M: CaptionModel>(model: &M, max_len: usize) -> Result<Vec<usize>> {
    if max_len < 1 {
        return Err(Error::InvalidInput("max_len must be at least 1".into()));
    }
    let mut state = model.start();
    let mut ids = Vec::new();
    let mut token = BOS;
    while ids.len() < max_len {
        let logits = model.step(&mut state, token)?;
        token = argmax(&logits);
        ids.push(token);
        if token == EOS {
            break;
        }
    }
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredHypothesis {
    /// Generated ids without the leading BOS.
    pub ids: Vec<usize>,
    /// Cumulative natural-log probability.
    pub logprob: f64,
    pub finished: bool,
    /// `logprob / length_penalty(ids.len(), alpha)`.
    pub score: f64,
}

impl ScoredHypothesis {
    /// Ids with a trailing EOS removed.
    pub fn caption_ids(&self) -> &[usize] {
        match self.ids.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.ids,
        }
    }
}

struct Live<S> {
    ids: Vec<usize>,
    logprob: f64,
    state: S,
}

/// Descending score, then lexicographically smaller ids first.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search over all vocabulary tokens. Each step ranks every extension
/// of every live hypothesis by penalized score and keeps the best `beam`;
/// extensions ending in EOS or reaching `max_len` retire to a pool of
/// capacity `beam`. Returns the pool best first.
pub fn beam_search<M: CaptionModel>(model: &M, beam: usize, alpha: f64, max_len: usize) -> Result<Vec<ScoredHypothesis>> {
    if beam < 1 {
        return Err(Error::InvalidInput("beam size must be at least 1".into()));
    }
    if max_len < 1 {
        return Err(Error::InvalidInput("max_len must be at least 1".into()));
    }
    let mut live = vec![Live {
        ids: Vec::new(),
        logprob: 0.0,
        state: model.start(),
    }];
    let mut pool: Vec<ScoredHypothesis> = Vec::new();
    while !live.is_empty() {
        let mut cands: Vec<(usize, usize, f64, f64)> = Vec::new();
        for (h, hyp) in live.iter_mut().enumerate() {
            let token = hyp.ids.last().copied().unwrap_or(BOS);
            let logits = model.step(&mut hyp.state, token)?;
            let lp = log_softmax(&logits);
            let penalty = length_penalty(hyp.ids.len() + 1, alpha)?;
            for (tok, &l) in lp.iter().enumerate() {
                let total = hyp.logprob + l;
                cands.push((h, tok, total, total / penalty));
            }
        }
        let key = |c: &(usize, usize, f64, f64)| {
            let mut ids = live[c.0].ids.clone();
            ids.push(c.1);
            (c.3, ids)
        };
        let mut keyed: Vec<_> = cands.iter().map(|c| (key(c), *c)).collect();
        keyed.sort_by(|a, b| rank((a.0 .0, &a.0 .1), (b.0 .0, &b.0 .1)));
        keyed.truncate(beam);
        let mut next = Vec::new();
        for ((score, ids), (h, tok, logprob, _)) in keyed {
            let finished = tok == EOS;
            if finished || ids.len() >= max_len {
                pool.push(ScoredHypothesis {
                    ids,
                    logprob,
                    finished,
                    score,
                });
            } else {
                next.push(Live {
                    ids,
                    logprob,
                    state: live[h].state.clone(),
                });
            }
        }
        pool.sort_by(|a, b| rank((a.score, &a.ids), (b.score, &b.ids)));
        pool.truncate(beam);
        live = next;
    }
    Ok(pool)
}
