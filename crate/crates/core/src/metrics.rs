//! Corpus-level caption metrics: BLEU 1-4, ROUGE-L and CIDEr-D.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    /// Tokenizes raw caption strings with the caption normalizer.
    pub fn from_text<S: AsRef<str>>(id: impl Into<String>, candidate: &str, references: &[S]) -> Result<Self> {
        let pair = Self {
            id: id.into(),
            candidate: tokenize(candidate),
            references: references.iter().map(|r| tokenize(r.as_ref())).collect(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::InvalidInput(format!("pair `{}` has no references", self.id)));
        }
        Ok(())
    }
}

fn check_corpus(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty evaluation corpus".into()));
    }
    pairs.iter().try_for_each(EvalPair::validate)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n >= 1 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Reference length closest to `c`, shorter on ties.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Corpus BLEU with uniform weights over 1..=n and the brevity penalty.
pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64> {
    check_corpus(pairs)?;
    if !(1..=4).contains(&n) {
        return Err(Error::InvalidInput(format!("BLEU order {n} outside 1..=4")));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for p in pairs {
        cand_len += p.candidate.len();
        ref_len += closest_ref_len(p.candidate.len(), &p.references);
        for k in 1..=n {
            let cand = ngram_counts(&p.candidate, k);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &p.references {
                for (g, c) in ngram_counts(r, k) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in cand {
                matched[k - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
                total[k - 1] += c;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        if matched[k] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[k] as f64 / total[k] as f64).ln();
    }
    let bp = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(bp * (log_sum / n as f64).exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure of one candidate against one reference.
pub fn rouge_l_single(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over pairs of the best per-reference ROUGE-L F-measure.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    check_corpus(pairs)?;
    let total: f64 = pairs
        .iter()
        .map(|p| {
            p.references
                .iter()
                .map(|r| rouge_l_single(&p.candidate, r))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

struct TfIdf {
    vecs: [HashMap<Vec<String>, f64>; 4],
    norms: [f64; 4],
    len: usize,
}

fn tf_idf(tokens: &[String], df: &HashMap<Vec<String>, usize>, log_n: f64) -> TfIdf {
    let mut vecs: [HashMap<Vec<String>, f64>; 4] = Default::default();
    let mut norms = [0.0; 4];
    for k in 1..=4 {
        for (g, c) in ngram_counts(tokens, k) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = c as f64 * (log_n - d.ln());
            norms[k - 1] += w * w;
            vecs[k - 1].insert(g.to_vec(), w);
        }
        norms[k - 1] = norms[k - 1].sqrt();
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim(c: &TfIdf, r: &TfIdf) -> [f64; 4] {
    let delta = c.len as f64 - r.len as f64;
    let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; 4];
    for k in 0..4 {
        let mut v = 0.0;
        for (g, &w) in &c.vecs[k] {
            if let Some(&wr) = r.vecs[k].get(g) {
                v += w.min(wr) * wr;
            }
        }
        if c.norms[k] != 0.0 && r.norms[k] != 0.0 {
            v /= c.norms[k] * r.norms[k];
        }
        out[k] = v * gauss;
    }
    out
}

/// Per-pair CIDEr-D scores; document frequencies come from the references.
pub fn cider_per_pair(pairs: &[EvalPair]) -> Result<Vec<f64>> {
    check_corpus(pairs)?;
    let ids: HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    if ids.len() != pairs.len() {
        return Err(Error::InvalidInput("CIDEr needs one pair per id".into()));
    }
    if pairs.len() < 2 {
        return Err(Error::InvalidInput("CIDEr needs at least two images".into()));
    }
    let mut df: HashMap<Vec<String>, usize> = HashMap::new();
    for p in pairs {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in &p.references {
            for k in 1..=4 {
                seen.extend(ngram_counts(r, k).into_keys());
            }
        }
        for g in seen {
            *df.entry(g.to_vec()).or_insert(0) += 1;
        }
    }
    let log_n = (pairs.len() as f64).ln();
    Ok(pairs
        .iter()
        .map(|p| {
            let c = tf_idf(&p.candidate, &df, log_n);
            let mut acc = [0.0; 4];
            for r in &p.references {
                let s = cider_sim(&c, &tf_idf(r, &df, log_n));
                acc.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            }
            let mean_k = acc.iter().sum::<f64>() / 4.0;
            mean_k / p.references.len() as f64 * CIDER_SCALE
        })
        .collect())
}

pub fn cider(pairs: &[EvalPair]) -> Result<f64> {
    let s = cider_per_pair(pairs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spider: Option<f64>,
}

/// All metrics; SPIDEr is reported only when a SPICE score is supplied.
pub fn evaluate_corpus(pairs: &[EvalPair], spice: Option<f64>) -> Result<EvalReport> {
    let cider = cider(pairs)?;
    Ok(EvalReport {
        bleu1: bleu_n(pairs, 1)?,
        bleu2: bleu_n(pairs, 2)?,
        bleu3: bleu_n(pairs, 3)?,
        bleu4: bleu_n(pairs, 4)?,
        rouge_l: rouge_l(pairs)?,
        cider,
        spider: spice.map(|s| (s + cider) / 2.0),
    })
}
