//! Word-level caption tokenization, BOS/EOS framing and batch padding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[BOS]", "[EOS]", "[UNK]"];

/// Lowercases, removes ASCII punctuation and collapses whitespace.
pub fn normalize_caption(text: &str) -> String {
    tokenize(text).join(" ")
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::InvalidInput(format!(
                "vocabulary must start with the special tokens {SPECIALS:?}"
            )));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary entry `{tok}`")));
            }
        }
        Ok(Self {
            id_to_token: tokens,
            token_to_id,
        })
    }

    /// Words with frequency ≥ `min_count`, ordered by descending frequency then
    /// lexicographically, after the four special tokens.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for caption in corpus {
            for word in tokenize(caption.as_ref()) {
                *counts.entry(word).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::InvalidInput("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !SPECIALS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.id_to_token.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    /// `x_t = [BOS, t_1..t_N]`, `y_t = [t_1..t_N, EOS]`; unknown words map to UNK.
    pub fn encode(&self, caption: &str) -> TokenSequence {
        let ids: Vec<usize> = tokenize(caption)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect();
        let mut input_ids = Vec::with_capacity(ids.len() + 1);
        input_ids.push(BOS);
        input_ids.extend_from_slice(&ids);
        let mut target_ids = ids;
        target_ids.push(EOS);
        let pad_mask = vec![true; input_ids.len()];
        TokenSequence {
            input_ids,
            target_ids,
            pad_mask,
        }
    }

    /// Stops at the first EOS, skips BOS/PAD and joins words with single spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::UnknownToken(id))?;
            match id {
                EOS => break,
                BOS | PAD => continue,
                _ => words.push(tok),
            }
        }
        Ok(words.join(" "))
    }
}

/// Teacher-forcing pair for one caption: `target_ids[i] == input_ids[i + 1]`
/// on real positions, and `pad_mask` is true on real tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub input_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub pad_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    /// The BOS-prefixed, EOS-terminated real token stream.
    pub fn full_sequence(&self) -> Vec<usize> {
        let n = self.real_len();
        let mut ids = self.input_ids[..n].to_vec();
        ids.push(self.target_ids[n - 1]);
        ids
    }

    pub fn padded_to(&self, len: usize) -> TokenSequence {
        let mut out = self.clone();
        if len > out.len() {
            out.input_ids.resize(len, PAD);
            out.target_ids.resize(len, PAD);
            out.pad_mask.resize(len, false);
        }
        out
    }
}

pub fn encode_caption(v: &Vocabulary, caption: &str) -> TokenSequence {
    v.encode(caption)
}

pub fn decode_ids(v: &Vocabulary, ids: &[usize]) -> Result<String> {
    v.decode(ids)
}

/// Right-pads every sequence with PAD to the longest length in the batch.
pub fn pad_batch(batch: &[TokenSequence]) -> Vec<TokenSequence> {
    let len = batch.iter().map(TokenSequence::len).max().unwrap_or(0);
    batch.iter().map(|s| s.padded_to(len)).collect()
}
