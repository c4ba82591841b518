use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::NnError;

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;

/// Token ids: 0 is padding, 1 is out-of-vocabulary, kept tokens start at 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_tokens(r.tokens)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens }
    }
}

impl Vocab {
    /// `tokens[i]` gets id `i + 2`; duplicates keep their first id.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ids.entry(t.clone()).or_insert(i as u32 + 2);
        }
        Vocab { tokens, ids }
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        id.checked_sub(2)
            .and_then(|i| self.tokens.get(i as usize))
            .map(String::as_str)
    }

    /// Number of ids including the two reserved ones.
    pub fn size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Keeps tokens seen at least `min_count` times, ordered by count
/// descending then token text.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize) -> Result<Vocab, NnError>
where
    I: IntoIterator<Item = &'a str>,
{
    let min_count = min_count.max(1);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut docs = 0;
    for doc in corpus {
        docs += 1;
        for tok in doc.split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(NnError::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect()))
}

/// First `max_len` token ids, right-padded with [`PAD_ID`].
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = text.split_whitespace().take(max_len).map(|t| vocab.id(t)).collect();
    ids.resize(max_len, PAD_ID);
    ids
}
