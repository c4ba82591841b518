//! Token-boundary phrase matching over normalized text.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EntityError;
use crate::sectioner::{normalize_text, ShortSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconSource {
    Builtin,
    Imported,
}

/// A set of normalized phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityLexicon {
    phrases: BTreeSet<String>,
    source: LexiconSource,
}

impl EntityLexicon {
    /// Normalizes every phrase; phrases that normalize to nothing are dropped.
    pub fn new<I, S>(phrases: I, source: LexiconSource) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let phrases = phrases
            .into_iter()
            .map(|p| normalize_text(p.as_ref()))
            .filter(|p| !p.is_empty())
            .collect();
        EntityLexicon { phrases, source }
    }

    /// One phrase per line; blank lines and `#` comments are ignored.
    pub fn parse<R: BufRead>(input: R, source: LexiconSource) -> Result<Self, EntityError> {
        let mut phrases = Vec::new();
        for line in input.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            phrases.push(t.to_string());
        }
        Ok(EntityLexicon::new(phrases, source))
    }

    pub fn load(path: &Path, source: LexiconSource) -> Result<Self, EntityError> {
        let file = std::fs::File::open(path).map_err(|e| EntityError::File {
            path: path.display().to_string(),
            source: e,
        })?;
        EntityLexicon::parse(std::io::BufReader::new(file), source)
    }

    pub fn phrases(&self) -> &BTreeSet<String> {
        &self.phrases
    }

    pub fn source(&self) -> LexiconSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity: String,
    pub doc_id: String,
    /// Byte offsets into the summary text. Imported mentions whose phrase
    /// does not occur in the text carry no span.
    pub span: Option<Span>,
}

/// Byte ranges of space-separated tokens.
pub(crate) fn token_spans(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push(Span { start: s, end: i });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push(Span { start: s, end: text.len() });
    }
    spans
}

/// Phrase lookup keyed by the exact single-spaced phrase text.
#[derive(Debug, Clone, Default)]
pub struct PhraseIndex {
    phrases: HashSet<String>,
    max_tokens: usize,
}

impl PhraseIndex {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut index = PhraseIndex::default();
        for p in phrases {
            let p = p.as_ref();
            if p.is_empty() {
                continue;
            }
            index.max_tokens = index.max_tokens.max(p.split(' ').count());
            index.phrases.insert(p.to_string());
        }
        index
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.phrases.contains(phrase)
    }

    /// Candidate phrase starting at token `i` and spanning `len` tokens.
    /// Normalized text has single spaces, so the slice is the phrase itself.
    fn window<'t>(text: &'t str, tokens: &[Span], i: usize, len: usize) -> &'t str {
        &text[tokens[i].start..tokens[i + len - 1].end]
    }

    /// Leftmost, longest-first, non-overlapping matches.
    pub fn longest_matches(&self, text: &str) -> Vec<(Span, &str)> {
        let tokens = token_spans(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let max = self.max_tokens.min(tokens.len() - i);
            let found = (1..=max).rev().find_map(|len| {
                let w = Self::window(text, &tokens, i, len);
                self.phrases.get(w).map(|p| (len, p.as_str()))
            });
            match found {
                Some((len, phrase)) => {
                    out.push((
                        Span {
                            start: tokens[i].start,
                            end: tokens[i + len - 1].end,
                        },
                        phrase,
                    ));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Every phrase occurring anywhere in `text` at token boundaries,
    /// nested occurrences included.
    pub fn present(&self, text: &str) -> BTreeSet<&str> {
        let tokens = token_spans(text);
        let mut out = BTreeSet::new();
        for i in 0..tokens.len() {
            let max = self.max_tokens.min(tokens.len() - i);
            for len in 1..=max {
                if let Some(p) = self.phrases.get(Self::window(text, &tokens, i, len)) {
                    out.insert(p.as_str());
                }
            }
        }
        out
    }

    /// All token-boundary occurrences of one phrase.
    pub fn occurrences(text: &str, phrase: &str) -> Vec<Span> {
        let tokens = token_spans(text);
        let n = phrase.split(' ').count();
        if phrase.is_empty() || n > tokens.len() {
            return Vec::new();
        }
        (0..=tokens.len() - n)
            .filter(|&i| Self::window(text, &tokens, i, n) == phrase)
            .map(|i| Span {
                start: tokens[i].start,
                end: tokens[i + n - 1].end,
            })
            .collect()
    }
}

/// Source of entity mentions for a summary.
pub trait EntityExtractor {
    fn extract(&self, summary: &ShortSummary) -> Vec<EntityMention>;
}

/// Built-in gazetteer matcher.
#[derive(Debug, Clone)]
pub struct LexiconMatcher {
    index: PhraseIndex,
}

impl LexiconMatcher {
    pub fn new(lexicon: &EntityLexicon) -> Self {
        LexiconMatcher {
            index: PhraseIndex::new(lexicon.phrases()),
        }
    }
}

impl EntityExtractor for LexiconMatcher {
    fn extract(&self, summary: &ShortSummary) -> Vec<EntityMention> {
        self.index
            .longest_matches(&summary.text)
            .into_iter()
            .map(|(span, phrase)| EntityMention {
                entity: phrase.to_string(),
                doc_id: summary.admission_id.clone(),
                span: Some(span),
            })
            .collect()
    }
}

/// One line of an annotation import file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub entities: Vec<String>,
}

/// Mentions produced by an external extractor, keyed by document.
#[derive(Debug, Clone, Default)]
pub struct ImportedAnnotations {
    by_doc: BTreeMap<String, Vec<String>>,
}

impl ImportedAnnotations {
    pub fn new(records: Vec<AnnotationRecord>) -> Self {
        let mut by_doc: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records {
            by_doc.entry(r.doc_id).or_default().extend(
                r.entities
                    .iter()
                    .map(|e| normalize_text(e))
                    .filter(|e| !e.is_empty()),
            );
        }
        ImportedAnnotations { by_doc }
    }

    pub fn load(path: &Path) -> Result<Self, EntityError> {
        let file = std::fs::File::open(path).map_err(|e| EntityError::File {
            path: path.display().to_string(),
            source: e,
        })?;
        let records = crate::corpus::read_jsonl(std::io::BufReader::new(file))
            .map_err(|e| EntityError::Annotation(e.to_string()))?;
        Ok(ImportedAnnotations::new(records))
    }

    /// Fails when annotations reference documents outside the corpus.
    pub fn validate_against<'a, I>(&self, corpus_ids: I) -> Result<(), EntityError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let known: HashSet<&str> = corpus_ids.into_iter().collect();
        let unknown: Vec<String> = self
            .by_doc
            .keys()
            .filter(|id| !known.contains(id.as_str()))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(EntityError::UnknownDocs(unknown))
        }
    }
}

impl EntityExtractor for ImportedAnnotations {
    fn extract(&self, summary: &ShortSummary) -> Vec<EntityMention> {
        let Some(entities) = self.by_doc.get(&summary.admission_id) else {
            return Vec::new();
        };
        let mut used: BTreeMap<&str, usize> = BTreeMap::new();
        entities
            .iter()
            .map(|e| {
                // the k-th mention of a phrase takes its k-th occurrence
                let k = used.entry(e.as_str()).or_insert(0);
                let span = PhraseIndex::occurrences(&summary.text, e).get(*k).copied();
                *k += 1;
                EntityMention {
                    entity: e.clone(),
                    doc_id: summary.admission_id.clone(),
                    span,
                }
            })
            .collect()
    }
}
