//! Summed-weight categorization, threshold sweeps, band analysis and
//! per-document interpretation.
//!
//! A summary's score is the exact sum of the weights of the distinct
//! weight-set entities occurring in it. It belongs to the chapter when the
//! score is strictly above the threshold; a score equal to the threshold
//! goes to REST.
//!
//! Bands are half-open `(lower, upper]` intervals so that a band never
//! straddles the operating threshold under the tie-to-REST rule. A band
//! whose lower edge is 0 also holds summaries scoring exactly 0, so edges
//! starting at 0 partition every score.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entities::{PhraseIndex, Span, WeightedEntitySet};
use crate::sectioner::ShortSummary;
use crate::weight::Weight;

#[derive(Debug, Error, PartialEq)]
pub enum CategorizeError {
    #[error("no label for document {0:?}")]
    MissingLabel(String),
    #[error("band ({lower}, {upper}] is empty or inverted")]
    InvertedBand { lower: Weight, upper: Weight },
    #[error("bands ({0}) and ({1}) overlap")]
    OverlappingBands(String, String),
    #[error("band edges must be strictly increasing")]
    EdgesNotIncreasing,
    #[error("band {band} straddles the operating threshold {tau}")]
    StraddlesThreshold { band: String, tau: Weight },
    #[error("document {0:?} not found in run")]
    NotFound(String),
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(Weight),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Chapter,
    Rest,
}

impl Class {
    pub fn label(self) -> u8 {
        match self {
            Class::Chapter => 1,
            Class::Rest => 0,
        }
    }

    pub fn from_label(label: u8) -> Self {
        if label == 1 {
            Class::Chapter
        } else {
            Class::Rest
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Chapter => "chapter",
            Class::Rest => "rest",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedEntity {
    pub entity: String,
    pub weight: Weight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub doc_id: String,
    /// Distinct matched entities, sorted by entity.
    pub matched: Vec<MatchedEntity>,
    pub sum: Weight,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Class>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<String>,
}

/// Weight set plus its phrase index, reusable across documents.
#[derive(Debug, Clone)]
pub struct Scorer<'w> {
    weights: &'w WeightedEntitySet,
    index: PhraseIndex,
}

impl<'w> Scorer<'w> {
    pub fn new(weights: &'w WeightedEntitySet) -> Self {
        Scorer {
            weights,
            index: PhraseIndex::new(weights.entities()),
        }
    }

    pub fn score(&self, summary: &ShortSummary) -> ScoreReport {
        let matched: Vec<MatchedEntity> = self
            .index
            .present(&summary.text)
            .into_iter()
            .map(|e| MatchedEntity {
                entity: e.to_string(),
                weight: self.weights.get(e).expect("indexed entity has a weight"),
            })
            .collect();
        let sum = matched.iter().map(|m| m.weight).sum();
        ScoreReport {
            doc_id: summary.admission_id.clone(),
            matched,
            sum,
            predicted: None,
            band: None,
        }
    }
}

pub fn score_summary(summary: &ShortSummary, weights: &WeightedEntitySet) -> ScoreReport {
    Scorer::new(weights).score(summary)
}

/// Chapter iff `sum > tau`.
pub fn classify_threshold(sum: Weight, tau: Weight) -> Class {
    if sum > tau {
        Class::Chapter
    } else {
        Class::Rest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: Weight,
    pub positives: usize,
    pub negatives: usize,
    /// Label-1 documents scoring above tau.
    pub class1_rate: f64,
    /// Label-0 documents scoring above tau.
    pub class0_leakage: f64,
    /// Label-0 documents at or below tau (`1 - leakage`).
    pub class0_rest_rate: f64,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn label_of(labels: &BTreeMap<String, u8>, doc_id: &str) -> Result<u8, CategorizeError> {
    labels
        .get(doc_id)
        .copied()
        .ok_or_else(|| CategorizeError::MissingLabel(doc_id.to_string()))
}

pub fn sweep_thresholds(
    reports: &[ScoreReport],
    labels: &BTreeMap<String, u8>,
    taus: &[Weight],
) -> Result<Vec<SweepRow>, CategorizeError> {
    let scored: Vec<(u8, Weight)> = reports
        .iter()
        .map(|r| Ok((label_of(labels, &r.doc_id)?, r.sum)))
        .collect::<Result<_, CategorizeError>>()?;
    let positives = scored.iter().filter(|(l, _)| *l == 1).count();
    let negatives = scored.len() - positives;
    Ok(taus
        .iter()
        .map(|&tau| {
            let above = |label| {
                scored
                    .iter()
                    .filter(|(l, s)| *l == label && classify_threshold(*s, tau) == Class::Chapter)
                    .count()
            };
            let pos_above = above(1);
            let neg_above = above(0);
            SweepRow {
                tau,
                positives,
                negatives,
                class1_rate: ratio(pos_above, positives),
                class0_leakage: ratio(neg_above, negatives),
                class0_rest_rate: ratio(negatives - neg_above, negatives),
            }
        })
        .collect())
}

/// A score interval `(lower, upper]`; closed at 0 when `lower` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Weight,
    pub upper: Weight,
}

impl Band {
    pub fn new(lower: Weight, upper: Weight) -> Result<Self, CategorizeError> {
        if lower >= upper || lower < Weight::ZERO {
            return Err(CategorizeError::InvertedBand { lower, upper });
        }
        Ok(Band { lower, upper })
    }

    /// Contiguous bands between consecutive edges.
    pub fn from_edges(edges: &[Weight]) -> Result<Vec<Band>, CategorizeError> {
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CategorizeError::EdgesNotIncreasing);
        }
        edges.windows(2).map(|w| Band::new(w[0], w[1])).collect()
    }

    pub fn contains(&self, sum: Weight) -> bool {
        (sum > self.lower || (self.lower == Weight::ZERO && sum == Weight::ZERO))
            && sum <= self.upper
    }

    /// Stable identifier, e.g. `1-1.5`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.lower, self.upper)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}]", self.lower, self.upper)
    }
}

/// Which label a band is expected to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Above the operating threshold; label-0 documents are errors.
    ExpectChapter,
    /// At or below the operating threshold; label-1 documents are errors.
    ExpectRest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStat {
    pub band: Band,
    pub id: String,
    pub orientation: Orientation,
    pub count_chapter: usize,
    pub count_rest: usize,
    pub share: f64,
    pub impurity: f64,
    pub faulty: bool,
}

pub const DEFAULT_IMPURITY_CUTOFF: f64 = 0.25;

impl BandStat {
    pub fn from_counts(
        band: Band,
        orientation: Orientation,
        count_chapter: usize,
        count_rest: usize,
        corpus_total: usize,
        impurity_cutoff: f64,
    ) -> Self {
        let total = count_chapter + count_rest;
        let wrong = match orientation {
            Orientation::ExpectChapter => count_rest,
            Orientation::ExpectRest => count_chapter,
        };
        let impurity = ratio(wrong, total);
        BandStat {
            id: band.id(),
            band,
            orientation,
            count_chapter,
            count_rest,
            share: ratio(total, corpus_total),
            impurity,
            faulty: total > 0 && impurity > impurity_cutoff,
        }
    }

    pub fn total(&self) -> usize {
        self.count_chapter + self.count_rest
    }
}

fn orientation_of(band: &Band, tau: Weight) -> Result<Orientation, CategorizeError> {
    if band.lower >= tau {
        Ok(Orientation::ExpectChapter)
    } else if band.upper <= tau {
        Ok(Orientation::ExpectRest)
    } else {
        Err(CategorizeError::StraddlesThreshold {
            band: band.to_string(),
            tau,
        })
    }
}

/// Validates that bands are sorted and pairwise disjoint.
pub fn validate_bands(bands: &[Band]) -> Result<(), CategorizeError> {
    for b in bands {
        Band::new(b.lower, b.upper)?;
    }
    let mut sorted: Vec<&Band> = bands.iter().collect();
    sorted.sort_by_key(|b| (b.lower, b.upper));
    for w in sorted.windows(2) {
        if w[1].lower < w[0].upper {
            return Err(CategorizeError::OverlappingBands(w[0].id(), w[1].id()));
        }
    }
    Ok(())
}

/// Per-band label counts, share of the corpus and impurity relative to
/// the operating threshold `tau`.
pub fn band_analysis(
    reports: &[ScoreReport],
    labels: &BTreeMap<String, u8>,
    bands: &[Band],
    tau: Weight,
    impurity_cutoff: f64,
) -> Result<Vec<BandStat>, CategorizeError> {
    validate_bands(bands)?;
    let orientations: Vec<Orientation> = bands
        .iter()
        .map(|b| orientation_of(b, tau))
        .collect::<Result<_, _>>()?;
    let mut counts = vec![(0usize, 0usize); bands.len()];
    for r in reports {
        let label = label_of(labels, &r.doc_id)?;
        if let Some(i) = bands.iter().position(|b| b.contains(r.sum)) {
            if label == 1 {
                counts[i].0 += 1;
            } else {
                counts[i].1 += 1;
            }
        }
    }
    Ok(bands
        .iter()
        .zip(orientations)
        .zip(counts)
        .map(|((band, o), (c1, c0))| {
            BandStat::from_counts(*band, o, c1, c0, reports.len(), impurity_cutoff)
        })
        .collect())
}

/// Assigns predictions and band ids to reports in place.
pub fn classify_reports(reports: &mut [ScoreReport], tau: Weight, bands: &[Band]) {
    for r in reports {
        r.predicted = Some(classify_threshold(r.sum, tau));
        r.band = bands.iter().find(|b| b.contains(r.sum)).map(Band::id);
    }
}

/// Everything needed to explain one run's categorizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategorizationRun {
    pub tau: Weight,
    pub band_stats: Vec<BandStat>,
    pub reports: Vec<ScoreReport>,
    /// Summary text by document id, used for highlighting.
    #[serde(default)]
    pub texts: BTreeMap<String, String>,
}

impl CategorizationRun {
    pub fn report(&self, doc_id: &str) -> Option<&ScoreReport> {
        self.reports.iter().find(|r| r.doc_id == doc_id)
    }

    pub fn faulty_bands(&self) -> BTreeSet<&str> {
        self.band_stats
            .iter()
            .filter(|b| b.faulty)
            .map(|b| b.id.as_str())
            .collect()
    }

    pub fn band_stat(&self, sum: Weight) -> Option<&BandStat> {
        self.band_stats.iter().find(|b| b.band.contains(sum))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityEvidence {
    pub entity: String,
    pub weight: Weight,
    /// Every token-boundary occurrence in the summary.
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationReport {
    pub doc_id: String,
    pub matched: Vec<EntityEvidence>,
    pub sum: Weight,
    pub tau: Weight,
    pub predicted: Class,
    pub band: Option<String>,
    pub band_impurity: Option<f64>,
    pub flagged_for_review: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Non-overlapping highlight spans (longest phrase first).
    pub highlights: Vec<Highlight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub entity: String,
    pub start: usize,
    pub end: usize,
    pub weight: Weight,
}

pub fn interpret(doc_id: &str, run: &CategorizationRun) -> Result<InterpretationReport, CategorizeError> {
    let report = run
        .report(doc_id)
        .ok_or_else(|| CategorizeError::NotFound(doc_id.to_string()))?;
    let text = run.texts.get(doc_id);
    let matched = report
        .matched
        .iter()
        .map(|m| EntityEvidence {
            entity: m.entity.clone(),
            weight: m.weight,
            spans: text
                .map(|t| PhraseIndex::occurrences(t, &m.entity))
                .unwrap_or_default(),
        })
        .collect();
    let highlights = text
        .map(|t| {
            let index = PhraseIndex::new(report.matched.iter().map(|m| m.entity.as_str()));
            let weights: BTreeMap<&str, Weight> =
                report.matched.iter().map(|m| (m.entity.as_str(), m.weight)).collect();
            index
                .longest_matches(t)
                .into_iter()
                .map(|(span, e)| Highlight {
                    entity: e.to_string(),
                    start: span.start,
                    end: span.end,
                    weight: weights[e],
                })
                .collect()
        })
        .unwrap_or_default();
    let stat = run.band_stat(report.sum);
    Ok(InterpretationReport {
        doc_id: doc_id.to_string(),
        matched,
        sum: report.sum,
        tau: run.tau,
        predicted: classify_threshold(report.sum, run.tau),
        band: stat.map(|s| s.id.clone()),
        band_impurity: stat.map(|s| s.impurity),
        flagged_for_review: stat.is_some_and(|s| s.faulty),
        text: text.cloned(),
        highlights,
    })
}
