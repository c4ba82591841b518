//! Entity ranking, document-frequency weights, de-biasing and influencing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::matcher::{EntityMention, PhraseIndex};
use super::EntityError;
use crate::sectioner::{normalize_text, ShortSummary};
use crate::weight::Weight;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Debiased,
    Influenced,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Raw => "raw",
            Stage::Debiased => "debiased",
            Stage::Influenced => "influenced",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Frequency,
    Injected,
    Doubled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightEntry {
    pub weight: Weight,
    pub provenance: Provenance,
}

/// One line of a weight-set file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub entity: String,
    pub weight: Weight,
    pub stage: Stage,
    pub provenance: Provenance,
}

/// Entity weights at one stage of the weighting pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedEntitySet {
    stage: Stage,
    entries: BTreeMap<String, WeightEntry>,
}

const MAX_RAW: Weight = Weight::from_hundredths(100);
const MAX_ANY: Weight = Weight::from_hundredths(200);

impl WeightedEntitySet {
    /// Builds a set, checking the stage invariants.
    pub fn new(stage: Stage, entries: BTreeMap<String, WeightEntry>) -> Result<Self, EntityError> {
        for (entity, entry) in &entries {
            let w = entry.weight;
            let ok = match stage {
                Stage::Raw => w >= Weight::ZERO && w <= MAX_RAW,
                Stage::Debiased => w > Weight::ZERO && w <= MAX_RAW,
                Stage::Influenced => w > Weight::ZERO && w <= MAX_ANY,
            };
            if !ok || entity.is_empty() {
                return Err(EntityError::StageInvariant {
                    stage,
                    entity: entity.clone(),
                    weight: w,
                });
            }
        }
        Ok(WeightedEntitySet { stage, entries })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn get(&self, entity: &str) -> Option<Weight> {
        self.entries.get(entity).map(|e| e.weight)
    }

    pub fn entry(&self, entity: &str) -> Option<&WeightEntry> {
        self.entries.get(entity)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WeightEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> Vec<WeightRecord> {
        self.entries
            .iter()
            .map(|(entity, e)| WeightRecord {
                entity: entity.clone(),
                weight: e.weight,
                stage: self.stage,
                provenance: e.provenance,
            })
            .collect()
    }

    pub fn from_records(records: Vec<WeightRecord>) -> Result<Self, EntityError> {
        let Some(stage) = records.first().map(|r| r.stage) else {
            return Err(EntityError::WeightFile("no records".into()));
        };
        let mut entries = BTreeMap::new();
        for r in records {
            if r.stage != stage {
                return Err(EntityError::WeightFile(format!(
                    "mixed stages {stage} and {}",
                    r.stage
                )));
            }
            let entry = WeightEntry {
                weight: r.weight,
                provenance: r.provenance,
            };
            if entries.insert(r.entity.clone(), entry).is_some() {
                return Err(EntityError::WeightFile(format!("duplicate entity {:?}", r.entity)));
            }
        }
        WeightedEntitySet::new(stage, entries)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), EntityError> {
        for r in self.records() {
            serde_json::to_writer(&mut out, &r)
                .map_err(|e| EntityError::WeightFile(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, EntityError> {
        let records: Vec<WeightRecord> = crate::corpus::read_jsonl(input)
            .map_err(|e| EntityError::WeightFile(e.to_string()))?;
        WeightedEntitySet::from_records(records)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedEntity {
    pub entity: String,
    pub doc_count: usize,
}

/// Ranks entities by the number of distinct documents mentioning them,
/// ties broken lexicographically, and keeps the first `n`.
pub fn top_prevalent<'a, I>(mentions_by_doc: I, n: usize) -> Vec<RankedEntity>
where
    I: IntoIterator<Item = &'a [EntityMention]>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for mentions in mentions_by_doc {
        let distinct: BTreeSet<&str> = mentions.iter().map(|m| m.entity.as_str()).collect();
        for e in distinct {
            *counts.entry(e).or_default() += 1;
        }
    }
    let mut ranked: Vec<RankedEntity> = counts
        .into_iter()
        .map(|(entity, doc_count)| RankedEntity {
            entity: entity.to_string(),
            doc_count,
        })
        .collect();
    ranked.sort_by(|a, b| b.doc_count.cmp(&a.doc_count).then_with(|| a.entity.cmp(&b.entity)));
    ranked.truncate(n);
    ranked
}

/// Function words plus generic entities that carry no chapter signal.
pub fn default_stop_list() -> BTreeSet<String> {
    [
        "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it",
        "no", "not", "of", "on", "or", "that", "the", "to", "was", "were", "with",
        "pain", "htn",
    ]
    .into_iter()
    .map(str::to_string)
    .collect()
}

pub const DEFAULT_MIN_LEN: usize = 2;

/// Drops stop-listed entities and entities shorter than `min_len`
/// characters, keeping order.
pub fn clean_entity_list(
    entities: &[String],
    stop_list: &BTreeSet<String>,
    min_len: usize,
) -> Vec<String> {
    entities
        .iter()
        .filter(|e| !stop_list.contains(e.as_str()) && e.chars().count() >= min_len)
        .cloned()
        .collect()
}

/// Fraction of documents containing each entity, rounded half-up to
/// hundredths.
pub fn doc_frequency_weights(
    entities: &[String],
    corpus: &[ShortSummary],
) -> Result<WeightedEntitySet, EntityError> {
    if corpus.is_empty() {
        return Err(EntityError::EmptyCorpus);
    }
    let normalized: Vec<String> = entities.iter().map(|e| normalize_text(e)).collect();
    let index = PhraseIndex::new(&normalized);
    let mut counts: BTreeMap<&str, u64> = normalized
        .iter()
        .filter(|e| !e.is_empty())
        .map(|e| (e.as_str(), 0))
        .collect();
    for doc in corpus {
        for e in index.present(&doc.text) {
            if let Some(c) = counts.get_mut(e) {
                *c += 1;
            }
        }
    }
    let total = corpus.len() as u64;
    let entries = counts
        .into_iter()
        .map(|(e, c)| {
            (
                e.to_string(),
                WeightEntry {
                    weight: Weight::ratio_half_up(c, total),
                    provenance: Provenance::Frequency,
                },
            )
        })
        .collect();
    WeightedEntitySet::new(Stage::Raw, entries)
}

fn require_stage(set: &WeightedEntitySet, stage: Stage, what: &'static str) -> Result<(), EntityError> {
    if set.stage != stage {
        return Err(EntityError::WrongStage {
            what,
            expected: stage,
            found: set.stage,
        });
    }
    Ok(())
}

fn same_entities(set1: &WeightedEntitySet, set2: &WeightedEntitySet) -> Result<(), EntityError> {
    let a: BTreeSet<&str> = set1.entities().collect();
    let b: BTreeSet<&str> = set2.entities().collect();
    if a == b {
        return Ok(());
    }
    let asymmetric = a.symmetric_difference(&b).map(|s| s.to_string()).collect();
    Err(EntityError::AsymmetricEntities(asymmetric))
}

/// Keeps entities whose chapter weight exceeds their REST weight, each
/// weighted by the difference.
pub fn debias(
    set1: &WeightedEntitySet,
    set2: &WeightedEntitySet,
) -> Result<WeightedEntitySet, EntityError> {
    require_stage(set1, Stage::Raw, "chapter weights")?;
    require_stage(set2, Stage::Raw, "rest weights")?;
    same_entities(set1, set2)?;
    let entries = set1
        .entries
        .iter()
        .filter_map(|(entity, e1)| {
            let delta = e1.weight.checked_sub(set2.entries[entity].weight);
            delta.is_positive().then(|| {
                (
                    entity.clone(),
                    WeightEntry {
                        weight: delta,
                        provenance: Provenance::Frequency,
                    },
                )
            })
        })
        .collect();
    WeightedEntitySet::new(Stage::Debiased, entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfluenceConfig {
    curated_terms: BTreeSet<String>,
    pub injected_weight: Weight,
    pub double_margin: Weight,
}

impl InfluenceConfig {
    pub const INJECTED_WEIGHT: Weight = Weight::from_hundredths(50);
    pub const DOUBLE_MARGIN: Weight = Weight::from_hundredths(10);

    pub fn new<I, S>(curated_terms: I) -> Result<Self, EntityError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let curated_terms: BTreeSet<String> = curated_terms
            .into_iter()
            .map(|t| normalize_text(t.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        if curated_terms.is_empty() {
            return Err(EntityError::NoCuratedTerms);
        }
        Ok(InfluenceConfig {
            curated_terms,
            injected_weight: Self::INJECTED_WEIGHT,
            double_margin: Self::DOUBLE_MARGIN,
        })
    }

    pub fn curated_terms(&self) -> &BTreeSet<String> {
        &self.curated_terms
    }
}

/// Injects curated terms at the injected weight and doubles de-biased
/// entities whose chapter-minus-REST delta exceeds the margin.
pub fn influence(
    debiased: &WeightedEntitySet,
    config: &InfluenceConfig,
    set1: &WeightedEntitySet,
    set2: &WeightedEntitySet,
) -> Result<WeightedEntitySet, EntityError> {
    require_stage(debiased, Stage::Debiased, "influence input")?;
    let mut entries = BTreeMap::new();
    for (entity, e) in &debiased.entries {
        let (Some(w1), Some(w2)) = (set1.get(entity), set2.get(entity)) else {
            return Err(EntityError::AsymmetricEntities(vec![entity.clone()]));
        };
        let entry = if w1.checked_sub(w2) > config.double_margin {
            WeightEntry {
                weight: e.weight.doubled(),
                provenance: Provenance::Doubled,
            }
        } else {
            *e
        };
        entries.insert(entity.clone(), entry);
    }
    for term in &config.curated_terms {
        entries.entry(term.clone()).or_insert(WeightEntry {
            weight: config.injected_weight,
            provenance: Provenance::Injected,
        });
    }
    WeightedEntitySet::new(Stage::Influenced, entries)
}
