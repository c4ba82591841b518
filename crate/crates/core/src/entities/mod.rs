//! Chapter entity sets: extraction, prevalence ranking and weighting.

mod matcher;
mod weights;

use thiserror::Error;

pub use matcher::{
    AnnotationRecord, EntityExtractor, EntityLexicon, EntityMention, ImportedAnnotations,
    LexiconMatcher, LexiconSource, PhraseIndex, Span,
};
pub use weights::{
    clean_entity_list, debias, default_stop_list, doc_frequency_weights, influence, top_prevalent,
    InfluenceConfig, Provenance, RankedEntity, Stage, WeightEntry, WeightRecord,
    WeightedEntitySet, DEFAULT_MIN_LEN,
};

use crate::weight::Weight;

#[derive(Debug, Error)]
pub enum EntityError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotation file: {0}")]
    Annotation(String),
    #[error("annotations reference documents not in the corpus: {}", .0.join(", "))]
    UnknownDocs(Vec<String>),
    #[error("cannot weight entities over an empty corpus")]
    EmptyCorpus,
    #[error("entity lists differ: {}", .0.join(", "))]
    AsymmetricEntities(Vec<String>),
    #[error("{what} must be at stage {expected}, found {found}")]
    WrongStage {
        what: &'static str,
        expected: Stage,
        found: Stage,
    },
    #[error("weight {weight} for {entity:?} violates the {stage} stage bounds")]
    StageInvariant {
        stage: Stage,
        entity: String,
        weight: Weight,
    },
    #[error("influencing needs at least one curated term")]
    NoCuratedTerms,
    #[error("weight file: {0}")]
    WeightFile(String),
}
