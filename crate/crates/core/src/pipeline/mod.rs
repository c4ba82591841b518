//! Stage orchestration over a run directory.
//!
//! Each stage reads upstream artifacts from `runs/<run_id>/`, writes its
//! own, and records input and output hashes in `manifest.json`. A stage
//! whose fingerprint (config hash plus input hashes) matches the manifest
//! and whose outputs are intact is skipped.

mod config;
mod manifest;
mod report;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    Env, ModelsConfig, Paths, PipelineConfig, ProcessEnv, SweepTaus, WeightParams, DEFAULT_PORT,
    ENV_ANNOTATIONS, ENV_CURATED_TERMS, ENV_DIAGNOSES, ENV_LEXICON, ENV_NOTES, ENV_PORT,
    ENV_RUNS_DIR, ENV_SECTION_PATTERNS,
};
pub use manifest::{sha256_file, sha256_hex, RunManifest, StageRecord, MANIFEST_FILE};
pub use report::{export_report, ReportKind};
pub use stages::{
    CategorizationArtifact, EntitiesArtifact, IngestStats, Pipeline, RunDir, SectionizeStats,
    StageOutcome, SweepTable, TrainArtifact, TrainedCode, DECISION_LOG,
};

use crate::categorizer::CategorizeError;
use crate::corpus::CorpusError;
use crate::entities::EntityError;
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::review::ReviewError;
use crate::sectioner::SectionError;

/// Exit status for validation failures.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status when an upstream artifact is missing.
pub const EXIT_MISSING_ARTIFACT: i32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{} is missing; run {stage} first", .path.display())]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("unknown stage {0:?}; valid stages: {valid}", valid = Stage::names())]
    UnknownStage(String),
    #[error("unknown report kind {0:?}; valid kinds: {valid}", valid = ReportKind::names())]
    UnknownReportKind(String),
    #[error("{0}")]
    Report(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", .path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Section(#[from] SectionError),
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    Categorize(#[from] CategorizeError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingArtifact { .. } => EXIT_MISSING_ARTIFACT,
            _ => EXIT_VALIDATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Sectionize,
    Entities,
    Weights,
    Categorize,
    Bands,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Sectionize,
        Stage::Entities,
        Stage::Weights,
        Stage::Categorize,
        Stage::Bands,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Sectionize => "sectionize",
            Stage::Entities => "entities",
            Stage::Weights => "weights",
            Stage::Categorize => "categorize",
            Stage::Bands => "bands",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    fn names() -> String {
        Stage::ALL.map(Stage::name).join(", ")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::UnknownStage(s.to_string()))
    }
}
