use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::categorizer::{validate_bands, Band, DEFAULT_IMPURITY_CUTOFF};
use crate::corpus::{LabelSpec, DEFAULT_CATEGORY};
use crate::entities::{default_stop_list, DEFAULT_MIN_LEN};
use crate::nn::{ModelConfig, ModelKind};
use crate::weight::Weight;

/// Environment variables that may override config values. Only paths and
/// the service port can be overridden.
pub const ENV_NOTES: &str = "ICDC_NOTES";
pub const ENV_DIAGNOSES: &str = "ICDC_DIAGNOSES";
pub const ENV_LEXICON: &str = "ICDC_LEXICON";
pub const ENV_CURATED_TERMS: &str = "ICDC_CURATED_TERMS";
pub const ENV_ANNOTATIONS: &str = "ICDC_ANNOTATIONS";
pub const ENV_SECTION_PATTERNS: &str = "ICDC_SECTION_PATTERNS";
pub const ENV_RUNS_DIR: &str = "ICDC_RUNS_DIR";
pub const ENV_PORT: &str = "ICDC_PORT";

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub notes: PathBuf,
    pub diagnoses: PathBuf,
    /// Phrase-per-line lexicon for the builtin matcher. Ignored when
    /// `annotations` is set.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub curated_terms: PathBuf,
    /// JSONL export of an external entity recognizer.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    #[serde(default)]
    pub section_patterns: Option<PathBuf>,
    /// Directory holding one subdirectory per run.
    #[serde(default = "default_runs_dir")]
    pub runs_dir: PathBuf,
}

fn default_runs_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightParams {
    #[serde(default = "default_n_top")]
    pub n_top: usize,
    /// Defaults to the builtin stop list.
    #[serde(default)]
    pub stop_list: Option<BTreeSet<String>>,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
}

fn default_n_top() -> usize {
    375
}

fn default_min_len() -> usize {
    DEFAULT_MIN_LEN
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            n_top: default_n_top(),
            stop_list: None,
            min_len: DEFAULT_MIN_LEN,
        }
    }
}

impl WeightParams {
    pub fn stop_list(&self) -> BTreeSet<String> {
        self.stop_list.clone().unwrap_or_else(default_stop_list)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    /// One one-vs-rest model per code spec, trained on documents whose
    /// validated class is the chapter.
    #[serde(default)]
    pub codes: Vec<LabelSpec>,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<ModelKind>,
    #[serde(default = "default_bigru")]
    pub bigru_attn: ModelConfig,
    #[serde(default = "default_transformer")]
    pub transformer: ModelConfig,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
}

fn default_kinds() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_bigru() -> ModelConfig {
    ModelConfig::desk(ModelKind::BigruAttn)
}

fn default_transformer() -> ModelConfig {
    ModelConfig::desk(ModelKind::Transformer)
}

fn default_test_fraction() -> f64 {
    0.25
}

fn default_min_count() -> usize {
    1
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            codes: Vec::new(),
            kinds: default_kinds(),
            bigru_attn: default_bigru(),
            transformer: default_transformer(),
            test_fraction: default_test_fraction(),
            vocab_min_count: default_min_count(),
        }
    }
}

impl ModelsConfig {
    pub fn for_kind(&self, kind: ModelKind) -> &ModelConfig {
        match kind {
            ModelKind::BigruAttn => &self.bigru_attn,
            ModelKind::Transformer => &self.transformer,
        }
    }
}

/// Thresholds reported in the sweep table, per weight set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTaus {
    #[serde(default = "default_raw_taus")]
    pub raw: Vec<Weight>,
    #[serde(default = "default_small_taus")]
    pub debiased: Vec<Weight>,
    #[serde(default = "default_small_taus")]
    pub influenced: Vec<Weight>,
}

fn hundredths(v: &[i64]) -> Vec<Weight> {
    v.iter().map(|&h| Weight::from_hundredths(h)).collect()
}

fn default_raw_taus() -> Vec<Weight> {
    hundredths(&[200, 300, 400])
}

fn default_small_taus() -> Vec<Weight> {
    hundredths(&[10, 20, 30])
}

impl Default for SweepTaus {
    fn default() -> Self {
        SweepTaus {
            raw: default_raw_taus(),
            debiased: default_small_taus(),
            influenced: default_small_taus(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default = "default_category")]
    pub category: String,
    #[serde(default = "LabelSpec::chapter_iv")]
    pub chapter: LabelSpec,
    #[serde(default)]
    pub weights: WeightParams,
    pub tau: Weight,
    #[serde(default)]
    pub sweeps: SweepTaus,
    pub band_edges: Vec<Weight>,
    #[serde(default = "default_cutoff")]
    pub impurity_cutoff: f64,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_port")]
    pub port: u16,
}

fn default_category() -> String {
    DEFAULT_CATEGORY.to_string()
}

fn default_cutoff() -> f64 {
    DEFAULT_IMPURITY_CUTOFF
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

/// Source of environment values, injectable for tests.
pub trait Env {
    fn var(&self, key: &str) -> Option<String>;
}

pub struct ProcessEnv;

impl Env for ProcessEnv {
    fn var(&self, key: &str) -> Option<String> {
        std::env::var(key).ok().filter(|v| !v.is_empty())
    }
}

impl<K: AsRef<str>, V: AsRef<str>> Env for [(K, V)] {
    fn var(&self, key: &str) -> Option<String> {
        self.iter()
            .find(|(k, _)| k.as_ref() == key)
            .map(|(_, v)| v.as_ref().to_string())
    }
}

impl PipelineConfig {
    /// Parses JSON, resolves relative paths against `base_dir` and applies
    /// environment overrides. Does not check that the files exist.
    pub fn from_json<E: Env + ?Sized>(json: &str, base_dir: &Path, env: &E) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(json).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.apply_env(env)?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load<E: Env + ?Sized>(path: &Path, env: &E) -> Result<Self, PipelineError> {
        let json = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!(
            "cannot read config {}: {e}",
            path.display()
        )))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&json, base, env)
    }

    fn apply_env<E: Env + ?Sized>(&mut self, env: &E) -> Result<(), PipelineError> {
        let p = &mut self.paths;
        if let Some(v) = env.var(ENV_NOTES) {
            p.notes = v.into();
        }
        if let Some(v) = env.var(ENV_DIAGNOSES) {
            p.diagnoses = v.into();
        }
        if let Some(v) = env.var(ENV_LEXICON) {
            p.lexicon = Some(v.into());
        }
        if let Some(v) = env.var(ENV_CURATED_TERMS) {
            p.curated_terms = v.into();
        }
        if let Some(v) = env.var(ENV_ANNOTATIONS) {
            p.annotations = Some(v.into());
        }
        if let Some(v) = env.var(ENV_SECTION_PATTERNS) {
            p.section_patterns = Some(v.into());
        }
        if let Some(v) = env.var(ENV_RUNS_DIR) {
            p.runs_dir = v.into();
        }
        if let Some(v) = env.var(ENV_PORT) {
            self.port = v
                .parse()
                .map_err(|_| PipelineError::Config(format!("{ENV_PORT}={v:?} is not a port number")))?;
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.notes);
        fix(&mut p.diagnoses);
        fix(&mut p.curated_terms);
        fix(&mut p.runs_dir);
        for opt in [&mut p.lexicon, &mut p.annotations, &mut p.section_patterns] {
            if let Some(path) = opt.as_mut() {
                fix(path);
            }
        }
    }

    pub fn bands(&self) -> Result<Vec<Band>, PipelineError> {
        let bands = Band::from_edges(&self.band_edges)?;
        validate_bands(&bands)?;
        Ok(bands)
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.band_edges.len() < 2 {
            return bad("band_edges needs at least two edges".into());
        }
        let bands = self.bands()?;
        if let Some(b) = bands.iter().find(|b| b.lower < self.tau && self.tau < b.upper) {
            return bad(format!("band {b} straddles tau {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.impurity_cutoff) {
            return bad(format!("impurity_cutoff {} not in [0, 1]", self.impurity_cutoff));
        }
        if self.weights.n_top == 0 {
            return bad("weights.n_top must be at least 1".into());
        }
        let m = &self.models;
        if !(0.0 < m.test_fraction && m.test_fraction < 1.0) {
            return bad(format!("models.test_fraction {} not in (0, 1)", m.test_fraction));
        }
        for kind in ModelKind::ALL {
            let c = m.for_kind(kind);
            if c.kind != kind {
                return bad(format!("models.{kind} has kind {}", c.kind));
            }
            c.validate()?;
        }
        if self.paths.lexicon.is_none() && self.paths.annotations.is_none() {
            return bad("paths needs a lexicon or an annotations file".into());
        }
        let p = &self.paths;
        let mut required = vec![&p.notes, &p.diagnoses, &p.curated_terms];
        required.extend(p.lexicon.iter());
        required.extend(p.annotations.iter());
        required.extend(p.section_patterns.iter());
        for path in required {
            if !path.is_file() {
                return Err(PipelineError::MissingInput(path.clone()));
            }
        }
        Ok(())
    }
}
