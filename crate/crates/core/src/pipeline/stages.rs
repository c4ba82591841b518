use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{fingerprint, sha256_file, sha256_hex, RunManifest, StageRecord, MANIFEST_FILE};
use super::{PipelineError, Stage};
use crate::categorizer::{
    band_analysis, classify_reports, classify_threshold, sweep_thresholds, CategorizationRun, Class,
    ScoreReport, Scorer, SweepRow,
};
use crate::corpus::{
    label_one_vs_rest, merge_admissions, parse_diagnoses, parse_notes, read_jsonl, write_jsonl,
    AdmissionRecord, LabelSpec,
};
use crate::entities::{
    clean_entity_list, debias, doc_frequency_weights, influence, top_prevalent, EntityExtractor,
    EntityLexicon, EntityMention, ImportedAnnotations, InfluenceConfig, LexiconMatcher,
    LexiconSource, RankedEntity, WeightedEntitySet,
};
use crate::metrics::CodeMetrics;
use crate::nn::{build_vocab, evaluate, load_model, save_model, train, EpochLog, Example, ModelKind};
use crate::review::{LabelSource, ReviewState};
use crate::sectioner::{build_short_summary, Section, SectionPatterns, Sectioner, ShortSummary};
use crate::weight::Weight;

const ADMISSIONS: &str = "admissions.jsonl";
const INGEST_STATS: &str = "ingest.json";
const SUMMARIES: &str = "summaries.jsonl";
const SECTIONIZE_STATS: &str = "sectionize.json";
const ENTITIES: &str = "entities.json";
const W_CHAPTER: &str = "weights/chapter_raw.jsonl";
const W_REST: &str = "weights/rest_raw.jsonl";
const W_DEBIASED: &str = "weights/debiased.jsonl";
const W_INFLUENCED: &str = "weights/influenced.jsonl";
const CATEGORIZATION: &str = "categorization.json";
const THRESHOLDS: &str = "thresholds.json";
const BANDS: &str = "bands.json";
const TRAIN: &str = "train.json";
const MODELS: &str = "models";
const METRICS: &str = "metrics.json";
/// Coder decisions for a run, appended by the review service.
pub const DECISION_LOG: &str = "decisions.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub notes_kept: usize,
    pub notes_skipped: usize,
    pub notes_filtered: usize,
    pub notes_empty_text: usize,
    pub diagnosis_rows: usize,
    pub diagnoses_skipped_empty_code: usize,
    pub diagnoses_skipped_invalid_code: usize,
    pub diagnoses_skipped_bad_seq: usize,
    pub duplicate_notes: usize,
    pub notes_without_diagnoses: usize,
    pub diagnoses_without_note: usize,
    pub merged: usize,
    pub chapter: usize,
    pub rest: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionizeStats {
    pub admissions: usize,
    pub summaries: usize,
    pub excluded: usize,
    /// Admissions where each section was not captured.
    pub missing: BTreeMap<Section, usize>,
    pub chapter: usize,
    pub rest: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitiesArtifact {
    pub source: LexiconSource,
    /// Chapter summaries the ranking was computed over.
    pub chapter_docs: usize,
    pub ranked: Vec<RankedEntity>,
    pub cleaned: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorizationArtifact {
    pub weights: String,
    pub entity_count: usize,
    pub tau: Weight,
    pub reports: Vec<ScoreReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub weights: String,
    pub entity_count: usize,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedCode {
    pub code: String,
    pub kind: ModelKind,
    /// Model path relative to the run directory; absent when skipped.
    pub model_file: Option<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub train_positives: usize,
    pub test_positives: usize,
    pub training_log: Vec<EpochLog>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifact {
    /// Summaries whose validated class is the chapter.
    pub chapter_docs: usize,
    /// How many of those carry a coder decision.
    pub coder_decisions: usize,
    pub models: Vec<TrainedCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub outputs: Vec<String>,
}

/// One run's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    id: String,
    root: PathBuf,
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl RunDir {
    pub fn new(runs_dir: &Path, id: &str) -> Result<Self, PipelineError> {
        if !valid_run_id(id) {
            return Err(PipelineError::Config(format!(
                "run id {id:?} may only contain letters, digits, '-', '_' and '.'"
            )));
        }
        Ok(RunDir {
            id: id.to_string(),
            root: runs_dir.join(id),
        })
    }

    /// An existing run, recognized by its manifest.
    pub fn open(runs_dir: &Path, id: &str) -> Result<Self, PipelineError> {
        let dir = RunDir::new(runs_dir, id).map_err(|_| PipelineError::UnknownRun(id.to_string()))?;
        if !dir.path(MANIFEST_FILE).is_file() {
            return Err(PipelineError::UnknownRun(id.to_string()));
        }
        Ok(dir)
    }

    /// Ids of every run under `runs_dir` that has a manifest, sorted.
    pub fn list(runs_dir: &Path) -> Result<Vec<String>, PipelineError> {
        let entries = match std::fs::read_dir(runs_dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => {
                return Err(PipelineError::Io {
                    path: runs_dir.to_path_buf(),
                    source,
                })
            }
        };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().join(MANIFEST_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_run_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> Result<RunManifest, PipelineError> {
        RunManifest::load(&self.path(MANIFEST_FILE))?
            .ok_or_else(|| PipelineError::UnknownRun(self.id.clone()))
    }

    pub fn decision_log(&self) -> PathBuf {
        self.path(DECISION_LOG)
    }

    fn require(&self, rel: &str, stage: Stage) -> Result<PathBuf, PipelineError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact { stage, path: p })
        }
    }

    /// The banded categorization, as served for review.
    pub fn load_bands(&self) -> Result<CategorizationRun, PipelineError> {
        read_json(&self.require(BANDS, Stage::Bands)?)
    }

    pub fn load_thresholds(&self) -> Result<Vec<SweepTable>, PipelineError> {
        read_json(&self.require(THRESHOLDS, Stage::Categorize)?)
    }

    pub fn load_metrics(&self) -> Result<Vec<CodeMetrics>, PipelineError> {
        read_json(&self.require(METRICS, Stage::Eval)?)
    }

    pub fn load_summaries(&self) -> Result<Vec<ShortSummary>, PipelineError> {
        read_jsonl_file(&self.require(SUMMARIES, Stage::Sectionize)?)
    }

    pub fn load_train(&self) -> Result<TrainArtifact, PipelineError> {
        read_json(&self.require(TRAIN, Stage::Train)?)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<File, PipelineError> {
    File::open(path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let reader = BufReader::new(open(path)?);
    serde_json::from_reader(reader).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    Ok(read_jsonl(BufReader::new(open(path)?))?)
}

fn read_weights(path: &Path) -> Result<WeightedEntitySet, PipelineError> {
    Ok(WeightedEntitySet::read(BufReader::new(open(path)?))?)
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    let mut w = create(path)?;
    w.write_all(&bytes).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

enum Input {
    /// Run-relative artifact and the stage producing it.
    Artifact(String, Stage),
    External(&'static str, PathBuf),
    /// Run-relative file that may be absent.
    Optional(&'static str),
}

/// A validated config bound to one run directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    config_hash: String,
    run: RunDir,
}

impl Pipeline {
    /// Validates `config` (after applying `seed`) and picks the run
    /// directory. Without `run_id` the id is derived from the config hash.
    pub fn new(
        mut config: PipelineConfig,
        run_id: Option<&str>,
        seed: Option<u64>,
    ) -> Result<Self, PipelineError> {
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.validate()?;
        let config_hash = sha256_hex(&serde_json::to_vec(&config).expect("config serializes"));
        let id = match run_id {
            Some(id) => id.to_string(),
            None => format!("run-{}", &config_hash[..12]),
        };
        let run = RunDir::new(&config.paths.runs_dir, &id)?;
        Ok(Pipeline {
            config,
            config_hash,
            run,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn run(&self) -> &RunDir {
        &self.run
    }

    pub fn run_all(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        Stage::ALL.into_iter().map(|s| self.run_stage(s)).collect()
    }

    fn inputs(&self, stage: Stage) -> Result<Vec<Input>, PipelineError> {
        let p = &self.config.paths;
        let art = |rel: &str, s| Input::Artifact(rel.to_string(), s);
        Ok(match stage {
            Stage::Ingest => vec![
                Input::External("notes", p.notes.clone()),
                Input::External("diagnoses", p.diagnoses.clone()),
            ],
            Stage::Sectionize => {
                let mut v = vec![art(ADMISSIONS, Stage::Ingest)];
                if let Some(sp) = &p.section_patterns {
                    v.push(Input::External("section_patterns", sp.clone()));
                }
                v
            }
            Stage::Entities => {
                let mut v = vec![art(SUMMARIES, Stage::Sectionize)];
                match (&p.annotations, &p.lexicon) {
                    (Some(a), _) => v.push(Input::External("annotations", a.clone())),
                    (None, Some(l)) => v.push(Input::External("lexicon", l.clone())),
                    (None, None) => unreachable!("validated"),
                }
                v
            }
            Stage::Weights => vec![
                art(SUMMARIES, Stage::Sectionize),
                art(ENTITIES, Stage::Entities),
                Input::External("curated_terms", p.curated_terms.clone()),
            ],
            Stage::Categorize => vec![
                art(SUMMARIES, Stage::Sectionize),
                art(W_CHAPTER, Stage::Weights),
                art(W_DEBIASED, Stage::Weights),
                art(W_INFLUENCED, Stage::Weights),
            ],
            Stage::Bands => vec![
                art(SUMMARIES, Stage::Sectionize),
                art(CATEGORIZATION, Stage::Categorize),
            ],
            Stage::Train => vec![
                art(SUMMARIES, Stage::Sectionize),
                art(BANDS, Stage::Bands),
                Input::Optional(DECISION_LOG),
            ],
            Stage::Eval => {
                let mut v = vec![art(SUMMARIES, Stage::Sectionize), art(TRAIN, Stage::Train)];
                if self.run.path(TRAIN).is_file() {
                    for m in self.run.load_train()?.models {
                        if let Some(f) = m.model_file {
                            v.push(Input::Artifact(f, Stage::Train));
                        }
                    }
                }
                v
            }
        })
    }

    fn hash_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut out = BTreeMap::new();
        for input in self.inputs(stage)? {
            match input {
                Input::Artifact(rel, producer) => {
                    let path = self.run.require(&rel, producer)?;
                    out.insert(rel, sha256_file(&path)?);
                }
                Input::External(name, path) => {
                    if !path.is_file() {
                        return Err(PipelineError::MissingInput(path));
                    }
                    out.insert(format!("input:{name}"), sha256_file(&path)?);
                }
                Input::Optional(rel) => {
                    let path = self.run.path(rel);
                    let h = if path.is_file() {
                        sha256_file(&path)?
                    } else {
                        "absent".to_string()
                    };
                    out.insert(rel.to_string(), h);
                }
            }
        }
        Ok(out)
    }

    fn outputs_intact(&self, record: &StageRecord) -> bool {
        record.outputs.iter().all(|(rel, hash)| {
            let p = self.run.path(rel);
            p.is_file() && sha256_file(&p).is_ok_and(|h| &h == hash)
        })
    }

    /// Runs one stage, or reuses its outputs when nothing it depends on
    /// changed. Upstream artifacts must already exist.
    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        let inputs = self.hash_inputs(stage)?;
        let fp = fingerprint(stage, &self.config_hash, &inputs);
        let manifest_path = self.run.path(MANIFEST_FILE);
        let mut manifest = RunManifest::load(&manifest_path)?
            .unwrap_or_else(|| RunManifest::new(self.run.id(), &self.config_hash, self.config.seed));
        manifest.config_hash = self.config_hash.clone();
        manifest.seed = self.config.seed;

        if let Some(rec) = manifest.stages.get_mut(&stage) {
            if rec.fingerprint == fp && self.outputs_intact(rec) {
                info!("{stage}: inputs unchanged, reusing outputs");
                rec.skipped = true;
                let outputs = rec.outputs.keys().cloned().collect();
                manifest.save(&manifest_path)?;
                return Ok(StageOutcome {
                    stage,
                    skipped: true,
                    outputs,
                });
            }
        }

        std::fs::create_dir_all(self.run.root()).map_err(io_err(self.run.root()))?;
        let started = now();
        let produced = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Sectionize => self.sectionize()?,
            Stage::Entities => self.entities()?,
            Stage::Weights => self.weights()?,
            Stage::Categorize => self.categorize()?,
            Stage::Bands => self.bands()?,
            Stage::Train => self.train()?,
            Stage::Eval => self.eval()?,
        };
        let mut outputs = BTreeMap::new();
        for rel in &produced {
            outputs.insert(rel.clone(), sha256_file(&self.run.path(rel))?);
        }
        manifest.stages.insert(
            stage,
            StageRecord {
                fingerprint: fp,
                inputs,
                outputs,
                started,
                finished: now(),
                skipped: false,
            },
        );
        manifest.save(&manifest_path)?;
        info!("{stage}: wrote {}", produced.join(", "));
        Ok(StageOutcome {
            stage,
            skipped: false,
            outputs: produced,
        })
    }

    fn label(&self, codes: &[String]) -> u8 {
        label_one_vs_rest(codes, &self.config.chapter)
    }

    fn ingest(&self) -> Result<Vec<String>, PipelineError> {
        let p = &self.config.paths;
        let notes = parse_notes(open(&p.notes)?, &self.config.category)?;
        let dx = parse_diagnoses(open(&p.diagnoses)?)?;
        let merged = merge_admissions(&notes.records, &dx.rows);
        let chapter = merged.records.iter().filter(|r| self.label(&r.codes) == 1).count();
        let stats = IngestStats {
            notes_kept: notes.records.len(),
            notes_skipped: notes.skipped,
            notes_filtered: notes.filtered,
            notes_empty_text: notes.empty_text,
            diagnosis_rows: dx.rows.len(),
            diagnoses_skipped_empty_code: dx.skipped_empty_code,
            diagnoses_skipped_invalid_code: dx.skipped_invalid_code,
            diagnoses_skipped_bad_seq: dx.skipped_bad_seq,
            duplicate_notes: merged.duplicate_notes,
            notes_without_diagnoses: merged.notes_without_diagnoses,
            diagnoses_without_note: merged.diagnoses_without_note,
            merged: merged.records.len(),
            chapter,
            rest: merged.records.len() - chapter,
        };
        let path = self.run.path(ADMISSIONS);
        let mut w = create(&path)?;
        write_jsonl(&mut w, &merged.records)?;
        w.flush().map_err(io_err(&path))?;
        write_json(&self.run.path(INGEST_STATS), &stats)?;
        Ok(vec![ADMISSIONS.into(), INGEST_STATS.into()])
    }

    fn sectionize(&self) -> Result<Vec<String>, PipelineError> {
        let patterns = match &self.config.paths.section_patterns {
            Some(path) => SectionPatterns::load(path)?,
            None => SectionPatterns::default(),
        };
        let sectioner = Sectioner::new(&patterns)?;
        let admissions: Vec<AdmissionRecord> = read_jsonl_file(&self.run.path(ADMISSIONS))?;
        let mut missing: BTreeMap<Section, usize> = Section::ALL.into_iter().map(|s| (s, 0)).collect();
        let mut summaries = Vec::new();
        for adm in &admissions {
            let sections = sectioner.extract_sections(&adm.text);
            for s in Section::ALL {
                if sections.get(s).is_none() {
                    *missing.get_mut(&s).expect("all sections") += 1;
                }
            }
            if let Some(summary) = build_short_summary(&adm.admission_id, &adm.codes, &sections) {
                summaries.push(summary);
            }
        }
        let chapter = summaries.iter().filter(|s| self.label(&s.codes) == 1).count();
        let stats = SectionizeStats {
            admissions: admissions.len(),
            summaries: summaries.len(),
            excluded: admissions.len() - summaries.len(),
            missing,
            chapter,
            rest: summaries.len() - chapter,
        };
        let path = self.run.path(SUMMARIES);
        let mut w = create(&path)?;
        write_jsonl(&mut w, &summaries)?;
        w.flush().map_err(io_err(&path))?;
        write_json(&self.run.path(SECTIONIZE_STATS), &stats)?;
        Ok(vec![SUMMARIES.into(), SECTIONIZE_STATS.into()])
    }

    fn split_by_label(&self, summaries: Vec<ShortSummary>) -> (Vec<ShortSummary>, Vec<ShortSummary>) {
        summaries.into_iter().partition(|s| self.label(&s.codes) == 1)
    }

    fn entities(&self) -> Result<Vec<String>, PipelineError> {
        let summaries = self.run.load_summaries()?;
        let p = &self.config.paths;
        let (extractor, source): (Box<dyn EntityExtractor>, LexiconSource) = match (&p.annotations, &p.lexicon) {
            (Some(path), _) => {
                let ann = ImportedAnnotations::load(path)?;
                ann.validate_against(summaries.iter().map(|s| s.admission_id.as_str()))?;
                (Box::new(ann), LexiconSource::Imported)
            }
            (None, Some(path)) => {
                let lex = EntityLexicon::load(path, LexiconSource::Builtin)?;
                (Box::new(LexiconMatcher::new(&lex)), LexiconSource::Builtin)
            }
            (None, None) => unreachable!("validated"),
        };
        let (chapter, _) = self.split_by_label(summaries);
        let mentions: Vec<Vec<EntityMention>> = chapter.iter().map(|s| extractor.extract(s)).collect();
        let ranked = top_prevalent(mentions.iter().map(Vec::as_slice), self.config.weights.n_top);
        let names: Vec<String> = ranked.iter().map(|r| r.entity.clone()).collect();
        let cleaned = clean_entity_list(&names, &self.config.weights.stop_list(), self.config.weights.min_len);
        let artifact = EntitiesArtifact {
            source,
            chapter_docs: chapter.len(),
            ranked,
            cleaned,
        };
        write_json(&self.run.path(ENTITIES), &artifact)?;
        Ok(vec![ENTITIES.into()])
    }

    fn weights(&self) -> Result<Vec<String>, PipelineError> {
        let summaries = self.run.load_summaries()?;
        let entities: EntitiesArtifact = read_json(&self.run.path(ENTITIES))?;
        let terms_path = &self.config.paths.curated_terms;
        let terms = EntityLexicon::load(terms_path, LexiconSource::Builtin)?;
        let influence_cfg = InfluenceConfig::new(terms.phrases())?;

        let (chapter, rest) = self.split_by_label(summaries);
        let set1 = doc_frequency_weights(&entities.cleaned, &chapter)?;
        let set2 = doc_frequency_weights(&entities.cleaned, &rest)?;
        let debiased = debias(&set1, &set2)?;
        let influenced = influence(&debiased, &influence_cfg, &set1, &set2)?;
        for (rel, set) in [
            (W_CHAPTER, &set1),
            (W_REST, &set2),
            (W_DEBIASED, &debiased),
            (W_INFLUENCED, &influenced),
        ] {
            let path = self.run.path(rel);
            let mut w = create(&path)?;
            set.write(&mut w)?;
            w.flush().map_err(io_err(&path))?;
        }
        Ok([W_CHAPTER, W_REST, W_DEBIASED, W_INFLUENCED].map(String::from).to_vec())
    }

    fn labels(&self, summaries: &[ShortSummary]) -> BTreeMap<String, u8> {
        summaries
            .iter()
            .map(|s| (s.admission_id.clone(), self.label(&s.codes)))
            .collect()
    }

    fn categorize(&self) -> Result<Vec<String>, PipelineError> {
        let summaries = self.run.load_summaries()?;
        let labels = self.labels(&summaries);
        let raw = read_weights(&self.run.path(W_CHAPTER))?;
        let debiased = read_weights(&self.run.path(W_DEBIASED))?;
        let influenced = read_weights(&self.run.path(W_INFLUENCED))?;
        let score_all = |set: &WeightedEntitySet| -> Vec<ScoreReport> {
            let scorer = Scorer::new(set);
            summaries.iter().map(|s| scorer.score(s)).collect()
        };

        let sweeps = &self.config.sweeps;
        let mut tables = Vec::new();
        for (name, set, taus) in [
            ("raw", &raw, &sweeps.raw),
            ("debiased", &debiased, &sweeps.debiased),
            ("influenced", &influenced, &sweeps.influenced),
        ] {
            tables.push(SweepTable {
                weights: name.to_string(),
                entity_count: set.len(),
                rows: sweep_thresholds(&score_all(set), &labels, taus)?,
            });
        }

        let tau = self.config.tau;
        let mut reports = score_all(&influenced);
        for r in &mut reports {
            r.predicted = Some(classify_threshold(r.sum, tau));
        }
        let artifact = CategorizationArtifact {
            weights: "influenced".into(),
            entity_count: influenced.len(),
            tau,
            reports,
        };
        write_json(&self.run.path(CATEGORIZATION), &artifact)?;
        write_json(&self.run.path(THRESHOLDS), &tables)?;
        Ok(vec![CATEGORIZATION.into(), THRESHOLDS.into()])
    }

    fn bands(&self) -> Result<Vec<String>, PipelineError> {
        let summaries = self.run.load_summaries()?;
        let labels = self.labels(&summaries);
        let cat: CategorizationArtifact = read_json(&self.run.path(CATEGORIZATION))?;
        let bands = self.config.bands()?;
        let tau = self.config.tau;
        let mut reports = cat.reports;
        let band_stats = band_analysis(&reports, &labels, &bands, tau, self.config.impurity_cutoff)?;
        classify_reports(&mut reports, tau, &bands);
        let run = CategorizationRun {
            tau,
            band_stats,
            reports,
            texts: summaries.into_iter().map(|s| (s.admission_id, s.text)).collect(),
        };
        write_json(&self.run.path(BANDS), &run)?;
        Ok(vec![BANDS.into()])
    }

    fn train(&self) -> Result<Vec<String>, PipelineError> {
        let summaries = self.run.load_summaries()?;
        let by_id: BTreeMap<&str, &ShortSummary> =
            summaries.iter().map(|s| (s.admission_id.as_str(), s)).collect();
        let state = ReviewState::open(self.run.load_bands()?, self.run.decision_log())?;
        let chapter: Vec<_> = state
            .export_validated()
            .into_iter()
            .filter(|d| d.final_class == Class::Chapter)
            .collect();
        let coder_decisions = chapter.iter().filter(|d| d.source == LabelSource::Coder).count();
        let docs: Vec<&ShortSummary> = chapter
            .iter()
            .filter_map(|d| by_id.get(d.doc_id.as_str()).copied())
            .collect();

        let models_dir = self.run.path(MODELS);
        if models_dir.exists() {
            std::fs::remove_dir_all(&models_dir).map_err(io_err(&models_dir))?;
        }
        let mut outputs = vec![TRAIN.to_string()];
        let mut models = Vec::new();
        for (i, spec) in self.config.models.codes.iter().enumerate() {
            let split_seed = self.config.seed.wrapping_add(i as u64);
            let (train_docs, test_docs) = stratified_split(&docs, spec, self.config.models.test_fraction, split_seed);
            let positives = |set: &[&ShortSummary]| set.iter().filter(|s| label_one_vs_rest(&s.codes, spec) == 1).count();
            let skip_reason = if test_docs.is_empty() {
                Some("no held-out documents".to_string())
            } else {
                let p = positives(&train_docs);
                (p == 0 || p == train_docs.len()).then(|| "training split has a single class".to_string())
            };
            for &kind in &self.config.models.kinds {
                let mut entry = TrainedCode {
                    code: spec.name(),
                    kind,
                    model_file: None,
                    train_ids: train_docs.iter().map(|s| s.admission_id.clone()).collect(),
                    test_ids: test_docs.iter().map(|s| s.admission_id.clone()).collect(),
                    train_positives: positives(&train_docs),
                    test_positives: positives(&test_docs),
                    training_log: Vec::new(),
                    skipped: skip_reason.clone(),
                };
                if skip_reason.is_none() {
                    let mut mc = self.config.models.for_kind(kind).clone();
                    mc.seed = self.config.seed;
                    let vocab = build_vocab(
                        train_docs.iter().map(|s| s.text.as_str()),
                        self.config.models.vocab_min_count,
                    )?;
                    let examples: Vec<Example> = train_docs
                        .iter()
                        .map(|s| {
                            Example::encode(
                                &s.admission_id,
                                &s.text,
                                label_one_vs_rest(&s.codes, spec),
                                &vocab,
                                mc.max_len,
                            )
                        })
                        .collect();
                    let model = train(&mc, vocab, &examples, None)?;
                    let rel = format!("{MODELS}/{}__{kind}.icdm", code_slug(spec));
                    let path = self.run.path(&rel);
                    std::fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
                    save_model(&model, &path)?;
                    entry.training_log = model.training_log;
                    entry.model_file = Some(rel.clone());
                    outputs.push(rel);
                }
                models.push(entry);
            }
        }
        let artifact = TrainArtifact {
            chapter_docs: docs.len(),
            coder_decisions,
            models,
        };
        write_json(&self.run.path(TRAIN), &artifact)?;
        Ok(outputs)
    }

    fn eval(&self) -> Result<Vec<String>, PipelineError> {
        let summaries = self.run.load_summaries()?;
        let by_id: BTreeMap<&str, &ShortSummary> =
            summaries.iter().map(|s| (s.admission_id.as_str(), s)).collect();
        let artifact = self.run.load_train()?;
        let mut rows = Vec::new();
        for entry in &artifact.models {
            let Some(rel) = &entry.model_file else { continue };
            let spec = self
                .config
                .models
                .codes
                .iter()
                .find(|c| c.name() == entry.code)
                .ok_or_else(|| PipelineError::Config(format!("code {} is no longer configured", entry.code)))?;
            let model = load_model(&self.run.path(rel))?;
            let examples = entry
                .test_ids
                .iter()
                .map(|id| {
                    let s = by_id.get(id.as_str()).ok_or_else(|| {
                        PipelineError::Config(format!("test document {id} missing from summaries"))
                    })?;
                    Ok(Example::encode(
                        id,
                        &s.text,
                        label_one_vs_rest(&s.codes, spec),
                        &model.vocab,
                        model.config.max_len,
                    ))
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            let outcome = evaluate(&model, &examples)?;
            rows.push(CodeMetrics {
                code: entry.code.clone(),
                model: entry.kind.to_string(),
                confusion: outcome.confusion,
            });
        }
        write_json(&self.run.path(METRICS), &rows)?;
        Ok(vec![METRICS.into()])
    }
}

fn code_slug(spec: &LabelSpec) -> String {
    spec.name().replace('|', "+")
}

/// Seeded per-class split: each class contributes `round(n * fraction)`
/// test documents, leaving at least one of that class for training.
fn stratified_split<'a>(
    docs: &[&'a ShortSummary],
    spec: &LabelSpec,
    fraction: f64,
    seed: u64,
) -> (Vec<&'a ShortSummary>, Vec<&'a ShortSummary>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_set = Vec::new();
    let mut test_set = Vec::new();
    for label in [1u8, 0] {
        let mut class: Vec<&ShortSummary> = docs
            .iter()
            .copied()
            .filter(|s| label_one_vs_rest(&s.codes, spec) == label)
            .collect();
        class.sort_by(|a, b| a.admission_id.cmp(&b.admission_id));
        class.shuffle(&mut rng);
        let n_test = ((class.len() as f64 * fraction).round() as usize).min(class.len().saturating_sub(1));
        test_set.extend_from_slice(&class[..n_test]);
        train_set.extend_from_slice(&class[n_test..]);
    }
    train_set.sort_by(|a, b| a.admission_id.cmp(&b.admission_id));
    test_set.sort_by(|a, b| a.admission_id.cmp(&b.admission_id));
    (train_set, test_set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(id: &str, code: &str) -> ShortSummary {
        ShortSummary {
            admission_id: id.into(),
            text: "x".into(),
            codes: vec![code.into()],
            section_spans: Vec::new(),
        }
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let docs: Vec<ShortSummary> = (0..20)
            .map(|i| summary(&format!("d{i:02}"), if i < 8 { "2851" } else { "2800" }))
            .collect();
        let refs: Vec<&ShortSummary> = docs.iter().collect();
        let spec = LabelSpec::new(["285"], 3).unwrap();
        let (train_a, test_a) = stratified_split(&refs, &spec, 0.25, 7);
        let (train_b, test_b) = stratified_split(&refs, &spec, 0.25, 7);
        assert_eq!(test_a, test_b);
        assert_eq!(train_a, train_b);
        assert_eq!(test_a.len(), 5);
        let pos = test_a.iter().filter(|s| s.codes[0] == "2851").count();
        assert_eq!(pos, 2);
        assert_eq!(train_a.len() + test_a.len(), 20);
    }

    #[test]
    fn singleton_class_stays_in_training() {
        let docs = [summary("a", "2851"), summary("b", "2800"), summary("c", "2800")];
        let refs: Vec<&ShortSummary> = docs.iter().collect();
        let spec = LabelSpec::new(["285"], 3).unwrap();
        let (train_set, _) = stratified_split(&refs, &spec, 0.9, 0);
        assert!(train_set.iter().any(|s| s.admission_id == "a"));
    }

    #[test]
    fn run_ids_are_checked() {
        assert!(RunDir::new(Path::new("/r"), "run-1.a_b").is_ok());
        assert!(RunDir::new(Path::new("/r"), "../x").is_err());
        assert!(RunDir::new(Path::new("/r"), "").is_err());
    }
}
