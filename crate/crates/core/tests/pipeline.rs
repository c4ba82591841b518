use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use icd_chapter::categorizer::Class;
use icd_chapter::pipeline::{
    export_report, IngestStats, Pipeline, PipelineConfig, PipelineError, ReportKind, RunDir,
    SectionizeStats, Stage, MANIFEST_FILE,
};
use icd_chapter::review::{DecisionRequest, ReviewState, Verdict};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/corpus20");

fn fixture_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(FIXTURE).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    dir
}

fn config(dir: &Path) -> PipelineConfig {
    let env: [(&str, &str); 0] = [];
    PipelineConfig::load(&dir.join("config.json"), &env[..]).unwrap()
}

fn pipeline(dir: &Path, run: &str) -> Pipeline {
    Pipeline::new(config(dir), Some(run), None).unwrap()
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn read<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn full_chain_on_bundled_corpus() {
    let dir = fixture_copy();
    let p = pipeline(dir.path(), "a");
    let outcomes = p.run_all().unwrap();
    assert_eq!(outcomes.len(), Stage::ALL.len());
    assert!(outcomes.iter().all(|o| !o.skipped));

    let run = p.run();
    let ingest: IngestStats = read(run.path("ingest.json"));
    assert_eq!(ingest.notes_kept, 20);
    assert_eq!(ingest.notes_filtered, 1);
    assert_eq!(ingest.diagnoses_skipped_invalid_code, 1);
    assert_eq!(ingest.diagnoses_without_note, 1);
    assert_eq!(ingest.merged, 20);
    assert_eq!((ingest.chapter, ingest.rest), (10, 10));

    let sec: SectionizeStats = read(run.path("sectionize.json"));
    assert_eq!(sec.summaries, 18);
    assert_eq!(sec.excluded, 2);
    assert_eq!((sec.chapter, sec.rest), (9, 9));

    // one primary artifact per stage, plus the manifest
    for rel in [
        "admissions.jsonl",
        "summaries.jsonl",
        "entities.json",
        "weights/influenced.jsonl",
        "categorization.json",
        "bands.json",
        "train.json",
        "metrics.json",
        MANIFEST_FILE,
    ] {
        assert!(run.path(rel).is_file(), "{rel}");
    }

    let manifest = run.manifest().unwrap();
    assert_eq!(manifest.stages.len(), 8);
    for (stage, rec) in &manifest.stages {
        assert!(!rec.inputs.is_empty(), "{stage} records no inputs");
        assert!(rec.inputs.values().all(|h| h.len() == 64 || h == "absent"));
        assert!(!rec.outputs.is_empty());
    }
    assert!(manifest.stages[&Stage::Ingest].inputs.contains_key("input:notes"));
    assert!(manifest.stages[&Stage::Weights].inputs.contains_key("entities.json"));

    let bands = run.load_bands().unwrap();
    let faulty: Vec<&str> = bands.faulty_bands().into_iter().collect();
    assert_eq!(faulty, ["2.5-3"]);

    let table = export_report(run, ReportKind::Bands, None).unwrap();
    assert!(table.starts_with("band"));
    for col in ["count_1", "count_0", "share", "impurity", "faulty"] {
        assert!(table.lines().next().unwrap().contains(col));
    }
    let metrics = export_report(run, ReportKind::Metrics, None).unwrap();
    assert!(metrics.contains("bigru_attn") && metrics.contains("transformer"));
    let interp = export_report(run, ReportKind::Interpretation, Some("1016")).unwrap();
    assert!(interp.contains("SUM 2.7"));
    assert!(export_report(run, ReportKind::Interpretation, None).is_err());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = fixture_copy();
    let a = pipeline(dir.path(), "a");
    let b = pipeline(dir.path(), "b");
    a.run_all().unwrap();
    b.run_all().unwrap();
    let mut fa = files_under(a.run().root());
    let mut fb = files_under(b.run().root());
    fa.remove(MANIFEST_FILE);
    fb.remove(MANIFEST_FILE);
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(v == &fb[k], "{k} differs between runs");
    }
    let ma = a.run().manifest().unwrap();
    let mb = b.run().manifest().unwrap();
    assert_eq!(ma.output_hashes(), mb.output_hashes());
    assert_eq!(ma.config_hash, mb.config_hash);
    for s in Stage::ALL {
        assert_eq!(ma.stages[&s].fingerprint, mb.stages[&s].fingerprint);
    }
}

#[test]
fn unchanged_stages_are_skipped() {
    let dir = fixture_copy();
    let p = pipeline(dir.path(), "a");
    p.run_all().unwrap();
    let before = p.run().manifest().unwrap().output_hashes();
    assert!(p.run_all().unwrap().iter().all(|o| o.skipped));
    assert_eq!(p.run().manifest().unwrap().output_hashes(), before);

    let skips = |p: &Pipeline| -> Vec<(Stage, bool)> {
        p.run_all().unwrap().iter().map(|o| (o.stage, o.skipped)).collect()
    };

    // dropping a curated term no summary mentions changes the weights but
    // not the banded scores, so training is reused
    fs::write(dir.path().join("curated_terms.txt"), "pancytopenia\ncoagulopathy\n").unwrap();
    let p = pipeline(dir.path(), "a");
    let s = skips(&p);
    assert!(!s[3].1 && !s[4].1, "{s:?}");
    assert!(s[6].1 && s[7].1, "{s:?}");

    // a term that does occur changes every score from weights onwards
    fs::write(dir.path().join("curated_terms.txt"), "pancytopenia\ncoagulopathy\nfever\n").unwrap();
    let p = pipeline(dir.path(), "a");
    let skipped = skips(&p);
    assert_eq!(
        skipped,
        [
            (Stage::Ingest, true),
            (Stage::Sectionize, true),
            (Stage::Entities, true),
            (Stage::Weights, false),
            (Stage::Categorize, false),
            (Stage::Bands, false),
            (Stage::Train, false),
            (Stage::Eval, false),
        ]
    );

    // tampering with an output forces that stage to run again
    fs::write(p.run().path("entities.json"), "{}").unwrap();
    let o = p.run_stage(Stage::Entities).unwrap();
    assert!(!o.skipped);
}

#[test]
fn stage_without_upstream_names_the_missing_stage() {
    let dir = fixture_copy();
    let p = pipeline(dir.path(), "a");
    let err = p.run_stage(Stage::Weights).unwrap_err();
    assert!(matches!(err, PipelineError::MissingArtifact { stage: Stage::Sectionize, .. }));
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("run sectionize first"), "{err}");

    p.run_stage(Stage::Ingest).unwrap();
    p.run_stage(Stage::Sectionize).unwrap();
    let err = p.run_stage(Stage::Weights).unwrap_err();
    assert!(err.to_string().contains("run entities first"), "{err}");
}

#[test]
fn invalid_config_is_rejected_before_any_stage() {
    let dir = fixture_copy();
    let mut cfg = config(dir.path());
    cfg.band_edges = vec!["0".parse().unwrap(), "2".parse().unwrap()];
    let err = Pipeline::new(cfg, Some("a"), None).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let mut cfg = config(dir.path());
    cfg.paths.notes = dir.path().join("absent.csv");
    assert!(matches!(
        Pipeline::new(cfg, Some("a"), None),
        Err(PipelineError::MissingInput(_))
    ));
    assert!(!dir.path().join("runs").exists());
}

#[test]
fn coder_decisions_feed_training() {
    let dir = fixture_copy();
    let p = pipeline(dir.path(), "a");
    p.run_all().unwrap();
    let before = p.run().load_train().unwrap();
    assert_eq!(before.chapter_docs, 8);
    assert_eq!(before.coder_decisions, 0);

    let mut state = ReviewState::open(p.run().load_bands().unwrap(), p.run().decision_log()).unwrap();
    state
        .submit(
            &DecisionRequest {
                doc_id: "1016".into(),
                verdict: Verdict::Override,
                final_class: None,
                coder_id: "coder-1".into(),
            },
            "2026-01-01T00:00:00Z".into(),
        )
        .unwrap();
    let exported = state.export_validated();
    let d = exported.iter().find(|d| d.doc_id == "1016").unwrap();
    assert_eq!(d.final_class, Class::Rest);

    let o = p.run_stage(Stage::Train).unwrap();
    assert!(!o.skipped, "decision log change must invalidate training");
    let after = p.run().load_train().unwrap();
    assert_eq!(after.chapter_docs, 7);
    assert!(after.models.iter().all(|m| !m.train_ids.contains(&"1016".to_string())));
}

#[test]
fn seed_override_changes_run_and_models() {
    let dir = fixture_copy();
    let base = Pipeline::new(config(dir.path()), None, None).unwrap();
    let other = Pipeline::new(config(dir.path()), None, Some(99)).unwrap();
    assert_ne!(base.run().id(), other.run().id());
    assert!(base.run().id().starts_with("run-"));
    assert_eq!(other.config().seed, 99);
}

#[test]
fn unknown_run_is_reported() {
    let dir = fixture_copy();
    assert!(matches!(
        RunDir::open(&dir.path().join("runs"), "missing"),
        Err(PipelineError::UnknownRun(_))
    ));
    assert!(RunDir::list(&dir.path().join("runs")).unwrap().is_empty());
}
