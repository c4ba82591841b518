//! Faulty-band review queue backed by an append-only decision log.
//!
//! The queue holds exactly the documents whose score falls in a band
//! flagged as faulty. Coder decisions are appended to a JSONL log; the
//! current status of every item is whatever replaying that log yields.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::categorizer::{CategorizationRun, Class, MatchedEntity};
use crate::weight::Weight;

pub const DEFAULT_PAGE_SIZE: usize = 20;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("run has no band analysis; run the bands stage first")]
    NoBandAnalysis,
    #[error("document {0:?} is not in the review queue")]
    NotFound(String),
    #[error("invalid decision: {0}")]
    Validation(String),
    #[error("page must be at least 1")]
    BadPage,
    #[error("decision log line {line}: {source}")]
    CorruptLog {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Decided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    Override,
}

/// A coder's verdict as submitted. `final_class` may be omitted for a
/// confirmation and for an override of a two-class prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub doc_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub final_class: Option<Class>,
    pub coder_id: String,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub doc_id: String,
    pub verdict: Verdict,
    pub final_class: Class,
    pub coder_id: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub doc_id: String,
    pub sum: Weight,
    pub band: String,
    pub band_impurity: f64,
    pub matched: Vec<MatchedEntity>,
    pub predicted: Class,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<ReviewItem>,
    pub page: usize,
    pub page_size: usize,
    /// Items matching the filter across all pages.
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueFilter {
    #[serde(default)]
    pub status: Option<Status>,
    #[serde(default)]
    pub band: Option<String>,
    #[serde(default)]
    pub page: Option<usize>,
    #[serde(default)]
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub doc_id: String,
    pub status: Status,
    pub final_class: Class,
    pub superseded: bool,
    pub log_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Automatic,
    Coder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedDoc {
    pub doc_id: String,
    pub automatic: Class,
    pub final_class: Class,
    pub source: LabelSource,
}

/// Queue members in review order: band impurity descending, then sum
/// ascending, then doc id.
pub fn build_queue(run: &CategorizationRun) -> Result<Vec<ReviewItem>, ReviewError> {
    if run.band_stats.is_empty() {
        return Err(ReviewError::NoBandAnalysis);
    }
    let mut items: Vec<ReviewItem> = run
        .reports
        .iter()
        .filter_map(|r| {
            let stat = run.band_stat(r.sum).filter(|s| s.faulty)?;
            Some(ReviewItem {
                doc_id: r.doc_id.clone(),
                sum: r.sum,
                band: stat.id.clone(),
                band_impurity: stat.impurity,
                matched: r.matched.clone(),
                predicted: r
                    .predicted
                    .unwrap_or_else(|| crate::categorizer::classify_threshold(r.sum, run.tau)),
                status: Status::Pending,
                decision: None,
            })
        })
        .collect();
    items.sort_by(|a, b| {
        b.band_impurity
            .total_cmp(&a.band_impurity)
            .then(a.sum.cmp(&b.sum))
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    Ok(items)
}

/// Checks a request against the item's automatic prediction and resolves
/// the final class.
pub fn resolve_request(req: &DecisionRequest, predicted: Class) -> Result<Class, ReviewError> {
    if req.coder_id.trim().is_empty() {
        return Err(ReviewError::Validation("coder_id is required".into()));
    }
    let flip = match predicted {
        Class::Chapter => Class::Rest,
        Class::Rest => Class::Chapter,
    };
    match (req.verdict, req.final_class) {
        (Verdict::Confirm, None) => Ok(predicted),
        (Verdict::Confirm, Some(c)) if c == predicted => Ok(c),
        (Verdict::Confirm, Some(c)) => Err(ReviewError::Validation(format!(
            "confirm must keep the predicted class {predicted}, got {c}"
        ))),
        (Verdict::Override, None) => Ok(flip),
        (Verdict::Override, Some(c)) if c != predicted => Ok(c),
        (Verdict::Override, Some(c)) => Err(ReviewError::Validation(format!(
            "override must change the predicted class, got {c}"
        ))),
    }
}

/// Review state for one run: the queue plus the replayed decision log.
#[derive(Debug)]
pub struct ReviewState {
    run: CategorizationRun,
    items: Vec<ReviewItem>,
    position: BTreeMap<String, usize>,
    log_path: PathBuf,
    log_len: usize,
}

impl ReviewState {
    /// Builds the queue and replays `log_path` if it exists.
    pub fn open(run: CategorizationRun, log_path: impl Into<PathBuf>) -> Result<Self, ReviewError> {
        let items = build_queue(&run)?;
        let position = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.doc_id.clone(), i))
            .collect();
        let mut state = ReviewState {
            run,
            items,
            position,
            log_path: log_path.into(),
            log_len: 0,
        };
        for decision in read_log(&state.log_path)? {
            state.apply(decision)?;
        }
        Ok(state)
    }

    fn apply(&mut self, decision: Decision) -> Result<bool, ReviewError> {
        let i = *self
            .position
            .get(&decision.doc_id)
            .ok_or_else(|| ReviewError::NotFound(decision.doc_id.clone()))?;
        let item = &mut self.items[i];
        let superseded = item.decision.is_some();
        item.status = Status::Decided;
        item.decision = Some(decision);
        self.log_len += 1;
        Ok(superseded)
    }

    pub fn run(&self) -> &CategorizationRun {
        &self.run
    }

    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn item(&self, doc_id: &str) -> Option<&ReviewItem> {
        self.position.get(doc_id).map(|&i| &self.items[i])
    }

    pub fn log_len(&self) -> usize {
        self.log_len
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// One page of queue items matching `filter`. Pages start at 1; a
    /// page past the end is empty.
    pub fn list_items(&self, filter: &QueueFilter) -> Result<Page, ReviewError> {
        let page = filter.page.unwrap_or(1);
        if page == 0 {
            return Err(ReviewError::BadPage);
        }
        let page_size = filter.page_size.unwrap_or(DEFAULT_PAGE_SIZE).max(1);
        let matching: Vec<&ReviewItem> = self
            .items
            .iter()
            .filter(|it| filter.status.is_none_or(|s| it.status == s))
            .filter(|it| filter.band.as_deref().is_none_or(|b| it.band == b))
            .collect();
        let items = matching
            .iter()
            .skip((page - 1).saturating_mul(page_size))
            .take(page_size)
            .map(|it| (*it).clone())
            .collect();
        Ok(Page {
            items,
            page,
            page_size,
            total: matching.len(),
        })
    }

    /// Validates, appends to the log, then updates the index.
    pub fn submit(&mut self, req: &DecisionRequest, timestamp: String) -> Result<Ack, ReviewError> {
        let item = self
            .item(&req.doc_id)
            .ok_or_else(|| ReviewError::NotFound(req.doc_id.clone()))?;
        let final_class = resolve_request(req, item.predicted)?;
        let decision = Decision {
            doc_id: req.doc_id.clone(),
            verdict: req.verdict,
            final_class,
            coder_id: req.coder_id.trim().to_string(),
            timestamp,
        };
        append_log(&self.log_path, &decision)?;
        let superseded = self.apply(decision)?;
        Ok(Ack {
            doc_id: req.doc_id.clone(),
            status: Status::Decided,
            final_class,
            superseded,
            log_len: self.log_len,
        })
    }

    /// Final class per scored document: the active coder decision if any,
    /// otherwise the threshold prediction. Ordered by doc id.
    pub fn export_validated(&self) -> Vec<ValidatedDoc> {
        let mut out: Vec<ValidatedDoc> = self
            .run
            .reports
            .iter()
            .map(|r| {
                let automatic = r
                    .predicted
                    .unwrap_or_else(|| crate::categorizer::classify_threshold(r.sum, self.run.tau));
                match self.item(&r.doc_id).and_then(|it| it.decision.as_ref()) {
                    Some(d) => ValidatedDoc {
                        doc_id: r.doc_id.clone(),
                        automatic,
                        final_class: d.final_class,
                        source: LabelSource::Coder,
                    },
                    None => ValidatedDoc {
                        doc_id: r.doc_id.clone(),
                        automatic,
                        final_class: automatic,
                        source: LabelSource::Automatic,
                    },
                }
            })
            .collect();
        out.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        out
    }
}

pub fn read_log(path: &Path) -> Result<Vec<Decision>, ReviewError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| ReviewError::CorruptLog { line: i + 1, source })?,
        );
    }
    Ok(out)
}

fn append_log(path: &Path, decision: &Decision) -> Result<(), ReviewError> {
    let mut line = serde_json::to_string(decision).expect("decision serializes");
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorizer::{Band, BandStat, Orientation, ScoreReport};

    fn w(h: i64) -> Weight {
        Weight::from_hundredths(h)
    }

    fn run() -> CategorizationRun {
        let tau = w(100);
        let faulty = Band::new(w(100), w(150)).unwrap();
        let clean = Band::new(w(150), w(500)).unwrap();
        let report = |id: &str, sum: i64| ScoreReport {
            doc_id: id.into(),
            matched: vec![],
            sum: w(sum),
            predicted: Some(crate::categorizer::classify_threshold(w(sum), tau)),
            band: None,
        };
        CategorizationRun {
            tau,
            band_stats: vec![
                BandStat::from_counts(faulty, Orientation::ExpectChapter, 2, 1, 5, 0.25),
                BandStat::from_counts(clean, Orientation::ExpectChapter, 2, 0, 5, 0.25),
            ],
            reports: vec![
                report("a", 140),
                report("b", 122),
                report("c", 400),
                report("d", 130),
                report("e", 200),
            ],
            texts: BTreeMap::new(),
        }
    }

    fn req(doc: &str, verdict: Verdict) -> DecisionRequest {
        DecisionRequest {
            doc_id: doc.into(),
            verdict,
            final_class: None,
            coder_id: "c1".into(),
        }
    }

    #[test]
    fn queue_is_the_faulty_band_ordered_by_sum() {
        let q = build_queue(&run()).unwrap();
        let ids: Vec<&str> = q.iter().map(|i| i.doc_id.as_str()).collect();
        assert_eq!(ids, ["b", "d", "a"]);
        assert!(q.iter().all(|i| i.band == "1-1.5"));
    }

    #[test]
    fn missing_band_analysis_is_an_error() {
        let mut r = run();
        r.band_stats.clear();
        assert!(matches!(build_queue(&r), Err(ReviewError::NoBandAnalysis)));
    }

    #[test]
    fn decisions_filter_supersede_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("decisions.jsonl");
        let mut s = ReviewState::open(run(), &log).unwrap();
        let ack = s.submit(&req("b", Verdict::Confirm), "t1".into()).unwrap();
        assert_eq!((ack.log_len, ack.superseded, ack.final_class), (1, false, Class::Chapter));
        let pending = QueueFilter {
            status: Some(Status::Pending),
            ..Default::default()
        };
        assert_eq!(s.list_items(&pending).unwrap().items.len(), 2);

        let ack = s.submit(&req("b", Verdict::Override), "t2".into()).unwrap();
        assert_eq!((ack.log_len, ack.superseded, ack.final_class), (2, true, Class::Rest));

        let replayed = ReviewState::open(run(), &log).unwrap();
        assert_eq!(replayed.items(), s.items());
        assert_eq!(replayed.log_len(), 2);
        assert_eq!(read_log(&log).unwrap().len(), 2);
    }

    #[test]
    fn validation_and_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewState::open(run(), dir.path().join("d.jsonl")).unwrap();
        assert!(matches!(
            s.submit(&req("c", Verdict::Confirm), "t".into()),
            Err(ReviewError::NotFound(_))
        ));
        let mut bad = req("a", Verdict::Override);
        bad.final_class = Some(Class::Chapter);
        assert!(matches!(s.submit(&bad, "t".into()), Err(ReviewError::Validation(_))));
        let mut anon = req("a", Verdict::Confirm);
        anon.coder_id = " ".into();
        assert!(matches!(s.submit(&anon, "t".into()), Err(ReviewError::Validation(_))));
        assert_eq!(s.log_len(), 0);
    }

    #[test]
    fn pagination() {
        let dir = tempfile::tempdir().unwrap();
        let s = ReviewState::open(run(), dir.path().join("d.jsonl")).unwrap();
        let f = |page| QueueFilter {
            page: Some(page),
            page_size: Some(2),
            ..Default::default()
        };
        assert_eq!(s.list_items(&f(1)).unwrap().items.len(), 2);
        assert_eq!(s.list_items(&f(2)).unwrap().items.len(), 1);
        assert!(s.list_items(&f(9)).unwrap().items.is_empty());
        assert!(matches!(s.list_items(&f(0)), Err(ReviewError::BadPage)));
        let band = QueueFilter {
            band: Some("1.5-5".into()),
            ..Default::default()
        };
        assert_eq!(s.list_items(&band).unwrap().total, 0);
    }

    #[test]
    fn export_merges_decisions() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewState::open(run(), dir.path().join("d.jsonl")).unwrap();
        let auto: Vec<Class> = s.export_validated().iter().map(|d| d.final_class).collect();
        assert!(s.export_validated().iter().all(|d| d.final_class == d.automatic));
        s.submit(&req("a", Verdict::Override), "t".into()).unwrap();
        s.submit(&req("d", Verdict::Override), "t".into()).unwrap();
        let after: Vec<Class> = s.export_validated().iter().map(|d| d.final_class).collect();
        let changed = auto.iter().zip(&after).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 2);
    }
}
