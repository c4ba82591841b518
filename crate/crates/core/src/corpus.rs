//! Note and diagnosis ingest, admission merge and one-vs-rest labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};
use std::sync::OnceLock;

use log::warn;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CATEGORY: &str = "Discharge summary";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required column {column:?} (found: {found})")]
    MissingColumn { column: &'static str, found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid label spec: {0}")]
    LabelSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteRecord {
    pub admission_id: String,
    pub category: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisRow {
    pub admission_id: String,
    pub icd9_code: String,
    pub seq_num: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub admission_id: String,
    pub text: String,
    pub codes: Vec<String>,
}

#[derive(Debug, Default)]
pub struct NotesParse {
    pub records: Vec<NoteRecord>,
    /// Rows that could not be decoded or lacked an admission id.
    pub skipped: usize,
    /// Well-formed rows outside the category filter.
    pub filtered: usize,
    /// Kept rows whose text is empty.
    pub empty_text: usize,
}

#[derive(Debug, Default)]
pub struct DiagnosesParse {
    pub rows: Vec<DiagnosisRow>,
    pub skipped_empty_code: usize,
    pub skipped_invalid_code: usize,
    pub skipped_bad_seq: usize,
}

impl DiagnosesParse {
    pub fn skipped(&self) -> usize {
        self.skipped_empty_code + self.skipped_invalid_code + self.skipped_bad_seq
    }
}

#[derive(Debug, Default)]
pub struct MergeOutcome {
    pub records: Vec<AdmissionRecord>,
    pub notes_without_diagnoses: usize,
    pub diagnoses_without_note: usize,
    pub duplicate_notes: usize,
}

fn code_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[0-9VE][0-9]{1,4}$").unwrap())
}

/// Strips whitespace and uppercases; V and E codes stay textual.
pub fn normalize_code(raw: &str) -> String {
    raw.trim().to_ascii_uppercase()
}

pub fn is_valid_code(code: &str) -> bool {
    code_pattern().is_match(code)
}

fn column_index(
    headers: &csv::StringRecord,
    column: &'static str,
) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(column))
        .ok_or_else(|| CorpusError::MissingColumn {
            column,
            found: headers.iter().collect::<Vec<_>>().join(","),
        })
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source)
}

/// Reads `HADM_ID, CATEGORY, TEXT` rows, keeping those whose category
/// equals `category` (case-insensitive, trimmed).
pub fn parse_notes<R: Read>(source: R, category: &str) -> Result<NotesParse, CorpusError> {
    let mut reader = csv_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        warn!("notes stream is empty");
        return Ok(NotesParse::default());
    }
    let id_col = column_index(&headers, "HADM_ID")?;
    let cat_col = column_index(&headers, "CATEGORY")?;
    let text_col = column_index(&headers, "TEXT")?;

    let mut out = NotesParse::default();
    let wanted = category.trim();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(_) => {
                out.skipped += 1;
                continue;
            }
        };
        let (Some(id), Some(cat), Some(text)) =
            (row.get(id_col), row.get(cat_col), row.get(text_col))
        else {
            out.skipped += 1;
            continue;
        };
        let id = id.trim();
        if id.is_empty() {
            out.skipped += 1;
            continue;
        }
        if !cat.trim().eq_ignore_ascii_case(wanted) {
            out.filtered += 1;
            continue;
        }
        if text.trim().is_empty() {
            out.empty_text += 1;
        }
        out.records.push(NoteRecord {
            admission_id: id.to_string(),
            category: cat.trim().to_string(),
            text: text.to_string(),
        });
    }
    if out.records.is_empty() && out.skipped == 0 && out.filtered == 0 {
        warn!("notes stream has no data rows");
    }
    Ok(out)
}

/// Reads `HADM_ID, ICD9_CODE, SEQ_NUM` rows.
pub fn parse_diagnoses<R: Read>(source: R) -> Result<DiagnosesParse, CorpusError> {
    let mut reader = csv_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        warn!("diagnoses stream is empty");
        return Ok(DiagnosesParse::default());
    }
    let id_col = column_index(&headers, "HADM_ID")?;
    let code_col = column_index(&headers, "ICD9_CODE")?;
    let seq_col = column_index(&headers, "SEQ_NUM")?;

    let mut out = DiagnosesParse::default();
    for row in reader.records() {
        let Ok(row) = row else {
            out.skipped_invalid_code += 1;
            continue;
        };
        let id = row.get(id_col).unwrap_or("").trim();
        let code = normalize_code(row.get(code_col).unwrap_or(""));
        let seq = row.get(seq_col).unwrap_or("").trim();
        if code.is_empty() {
            out.skipped_empty_code += 1;
            continue;
        }
        if id.is_empty() || !is_valid_code(&code) {
            out.skipped_invalid_code += 1;
            continue;
        }
        // MIMIC exports sometimes carry integral floats ("1.0").
        let seq_num = seq
            .parse::<u32>()
            .ok()
            .or_else(|| {
                seq.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 1.0 && *v <= u32::MAX as f64)
                    .map(|v| v as u32)
            })
            .filter(|&s| s >= 1);
        let Some(seq_num) = seq_num else {
            out.skipped_bad_seq += 1;
            continue;
        };
        out.rows.push(DiagnosisRow {
            admission_id: id.to_string(),
            icd9_code: code,
            seq_num,
        });
    }
    Ok(out)
}

/// Inner join of notes and diagnosis rows on admission id.
///
/// Output is ordered by admission id; each record's codes are ordered by
/// `seq_num`, then code text. When an admission has several notes the
/// longest text wins (first seen on equal length).
pub fn merge_admissions(notes: &[NoteRecord], diagnoses: &[DiagnosisRow]) -> MergeOutcome {
    let mut by_note: BTreeMap<&str, &NoteRecord> = BTreeMap::new();
    let mut duplicate_notes = 0;
    for note in notes {
        match by_note.get_mut(note.admission_id.as_str()) {
            Some(existing) => {
                duplicate_notes += 1;
                if note.text.len() > existing.text.len() {
                    *existing = note;
                }
            }
            None => {
                by_note.insert(&note.admission_id, note);
            }
        }
    }

    let mut by_dx: BTreeMap<&str, Vec<(u32, &str)>> = BTreeMap::new();
    for row in diagnoses {
        by_dx
            .entry(row.admission_id.as_str())
            .or_default()
            .push((row.seq_num, row.icd9_code.as_str()));
    }

    let mut out = MergeOutcome {
        duplicate_notes,
        ..Default::default()
    };
    for (id, note) in &by_note {
        match by_dx.get(id) {
            Some(rows) => {
                let mut rows = rows.clone();
                rows.sort();
                out.records.push(AdmissionRecord {
                    admission_id: id.to_string(),
                    text: note.text.clone(),
                    codes: rows.into_iter().map(|(_, c)| c.to_string()).collect(),
                });
            }
            None => out.notes_without_diagnoses += 1,
        }
    }
    out.diagnoses_without_note = by_dx.keys().filter(|id| !by_note.contains_key(*id)).count();
    out
}

/// First `prefix_len` characters of `code`; shorter codes come back whole.
pub fn truncate_code(code: &str, prefix_len: usize) -> &str {
    match code.char_indices().nth(prefix_len) {
        Some((idx, _)) => &code[..idx],
        None => code,
    }
}

/// Target code prefixes of one one-vs-rest task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpec", into = "RawLabelSpec")]
pub struct LabelSpec {
    target_prefixes: BTreeSet<String>,
    prefix_len: usize,
}

#[derive(Serialize, Deserialize)]
struct RawLabelSpec {
    target_prefixes: Vec<String>,
    prefix_len: usize,
}

impl TryFrom<RawLabelSpec> for LabelSpec {
    type Error = CorpusError;
    fn try_from(raw: RawLabelSpec) -> Result<Self, Self::Error> {
        LabelSpec::new(raw.target_prefixes, raw.prefix_len)
    }
}

impl From<LabelSpec> for RawLabelSpec {
    fn from(spec: LabelSpec) -> Self {
        RawLabelSpec {
            target_prefixes: spec.target_prefixes.into_iter().collect(),
            prefix_len: spec.prefix_len,
        }
    }
}

impl LabelSpec {
    pub fn new<I, S>(prefixes: I, prefix_len: usize) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if !(2..=5).contains(&prefix_len) {
            return Err(CorpusError::LabelSpec(format!(
                "prefix_len {prefix_len} not in 2..=5"
            )));
        }
        let target_prefixes: BTreeSet<String> = prefixes
            .into_iter()
            .map(|p| normalize_code(p.as_ref()).replace('.', ""))
            .collect();
        if target_prefixes.is_empty() {
            return Err(CorpusError::LabelSpec("no target prefixes".into()));
        }
        if let Some(bad) = target_prefixes
            .iter()
            .find(|p| p.chars().count() != prefix_len)
        {
            return Err(CorpusError::LabelSpec(format!(
                "prefix {bad:?} does not have length {prefix_len}"
            )));
        }
        Ok(LabelSpec {
            target_prefixes,
            prefix_len,
        })
    }

    /// Chapter IV (280-289) as the two-character prefix "28".
    pub fn chapter_iv() -> Self {
        LabelSpec::new(["28"], 2).expect("static spec")
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn target_prefixes(&self) -> &BTreeSet<String> {
        &self.target_prefixes
    }

    /// Readable name, e.g. `28` or `2859|2875`.
    pub fn name(&self) -> String {
        self.target_prefixes
            .iter()
            .cloned()
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// 1 when any code's prefix is a target prefix, else 0.
pub fn label_one_vs_rest(codes: &[String], spec: &LabelSpec) -> u8 {
    let hit = codes.iter().any(|c| {
        spec.target_prefixes
            .contains(truncate_code(c, spec.prefix_len))
    });
    u8::from(hit)
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> Result<(), CorpusError> {
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CorpusError::Json { line: 0, source: e })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: i + 1,
            source: e,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_discharge_note() {
        let csv = "HADM_ID,CATEGORY,TEXT\n100001,Discharge summary,\"Admission Date: x\nmore\"\n";
        let parsed = parse_notes(csv.as_bytes(), DEFAULT_CATEGORY).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].admission_id, "100001");
        assert_eq!(parsed.records[0].text, "Admission Date: x\nmore");
    }

    #[test]
    fn filters_other_categories() {
        let csv = "HADM_ID,CATEGORY,TEXT\n100001,Radiology,chest film\n";
        let parsed = parse_notes(csv.as_bytes(), DEFAULT_CATEGORY).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(parsed.filtered, 1);
    }

    #[test]
    fn empty_stream_is_empty_list() {
        let parsed = parse_notes("".as_bytes(), DEFAULT_CATEGORY).unwrap();
        assert!(parsed.records.is_empty());
    }

    #[test]
    fn missing_column_is_fatal() {
        let csv = "HADM_ID,TEXT\n1,abc\n";
        let err = parse_notes(csv.as_bytes(), DEFAULT_CATEGORY).unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn { column: "CATEGORY", .. }));
    }

    #[test]
    fn empty_text_is_flagged_not_dropped() {
        let csv = "HADM_ID,CATEGORY,TEXT\n7,Discharge summary,\"\"\n";
        let parsed = parse_notes(csv.as_bytes(), DEFAULT_CATEGORY).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.empty_text, 1);
    }

    #[test]
    fn diagnoses_keep_seq_and_skip_bad_rows() {
        let csv = "HADM_ID,ICD9_CODE,SEQ_NUM\nA,2851,2\nA,53100,1\nA,,3\nA,4019,x\nA,ABC,4\n";
        let parsed = parse_diagnoses(csv.as_bytes()).unwrap();
        assert_eq!(parsed.rows.len(), 2);
        assert_eq!(parsed.rows[0].seq_num, 2);
        assert_eq!(parsed.rows[1].seq_num, 1);
        assert_eq!(parsed.skipped_empty_code, 1);
        assert_eq!(parsed.skipped_bad_seq, 1);
        assert_eq!(parsed.skipped_invalid_code, 1);
    }

    #[test]
    fn diagnosis_codes_are_stripped_and_uppercased() {
        let csv = "HADM_ID,ICD9_CODE,SEQ_NUM\nA, v5867 ,1\n";
        let parsed = parse_diagnoses(csv.as_bytes()).unwrap();
        assert_eq!(parsed.rows[0].icd9_code, "V5867");
    }

    fn note(id: &str, text: &str) -> NoteRecord {
        NoteRecord {
            admission_id: id.into(),
            category: DEFAULT_CATEGORY.into(),
            text: text.into(),
        }
    }

    fn dx(id: &str, code: &str, seq: u32) -> DiagnosisRow {
        DiagnosisRow {
            admission_id: id.into(),
            icd9_code: code.into(),
            seq_num: seq,
        }
    }

    #[test]
    fn merge_orders_codes_by_seq() {
        let out = merge_admissions(&[note("A", "t")], &[dx("A", "2851", 2), dx("A", "53100", 1)]);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].codes, codes(&["53100", "2851"]));
    }

    #[test]
    fn merge_drops_unmatched() {
        let out = merge_admissions(&[note("A", "t")], &[dx("B", "2851", 1)]);
        assert!(out.records.is_empty());
        assert_eq!(out.notes_without_diagnoses, 1);
        assert_eq!(out.diagnoses_without_note, 1);

        let notes = [note("A", "a"), note("B", "b"), note("C", "c")];
        let out = merge_admissions(&notes, &[dx("A", "1", 1), dx("C", "2", 1)]);
        assert_eq!(out.records.len(), 2);
    }

    #[test]
    fn merge_keeps_longest_duplicate() {
        let notes = [note("A", "short"), note("A", "much longer text"), note("A", "mid text")];
        let out = merge_admissions(&notes, &[dx("A", "2851", 1)]);
        assert_eq!(out.duplicate_notes, 2);
        assert_eq!(out.records[0].text, "much longer text");
    }

    #[test]
    fn merge_breaks_seq_ties_by_code() {
        let out = merge_admissions(&[note("A", "t")], &[dx("A", "4019", 1), dx("A", "2851", 1)]);
        assert_eq!(out.records[0].codes, codes(&["2851", "4019"]));
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_code("25013", 2), "25");
        assert_eq!(truncate_code("V5867", 2), "V5");
        assert_eq!(truncate_code("2851", 3), "285");
        assert_eq!(truncate_code("486", 5), "486");
    }

    #[test]
    fn labels_follow_prefix_intersection() {
        let spec = LabelSpec::new(["28"], 2).unwrap();
        assert_eq!(label_one_vs_rest(&codes(&["53100", "2851", "07054"]), &spec), 1);
        assert_eq!(label_one_vs_rest(&codes(&["25013", "3371", "5849"]), &spec), 0);
        let spec = LabelSpec::new(["2859"], 4).unwrap();
        assert_eq!(label_one_vs_rest(&codes(&["2851", "2875"]), &spec), 0);
    }

    #[test]
    fn label_spec_validation() {
        assert!(LabelSpec::new(["28"], 3).is_err());
        assert!(LabelSpec::new(Vec::<String>::new(), 2).is_err());
        assert!(LabelSpec::new(["2"], 1).is_err());
        // dotted forms are accepted
        let spec = LabelSpec::new(["285.9"], 4).unwrap();
        assert!(spec.target_prefixes().contains("2859"));
    }
}
