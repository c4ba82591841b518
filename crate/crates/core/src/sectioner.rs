//! Section extraction and short-summary construction.
//!
//! A note is lowercased and flattened to single-spaced text, then each
//! section is captured with a non-greedy header-to-terminator pattern.
//! A short summary exists only when all four sections are found.

use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SectionError {
    #[error("pattern for {section}: {source}")]
    Pattern {
        section: Section,
        #[source]
        source: regex::Error,
    },
    #[error("pattern for {0} must have exactly one capture group")]
    CaptureGroups(Section),
    #[error("pattern file: {0}")]
    Io(#[from] std::io::Error),
    #[error("pattern file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Hpi,
    PertinentResults,
    HospitalCourse,
    DischargeDiagnosis,
}

impl Section {
    /// Concatenation order of a short summary.
    pub const ALL: [Section; 4] = [
        Section::Hpi,
        Section::PertinentResults,
        Section::HospitalCourse,
        Section::DischargeDiagnosis,
    ];
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Hpi => "hpi",
            Section::PertinentResults => "pertinent_results",
            Section::HospitalCourse => "hospital_course",
            Section::DischargeDiagnosis => "discharge_diagnosis",
        })
    }
}

/// Pattern strings, one per section. Serialized as the pattern file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionPatterns {
    pub hpi: String,
    pub pertinent_results: String,
    pub hospital_course: String,
    pub discharge_diagnosis: String,
}

impl Default for SectionPatterns {
    fn default() -> Self {
        SectionPatterns {
            hpi: r" history of present illness (.*?) past medical history ".into(),
            pertinent_results: r" pertinent results (.*?) brief hospital ".into(),
            hospital_course: r" hospital course (.*?) discharge medication ".into(),
            discharge_diagnosis: r" discharge diagnosis (.*?) discharge ".into(),
        }
    }
}

impl SectionPatterns {
    pub fn load(path: &Path) -> Result<Self, SectionError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn get(&self, section: Section) -> &str {
        match section {
            Section::Hpi => &self.hpi,
            Section::PertinentResults => &self.pertinent_results,
            Section::HospitalCourse => &self.hospital_course,
            Section::DischargeDiagnosis => &self.discharge_diagnosis,
        }
    }
}

/// Compiled section patterns.
#[derive(Debug, Clone)]
pub struct Sectioner {
    patterns: Vec<(Section, Regex)>,
}

impl Default for Sectioner {
    fn default() -> Self {
        Sectioner::new(&SectionPatterns::default()).expect("default patterns compile")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSet {
    pub hpi: Option<String>,
    pub pertinent_results: Option<String>,
    pub hospital_course: Option<String>,
    pub discharge_diagnosis: Option<String>,
}

impl SectionSet {
    pub fn get(&self, section: Section) -> Option<&str> {
        match section {
            Section::Hpi => self.hpi.as_deref(),
            Section::PertinentResults => self.pertinent_results.as_deref(),
            Section::HospitalCourse => self.hospital_course.as_deref(),
            Section::DischargeDiagnosis => self.discharge_diagnosis.as_deref(),
        }
    }

    fn slot(&mut self, section: Section) -> &mut Option<String> {
        match section {
            Section::Hpi => &mut self.hpi,
            Section::PertinentResults => &mut self.pertinent_results,
            Section::HospitalCourse => &mut self.hospital_course,
            Section::DischargeDiagnosis => &mut self.discharge_diagnosis,
        }
    }

    pub fn is_complete(&self) -> bool {
        Section::ALL.iter().all(|s| self.get(*s).is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub section: Section,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortSummary {
    pub admission_id: String,
    #[serde(rename = "short_summary")]
    pub text: String,
    #[serde(default)]
    pub codes: Vec<String>,
    pub section_spans: Vec<SectionSpan>,
}

impl Sectioner {
    pub fn new(patterns: &SectionPatterns) -> Result<Self, SectionError> {
        let mut compiled = Vec::with_capacity(4);
        for section in Section::ALL {
            let re = Regex::new(patterns.get(section))
                .map_err(|source| SectionError::Pattern { section, source })?;
            // captures_len counts the implicit whole-match group
            if re.captures_len() != 2 {
                return Err(SectionError::CaptureGroups(section));
            }
            compiled.push((section, re));
        }
        Ok(Sectioner { patterns: compiled })
    }

    /// Captures each section from the raw note text.
    pub fn extract_sections(&self, raw_text: &str) -> SectionSet {
        let flat = flatten_for_matching(raw_text);
        let mut set = SectionSet::default();
        for (section, re) in &self.patterns {
            let captured = re
                .captures(&flat)
                .and_then(|c| c.get(1))
                .map(|m| m.as_str().trim())
                .filter(|s| !s.is_empty());
            *set.slot(*section) = captured.map(str::to_string);
        }
        set
    }
}

/// Lowercases and turns every run of whitespace or header colons into a
/// single space, padded with one space on each side so headers at the
/// very start or end of a note can still match space-delimited patterns.
pub fn flatten_for_matching(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len() + 2);
    out.push(' ');
    let mut last_space = true;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() || c == ':' {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.push(c);
            last_space = false;
        }
    }
    if !last_space {
        out.push(' ');
    }
    out
}

/// Lowercase, `[a-z]` only, single spaces, trimmed.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_lowercase() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

/// Joins the four normalized sections in fixed order.
///
/// Returns `None` when a section is absent or normalizes to nothing.
pub fn build_short_summary(
    admission_id: &str,
    codes: &[String],
    sections: &SectionSet,
) -> Option<ShortSummary> {
    let mut text = String::new();
    let mut spans = Vec::with_capacity(4);
    for section in Section::ALL {
        let normalized = normalize_text(sections.get(section)?);
        if normalized.is_empty() {
            return None;
        }
        if !text.is_empty() {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(&normalized);
        spans.push(SectionSpan {
            section,
            start,
            end: text.len(),
        });
    }
    Some(ShortSummary {
        admission_id: admission_id.to_string(),
        text,
        codes: codes.to_vec(),
        section_spans: spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captures_hpi_between_headers() {
        let s = Sectioner::default();
        let set = s.extract_sections(
            "x history of present illness fever and chills past medical history none",
        );
        assert_eq!(set.hpi.as_deref(), Some("fever and chills"));
    }

    #[test]
    fn absent_header_leaves_field_empty() {
        let s = Sectioner::default();
        let set = s.extract_sections(
            "history of present illness a past medical history b brief hospital course c \
             discharge medication d discharge diagnosis e discharge condition f",
        );
        assert!(set.pertinent_results.is_none());
        assert_eq!(set.hpi.as_deref(), Some("a"));
        assert_eq!(set.hospital_course.as_deref(), Some("c"));
        assert_eq!(set.discharge_diagnosis.as_deref(), Some("e"));
    }

    #[test]
    fn plural_medications_header_does_not_close_hospital_course() {
        let set = Sectioner::default()
            .extract_sections("hospital course c discharge medications d discharge diagnosis e discharge");
        assert!(set.hospital_course.is_none());
        assert_eq!(set.discharge_diagnosis.as_deref(), Some("e"));
    }

    #[test]
    fn mixed_case_and_newlines_are_flattened() {
        let s = Sectioner::default();
        let set = s.extract_sections(
            "History of Present Illness:\nFever,\n\nchills.\nPast Medical History:\nHTN",
        );
        assert_eq!(set.hpi.as_deref(), Some("fever, chills."));
    }

    #[test]
    fn first_match_wins() {
        let s = Sectioner::default();
        let set = s.extract_sections(
            "history of present illness one past medical history \
             history of present illness two past medical history",
        );
        assert_eq!(set.hpi.as_deref(), Some("one"));
    }

    #[test]
    fn discharge_diagnosis_stops_at_next_discharge() {
        let s = Sectioner::default();
        let set = s.extract_sections(
            "discharge diagnosis anemia, gi bleed discharge condition stable",
        );
        assert_eq!(set.discharge_diagnosis.as_deref(), Some("anemia, gi bleed"));
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_text("Anemia, Hgb 7.2!\n"), "anemia hgb");
        assert_eq!(normalize_text("A  B"), "a b");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  42 "), "");
        assert_eq!(normalize_text("Café au-lait"), "caf au lait");
    }

    fn full_set() -> SectionSet {
        SectionSet {
            hpi: Some("Fever x3 days".into()),
            pertinent_results: Some("Hct 24".into()),
            hospital_course: Some("Transfused 2u PRBC.".into()),
            discharge_diagnosis: Some("Anemia".into()),
        }
    }

    #[test]
    fn summary_joins_sections_in_order() {
        let summary = build_short_summary("A", &[], &full_set()).unwrap();
        assert_eq!(summary.text, "fever x days hct transfused u prbc anemia");
        assert_eq!(summary.section_spans.len(), 4);
        let hc = summary.section_spans[2];
        assert_eq!(hc.section, Section::HospitalCourse);
        assert_eq!(&summary.text[hc.start..hc.end], "transfused u prbc");
    }

    #[test]
    fn summary_requires_all_sections() {
        let mut set = full_set();
        set.hospital_course = None;
        assert!(build_short_summary("A", &[], &set).is_none());
        let mut set = full_set();
        set.pertinent_results = Some("7.2".into());
        assert!(build_short_summary("A", &[], &set).is_none());
    }

    #[test]
    fn bad_pattern_is_reported() {
        let mut p = SectionPatterns {
            hpi: "no group here".into(),
            ..SectionPatterns::default()
        };
        assert!(matches!(Sectioner::new(&p), Err(SectionError::CaptureGroups(Section::Hpi))));
        p.hpi = "(".into();
        assert!(matches!(Sectioner::new(&p), Err(SectionError::Pattern { .. })));
    }
}
