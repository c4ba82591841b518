use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::stages::RunDir;
use super::PipelineError;
use crate::categorizer::interpret;
use crate::metrics::metrics_table;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Thresholds,
    Bands,
    Metrics,
    Interpretation,
}

impl ReportKind {
    pub const ALL: [ReportKind; 4] = [
        ReportKind::Thresholds,
        ReportKind::Bands,
        ReportKind::Metrics,
        ReportKind::Interpretation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Thresholds => "thresholds",
            ReportKind::Bands => "bands",
            ReportKind::Metrics => "metrics",
            ReportKind::Interpretation => "interpretation",
        }
    }

    pub(crate) fn names() -> String {
        ReportKind::ALL.map(ReportKind::name).join(", ")
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReportKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PipelineError::UnknownReportKind(s.to_string()))
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

/// Plain-text table for one run. `doc_id` is required for
/// interpretation reports and ignored otherwise.
pub fn export_report(run: &RunDir, kind: ReportKind, doc_id: Option<&str>) -> Result<String, PipelineError> {
    let mut out = String::new();
    match kind {
        ReportKind::Thresholds => {
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>6} {:>8} {:>8} {:>10} {:>10} {:>10}",
                "weights", "entities", "tau", "n_1", "n_0", "1:sum>tau", "0:sum>tau", "0:sum<=tau"
            );
            for table in run.load_thresholds()? {
                for row in &table.rows {
                    let _ = writeln!(
                        out,
                        "{:<12} {:>8} {:>6} {:>8} {:>8} {:>10} {:>10} {:>10}",
                        table.weights,
                        table.entity_count,
                        row.tau.to_string(),
                        row.positives,
                        row.negatives,
                        pct(row.class1_rate),
                        pct(row.class0_leakage),
                        pct(row.class0_rest_rate)
                    );
                }
            }
        }
        ReportKind::Bands => {
            let run = run.load_bands()?;
            let _ = writeln!(
                out,
                "{:<14} {:>8} {:>8} {:>8} {:>9} {:>6}",
                "band", "count_1", "count_0", "share", "impurity", "faulty"
            );
            for b in &run.band_stats {
                let _ = writeln!(
                    out,
                    "{:<14} {:>8} {:>8} {:>8} {:>9.4} {:>6}",
                    b.id,
                    b.count_chapter,
                    b.count_rest,
                    pct(b.share),
                    b.impurity,
                    if b.faulty { "yes" } else { "no" }
                );
            }
            let _ = writeln!(out, "tau {}", run.tau);
        }
        ReportKind::Metrics => out = metrics_table(&run.load_metrics()?),
        ReportKind::Interpretation => {
            let doc_id = doc_id.ok_or_else(|| {
                PipelineError::Report("interpretation report needs a document id".into())
            })?;
            let r = interpret(doc_id, &run.load_bands()?)?;
            let _ = writeln!(out, "document  {}", r.doc_id);
            let _ = writeln!(
                out,
                "SUM {}  tau {}  predicted {}  band {}{}",
                r.sum,
                r.tau,
                r.predicted,
                r.band.as_deref().unwrap_or("-"),
                r.band_impurity
                    .map(|i| format!(" (impurity {i:.4})"))
                    .unwrap_or_default()
            );
            let _ = writeln!(
                out,
                "flagged for review: {}",
                if r.flagged_for_review { "yes" } else { "no" }
            );
            let _ = writeln!(out, "{:<32} {:>7} {:>5}", "entity", "weight", "hits");
            for m in &r.matched {
                let _ = writeln!(out, "{:<32} {:>7} {:>5}", m.entity, m.weight.to_string(), m.spans.len());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_lists_valid_kinds() {
        let err = "confusion".parse::<ReportKind>().unwrap_err();
        let msg = err.to_string();
        for k in ReportKind::ALL {
            assert!(msg.contains(k.name()), "{msg}");
        }
    }
}
