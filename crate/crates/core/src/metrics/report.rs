use std::fmt::Write as _;
use std::path::Path;

use super::{relative_improvement, EditCounts};
use crate::error::{Error, Result};

/// Columns of the per-utterance table, in output order.
pub const ROW_COLUMNS: [&str; 12] = [
    "system",
    "id",
    "si_sdr_db",
    "sdr_db",
    "stoi",
    "substitutions",
    "deletions",
    "insertions",
    "ref_tokens",
    "ter",
    "truncated",
    "hypothesis",
];

/// Columns of the summary block, in output order.
pub const SUMMARY_COLUMNS: [&str; 7] = [
    "system",
    "utterances",
    "si_sdr_db",
    "sdr_db",
    "stoi",
    "ter_pct",
    "ter_rel_improvement_pct",
];

/// Metrics of one utterance under one system. Signal metrics are absent
/// when the manifest has no clean reference.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub system: String,
    pub id: String,
    pub si_sdr: Option<f64>,
    pub sdr: Option<f64>,
    pub stoi: Option<f64>,
    pub edits: EditCounts,
    pub ref_tokens: usize,
    pub truncated: bool,
    pub hypothesis: String,
}

impl EvalRow {
    pub fn ter(&self) -> f64 {
        self.edits.total() as f64 / self.ref_tokens as f64
    }
}

/// Corpus aggregates of one system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSummary {
    pub system: String,
    pub utterances: usize,
    pub si_sdr: Option<f64>,
    pub sdr: Option<f64>,
    pub stoi: Option<f64>,
    /// Total edits over total reference tokens, in percent.
    pub ter_pct: f64,
    /// `100·(a − b)/a` of TER against the first system of the report.
    pub ter_rel_improvement_pct: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut n = 0usize;
    let mut s = 0.0;
    for x in v {
        s += x?;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        Self { rows }
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    /// System names in order of first appearance.
    pub fn systems(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.system) {
                out.push(r.system.clone());
            }
        }
        out
    }

    pub fn summary(&self, system: &str) -> Option<SystemSummary> {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.system == system).collect();
        if rows.is_empty() {
            return None;
        }
        let edits: usize = rows.iter().map(|r| r.edits.total()).sum();
        let tokens: usize = rows.iter().map(|r| r.ref_tokens).sum();
        let ter_pct = 100.0 * edits as f64 / tokens.max(1) as f64;
        let first = self.systems().into_iter().next().expect("rows exist");
        let ter_rel_improvement_pct = if first == system {
            None
        } else {
            let base = self.summary(&first).expect("first system has rows").ter_pct;
            relative_improvement(base, ter_pct).ok()
        };
        Some(SystemSummary {
            system: system.to_string(),
            utterances: rows.len(),
            si_sdr: mean(rows.iter().map(|r| r.si_sdr)),
            sdr: mean(rows.iter().map(|r| r.sdr)),
            stoi: mean(rows.iter().map(|r| r.stoi)),
            ter_pct,
            ter_rel_improvement_pct,
        })
    }

    pub fn summaries(&self) -> Vec<SystemSummary> {
        self.systems().iter().filter_map(|s| self.summary(s)).collect()
    }

    /// Summary block alone: a header line and one line per system.
    pub fn summary_tsv(&self) -> String {
        let mut out = SUMMARY_COLUMNS.join("\t");
        out.push('\n');
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.2}\t{}",
                s.system,
                s.utterances,
                cell(s.si_sdr),
                cell(s.sdr),
                cell(s.stoi),
                s.ter_pct,
                s.ter_rel_improvement_pct.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
            );
        }
        out
    }

    /// Per-utterance table followed by a blank line, `# summary` and the
    /// summary block.
    pub fn to_tsv(&self) -> String {
        let mut out = ROW_COLUMNS.join("\t");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{}\t{}",
                r.system,
                r.id,
                cell(r.si_sdr),
                cell(r.sdr),
                cell(r.stoi),
                r.edits.substitutions,
                r.edits.deletions,
                r.edits.insertions,
                r.ref_tokens,
                r.ter(),
                u8::from(r.truncated),
                r.hypothesis
            );
        }
        out.push_str("\n# summary\n");
        out.push_str(&self.summary_tsv());
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(system: &str, id: &str, si: Option<f64>, subs: usize, n: usize) -> EvalRow {
        EvalRow {
            system: system.into(),
            id: id.into(),
            si_sdr: si,
            sdr: si.map(|v| v + 0.5),
            stoi: si.map(|_| 0.8),
            edits: EditCounts {
                substitutions: subs,
                deletions: 0,
                insertions: 0,
            },
            ref_tokens: n,
            truncated: false,
            hypothesis: "one two".into(),
        }
    }

    #[test]
    fn aggregates_follow_rows() {
        let r = EvalReport::new(vec![
            row("noisy", "a", Some(1.0), 2, 4),
            row("noisy", "b", Some(3.0), 1, 2),
            row("se", "a", Some(5.0), 1, 4),
            row("se", "b", Some(9.0), 0, 2),
        ]);
        assert_eq!(r.systems(), vec!["noisy", "se"]);
        let n = r.summary("noisy").unwrap();
        assert_eq!(n.si_sdr, Some(2.0));
        assert_eq!(n.sdr, Some(2.5));
        assert!((n.ter_pct - 50.0).abs() < 1e-12);
        assert_eq!(n.ter_rel_improvement_pct, None);
        let s = r.summary("se").unwrap();
        assert!((s.ter_pct - 100.0 / 6.0).abs() < 1e-12);
        assert!((s.ter_rel_improvement_pct.unwrap() - 100.0 * (50.0 - 100.0 / 6.0) / 50.0).abs() < 1e-9);
    }

    #[test]
    fn missing_references_omit_signal_metrics() {
        let r = EvalReport::new(vec![row("noisy", "a", None, 1, 3)]);
        let s = r.summary("noisy").unwrap();
        assert_eq!((s.si_sdr, s.sdr, s.stoi), (None, None, None));
        let text = r.to_tsv();
        assert!(text.contains("noisy\ta\t-\t-\t-\t1\t0\t0\t3"));
    }

    #[test]
    fn tsv_layout_is_stable() {
        let r = EvalReport::new(vec![row("noisy", "a", Some(1.0), 0, 2)]);
        let text = r.to_tsv();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), ROW_COLUMNS.join("\t"));
        assert_eq!(lines.next().unwrap().split('\t').count(), ROW_COLUMNS.len());
        assert_eq!(lines.next().unwrap(), "");
        assert_eq!(lines.next().unwrap(), "# summary");
        assert_eq!(lines.next().unwrap(), SUMMARY_COLUMNS.join("\t"));
        assert_eq!(lines.next().unwrap().split('\t').count(), SUMMARY_COLUMNS.len());
    }
}
