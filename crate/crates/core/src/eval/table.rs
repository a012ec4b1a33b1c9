//! Plain-text tables in the layout used for reporting results.

use std::fmt::Write;

use super::{metrics, ConfusionCounts, EvalReport, Tally};

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub counts: ConfusionCounts,
    pub name_unspecified: Tally,
    pub name_all: Tally,
}

impl TableRow {
    pub fn from_report(model: impl Into<String>, r: &EvalReport) -> Self {
        TableRow {
            model: model.into(),
            counts: r.counts,
            name_unspecified: r.name_correct_unspecified,
            name_all: r.name_correct_all,
        }
    }
}

fn model_width(rows: &[TableRow]) -> usize {
    rows.iter()
        .map(|r| r.model.chars().count())
        .max()
        .unwrap_or(0)
        .max("Response".len())
}

/// Model, TP, TN, FN, FP, Precision, Recall, F1 (two decimals, half-up).
pub fn render_presence_table(rows: &[TableRow]) -> String {
    let w = model_width(rows);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<w$}  {:>5} {:>5} {:>5} {:>5}  {:>9} {:>6} {:>5}",
        "Model", "TP", "TN", "FN", "FP", "Precision", "Recall", "F1"
    );
    for r in rows {
        let m = metrics(&r.counts);
        let c = &r.counts;
        let _ = writeln!(
            out,
            "{:<w$}  {:>5} {:>5} {:>5} {:>5}  {:>9} {:>6} {:>5}",
            r.model,
            c.tp,
            c.tn,
            c.fn_,
            c.fp,
            m.precision.rounded(2),
            m.recall.rounded(2),
            m.f1.rounded(2)
        );
    }
    out
}

/// Correct / incorrect / % correct for Unspecified golds and for all notes.
pub fn render_name_table(rows: &[TableRow]) -> String {
    let w = model_width(rows);
    let unspec_total = rows.first().map_or(0, |r| r.name_unspecified.total);
    let all_total = rows.first().map_or(0, |r| r.name_all.total);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<w$}  {:<27}  {:<27}",
        "Label",
        format!("Unspecified ({unspec_total})"),
        format!("All ({all_total})")
    );
    let _ = writeln!(
        out,
        "{:<w$}  {:>7} {:>9} {:>9}  {:>7} {:>9} {:>9}",
        "Response", "Correct", "Incorrect", "% Correct", "Correct", "Incorrect", "% Correct"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<w$}  {:>7} {:>9} {:>9}  {:>7} {:>9} {:>9}",
            r.model,
            r.name_unspecified.correct,
            r.name_unspecified.incorrect(),
            r.name_unspecified.ratio().percent(0),
            r.name_all.correct,
            r.name_all.incorrect(),
            r.name_all.ratio().percent(1)
        );
    }
    out
}
