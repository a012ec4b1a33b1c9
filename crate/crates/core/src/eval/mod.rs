//! Two-level scoring: vaccine presence (confusion counts, P/R/F1) and
//! name-level accuracy with exact-match rate.
//!
//! Ratios keep their integer numerator and denominator so that displayed
//! values are rounded half-up exactly, with no floating-point drift at .5.

mod table;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::label::{ExtractionResult, Prediction, VaccineLabel};
use crate::lexicon::Lexicon;

pub use table::{render_name_table, render_presence_table, TableRow};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("nothing to score")]
    Empty,
    #[error("prediction for unknown note id {0:?}")]
    UnknownId(String),
    #[error("note id {0:?} predicted more than once")]
    DuplicatePrediction(String),
    #[error("note {0:?} has no gold label")]
    MissingGold(String),
}

/// Vaccine-present iff the label is `Named` or `Unspecified`.
pub fn binarize(label: &VaccineLabel) -> bool {
    label.is_present()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presence {
    TP,
    TN,
    FP,
    FN,
}

impl Presence {
    pub fn of(predicted: bool, gold: bool) -> Self {
        match (predicted, gold) {
            (true, true) => Presence::TP,
            (false, false) => Presence::TN,
            (true, false) => Presence::FP,
            (false, true) => Presence::FN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fn_: u64, fp: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn add(&mut self, p: Presence) {
        match p {
            Presence::TP => self.tp += 1,
            Presence::TN => self.tn += 1,
            Presence::FP => self.fp += 1,
            Presence::FN => self.fn_ += 1,
        }
    }
}

/// An exact fraction. `undefined` marks a zero denominator, reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
    pub value: f64,
    #[serde(default)]
    pub undefined: bool,
}

impl Ratio {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        if denominator == 0 {
            return Ratio::undefined();
        }
        Ratio {
            numerator,
            denominator,
            value: numerator as f64 / denominator as f64,
            undefined: false,
        }
    }

    pub fn undefined() -> Self {
        Ratio {
            numerator: 0,
            denominator: 0,
            value: 0.0,
            undefined: true,
        }
    }

    /// `value * scale` rounded half-up to `decimals` places, as a scaled integer.
    fn scaled_half_up(&self, scale: u128, decimals: u32) -> u128 {
        if self.denominator == 0 {
            return 0;
        }
        let num = u128::from(self.numerator) * scale * 10u128.pow(decimals);
        let den = u128::from(self.denominator);
        (2 * num + den) / (2 * den)
    }

    fn format_scaled(v: u128, decimals: u32) -> String {
        if decimals == 0 {
            return v.to_string();
        }
        let p = 10u128.pow(decimals);
        format!("{}.{:0width$}", v / p, v % p, width = decimals as usize)
    }

    /// Decimal display, rounded half-up: `Ratio::new(212, 219).rounded(2) == "0.97"`.
    pub fn rounded(&self, decimals: u32) -> String {
        Self::format_scaled(self.scaled_half_up(1, decimals), decimals)
    }

    /// Percentage display, rounded half-up: `Ratio::new(224, 259).percent(1) == "86.5%"`.
    pub fn percent(&self, decimals: u32) -> String {
        format!("{}%", Self::format_scaled(self.scaled_half_up(100, decimals), decimals))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

/// Precision, recall and F1 from counts. Zero denominators give 0 with `undefined` set.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = Ratio::new(c.tp, c.tp + c.fp);
    let recall = Ratio::new(c.tp, c.tp + c.fn_);
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn) whenever tp > 0
    let f1 = if c.tp > 0 {
        Ratio::new(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
    } else {
        Ratio::undefined()
    };
    Metrics { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: u64,
    pub total: u64,
}

impl Tally {
    pub fn ratio(&self) -> Ratio {
        Ratio::new(self.correct, self.total)
    }

    pub fn incorrect(&self) -> u64 {
        self.total - self.correct
    }
}

/// A prediction joined to its gold label by note id.
#[derive(Debug, Clone, Copy)]
pub struct Aligned<'a> {
    pub id: &'a str,
    pub gold: &'a VaccineLabel,
    pub predicted: &'a ExtractionResult,
}

/// Joins predictions to gold notes by id. Gold notes without a prediction are
/// allowed (engines may drop notes) and counted by the caller.
pub fn align<'a>(predictions: &'a [Prediction], golds: &'a Dataset) -> Result<Vec<Aligned<'a>>, EvalError> {
    let by_id: HashMap<&str, _> = golds.notes.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut seen = HashSet::new();
    predictions
        .iter()
        .map(|p| {
            if !seen.insert(p.id.as_str()) {
                return Err(EvalError::DuplicatePrediction(p.id.clone()));
            }
            let note = by_id
                .get(p.id.as_str())
                .ok_or_else(|| EvalError::UnknownId(p.id.clone()))?;
            let gold = note.gold.as_ref().ok_or_else(|| EvalError::MissingGold(p.id.clone()))?;
            Ok(Aligned {
                id: &p.id,
                gold,
                predicted: &p.result,
            })
        })
        .collect()
}

pub fn confusion(aligned: &[Aligned<'_>]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for a in aligned {
        c.add(Presence::of(binarize(&a.predicted.label), binarize(a.gold)));
    }
    c
}

/// Whether the prediction identifies the same vaccine as gold.
pub fn name_correct(predicted: &ExtractionResult, gold: &VaccineLabel, lexicon: &Lexicon) -> bool {
    match (&predicted.label, gold) {
        (VaccineLabel::No, VaccineLabel::No) => true,
        (VaccineLabel::Unspecified, VaccineLabel::Unspecified) => true,
        (
            VaccineLabel::Named { canonical_id, surface },
            VaccineLabel::Named {
                canonical_id: gold_id, ..
            },
        ) => lexicon.equivalent(surface, gold_id) || lexicon.equivalent(canonical_id, gold_id),
        _ => false,
    }
}

/// Overall name accuracy, and accuracy on the notes whose gold is `Unspecified`.
pub fn name_accuracy(aligned: &[Aligned<'_>], lexicon: &Lexicon) -> (Tally, Tally) {
    let mut all = Tally::default();
    let mut unspecified = Tally::default();
    for a in aligned {
        let ok = name_correct(a.predicted, a.gold, lexicon);
        all.total += 1;
        all.correct += u64::from(ok);
        if *a.gold == VaccineLabel::Unspecified {
            unspecified.total += 1;
            unspecified.correct += u64::from(ok);
        }
    }
    (all, unspecified)
}

fn is_exact(a: &Aligned<'_>) -> bool {
    a.predicted.answer_str().trim() == a.gold.label_str().trim()
}

/// Raw answers string-equal (after trimming, case-sensitive) to the gold label string.
pub fn exact_match_rate(aligned: &[Aligned<'_>]) -> Result<Tally, EvalError> {
    if aligned.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(Tally {
        correct: aligned.iter().filter(|a| is_exact(a)).count() as u64,
        total: aligned.len() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteOutcome {
    pub id: String,
    pub gold: String,
    pub predicted: String,
    pub answer: String,
    pub presence: Presence,
    pub name_correct: bool,
    pub exact: bool,
    #[serde(default)]
    pub parse_failed: bool,
    #[serde(default)]
    pub unknown_surface: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub lexicon_version: String,
    pub counts: ConfusionCounts,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub name_correct_all: Tally,
    pub name_correct_unspecified: Tally,
    pub exact_match: Tally,
    /// Gold notes that had no prediction.
    pub unscored_golds: u64,
    pub per_note: Vec<NoteOutcome>,
}

impl EvalReport {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }
}

pub fn report(predictions: &[Prediction], golds: &Dataset, lexicon: &Lexicon) -> Result<EvalReport, EvalError> {
    let aligned = align(predictions, golds)?;
    if aligned.is_empty() {
        return Err(EvalError::Empty);
    }
    let counts = confusion(&aligned);
    let m = metrics(&counts);
    let (all, unspecified) = name_accuracy(&aligned, lexicon);
    let exact = exact_match_rate(&aligned)?;
    let per_note = aligned
        .iter()
        .map(|a| NoteOutcome {
            id: a.id.to_string(),
            gold: a.gold.label_str().to_string(),
            predicted: a.predicted.label.label_str().to_string(),
            answer: a.predicted.answer_str().to_string(),
            presence: Presence::of(binarize(&a.predicted.label), binarize(a.gold)),
            name_correct: name_correct(a.predicted, a.gold, lexicon),
            exact: is_exact(a),
            parse_failed: a.predicted.parse_failed,
            unknown_surface: a.predicted.unknown_surface,
        })
        .collect();
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        lexicon_version: lexicon.version().to_string(),
        counts,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        name_correct_all: all,
        name_correct_unspecified: unspecified,
        exact_match: exact,
        unscored_golds: (golds.len() - aligned.len()) as u64,
        per_note,
    })
}
