//! The three-way extraction outcome and the provenance that travels with it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::Lexicon;

pub const NO: &str = "No";
pub const UNSPECIFIED: &str = "Unspecified";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum VaccineLabel {
    No,
    Unspecified,
    Named { canonical_id: String, surface: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown label string {0:?}")]
pub struct UnknownLabel(pub String);

impl VaccineLabel {
    /// A `Named` label whose surface is the canonical id itself.
    pub fn named(canonical_id: impl Into<String>) -> Self {
        let canonical_id = canonical_id.into();
        VaccineLabel::Named {
            surface: canonical_id.clone(),
            canonical_id,
        }
    }

    /// Parses the on-disk label encoding: "No", "Unspecified" or an exact canonical id.
    pub fn from_label_str(s: &str, lexicon: &Lexicon) -> Result<Self, UnknownLabel> {
        match s {
            NO => Ok(VaccineLabel::No),
            UNSPECIFIED => Ok(VaccineLabel::Unspecified),
            other => lexicon
                .entry(other)
                .map(|e| VaccineLabel::named(e.canonical_id.clone()))
                .ok_or_else(|| UnknownLabel(other.to_string())),
        }
    }

    /// "No", "Unspecified" or the canonical id.
    pub fn label_str(&self) -> &str {
        match self {
            VaccineLabel::No => NO,
            VaccineLabel::Unspecified => UNSPECIFIED,
            VaccineLabel::Named { canonical_id, .. } => canonical_id,
        }
    }

    pub fn is_present(&self) -> bool {
        !matches!(self, VaccineLabel::No)
    }

    pub fn canonical_id(&self) -> Option<&str> {
        match self {
            VaccineLabel::Named { canonical_id, .. } => Some(canonical_id),
            _ => None,
        }
    }

    /// Same outcome and, for named labels, lexicon-equivalent names.
    pub fn equivalent(&self, other: &VaccineLabel, lexicon: &Lexicon) -> bool {
        match (self, other) {
            (VaccineLabel::No, VaccineLabel::No) => true,
            (VaccineLabel::Unspecified, VaccineLabel::Unspecified) => true,
            (VaccineLabel::Named { canonical_id: a, .. }, VaccineLabel::Named { canonical_id: b, .. }) => {
                lexicon.equivalent(a, b)
            }
            _ => false,
        }
    }
}

impl fmt::Display for VaccineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Rules,
    Llm,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Rules => "rules",
            Engine::Llm => "llm",
        })
    }
}

/// Half-open character range into a note's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = indices.nth(self.start)?;
        let end = if self.end == self.start {
            start
        } else {
            indices.nth(self.end - self.start - 1)?
        };
        text.get(start..end)
    }

    pub fn within(&self, text: &str) -> bool {
        self.start <= self.end && self.end <= text.chars().count()
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub label: VaccineLabel,
    pub engine: Engine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    /// The pre-normalization answer string that exact-match scoring compares to gold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match_surface: Option<String>,
    /// Set when a gold label was supplied at normalization time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<bool>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub unknown_surface: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExtractionResult {
    pub fn new(label: VaccineLabel, engine: Engine) -> Self {
        ExtractionResult {
            label,
            engine,
            matched_span: None,
            raw_response: None,
            exact_match_surface: None,
            exact_match: None,
            unknown_surface: false,
            parse_failed: false,
            error: None,
        }
    }

    /// The string compared against gold for exact matching.
    pub fn answer_str(&self) -> &str {
        self.exact_match_surface
            .as_deref()
            .unwrap_or_else(|| self.label.label_str())
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(flatten)]
    pub result: ExtractionResult,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_strings_round_trip() {
        let lex = Lexicon::builtin();
        for s in ["No", "Unspecified", "Rotavirus", "6 weeks", "COVID-19"] {
            let label = VaccineLabel::from_label_str(s, &lex).unwrap();
            assert_eq!(label.label_str(), s);
        }
        assert_eq!(
            VaccineLabel::from_label_str("flu vax", &lex),
            Err(UnknownLabel("flu vax".into()))
        );
    }

    #[test]
    fn label_json_shape() {
        let json = serde_json::to_value(VaccineLabel::named("Rotavirus")).unwrap();
        assert_eq!(json["variant"], "Named");
        assert_eq!(json["canonical_id"], "Rotavirus");
        assert_eq!(
            serde_json::to_value(VaccineLabel::No).unwrap(),
            serde_json::json!({"variant": "No"})
        );
    }

    #[test]
    fn span_slices_by_chars() {
        let text = "café post flu vax";
        let span = Span::new(10, 17);
        assert_eq!(span.slice(text), Some("flu vax"));
        assert!(span.within(text));
        assert!(!Span::new(10, 18).within(text));
        assert_eq!(Span::new(0, 4).slice(text), Some("café"));
    }
}
