//! Pulling the answer out of free-form model output, and mapping it onto a label.

use serde_json::Value;
use thiserror::Error;

use crate::label::{Engine, ExtractionResult, VaccineLabel};
use crate::lexicon::{fold, Lexicon};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("no Vaccination field found in model output")]
pub struct ParseFailure {
    pub raw: String,
}

const FIELD: &str = "vaccination";

/// Accepts `{"Vaccination": ..}` or an object nested one level deep that carries it.
fn vaccination_field(v: &Value) -> Option<String> {
    let obj = v.as_object()?;
    let direct = obj
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(FIELD))
        .and_then(|(_, v)| v.as_str());
    if let Some(s) = direct {
        return (!s.trim().is_empty()).then(|| s.to_string());
    }
    obj.values().filter_map(Value::as_object).find_map(|inner| {
        inner
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(FIELD))
            .and_then(|(_, v)| v.as_str())
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
    })
}

fn whole_body(raw: &str) -> Option<String> {
    serde_json::from_str::<Value>(raw.trim())
        .ok()
        .as_ref()
        .and_then(vaccination_field)
}

fn strip_fences(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after = &raw[open + 3..];
    // skip an info string such as "json"
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let close = body.find("```").unwrap_or(body.len());
    Some(&body[..close])
}

/// The first `{` that opens a complete JSON object; objects nested inside it are not rescanned.
fn first_object(raw: &str) -> Option<String> {
    let obj = raw.match_indices('{').find_map(|(i, _)| {
        serde_json::Deserializer::from_str(&raw[i..])
            .into_iter::<Value>()
            .next()
            .and_then(Result::ok)
    })?;
    vaccination_field(&obj)
}

/// Repair cascade: whole body, then fenced block, then the first embedded object.
pub fn parse_response(raw: &str) -> Result<String, ParseFailure> {
    whole_body(raw)
        .or_else(|| strip_fences(raw).and_then(whole_body))
        .or_else(|| first_object(raw))
        .ok_or_else(|| ParseFailure { raw: raw.to_string() })
}

/// Maps an answer string onto a label. Unknown vaccine names are kept under their
/// folded form and flagged rather than coerced into the lexicon.
pub fn normalize_response(raw_label: &str, lexicon: &Lexicon, gold: Option<&str>) -> ExtractionResult {
    let trimmed = raw_label.trim();
    let answer = trimmed.trim_end_matches('.').trim();
    let mut unknown = false;
    let label = if answer.eq_ignore_ascii_case("no") {
        VaccineLabel::No
    } else if answer.eq_ignore_ascii_case("unspecified") {
        VaccineLabel::Unspecified
    } else if let Some(c) = lexicon.canonical_of(answer) {
        VaccineLabel::Named {
            canonical_id: c.to_string(),
            surface: answer.to_string(),
        }
    } else {
        unknown = true;
        VaccineLabel::Named {
            canonical_id: fold(answer),
            surface: answer.to_string(),
        }
    };

    let mut result = match label {
        // nothing usable survived folding
        VaccineLabel::Named { ref canonical_id, .. } if canonical_id.is_empty() => {
            let mut r = ExtractionResult::new(VaccineLabel::No, Engine::Llm);
            r.parse_failed = true;
            r
        }
        label => {
            let mut r = ExtractionResult::new(label, Engine::Llm);
            r.unknown_surface = unknown;
            r
        }
    };
    result.exact_match_surface = Some(trimmed.to_string());
    result.exact_match = gold.map(|g| g.trim() == trimmed);
    result
}
