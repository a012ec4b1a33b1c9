//! Decided records as a chat-format fine-tuning dataset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AnnotationError, Status, StoreState};
use crate::llm::{assistant_answer, sha256_hex, PROMPT_VERSION, SYSTEM_PROMPT, SYSTEM_PROMPT_SHA256};

pub const EXPORT_FORMAT: &str = "chat-jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub format: String,
    pub examples: u64,
    pub accepted: u64,
    pub corrected: u64,
    /// Examples per label string.
    pub class_counts: BTreeMap<String, u64>,
    pub lexicon_version: String,
    pub prompt_version: String,
    pub system_prompt_sha256: String,
    pub jsonl_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExport {
    pub manifest: ExportManifest,
    pub jsonl: String,
}

/// One line per accepted or corrected record, ordered by record id. Contains
/// no timestamps, so unchanged decisions always export to the same bytes.
pub fn export_chat_jsonl(state: &StoreState, lexicon_version: &str) -> Result<ChatExport, AnnotationError> {
    let mut jsonl = String::new();
    let mut class_counts = BTreeMap::new();
    let (mut accepted, mut corrected) = (0, 0);
    for rec in state.records.values() {
        let label = match (rec.status, &rec.final_label) {
            (Status::Accepted, Some(l)) => {
                accepted += 1;
                l
            }
            (Status::Corrected, Some(l)) => {
                corrected += 1;
                l
            }
            _ => continue,
        };
        let line = json!({
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": rec.note.age_prefixed_text()},
                {"role": "assistant", "content": assistant_answer(label.label_str())},
            ]
        });
        jsonl.push_str(&serde_json::to_string(&line)?);
        jsonl.push('\n');
        *class_counts.entry(label.label_str().to_string()).or_insert(0) += 1;
    }
    if accepted + corrected == 0 {
        return Err(AnnotationError::NothingToExport);
    }
    Ok(ChatExport {
        manifest: ExportManifest {
            format: EXPORT_FORMAT.to_string(),
            examples: accepted + corrected,
            accepted,
            corrected,
            class_counts,
            lexicon_version: lexicon_version.to_string(),
            prompt_version: PROMPT_VERSION.to_string(),
            system_prompt_sha256: SYSTEM_PROMPT_SHA256.to_string(),
            jsonl_sha256: sha256_hex(jsonl.as_bytes()),
        },
        jsonl,
    })
}
