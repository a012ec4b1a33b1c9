use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TriageNote;

/// The extraction instruction block, verbatim. Changing this file changes
/// [`SYSTEM_PROMPT_SHA256`] and must bump [`PROMPT_VERSION`].
pub const SYSTEM_PROMPT: &str = include_str!("../../data/extraction_prompt.txt");
pub const PROMPT_VERSION: &str = "extraction-prompt-v1";
pub const SYSTEM_PROMPT_SHA256: &str = "926c650a46f09b3b3c193f941e9cfc32ccd794ee8e5a6c82463d81d3058cb5a4";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub model_name: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            model_name: "default".to_string(),
            temperature: 0.0,
            max_tokens: 64,
        }
    }
}

impl Decoding {
    pub fn for_model(model_name: impl Into<String>) -> Self {
        Decoding {
            model_name: model_name.into(),
            ..Decoding::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_text: &'static str,
    pub user_text: String,
    pub decoding: Decoding,
}

pub fn build_prompt(note: &TriageNote, decoding: &Decoding) -> PromptBundle {
    PromptBundle {
        system_text: SYSTEM_PROMPT,
        user_text: note.age_prefixed_text(),
        decoding: decoding.clone(),
    }
}

/// The well-formed assistant answer for a label string: `{"Vaccination": "<label>"}`.
pub fn assistant_answer(label: &str) -> String {
    format!(
        "{{\"Vaccination\": {}}}",
        serde_json::to_string(label).expect("strings always serialize")
    )
}
