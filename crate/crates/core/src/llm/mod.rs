//! Prompt-based extraction against any OpenAI-compatible chat endpoint.

mod client;
mod parse;
mod prompt;

use futures::stream::{self, StreamExt};

use crate::corpus::TriageNote;
use crate::label::{Engine, ExtractionResult, Prediction, VaccineLabel};
use crate::lexicon::Lexicon;

pub use client::{request_body, ChatClient, CompletionBackend, LlmError, ModelEndpoint};
pub use parse::{normalize_response, parse_response, ParseFailure};
pub use prompt::{
    assistant_answer, build_prompt, sha256_hex, Decoding, PromptBundle, PROMPT_VERSION, SYSTEM_PROMPT,
    SYSTEM_PROMPT_SHA256,
};

/// Prompt, call, repair and normalize one note. Never fails: transport errors and
/// unparseable answers both come back as `No` with the failure recorded.
pub async fn extract_one<B: CompletionBackend>(
    note: &TriageNote,
    backend: &B,
    lexicon: &Lexicon,
    decoding: &Decoding,
) -> ExtractionResult {
    let bundle = build_prompt(note, decoding);
    let gold = note.gold.as_ref().map(VaccineLabel::label_str);
    match backend.complete(&bundle).await {
        Ok(raw) => {
            let mut result = match parse_response(&raw) {
                Ok(answer) => normalize_response(&answer, lexicon, gold),
                Err(_) => {
                    let mut r = ExtractionResult::new(VaccineLabel::No, Engine::Llm);
                    r.parse_failed = true;
                    r
                }
            };
            result.raw_response = Some(raw);
            result
        }
        Err(e) => {
            let mut r = ExtractionResult::new(VaccineLabel::No, Engine::Llm);
            r.error = Some(e.to_string());
            r
        }
    }
}

async fn prediction_for<B: CompletionBackend>(
    note: &TriageNote,
    backend: &B,
    lexicon: &Lexicon,
    decoding: &Decoding,
) -> Prediction {
    Prediction {
        id: note.id.clone(),
        result: extract_one(note, backend, lexicon, decoding).await,
    }
}

/// Runs up to `max_parallel` notes concurrently; output order always matches input order.
pub async fn extract_batch<B: CompletionBackend>(
    notes: &[TriageNote],
    backend: &B,
    lexicon: &Lexicon,
    decoding: &Decoding,
    max_parallel: usize,
) -> Vec<Prediction> {
    // futures are built eagerly; a mapping closure here trips higher-ranked
    // lifetime inference when callers need the batch future to be Send
    let calls: Vec<_> = notes
        .iter()
        .map(|note| prediction_for(note, backend, lexicon, decoding))
        .collect();
    stream::iter(calls).buffered(max_parallel.max(1)).collect().await
}
