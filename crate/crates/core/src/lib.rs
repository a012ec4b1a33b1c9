//! Vaccine mention extraction for emergency-department triage notes.
//!
//! - [`corpus`]: note datasets, the "Age: 0Y 4M." prefix, seeded synthesis
//! - [`lexicon`]: canonical vaccine identities and their surface forms
//! - [`rules`]: deterministic baseline extractor
//! - [`llm`]: prompt construction, OpenAI-compatible client, response repair
//! - [`eval`]: presence-level confusion metrics and name-level accuracy
//! - [`annotation`]: human review queue, decision log and fine-tuning export

pub mod annotation;
pub mod corpus;
pub mod eval;
pub mod label;
pub mod lexicon;
pub mod llm;
pub mod rules;

pub use corpus::{Dataset, TriageNote};
pub use label::{Engine, ExtractionResult, Prediction, Span, VaccineLabel};
pub use lexicon::Lexicon;
