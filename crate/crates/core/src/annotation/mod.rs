//! Human review of engine pre-labels.
//!
//! State changes are events. [`apply`] is the only function that mutates
//! [`StoreState`], and it is used both by the live store and by log replay, so
//! a replayed store is equal to the live one by construction.

mod export;
mod store;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TriageNote;
use crate::label::{Engine, ExtractionResult, VaccineLabel};
use crate::lexicon::Lexicon;

pub use export::{export_chat_jsonl, ChatExport, ExportManifest, EXPORT_FORMAT};
pub use store::{AnnotationStore, Clock, ManualClock, StoreConfig, SystemClock, EVENTS_FILE, SNAPSHOT_FILE};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("unknown record {0:?}")]
    UnknownRecord(String),
    #[error("record {record:?} is not leased to reviewer {reviewer:?}")]
    LeaseViolation { record: String, reviewer: String },
    #[error("record {0:?} is leased to another reviewer")]
    AlreadyLeased(String),
    #[error("record {0:?} is not awaiting review")]
    NotReviewable(String),
    #[error("correction equals the proposal; accept it instead")]
    IdenticalCorrection,
    #[error("record {0:?} has no proposal to accept")]
    NothingToAccept(String),
    #[error("record {0:?} is already enqueued")]
    DuplicateRecord(String),
    #[error("reviewer id must not be empty")]
    EmptyReviewer,
    #[error("no accepted or corrected records to export")]
    NothingToExport,
    #[error("no dual-reviewed records")]
    NoDualReviews,
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Accepted,
    Corrected,
    Skipped,
}

/// What an engine proposed. `label` is `None` when the engine failed on this note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub label: Option<VaccineLabel>,
    pub engine: Engine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

impl From<ExtractionResult> for Proposal {
    fn from(r: ExtractionResult) -> Self {
        Proposal {
            label: r.error.is_none().then_some(r.label),
            engine: r.engine,
            error: r.error,
            parse_failed: r.parse_failed,
            raw_response: r.raw_response,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondOpinion {
    pub reviewer: String,
    pub label: VaccineLabel,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub dataset: String,
    pub note: TriageNote,
    pub proposed: Proposal,
    pub status: Status,
    #[serde(rename = "final")]
    pub final_label: Option<VaccineLabel>,
    pub reviewer: Option<String>,
    pub decided_at: Option<DateTime<Utc>>,
    /// Sampled at enqueue time for a second, independent review.
    pub second_opinion_requested: bool,
    pub second_opinion: Option<SecondOpinion>,
    /// Position in the review queue; skipping moves a record to the back.
    pub queue_seq: u64,
}

impl AnnotationRecord {
    pub fn is_decided(&self) -> bool {
        matches!(self.status, Status::Accepted | Status::Corrected)
    }

    pub fn awaiting_second_opinion(&self) -> bool {
        self.is_decided() && self.second_opinion_requested && self.second_opinion.is_none()
    }

    /// Whether `reviewer` may be handed this record now (ignoring leases).
    pub fn reviewable_by(&self, reviewer: &str) -> bool {
        match self.status {
            Status::Pending | Status::Skipped => true,
            _ => self.awaiting_second_opinion() && self.reviewer.as_deref() != Some(reviewer),
        }
    }
}

pub fn record_id(dataset: &str, note_id: &str) -> String {
    format!("{dataset}:{note_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub reviewer: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Correct { label: VaccineLabel },
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    Enqueue {
        dataset: String,
        note: TriageNote,
        proposal: Proposal,
        second_opinion_requested: bool,
    },
    Lease {
        expires_at: DateTime<Utc>,
    },
    Accept {
        label: VaccineLabel,
    },
    Correct {
        label: VaccineLabel,
    },
    Skip,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StoreState {
    pub records: BTreeMap<String, AnnotationRecord>,
    pub leases: BTreeMap<String, Lease>,
    pub last_seq: u64,
    pub next_queue_seq: u64,
}

impl StoreState {
    pub fn lease_holder(&self, record_id: &str, now: DateTime<Utc>) -> Option<&str> {
        self.leases
            .get(record_id)
            .filter(|l| l.expires_at > now)
            .map(|l| l.reviewer.as_str())
    }

    /// Oldest record `reviewer` may review that nobody else holds, preferring one they already hold.
    pub fn candidate_for(&self, reviewer: &str, now: DateTime<Utc>) -> Option<&AnnotationRecord> {
        let reviewable = self.records.values().filter(|r| r.reviewable_by(reviewer));
        if let Some(held) = reviewable
            .clone()
            .filter(|r| self.lease_holder(&r.id, now) == Some(reviewer))
            .min_by_key(|r| r.queue_seq)
        {
            return Some(held);
        }
        reviewable
            .filter(|r| self.lease_holder(&r.id, now).is_none())
            .min_by_key(|r| r.queue_seq)
    }

    fn require_lease(&self, record_id: &str, reviewer: &str, now: DateTime<Utc>) -> Result<(), AnnotationError> {
        if self.lease_holder(record_id, now) == Some(reviewer) {
            Ok(())
        } else {
            Err(AnnotationError::LeaseViolation {
                record: record_id.to_string(),
                reviewer: reviewer.to_string(),
            })
        }
    }

    pub fn count(&self, status: Status) -> usize {
        self.records.values().filter(|r| r.status == status).count()
    }
}

fn same_label(a: &VaccineLabel, b: &VaccineLabel) -> bool {
    a.label_str() == b.label_str()
}

/// Validates `event` against `state` and applies it. On error `state` is untouched.
pub fn apply(state: &mut StoreState, event: &Event) -> Result<(), AnnotationError> {
    if let Some(r) = &event.reviewer {
        if r.trim().is_empty() {
            return Err(AnnotationError::EmptyReviewer);
        }
    }
    let id = event.record_id.as_str();
    let reviewer = || event.reviewer.clone().ok_or(AnnotationError::EmptyReviewer);
    match &event.action {
        Action::Enqueue {
            dataset,
            note,
            proposal,
            second_opinion_requested,
        } => {
            if state.records.contains_key(id) {
                return Err(AnnotationError::DuplicateRecord(id.to_string()));
            }
            state.records.insert(
                id.to_string(),
                AnnotationRecord {
                    id: id.to_string(),
                    dataset: dataset.clone(),
                    note: note.clone(),
                    proposed: proposal.clone(),
                    status: Status::Pending,
                    final_label: None,
                    reviewer: None,
                    decided_at: None,
                    second_opinion_requested: *second_opinion_requested,
                    second_opinion: None,
                    queue_seq: state.next_queue_seq,
                },
            );
            state.next_queue_seq += 1;
        }
        Action::Lease { expires_at } => {
            let reviewer = reviewer()?;
            let rec = state
                .records
                .get(id)
                .ok_or_else(|| AnnotationError::UnknownRecord(id.to_string()))?;
            if !rec.reviewable_by(&reviewer) {
                return Err(AnnotationError::NotReviewable(id.to_string()));
            }
            match state.lease_holder(id, event.ts) {
                Some(holder) if holder != reviewer => return Err(AnnotationError::AlreadyLeased(id.to_string())),
                _ => {}
            }
            state.leases.insert(
                id.to_string(),
                Lease {
                    reviewer,
                    expires_at: *expires_at,
                },
            );
        }
        Action::Accept { label } | Action::Correct { label } => {
            let reviewer = reviewer()?;
            let rec = state
                .records
                .get(id)
                .ok_or_else(|| AnnotationError::UnknownRecord(id.to_string()))?;
            state.require_lease(id, &reviewer, event.ts)?;
            if !rec.reviewable_by(&reviewer) {
                return Err(AnnotationError::NotReviewable(id.to_string()));
            }
            let accepting = matches!(event.action, Action::Accept { .. });
            match (&rec.proposed.label, accepting) {
                (None, true) => return Err(AnnotationError::NothingToAccept(id.to_string())),
                (Some(p), true) if !same_label(p, label) => return Err(AnnotationError::NotReviewable(id.to_string())),
                (Some(p), false) if same_label(p, label) => return Err(AnnotationError::IdenticalCorrection),
                _ => {}
            }
            let rec = state.records.get_mut(id).expect("checked above");
            if rec.is_decided() {
                rec.second_opinion = Some(SecondOpinion {
                    reviewer,
                    label: label.clone(),
                    decided_at: event.ts,
                });
            } else {
                rec.status = if accepting { Status::Accepted } else { Status::Corrected };
                rec.final_label = Some(label.clone());
                rec.reviewer = Some(reviewer);
                rec.decided_at = Some(event.ts);
            }
            state.leases.remove(id);
        }
        Action::Skip => {
            let reviewer = reviewer()?;
            let rec = state
                .records
                .get(id)
                .ok_or_else(|| AnnotationError::UnknownRecord(id.to_string()))?;
            state.require_lease(id, &reviewer, event.ts)?;
            if !rec.reviewable_by(&reviewer) {
                return Err(AnnotationError::NotReviewable(id.to_string()));
            }
            let requeue = state.next_queue_seq;
            let rec = state.records.get_mut(id).expect("checked above");
            if !rec.is_decided() {
                rec.status = Status::Skipped;
            }
            rec.queue_seq = requeue;
            state.next_queue_seq += 1;
            state.leases.remove(id);
        }
    }
    state.last_seq = event.seq;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub dual_reviewed: u64,
    pub agreed: u64,
    pub ratio: f64,
}

/// Raw agreement between first and second reviews. With `pair`, only records
/// reviewed by exactly those two reviewers (in either order) count.
pub fn agreement(
    state: &StoreState,
    lexicon: &Lexicon,
    pair: Option<(&str, &str)>,
) -> Result<Agreement, AnnotationError> {
    let mut dual = 0u64;
    let mut agreed = 0u64;
    for rec in state.records.values() {
        let (Some(first), Some(second), Some(final_label)) = (&rec.reviewer, &rec.second_opinion, &rec.final_label)
        else {
            continue;
        };
        if let Some((a, b)) = pair {
            let pair_matches = (first == a && second.reviewer == b) || (first == b && second.reviewer == a);
            if !pair_matches {
                continue;
            }
        }
        dual += 1;
        agreed += u64::from(final_label.equivalent(&second.label, lexicon));
    }
    if dual == 0 {
        return Err(AnnotationError::NoDualReviews);
    }
    Ok(Agreement {
        dual_reviewed: dual,
        agreed,
        ratio: agreed as f64 / dual as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub corrected: usize,
    pub skipped: usize,
    pub awaiting_second_opinion: usize,
    pub leased: usize,
    pub agreement: Option<Agreement>,
}

pub fn stats(state: &StoreState, lexicon: &Lexicon, now: DateTime<Utc>) -> QueueStats {
    QueueStats {
        total: state.records.len(),
        pending: state.count(Status::Pending),
        accepted: state.count(Status::Accepted),
        corrected: state.count(Status::Corrected),
        skipped: state.count(Status::Skipped),
        awaiting_second_opinion: state.records.values().filter(|r| r.awaiting_second_opinion()).count(),
        leased: state.leases.values().filter(|l| l.expires_at > now).count(),
        agreement: agreement(state, lexicon, None).ok(),
    }
}
