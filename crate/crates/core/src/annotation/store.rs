//! The review store: in-memory state, an append-only event log and periodic snapshots.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    agreement, apply, export_chat_jsonl, record_id, stats, Action, Agreement, AnnotationError, AnnotationRecord,
    ChatExport, Decision, Event, Proposal, QueueStats, Status, StoreState,
};
use crate::corpus::{Dataset, TriageNote};
use crate::label::ExtractionResult;
use crate::lexicon::Lexicon;
use crate::llm::{extract_batch, CompletionBackend, Decoding};
use crate::rules::{self, RuleConfig};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<Mutex<DateTime<Utc>>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Arc::new(Mutex::new(start)))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub lease_ttl_secs: u64,
    /// Fraction of records routed to a second reviewer, in [0, 1].
    pub second_opinion_fraction: f64,
    /// Write a snapshot every this many events; 0 disables snapshots.
    pub snapshot_every: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            lease_ttl_secs: 600,
            second_opinion_fraction: 0.0,
            snapshot_every: 200,
        }
    }
}

/// Deterministic per-record sampling, so replays and reruns pick the same records.
fn sampled_for_second_opinion(record_id: &str, fraction: f64) -> bool {
    if fraction <= 0.0 {
        return false;
    }
    if fraction >= 1.0 {
        return true;
    }
    let digest = Sha256::digest(record_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) as f64 / u64::MAX as f64) < fraction
}

pub struct AnnotationStore {
    state: StoreState,
    config: StoreConfig,
    clock: Arc<dyn Clock>,
    dir: Option<PathBuf>,
    log: Option<File>,
    /// Events of an in-memory store; file-backed stores read them back from disk.
    memory_log: Vec<Event>,
    since_snapshot: u64,
    poisoned: bool,
}

impl std::fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationStore")
            .field("records", &self.state.records.len())
            .field("last_seq", &self.state.last_seq)
            .field("dir", &self.dir)
            .finish()
    }
}

impl AnnotationStore {
    pub fn in_memory(config: StoreConfig, clock: Arc<dyn Clock>) -> Self {
        AnnotationStore {
            state: StoreState::default(),
            config,
            clock,
            dir: None,
            log: None,
            memory_log: Vec::new(),
            since_snapshot: 0,
            poisoned: false,
        }
    }

    /// Opens (or creates) a store directory: loads the snapshot, then replays newer log events.
    pub fn open(dir: impl AsRef<Path>, config: StoreConfig, clock: Arc<dyn Clock>) -> Result<Self, AnnotationError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let mut state = if snapshot_path.exists() {
            serde_json::from_slice(&fs::read(&snapshot_path)?)?
        } else {
            StoreState::default()
        };
        let events_path = dir.join(EVENTS_FILE);
        let mut since_snapshot = 0;
        if events_path.exists() {
            for (line, event) in read_events(&events_path)?.into_iter().enumerate() {
                if event.seq <= state.last_seq {
                    continue;
                }
                apply(&mut state, &event).map_err(|e| AnnotationError::CorruptLog {
                    line: line + 1,
                    message: e.to_string(),
                })?;
                since_snapshot += 1;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&events_path)?;
        Ok(AnnotationStore {
            state,
            config,
            clock,
            dir: Some(dir),
            log: Some(log),
            memory_log: Vec::new(),
            since_snapshot,
            poisoned: false,
        })
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn get(&self, id: &str) -> Option<&AnnotationRecord> {
        self.state.records.get(id)
    }

    /// Every event so far, in order.
    pub fn events(&self) -> Result<Vec<Event>, AnnotationError> {
        match &self.dir {
            Some(dir) => read_events(&dir.join(EVENTS_FILE)),
            None => Ok(self.memory_log.clone()),
        }
    }

    /// Rebuilds state from scratch by applying `events` in order.
    pub fn replay(events: &[Event]) -> Result<StoreState, AnnotationError> {
        let mut state = StoreState::default();
        for (i, e) in events.iter().enumerate() {
            apply(&mut state, e).map_err(|err| AnnotationError::CorruptLog {
                line: i + 1,
                message: err.to_string(),
            })?;
        }
        Ok(state)
    }

    fn commit(
        &mut self,
        ts: DateTime<Utc>,
        record_id: &str,
        reviewer: Option<&str>,
        action: Action,
    ) -> Result<(), AnnotationError> {
        if self.poisoned {
            return Err(AnnotationError::Io(std::io::Error::other(
                "store is read-only after a failed log write",
            )));
        }
        let event = Event {
            seq: self.state.last_seq + 1,
            ts,
            record_id: record_id.to_string(),
            reviewer: reviewer.map(str::to_string),
            action,
        };
        apply(&mut self.state, &event)?;
        match &mut self.log {
            Some(file) => {
                let mut line = serde_json::to_vec(&event)?;
                line.push(b'\n');
                if let Err(e) = file.write_all(&line).and_then(|_| file.flush()) {
                    self.poisoned = true;
                    return Err(e.into());
                }
            }
            None => self.memory_log.push(event),
        }
        self.since_snapshot += 1;
        if self.config.snapshot_every > 0 && self.since_snapshot >= self.config.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the current state atomically next to the log.
    pub fn snapshot(&mut self) -> Result<(), AnnotationError> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
            fs::write(&tmp, serde_json::to_vec(&self.state)?)?;
            fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        }
        self.since_snapshot = 0;
        Ok(())
    }

    /// Adds one pending record. Returns false if the note was already enqueued for this dataset.
    pub fn enqueue(&mut self, dataset: &str, note: &TriageNote, proposal: Proposal) -> Result<bool, AnnotationError> {
        let id = record_id(dataset, &note.id);
        if self.state.records.contains_key(&id) {
            return Ok(false);
        }
        let second = sampled_for_second_opinion(&id, self.config.second_opinion_fraction);
        let action = Action::Enqueue {
            dataset: dataset.to_string(),
            note: note.clone(),
            proposal,
            second_opinion_requested: second,
        };
        self.commit(self.clock.now(), &id, None, action)?;
        Ok(true)
    }

    /// Notes of `dataset` that have no record yet.
    pub fn missing_notes(&self, dataset: &Dataset) -> Vec<TriageNote> {
        dataset
            .notes
            .iter()
            .filter(|n| !self.state.records.contains_key(&record_id(&dataset.name, &n.id)))
            .cloned()
            .collect()
    }

    /// Enqueues engine results; returns how many were new.
    pub fn enqueue_results(
        &mut self,
        dataset: &str,
        results: impl IntoIterator<Item = (TriageNote, ExtractionResult)>,
    ) -> Result<usize, AnnotationError> {
        let mut added = 0;
        for (note, result) in results {
            added += usize::from(self.enqueue(dataset, &note, result.into())?);
        }
        Ok(added)
    }

    pub fn prelabel_rules(
        &mut self,
        dataset: &Dataset,
        lexicon: &Lexicon,
        config: &RuleConfig,
    ) -> Result<usize, AnnotationError> {
        let results: Vec<_> = self
            .missing_notes(dataset)
            .into_iter()
            .map(|n| {
                let r = rules::extract(&n, lexicon, config);
                (n, r)
            })
            .collect();
        self.enqueue_results(&dataset.name, results)
    }

    pub async fn prelabel_llm<B: CompletionBackend>(
        &mut self,
        dataset: &Dataset,
        backend: &B,
        lexicon: &Lexicon,
        decoding: &Decoding,
        max_parallel: usize,
    ) -> Result<usize, AnnotationError> {
        let notes = self.missing_notes(dataset);
        let predictions = extract_batch(&notes, backend, lexicon, decoding, max_parallel).await;
        self.enqueue_results(
            &dataset.name,
            notes.into_iter().zip(predictions.into_iter().map(|p| p.result)),
        )
    }

    /// Leases the oldest reviewable record to `reviewer`. A record the reviewer
    /// already holds is returned again without extending the lease.
    pub fn next_pending(&mut self, reviewer: &str) -> Result<Option<AnnotationRecord>, AnnotationError> {
        if reviewer.trim().is_empty() {
            return Err(AnnotationError::EmptyReviewer);
        }
        let now = self.clock.now();
        let Some(candidate) = self.state.candidate_for(reviewer, now) else {
            return Ok(None);
        };
        let id = candidate.id.clone();
        if self.state.lease_holder(&id, now) != Some(reviewer) {
            let expires_at = now + Duration::seconds(self.config.lease_ttl_secs as i64);
            self.commit(now, &id, Some(reviewer), Action::Lease { expires_at })?;
        }
        Ok(self.state.records.get(&id).cloned())
    }

    fn already_decided(rec: &AnnotationRecord, reviewer: &str, decision: &Decision) -> bool {
        let chosen = match decision {
            Decision::Accept => rec.proposed.label.as_ref(),
            Decision::Correct { label } => Some(label),
            Decision::Skip => return false,
        };
        let Some(chosen) = chosen else { return false };
        let wanted = match decision {
            Decision::Accept => Status::Accepted,
            _ => Status::Corrected,
        };
        let first = rec.reviewer.as_deref() == Some(reviewer)
            && rec.status == wanted
            && rec.final_label.as_ref().map(|l| l.label_str()) == Some(chosen.label_str());
        let second = rec
            .second_opinion
            .as_ref()
            .is_some_and(|s| s.reviewer == reviewer && s.label.label_str() == chosen.label_str());
        first || second
    }

    /// Records a decision. Resubmitting a decision this reviewer already made is a no-op.
    pub fn submit_decision(
        &mut self,
        id: &str,
        reviewer: &str,
        decision: Decision,
    ) -> Result<AnnotationRecord, AnnotationError> {
        if reviewer.trim().is_empty() {
            return Err(AnnotationError::EmptyReviewer);
        }
        let rec = self
            .state
            .records
            .get(id)
            .ok_or_else(|| AnnotationError::UnknownRecord(id.to_string()))?;
        if Self::already_decided(rec, reviewer, &decision) {
            return Ok(rec.clone());
        }
        let action = match decision {
            Decision::Accept => Action::Accept {
                label: rec
                    .proposed
                    .label
                    .clone()
                    .ok_or_else(|| AnnotationError::NothingToAccept(id.to_string()))?,
            },
            Decision::Correct { label } => Action::Correct { label },
            Decision::Skip => Action::Skip,
        };
        self.commit(self.clock.now(), id, Some(reviewer), action)?;
        Ok(self.state.records[id].clone())
    }

    pub fn stats(&self, lexicon: &Lexicon) -> QueueStats {
        stats(&self.state, lexicon, self.clock.now())
    }

    pub fn agreement(&self, lexicon: &Lexicon, pair: Option<(&str, &str)>) -> Result<Agreement, AnnotationError> {
        agreement(&self.state, lexicon, pair)
    }

    pub fn export(&self, lexicon_version: &str) -> Result<ChatExport, AnnotationError> {
        export_chat_jsonl(&self.state, lexicon_version)
    }
}

fn read_events(path: &Path) -> Result<Vec<Event>, AnnotationError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| AnnotationError::CorruptLog {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::label::{Engine, VaccineLabel};

    fn clock() -> ManualClock {
        ManualClock::new(Utc.with_ymd_and_hms(2026, 10, 1, 9, 0, 0).unwrap())
    }

    fn worked_examples() -> Dataset {
        let lex = Lexicon::builtin();
        let rows = [
            (
                0,
                1,
                "6wo vaccinations yesterday, eye swelling, redness and wob post. Afebrile.",
                "6 weeks",
            ),
            (
                13,
                2,
                "Allergic reaction post immms. Rash to neck, felt throat closing over.",
                "Unspecified",
            ),
            (
                0,
                4,
                "Febrile, blood in stool, vomit post rota-virus vaccine",
                "Rotavirus",
            ),
            (3, 1, "fever, runny nose, sob on b/g of flu vax 2/7 ago", "Influenza"),
            (
                0,
                5,
                "whooping cough prophylaxis 2/52 ago, 4/7 of fevers, increased sob and coughs",
                "No",
            ),
        ];
        Dataset::new(
            "worked",
            rows.iter()
                .enumerate()
                .map(|(i, (y, m, t, g))| TriageNote {
                    id: format!("t{}", i + 1),
                    age_years: *y,
                    age_months: *m,
                    text: t.to_string(),
                    gold: Some(VaccineLabel::from_label_str(g, &lex).unwrap()),
                })
                .collect(),
        )
    }

    fn store(c: &ManualClock, fraction: f64) -> AnnotationStore {
        AnnotationStore::in_memory(
            StoreConfig {
                second_opinion_fraction: fraction,
                ..StoreConfig::default()
            },
            Arc::new(c.clone()),
        )
    }

    #[test]
    fn prelabel_is_idempotent_and_matches_gold() {
        let c = clock();
        let mut s = store(&c, 0.0);
        let lex = Lexicon::builtin();
        let ds = worked_examples();
        assert_eq!(s.prelabel_rules(&ds, &lex, &RuleConfig::default()).unwrap(), 5);
        assert_eq!(s.prelabel_rules(&ds, &lex, &RuleConfig::default()).unwrap(), 0);
        for note in &ds.notes {
            let rec = s.get(&record_id("worked", &note.id)).unwrap();
            assert_eq!(rec.status, Status::Pending);
            assert_eq!(
                rec.proposed.label.as_ref().map(|l| l.label_str()),
                note.gold.as_ref().map(|g| g.label_str())
            );
        }
        assert_eq!(
            s.prelabel_rules(&Dataset::new("empty", vec![]), &lex, &RuleConfig::default())
                .unwrap(),
            0
        );
    }

    #[test]
    fn leases_are_exclusive_and_expire() {
        let c = clock();
        let mut s = store(&c, 0.0);
        let lex = Lexicon::builtin();
        s.prelabel_rules(
            &Dataset::new("d", worked_examples().notes[..2].to_vec()),
            &lex,
            &RuleConfig::default(),
        )
        .unwrap();
        let a = s.next_pending("alice").unwrap().unwrap();
        let b = s.next_pending("bob").unwrap().unwrap();
        assert_ne!(a.id, b.id);
        assert!(s.next_pending("carol").unwrap().is_none());
        // asking again returns the held record
        assert_eq!(s.next_pending("alice").unwrap().unwrap().id, a.id);

        c.advance(Duration::seconds(601));
        let again = s.next_pending("carol").unwrap().unwrap();
        assert_eq!(again.id, a.id);
        let err = s.submit_decision(&a.id, "alice", Decision::Accept).unwrap_err();
        assert!(matches!(err, AnnotationError::LeaseViolation { .. }));
    }

    #[test]
    fn decisions_follow_invariants() {
        let c = clock();
        let mut s = store(&c, 0.0);
        let lex = Lexicon::builtin();
        s.prelabel_rules(&worked_examples(), &lex, &RuleConfig::default()).unwrap();

        let unleased = record_id("worked", "t3");
        assert!(matches!(
            s.submit_decision(&unleased, "alice", Decision::Accept),
            Err(AnnotationError::LeaseViolation { .. })
        ));
        assert!(matches!(
            s.submit_decision("nope", "alice", Decision::Accept),
            Err(AnnotationError::UnknownRecord(_))
        ));

        let r1 = s.next_pending("alice").unwrap().unwrap();
        let done = s.submit_decision(&r1.id, "alice", Decision::Accept).unwrap();
        assert_eq!(done.status, Status::Accepted);
        assert_eq!(done.final_label, done.proposed.label);
        assert!(done.decided_at.is_some());

        let r2 = s.next_pending("alice").unwrap().unwrap();
        assert_eq!(r2.proposed.label, Some(VaccineLabel::Unspecified));
        let same = Decision::Correct {
            label: VaccineLabel::Unspecified,
        };
        assert!(matches!(
            s.submit_decision(&r2.id, "alice", same),
            Err(AnnotationError::IdenticalCorrection)
        ));
        let fixed = s
            .submit_decision(
                &r2.id,
                "alice",
                Decision::Correct {
                    label: VaccineLabel::named("Influenza"),
                },
            )
            .unwrap();
        assert_eq!(fixed.status, Status::Corrected);
        assert_ne!(fixed.final_label, fixed.proposed.label);

        // resubmission is a no-op
        let events = s.events().unwrap().len();
        s.submit_decision(
            &r2.id,
            "alice",
            Decision::Correct {
                label: VaccineLabel::named("Influenza"),
            },
        )
        .unwrap();
        assert_eq!(s.events().unwrap().len(), events);
    }

    #[test]
    fn skip_moves_to_back_of_queue() {
        let c = clock();
        let mut s = store(&c, 0.0);
        s.prelabel_rules(&worked_examples(), &Lexicon::builtin(), &RuleConfig::default())
            .unwrap();
        let first = s.next_pending("a").unwrap().unwrap();
        let skipped = s.submit_decision(&first.id, "a", Decision::Skip).unwrap();
        assert_eq!(skipped.status, Status::Skipped);
        let mut order = Vec::new();
        while let Some(r) = s.next_pending("a").unwrap() {
            order.push(r.id.clone());
            s.submit_decision(&r.id, "a", Decision::Accept).unwrap();
        }
        assert_eq!(order.len(), 5);
        assert_eq!(order.last(), Some(&first.id));
    }

    #[test]
    fn engine_failure_is_pending_without_proposal() {
        let c = clock();
        let mut s = store(&c, 0.0);
        let note = &worked_examples().notes[0];
        let mut failed = ExtractionResult::new(VaccineLabel::No, Engine::Llm);
        failed.error = Some("request timed out".into());
        s.enqueue_results("d", [(note.clone(), failed)]).unwrap();
        let rec = s.next_pending("a").unwrap().unwrap();
        assert_eq!(rec.proposed.label, None);
        assert!(matches!(
            s.submit_decision(&rec.id, "a", Decision::Accept),
            Err(AnnotationError::NothingToAccept(_))
        ));
        let fixed = s
            .submit_decision(
                &rec.id,
                "a",
                Decision::Correct {
                    label: VaccineLabel::named("4 months"),
                },
            )
            .unwrap();
        assert_eq!(fixed.status, Status::Corrected);
    }

    #[test]
    fn second_opinions_and_agreement() {
        let c = clock();
        let mut s = store(&c, 1.0);
        let lex = Lexicon::builtin();
        s.prelabel_rules(&worked_examples(), &lex, &RuleConfig::default()).unwrap();
        assert!(matches!(s.agreement(&lex, None), Err(AnnotationError::NoDualReviews)));
        while let Some(r) = s.next_pending("a").unwrap() {
            s.submit_decision(&r.id, "a", Decision::Accept).unwrap();
        }
        // "a" cannot second-review their own decisions
        assert!(s.next_pending("a").unwrap().is_none());
        let mut n = 0;
        while let Some(r) = s.next_pending("b").unwrap() {
            let d = if n == 0 {
                Decision::Correct {
                    label: VaccineLabel::No,
                }
            } else {
                Decision::Accept
            };
            let d = if r.proposed.label == Some(VaccineLabel::No) && n == 0 {
                Decision::Correct {
                    label: VaccineLabel::Unspecified,
                }
            } else {
                d
            };
            s.submit_decision(&r.id, "b", d).unwrap();
            n += 1;
        }
        assert_eq!(n, 5);
        let ag = s.agreement(&lex, Some(("b", "a"))).unwrap();
        assert_eq!((ag.dual_reviewed, ag.agreed), (5, 4));
        assert!((ag.ratio - 0.8).abs() < 1e-12);
        assert!(matches!(
            s.agreement(&lex, Some(("a", "z"))),
            Err(AnnotationError::NoDualReviews)
        ));
        assert_eq!(s.stats(&lex).awaiting_second_opinion, 0);
    }

    #[test]
    fn sampling_fraction_is_roughly_honoured() {
        let picked = (0..2000)
            .filter(|i| sampled_for_second_opinion(&format!("d:n{i}"), 0.25))
            .count();
        assert!((400..600).contains(&picked), "{picked}");
        assert!(!sampled_for_second_opinion("x", 0.0));
        assert!(sampled_for_second_opinion("x", 1.0));
    }

    #[test]
    fn export_contents_and_determinism() {
        let c = clock();
        let mut s = store(&c, 0.0);
        let lex = Lexicon::builtin();
        s.prelabel_rules(&worked_examples(), &lex, &RuleConfig::default()).unwrap();
        assert!(matches!(s.export(lex.version()), Err(AnnotationError::NothingToExport)));
        let target = record_id("worked", "t3");
        while let Some(r) = s.next_pending("a").unwrap() {
            if r.id == target {
                s.submit_decision(&r.id, "a", Decision::Accept).unwrap();
            } else {
                s.submit_decision(&r.id, "a", Decision::Skip).unwrap();
                break;
            }
        }
        while s.get(&target).unwrap().status == Status::Pending {
            let r = s.next_pending("a").unwrap().unwrap();
            let d = if r.id == target {
                Decision::Accept
            } else {
                Decision::Skip
            };
            s.submit_decision(&r.id, "a", d).unwrap();
        }
        let out = s.export(lex.version()).unwrap();
        assert_eq!(out.manifest.examples, 1);
        assert_eq!(out.jsonl.lines().count(), 1);
        let line: serde_json::Value = serde_json::from_str(out.jsonl.trim_end()).unwrap();
        assert_eq!(line["messages"][2]["content"], r#"{"Vaccination": "Rotavirus"}"#);
        assert_eq!(
            line["messages"][1]["content"],
            "Age: 0Y 4M. Febrile, blood in stool, vomit post rota-virus vaccine"
        );
        assert_eq!(line["messages"][0]["role"], "system");
        assert_eq!(s.export(lex.version()).unwrap(), out);
    }

    #[test]
    fn file_store_survives_reopen_with_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let c = clock();
        let lex = Lexicon::builtin();
        let config = StoreConfig {
            snapshot_every: 3,
            ..StoreConfig::default()
        };
        let live = {
            let mut s = AnnotationStore::open(dir.path(), config.clone(), Arc::new(c.clone())).unwrap();
            s.prelabel_rules(&worked_examples(), &lex, &RuleConfig::default()).unwrap();
            let r = s.next_pending("a").unwrap().unwrap();
            s.submit_decision(&r.id, "a", Decision::Accept).unwrap();
            s.next_pending("a").unwrap();
            s.state().clone()
        };
        assert!(dir.path().join(SNAPSHOT_FILE).exists());
        let reopened = AnnotationStore::open(dir.path(), config, Arc::new(c)).unwrap();
        assert_eq!(reopened.state(), &live);
        let events = reopened.events().unwrap();
        assert_eq!(events.len() as u64, live.last_seq);
        assert_eq!(AnnotationStore::replay(&events).unwrap(), live);
    }

    #[test]
    fn corrupt_log_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(EVENTS_FILE), "{not json}\n").unwrap();
        let err = AnnotationStore::open(dir.path(), StoreConfig::default(), Arc::new(clock())).unwrap_err();
        assert!(matches!(err, AnnotationError::CorruptLog { line: 1, .. }));
    }

    #[test]
    fn event_wire_shape() {
        let e = Event {
            seq: 7,
            ts: Utc.with_ymd_and_hms(2026, 10, 1, 9, 0, 0).unwrap(),
            record_id: "d:n1".into(),
            reviewer: Some("alice".into()),
            action: Action::Correct {
                label: VaccineLabel::named("Influenza"),
            },
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["seq"], 7);
        assert_eq!(v["action"], "correct");
        assert_eq!(v["reviewer"], "alice");
        assert_eq!(v["label"]["canonical_id"], "Influenza");
        let back: Event = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
    }
}
