use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vaxtract_core::annotation::{AnnotationError, AnnotationStore, Decision, ManualClock, Status, StoreConfig};
use vaxtract_core::corpus::{generate_synthetic, TemplateSet};
use vaxtract_core::rules::RuleConfig;
use vaxtract_core::{Dataset, Lexicon, VaccineLabel};

const REVIEWERS: [&str; 3] = ["ana", "ben", "chi"];

fn check_invariants(store: &AnnotationStore) {
    for rec in store.state().records.values() {
        match rec.status {
            Status::Accepted => assert_eq!(rec.final_label, rec.proposed.label),
            Status::Corrected => {
                assert!(rec.final_label.is_some());
                assert_ne!(
                    rec.final_label.as_ref().map(|l| l.label_str()),
                    rec.proposed.label.as_ref().map(|l| l.label_str())
                );
            }
            Status::Pending | Status::Skipped => assert!(rec.final_label.is_none()),
        }
    }
}

/// Drives random operations until `target` events have been logged.
fn drive(seed: u64, target: usize, store: &mut AnnotationStore, clock: &ManualClock, lex: &Lexicon) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = TemplateSet::builtin();
    let pools: Vec<Dataset> = (0..4)
        .map(|i| {
            let mut d = generate_synthetic(seed.wrapping_add(i), 40, 0.6, &templates, lex).unwrap();
            d.name = format!("pool{i}");
            d
        })
        .collect();
    let labels: Vec<VaccineLabel> = ["No", "Unspecified", "Influenza", "Rotavirus", "6 weeks", "DTP"]
        .iter()
        .map(|s| VaccineLabel::from_label_str(s, lex).unwrap())
        .collect();
    let mut held: Vec<(String, &str)> = Vec::new();
    let mut steps = 0;
    while (store.state().last_seq as usize) < target {
        steps += 1;
        assert!(steps < 20 * target, "driver stalled");
        match rng.random_range(0..100) {
            0..4 => {
                let pool = pools.choose(&mut rng).unwrap();
                let k = rng.random_range(1..=pool.len());
                let subset = Dataset::new(pool.name.clone(), pool.notes[..k].to_vec());
                store.prelabel_rules(&subset, lex, &RuleConfig::default()).unwrap();
            }
            4..40 => {
                let r = *REVIEWERS.choose(&mut rng).unwrap();
                if let Some(rec) = store.next_pending(r).unwrap() {
                    held.push((rec.id, r));
                }
            }
            40..90 if !held.is_empty() => {
                let (id, r) = held.swap_remove(rng.random_range(0..held.len()));
                // sometimes submit as the wrong reviewer
                let who = if rng.random_bool(0.1) {
                    *REVIEWERS.choose(&mut rng).unwrap()
                } else {
                    r
                };
                let decision = match rng.random_range(0..10) {
                    0..5 => Decision::Accept,
                    5..8 => Decision::Correct {
                        label: labels.choose(&mut rng).unwrap().clone(),
                    },
                    _ => Decision::Skip,
                };
                match store.submit_decision(&id, who, decision) {
                    Ok(_)
                    | Err(AnnotationError::LeaseViolation { .. })
                    | Err(AnnotationError::IdenticalCorrection)
                    | Err(AnnotationError::NotReviewable(_))
                    | Err(AnnotationError::NothingToAccept(_)) => {}
                    Err(e) => panic!("unexpected {e}"),
                }
            }
            90..95 => {
                let err = store
                    .submit_decision("pool9:missing", "ana", Decision::Accept)
                    .unwrap_err();
                assert!(matches!(err, AnnotationError::UnknownRecord(_)));
            }
            _ => clock.advance(Duration::seconds(rng.random_range(1..400))),
        }
        check_invariants(store);
    }
}

fn run(seed: u64, dir: Option<&std::path::Path>) {
    let lex = Lexicon::builtin();
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 10, 1, 8, 0, 0).unwrap());
    let config = StoreConfig {
        lease_ttl_secs: 300,
        second_opinion_fraction: 0.3,
        snapshot_every: 50,
    };
    let mut live = match dir {
        Some(d) => AnnotationStore::open(d, config.clone(), Arc::new(clock.clone())).unwrap(),
        None => AnnotationStore::in_memory(config.clone(), Arc::new(clock.clone())),
    };
    drive(seed, 500, &mut live, &clock, &lex);

    let events = live.events().unwrap();
    assert!(events.len() >= 500);
    let replayed = AnnotationStore::replay(&events).unwrap();
    assert_eq!(&replayed, live.state());

    let live_export = live.export(lex.version());
    let replay_export = vaxtract_core::annotation::export_chat_jsonl(&replayed, lex.version());
    match (live_export, replay_export) {
        (Ok(a), Ok(b)) => {
            assert_eq!(a.jsonl.as_bytes(), b.jsonl.as_bytes());
            assert_eq!(a.manifest, b.manifest);
            let s = live.state();
            assert_eq!(
                a.manifest.examples as usize,
                s.count(Status::Accepted) + s.count(Status::Corrected)
            );
            assert_eq!(a.jsonl.lines().count() as u64, a.manifest.examples);
        }
        (Err(AnnotationError::NothingToExport), Err(AnnotationError::NothingToExport)) => {}
        (a, b) => panic!("exports diverged: {:?} vs {:?}", a.map(|_| ()), b.map(|_| ())),
    }

    if let Some(d) = dir {
        drop(live);
        let reopened = AnnotationStore::open(d, config, Arc::new(clock)).unwrap();
        assert_eq!(reopened.state(), &replayed);
    }
}

#[test]
fn file_backed_replay_and_reopen() {
    let dir = tempfile::tempdir().unwrap();
    run(99, Some(dir.path()));
}

#[test]
fn pending_records_never_exported() {
    let lex = Lexicon::builtin();
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 10, 1, 8, 0, 0).unwrap());
    let mut store = AnnotationStore::in_memory(StoreConfig::default(), Arc::new(clock.clone()));
    drive(5, 200, &mut store, &clock, &lex);
    if let Ok(export) = store.export(lex.version()) {
        for rec in store.state().records.values().filter(|r| !r.is_decided()) {
            assert!(!export
                .jsonl
                .contains(&serde_json::to_string(&rec.note.age_prefixed_text()).unwrap()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn replay_equals_live(seed in any::<u64>()) {
        run(seed, None);
    }
}
