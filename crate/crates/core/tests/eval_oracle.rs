//! The scorer checked against a naive re-implementation with its own equivalence table.

use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vaxtract_core::eval::{metrics, report, ConfusionCounts};
use vaxtract_core::llm::normalize_response;
use vaxtract_core::{Dataset, Lexicon, Prediction, TriageNote, VaccineLabel};

const TABLE: &[(&str, &[&str])] = &[
    ("Influenza", &["Influenza", "flu vax", "flu shot", "Fluvax", "FLU VAX"]),
    ("DTP", &["DTP", "Triple Antigen", "dtpa", "Boostrix"]),
    ("HepatitisB", &["Hepatitis B", "Hep B", "hep-b", "Engerix"]),
    ("Rotavirus", &["Rotavirus", "rota-virus", "Rotarix"]),
    ("6 weeks", &["6 weeks", "2 months"]),
];

fn gold_pool() -> Vec<&'static str> {
    let mut v = vec!["No", "Unspecified"];
    v.extend(TABLE.iter().map(|(c, _)| *c));
    v
}

fn answer_pool() -> Vec<&'static str> {
    let mut v = vec!["No", "Unspecified"];
    v.extend(TABLE.iter().flat_map(|(_, s)| s.iter().copied()));
    v
}

struct Naive {
    tp: u64,
    tn: u64,
    fp: u64,
    fn_: u64,
    correct: u64,
    unspec_correct: u64,
    unspec_total: u64,
    exact: u64,
}

fn naive(golds: &[&str], answers: &[&str]) -> Naive {
    let mut n = Naive {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
        correct: 0,
        unspec_correct: 0,
        unspec_total: 0,
        exact: 0,
    };
    for (g, a) in golds.iter().zip(answers) {
        let gp = *g != "No";
        let ap = *a != "No";
        match (ap, gp) {
            (true, true) => n.tp += 1,
            (false, false) => n.tn += 1,
            (true, false) => n.fp += 1,
            (false, true) => n.fn_ += 1,
        }
        let ok = if *g == "No" || *g == "Unspecified" {
            a == g
        } else {
            TABLE.iter().find(|(c, _)| c == g).unwrap().1.contains(a)
        };
        n.correct += ok as u64;
        if *g == "Unspecified" {
            n.unspec_total += 1;
            n.unspec_correct += ok as u64;
        }
        n.exact += (a == g) as u64;
    }
    n
}

fn safe_div(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn build(golds: &[&str], answers: &[&str], lex: &Lexicon) -> (Dataset, Vec<Prediction>) {
    let notes = golds
        .iter()
        .enumerate()
        .map(|(i, g)| TriageNote {
            id: format!("n{i}"),
            age_years: 0,
            age_months: 6,
            text: "text".into(),
            gold: Some(VaccineLabel::from_label_str(g, lex).unwrap()),
        })
        .collect();
    let preds = answers
        .iter()
        .enumerate()
        .map(|(i, a)| Prediction {
            id: format!("n{i}"),
            result: normalize_response(a, lex, None),
        })
        .collect();
    (Dataset::new("oracle", notes), preds)
}

#[test]
fn hundred_random_instances_agree_with_naive_scorer() {
    let lex = Lexicon::builtin();
    let (gp, ap) = (gold_pool(), answer_pool());
    let mut rng = ChaCha8Rng::seed_from_u64(20261017);
    for instance in 0..100 {
        let n = rng.random_range(1..=30);
        let golds: Vec<&str> = (0..n).map(|_| *gp.choose(&mut rng).unwrap()).collect();
        let answers: Vec<&str> = (0..n).map(|_| *ap.choose(&mut rng).unwrap()).collect();
        let (ds, preds) = build(&golds, &answers, &lex);
        let r = report(&preds, &ds, &lex).unwrap();
        let o = naive(&golds, &answers);

        assert_eq!(
            r.counts,
            ConfusionCounts::new(o.tp, o.tn, o.fn_, o.fp),
            "instance {instance}"
        );
        let p = safe_div(o.tp, o.tp + o.fp);
        let rc = safe_div(o.tp, o.tp + o.fn_);
        let f1 = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        assert!((r.precision.value - p).abs() < 1e-9, "instance {instance}");
        assert!((r.recall.value - rc).abs() < 1e-9, "instance {instance}");
        assert!((r.f1.value - f1).abs() < 1e-9, "instance {instance}");
        assert_eq!(r.name_correct_all.correct, o.correct, "instance {instance}");
        assert_eq!(r.name_correct_unspecified.correct, o.unspec_correct);
        assert_eq!(r.name_correct_unspecified.total, o.unspec_total);
        assert_eq!(r.exact_match.correct, o.exact, "instance {instance}");
    }
}

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (0u64..500, 0u64..500, 0u64..500, 0u64..500).prop_map(|(tp, tn, fn_, fp)| ConfusionCounts::new(tp, tn, fn_, fp))
}

fn labelled() -> impl Strategy<Value = Vec<(&'static str, &'static str)>> {
    proptest::collection::vec(
        (
            proptest::sample::select(gold_pool()),
            proptest::sample::select(answer_pool()),
        ),
        1..40,
    )
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval(c in counts()) {
        let m = metrics(&c);
        for r in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&r.value));
        }
    }

    #[test]
    fn converting_a_false_negative_never_lowers_recall(c in counts()) {
        prop_assume!(c.fn_ > 0);
        let better = ConfusionCounts::new(c.tp + 1, c.tn, c.fn_ - 1, c.fp);
        prop_assert!(metrics(&better).recall.value >= metrics(&c).recall.value);
        prop_assert!(metrics(&better).f1.value >= metrics(&c).f1.value);
    }

    #[test]
    fn adding_a_false_positive_never_raises_precision(c in counts()) {
        let worse = ConfusionCounts::new(c.tp, c.tn, c.fn_, c.fp + 1);
        prop_assert!(metrics(&worse).precision.value <= metrics(&c).precision.value);
    }

    #[test]
    fn counts_conserve_notes_and_exact_implies_correct(pairs in labelled()) {
        let lex = Lexicon::builtin();
        let (golds, answers): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (ds, preds) = build(&golds, &answers, &lex);
        let r = report(&preds, &ds, &lex).unwrap();
        prop_assert_eq!(r.counts.total(), golds.len() as u64);
        prop_assert!(r.exact_match.correct <= r.name_correct_all.correct);
        for o in &r.per_note {
            prop_assert!(!o.exact || o.name_correct);
        }
    }
}
