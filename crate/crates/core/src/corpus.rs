//! Triage-note datasets: JSONL/CSV loading, the age prefix, and seeded synthesis.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::LazyLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{UnknownLabel, VaccineLabel};
use crate::lexicon::Lexicon;

const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.json");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate note id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {source}")]
    UnknownLabel { line: usize, source: UnknownLabel },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgeError {
    #[error("no recognizable age prefix")]
    MissingAgePrefix,
    #[error("age months {0} out of range (must be < 12)")]
    AgeOutOfRange(u32),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("template set is empty")]
    EmptyTemplates,
    #[error("no templates available for the {0} class")]
    EmptyClass(&'static str),
    #[error("vaccine fraction {0} outside 0..=1")]
    BadFraction(f64),
    #[error("n must be at least 1")]
    ZeroCount,
    #[error("template {index}: {message}")]
    BadTemplate { index: usize, message: String },
    #[error("templates are not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One emergency-department presentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageNote {
    pub id: String,
    pub age_years: u32,
    pub age_months: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<VaccineLabel>,
}

impl TriageNote {
    pub fn total_months(&self) -> u32 {
        12 * self.age_years + self.age_months
    }

    /// "Age: 0Y 4M. <text>"
    pub fn age_prefixed_text(&self) -> String {
        format!("Age: {}Y {}M. {}", self.age_years, self.age_months, self.text)
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("note id is empty".into());
        }
        if self.text.trim().is_empty() {
            return Err("note text is empty".into());
        }
        if self.age_months >= 12 {
            return Err(format!("age_months {} must be below 12", self.age_months));
        }
        Ok(())
    }
}

/// The on-disk shape of a note. `gold` is a label string.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteRecord {
    pub id: String,
    pub age_years: u32,
    pub age_months: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl From<&TriageNote> for NoteRecord {
    fn from(n: &TriageNote) -> Self {
        NoteRecord {
            id: n.id.clone(),
            age_years: n.age_years,
            age_months: n.age_months,
            text: n.text.clone(),
            gold: n.gold.as_ref().map(|g| g.label_str().to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub present: usize,
    pub absent: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub name: String,
    pub notes: Vec<TriageNote>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoteFormat {
    Jsonl,
    Csv,
}

impl Dataset {
    pub fn new(name: impl Into<String>, notes: Vec<TriageNote>) -> Self {
        Dataset {
            name: name.into(),
            notes,
        }
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TriageNote> {
        self.notes.iter().find(|n| n.id == id)
    }

    pub fn class_counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for note in &self.notes {
            match &note.gold {
                Some(g) if g.is_present() => c.present += 1,
                Some(_) => c.absent += 1,
                None => c.unlabeled += 1,
            }
        }
        c
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for note in &self.notes {
            serde_json::to_writer(&mut out, &NoteRecord::from(note))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

fn note_from_record(rec: NoteRecord, line: usize, lexicon: &Lexicon) -> Result<TriageNote, CorpusError> {
    let gold = match rec.gold.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(
            VaccineLabel::from_label_str(s, lexicon).map_err(|source| CorpusError::UnknownLabel { line, source })?,
        ),
    };
    let note = TriageNote {
        id: rec.id,
        age_years: rec.age_years,
        age_months: rec.age_months,
        text: rec.text,
        gold,
    };
    note.validate()
        .map_err(|message| CorpusError::Malformed { line, message })?;
    Ok(note)
}

/// Loads notes, rejecting duplicate ids and unknown gold strings. Blank JSONL lines are skipped.
pub fn load_notes<R: BufRead>(
    source: R,
    format: NoteFormat,
    name: &str,
    lexicon: &Lexicon,
) -> Result<Dataset, CorpusError> {
    let mut records: Vec<(usize, NoteRecord)> = Vec::new();
    match format {
        NoteFormat::Jsonl => {
            for (i, line) in source.lines().enumerate() {
                let line_no = i + 1;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: NoteRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
                records.push((line_no, rec));
            }
        }
        NoteFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
            for row in reader.deserialize::<NoteRecord>() {
                let rec = row.map_err(|e| CorpusError::Malformed {
                    line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                    message: e.to_string(),
                })?;
                // header is line 1
                records.push((records.len() + 2, rec));
            }
        }
    }

    let mut seen = HashSet::new();
    let mut notes = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: rec.id });
        }
        notes.push(note_from_record(rec, line, lexicon)?);
    }
    Ok(Dataset::new(name, notes))
}

static AGE_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*age\s*:\s*(?:(\d{1,3})\s*y\s*)?(\d{1,4})\s*m\b\s*\.?").unwrap());

/// Splits "Age: 0Y 4M. text" into (years, months, "text").
///
/// A months-only prefix above 11 ("Age: 18M.") is carried into years.
pub fn parse_age_prefix(raw: &str) -> Result<(u32, u32, &str), AgeError> {
    let caps = AGE_PREFIX.captures(raw).ok_or(AgeError::MissingAgePrefix)?;
    let whole = caps.get(0).expect("group 0 always present");
    let months: u32 = caps[2].parse().map_err(|_| AgeError::MissingAgePrefix)?;
    let (years, months) = match caps.get(1) {
        Some(y) => {
            if months >= 12 {
                return Err(AgeError::AgeOutOfRange(months));
            }
            (y.as_str().parse().map_err(|_| AgeError::MissingAgePrefix)?, months)
        }
        None => (months / 12, months % 12),
    };
    Ok((years, months, raw[whole.end()..].trim()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    pub gold: String,
    #[serde(default = "default_age_range")]
    pub age_months: [u32; 2],
}

fn default_age_range() -> [u32; 2] {
    [0, 1199]
}

/// Note templates plus the slot fillers they reference (`{sx}`, `{ago}`, ...).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    #[serde(default)]
    pub fillers: BTreeMap<String, Vec<String>>,
    pub templates: Vec<Template>,
}

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

impl TemplateSet {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_TEMPLATES).expect("shipped templates are valid")
    }

    pub fn from_json_str(src: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(src)?)
    }

    fn check(&self, lexicon: &Lexicon) -> Result<Vec<VaccineLabel>, SynthError> {
        if self.templates.is_empty() {
            return Err(SynthError::EmptyTemplates);
        }
        self.templates
            .iter()
            .enumerate()
            .map(|(index, t)| {
                let bad = |message: String| SynthError::BadTemplate { index, message };
                for cap in SLOT.captures_iter(&t.text) {
                    match self.fillers.get(&cap[1]) {
                        Some(v) if !v.is_empty() => {}
                        _ => return Err(bad(format!("slot {{{}}} has no fillers", &cap[1]))),
                    }
                }
                if t.age_months[0] > t.age_months[1] {
                    return Err(bad("age range is inverted".into()));
                }
                VaccineLabel::from_label_str(&t.gold, lexicon).map_err(|e| bad(e.to_string()))
            })
            .collect()
    }
}

/// Deterministic synthetic dataset. Exactly `round(n * vaccine_fraction)` notes carry a
/// vaccine-present gold label.
pub fn generate_synthetic(
    seed: u64,
    n: usize,
    vaccine_fraction: f64,
    templates: &TemplateSet,
    lexicon: &Lexicon,
) -> Result<Dataset, SynthError> {
    if n == 0 {
        return Err(SynthError::ZeroCount);
    }
    if !(0.0..=1.0).contains(&vaccine_fraction) {
        return Err(SynthError::BadFraction(vaccine_fraction));
    }
    let golds = templates.check(lexicon)?;
    let (present, absent): (Vec<usize>, Vec<usize>) = (0..golds.len()).partition(|&i| golds[i].is_present());

    let n_present = ((n as f64) * vaccine_fraction).round() as usize;
    if n_present > 0 && present.is_empty() {
        return Err(SynthError::EmptyClass("vaccine-present"));
    }
    if n_present < n && absent.is_empty() {
        return Err(SynthError::EmptyClass("vaccine-absent"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<bool> = (0..n).map(|i| i < n_present).collect();
    classes.shuffle(&mut rng);

    let notes = classes
        .into_iter()
        .enumerate()
        .map(|(i, is_present)| {
            let pool = if is_present { &present } else { &absent };
            let idx = *pool.choose(&mut rng).expect("pool checked non-empty");
            let template = &templates.templates[idx];
            let text = SLOT
                .replace_all(&template.text, |cap: &regex::Captures<'_>| {
                    templates.fillers[&cap[1]]
                        .choose(&mut rng)
                        .expect("fillers checked non-empty")
                        .clone()
                })
                .into_owned();
            let [lo, hi] = template.age_months;
            let months = rng.random_range(lo..=hi);
            TriageNote {
                id: format!("syn-{seed}-{i:05}"),
                age_years: months / 12,
                age_months: months % 12,
                text,
                gold: Some(golds[idx].clone()),
            }
        })
        .collect();
    Ok(Dataset::new(format!("synthetic-seed{seed}-n{n}"), notes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    #[test]
    fn loads_table_row_jsonl() {
        let src = r#"{"id":"n1","age_years":0,"age_months":4,"text":"Febrile, blood in stool, vomit post rota-virus vaccine","gold":"Rotavirus"}"#;
        let ds = load_notes(src.as_bytes(), NoteFormat::Jsonl, "t", &lex()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.notes[0].gold, Some(VaccineLabel::named("Rotavirus")));
    }

    #[test]
    fn empty_stream_is_empty_dataset() {
        let ds = load_notes(&b""[..], NoteFormat::Jsonl, "t", &lex()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn duplicate_id_is_reported() {
        let src = "{\"id\":\"n1\",\"age_years\":1,\"age_months\":0,\"text\":\"a\"}\n{\"id\":\"n1\",\"age_years\":1,\"age_months\":0,\"text\":\"b\"}\n";
        match load_notes(src.as_bytes(), NoteFormat::Jsonl, "t", &lex()) {
            Err(CorpusError::DuplicateId { id, line }) => {
                assert_eq!(id, "n1");
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let src = "{\"id\":\"n1\",\"age_years\":1,\"age_months\":0,\"text\":\"a\"}\n\n{\"id\": \n";
        match load_notes(src.as_bytes(), NoteFormat::Jsonl, "t", &lex()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_gold_rejected() {
        let src = r#"{"id":"n1","age_years":1,"age_months":0,"text":"a","gold":"Smallpox"}"#;
        assert!(matches!(
            load_notes(src.as_bytes(), NoteFormat::Jsonl, "t", &lex()),
            Err(CorpusError::UnknownLabel { line: 1, .. })
        ));
    }

    #[test]
    fn invariant_violations_rejected() {
        for src in [
            r#"{"id":"n1","age_years":1,"age_months":12,"text":"a"}"#,
            r#"{"id":"n1","age_years":1,"age_months":0,"text":"   "}"#,
            r#"{"id":"","age_years":1,"age_months":0,"text":"a"}"#,
            r#"{"id":"n1","age_years":1,"age_months":0,"text":"a","sex":"F"}"#,
        ] {
            assert!(
                matches!(
                    load_notes(src.as_bytes(), NoteFormat::Jsonl, "t", &lex()),
                    Err(CorpusError::Malformed { .. })
                ),
                "{src}"
            );
        }
    }

    #[test]
    fn csv_import() {
        let src = "id,age_years,age_months,text,gold\nn1,3,1,\"fever, runny nose, sob on b/g of flu vax 2/7 ago\",Influenza\nn2,0,5,whooping cough prophylaxis,\n";
        let ds = load_notes(src.as_bytes(), NoteFormat::Csv, "t", &lex()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.notes[0].gold, Some(VaccineLabel::named("Influenza")));
        assert_eq!(ds.notes[1].gold, None);
        assert_eq!(
            ds.class_counts(),
            ClassCounts {
                present: 1,
                absent: 0,
                unlabeled: 1
            }
        );
    }

    #[test]
    fn csv_without_gold_column() {
        let src = "id,age_years,age_months,text\nn1,3,1,fever\n";
        let ds = load_notes(src.as_bytes(), NoteFormat::Csv, "t", &lex()).unwrap();
        assert_eq!(ds.notes[0].gold, None);
    }

    #[test]
    fn age_prefix_variants() {
        assert_eq!(
            parse_age_prefix("Age: 0Y 4M. Febrile, blood in stool"),
            Ok((0, 4, "Febrile, blood in stool"))
        );
        assert_eq!(
            parse_age_prefix("Age: 5M. whooping cough prophylaxis 2/52 ago"),
            Ok((0, 5, "whooping cough prophylaxis 2/52 ago"))
        );
        assert_eq!(
            parse_age_prefix("Age: 13Y 2 M. Allergic reaction post immms."),
            Ok((13, 2, "Allergic reaction post immms."))
        );
        assert_eq!(parse_age_prefix("Age: 3Y 1M fever"), Ok((3, 1, "fever")));
        assert_eq!(parse_age_prefix("Age: 18M. cough"), Ok((1, 6, "cough")));
        assert_eq!(parse_age_prefix("fever post imms"), Err(AgeError::MissingAgePrefix));
        assert_eq!(parse_age_prefix("Age: 2Y 14M. x"), Err(AgeError::AgeOutOfRange(14)));
        assert_eq!(parse_age_prefix("Age: 4Mo imms"), Err(AgeError::MissingAgePrefix));
    }

    #[test]
    fn synth_class_balance() {
        let t = TemplateSet::builtin();
        let ds = generate_synthetic(7, 10, 0.5, &t, &lex()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.class_counts().present, 5);
        assert!(ds.notes.iter().all(|n| n.gold.is_some()));
    }

    #[test]
    fn synth_is_deterministic() {
        let t = TemplateSet::builtin();
        let a = generate_synthetic(7, 40, 0.3, &t, &lex()).unwrap().to_jsonl();
        let b = generate_synthetic(7, 40, 0.3, &t, &lex()).unwrap().to_jsonl();
        assert_eq!(a, b);
        let c = generate_synthetic(8, 40, 0.3, &t, &lex()).unwrap().to_jsonl();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_test_split_composition() {
        // 238 present / 21 absent, checked by counting every generated note
        let t = TemplateSet::builtin();
        let ds = generate_synthetic(7, 259, 238.0 / 259.0, &t, &lex()).unwrap();
        let present = ds
            .notes
            .iter()
            .filter(|n| n.gold.as_ref().unwrap().is_present())
            .count();
        let absent = ds
            .notes
            .iter()
            .filter(|n| !n.gold.as_ref().unwrap().is_present())
            .count();
        assert_eq!((present, absent), (238, 21));
    }

    #[test]
    fn synth_rejects_empty_templates() {
        let t = TemplateSet {
            version: "x".into(),
            fillers: BTreeMap::new(),
            templates: vec![],
        };
        assert!(matches!(
            generate_synthetic(1, 3, 0.5, &t, &lex()),
            Err(SynthError::EmptyTemplates)
        ));
    }

    #[test]
    fn synth_rejects_missing_class() {
        let t = TemplateSet {
            version: "x".into(),
            fillers: BTreeMap::new(),
            templates: vec![Template {
                text: "fever".into(),
                gold: "No".into(),
                age_months: [0, 10],
            }],
        };
        assert!(matches!(
            generate_synthetic(1, 3, 0.5, &t, &lex()),
            Err(SynthError::EmptyClass(_))
        ));
        assert!(generate_synthetic(1, 3, 0.0, &t, &lex()).is_ok());
    }
}
