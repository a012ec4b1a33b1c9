//! Canonical vaccine identities and the surface forms that name them.
//!
//! All lookups go through [`fold`]: lowercase, alphanumerics only. That makes
//! "rota-virus", "rota virus" and "Rotavirus" the same key, and it is also the
//! key used to detect ambiguous surfaces when a lexicon file is loaded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.json");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading lexicon: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate canonical id {0:?}")]
    DuplicateCanonical(String),
    #[error("surface {surface:?} maps to both {first:?} and {second:?}")]
    AmbiguousSurface {
        surface: String,
        first: String,
        second: String,
    },
    #[error("canonical id {0:?} is not listed among its own surfaces")]
    CanonicalNotSurface(String),
    #[error("surface {0:?} folds to nothing")]
    EmptySurface(String),
    #[error("surface {0:?} collides with a reserved label (No / Unspecified)")]
    ReservedSurface(String),
    #[error("generic trigger {0:?} is also a vaccine surface")]
    TriggerIsSurface(String),
    #[error("{set} entries must be single words, got {word:?}")]
    MultiWord { set: &'static str, word: String },
    #[error("required set {0} is empty")]
    EmptySet(&'static str),
    #[error("schedule-point entry {0:?} needs a parseable schedule_age")]
    BadScheduleAge(String),
}

/// Lowercase and drop everything that is not alphanumeric.
pub fn fold(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    DiseaseNamed,
    Brand,
    SchedulePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeUnit {
    Weeks,
    Months,
    Years,
}

/// An age expressed the way immunisation schedules and triage shorthand do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeQuantity {
    pub value: u32,
    pub unit: AgeUnit,
}

const WEEKS_PER_MONTH: f64 = 365.25 / 12.0 / 7.0;
const WEEKS_PER_YEAR: f64 = 365.25 / 7.0;

impl AgeQuantity {
    pub fn weeks(self) -> f64 {
        let v = f64::from(self.value);
        match self.unit {
            AgeUnit::Weeks => v,
            AgeUnit::Months => v * WEEKS_PER_MONTH,
            AgeUnit::Years => v * WEEKS_PER_YEAR,
        }
    }

    pub fn from_months(total_months: u32) -> Self {
        AgeQuantity {
            value: total_months,
            unit: AgeUnit::Months,
        }
    }

    /// Parses "6 weeks", "6wo", "6 wk", "4mo", "12 month", "4yo" and friends.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_lowercase();
        let digits_end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        if digits_end == 0 {
            return None;
        }
        let value: u32 = s[..digits_end].parse().ok()?;
        let unit = parse_unit(s[digits_end..].trim().trim_end_matches('.'))?;
        Some(AgeQuantity { value, unit })
    }

    pub fn phrase(self) -> String {
        let unit = match self.unit {
            AgeUnit::Weeks => "weeks",
            AgeUnit::Months => "months",
            AgeUnit::Years => "years",
        };
        format!("{} {}", self.value, unit)
    }
}

pub(crate) fn parse_unit(s: &str) -> Option<AgeUnit> {
    match s {
        "w" | "wo" | "wk" | "wks" | "week" | "weeks" | "wko" => Some(AgeUnit::Weeks),
        "m" | "mo" | "mos" | "mth" | "mths" | "month" | "months" | "mon" | "mnth" => Some(AgeUnit::Months),
        "y" | "yo" | "yr" | "yrs" | "year" | "years" => Some(AgeUnit::Years),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaccineEntry {
    pub canonical_id: String,
    pub kind: EntryKind,
    pub surfaces: Vec<String>,
    pub schedule_age: Option<AgeQuantity>,
}

/// A multi-word cue phrase, stored as folded words.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Phrase(pub Vec<String>);

impl Phrase {
    fn new(raw: &str) -> Option<Self> {
        let words: Vec<String> = raw.split_whitespace().map(fold).filter(|w| !w.is_empty()).collect();
        (!words.is_empty()).then_some(Phrase(words))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn matches_at(&self, folded: &[&str], at: usize) -> bool {
        at + self.0.len() <= folded.len() && self.0.iter().zip(&folded[at..]).all(|(w, t)| w == t)
    }
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    note: Option<String>,
    entries: Vec<EntryFile>,
    generic_triggers: Vec<String>,
    injection_words: Vec<String>,
    non_vaccine_context: Vec<String>,
    future_cues: Vec<String>,
    #[serde(default)]
    cue_exclusions: Vec<String>,
    past_cues: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    canonical_id: String,
    kind: EntryKind,
    surfaces: Vec<String>,
    #[serde(default)]
    schedule_age: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    version: String,
    note: Option<String>,
    entries: Vec<VaccineEntry>,
    by_fold: HashMap<String, usize>,
    max_surface_fold_len: usize,
    generic_triggers: BTreeSet<String>,
    injection_words: BTreeSet<String>,
    non_vaccine_context: BTreeSet<String>,
    future_cues: Vec<Phrase>,
    cue_exclusions: Vec<Phrase>,
    past_cues: Vec<Phrase>,
}

impl Lexicon {
    /// The lexicon shipped with this crate.
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN_LEXICON).expect("shipped lexicon is valid")
    }

    pub fn builtin_source() -> &'static str {
        BUILTIN_LEXICON
    }

    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self, LexiconError> {
        let mut buf = String::new();
        reader.read_to_string(&mut buf)?;
        Self::from_json_str(&buf)
    }

    pub fn from_json_str(src: &str) -> Result<Self, LexiconError> {
        let file: LexiconFile = serde_json::from_str(src)?;
        Self::build(file)
    }

    fn build(file: LexiconFile) -> Result<Self, LexiconError> {
        let mut entries = Vec::with_capacity(file.entries.len());
        let mut by_fold: HashMap<String, usize> = HashMap::new();
        let mut seen_canonical = BTreeSet::new();
        let reserved = [fold("No"), fold("Unspecified")];

        for (idx, raw) in file.entries.into_iter().enumerate() {
            if !seen_canonical.insert(raw.canonical_id.clone()) {
                return Err(LexiconError::DuplicateCanonical(raw.canonical_id));
            }
            let canonical_key = fold(&raw.canonical_id);
            if !raw.surfaces.iter().any(|s| fold(s) == canonical_key) {
                return Err(LexiconError::CanonicalNotSurface(raw.canonical_id));
            }
            for surface in &raw.surfaces {
                let key = fold(surface);
                if key.is_empty() {
                    return Err(LexiconError::EmptySurface(surface.clone()));
                }
                if reserved.contains(&key) {
                    return Err(LexiconError::ReservedSurface(surface.clone()));
                }
                match by_fold.get(&key) {
                    Some(&other) if other != idx => {
                        let first: &VaccineEntry = &entries[other];
                        return Err(LexiconError::AmbiguousSurface {
                            surface: surface.clone(),
                            first: first.canonical_id.clone(),
                            second: raw.canonical_id.clone(),
                        });
                    }
                    _ => {
                        by_fold.insert(key, idx);
                    }
                }
            }
            let schedule_age = match (raw.kind, raw.schedule_age.as_deref()) {
                (EntryKind::SchedulePoint, Some(age)) => Some(
                    AgeQuantity::parse(age).ok_or_else(|| LexiconError::BadScheduleAge(raw.canonical_id.clone()))?,
                ),
                (EntryKind::SchedulePoint, None) => return Err(LexiconError::BadScheduleAge(raw.canonical_id)),
                (_, _) => None,
            };
            entries.push(VaccineEntry {
                canonical_id: raw.canonical_id,
                kind: raw.kind,
                surfaces: raw.surfaces,
                schedule_age,
            });
        }
        if entries.is_empty() {
            return Err(LexiconError::EmptySet("entries"));
        }

        let word_set = |name: &'static str, words: Vec<String>| {
            let set: BTreeSet<String> = words.iter().map(|w| fold(w)).filter(|w| !w.is_empty()).collect();
            if set.is_empty() {
                Err(LexiconError::EmptySet(name))
            } else {
                Ok(set)
            }
        };
        let phrase_list = |name: &'static str, words: Vec<String>, required: bool| {
            let list: Vec<Phrase> = words.iter().filter_map(|w| Phrase::new(w)).collect();
            if required && list.is_empty() {
                Err(LexiconError::EmptySet(name))
            } else {
                Ok(list)
            }
        };

        for (name, list) in [
            ("generic_triggers", &file.generic_triggers),
            ("injection_words", &file.injection_words),
            ("non_vaccine_context", &file.non_vaccine_context),
        ] {
            if let Some(w) = list.iter().find(|w| w.split_whitespace().count() > 1) {
                return Err(LexiconError::MultiWord {
                    set: name,
                    word: w.clone(),
                });
            }
        }
        let generic_triggers = word_set("generic_triggers", file.generic_triggers)?;
        if let Some(t) = generic_triggers.iter().find(|t| by_fold.contains_key(*t)) {
            return Err(LexiconError::TriggerIsSurface(t.clone()));
        }
        let max_surface_fold_len = by_fold.keys().map(|k| k.chars().count()).max().unwrap_or(0);

        Ok(Lexicon {
            version: file.version.unwrap_or_else(|| "unversioned".to_string()),
            note: file.note,
            entries,
            by_fold,
            max_surface_fold_len,
            generic_triggers,
            injection_words: word_set("injection_words", file.injection_words)?,
            non_vaccine_context: word_set("non_vaccine_context", file.non_vaccine_context)?,
            future_cues: phrase_list("future_cues", file.future_cues, true)?,
            cue_exclusions: phrase_list("cue_exclusions", file.cue_exclusions, false)?,
            past_cues: phrase_list("past_cues", file.past_cues, true)?,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn note(&self) -> Option<&str> {
        self.note.as_deref()
    }

    pub fn entries(&self) -> &[VaccineEntry] {
        &self.entries
    }

    pub fn canonical_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.canonical_id.as_str())
    }

    pub fn entry(&self, canonical_id: &str) -> Option<&VaccineEntry> {
        self.entries.iter().find(|e| e.canonical_id == canonical_id)
    }

    /// Entry owning an already-folded key.
    pub fn entry_for_fold(&self, key: &str) -> Option<&VaccineEntry> {
        self.by_fold.get(key).map(|&i| &self.entries[i])
    }

    pub fn canonical_of(&self, surface: &str) -> Option<&str> {
        self.entry_for_fold(&fold(surface)).map(|e| e.canonical_id.as_str())
    }

    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        match (self.canonical_of(a), self.canonical_of(b)) {
            (Some(x), Some(y)) => x == y,
            (None, None) => fold(a) == fold(b),
            _ => false,
        }
    }

    /// Longest folded surface, in characters. Bounds candidate spans during matching.
    pub fn max_surface_fold_len(&self) -> usize {
        self.max_surface_fold_len
    }

    pub fn generic_triggers(&self) -> &BTreeSet<String> {
        &self.generic_triggers
    }

    pub fn injection_words(&self) -> &BTreeSet<String> {
        &self.injection_words
    }

    pub fn non_vaccine_context(&self) -> &BTreeSet<String> {
        &self.non_vaccine_context
    }

    pub fn future_cues(&self) -> &[Phrase] {
        &self.future_cues
    }

    pub fn cue_exclusions(&self) -> &[Phrase] {
        &self.cue_exclusions
    }

    pub fn past_cues(&self) -> &[Phrase] {
        &self.past_cues
    }

    /// Schedule-point entry reached by an age phrase such as "4 months" or "2 month".
    pub fn schedule_point_for(&self, age: AgeQuantity) -> Option<&VaccineEntry> {
        self.entry_for_fold(&fold(&age.phrase()))
            .filter(|e| e.kind == EntryKind::SchedulePoint)
    }

    /// Surface counts per kind, for `lexicon check` output.
    pub fn summary(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let k = match e.kind {
                EntryKind::DiseaseNamed => "disease-named",
                EntryKind::Brand => "brand",
                EntryKind::SchedulePoint => "schedule-point",
            };
            *out.entry(k).or_insert(0) += 1;
        }
        out.insert("surfaces", self.by_fold.len());
        out.insert("generic_triggers", self.generic_triggers.len());
        out
    }
}
