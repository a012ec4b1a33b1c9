//! Deterministic baseline extractor.
//!
//! The cascade: named vaccine surfaces first, then generic vaccination words
//! (with the schedule-point refinement), otherwise `No`. Matches preceded by a
//! future cue ("due for", "booked") in the same sentence are discarded first.

mod tokenize;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::TriageNote;
use crate::label::{Engine, ExtractionResult, Span, VaccineLabel};
use crate::lexicon::{AgeQuantity, EntryKind, Lexicon, VaccineEntry};

pub use tokenize::{normalize_text, Piece, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Words before a match searched for a future cue.
    pub cue_window: usize,
    /// Words either side of an injection word searched for non-vaccine context.
    pub context_window: usize,
    pub schedule_tolerance_weeks: f64,
    pub fuzzy_generic: bool,
    /// Generic triggers shorter than this never match fuzzily.
    pub fuzzy_min_len: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            cue_window: 4,
            context_window: 3,
            schedule_tolerance_weeks: 2.0,
            fuzzy_generic: true,
            fuzzy_min_len: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedMatch {
    pub canonical_id: String,
    /// Source text covered by the match.
    pub surface: String,
    pub span: Span,
    pub tokens: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenericMatch {
    pub surface: String,
    /// The trigger or injection word it matched.
    pub trigger: String,
    pub span: Span,
    pub tokens: Range<usize>,
    pub fuzzy: bool,
}

/// Anything anchored to a token range.
pub trait Located {
    fn tokens(&self) -> Range<usize>;
}

impl Located for NamedMatch {
    fn tokens(&self) -> Range<usize> {
        self.tokens.clone()
    }
}

impl Located for GenericMatch {
    fn tokens(&self) -> Range<usize> {
        self.tokens.clone()
    }
}

/// Word-level view of a token stream: boundaries removed, sentence ids kept.
struct Words<'t> {
    tokens: &'t [Token],
    token_idx: Vec<usize>,
    sentence: Vec<usize>,
    word_of_token: Vec<Option<usize>>,
}

impl<'t> Words<'t> {
    fn new(tokens: &'t [Token]) -> Self {
        let mut token_idx = Vec::new();
        let mut sentence = Vec::new();
        let mut word_of_token = vec![None; tokens.len()];
        let mut s = 0;
        for (i, t) in tokens.iter().enumerate() {
            if t.is_boundary() {
                s += 1;
            } else {
                word_of_token[i] = Some(token_idx.len());
                token_idx.push(i);
                sentence.push(s);
            }
        }
        Words {
            tokens,
            token_idx,
            sentence,
            word_of_token,
        }
    }

    fn folded(&self) -> Vec<&str> {
        self.token_idx.iter().map(|&i| self.tokens[i].folded.as_str()).collect()
    }

    /// Word indices of the same sentence within `before` words left of `w`.
    fn before(&self, w: usize, before: usize) -> Range<usize> {
        let mut lo = w;
        while lo > 0 && w - lo < before && self.sentence[lo - 1] == self.sentence[w] {
            lo -= 1;
        }
        lo..w
    }

    fn around(&self, w: usize, width: usize) -> impl Iterator<Item = usize> + '_ {
        let before = self.before(w, width);
        let mut hi = w + 1;
        while hi < self.token_idx.len() && hi - w <= width && self.sentence[hi] == self.sentence[w] {
            hi += 1;
        }
        before.chain(w + 1..hi)
    }

    fn sentence_words(&self, w: usize) -> impl Iterator<Item = usize> + '_ {
        let s = self.sentence[w];
        (0..self.token_idx.len()).filter(move |&i| self.sentence[i] == s)
    }
}

fn char_slice(text: &str, span: Span) -> String {
    text.chars().skip(span.start).take(span.end - span.start).collect()
}

/// Case-insensitive longest-match of named vaccine surfaces. Among overlapping
/// candidates the one covering more pieces wins; ties go to the leftmost.
/// Schedule-point entries are not matched here.
pub fn detect_named(text: &str, tokens: &[Token], lexicon: &Lexicon) -> Vec<NamedMatch> {
    // (token index, piece) for every word piece; boundaries and fractions split runs
    let mut runs: Vec<Vec<(usize, &Piece)>> = vec![Vec::new()];
    for (ti, tok) in tokens.iter().enumerate() {
        if tok.kind != TokenKind::Word {
            runs.push(Vec::new());
            continue;
        }
        let run = runs.last_mut().expect("runs never empty");
        run.extend(tok.pieces.iter().map(|p| (ti, p)));
    }

    let max_len = lexicon.max_surface_fold_len();
    let mut candidates: Vec<(usize, usize, usize, &VaccineEntry)> = Vec::new(); // (run, start, end, entry)
    for (ri, run) in runs.iter().enumerate() {
        for start in 0..run.len() {
            let mut key = String::new();
            for (end, (_, piece)) in run.iter().enumerate().skip(start) {
                key.push_str(&piece.folded);
                if key.chars().count() > max_len {
                    break;
                }
                if let Some(entry) = lexicon.entry_for_fold(&key) {
                    if entry.kind != EntryKind::SchedulePoint {
                        candidates.push((ri, start, end + 1, entry));
                    }
                }
            }
        }
    }

    candidates.sort_by(|a, b| (b.2 - b.1).cmp(&(a.2 - a.1)).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut chosen: Vec<(usize, usize, usize, &VaccineEntry)> = Vec::new();
    for c in candidates {
        let overlaps = chosen.iter().any(|k| k.0 == c.0 && c.1 < k.2 && k.1 < c.2);
        if !overlaps {
            chosen.push(c);
        }
    }
    chosen.sort_by_key(|c| (c.0, c.1));

    chosen
        .into_iter()
        .map(|(ri, start, end, entry)| {
            let run = &runs[ri];
            let span = Span::new(run[start].1.start, run[end - 1].1.end);
            NamedMatch {
                canonical_id: entry.canonical_id.clone(),
                surface: char_slice(text, span),
                span,
                tokens: run[start].0..run[end - 1].0 + 1,
            }
        })
        .collect()
}

/// True when `a` and `b` differ by exactly one insertion, deletion or substitution.
fn one_edit_apart(a: &str, b: &str) -> bool {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    match long.len() - short.len() {
        0 => short.iter().zip(long.iter()).filter(|(x, y)| x != y).count() == 1,
        1 => {
            let prefix = short.iter().zip(long.iter()).take_while(|(x, y)| x == y).count();
            short[prefix..] == long[prefix + 1..]
        }
        _ => false,
    }
}

/// Vaccination mentions without a vaccine name: generic triggers (exact, or one edit
/// away for longer triggers) and injection words away from non-vaccine context.
pub fn detect_generic(text: &str, tokens: &[Token], lexicon: &Lexicon, config: &RuleConfig) -> Vec<GenericMatch> {
    let words = Words::new(tokens);
    let mut out = Vec::new();
    for (ti, tok) in tokens.iter().enumerate() {
        if tok.kind != TokenKind::Word {
            continue;
        }
        for piece in &tok.pieces {
            let key = piece.folded.as_str();
            let hit = if lexicon.generic_triggers().contains(key) {
                Some((key.to_string(), false))
            } else if lexicon.injection_words().contains(key) {
                let w = words.word_of_token[ti].expect("word token");
                let blocked = words.around(w, config.context_window).any(|o| {
                    lexicon
                        .non_vaccine_context()
                        .contains(&tokens[words.token_idx[o]].folded)
                });
                (!blocked).then(|| (key.to_string(), false))
            } else if config.fuzzy_generic && lexicon.entry_for_fold(key).is_none() {
                lexicon
                    .generic_triggers()
                    .iter()
                    .find(|t| t.chars().count() >= config.fuzzy_min_len && one_edit_apart(t, key))
                    .map(|t| (t.clone(), true))
            } else {
                None
            };
            if let Some((trigger, fuzzy)) = hit {
                let span = Span::new(piece.start, piece.end);
                out.push(GenericMatch {
                    surface: char_slice(text, span),
                    trigger,
                    span,
                    tokens: ti..ti + 1,
                    fuzzy,
                });
            }
        }
    }
    out
}

/// Drops matches with a future cue among the preceding `cue_window` words of the
/// same sentence ("due for flu vaccine"). Cue exclusions such as "due to" do not count.
pub fn future_filter<M: Located>(matches: Vec<M>, tokens: &[Token], lexicon: &Lexicon, config: &RuleConfig) -> Vec<M> {
    let words = Words::new(tokens);
    let folded = words.folded();
    matches
        .into_iter()
        .filter(|m| {
            let Some(first) = words.word_of_token[m.tokens().start] else {
                return true;
            };
            !words.before(first, config.cue_window).any(|k| {
                lexicon.future_cues().iter().any(|c| c.matches_at(&folded, k))
                    && !lexicon.cue_exclusions().iter().any(|x| x.matches_at(&folded, k))
            })
        })
        .collect()
}

/// Refines an unnamed vaccination to a schedule point. Returns the entry and the span
/// that justified it.
pub fn schedule_point<'l>(
    note: &TriageNote,
    tokens: &[Token],
    generic: &GenericMatch,
    lexicon: &'l Lexicon,
    config: &RuleConfig,
) -> Option<(&'l VaccineEntry, Span)> {
    let words = Words::new(tokens);
    let w = words.word_of_token[generic.tokens.start]?;
    let trigger_tok = &tokens[generic.tokens.start];
    let trigger_is_first_piece = trigger_tok.pieces.first().map(|p| p.start) == Some(generic.span.start);

    // "6wo vaccinations", "12 month imms"
    if trigger_is_first_piece {
        let before = words.before(w, 2);
        let preceding: Vec<&Token> = before.clone().map(|i| &tokens[words.token_idx[i]]).collect();
        let mut tries: Vec<(String, usize)> = Vec::new();
        if let Some(last) = preceding.last() {
            tries.push((last.lower.clone(), last.start));
        }
        if preceding.len() == 2 {
            tries.push((
                format!("{} {}", preceding[0].lower, preceding[1].lower),
                preceding[0].start,
            ));
        }
        for (phrase, start) in tries {
            if let Some(entry) = AgeQuantity::parse(&phrase).and_then(|q| lexicon.schedule_point_for(q)) {
                return Some((entry, Span::new(start, generic.span.end)));
            }
        }
    }

    // patient age near a schedule point, and the vaccination already happened
    let folded = words.folded();
    let occurred = words
        .sentence_words(w)
        .any(|k| lexicon.past_cues().iter().any(|c| c.matches_at(&folded, k)));
    if !occurred {
        return None;
    }
    let age_weeks = AgeQuantity::from_months(note.total_months()).weeks();
    lexicon
        .entries()
        .iter()
        .filter_map(|e| e.schedule_age.map(|a| (e, (a.weeks() - age_weeks).abs())))
        .filter(|(_, d)| *d <= config.schedule_tolerance_weeks)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(e, _)| (e, generic.span))
}

/// Rule-based extraction for one note.
pub fn extract(note: &TriageNote, lexicon: &Lexicon, config: &RuleConfig) -> ExtractionResult {
    let tokens = normalize_text(&note.text);
    let named = future_filter(detect_named(&note.text, &tokens, lexicon), &tokens, lexicon, config);
    if let Some(m) = named.into_iter().next() {
        let mut r = ExtractionResult::new(
            VaccineLabel::Named {
                canonical_id: m.canonical_id,
                surface: m.surface,
            },
            Engine::Rules,
        );
        r.matched_span = Some(m.span);
        return r;
    }

    let generic = future_filter(
        detect_generic(&note.text, &tokens, lexicon, config),
        &tokens,
        lexicon,
        config,
    );
    if generic.is_empty() {
        return ExtractionResult::new(VaccineLabel::No, Engine::Rules);
    }
    if let Some((entry, span)) = generic
        .iter()
        .find_map(|g| schedule_point(note, &tokens, g, lexicon, config))
    {
        let mut r = ExtractionResult::new(
            VaccineLabel::Named {
                canonical_id: entry.canonical_id.clone(),
                surface: char_slice(&note.text, span),
            },
            Engine::Rules,
        );
        r.matched_span = Some(span);
        return r;
    }
    let mut r = ExtractionResult::new(VaccineLabel::Unspecified, Engine::Rules);
    r.matched_span = Some(generic[0].span);
    r
}
