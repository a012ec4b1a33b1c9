//! Tokenizer for triage shorthand.
//!
//! Tokens keep their character offsets. Hyphenated words are one token with
//! several pieces, so "rota-virus" can match both "rotavirus" and "rota virus".
//! Fractions such as "2/7" and slash abbreviations such as "b/g" stay whole.

use crate::lexicon::fold;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    /// Clinical duration shorthand: "2/7" days, "2/52" weeks, "4/12" months.
    Fraction,
    /// Sentence boundary ("." or ";").
    Boundary,
}

/// A hyphen-separated part of a word token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub folded: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Original text, unmodified.
    pub text: String,
    pub lower: String,
    /// Lowercased alphanumerics only; "rota-virus" -> "rotavirus".
    pub folded: String,
    pub kind: TokenKind,
    /// Character offsets into the source text.
    pub start: usize,
    pub end: usize,
    pub pieces: Vec<Piece>,
}

impl Token {
    pub fn is_boundary(&self) -> bool {
        self.kind == TokenKind::Boundary
    }

    /// Equivalent spellings for matching: the token itself, joined, and space-split.
    pub fn fold_variants(&self) -> Vec<String> {
        let mut out = vec![self.lower.clone()];
        if self.pieces.len() > 1 {
            let parts: Vec<&str> = self.lower.split('-').filter(|p| !p.is_empty()).collect();
            out.push(parts.concat());
            out.push(parts.join(" "));
        }
        out
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Splits raw note text into tokens.
pub fn normalize_text(raw: &str) -> Vec<Token> {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '.' || c == ';' {
            tokens.push(Token {
                text: c.to_string(),
                lower: c.to_string(),
                folded: String::new(),
                kind: TokenKind::Boundary,
                start: i,
                end: i + 1,
                pieces: Vec::new(),
            });
            i += 1;
            continue;
        }
        if !is_word_char(c) {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i;
        while end < chars.len() {
            let ch = chars[end];
            if is_word_char(ch) {
                end += 1;
                continue;
            }
            // joiners only count between word characters
            let next_is_word = chars.get(end + 1).is_some_and(|&n| is_word_char(n));
            let prev_is_word = end > start && is_word_char(chars[end - 1]);
            let joins = match ch {
                '-' | '/' => prev_is_word && next_is_word,
                '.' => {
                    prev_is_word
                        && chars[end - 1].is_ascii_digit()
                        && chars.get(end + 1).is_some_and(|n| n.is_ascii_digit())
                }
                _ => false,
            };
            if joins {
                end += 1;
            } else {
                break;
            }
        }
        let text: String = chars[start..end].iter().collect();
        tokens.push(make_word(text, start, end));
        i = end;
    }
    tokens
}

fn make_word(text: String, start: usize, end: usize) -> Token {
    let lower = text.to_lowercase();
    let is_fraction = {
        let mut parts = text.split('/');
        matches!(
            (parts.next(), parts.next(), parts.next()),
            (Some(a), Some(b), None)
                if !a.is_empty() && !b.is_empty()
                    && a.chars().all(|c| c.is_ascii_digit())
                    && b.chars().all(|c| c.is_ascii_digit())
        )
    };
    let mut pieces = Vec::new();
    let mut piece_start = start;
    for (off, ch) in text.chars().enumerate() {
        if ch == '-' {
            push_piece(&mut pieces, &text, piece_start - start, off, piece_start);
            piece_start = start + off + 1;
        }
    }
    push_piece(&mut pieces, &text, piece_start - start, end - start, piece_start);
    Token {
        folded: fold(&text),
        text,
        lower,
        kind: if is_fraction {
            TokenKind::Fraction
        } else {
            TokenKind::Word
        },
        start,
        end,
        pieces,
    }
}

fn push_piece(pieces: &mut Vec<Piece>, text: &str, from: usize, to: usize, abs_start: usize) {
    let s: String = text.chars().skip(from).take(to - from).collect();
    let folded = fold(&s);
    if !folded.is_empty() {
        pieces.push(Piece {
            folded,
            start: abs_start,
            end: abs_start + (to - from),
        });
    }
}
