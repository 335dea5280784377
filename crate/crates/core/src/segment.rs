//! Lossless sentence segmentation for clinical notes.
//!
//! A sentence ends at `.`, `!` or `?` (plus any closing quotes or brackets)
//! followed by whitespace, unless the word before the period is a known
//! abbreviation or a single-letter initial. Line breaks always end a unit,
//! and list markers (`- `, `* `, `• `, `1. `, `1) `) are treated as
//! separators so each bullet becomes its own unit.

use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot segment empty text")]
pub struct EmptyText;

const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "jr.", "sr.", "vs.", "e.g.", "i.e.", "approx.", "b.i.d.",
    "t.i.d.", "q.i.d.", "q.d.", "q.h.s.", "p.o.", "p.r.n.", "h.s.", "a.m.", "p.m.", "no.", "pt.", "hx.", "dx.",
    "tx.", "sx.", "yr.", "yrs.", "mo.", "mos.", "wk.", "wks.", "min.", "fig.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201D}', '\u{2019}'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    /// Byte range of `text` within the source.
    pub span: Range<usize>,
}

pub fn segment_sentences(text: &str) -> Result<Vec<Sentence>, EmptyText> {
    if text.trim().is_empty() {
        return Err(EmptyText);
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        segment_line(body, offset, &mut out);
        offset += line.len();
    }
    Ok(out
        .into_iter()
        .map(|span| Sentence {
            text: text[span.clone()].to_string(),
            span,
        })
        .collect())
}

/// Text between consecutive sentences: `sentences.len() + 1` pieces.
pub fn separators<'a>(text: &'a str, sentences: &[Sentence]) -> Vec<&'a str> {
    let mut gaps = Vec::with_capacity(sentences.len() + 1);
    let mut cursor = 0;
    for s in sentences {
        gaps.push(&text[cursor..s.span.start]);
        cursor = s.span.end;
    }
    gaps.push(&text[cursor..]);
    gaps
}

/// Interleaves separators and sentences back into the original text.
pub fn reconstruct(sentences: &[Sentence], separators: &[&str]) -> String {
    let mut out = String::new();
    for (gap, s) in separators.iter().zip(sentences) {
        out.push_str(gap);
        out.push_str(&s.text);
    }
    if let Some(last) = separators.get(sentences.len()) {
        out.push_str(last);
    }
    out
}

fn list_marker_len(s: &str) -> usize {
    for marker in ["- ", "* ", "• ", "+ "] {
        if s.starts_with(marker) {
            return marker.len();
        }
    }
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits <= 3 {
        let rest = &s[digits..];
        if rest.starts_with(". ") || rest.starts_with(") ") {
            return digits + 2;
        }
    }
    0
}

fn segment_line(line: &str, base: usize, out: &mut Vec<Range<usize>>) {
    let indent = line.len() - line.trim_start().len();
    let mut start = indent + list_marker_len(&line[indent..]);
    // Marker followed by extra spaces.
    start += line[start..].len() - line[start..].trim_start().len();

    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if pos < start || !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map_or(line.len(), |(p, _)| *p);
        let at_break = j == chars.len() || chars[j].1.is_whitespace();
        if at_break && !(c == '.' && is_abbreviation(&line[start..pos + 1])) {
            push_span(line, base, start, end, out);
            start = end + line[end..].len() - line[end..].trim_start().len();
        }
        i = j.max(i + 1);
    }
    if start < line.len() {
        push_span(line, base, start, line.len(), out);
    }
}

fn push_span(line: &str, base: usize, start: usize, end: usize, out: &mut Vec<Range<usize>>) {
    let piece = line[start..end].trim_end();
    if !piece.is_empty() {
        out.push(base + start..base + start + piece.len());
    }
}

/// Whether the last word of `prefix` (which ends in a period) is an
/// abbreviation or an initial.
fn is_abbreviation(prefix: &str) -> bool {
    let word = prefix
        .rsplit(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or(prefix);
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    let stem = &word[..word.len() - 1];
    let mut letters = stem.chars();
    matches!((letters.next(), letters.next()), (Some(ch), None) if ch.is_alphabetic() && ch.is_uppercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(t: &str) -> Vec<String> {
        segment_sentences(t).unwrap().into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn two_sentences() {
        assert_eq!(
            texts("Patient reports memory loss. Gait is unsteady."),
            vec!["Patient reports memory loss.", "Gait is unsteady."]
        );
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(texts("Dr. Smith reviewed labs."), vec!["Dr. Smith reviewed labs."]);
        assert_eq!(
            texts("Donepezil 5 mg b.i.d. with meals. Recheck in 3 mos. next visit."),
            vec!["Donepezil 5 mg b.i.d. with meals.", "Recheck in 3 mos. next visit."]
        );
        assert_eq!(texts("Seen by J. Doe today."), vec!["Seen by J. Doe today."]);
        assert_eq!(texts("Temp 98.6 today. Stable."), vec!["Temp 98.6 today.", "Stable."]);
    }

    #[test]
    fn bulleted_list_items() {
        let note = "Objective:\n- Vital signs stable.\n- Gait slightly unsteady\n- MMSE 26/30.\n";
        assert_eq!(
            texts(note),
            vec!["Objective:", "Vital signs stable.", "Gait slightly unsteady", "MMSE 26/30."]
        );
        let numbered = "1. Encourage exercise.\n2) Refer to neurology.";
        assert_eq!(texts(numbered), vec!["Encourage exercise.", "Refer to neurology."]);
    }

    #[test]
    fn quotes_and_questions() {
        assert_eq!(
            texts("She asked \"Where am I?\" He was unsure!"),
            vec!["She asked \"Where am I?\"", "He was unsure!"]
        );
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(segment_sentences(""), Err(EmptyText));
        assert_eq!(segment_sentences(" \n\t"), Err(EmptyText));
    }

    #[test]
    fn reconstruction_of_note() {
        let note = "Subjective:\r\n  Pt. reports forgetfulness.  Daughter concerned.\n\n- BP 150/95.\n";
        let s = segment_sentences(note).unwrap();
        let gaps = separators(note, &s);
        assert_eq!(reconstruct(&s, &gaps), note);
        for g in gaps {
            assert!(g.chars().all(|c| c.is_whitespace() || "-*•+.)0123456789".contains(c)), "{g:?}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segmentation_is_lossless(text in "[A-Za-z .!?\\-*\n0-9()\"]{1,200}") {
                prop_assume!(!text.trim().is_empty());
                let s = segment_sentences(&text).unwrap();
                let gaps = separators(&text, &s);
                prop_assert_eq!(reconstruct(&s, &gaps), text.clone());
                for sentence in &s {
                    prop_assert!(!sentence.text.trim().is_empty());
                    prop_assert_eq!(&text[sentence.span.clone()], sentence.text.as_str());
                }
                for pair in s.windows(2) {
                    prop_assert!(pair[0].span.end <= pair[1].span.start);
                }
            }
        }
    }
}
