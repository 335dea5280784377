//! Deterministic prompt rendering for note generation and sentence annotation.
//!
//! Both templates are fixed text with labelled blocks (`[NAME]` ... `[/NAME]`)
//! so that every slot can be located by a line-oriented parser. Any change to
//! the wording below changes every `prompt_hash`; the golden fixtures under
//! `fixtures/prompts/` catch that.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotator::AnnotationCategory;
use crate::config::DistributionConfig;
use crate::persona::Persona;
use crate::segment::{segment_sentences, Sentence};
use crate::trajectory::NoteSpec;

pub const NOTE_TEMPLATE_VERSION: &str = "note-v1";
pub const ANNOTATION_TEMPLATE_VERSION: &str = "annotation-v1";

/// The shipped five-class labeling protocol.
pub const DEFAULT_GUIDELINE: &str = include_str!("../assets/annotation_guideline.txt");

pub const REDACTED: &str = "[redacted]";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("note '{0}' has no keyword mentions")]
    EmptyMentions(String),
    #[error("note '{note}' belongs to '{note_patient}', not persona '{persona}'")]
    PatientMismatch {
        note: String,
        note_patient: String,
        persona: String,
    },
    #[error("persona '{persona}' has no assignment for factor '{factor}'")]
    MissingAssignment { persona: String, factor: String },
    #[error("note text is empty")]
    EmptyNote,
    #[error("annotation guideline is empty")]
    EmptyGuideline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    NoteGeneration,
    SentenceAnnotation,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::NoteGeneration => "note_generation",
            PromptKind::SentenceAnnotation => "sentence_annotation",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub system_text: String,
    pub user_text: String,
    pub prompt_hash: String,
}

impl PromptBundle {
    pub fn new(kind: PromptKind, system_text: String, user_text: String) -> Self {
        let prompt_hash = prompt_hash(kind, &system_text, &user_text);
        Self {
            kind,
            system_text,
            user_text,
            prompt_hash,
        }
    }

    /// Plain-text form used for golden fixtures.
    pub fn render_fixture(&self) -> String {
        format!(
            "=== kind: {}\n=== prompt_hash: {}\n=== system\n{}\n=== user\n{}",
            self.kind, self.prompt_hash, self.system_text, self.user_text
        )
    }
}

/// SHA-256 over the kind, system text and user text, each prefixed with
/// its byte length. Hex encoded.
pub fn prompt_hash(kind: PromptKind, system_text: &str, user_text: &str) -> String {
    let mut h = Sha256::new();
    for part in [kind.as_str(), system_text, user_text] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

pub mod blocks {
    pub const PATIENT_PROFILE: &str = "PATIENT PROFILE";
    pub const VISIT_CONTEXT: &str = "VISIT CONTEXT";
    pub const REQUIRED_KEYWORDS: &str = "REQUIRED KEYWORDS";
    pub const INSTRUCTIONS: &str = "INSTRUCTIONS";
    pub const GUIDELINE: &str = "GUIDELINE";
    pub const SENTENCES: &str = "SENTENCES";
    pub const RESPONSE_FORMAT: &str = "RESPONSE FORMAT";
    pub const REPAIR: &str = "REPAIR";
}

fn push_block(out: &mut String, name: &str, lines: impl IntoIterator<Item = String>) {
    out.push('[');
    out.push_str(name);
    out.push_str("]\n");
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("[/");
    out.push_str(name);
    out.push_str("]\n");
}

/// Lines strictly between `[name]` and `[/name]`, or `None` if the block is
/// absent or unterminated.
pub fn block_lines<'a>(text: &'a str, name: &str) -> Option<Vec<&'a str>> {
    let open = format!("[{name}]");
    let close = format!("[/{name}]");
    let mut lines = text.lines();
    lines.by_ref().find(|l| *l == open)?;
    let mut body = Vec::new();
    for line in lines {
        if line == close {
            return Some(body);
        }
        body.push(line);
    }
    None
}

const NOTE_SYSTEM: &str = "You are an experienced clinician writing outpatient documentation. \
You produce realistic, clinically plausible notes for a synthetic training corpus. \
Output only the note text.";

const NOTE_INSTRUCTIONS: &[&str] = &[
    "- Structure the note in SOAP format with the headers Subjective, Objective, Assessment and Plan.",
    "- Work every required keyword into a clinically sensible sentence, as many times as indicated. Inflected forms are acceptable.",
    "- Keep the presentation consistent with the disease stage and the time remaining before diagnosis. Do not state that a diagnosis of Alzheimer's disease has been made.",
    "- Draw on the patient profile where it is clinically relevant, such as history, social context and risk factors.",
    "- Write the way a busy clinician does, with abbreviations, domain-specific phrasing, and occasional typos.",
    "- Write every personal name, date, identifier and address as [redacted].",
];

fn years_phrase(year: u8) -> String {
    if year == 1 {
        "1 year before diagnosis".to_string()
    } else {
        format!("{year} years before diagnosis")
    }
}

/// Distinct keywords in first-mention order with their repeat counts.
pub fn keyword_counts(note: &NoteSpec) -> Vec<(&str, usize)> {
    let mut out: Vec<(&str, usize)> = Vec::new();
    for m in &note.mentions {
        match out.iter_mut().find(|(k, _)| *k == m.keyword) {
            Some((_, n)) => *n += 1,
            None => out.push((m.keyword.as_str(), 1)),
        }
    }
    out
}

pub fn keyword_line(keyword: &str, count: usize) -> String {
    if count == 1 {
        format!("- {keyword}")
    } else {
        format!("- {keyword} (mention {count} times)")
    }
}

/// Inverse of [`keyword_line`].
pub fn parse_keyword_line(line: &str) -> Option<(&str, usize)> {
    let body = line.strip_prefix("- ")?;
    if let Some(head) = body.strip_suffix(" times)") {
        if let Some((kw, n)) = head.rsplit_once(" (mention ") {
            if let Ok(n) = n.parse() {
                return Some((kw, n));
            }
        }
    }
    Some((body, 1))
}

pub fn build_note_prompt(
    persona: &Persona,
    note: &NoteSpec,
    cfg: &DistributionConfig,
) -> Result<PromptBundle, PromptError> {
    if note.mentions.is_empty() {
        return Err(PromptError::EmptyMentions(note.note_id.clone()));
    }
    if note.patient_id != persona.patient_id {
        return Err(PromptError::PatientMismatch {
            note: note.note_id.clone(),
            note_patient: note.patient_id.clone(),
            persona: persona.patient_id.clone(),
        });
    }
    let profile = cfg
        .factors
        .iter()
        .map(|f| {
            persona
                .get(&f.name)
                .map(|label| format!("- {}: {label}", f.name))
                .ok_or_else(|| PromptError::MissingAssignment {
                    persona: persona.patient_id.clone(),
                    factor: f.name.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut user = String::from("Write one clinical note for the visit described below.\n\n");
    push_block(&mut user, blocks::PATIENT_PROFILE, profile);
    user.push('\n');
    push_block(
        &mut user,
        blocks::VISIT_CONTEXT,
        [
            format!("- Visit type: {}", note.note_type.display_name()),
            format!("- Timing: {}", years_phrase(note.year_before_dx)),
            format!("- Disease stage: {}", note.stage),
        ],
    );
    user.push('\n');
    push_block(
        &mut user,
        blocks::REQUIRED_KEYWORDS,
        keyword_counts(note).into_iter().map(|(k, n)| keyword_line(k, n)),
    );
    user.push('\n');
    push_block(
        &mut user,
        blocks::INSTRUCTIONS,
        NOTE_INSTRUCTIONS.iter().map(|s| s.to_string()),
    );
    Ok(PromptBundle::new(PromptKind::NoteGeneration, NOTE_SYSTEM.to_string(), user))
}

/// Escapes characters that would collide with block markers or the
/// response schema.
pub fn escape_sentence(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '{' | '}' | '[' | ']' | '<' | '>' | '|' => {
                out.push('\\');
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

pub fn unescape_sentence(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

const ANNOTATION_SYSTEM: &str = "You are a clinical annotator. You label sentences from clinical notes \
with the signs and symptoms defined in the guideline. Follow the guideline exactly and answer only in \
the requested format.";

pub fn sentence_line(index: usize, text: &str) -> String {
    format!("S{index} | {}", escape_sentence(text))
}

/// Inverse of [`sentence_line`].
pub fn parse_sentence_line(line: &str) -> Option<(usize, String)> {
    let rest = line.strip_prefix('S')?;
    let (idx, text) = rest.split_once(" | ")?;
    Some((idx.parse().ok()?, unescape_sentence(text)))
}

pub fn build_annotation_prompt(note_text: &str, guideline: &str) -> Result<PromptBundle, PromptError> {
    let sentences = segment_sentences(note_text).map_err(|_| PromptError::EmptyNote)?;
    build_annotation_prompt_for(&sentences, guideline)
}

/// Annotation prompt over an already segmented note.
pub fn build_annotation_prompt_for(sentences: &[Sentence], guideline: &str) -> Result<PromptBundle, PromptError> {
    if sentences.is_empty() {
        return Err(PromptError::EmptyNote);
    }
    if guideline.trim().is_empty() {
        return Err(PromptError::EmptyGuideline);
    }
    let labels: Vec<&str> = AnnotationCategory::ALL.iter().map(|c| c.as_str()).collect();
    let mut user = String::from(
        "Label each numbered sentence of the clinical note below using the annotation guideline.\n\n",
    );
    push_block(&mut user, blocks::GUIDELINE, guideline.trim_end().lines().map(str::to_string));
    user.push('\n');
    push_block(
        &mut user,
        blocks::SENTENCES,
        sentences.iter().enumerate().map(|(i, s)| sentence_line(i, &s.text)),
    );
    user.push('\n');
    push_block(
        &mut user,
        blocks::RESPONSE_FORMAT,
        [
            "Reply with exactly one line per sentence, in order, and nothing else:".to_string(),
            "S<index>: <label>, <label>, ...".to_string(),
            "S<index>: none".to_string(),
            format!("Allowed labels: {}", labels.join(", ")),
            "A sentence may carry several labels. Use none when no class applies.".to_string(),
            "Sentence text is escaped: a backslash precedes any of \\ { } [ ] < > | and line breaks appear as \\n."
                .to_string(),
        ],
    );
    Ok(PromptBundle::new(
        PromptKind::SentenceAnnotation,
        ANNOTATION_SYSTEM.to_string(),
        user,
    ))
}

/// Follow-up prompt after an unparseable annotation response.
pub fn build_repair_prompt(original: &PromptBundle, problem: &str) -> PromptBundle {
    let mut user = original.user_text.clone();
    user.push('\n');
    push_block(
        &mut user,
        blocks::REPAIR,
        [
            format!("Your previous reply could not be parsed: {}", problem.replace('\n', " ")),
            "Reply again using only the response format above, one line for every sentence.".to_string(),
        ],
    );
    PromptBundle::new(original.kind, original.system_text.clone(), user)
}
