//! Deterministic offline backend.
//!
//! Notes are SOAP skeletons with one sentence per required keyword mention.
//! Annotation labels come from a keyword-to-category lookup plus a fixed set
//! of informant cue words, so label counts over mock output are computable
//! from the prompts alone.

use std::collections::BTreeSet;

use super::{Backend, BackendError, GenerationRequest};
use crate::annotator::AnnotationCategory;
use crate::config::{default_config, KeywordLexicon, LexiconCategory};
use crate::prompt::{block_lines, blocks, parse_keyword_line, parse_sentence_line, PromptBundle, PromptKind};

/// Whole words that mark a sentence as reported by someone other than the
/// clinician.
pub const INFORMANT_CUES: &[&str] = &[
    "family", "daughter", "son", "wife", "husband", "spouse", "caregiver", "friend", "neighbor", "sister",
    "brother",
];

const MENTION_TEMPLATES: [(&str, &str); 4] = [
    ("Patient reports ", "."),
    ("Family reports concern about ", "."),
    ("Clinician notes ", " on review."),
    ("Ongoing ", " was discussed."),
];

const OBJECTIVE: &str = "Vital signs stable.";
const ASSESSMENT: &str = "Findings reviewed with the patient.";
const PLAN: &str = "Return to clinic as scheduled.";

fn annotation_category(c: LexiconCategory) -> AnnotationCategory {
    match c {
        LexiconCategory::SpeechLanguage | LexiconCategory::Memory | LexiconCategory::LearningPerception => {
            AnnotationCategory::CognitiveImpairment
        }
        LexiconCategory::AssistanceNeeded => AnnotationCategory::RequiresAssistance,
        LexiconCategory::PhysiologicalChanges => AnnotationCategory::PhysiologicalChanges,
        LexiconCategory::NeuropsychiatricSymptoms => AnnotationCategory::NeuropsychiatricSymptoms,
    }
}

fn at_word_start(text: &str, i: usize) -> bool {
    text[..i].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
}

fn at_word_end(text: &str, i: usize) -> bool {
    text[i..].chars().next().is_none_or(|c| !c.is_alphanumeric())
}

/// Labels the mock annotator assigns to `sentence`: the category of every
/// lexicon keyword that starts a word (case-insensitive), plus
/// `concern_by_others` when an informant cue appears as a whole word.
pub fn mock_labels(sentence: &str, lexicon: &KeywordLexicon) -> BTreeSet<AnnotationCategory> {
    let lower = sentence.to_lowercase();
    let mut labels = BTreeSet::new();
    for (category, keywords) in &lexicon.keywords {
        let hit = keywords.iter().any(|kw| {
            let kw = kw.to_lowercase();
            lower.match_indices(&kw).any(|(i, _)| at_word_start(&lower, i))
        });
        if hit {
            labels.insert(annotation_category(*category));
        }
    }
    let cue = INFORMANT_CUES.iter().any(|cue| {
        lower
            .match_indices(cue)
            .any(|(i, m)| at_word_start(&lower, i) && at_word_end(&lower, i + m.len()))
    });
    if cue {
        labels.insert(AnnotationCategory::ConcernByOthers);
    }
    labels
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    lexicon: KeywordLexicon,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(&default_config().lexicon)
    }
}

impl MockBackend {
    pub fn new(lexicon: &KeywordLexicon) -> Self {
        Self {
            lexicon: lexicon.clone(),
        }
    }

    pub fn mock_generate(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        match bundle.kind {
            PromptKind::NoteGeneration => mock_note(bundle),
            PromptKind::SentenceAnnotation => self.mock_annotation(bundle),
        }
    }

    fn mock_annotation(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        let lines = block_lines(&bundle.user_text, blocks::SENTENCES)
            .ok_or_else(|| BackendError::Protocol("annotation prompt has no sentence block".into()))?;
        let mut out = String::new();
        for line in lines {
            let (index, text) = parse_sentence_line(line)
                .ok_or_else(|| BackendError::Protocol(format!("unreadable sentence line '{line}'")))?;
            let labels = mock_labels(&text, &self.lexicon);
            let rendered = if labels.is_empty() {
                "none".to_string()
            } else {
                labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ")
            };
            out.push_str(&format!("S{index}: {rendered}\n"));
        }
        Ok(out)
    }
}

fn mock_note(bundle: &PromptBundle) -> Result<String, BackendError> {
    let lines = block_lines(&bundle.user_text, blocks::REQUIRED_KEYWORDS)
        .ok_or_else(|| BackendError::Protocol("note prompt has no keyword block".into()))?;
    let mut note = String::from("Subjective:\n");
    let mut n = 0;
    for line in lines {
        let (keyword, count) =
            parse_keyword_line(line).ok_or_else(|| BackendError::Protocol(format!("unreadable keyword line '{line}'")))?;
        for _ in 0..count {
            let (before, after) = MENTION_TEMPLATES[n % MENTION_TEMPLATES.len()];
            note.push_str(before);
            note.push_str(keyword);
            note.push_str(after);
            note.push('\n');
            n += 1;
        }
    }
    note.push_str(&format!("Objective:\n{OBJECTIVE}\nAssessment:\n{ASSESSMENT}\nPlan:\n{PLAN}\n"));
    Ok(note)
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        self.mock_generate(&req.bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{build_annotation_prompt, DEFAULT_GUIDELINE};
    use crate::segment::segment_sentences;

    fn note_bundle(keywords: &[&str]) -> PromptBundle {
        let mut user = String::from("[REQUIRED KEYWORDS]\n");
        for k in keywords {
            user.push_str(&format!("- {k}\n"));
        }
        user.push_str("[/REQUIRED KEYWORDS]\n");
        PromptBundle::new(PromptKind::NoteGeneration, "s".into(), user)
    }

    #[test]
    fn note_embeds_each_keyword_in_its_own_sentence() {
        let mock = MockBackend::default();
        let bundle = note_bundle(&["forgetfulness", "gait"]);
        let text = mock.mock_generate(&bundle).unwrap();
        for header in ["Subjective:", "Objective:", "Assessment:", "Plan:"] {
            assert!(text.contains(header));
        }
        let sentences = segment_sentences(&text).unwrap();
        for kw in ["forgetfulness", "gait"] {
            assert_eq!(sentences.iter().filter(|s| s.text.contains(kw)).count(), 1);
        }
        assert_eq!(text, mock.mock_generate(&bundle).unwrap());
    }

    #[test]
    fn repeated_keyword_gets_repeated_sentences() {
        let user = "[REQUIRED KEYWORDS]\n- gait (mention 3 times)\n[/REQUIRED KEYWORDS]\n";
        let bundle = PromptBundle::new(PromptKind::NoteGeneration, "s".into(), user.into());
        let text = MockBackend::default().mock_generate(&bundle).unwrap();
        assert_eq!(text.matches("gait").count(), 3);
    }

    #[test]
    fn fixed_text_carries_no_labels() {
        let cfg = default_config();
        for (before, after) in MENTION_TEMPLATES {
            let labels = mock_labels(&format!("{before}{after}"), &cfg.lexicon);
            let expected: BTreeSet<_> = if before.starts_with("Family") {
                [AnnotationCategory::ConcernByOthers].into()
            } else {
                BTreeSet::new()
            };
            assert_eq!(labels, expected, "{before}");
        }
        for fixed in ["Subjective:", "Objective:", "Assessment:", "Plan:", OBJECTIVE, ASSESSMENT, PLAN] {
            assert!(mock_labels(fixed, &cfg.lexicon).is_empty(), "{fixed}");
        }
    }

    #[test]
    fn label_table() {
        let lex = default_config().lexicon;
        let one = |s: &str| mock_labels(s, &lex).into_iter().collect::<Vec<_>>();
        assert_eq!(one("Memory loss."), vec![AnnotationCategory::CognitiveImpairment]);
        assert_eq!(one("Vital signs stable."), vec![]);
        assert_eq!(
            one("Daughter reports that she repeatedly asks the same question"),
            vec![AnnotationCategory::ConcernByOthers]
        );
        assert_eq!(one("Unsteady gait noted."), vec![AnnotationCategory::PhysiologicalChanges]);
        assert_eq!(one("Needs help with DRESSING."), vec![AnnotationCategory::RequiresAssistance]);
        assert_eq!(one("Reports chronic apathy."), vec![AnnotationCategory::NeuropsychiatricSymptoms]);
        // Keywords must start a word; cues must be whole words.
        assert_eq!(one("Sonogram unremarkable."), vec![]);
        assert_eq!(one("Regait."), vec![]);
    }

    #[test]
    fn annotation_over_mock_note_matches_table() {
        let mock = MockBackend::default();
        let lex = default_config().lexicon;
        let note = mock
            .mock_generate(&note_bundle(&["forget", "gait", "driving", "apathy", "speech"]))
            .unwrap();
        let bundle = build_annotation_prompt(&note, DEFAULT_GUIDELINE).unwrap();
        let reply = mock.mock_generate(&bundle).unwrap();
        let sentences = segment_sentences(&note).unwrap();
        let lines: Vec<&str> = reply.lines().collect();
        assert_eq!(lines.len(), sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            let labels = mock_labels(&s.text, &lex);
            let rendered = if labels.is_empty() {
                "none".to_string()
            } else {
                labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ")
            };
            assert_eq!(lines[i], format!("S{i}: {rendered}"));
        }
        assert_eq!(lines[2], "S2: concern_by_others, physiological_changes");
    }

    #[test]
    fn missing_blocks_are_protocol_errors() {
        let mock = MockBackend::default();
        let bad = PromptBundle::new(PromptKind::NoteGeneration, "s".into(), "nothing".into());
        assert!(matches!(mock.mock_generate(&bad), Err(BackendError::Protocol(_))));
        let bad = PromptBundle::new(PromptKind::SentenceAnnotation, "s".into(), "nothing".into());
        assert!(matches!(mock.mock_generate(&bad), Err(BackendError::Protocol(_))));
    }
}
