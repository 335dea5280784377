//! Sentence-level annotation of generated notes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{FIRST_YEAR, LAST_YEAR};
use crate::dataset::SyntheticNote;
use crate::gateway::{run_bounded, Gateway, GatewayError, GenerationRequest};
use crate::config::GenerationParams;
use crate::prompt::{build_annotation_prompt_for, build_repair_prompt, PromptError};
use crate::segment::segment_sentences;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationCategory {
    CognitiveImpairment,
    ConcernByOthers,
    RequiresAssistance,
    PhysiologicalChanges,
    NeuropsychiatricSymptoms,
}

impl AnnotationCategory {
    pub const ALL: [AnnotationCategory; 5] = [
        AnnotationCategory::CognitiveImpairment,
        AnnotationCategory::ConcernByOthers,
        AnnotationCategory::RequiresAssistance,
        AnnotationCategory::PhysiologicalChanges,
        AnnotationCategory::NeuropsychiatricSymptoms,
    ];

    /// Order used by [`project_single_label`]: the most specific signal wins.
    pub const PROJECTION_PRIORITY: [AnnotationCategory; 5] = [
        AnnotationCategory::ConcernByOthers,
        AnnotationCategory::RequiresAssistance,
        AnnotationCategory::NeuropsychiatricSymptoms,
        AnnotationCategory::PhysiologicalChanges,
        AnnotationCategory::CognitiveImpairment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationCategory::CognitiveImpairment => "cognitive_impairment",
            AnnotationCategory::ConcernByOthers => "concern_by_others",
            AnnotationCategory::RequiresAssistance => "requires_assistance",
            AnnotationCategory::PhysiologicalChanges => "physiological_changes",
            AnnotationCategory::NeuropsychiatricSymptoms => "neuropsychiatric_symptoms",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for AnnotationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Collapses a label set to one class for multi-class exports.
pub fn project_single_label(labels: &BTreeSet<AnnotationCategory>) -> Option<AnnotationCategory> {
    AnnotationCategory::PROJECTION_PRIORITY
        .into_iter()
        .find(|c| labels.contains(c))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSentence {
    pub sentence_id: String,
    pub note_id: String,
    pub patient_id: String,
    pub year_before_dx: u8,
    pub sentence_text: String,
    pub labels: BTreeSet<AnnotationCategory>,
    /// True when `labels` is empty.
    pub negative: bool,
}

pub fn sentence_id(note_id: &str, index: usize) -> String {
    format!("{note_id}-S{index:03}")
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("note '{0}' has no text")]
    EmptyNote(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("annotating note '{note_id}': {source}")]
    Gateway {
        note_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("annotation of note '{note_id}' references sentence S{index}, but the note has {count} sentence(s)")]
    IndexOutOfRange { note_id: String, index: usize, count: usize },
}

/// A sentence that could not be labelled after the repair retry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationIssue {
    pub note_id: String,
    pub sentence_id: String,
    pub sentence_index: usize,
    pub sentence_text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoteAnnotation {
    pub sentences: Vec<LabeledSentence>,
    pub issues: Vec<AnnotationIssue>,
}

type ParsedLabels = Vec<Result<BTreeSet<AnnotationCategory>, String>>;

/// Parses `S<i>: label, label` / `S<i>: none` lines. Per-sentence problems
/// are returned in place; an index past `count` is an error for the whole
/// response.
pub fn parse_annotation_response(text: &str, count: usize) -> Result<ParsedLabels, (usize, String)> {
    let mut slots: Vec<Option<Result<BTreeSet<AnnotationCategory>, String>>> = vec![None; count];
    let mut stray = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .strip_prefix('S')
            .and_then(|r| r.split_once(':'))
            .and_then(|(idx, rest)| idx.trim().parse::<usize>().ok().map(|i| (i, rest.trim())));
        let Some((index, rest)) = parsed else {
            stray.push(line.to_string());
            continue;
        };
        if index >= count {
            return Err((index, line.to_string()));
        }
        let labels = if rest.eq_ignore_ascii_case("none") {
            Ok(BTreeSet::new())
        } else {
            rest.split(',')
                .map(|l| {
                    let l = l.trim();
                    AnnotationCategory::parse(l).ok_or_else(|| format!("unknown label '{l}'"))
                })
                .collect()
        };
        slots[index] = Some(match &slots[index] {
            Some(_) => Err(format!("sentence S{index} answered more than once")),
            None => labels,
        });
    }
    Ok(slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.unwrap_or_else(|| {
                Err(if stray.is_empty() {
                    format!("no answer for S{i}")
                } else {
                    format!("no answer for S{i}; unreadable lines: {}", stray.join(" / "))
                })
            })
        })
        .collect())
}

fn problem_summary(parsed: &ParsedLabels) -> Option<String> {
    let problems: Vec<&str> = parsed.iter().filter_map(|r| r.as_ref().err().map(String::as_str)).collect();
    (!problems.is_empty()).then(|| problems.join("; "))
}

pub fn annotate_note(
    note: &SyntheticNote,
    gateway: &Gateway,
    guideline: &str,
    params: &GenerationParams,
) -> Result<NoteAnnotation, AnnotateError> {
    let sentences = segment_sentences(&note.text).map_err(|_| AnnotateError::EmptyNote(note.note_id.clone()))?;
    let bundle = build_annotation_prompt_for(&sentences, guideline)?;
    let count = sentences.len();
    let ask = |bundle, suffix: &str| -> Result<ParsedLabels, AnnotateError> {
        let req = GenerationRequest::new(format!("{}/annotate{suffix}", note.note_id), bundle, params);
        let reply = gateway.generate(&req).map_err(|source| AnnotateError::Gateway {
            note_id: note.note_id.clone(),
            source,
        })?;
        parse_annotation_response(&reply.text, count).map_err(|(index, _)| AnnotateError::IndexOutOfRange {
            note_id: note.note_id.clone(),
            index,
            count,
        })
    };

    let mut parsed = ask(bundle.clone(), "")?;
    if let Some(problem) = problem_summary(&parsed) {
        tracing::debug!(note = %note.note_id, %problem, "retrying annotation with repair prompt");
        let repaired = ask(build_repair_prompt(&bundle, &problem), "/repair")?;
        for (slot, retry) in parsed.iter_mut().zip(repaired) {
            if slot.is_err() {
                *slot = retry;
            }
        }
    }

    let mut out = NoteAnnotation::default();
    for (i, (sentence, labels)) in sentences.into_iter().zip(parsed).enumerate() {
        let id = sentence_id(&note.note_id, i);
        match labels {
            Ok(labels) => out.sentences.push(LabeledSentence {
                sentence_id: id,
                note_id: note.note_id.clone(),
                patient_id: note.patient_id.clone(),
                year_before_dx: note.year_before_dx,
                sentence_text: sentence.text,
                negative: labels.is_empty(),
                labels,
            }),
            Err(reason) => out.issues.push(AnnotationIssue {
                note_id: note.note_id.clone(),
                sentence_id: id,
                sentence_index: i,
                sentence_text: sentence.text,
                reason,
            }),
        }
    }
    Ok(out)
}

/// Annotates `notes` with at most `concurrency` notes in flight; outcomes
/// are returned in input order.
pub fn annotate_notes(
    notes: &[SyntheticNote],
    gateway: &Gateway,
    guideline: &str,
    params: &GenerationParams,
    concurrency: usize,
) -> Vec<Result<NoteAnnotation, AnnotateError>> {
    run_bounded(notes, concurrency, |_, note| annotate_note(note, gateway, guideline, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Schema,
    ClosedSet,
    Reference,
    EmptyText,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Zero-based record position.
    pub record: usize,
    pub sentence_id: Option<String>,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl LabelValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// What a sentence record may point at: note id to patient id.
pub type NoteIndex = BTreeMap<String, String>;

pub fn note_index(notes: &[SyntheticNote]) -> NoteIndex {
    notes.iter().map(|n| (n.note_id.clone(), n.patient_id.clone())).collect()
}

/// Checks raw sentence records. Reference checks run only when `notes` is
/// given.
pub fn validate_labeled(records: &[Value], notes: Option<&NoteIndex>) -> LabelValidationReport {
    const FIELDS: [&str; 7] = [
        "sentence_id",
        "note_id",
        "patient_id",
        "year_before_dx",
        "sentence_text",
        "labels",
        "negative",
    ];
    let mut report = LabelValidationReport {
        records: records.len(),
        violations: Vec::new(),
    };
    let mut seen: HashSet<&str> = HashSet::new();
    for (record, value) in records.iter().enumerate() {
        let sid = value.get("sentence_id").and_then(Value::as_str);
        let mut flag = |kind, detail: String| {
            report.violations.push(Violation {
                record,
                sentence_id: sid.map(str::to_string),
                kind,
                detail,
            })
        };
        let Some(obj) = value.as_object() else {
            flag(ViolationKind::Schema, "record is not an object".into());
            continue;
        };
        for key in obj.keys() {
            if !FIELDS.contains(&key.as_str()) {
                flag(ViolationKind::Schema, format!("unexpected field '{key}'"));
            }
        }
        let text_field = |k: &str| obj.get(k).and_then(Value::as_str);
        for k in ["sentence_id", "note_id", "patient_id", "sentence_text"] {
            if text_field(k).is_none() {
                flag(ViolationKind::Schema, format!("missing or non-string '{k}'"));
            }
        }
        match obj.get("year_before_dx").and_then(Value::as_u64) {
            Some(y) if (u64::from(FIRST_YEAR)..=u64::from(LAST_YEAR)).contains(&y) => {}
            _ => flag(ViolationKind::Schema, "year_before_dx must be an integer in 1-10".into()),
        }
        if let Some(text) = text_field("sentence_text") {
            if text.trim().is_empty() {
                flag(ViolationKind::EmptyText, "sentence_text is empty".into());
            }
        }
        let mut label_count = None;
        match obj.get("labels").and_then(Value::as_array) {
            None => flag(ViolationKind::Schema, "missing or non-array 'labels'".into()),
            Some(labels) => {
                label_count = Some(labels.len());
                for l in labels {
                    match l.as_str() {
                        Some(s) if AnnotationCategory::parse(s).is_some() => {}
                        Some(s) => flag(ViolationKind::ClosedSet, format!("label '{s}' is not one of the five categories")),
                        None => flag(ViolationKind::ClosedSet, format!("label {l} is not a string")),
                    }
                }
            }
        }
        match (obj.get("negative").and_then(Value::as_bool), label_count) {
            (None, _) => flag(ViolationKind::Schema, "missing or non-boolean 'negative'".into()),
            (Some(neg), Some(n)) if neg != (n == 0) => {
                flag(ViolationKind::Schema, "negative flag disagrees with labels".into())
            }
            _ => {}
        }
        if let Some(id) = sid {
            if !seen.insert(id) {
                flag(ViolationKind::DuplicateId, format!("sentence_id '{id}' repeats"));
            }
        }
        if let (Some(index), Some(note_id)) = (notes, text_field("note_id")) {
            match index.get(note_id) {
                None => flag(ViolationKind::Reference, format!("note '{note_id}' does not exist")),
                Some(pid) if Some(pid.as_str()) != text_field("patient_id") => flag(
                    ViolationKind::Reference,
                    format!("note '{note_id}' belongs to '{pid}'"),
                ),
                Some(_) => {}
            }
        }
    }
    report
}

/// [`validate_labeled`] over typed records.
pub fn validate_records(records: &[LabeledSentence], notes: Option<&NoteIndex>) -> LabelValidationReport {
    let values: Vec<Value> = records
        .iter()
        .map(|r| serde_json::to_value(r).expect("record serializes"))
        .collect();
    validate_labeled(&values, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NoteType;
    use crate::gateway::{Backend, BackendError, MockBackend, RetryPolicy};
    use crate::prompt::DEFAULT_GUIDELINE;
    use serde_json::json;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    fn note(text: &str) -> SyntheticNote {
        SyntheticNote {
            note_id: "SYN-0000000-N000".into(),
            patient_id: "SYN-0000000".into(),
            year_before_dx: 3,
            note_type: NoteType::PrimaryCare,
            stage: "Mild dementia stage".into(),
            prompt_hash: "0".repeat(64),
            backend_id: "mock".into(),
            text: text.into(),
        }
    }

    fn gateway(backend: impl Backend + 'static) -> Gateway {
        Gateway::new(
            Arc::new(backend),
            RetryPolicy {
                max_retries: 1,
                base_delay: Duration::from_millis(1),
                max_delay: Duration::from_millis(2),
            },
        )
    }

    fn labels_of(out: &NoteAnnotation) -> Vec<Vec<AnnotationCategory>> {
        out.sentences.iter().map(|s| s.labels.iter().copied().collect()).collect()
    }

    #[test]
    fn mock_annotation_examples() {
        let gw = gateway(MockBackend::default());
        let text = "Memory loss.\nDaughter reports that she repeatedly asks the same question.\nVital signs stable.";
        let out = annotate_note(&note(text), &gw, DEFAULT_GUIDELINE, &GenerationParams::default()).unwrap();
        assert!(out.issues.is_empty());
        assert_eq!(
            labels_of(&out),
            vec![
                vec![AnnotationCategory::CognitiveImpairment],
                vec![AnnotationCategory::ConcernByOthers],
                vec![],
            ]
        );
        assert!(out.sentences[2].negative);
        assert_eq!(out.sentences[1].sentence_id, "SYN-0000000-N000-S001");
        assert_eq!(out.sentences[0].year_before_dx, 3);
        assert!(validate_records(&out.sentences, None).is_valid());
    }

    #[test]
    fn parse_response_shapes() {
        let parsed = parse_annotation_response("S0: none\nS1: cognitive_impairment, concern_by_others\n", 2).unwrap();
        assert_eq!(parsed[0], Ok(BTreeSet::new()));
        assert_eq!(parsed[1].as_ref().unwrap().len(), 2);
        let parsed = parse_annotation_response("S0: diagnostic_test\n", 2).unwrap();
        assert!(parsed[0].is_err());
        assert!(parsed[1].is_err());
        assert_eq!(parse_annotation_response("S5: none", 2), Err((5, "S5: none".into())));
        let dup = parse_annotation_response("S0: none\nS0: none", 1).unwrap();
        assert!(dup[0].is_err());
    }

    /// Returns `first` on the first call and `second` afterwards.
    struct TwoReplies {
        first: String,
        second: String,
        calls: AtomicU32,
    }

    impl Backend for TwoReplies {
        fn id(&self) -> String {
            "two".into()
        }

        fn complete(&self, _: &GenerationRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(if n == 0 { self.first.clone() } else { self.second.clone() })
        }
    }

    #[test]
    fn repair_retry_recovers() {
        let gw = gateway(TwoReplies {
            first: "garbage".into(),
            second: "S0: cognitive_impairment\nS1: none".into(),
            calls: AtomicU32::new(0),
        });
        let out = annotate_note(&note("Memory loss. Stable."), &gw, DEFAULT_GUIDELINE, &GenerationParams::default())
            .unwrap();
        assert!(out.issues.is_empty());
        assert_eq!(out.sentences.len(), 2);
    }

    #[test]
    fn failed_sentence_does_not_fail_note() {
        let gw = gateway(TwoReplies {
            first: "S0: cognitive_impairment\nS1: whatever".into(),
            second: "S1: still_wrong".into(),
            calls: AtomicU32::new(0),
        });
        let out = annotate_note(&note("Memory loss. Stable."), &gw, DEFAULT_GUIDELINE, &GenerationParams::default())
            .unwrap();
        assert_eq!(out.sentences.len(), 1);
        assert_eq!(out.issues.len(), 1);
        assert_eq!(out.issues[0].sentence_index, 1);
        assert_eq!(out.issues[0].sentence_id, "SYN-0000000-N000-S001");
    }

    #[test]
    fn out_of_range_index_is_protocol_error() {
        let gw = gateway(TwoReplies {
            first: "S0: none\nS7: none".into(),
            second: String::new(),
            calls: AtomicU32::new(0),
        });
        let err = annotate_note(&note("Stable."), &gw, DEFAULT_GUIDELINE, &GenerationParams::default()).unwrap_err();
        assert!(matches!(err, AnnotateError::IndexOutOfRange { index: 7, count: 1, .. }));
    }

    #[test]
    fn empty_note_is_rejected() {
        let gw = gateway(MockBackend::default());
        assert!(matches!(
            annotate_note(&note(" "), &gw, DEFAULT_GUIDELINE, &GenerationParams::default()),
            Err(AnnotateError::EmptyNote(_))
        ));
    }

    fn record(id: &str, note_id: &str, labels: Value) -> Value {
        let negative = labels.as_array().is_some_and(|a| a.is_empty());
        json!({
            "sentence_id": id, "note_id": note_id, "patient_id": "SYN-0000000", "year_before_dx": 2,
            "sentence_text": "Memory loss.", "labels": labels, "negative": negative,
        })
    }

    #[test]
    fn validation_findings() {
        let index: NoteIndex = [("N1".to_string(), "SYN-0000000".to_string())].into();
        let good = vec![record("a", "N1", json!(["cognitive_impairment"])), record("b", "N1", json!([]))];
        assert!(validate_labeled(&good, Some(&index)).is_valid());

        let bad = vec![
            record("a", "N1", json!(["diagnostic_test"])),
            record("a", "N1", json!([])),
            record("c", "N9", json!([])),
        ];
        let report = validate_labeled(&bad, Some(&index));
        assert_eq!(report.count(ViolationKind::ClosedSet), 1);
        assert_eq!(report.count(ViolationKind::DuplicateId), 1);
        assert_eq!(report.count(ViolationKind::Reference), 1);
        assert_eq!(report.violations[0].record, 0);

        let mut empty = record("e", "N1", json!([]));
        empty["sentence_text"] = json!("  ");
        assert_eq!(validate_labeled(&[empty], None).count(ViolationKind::EmptyText), 1);
    }

    #[test]
    fn projection_priority() {
        let set = |v: &[AnnotationCategory]| v.iter().copied().collect::<BTreeSet<_>>();
        use AnnotationCategory::*;
        assert_eq!(project_single_label(&set(&[])), None);
        assert_eq!(project_single_label(&set(&[CognitiveImpairment, ConcernByOthers])), Some(ConcernByOthers));
        assert_eq!(
            project_single_label(&set(&[CognitiveImpairment, PhysiologicalChanges])),
            Some(PhysiologicalChanges)
        );
        assert_eq!(project_single_label(&set(&[CognitiveImpairment])), Some(CognitiveImpairment));
    }

    #[test]
    fn category_names_are_stable() {
        let names: Vec<String> = AnnotationCategory::ALL
            .iter()
            .map(|c| serde_json::to_value(c).unwrap().as_str().unwrap().to_string())
            .collect();
        assert_eq!(
            names,
            [
                "cognitive_impairment",
                "concern_by_others",
                "requires_assistance",
                "physiological_changes",
                "neuropsychiatric_symptoms"
            ]
        );
    }
}
