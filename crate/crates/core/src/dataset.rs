//! JSONL persistence, dataset statistics, matched subsampling and
//! training-set assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotator::{project_single_label, AnnotationCategory, LabeledSentence};
use crate::config::NoteType;
use crate::persona::Persona;
use crate::rng::{derive_seed, sample_without_replacement, shuffle, stream_rng, streams};
use crate::trajectory::VisitPlan;

pub const MANIFEST_SCHEMA: &str = "cohortforge.manifest/v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error(
        "{path}:{line}: found {found} records (written by {found_stage}) where {expected} records \
         (written by {expected_stage}) are required"
    )]
    KindMismatch {
        path: PathBuf,
        line: usize,
        expected: RecordKind,
        expected_stage: &'static str,
        found: RecordKind,
        found_stage: &'static str,
    },
    #[error("target size {target} exceeds the {available} available records")]
    TargetTooLarge { target: usize, available: usize },
    #[error("target size {target} is smaller than the {strata} non-empty categories")]
    TargetTooSmall { target: usize, strata: usize },
    #[error("category '{stratum}' needs {needed} records but only {available} exist")]
    Allocation {
        stratum: String,
        needed: usize,
        available: usize,
    },
    #[error("need {needed} negatives for ratio {ratio} but the pool holds {available}")]
    InsufficientNegatives { needed: usize, available: usize, ratio: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Persona,
    Plan,
    Note,
    LabeledSentence,
}

impl RecordKind {
    pub const ALL: [RecordKind; 4] = [
        RecordKind::Persona,
        RecordKind::Plan,
        RecordKind::Note,
        RecordKind::LabeledSentence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Persona => "persona",
            RecordKind::Plan => "plan",
            RecordKind::Note => "note",
            RecordKind::LabeledSentence => "labeled_sentence",
        }
    }

    /// The pipeline stage that writes this kind.
    pub fn producing_stage(self) -> &'static str {
        match self {
            RecordKind::Persona => "sample-cohort",
            RecordKind::Plan => "plan-visits",
            RecordKind::Note => "generate-notes",
            RecordKind::LabeledSentence => "annotate",
        }
    }

    /// Field that identifies a record of this kind.
    fn marker(self) -> &'static str {
        match self {
            RecordKind::Persona => "assignments",
            RecordKind::Plan => "notes",
            RecordKind::Note => "prompt_hash",
            RecordKind::LabeledSentence => "sentence_text",
        }
    }

    pub fn detect(value: &Value) -> Option<RecordKind> {
        let obj = value.as_object()?;
        Self::ALL.into_iter().find(|k| obj.contains_key(k.marker()))
    }

    pub fn file_name(self) -> &'static str {
        match self {
            RecordKind::Persona => "personas.jsonl",
            RecordKind::Plan => "plans.jsonl",
            RecordKind::Note => "notes.jsonl",
            RecordKind::LabeledSentence => "sentences.jsonl",
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticNote {
    pub note_id: String,
    pub patient_id: String,
    pub year_before_dx: u8,
    pub note_type: NoteType,
    pub stage: String,
    pub prompt_hash: String,
    pub backend_id: String,
    pub text: String,
}

pub trait Record: Serialize + DeserializeOwned {
    const KIND: RecordKind;
}

impl Record for Persona {
    const KIND: RecordKind = RecordKind::Persona;
}

impl Record for VisitPlan {
    const KIND: RecordKind = RecordKind::Plan;
}

impl Record for SyntheticNote {
    const KIND: RecordKind = RecordKind::Note;
}

impl Record for LabeledSentence {
    const KIND: RecordKind = RecordKind::LabeledSentence;
}

/// Writes through a temporary file beside `path`, then renames it into
/// place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), DatasetError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let tmp = builder.tempfile_in(dir).map_err(io_err(dir))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        write(&mut out).map_err(io_err(path))?;
        out.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Serializes `records` one JSON object per line.
pub fn encode_records<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub fn write_records<T: Record>(path: &Path, records: &[T]) -> Result<usize, DatasetError> {
    let bytes = encode_records(records);
    write_atomic(path, |w| w.write_all(&bytes))?;
    Ok(records.len())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads raw JSON lines, checking each against `kind`.
pub fn read_values(path: &Path, kind: RecordKind) -> Result<Vec<Value>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        match RecordKind::detect(&value) {
            Some(found) if found != kind => {
                return Err(DatasetError::KindMismatch {
                    path: path.to_path_buf(),
                    line: line_no,
                    expected: kind,
                    expected_stage: kind.producing_stage(),
                    found,
                    found_stage: found.producing_stage(),
                })
            }
            _ => {}
        }
        out.push(value);
    }
    Ok(out)
}

pub fn read_records<T: Record>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(r) => out.push(r),
            Err(e) => {
                // Name both stages when the line is a different record kind.
                if let Some(found) = serde_json::from_str::<Value>(&line).ok().as_ref().and_then(RecordKind::detect) {
                    if found != T::KIND {
                        return Err(DatasetError::KindMismatch {
                            path: path.to_path_buf(),
                            line: line_no,
                            expected: T::KIND,
                            expected_stage: T::KIND.producing_stage(),
                            found,
                            found_stage: found.producing_stage(),
                        });
                    }
                }
                return Err(DatasetError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub fn count_lines(path: &Path) -> Result<u64, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        if !line.map_err(io_err(path))?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsOptions {
    /// Count each positive sentence once, under its projected label.
    pub unique_sentences: bool,
    /// Add negative sentences to the total as their own row.
    pub include_negatives: bool,
}

pub const NEGATIVE_ROW: &str = "negative";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub counts: BTreeMap<String, u64>,
    pub proportions: BTreeMap<String, f64>,
    pub total: u64,
    pub sentences: u64,
    pub positive_sentences: u64,
    pub negative_sentences: u64,
    pub options: StatsOptions,
}

impl DatasetStats {
    pub fn count(&self, c: AnnotationCategory) -> u64 {
        self.counts.get(c.as_str()).copied().unwrap_or(0)
    }

    /// Fixed-width table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<28}{:>10}{:>12}\n", "category", "count", "proportion");
        for (k, v) in &self.counts {
            out.push_str(&format!("{:<28}{:>10}{:>12.4}\n", k, v, self.proportions[k]));
        }
        out.push_str(&format!("{:<28}{:>10}\n", "total", self.total));
        out
    }
}

pub fn dataset_stats(sentences: &[LabeledSentence], opts: StatsOptions) -> DatasetStats {
    let mut counts: BTreeMap<String, u64> = AnnotationCategory::ALL
        .iter()
        .map(|c| (c.as_str().to_string(), 0))
        .collect();
    let mut negatives = 0;
    for s in sentences {
        if s.labels.is_empty() {
            negatives += 1;
        } else if opts.unique_sentences {
            let label = project_single_label(&s.labels).expect("non-empty labels");
            *counts.get_mut(label.as_str()).expect("category row") += 1;
        } else {
            for l in &s.labels {
                *counts.get_mut(l.as_str()).expect("category row") += 1;
            }
        }
    }
    if opts.include_negatives {
        counts.insert(NEGATIVE_ROW.to_string(), negatives);
    }
    let total: u64 = counts.values().sum();
    let proportions = counts
        .iter()
        .map(|(k, v)| (k.clone(), if total == 0 { 0.0 } else { *v as f64 / total as f64 }))
        .collect();
    DatasetStats {
        counts,
        proportions,
        total,
        sentences: sentences.len() as u64,
        positive_sentences: sentences.len() as u64 - negatives,
        negative_sentences: negatives,
        options: opts,
    }
}

/// Hamilton apportionment of `target` seats over `sizes`: floors of the
/// exact quotas, then one extra seat per largest remainder (ties to the
/// lower index). Exact integer arithmetic.
pub fn largest_remainder(sizes: &[u64], target: u64) -> Vec<u64> {
    let total: u128 = sizes.iter().map(|&s| u128::from(s)).sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let t = u128::from(target);
    let mut alloc: Vec<u64> = sizes.iter().map(|&s| (t * u128::from(s) / total) as u64).collect();
    let mut rema: Vec<(u128, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| (t * u128::from(s) % total, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = target - alloc.iter().sum::<u64>();
    for &(_, i) in rema.iter().take(short as usize) {
        alloc[i] += 1;
    }
    alloc
}

/// Stratum of a sentence: its projected label, or `negative`.
pub fn stratum_of(s: &LabeledSentence) -> String {
    project_single_label(&s.labels).map_or_else(|| NEGATIVE_ROW.to_string(), |c| c.as_str().to_string())
}

/// Per-stratum allocation for a matched subsample, in stratum name order.
pub fn matched_allocation(
    sentences: &[LabeledSentence],
    target: usize,
) -> Result<BTreeMap<String, (usize, usize)>, DatasetError> {
    if target > sentences.len() {
        return Err(DatasetError::TargetTooLarge {
            target,
            available: sentences.len(),
        });
    }
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for s in sentences {
        *sizes.entry(stratum_of(s)).or_default() += 1;
    }
    if target < sizes.len() {
        return Err(DatasetError::TargetTooSmall {
            target,
            strata: sizes.len(),
        });
    }
    let counts: Vec<u64> = sizes.values().map(|&v| v as u64).collect();
    let alloc = largest_remainder(&counts, target as u64);
    let mut out = BTreeMap::new();
    for ((name, available), take) in sizes.into_iter().zip(alloc) {
        let take = take as usize;
        if take > available {
            return Err(DatasetError::Allocation {
                stratum: name,
                needed: take,
                available,
            });
        }
        out.insert(name, (take, available));
    }
    Ok(out)
}

/// Proportion-preserving subsample. Strata are projected labels plus a
/// negative stratum; selection within a stratum is uniform without
/// replacement. Output keeps source order.
pub fn subsample_matched(
    sentences: &[LabeledSentence],
    target: usize,
    seed: u64,
) -> Result<Vec<LabeledSentence>, DatasetError> {
    let alloc = matched_allocation(sentences, target)?;
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in sentences.iter().enumerate() {
        members.entry(stratum_of(s)).or_default().push(i);
    }
    let mut chosen = Vec::with_capacity(target);
    for (k, (name, idx)) in members.iter().enumerate() {
        let take = alloc[name].0;
        let mut rng = stream_rng(derive_seed(seed, k as u64), streams::SUBSAMPLE);
        chosen.extend(sample_without_replacement(&mut rng, idx.len(), take).into_iter().map(|j| idx[j]));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| sentences[i].clone()).collect())
}

/// Positives plus `ratio * positives.len()` negatives drawn without
/// replacement, shuffled under `seed`.
pub fn assemble_training_set<T: Clone>(
    positives: &[T],
    negative_pool: &[T],
    ratio: u32,
    seed: u64,
) -> Result<Vec<T>, DatasetError> {
    let needed = positives.len() * ratio as usize;
    if needed > negative_pool.len() {
        return Err(DatasetError::InsufficientNegatives {
            needed,
            available: negative_pool.len(),
            ratio,
        });
    }
    let mut rng = stream_rng(seed, streams::ASSEMBLE);
    let mut out: Vec<T> = positives.to_vec();
    out.extend(
        sample_without_replacement(&mut rng, negative_pool.len(), needed)
            .into_iter()
            .map(|i| negative_pool[i].clone()),
    );
    shuffle(&mut rng, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub dataset_id: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub cohort_size: u64,
    pub backend_id: String,
    /// Record counts keyed by file name.
    pub record_counts: BTreeMap<String, u64>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_pass: Option<bool>,
    pub created_at: String,
    pub tool_version: String,
}

impl DatasetManifest {
    pub fn new(config_digest: &str, master_seed: u64, cohort_size: u64, backend_id: &str) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA.to_string(),
            dataset_id: dataset_id(config_digest, master_seed, cohort_size, backend_id),
            config_digest: config_digest.to_string(),
            master_seed,
            cohort_size,
            backend_id: backend_id.to_string(),
            record_counts: BTreeMap::new(),
            complete: false,
            failed_stage: None,
            failure: None,
            validation_pass: None,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Counts whose file line counts disagree with the manifest.
    pub fn verify_counts(&self, dir: &Path) -> Result<Vec<(String, u64, u64)>, DatasetError> {
        let mut bad = Vec::new();
        for (file, expected) in &self.record_counts {
            let actual = count_lines(&dir.join(file))?;
            if actual != *expected {
                bad.push((file.clone(), *expected, actual));
            }
        }
        Ok(bad)
    }
}

/// Stable identifier derived from everything that determines the dataset.
pub fn dataset_id(config_digest: &str, master_seed: u64, cohort_size: u64, backend_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{config_digest}\n{master_seed}\n{cohort_size}\n{backend_id}").as_bytes());
    format!("ds-{}", &hex::encode(h.finalize())[..16])
}

/// Note ids present in `notes`, for reference checks.
pub fn note_ids(notes: &[SyntheticNote]) -> BTreeSet<&str> {
    notes.iter().map(|n| n.note_id.as_str()).collect()
}
