//! Stage functions and the end-to-end run.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotator::{
    annotate_notes, note_index, sentence_id, validate_records, AnnotateError, AnnotationIssue, LabeledSentence,
};
use crate::config::{load_config_str, DistributionConfig};
use crate::dataset::{
    dataset_stats, encode_records, read_json, write_atomic, write_json, write_records, DatasetManifest,
    DatasetStats, Record, RecordKind, StatsOptions, SyntheticNote,
};
use crate::error::{Error, Result};
use crate::fidelity::{
    validate_cohort, validate_keyword_alignment, validate_visit_alignment, FidelityCheck, FidelityReport, Metrics,
    Tolerances,
};
use crate::gateway::{Backend, Gateway, GenerationRequest, HttpBackend, MockBackend, RetryPolicy};
use crate::persona::{sample_cohort, Persona};
use crate::prompt::{build_note_prompt, DEFAULT_GUIDELINE};
use crate::semantic::populate_mentions;
use crate::trajectory::{build_visit_plan, VisitPlan};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATION_ERRORS_FILE: &str = "annotation_errors.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SampleCohort,
    PlanVisits,
    SampleKeywords,
    GenerateNotes,
    Annotate,
    Validate,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::SampleCohort,
        Stage::PlanVisits,
        Stage::SampleKeywords,
        Stage::GenerateNotes,
        Stage::Annotate,
        Stage::Validate,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SampleCohort => "sample-cohort",
            Stage::PlanVisits => "plan-visits",
            Stage::SampleKeywords => "sample-keywords",
            Stage::GenerateNotes => "generate-notes",
            Stage::Annotate => "annotate",
            Stage::Validate => "validate",
            Stage::Stats => "stats",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Mock,
    Http,
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(BackendChoice::Mock),
            "http" => Ok(BackendChoice::Http),
            other => Err(format!("unknown backend '{other}' (expected mock or http)")),
        }
    }
}

/// Reads and validates a config file.
pub fn load_config_file(path: &Path) -> Result<DistributionConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    load_config_str(&text).map_err(|source| Error::ConfigFile {
        path: path.to_path_buf(),
        source,
    })
}

pub fn make_backend(choice: BackendChoice, cfg: &DistributionConfig) -> Result<Arc<dyn Backend>> {
    Ok(match choice {
        BackendChoice::Mock => Arc::new(MockBackend::new(&cfg.lexicon)),
        BackendChoice::Http => Arc::new(HttpBackend::from_env(&cfg.generation_params).map_err(Error::Usage)?),
    })
}

pub fn make_gateway(backend: Arc<dyn Backend>, cfg: &DistributionConfig) -> Gateway {
    Gateway::new(backend, RetryPolicy::from_params(&cfg.generation_params))
}

/// Fails when a `manifest.json` beside `input` records a different config.
pub fn check_digest(input: &Path, cfg: &DistributionConfig) -> Result<()> {
    let manifest = input.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Ok(());
    }
    let m: DatasetManifest = read_json(&manifest)?;
    let found = cfg.digest();
    if m.config_digest != found {
        return Err(Error::DigestMismatch {
            expected: m.config_digest,
            found,
            manifest,
        });
    }
    Ok(())
}

pub fn plan_visits(cfg: &DistributionConfig, personas: &[Persona]) -> Vec<VisitPlan> {
    personas.par_iter().map(|p| build_visit_plan(cfg, p)).collect()
}

pub fn sample_keywords(cfg: &DistributionConfig, plans: &[VisitPlan]) -> Result<Vec<VisitPlan>> {
    plans
        .par_iter()
        .map(|p| populate_mentions(cfg, p).map_err(Error::from))
        .collect()
}

/// Renders one prompt per planned note and generates them through the
/// gateway. Any failed request aborts the stage.
pub fn generate_notes(
    cfg: &DistributionConfig,
    personas: &[Persona],
    plans: &[VisitPlan],
    gateway: &Gateway,
    concurrency: usize,
) -> Result<Vec<SyntheticNote>> {
    let by_id: HashMap<&str, &Persona> = personas.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    let specs: Vec<_> = plans.iter().flat_map(|p| &p.notes).collect();
    let requests = specs
        .iter()
        .map(|note| {
            let persona = by_id
                .get(note.patient_id.as_str())
                .ok_or_else(|| Error::Usage(format!("note '{}' names unknown patient '{}'", note.note_id, note.patient_id)))?;
            let bundle = build_note_prompt(persona, note, cfg)?;
            Ok(GenerationRequest::new(note.note_id.clone(), bundle, &cfg.generation_params))
        })
        .collect::<Result<Vec<_>>>()?;
    tracing::info!(notes = requests.len(), concurrency, "generating notes");
    let results = gateway.generate_batch(&requests, concurrency);
    let mut notes = Vec::with_capacity(results.len());
    for ((spec, req), result) in specs.into_iter().zip(&requests).zip(results) {
        let result = result.map_err(|source| Error::Gateway {
            request_id: req.request_id.clone(),
            source,
        })?;
        notes.push(SyntheticNote {
            note_id: spec.note_id.clone(),
            patient_id: spec.patient_id.clone(),
            year_before_dx: spec.year_before_dx,
            note_type: spec.note_type,
            stage: spec.stage.clone(),
            prompt_hash: req.bundle.prompt_hash.clone(),
            backend_id: result.backend_id,
            text: result.text,
        });
    }
    Ok(notes)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationOutput {
    pub sentences: Vec<LabeledSentence>,
    pub issues: Vec<AnnotationIssue>,
}

/// Annotates every note. Sentences that stay unlabelled after the repair
/// retry, and responses naming out-of-range sentences, become issues;
/// backend failures abort.
pub fn annotate(
    cfg: &DistributionConfig,
    notes: &[SyntheticNote],
    gateway: &Gateway,
    guideline: &str,
    concurrency: usize,
) -> Result<AnnotationOutput> {
    tracing::info!(notes = notes.len(), concurrency, "annotating notes");
    let mut out = AnnotationOutput::default();
    for (note, result) in notes
        .iter()
        .zip(annotate_notes(notes, gateway, guideline, &cfg.generation_params, concurrency))
    {
        match result {
            Ok(a) => {
                out.sentences.extend(a.sentences);
                out.issues.extend(a.issues);
            }
            Err(AnnotateError::IndexOutOfRange { index, count, .. }) => out.issues.push(AnnotationIssue {
                note_id: note.note_id.clone(),
                sentence_id: sentence_id(&note.note_id, index),
                sentence_index: index,
                sentence_text: String::new(),
                reason: format!("response names sentence S{index} but the note has {count}"),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Inputs available to the validate stage.
#[derive(Debug, Default, Clone, Copy)]
pub struct ValidationInputs<'a> {
    pub personas: Option<&'a [Persona]>,
    pub plans: Option<&'a [VisitPlan]>,
    pub notes: Option<&'a [SyntheticNote]>,
    pub sentences: Option<&'a [LabeledSentence]>,
}

/// Runs every check the supplied artifacts allow.
pub fn validate(cfg: &DistributionConfig, inputs: ValidationInputs<'_>, tol: &Tolerances) -> Result<FidelityReport> {
    let mut reports = Vec::new();
    if let Some(personas) = inputs.personas {
        reports.push(validate_cohort(personas, cfg, tol)?);
    }
    if let Some(plans) = inputs.plans {
        reports.push(validate_visit_alignment(plans, cfg, tol)?);
        if plans.iter().flat_map(|p| &p.notes).all(|n| !n.mentions.is_empty()) {
            reports.push(validate_keyword_alignment(plans, cfg, tol)?);
        }
    }
    if let Some(sentences) = inputs.sentences {
        let index = inputs.notes.map(note_index);
        let labels = validate_records(sentences, index.as_ref());
        let bad = labels.violations.len() as f64;
        let mut check = FidelityCheck::new(
            "labels/schema".into(),
            "no schema, closed-set or reference violations".into(),
            bad,
            sentences.len() as u64,
            Metrics::default(),
            0.0,
            labels.is_valid(),
        );
        if let Some(first) = labels.violations.first() {
            check.detail = Some(format!("{} violation(s); first: {}", labels.violations.len(), first.detail));
        }
        reports.push(FidelityReport::from_checks(vec![check]));
    }
    if reports.is_empty() {
        return Err(Error::Usage("nothing to validate".into()));
    }
    Ok(FidelityReport::merge(reports))
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    /// `None` runs on the shipped tables.
    pub config_path: Option<PathBuf>,
    pub master_seed: u64,
    pub cohort_size: u64,
    pub backend: BackendChoice,
    /// Parent directory; the dataset lands in `<output_dir>/<dataset_id>/`.
    pub output_dir: PathBuf,
    /// Last stage to run.
    pub until: Stage,
    pub tolerances: Tolerances,
    pub strict: bool,
    /// Overrides the configured concurrency limit.
    pub concurrency: Option<usize>,
}

impl RunSpec {
    pub fn new(output_dir: impl Into<PathBuf>, master_seed: u64, cohort_size: u64) -> Self {
        Self {
            config_path: None,
            master_seed,
            cohort_size,
            backend: BackendChoice::Mock,
            output_dir: output_dir.into(),
            until: Stage::Stats,
            tolerances: Tolerances::default(),
            strict: false,
            concurrency: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub report: Option<FidelityReport>,
    pub stats: Option<DatasetStats>,
}

/// Loads the config and backend named by `spec` and runs the pipeline.
pub fn run_pipeline(spec: &RunSpec) -> Result<RunOutcome> {
    let cfg = match &spec.config_path {
        Some(p) => load_config_file(p)?,
        None => crate::config::default_config(),
    };
    let backend = make_backend(spec.backend, &cfg)?;
    run_pipeline_with(spec, &cfg, backend)
}

struct Run {
    dir: PathBuf,
    manifest: DatasetManifest,
    until: Stage,
}

impl Run {
    fn wants(&self, stage: Stage) -> bool {
        stage <= self.until
    }

    fn save<T: Record>(&mut self, records: &[T]) -> Result<()> {
        let file = T::KIND.file_name();
        write_records(&self.dir.join(file), records)?;
        self.manifest.record_counts.insert(file.to_string(), records.len() as u64);
        self.flush()
    }

    fn flush(&self) -> Result<()> {
        write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(())
    }
}

/// Runs stages in order with an explicit config and backend, writing each
/// artifact as soon as it exists. On failure the manifest is left marked
/// incomplete with the failed stage.
pub fn run_pipeline_with(spec: &RunSpec, cfg: &DistributionConfig, backend: Arc<dyn Backend>) -> Result<RunOutcome> {
    if spec.cohort_size == 0 {
        return Err(Error::Usage("cohort size must be at least 1".into()));
    }
    let concurrency = spec.concurrency.unwrap_or(cfg.generation_params.concurrency_limit).max(1);
    let gateway = make_gateway(backend, cfg);
    let manifest = DatasetManifest::new(&cfg.digest(), spec.master_seed, spec.cohort_size, &gateway.backend_id());
    let dir = spec.output_dir.join(&manifest.dataset_id);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    let mut run = Run {
        dir,
        manifest,
        until: spec.until,
    };
    run.flush()?;

    let mut current = Stage::SampleCohort;
    let result = (|| -> Result<(Option<FidelityReport>, Option<DatasetStats>)> {
        tracing::info!(stage = %current, n = spec.cohort_size, seed = spec.master_seed, "starting");
        let personas = sample_cohort(cfg, spec.cohort_size, spec.master_seed)?;
        run.save(&personas)?;

        current = Stage::PlanVisits;
        if !run.wants(current) {
            return Ok((None, None));
        }
        tracing::info!(stage = %current, "starting");
        let plans = plan_visits(cfg, &personas);
        run.save(&plans)?;

        current = Stage::SampleKeywords;
        if !run.wants(current) {
            return Ok((None, None));
        }
        tracing::info!(stage = %current, "starting");
        let plans = sample_keywords(cfg, &plans)?;
        run.save(&plans)?;

        let mut notes = None;
        let mut sentences = None;
        current = Stage::GenerateNotes;
        if run.wants(current) {
            tracing::info!(stage = %current, "starting");
            let generated = generate_notes(cfg, &personas, &plans, &gateway, concurrency)?;
            run.save(&generated)?;
            notes = Some(generated);
        }

        current = Stage::Annotate;
        if run.wants(current) {
            tracing::info!(stage = %current, "starting");
            let out = annotate(cfg, notes.as_deref().unwrap_or_default(), &gateway, DEFAULT_GUIDELINE, concurrency)?;
            run.save(&out.sentences)?;
            let bytes = encode_records(&out.issues);
            write_atomic(&run.dir.join(ANNOTATION_ERRORS_FILE), |w| w.write_all(&bytes))?;
            run.manifest
                .record_counts
                .insert(ANNOTATION_ERRORS_FILE.to_string(), out.issues.len() as u64);
            run.flush()?;
            if !out.issues.is_empty() {
                tracing::warn!(issues = out.issues.len(), "some sentences could not be labelled");
            }
            sentences = Some(out.sentences);
        }

        let mut report = None;
        current = Stage::Validate;
        if run.wants(current) {
            tracing::info!(stage = %current, "starting");
            let r = validate(
                cfg,
                ValidationInputs {
                    personas: Some(&personas),
                    plans: Some(&plans),
                    notes: notes.as_deref(),
                    sentences: sentences.as_deref(),
                },
                &spec.tolerances,
            )?;
            write_json(&run.dir.join(REPORT_FILE), &r)?;
            run.manifest.validation_pass = Some(r.overall_pass);
            report = Some(r);
        }

        let mut stats = None;
        current = Stage::Stats;
        if run.wants(current) {
            if let Some(s) = &sentences {
                tracing::info!(stage = %current, "starting");
                let st = dataset_stats(s, StatsOptions::default());
                write_json(&run.dir.join(STATS_FILE), &st)?;
                stats = Some(st);
            }
        }
        Ok((report, stats))
    })();

    match result {
        Ok((report, stats)) => {
            run.manifest.complete = true;
            run.flush()?;
            tracing::info!(dir = %run.dir.display(), "run finished");
            if spec.strict {
                if let Some(r) = report.as_ref().filter(|r| !r.overall_pass) {
                    let failed: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
                    return Err(Error::ValidationFailed(format!(
                        "{} check(s) failed: {}",
                        failed.len(),
                        failed.join(", ")
                    )));
                }
            }
            Ok(RunOutcome {
                dir: run.dir,
                manifest: run.manifest,
                report,
                stats,
            })
        }
        Err(e) => {
            run.manifest.complete = false;
            run.manifest.failed_stage = Some(current.as_str().to_string());
            run.manifest.failure = Some(e.to_string());
            if let Err(flush) = run.flush() {
                tracing::error!(error = %flush, "could not record the failure in the manifest");
            }
            Err(e.in_stage(current.as_str()))
        }
    }
}

/// Kind-checked load used by stage subcommands.
pub fn load_stage_input<T: Record>(path: &Path) -> Result<Vec<T>> {
    Ok(crate::dataset::read_records::<T>(path)?)
}

/// File a stage writes into a dataset directory.
pub fn artifact_path(dir: &Path, kind: RecordKind) -> PathBuf {
    dir.join(kind.file_name())
}
