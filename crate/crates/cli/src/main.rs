use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use cohortforge::annotator::LabeledSentence;
use cohortforge::config::{default_config, DistributionConfig};
use cohortforge::dataset::{
    assemble_training_set, dataset_stats, encode_records, read_json, read_records, subsample_matched, write_atomic,
    write_json, write_records, DatasetManifest, Record, StatsOptions, SyntheticNote,
};
use cohortforge::error::{Error, EXIT_USAGE, EXIT_VALIDATION};
use cohortforge::fidelity::Tolerances;
use cohortforge::persona::{sample_cohort, Persona};
use cohortforge::pipeline::{
    self, check_digest, load_config_file, make_backend, make_gateway, BackendChoice, RunSpec, Stage,
    ValidationInputs, ANNOTATION_ERRORS_FILE, MANIFEST_FILE,
};
use cohortforge::prompt::{build_annotation_prompt, build_note_prompt, DEFAULT_GUIDELINE};
use cohortforge::trajectory::VisitPlan;

#[derive(Parser)]
#[command(name = "cohortforge", version, about = "Seeded synthetic clinical-note cohorts")]
struct Cli {
    /// Distribution config (JSON). Defaults to the shipped tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log detail on stderr (-v, -vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

impl From<BackendArg> for BackendChoice {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendChoice::Mock,
            BackendArg::Http => BackendChoice::Http,
        }
    }
}

#[derive(Args)]
struct BackendOpts {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendArg,
    /// Requests in flight at once.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    concurrency: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default config.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample personas.
    SampleCohort {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build visit plans from personas.
    PlanVisits {
        #[arg(long)]
        personas: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach keyword mentions to visit plans.
    SampleKeywords {
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one note per planned visit.
    GenerateNotes {
        #[arg(long)]
        personas: PathBuf,
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
    },
    /// Label note sentences.
    Annotate {
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Unlabelled sentences. Defaults to annotation_errors.jsonl beside --out.
        #[arg(long)]
        errors: Option<PathBuf>,
        /// Guideline text replacing the built-in one.
        #[arg(long)]
        guideline: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendOpts,
    },
    /// Check artifacts against the configured tables.
    Validate {
        #[arg(long)]
        personas: Option<PathBuf>,
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long)]
        notes: Option<PathBuf>,
        #[arg(long)]
        sentences: Option<PathBuf>,
        /// JSON object overriding individual tolerances.
        #[arg(long)]
        tolerance_overrides: Option<PathBuf>,
        /// Where to write the JSON report. Printed to stdout otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-category sentence counts.
    Stats {
        #[arg(long)]
        sentences: PathBuf,
        /// Count each positive sentence once under its projected label.
        #[arg(long)]
        unique_sentences: bool,
        /// Add a negative row.
        #[arg(long)]
        include_negatives: bool,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Proportion-preserving subsample of labeled sentences.
    Subsample {
        #[arg(long)]
        sentences: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine positives with sampled negatives.
    Assemble {
        #[arg(long)]
        positives: PathBuf,
        #[arg(long)]
        negatives: PathBuf,
        #[arg(long, default_value_t = 5)]
        ratio: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the prompt for one note.
    RenderPrompt {
        /// Plans with keyword mentions; renders a generation prompt.
        #[arg(long, requires = "personas", conflicts_with = "notes")]
        plan: Option<PathBuf>,
        #[arg(long)]
        personas: Option<PathBuf>,
        /// Generated notes; renders an annotation prompt.
        #[arg(long)]
        notes: Option<PathBuf>,
        /// Zero-based note position across the input.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Directory for a `<note_id>.<kind>.txt` fixture. Printed otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage into `<out-dir>/<dataset id>/`.
    Run {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "dataset")]
        out_dir: PathBuf,
        /// Last stage to run.
        #[arg(long, default_value = "stats", value_parser = parse_stage)]
        until: Stage,
        /// Exit 1 when any fidelity check fails.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        tolerance_overrides: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendOpts,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<Error>().map_or(EXIT_USAGE, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn config(cli_config: Option<&Path>) -> Result<DistributionConfig, Error> {
    match cli_config {
        Some(p) => load_config_file(p),
        None => Ok(default_config()),
    }
}

fn load<T: Record>(path: &Path, cfg: &DistributionConfig) -> anyhow::Result<Vec<T>> {
    check_digest(path, cfg)?;
    let records = read_records::<T>(path).map_err(Error::from)?;
    tracing::info!(path = %path.display(), records = records.len(), "read");
    Ok(records)
}

/// Writes records and keeps a sibling manifest's counts in step.
fn save<T: Record>(path: &Path, records: &[T], cfg: &DistributionConfig) -> anyhow::Result<()> {
    write_records(path, records).map_err(Error::from)?;
    record_count(path, records.len() as u64, cfg)?;
    tracing::info!(path = %path.display(), records = records.len(), "wrote");
    Ok(())
}

fn record_count(path: &Path, count: u64, cfg: &DistributionConfig) -> anyhow::Result<()> {
    let manifest_path = sibling(path, MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Ok(());
    }
    check_digest(path, cfg)?;
    let mut m: DatasetManifest = read_json(&manifest_path).map_err(Error::from)?;
    let name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    m.record_counts.insert(name, count);
    write_json(&manifest_path, &m).map_err(Error::from)?;
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn load_tolerances(path: Option<&Path>) -> anyhow::Result<Tolerances> {
    match path {
        None => Ok(Tolerances::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Usage(format!("cannot read tolerance overrides {}: {e}", p.display())))?;
            let tol = serde_json::from_str(&text)
                .map_err(|e| Error::Usage(format!("invalid tolerance overrides {}: {e}", p.display())))?;
            Ok(tol)
        }
    }
}

fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::InitConfig { out } => {
            let text = default_config().to_json();
            match out {
                Some(p) => {
                    write_atomic(&p, |w| w.write_all(text.as_bytes())).map_err(Error::from)?;
                    tracing::info!(path = %p.display(), "wrote default config");
                }
                None => emit(&text)?,
            }
        }
        Command::SampleCohort { n, seed, out } => {
            let cfg = config(cfg_path)?;
            let personas = sample_cohort(&cfg, n, seed).map_err(Error::from)?;
            let manifest_path = sibling(&out, MANIFEST_FILE);
            if !manifest_path.is_file() {
                let mut m = DatasetManifest::new(&cfg.digest(), seed, n, "none");
                m.complete = true;
                write_json(&manifest_path, &m).map_err(Error::from)?;
            }
            save(&out, &personas, &cfg)?;
        }
        Command::PlanVisits { personas, out } => {
            let cfg = config(cfg_path)?;
            let personas: Vec<Persona> = load(&personas, &cfg)?;
            save(&out, &pipeline::plan_visits(&cfg, &personas), &cfg)?;
        }
        Command::SampleKeywords { plans, out } => {
            let cfg = config(cfg_path)?;
            let plans: Vec<VisitPlan> = load(&plans, &cfg)?;
            save(&out, &pipeline::sample_keywords(&cfg, &plans)?, &cfg)?;
        }
        Command::GenerateNotes {
            personas,
            plans,
            out,
            backend,
        } => {
            let cfg = config(cfg_path)?;
            let personas: Vec<Persona> = load(&personas, &cfg)?;
            let plans: Vec<VisitPlan> = load(&plans, &cfg)?;
            let gateway = make_gateway(make_backend(backend.backend.into(), &cfg)?, &cfg);
            let notes = pipeline::generate_notes(&cfg, &personas, &plans, &gateway, backend.concurrency as usize)
                .map_err(|e| e.in_stage(Stage::GenerateNotes.as_str()))?;
            save(&out, &notes, &cfg)?;
        }
        Command::Annotate {
            notes,
            out,
            errors,
            guideline,
            backend,
        } => {
            let cfg = config(cfg_path)?;
            let notes: Vec<SyntheticNote> = load(&notes, &cfg)?;
            let guideline = match guideline {
                Some(p) => std::fs::read_to_string(&p)
                    .map_err(|e| Error::Usage(format!("cannot read guideline {}: {e}", p.display())))?,
                None => DEFAULT_GUIDELINE.to_string(),
            };
            let gateway = make_gateway(make_backend(backend.backend.into(), &cfg)?, &cfg);
            let result = pipeline::annotate(&cfg, &notes, &gateway, &guideline, backend.concurrency as usize)
                .map_err(|e| e.in_stage(Stage::Annotate.as_str()))?;
            save(&out, &result.sentences, &cfg)?;
            let errors = errors.unwrap_or_else(|| sibling(&out, ANNOTATION_ERRORS_FILE));
            let bytes = encode_records(&result.issues);
            write_atomic(&errors, |w| w.write_all(&bytes)).map_err(Error::from)?;
            record_count(&errors, result.issues.len() as u64, &cfg)?;
            if !result.issues.is_empty() {
                tracing::warn!(issues = result.issues.len(), path = %errors.display(), "unlabelled sentences recorded");
            }
        }
        Command::Validate {
            personas,
            plans,
            notes,
            sentences,
            tolerance_overrides,
            report,
        } => {
            let cfg = config(cfg_path)?;
            let tol = load_tolerances(tolerance_overrides.as_deref())?;
            let personas: Option<Vec<Persona>> = personas.map(|p| load(&p, &cfg)).transpose()?;
            let plans: Option<Vec<VisitPlan>> = plans.map(|p| load(&p, &cfg)).transpose()?;
            let notes: Option<Vec<SyntheticNote>> = notes.map(|p| load(&p, &cfg)).transpose()?;
            let sentences: Option<Vec<LabeledSentence>> = sentences.map(|p| load(&p, &cfg)).transpose()?;
            let r = pipeline::validate(
                &cfg,
                ValidationInputs {
                    personas: personas.as_deref(),
                    plans: plans.as_deref(),
                    notes: notes.as_deref(),
                    sentences: sentences.as_deref(),
                },
                &tol,
            )?;
            for c in &r.checks {
                eprintln!(
                    "{:<5} {:<40} observed {:.6} tolerance {:.6} (n = {})",
                    if c.pass { "ok" } else { "FAIL" },
                    c.name,
                    c.observed,
                    c.tolerance,
                    c.n
                );
            }
            match report {
                Some(p) => write_json(&p, &r).map_err(Error::from)?,
                None => emit(&(serde_json::to_string_pretty(&r)? + "\n"))?,
            }
            if !r.overall_pass {
                eprintln!("validation failed: {} check(s)", r.failures().count());
                return Ok(EXIT_VALIDATION);
            }
        }
        Command::Stats {
            sentences,
            unique_sentences,
            include_negatives,
            json,
        } => {
            let cfg = config(cfg_path)?;
            let records: Vec<LabeledSentence> = load(&sentences, &cfg)?;
            let stats = dataset_stats(
                &records,
                StatsOptions {
                    unique_sentences,
                    include_negatives,
                },
            );
            if json {
                emit(&(serde_json::to_string_pretty(&stats)? + "\n"))?;
            } else {
                emit(&stats.render_table())?;
            }
        }
        Command::Subsample {
            sentences,
            target,
            seed,
            out,
        } => {
            let cfg = config(cfg_path)?;
            let records: Vec<LabeledSentence> = load(&sentences, &cfg)?;
            let sub = subsample_matched(&records, target, seed).map_err(Error::from)?;
            save(&out, &sub, &cfg)?;
        }
        Command::Assemble {
            positives,
            negatives,
            ratio,
            seed,
            out,
        } => {
            let cfg = config(cfg_path)?;
            let pos: Vec<LabeledSentence> = load(&positives, &cfg)?;
            let neg: Vec<LabeledSentence> = load(&negatives, &cfg)?;
            let pos: Vec<_> = pos.into_iter().filter(|s| !s.labels.is_empty()).collect();
            let neg: Vec<_> = neg.into_iter().filter(|s| s.labels.is_empty()).collect();
            let set = assemble_training_set(&pos, &neg, ratio, seed).map_err(Error::from)?;
            save(&out, &set, &cfg)?;
        }
        Command::RenderPrompt {
            plan,
            personas,
            notes,
            index,
            out,
        } => {
            let cfg = config(cfg_path)?;
            let (note_id, bundle) = match (plan, notes) {
                (Some(plan), None) => {
                    let plans: Vec<VisitPlan> = load(&plan, &cfg)?;
                    let personas: Vec<Persona> =
                        load(personas.as_deref().context("--personas is required with --plan")?, &cfg)?;
                    let note = plans
                        .iter()
                        .flat_map(|p| &p.notes)
                        .nth(index)
                        .ok_or_else(|| Error::Usage(format!("no note at index {index}")))?;
                    let persona = personas
                        .iter()
                        .find(|p| p.patient_id == note.patient_id)
                        .ok_or_else(|| Error::Usage(format!("no persona for patient '{}'", note.patient_id)))?;
                    (note.note_id.clone(), build_note_prompt(persona, note, &cfg).map_err(Error::from)?)
                }
                (None, Some(notes)) => {
                    let notes: Vec<SyntheticNote> = load(&notes, &cfg)?;
                    let note = notes
                        .get(index)
                        .ok_or_else(|| Error::Usage(format!("no note at index {index}")))?;
                    (
                        note.note_id.clone(),
                        build_annotation_prompt(&note.text, DEFAULT_GUIDELINE).map_err(Error::from)?,
                    )
                }
                _ => return Err(Error::Usage("pass either --plan with --personas, or --notes".into()).into()),
            };
            let text = bundle.render_fixture();
            match out {
                Some(dir) => {
                    let path = dir.join(format!("{note_id}.{}.txt", bundle.kind.as_str()));
                    write_atomic(&path, |w| w.write_all(text.as_bytes())).map_err(Error::from)?;
                    tracing::info!(path = %path.display(), hash = %bundle.prompt_hash, "wrote prompt fixture");
                }
                None => emit(&text)?,
            }
        }
        Command::Run {
            n,
            seed,
            out_dir,
            until,
            strict,
            tolerance_overrides,
            backend,
        } => {
            let spec = RunSpec {
                config_path: cli.config.clone(),
                master_seed: seed,
                cohort_size: n,
                backend: backend.backend.into(),
                output_dir: out_dir,
                until,
                tolerances: load_tolerances(tolerance_overrides.as_deref())?,
                strict,
                concurrency: Some(backend.concurrency as usize),
            };
            let outcome = pipeline::run_pipeline(&spec)?;
            if let Some(r) = &outcome.report {
                if !r.overall_pass {
                    tracing::warn!(failed = r.failures().count(), "fidelity checks failed");
                }
            }
            emit(&format!("{}\n", outcome.dir.display()))?;
        }
    }
    Ok(0)
}
