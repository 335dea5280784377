//! Crate-level error with process exit codes.

use std::path::PathBuf;

use thiserror::Error;

use crate::annotator::AnnotateError;
use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::fidelity::FidelityError;
use crate::gateway::GatewayError;
use crate::persona::PersonaError;
use crate::prompt::PromptError;
use crate::semantic::SemanticError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: ConfigError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(
        "config digest {found} does not match {expected} recorded in {}",
        manifest.display()
    )]
    DigestMismatch {
        expected: String,
        found: String,
        manifest: PathBuf,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("request '{request_id}': {source}")]
    Gateway {
        request_id: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Fidelity(#[from] FidelityError),
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

fn gateway_exit(e: &GatewayError) -> i32 {
    match e {
        GatewayError::Config { .. } => EXIT_USAGE,
        GatewayError::Transport { .. } | GatewayError::Protocol { .. } => EXIT_BACKEND,
    }
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ValidationFailed(_) => EXIT_VALIDATION,
            Error::Gateway { source, .. } => gateway_exit(source),
            Error::Annotate(AnnotateError::Gateway { source, .. }) => gateway_exit(source),
            Error::Annotate(_) => EXIT_BACKEND,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Usage(_)
            | Error::ConfigFile { .. }
            | Error::Config(_)
            | Error::DigestMismatch { .. }
            | Error::Dataset(_)
            | Error::Persona(_)
            | Error::Semantic(_)
            | Error::Prompt(_)
            | Error::Fidelity(_) => EXIT_USAGE,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
