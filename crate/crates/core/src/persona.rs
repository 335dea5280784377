//! Persona sampling: one independent categorical draw per configured factor.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DistributionConfig, FactorSpec};
use crate::rng::{categorical_index, derive_seed, stream_rng, streams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersonaError {
    #[error("cohort size must be at least 1")]
    EmptyCohort,
    #[error("constraint rejected {attempts} consecutive draws for patient index {index}")]
    ConstraintExhausted { index: u64, attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub patient_id: String,
    pub seed: u64,
    pub assignments: BTreeMap<String, String>,
}

impl Persona {
    pub fn get(&self, factor: &str) -> Option<&str> {
        self.assignments.get(factor).map(String::as_str)
    }
}

/// `SYN-` followed by the zero-padded patient index.
pub fn patient_id(index: u64) -> String {
    format!("SYN-{index:07}")
}

pub fn sample_factor<R: RngCore + ?Sized>(spec: &FactorSpec, rng: &mut R) -> String {
    let probs: Vec<f64> = spec.categories.iter().map(|c| c.probability).collect();
    spec.categories[categorical_index(rng, &probs)].label.clone()
}

fn draw_assignments<R: RngCore + ?Sized>(cfg: &DistributionConfig, rng: &mut R) -> BTreeMap<String, String> {
    cfg.factors
        .iter()
        .map(|f| (f.name.clone(), sample_factor(f, rng)))
        .collect()
}

pub fn sample_persona(cfg: &DistributionConfig, patient_index: u64, master_seed: u64) -> Persona {
    let seed = derive_seed(master_seed, patient_index);
    let mut rng = stream_rng(seed, streams::PERSONA);
    Persona {
        patient_id: patient_id(patient_index),
        seed,
        assignments: draw_assignments(cfg, &mut rng),
    }
}

/// Post-hoc plausibility filter for sampled personas. Rejected draws are
/// replaced by fresh draws from the same persona stream.
pub trait PersonaConstraint: Sync {
    fn accepts(&self, assignments: &BTreeMap<String, String>) -> bool;
}

impl<F> PersonaConstraint for F
where
    F: Fn(&BTreeMap<String, String>) -> bool + Sync,
{
    fn accepts(&self, assignments: &BTreeMap<String, String>) -> bool {
        self(assignments)
    }
}

pub fn sample_persona_constrained(
    cfg: &DistributionConfig,
    patient_index: u64,
    master_seed: u64,
    constraint: &dyn PersonaConstraint,
    max_attempts: u32,
) -> Result<Persona, PersonaError> {
    let seed = derive_seed(master_seed, patient_index);
    let mut rng = stream_rng(seed, streams::PERSONA);
    for _ in 0..max_attempts {
        let assignments = draw_assignments(cfg, &mut rng);
        if constraint.accepts(&assignments) {
            return Ok(Persona {
                patient_id: patient_id(patient_index),
                seed,
                assignments,
            });
        }
    }
    Err(PersonaError::ConstraintExhausted {
        index: patient_index,
        attempts: max_attempts,
    })
}

pub fn sample_cohort(cfg: &DistributionConfig, n: u64, master_seed: u64) -> Result<Vec<Persona>, PersonaError> {
    if n == 0 {
        return Err(PersonaError::EmptyCohort);
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| sample_persona(cfg, i, master_seed))
        .collect())
}

/// [`sample_cohort`] on a dedicated pool of `workers` threads.
pub fn sample_cohort_with_workers(
    cfg: &DistributionConfig,
    n: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<Persona>, PersonaError> {
    if n == 0 {
        return Err(PersonaError::EmptyCohort);
    }
    if workers <= 1 {
        return Ok((0..n).map(|i| sample_persona(cfg, i, master_seed)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| sample_cohort(cfg, n, master_seed))
}

pub fn sample_cohort_constrained(
    cfg: &DistributionConfig,
    n: u64,
    master_seed: u64,
    constraint: &dyn PersonaConstraint,
    max_attempts: u32,
) -> Result<Vec<Persona>, PersonaError> {
    if n == 0 {
        return Err(PersonaError::EmptyCohort);
    }
    (0..n)
        .into_par_iter()
        .map(|i| sample_persona_constrained(cfg, i, master_seed, constraint, max_attempts))
        .collect()
}
