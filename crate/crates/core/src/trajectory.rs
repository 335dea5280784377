//! Ten-year pre-diagnosis visit trajectories.
//!
//! Visit table cells are per-window totals; each year in a window receives
//! an equal share. Counts per (year, note type) are independent draws.

use std::collections::BTreeMap;

use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DistributionConfig, NoteType, StageMap, VisitTypeTable, VisitWindow, FIRST_YEAR, LAST_YEAR};
use crate::persona::Persona;
use crate::rng::{poisson, stream_rng, streams, uniform_index};
use crate::semantic::KeywordMention;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("year {0} is outside the modeled horizon 1-10")]
    YearOutOfRange(u8),
    #[error("note type '{0}' is not in the visit table")]
    UnknownNoteType(NoteType),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteSpec {
    pub note_id: String,
    pub patient_id: String,
    pub year_before_dx: u8,
    pub note_type: NoteType,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mentions: Vec<KeywordMention>,
}

/// All planned notes for one patient, latest-first by years before
/// diagnosis. `seed` is the persona seed that keys later sampling stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitPlan {
    pub patient_id: String,
    pub seed: u64,
    pub notes: Vec<NoteSpec>,
}

fn check_year(year: u8) -> Result<(), TrajectoryError> {
    if (FIRST_YEAR..=LAST_YEAR).contains(&year) {
        Ok(())
    } else {
        Err(TrajectoryError::YearOutOfRange(year))
    }
}

pub fn window_for_year(table: &VisitTypeTable, year: u8) -> Result<&VisitWindow, TrajectoryError> {
    check_year(year)?;
    table
        .windows
        .iter()
        .find(|w| w.contains(year))
        .ok_or(TrajectoryError::YearOutOfRange(year))
}

pub fn stage_for_year(stage_map: &StageMap, year: u8) -> Result<&str, TrajectoryError> {
    check_year(year)?;
    stage_map
        .stage_by_year
        .get(&year)
        .map(String::as_str)
        .ok_or(TrajectoryError::YearOutOfRange(year))
}

/// Window mean divided by the window's length in years.
pub fn per_year_rate(table: &VisitTypeTable, note_type: NoteType, year: u8) -> Result<f64, TrajectoryError> {
    let window = window_for_year(table, year)?;
    let mean = table
        .mean(note_type, &window.id)
        .ok_or(TrajectoryError::UnknownNoteType(note_type))?;
    Ok(mean / f64::from(window.len_years()))
}

/// Observed per-patient, per-year note counts for resampling, keyed by
/// (window id, note type). Cells without samples fall back to Poisson.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalVisitCounts {
    pub samples: BTreeMap<(String, NoteType), Vec<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum VisitCountModel {
    #[default]
    Poisson,
    Bootstrap(EmpiricalVisitCounts),
}

/// Visit counts keyed by (year, note type), zero cells included.
pub type VisitCounts = BTreeMap<(u8, NoteType), u32>;

pub fn sample_visit_counts<R: RngCore + ?Sized>(
    table: &VisitTypeTable,
    model: &VisitCountModel,
    rng: &mut R,
) -> VisitCounts {
    let mut counts = BTreeMap::new();
    for year in (FIRST_YEAR..=LAST_YEAR).rev() {
        let window = window_for_year(table, year).expect("validated table");
        for note_type in NoteType::ALL {
            let Some(mean) = table.mean(note_type, &window.id) else {
                continue;
            };
            let rate = mean / f64::from(window.len_years());
            let bootstrap = match model {
                VisitCountModel::Bootstrap(emp) => emp
                    .samples
                    .get(&(window.id.clone(), note_type))
                    .filter(|s| !s.is_empty()),
                VisitCountModel::Poisson => None,
            };
            let count = match bootstrap {
                Some(samples) => samples[uniform_index(rng, samples.len())],
                None if rate <= 0.0 => 0,
                None => poisson(rng, rate) as u32,
            };
            counts.insert((year, note_type), count);
        }
    }
    counts
}

pub fn note_id(patient_id: &str, ordinal: usize) -> String {
    format!("{patient_id}-N{ordinal:03}")
}

pub fn build_visit_plan(cfg: &DistributionConfig, persona: &Persona) -> VisitPlan {
    build_visit_plan_with(cfg, persona, &VisitCountModel::Poisson)
}

pub fn build_visit_plan_with(cfg: &DistributionConfig, persona: &Persona, model: &VisitCountModel) -> VisitPlan {
    let mut rng = stream_rng(persona.seed, streams::VISITS);
    let counts = sample_visit_counts(&cfg.visits, model, &mut rng);
    let mut notes = Vec::new();
    for year in (FIRST_YEAR..=LAST_YEAR).rev() {
        let stage = stage_for_year(&cfg.stage_map, year).expect("validated stage map");
        for note_type in NoteType::ALL {
            let n = counts.get(&(year, note_type)).copied().unwrap_or(0);
            for _ in 0..n {
                notes.push(NoteSpec {
                    note_id: note_id(&persona.patient_id, notes.len()),
                    patient_id: persona.patient_id.clone(),
                    year_before_dx: year,
                    note_type,
                    stage: stage.to_string(),
                    mentions: Vec::new(),
                });
            }
        }
    }
    VisitPlan {
        patient_id: persona.patient_id.clone(),
        seed: persona.seed,
        notes,
    }
}
