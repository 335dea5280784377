//! Goodness-of-fit checks of sampled artifacts against the configured tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DistributionConfig, LexiconCategory, NoteType, FIRST_YEAR, LAST_YEAR};
use crate::persona::Persona;
use crate::trajectory::VisitPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FidelityError {
    #[error("label sets differ: missing from observed {missing:?}, unexpected {unexpected:?}")]
    LabelMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("no observations to compare")]
    NoObservations,
    #[error("expected probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("label '{label}' has expected probability 0 but {count} observation(s)")]
    ImpossibleMass { label: String, count: u64 },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("plan set is empty")]
    EmptyPlans,
    #[error("persona '{persona}' has no assignment for factor '{factor}'")]
    MissingAssignment { persona: String, factor: String },
    #[error("note '{0}' has no keyword mentions")]
    MentionsMissing(String),
}

/// Divergence between observed counts and an expected distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub n: u64,
    pub l1: f64,
    pub chi_square: f64,
    pub degrees_of_freedom: u32,
    pub p_value: f64,
}

pub fn compare_categorical(
    observed: &BTreeMap<String, u64>,
    expected: &BTreeMap<String, f64>,
) -> Result<Divergence, FidelityError> {
    let missing: Vec<String> = expected.keys().filter(|k| !observed.contains_key(*k)).cloned().collect();
    let unexpected: Vec<String> = observed.keys().filter(|k| !expected.contains_key(*k)).cloned().collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(FidelityError::LabelMismatch { missing, unexpected });
    }
    let n: u64 = observed.values().sum();
    if n == 0 {
        return Err(FidelityError::NoObservations);
    }
    let total: f64 = expected.values().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(FidelityError::NotNormalized(total));
    }
    let nf = n as f64;
    let mut l1 = 0.0;
    let mut chi_square = 0.0;
    let mut positive = 0u32;
    for (label, p) in expected {
        let count = observed[label];
        if *p <= 0.0 {
            if count > 0 {
                return Err(FidelityError::ImpossibleMass {
                    label: label.clone(),
                    count,
                });
            }
            continue;
        }
        positive += 1;
        l1 += (count as f64 / nf - p).abs();
        let e = nf * p;
        chi_square += (count as f64 - e).powi(2) / e;
    }
    let degrees_of_freedom = positive.saturating_sub(1);
    let p_value = chi_square_sf(chi_square, degrees_of_freedom);
    Ok(Divergence {
        n,
        l1,
        chi_square,
        degrees_of_freedom,
        p_value,
    })
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, dof: u32) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    regularized_gamma_q(f64::from(dof) / 2.0, x / 2.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Q(a, x) = Γ(a, x) / Γ(a): series below `a + 1`, Lentz continued
/// fraction above.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        (1.0 - sum * log_prefactor.exp()).clamp(0.0, 1.0)
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (log_prefactor.exp() * h).clamp(0.0, 1.0)
    }
}

/// Pass thresholds. Each applies as stated at or above its reference sample
/// size and widens by `sqrt(reference / n)` below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub cohort_l1: f64,
    pub cohort_reference_n: u64,
    pub keyword_mean_relative: f64,
    pub keyword_reference_notes: u64,
    pub category_l1: f64,
    pub category_reference_mentions: u64,
    pub visit_mean_relative: f64,
    pub visit_type_mix_l1: f64,
    pub visit_reference_patients: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cohort_l1: 0.01,
            cohort_reference_n: 100_000,
            keyword_mean_relative: 0.02,
            keyword_reference_notes: 10_000,
            category_l1: 0.02,
            category_reference_mentions: 1_000_000,
            visit_mean_relative: 0.05,
            visit_type_mix_l1: 0.01,
            visit_reference_patients: 100_000,
        }
    }
}

/// `base` at `n >= reference`, `base * sqrt(reference / n)` below.
pub fn scaled_tolerance(base: f64, reference: u64, n: u64) -> f64 {
    if n == 0 || n >= reference {
        base
    } else {
        base * (reference as f64 / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_square: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

impl From<Divergence> for Metrics {
    fn from(d: Divergence) -> Self {
        Self {
            l1: Some(d.l1),
            chi_square: Some(d.chi_square),
            p_value: Some(d.p_value),
            relative_error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCheck {
    pub name: String,
    pub target: String,
    /// The statistic compared against `tolerance`.
    pub observed: f64,
    pub n: u64,
    pub metrics: Metrics,
    pub tolerance: f64,
    pub status: CheckStatus,
    /// False only when `status` is `fail`.
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl FidelityCheck {
    pub fn new(name: String, target: String, observed: f64, n: u64, metrics: Metrics, tolerance: f64, ok: bool) -> Self {
        Self {
            name,
            target,
            observed,
            n,
            metrics,
            tolerance,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            pass: ok,
            detail: None,
        }
    }

    fn skipped(name: String, target: String, reason: &str) -> Self {
        Self {
            name,
            target,
            observed: 0.0,
            n: 0,
            metrics: Metrics::default(),
            tolerance: 0.0,
            status: CheckStatus::Skipped,
            pass: true,
            detail: Some(reason.to_string()),
        }
    }

    fn failed(name: String, target: String, n: u64, detail: String) -> Self {
        Self {
            name,
            target,
            observed: 0.0,
            n,
            metrics: Metrics::default(),
            tolerance: 0.0,
            status: CheckStatus::Fail,
            pass: false,
            detail: Some(detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FidelityReport {
    pub checks: Vec<FidelityCheck>,
    pub overall_pass: bool,
}

impl FidelityReport {
    pub fn from_checks(checks: Vec<FidelityCheck>) -> Self {
        let overall_pass = checks.iter().all(|c| c.pass);
        Self { checks, overall_pass }
    }

    pub fn merge(reports: impl IntoIterator<Item = FidelityReport>) -> Self {
        Self::from_checks(reports.into_iter().flat_map(|r| r.checks).collect())
    }

    pub fn check(&self, name: &str) -> Option<&FidelityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FidelityCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Compares `observed` to `expected` and turns the result into an L1 check.
fn l1_check(
    name: String,
    target: String,
    observed: &BTreeMap<String, u64>,
    expected: &BTreeMap<String, f64>,
    tolerance: f64,
) -> FidelityCheck {
    match compare_categorical(observed, expected) {
        Ok(d) => FidelityCheck::new(name, target, d.l1, d.n, d.into(), tolerance, d.l1 <= tolerance),
        Err(e) => FidelityCheck::failed(name, target, observed.values().sum(), e.to_string()),
    }
}

pub fn validate_cohort(
    personas: &[Persona],
    cfg: &DistributionConfig,
    tol: &Tolerances,
) -> Result<FidelityReport, FidelityError> {
    if personas.is_empty() {
        return Err(FidelityError::EmptyCohort);
    }
    let n = personas.len() as u64;
    let tolerance = scaled_tolerance(tol.cohort_l1, tol.cohort_reference_n, n);
    let mut checks = Vec::with_capacity(cfg.factors.len());
    for factor in &cfg.factors {
        let expected: BTreeMap<String, f64> = factor
            .categories
            .iter()
            .map(|c| (c.label.clone(), c.probability))
            .collect();
        let mut observed: BTreeMap<String, u64> = expected.keys().map(|k| (k.clone(), 0)).collect();
        for p in personas {
            let label = p.get(&factor.name).ok_or_else(|| FidelityError::MissingAssignment {
                persona: p.patient_id.clone(),
                factor: factor.name.clone(),
            })?;
            *observed.entry(label.to_string()).or_default() += 1;
        }
        checks.push(l1_check(
            format!("cohort/{}", factor.name),
            format!("prevalence of {} categories", factor.categories.len()),
            &observed,
            &expected,
            tolerance,
        ));
    }
    Ok(FidelityReport::from_checks(checks))
}

/// Mean of a zero-truncated Poisson with parameter `lambda`.
fn truncated_mean(lambda: f64) -> f64 {
    lambda / -(-lambda).exp_m1()
}

pub fn validate_keyword_alignment(
    plans: &[VisitPlan],
    cfg: &DistributionConfig,
    tol: &Tolerances,
) -> Result<FidelityReport, FidelityError> {
    let mut per_year: BTreeMap<u8, (u64, u64)> = BTreeMap::new();
    let mut categories: BTreeMap<String, u64> =
        LexiconCategory::ALL.iter().map(|c| (c.as_str().to_string(), 0)).collect();
    for note in plans.iter().flat_map(|p| &p.notes) {
        if note.mentions.is_empty() {
            return Err(FidelityError::MentionsMissing(note.note_id.clone()));
        }
        let entry = per_year.entry(note.year_before_dx).or_default();
        entry.0 += 1;
        entry.1 += note.mentions.len() as u64;
        for m in &note.mentions {
            *categories.entry(m.category.as_str().to_string()).or_default() += 1;
        }
    }

    let mut checks = Vec::new();
    for year in (FIRST_YEAR..=LAST_YEAR).rev() {
        let name = format!("keywords/year_{year}/mean_count");
        let lambda = cfg.keyword_trend.per_year_mean.get(&year).copied().unwrap_or(0.0)
            * cfg.keyword_trend.density_multiplier;
        let target_mean = truncated_mean(lambda);
        let target = format!("mean mentions per note = {target_mean:.4} (rate {lambda:.4}, at least one)");
        match per_year.get(&year) {
            None => checks.push(FidelityCheck::skipped(name, target, "no notes for this year")),
            Some(&(notes, mentions)) => {
                let mean = mentions as f64 / notes as f64;
                let rel = (mean - target_mean).abs() / target_mean;
                let tolerance = scaled_tolerance(tol.keyword_mean_relative, tol.keyword_reference_notes, notes);
                let metrics = Metrics {
                    relative_error: Some(rel),
                    ..Metrics::default()
                };
                checks.push(FidelityCheck::new(name, target, mean, notes, metrics, tolerance, rel <= tolerance));
            }
        }
    }

    let name = "keywords/category_proportions".to_string();
    let target = "normalized category weights".to_string();
    let total: u64 = categories.values().sum();
    if total == 0 {
        checks.push(FidelityCheck::skipped(name, target, "no mentions"));
    } else {
        let expected: BTreeMap<String, f64> = cfg
            .category_weights
            .normalized()
            .map_err(|_| FidelityError::NotNormalized(f64::NAN))?
            .into_iter()
            .map(|(c, p)| (c.as_str().to_string(), p))
            .collect();
        let mut expected_full: BTreeMap<String, f64> = categories.keys().map(|k| (k.clone(), 0.0)).collect();
        expected_full.extend(expected);
        let tolerance = scaled_tolerance(tol.category_l1, tol.category_reference_mentions, total);
        checks.push(l1_check(name, target, &categories, &expected_full, tolerance));
    }
    Ok(FidelityReport::from_checks(checks))
}

pub fn validate_visit_alignment(
    plans: &[VisitPlan],
    cfg: &DistributionConfig,
    tol: &Tolerances,
) -> Result<FidelityReport, FidelityError> {
    if plans.is_empty() {
        return Err(FidelityError::EmptyPlans);
    }
    let patients = plans.len() as u64;
    let table = &cfg.visits;
    let mut counts: BTreeMap<(usize, NoteType), u64> = BTreeMap::new();
    let mut by_type: BTreeMap<String, u64> = BTreeMap::new();
    for note in plans.iter().flat_map(|p| &p.notes) {
        if let Some(w) = table.windows.iter().position(|w| w.contains(note.year_before_dx)) {
            *counts.entry((w, note.note_type)).or_default() += 1;
        }
        *by_type.entry(note.note_type.as_str().to_string()).or_default() += 1;
    }

    let tolerance = scaled_tolerance(tol.visit_mean_relative, tol.visit_reference_patients, patients);
    let mut checks = Vec::new();
    for note_type in table.note_types() {
        for (w, window) in table.windows.iter().enumerate() {
            let expected = table.mean(note_type, &window.id).unwrap_or(0.0);
            let observed_count = counts.get(&(w, note_type)).copied().unwrap_or(0);
            let mean = observed_count as f64 / patients as f64;
            let name = format!("visits/{}/{}", note_type.as_str(), window.id);
            let target = format!("mean notes per patient in window = {expected}");
            if expected <= 0.0 {
                let mut check = FidelityCheck::new(name, target, mean, patients, Metrics::default(), 0.0, observed_count == 0);
                if observed_count > 0 {
                    check.detail = Some(format!("{observed_count} note(s) in a zero-rate cell"));
                }
                checks.push(check);
                continue;
            }
            let rel = (mean - expected).abs() / expected;
            let metrics = Metrics {
                relative_error: Some(rel),
                ..Metrics::default()
            };
            checks.push(FidelityCheck::new(name, target, mean, patients, metrics, tolerance, rel <= tolerance));
        }
    }

    let total_expected = table.expected_total();
    let name = "visits/type_mix".to_string();
    let target = "share of notes by visit type".to_string();
    if by_type.values().sum::<u64>() == 0 || total_expected <= 0.0 {
        checks.push(FidelityCheck::skipped(name, target, "no notes"));
    } else {
        let expected: BTreeMap<String, f64> = table
            .note_types()
            .map(|nt| {
                let row: f64 = table.means[&nt].values().sum();
                (nt.as_str().to_string(), row / total_expected)
            })
            .collect();
        let mut observed: BTreeMap<String, u64> = expected.keys().map(|k| (k.clone(), 0)).collect();
        for (k, v) in by_type {
            *observed.entry(k).or_default() += v;
        }
        let tol_mix = scaled_tolerance(tol.visit_type_mix_l1, tol.visit_reference_patients, patients);
        checks.push(l1_check(name, target, &observed, &expected, tol_mix));
    }
    Ok(FidelityReport::from_checks(checks))
}
