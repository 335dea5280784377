//! Statistical tables that drive every sampling stage.
//!
//! A [`DistributionConfig`] is loaded once, validated, and then shared
//! read-only by all stages. Probability vectors that are within
//! [`RENORMALIZE_TOLERANCE`] of summing to one are rescaled on load; anything
//! further off is rejected.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::defaults;

/// Schema version written by [`DistributionConfig::to_json`] and accepted by
/// [`load_config`].
pub const CONFIG_VERSION: &str = "cohortforge.config/v1";

/// Largest deviation of a probability sum from 1 that is silently fixed.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// Sums closer to 1 than this are left untouched so that reloading a saved
/// config is an exact round trip.
const EXACT_SUM_TOLERANCE: f64 = 1e-12;

/// First and last modeled year before diagnosis.
pub const FIRST_YEAR: u8 = 1;
pub const LAST_YEAR: u8 = 10;

pub const STAGE_VOCABULARY: [&str; 4] = [
    "Early prodromal stage",
    "Mild cognitive impairment stage",
    "Mild dementia stage",
    "Moderate dementia stage",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config schema error: {0}")]
    Schema(String),
    #[error("config validation error: {0}")]
    Validation(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Validation(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorGroup {
    DemographicSocioeconomic,
    MedicalBiological,
    LifestyleEnvironmental,
    PsychosocialStress,
    AccessToCare,
    DevelopmentalLifecourse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub label: String,
    pub probability: f64,
}

/// One categorical risk factor and its prevalence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    pub name: String,
    pub group: FactorGroup,
    pub categories: Vec<Category>,
}

impl FactorSpec {
    pub fn new(name: &str, group: FactorGroup, categories: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            group,
            categories: categories
                .iter()
                .map(|(label, p)| Category {
                    label: label.to_string(),
                    probability: *p,
                })
                .collect(),
        }
    }

    pub fn probability_of(&self, label: &str) -> Option<f64> {
        self.categories
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.probability)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.label.as_str())
    }

    /// Checks the invariants and rescales probabilities that are within
    /// [`RENORMALIZE_TOLERANCE`] of summing to one. Returns the pre-rescale
    /// sum.
    pub fn validate_and_normalize(&mut self) -> Result<f64, ConfigError> {
        if self.name.trim().is_empty() {
            return invalid("factor with empty name");
        }
        if self.categories.is_empty() {
            return invalid(format!("factor '{}' has no categories", self.name));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.categories {
            if c.label.trim().is_empty() {
                return invalid(format!("factor '{}' has an empty category label", self.name));
            }
            if !seen.insert(c.label.as_str()) {
                return invalid(format!(
                    "factor '{}' repeats category '{}'",
                    self.name, c.label
                ));
            }
            if !c.probability.is_finite() || !(0.0..=1.0).contains(&c.probability) {
                return invalid(format!(
                    "factor '{}' category '{}' has probability {} outside [0, 1]",
                    self.name, c.label, c.probability
                ));
            }
        }
        let sum: f64 = self.categories.iter().map(|c| c.probability).sum();
        let deviation = (sum - 1.0).abs();
        if deviation > RENORMALIZE_TOLERANCE {
            return invalid(format!(
                "factor '{}' probabilities sum to {sum}, not 1",
                self.name
            ));
        }
        if deviation > EXACT_SUM_TOLERANCE {
            for c in &mut self.categories {
                c.probability /= sum;
            }
        }
        Ok(sum)
    }
}

/// Generation-side symptom domains of the keyword lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconCategory {
    SpeechLanguage,
    Memory,
    LearningPerception,
    AssistanceNeeded,
    PhysiologicalChanges,
    NeuropsychiatricSymptoms,
}

impl LexiconCategory {
    pub const ALL: [LexiconCategory; 6] = [
        LexiconCategory::SpeechLanguage,
        LexiconCategory::Memory,
        LexiconCategory::LearningPerception,
        LexiconCategory::AssistanceNeeded,
        LexiconCategory::PhysiologicalChanges,
        LexiconCategory::NeuropsychiatricSymptoms,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LexiconCategory::SpeechLanguage => "speech_language",
            LexiconCategory::Memory => "memory",
            LexiconCategory::LearningPerception => "learning_perception",
            LexiconCategory::AssistanceNeeded => "assistance_needed",
            LexiconCategory::PhysiologicalChanges => "physiological_changes",
            LexiconCategory::NeuropsychiatricSymptoms => "neuropsychiatric_symptoms",
        }
    }
}

impl fmt::Display for LexiconCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeywordLexicon {
    pub keywords: BTreeMap<LexiconCategory, Vec<String>>,
}

impl KeywordLexicon {
    pub fn get(&self, category: LexiconCategory) -> Option<&[String]> {
        self.keywords.get(&category).map(Vec::as_slice)
    }

    pub fn total_keywords(&self) -> usize {
        self.keywords.values().map(Vec::len).sum()
    }

    /// Category owning `keyword`, compared case-insensitively.
    pub fn category_of(&self, keyword: &str) -> Option<LexiconCategory> {
        let needle = keyword.to_lowercase();
        self.keywords
            .iter()
            .find(|(_, kws)| kws.iter().any(|k| k.to_lowercase() == needle))
            .map(|(c, _)| *c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for category in LexiconCategory::ALL {
            match self.keywords.get(&category) {
                None => return invalid(format!("lexicon is missing category '{category}'")),
                Some(kws) if kws.is_empty() => {
                    return invalid(format!("lexicon category '{category}' has no keywords"))
                }
                Some(_) => {}
            }
        }
        let mut owner: HashMap<String, (LexiconCategory, &str)> = HashMap::new();
        for (category, kws) in &self.keywords {
            for kw in kws {
                if kw.trim().is_empty() || kw.trim() != kw {
                    return invalid(format!(
                        "lexicon category '{category}' has a blank or padded keyword '{kw}'"
                    ));
                }
                if let Some((prev, first)) = owner.insert(kw.to_lowercase(), (*category, kw)) {
                    return invalid(format!(
                        "keyword '{kw}' in '{category}' duplicates '{first}' in '{prev}'"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Visit settings that produce notes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteType {
    PrimaryCare,
    Neurology,
    MemoryClinic,
    Neuropsychology,
    Geriatrics,
    PsychiatryMentalHealth,
    Emergency,
    Hbpc,
}

impl NoteType {
    pub const ALL: [NoteType; 8] = [
        NoteType::PrimaryCare,
        NoteType::Neurology,
        NoteType::MemoryClinic,
        NoteType::Neuropsychology,
        NoteType::Geriatrics,
        NoteType::PsychiatryMentalHealth,
        NoteType::Emergency,
        NoteType::Hbpc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NoteType::PrimaryCare => "primary_care",
            NoteType::Neurology => "neurology",
            NoteType::MemoryClinic => "memory_clinic",
            NoteType::Neuropsychology => "neuropsychology",
            NoteType::Geriatrics => "geriatrics",
            NoteType::PsychiatryMentalHealth => "psychiatry_mental_health",
            NoteType::Emergency => "emergency",
            NoteType::Hbpc => "hbpc",
        }
    }

    /// Human-readable visit type used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            NoteType::PrimaryCare => "Primary care",
            NoteType::Neurology => "Neurology",
            NoteType::MemoryClinic => "Memory clinic",
            NoteType::Neuropsychology => "Neuropsychology",
            NoteType::Geriatrics => "Geriatrics",
            NoteType::PsychiatryMentalHealth => "Psychiatry/Mental health",
            NoteType::Emergency => "Emergency visit",
            NoteType::Hbpc => "Home-based primary care (HBPC)",
        }
    }
}

impl fmt::Display for NoteType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An inclusive span of years before diagnosis, `from_year >= to_year`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitWindow {
    pub id: String,
    pub from_year: u8,
    pub to_year: u8,
}

impl VisitWindow {
    pub fn contains(&self, year: u8) -> bool {
        (self.to_year..=self.from_year).contains(&year)
    }

    pub fn len_years(&self) -> u8 {
        self.from_year - self.to_year + 1
    }

    pub fn years(&self) -> impl Iterator<Item = u8> {
        (self.to_year..=self.from_year).rev()
    }
}

/// Expected notes per patient for each window (a per-window total).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitTypeTable {
    pub windows: Vec<VisitWindow>,
    pub means: BTreeMap<NoteType, BTreeMap<String, f64>>,
}

impl VisitTypeTable {
    pub fn mean(&self, note_type: NoteType, window_id: &str) -> Option<f64> {
        self.means.get(&note_type)?.get(window_id).copied()
    }

    pub fn note_types(&self) -> impl Iterator<Item = NoteType> + '_ {
        self.means.keys().copied()
    }

    /// Sum of every cell: the expected number of notes per patient.
    pub fn expected_total(&self) -> f64 {
        self.means.values().flat_map(|w| w.values()).sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.windows.is_empty() {
            return invalid("visit table has no windows");
        }
        let mut ids = std::collections::HashSet::new();
        for w in &self.windows {
            if !ids.insert(w.id.as_str()) {
                return invalid(format!("visit window '{}' declared twice", w.id));
            }
            if w.from_year < w.to_year {
                return invalid(format!(
                    "visit window '{}' runs from {} to {}; expected a descending range",
                    w.id, w.from_year, w.to_year
                ));
            }
        }
        for year in FIRST_YEAR..=LAST_YEAR {
            let hits = self.windows.iter().filter(|w| w.contains(year)).count();
            if hits != 1 {
                return invalid(format!(
                    "year {year} is covered by {hits} visit windows; windows must partition years 1-10"
                ));
            }
        }
        if self
            .windows
            .iter()
            .any(|w| w.to_year < FIRST_YEAR || w.from_year > LAST_YEAR)
        {
            return invalid("visit windows extend outside years 1-10");
        }
        if self.means.is_empty() {
            return invalid("visit table has no note types");
        }
        for (note_type, row) in &self.means {
            for w in &self.windows {
                match row.get(&w.id) {
                    None => {
                        return invalid(format!(
                            "visit table row '{note_type}' has no value for window '{}'",
                            w.id
                        ))
                    }
                    Some(v) if !v.is_finite() || *v < 0.0 => {
                        return invalid(format!(
                            "visit table cell ({note_type}, {}) = {v} is not a non-negative number",
                            w.id
                        ))
                    }
                    Some(_) => {}
                }
            }
            if let Some(extra) = row.keys().find(|k| !ids.contains(k.as_str())) {
                return invalid(format!(
                    "visit table row '{note_type}' references unknown window '{extra}'"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordTrendTable {
    pub per_year_mean: BTreeMap<u8, f64>,
    pub density_multiplier: f64,
}

impl KeywordTrendTable {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for year in FIRST_YEAR..=LAST_YEAR {
            match self.per_year_mean.get(&year) {
                None => return invalid(format!("keyword trend is missing year {year}")),
                Some(v) if !v.is_finite() || *v <= 0.0 => {
                    return invalid(format!("keyword trend for year {year} is {v}; must be > 0"))
                }
                Some(_) => {}
            }
        }
        if self.per_year_mean.len() != usize::from(LAST_YEAR) {
            return invalid("keyword trend has years outside 1-10");
        }
        if !self.density_multiplier.is_finite() || self.density_multiplier <= 0.0 {
            return invalid(format!(
                "density multiplier {} must be > 0",
                self.density_multiplier
            ));
        }
        Ok(())
    }
}

/// Relative mention weight per lexicon category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryWeightTable {
    pub weights: BTreeMap<LexiconCategory, f64>,
}

impl CategoryWeightTable {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for category in LexiconCategory::ALL {
            if !self.weights.contains_key(&category) {
                return invalid(format!("category weights are missing '{category}'"));
            }
        }
        normalize_weights(&self.weights).map(|_| ())
    }

    pub fn normalized(&self) -> Result<BTreeMap<LexiconCategory, f64>, ConfigError> {
        normalize_weights(&self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageMap {
    pub stage_by_year: BTreeMap<u8, String>,
}

impl StageMap {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for year in FIRST_YEAR..=LAST_YEAR {
            match self.stage_by_year.get(&year) {
                None => return invalid(format!("stage map is missing year {year}")),
                Some(label) if !STAGE_VOCABULARY.contains(&label.as_str()) => {
                    return invalid(format!(
                        "stage map year {year} has unknown stage '{label}'"
                    ))
                }
                Some(_) => {}
            }
        }
        if self.stage_by_year.len() != usize::from(LAST_YEAR) {
            return invalid("stage map has years outside 1-10");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub backend: BackendKind,
    /// Model name sent to HTTP backends; the environment variable wins when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    pub retry_base_delay_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            model: None,
            temperature: 0.7,
            max_output_tokens: 1500,
            max_retries: 3,
            concurrency_limit: 4,
            retry_base_delay_ms: 500,
            request_timeout_secs: 120,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return invalid(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        if self.concurrency_limit == 0 {
            return invalid("concurrency_limit must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionConfig {
    pub version: String,
    pub factors: Vec<FactorSpec>,
    pub lexicon: KeywordLexicon,
    pub visits: VisitTypeTable,
    pub keyword_trend: KeywordTrendTable,
    pub category_weights: CategoryWeightTable,
    pub stage_map: StageMap,
    pub generation_params: GenerationParams,
}

impl DistributionConfig {
    pub fn factor(&self, name: &str) -> Option<&FactorSpec> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Validates every table in place. Returns the largest probability
    /// correction applied to any factor.
    pub fn validate(&mut self) -> Result<f64, ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Schema(format!(
                "unsupported config version '{}' (expected '{CONFIG_VERSION}')",
                self.version
            )));
        }
        if self.factors.is_empty() {
            return Err(ConfigError::Schema("config declares no factors".into()));
        }
        let mut names = std::collections::HashSet::new();
        let mut max_correction: f64 = 0.0;
        for factor in &mut self.factors {
            if !names.insert(factor.name.clone()) {
                return invalid(format!("factor '{}' declared twice", factor.name));
            }
            let sum = factor.validate_and_normalize()?;
            max_correction = max_correction.max((sum - 1.0).abs());
        }
        self.lexicon.validate()?;
        self.visits.validate()?;
        self.keyword_trend.validate()?;
        self.category_weights.validate()?;
        self.stage_map.validate()?;
        self.generation_params.validate()?;
        Ok(max_correction)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Parses, validates, and normalizes a config from `source`.
pub fn load_config<R: Read>(mut source: R) -> Result<DistributionConfig, ConfigError> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| ConfigError::Parse(e.to_string()))?;
    load_config_str(&text)
}

pub fn load_config_str(text: &str) -> Result<DistributionConfig, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ConfigError::Schema("config must be a JSON object".into()))?;
    match obj.get("version").and_then(|v| v.as_str()) {
        None => return Err(ConfigError::Schema("missing 'version' field".into())),
        Some(v) if v != CONFIG_VERSION => {
            return Err(ConfigError::Schema(format!(
                "unsupported config version '{v}' (expected '{CONFIG_VERSION}')"
            )))
        }
        Some(_) => {}
    }
    let mut cfg: DistributionConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::Schema(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// The shipped tables.
pub fn default_config() -> DistributionConfig {
    defaults::build()
}

/// Rescales positive weights into a probability vector.
pub fn normalize_weights<K: Ord + Clone + fmt::Debug>(
    weights: &BTreeMap<K, f64>,
) -> Result<BTreeMap<K, f64>, ConfigError> {
    if weights.is_empty() {
        return invalid("no weights to normalize");
    }
    for (k, w) in weights {
        if !w.is_finite() || *w <= 0.0 {
            return invalid(format!("weight for {k:?} is {w}; weights must be > 0"));
        }
    }
    let total: f64 = weights.values().sum();
    Ok(weights
        .iter()
        .map(|(k, w)| (k.clone(), w / total))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json(age: &str) -> String {
        let mut cfg = default_config();
        cfg.factors.truncate(1);
        let mut v = serde_json::to_value(&cfg).unwrap();
        v["factors"][0]["categories"] = serde_json::from_str(age).unwrap();
        v.to_string()
    }

    #[test]
    fn default_age_factor() {
        let cfg = default_config();
        let age = cfg.factor("Age").unwrap();
        let probs: Vec<f64> = age.categories.iter().map(|c| c.probability).collect();
        assert_eq!(probs, vec![0.08, 0.22, 0.45, 0.25]);
        assert_eq!(age.probability_of("75–84"), Some(0.45));
    }

    #[test]
    fn default_tables_spot_values() {
        let cfg = default_config();
        assert_eq!(cfg.keyword_trend.per_year_mean[&1], 4.160);
        assert_eq!(cfg.keyword_trend.per_year_mean[&10], 2.745);
        assert_eq!(cfg.keyword_trend.density_multiplier, 5.0);
        assert_eq!(cfg.visits.mean(NoteType::PrimaryCare, "1 Year Before"), Some(5.01));
        assert_eq!(
            cfg.category_weights.weights[&LexiconCategory::PhysiologicalChanges],
            8.766
        );
        assert_eq!(cfg.lexicon.get(LexiconCategory::Memory).unwrap().len(), 10);
    }

    #[test]
    fn default_config_needs_no_renormalization() {
        let mut cfg = default_config();
        let correction = cfg.validate().unwrap();
        assert!(correction <= 1e-9, "correction {correction}");
        assert_eq!(cfg, default_config());
    }

    #[test]
    fn round_trip_default() {
        let cfg = default_config();
        let back = load_config(cfg.to_json().as_bytes()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn degenerate_single_factor() {
        let cfg = load_config_str(&minimal_json(r#"[{"label":"X","probability":1.0}]"#)).unwrap();
        assert_eq!(cfg.factors.len(), 1);
        assert_eq!(cfg.factors[0].categories[0].probability, 1.0);
    }

    #[test]
    fn sum_far_from_one_rejected() {
        let age = r#"[{"label":"a","probability":0.3},{"label":"b","probability":0.3},
                      {"label":"c","probability":0.3},{"label":"d","probability":0.3}]"#;
        assert!(matches!(
            load_config_str(&minimal_json(age)),
            Err(ConfigError::Validation(_))
        ));
    }

    #[test]
    fn near_one_sum_is_renormalized_and_stable() {
        let age = r#"[{"label":"a","probability":0.5000004},{"label":"b","probability":0.5}]"#;
        let cfg = load_config_str(&minimal_json(age)).unwrap();
        let sum: f64 = cfg.factors[0].categories.iter().map(|c| c.probability).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let again = load_config_str(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn negative_probability_rejected() {
        let age = r#"[{"label":"a","probability":1.1},{"label":"b","probability":-0.1}]"#;
        assert!(matches!(
            load_config_str(&minimal_json(age)),
            Err(ConfigError::Validation(_))
        ));
    }

    #[test]
    fn duplicate_keyword_rejected() {
        let mut cfg = default_config();
        cfg.lexicon
            .keywords
            .get_mut(&LexiconCategory::Memory)
            .unwrap()
            .push("Gait".into());
        let err = load_config_str(&cfg.to_json()).unwrap_err();
        assert!(matches!(err, ConfigError::Validation(ref m) if m.contains("Gait")), "{err}");
    }

    #[test]
    fn unknown_version_and_missing_pieces() {
        let mut v = serde_json::to_value(default_config()).unwrap();
        v["version"] = "cohortforge.config/v0".into();
        assert!(matches!(load_config_str(&v.to_string()), Err(ConfigError::Schema(_))));

        let mut v = serde_json::to_value(default_config()).unwrap();
        v["factors"] = serde_json::json!([]);
        assert!(matches!(load_config_str(&v.to_string()), Err(ConfigError::Schema(_))));

        let mut v = serde_json::to_value(default_config()).unwrap();
        v.as_object_mut().unwrap().remove("stage_map");
        assert!(matches!(load_config_str(&v.to_string()), Err(ConfigError::Schema(_))));

        assert!(matches!(load_config_str("{not json"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn visit_windows_must_partition() {
        let mut cfg = default_config();
        cfg.visits.windows[0].to_year = 6;
        assert!(matches!(cfg.validate(), Err(ConfigError::Validation(_))));
    }

    #[test]
    fn stage_vocabulary_enforced() {
        let mut cfg = default_config();
        cfg.stage_map.stage_by_year.insert(3, "Severe stage".into());
        assert!(matches!(cfg.validate(), Err(ConfigError::Validation(_))));
    }

    #[test]
    fn normalize_paper_weights() {
        let cfg = default_config();
        let sum: f64 = cfg.category_weights.weights.values().sum();
        // 2.746 + 1.000 + 1.733 + 1.531 + 8.766 + 4.399
        assert!((sum - 20.175).abs() < 1e-12);
        let p = cfg.category_weights.normalized().unwrap();
        assert!((p[&LexiconCategory::Memory] - 1.0 / 20.175).abs() < 1e-15);
        assert!((p[&LexiconCategory::Memory] - 0.04957).abs() < 5e-6);
        assert!((p[&LexiconCategory::PhysiologicalChanges] - 0.43450).abs() < 5e-6);
        let total: f64 = p.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_small_cases() {
        let two: BTreeMap<&str, f64> = [("A", 1.0), ("B", 1.0)].into();
        let p = normalize_weights(&two).unwrap();
        assert_eq!(p["A"], 0.5);
        assert_eq!(p["B"], 0.5);
        let one: BTreeMap<&str, f64> = [("A", 3.0)].into();
        assert_eq!(normalize_weights(&one).unwrap()["A"], 1.0);
        let bad: BTreeMap<&str, f64> = [("A", 1.0), ("B", 0.0)].into();
        assert!(normalize_weights(&bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_weights_are_a_probability_vector(
                ws in proptest::collection::vec(1e-3f64..1e3, 1..12)
            ) {
                let forward: BTreeMap<usize, f64> = ws.iter().copied().enumerate().collect();
                let p = normalize_weights(&forward).unwrap();
                let total: f64 = p.values().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(p.values().all(|v| *v >= 0.0));

                // Same weights keyed in reverse insertion order give the same vector.
                let n = ws.len();
                let mut reversed = BTreeMap::new();
                for (i, w) in ws.iter().enumerate().rev() {
                    reversed.insert(i, *w);
                }
                prop_assert_eq!(normalize_weights(&reversed).unwrap(), p.clone());
                prop_assert_eq!(p.len(), n);
            }
        }
    }
}
