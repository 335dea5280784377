//! Keyword mention sampling for planned notes.
//!
//! Per note: a mention count from the zero-truncated Poisson around
//! `trend[year] * density_multiplier`, then a lexicon category per mention
//! from the normalized category weights, then a keyword uniformly within
//! that category. Mentions are drawn with replacement.

use rand_chacha::rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    CategoryWeightTable, ConfigError, DistributionConfig, KeywordLexicon, KeywordTrendTable, LexiconCategory,
    FIRST_YEAR, LAST_YEAR,
};
use crate::rng::{derive_seed, stream_rng, streams, uniform_index, zero_truncated_poisson, CategoricalTable};
use crate::trajectory::VisitPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error("year {0} is outside the modeled horizon 1-10")]
    YearOutOfRange(u8),
    #[error("category '{0}' is not in the lexicon")]
    UnknownCategory(LexiconCategory),
    #[error("note '{0}' already carries keyword mentions")]
    AlreadyPopulated(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordMention {
    pub category: LexiconCategory,
    pub keyword: String,
}

pub fn expected_keyword_count(trend: &KeywordTrendTable, year: u8) -> Result<f64, SemanticError> {
    if !(FIRST_YEAR..=LAST_YEAR).contains(&year) {
        return Err(SemanticError::YearOutOfRange(year));
    }
    let mean = trend
        .per_year_mean
        .get(&year)
        .ok_or(SemanticError::YearOutOfRange(year))?;
    Ok(mean * trend.density_multiplier)
}

pub fn sample_keyword_count<R: RngCore + ?Sized>(
    trend: &KeywordTrendTable,
    year: u8,
    rng: &mut R,
) -> Result<u32, SemanticError> {
    let lambda = expected_keyword_count(trend, year)?;
    Ok(zero_truncated_poisson(rng, lambda) as u32)
}

/// Precomputed category and keyword tables for repeated draws.
#[derive(Debug, Clone)]
pub struct MentionSampler<'a> {
    lexicon: &'a KeywordLexicon,
    categories: Vec<LexiconCategory>,
    table: CategoricalTable,
}

impl<'a> MentionSampler<'a> {
    pub fn new(weights: &CategoryWeightTable, lexicon: &'a KeywordLexicon) -> Result<Self, SemanticError> {
        let normalized = weights.normalized()?;
        let categories: Vec<LexiconCategory> = normalized.keys().copied().collect();
        let probs: Vec<f64> = normalized.values().copied().collect();
        Ok(Self {
            lexicon,
            categories,
            table: CategoricalTable::new(&probs),
        })
    }

    pub fn from_config(cfg: &'a DistributionConfig) -> Result<Self, SemanticError> {
        Self::new(&cfg.category_weights, &cfg.lexicon)
    }

    pub fn category<R: RngCore + ?Sized>(&self, rng: &mut R) -> LexiconCategory {
        self.categories[self.table.sample(rng)]
    }

    pub fn keyword<R: RngCore + ?Sized>(&self, category: LexiconCategory, rng: &mut R) -> Result<&'a str, SemanticError> {
        sample_keyword(self.lexicon, category, rng)
    }

    pub fn mention<R: RngCore + ?Sized>(&self, rng: &mut R) -> Result<KeywordMention, SemanticError> {
        let category = self.category(rng);
        let keyword = self.keyword(category, rng)?.to_string();
        Ok(KeywordMention { category, keyword })
    }
}

pub fn sample_category<R: RngCore + ?Sized>(weights: &CategoryWeightTable, rng: &mut R) -> Result<LexiconCategory, SemanticError> {
    let normalized = weights.normalized()?;
    let probs: Vec<f64> = normalized.values().copied().collect();
    let idx = crate::rng::categorical_index(rng, &probs);
    Ok(*normalized.keys().nth(idx).expect("index within table"))
}

pub fn sample_keyword<'a, R: RngCore + ?Sized>(
    lexicon: &'a KeywordLexicon,
    category: LexiconCategory,
    rng: &mut R,
) -> Result<&'a str, SemanticError> {
    let keywords = lexicon
        .get(category)
        .filter(|k| !k.is_empty())
        .ok_or(SemanticError::UnknownCategory(category))?;
    Ok(keywords[uniform_index(rng, keywords.len())].as_str())
}

/// Fills every note's mentions. Each note draws from its own generator keyed
/// by the plan seed and the note's position, so notes can be processed in
/// any order.
pub fn populate_mentions(cfg: &DistributionConfig, plan: &VisitPlan) -> Result<VisitPlan, SemanticError> {
    let sampler = MentionSampler::from_config(cfg)?;
    let mentions_seed = derive_seed(plan.seed, streams::MENTIONS);
    let mut out = plan.clone();
    for (i, note) in out.notes.iter_mut().enumerate() {
        if !note.mentions.is_empty() {
            return Err(SemanticError::AlreadyPopulated(note.note_id.clone()));
        }
        let mut rng = stream_rng(mentions_seed, i as u64);
        let count = sample_keyword_count(&cfg.keyword_trend, note.year_before_dx, &mut rng)?;
        note.mentions = (0..count)
            .map(|_| sampler.mention(&mut rng))
            .collect::<Result<_, _>>()?;
    }
    Ok(out)
}
