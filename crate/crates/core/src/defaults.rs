//! Shipped prevalence, visit, keyword, and stage tables.

use std::collections::BTreeMap;

use crate::config::{
    CategoryWeightTable, DistributionConfig, FactorGroup, FactorSpec, GenerationParams,
    KeywordLexicon, KeywordTrendTable, LexiconCategory, NoteType, StageMap, VisitTypeTable,
    VisitWindow, CONFIG_VERSION,
};

use FactorGroup::*;

fn yes_no(name: &str, group: FactorGroup, yes: f64, no: f64) -> FactorSpec {
    FactorSpec::new(name, group, &[("Yes", yes), ("No", no)])
}

/// Diagnosis factors whose published rows cover only part of the
/// population; the remainder is carried by an explicit "None" row.
fn diagnosis(name: &str, diagnosed: f64, undiagnosed: f64, untreated: f64, none: f64) -> FactorSpec {
    FactorSpec::new(
        name,
        MedicalBiological,
        &[
            ("Diagnosed", diagnosed),
            ("Undiagnosed", undiagnosed),
            ("Untreated", untreated),
            ("None", none),
        ],
    )
}

pub(crate) fn factors() -> Vec<FactorSpec> {
    vec![
        FactorSpec::new(
            "Age",
            DemographicSocioeconomic,
            &[
                ("<65 (early-onset)", 0.08),
                ("65–74", 0.22),
                ("75–84", 0.45),
                ("≥85", 0.25),
            ],
        ),
        FactorSpec::new(
            "Gender",
            DemographicSocioeconomic,
            &[("Male", 0.42), ("Female", 0.56), ("Non-binary/Other", 0.02)],
        ),
        FactorSpec::new(
            "Race",
            DemographicSocioeconomic,
            &[
                ("White", 0.58),
                ("Black or African American", 0.22),
                ("Asian", 0.08),
                ("American Indian or Alaska Native", 0.005),
                ("Native Hawaiian or Other Pacific Islander", 0.005),
                ("Mixed/Multiracial", 0.06),
                ("Others/unknown", 0.05),
            ],
        ),
        FactorSpec::new(
            "Ethnicity",
            DemographicSocioeconomic,
            &[
                ("Hispanic/Latino", 0.15),
                ("Non-Hispanic/Latino", 0.80),
                ("Others/unknown", 0.05),
            ],
        ),
        FactorSpec::new(
            "Geographic Location",
            DemographicSocioeconomic,
            &[("Urban", 0.55), ("Suburban", 0.30), ("Rural", 0.15)],
        ),
        FactorSpec::new(
            "Education Level",
            DemographicSocioeconomic,
            &[
                ("No formal education", 0.03),
                ("Primary", 0.25),
                ("Secondary", 0.45),
                ("College", 0.20),
                ("Postgraduate", 0.07),
            ],
        ),
        FactorSpec::new(
            "Financial Status",
            DemographicSocioeconomic,
            &[("Low income", 0.38), ("Middle income", 0.55), ("High income", 0.07)],
        ),
        FactorSpec::new(
            "Employment/Occupation",
            DemographicSocioeconomic,
            &[
                ("Retired", 0.65),
                ("Manual labor", 0.20),
                ("Professional", 0.10),
                ("Unemployed", 0.05),
            ],
        ),
        FactorSpec::new(
            "Health Insurance",
            DemographicSocioeconomic,
            &[
                ("None", 0.05),
                ("Public (e.g., Medicare/Medicaid)", 0.75),
                ("Private", 0.20),
            ],
        ),
        FactorSpec::new(
            "Health Literacy",
            DemographicSocioeconomic,
            &[("Low", 0.35), ("Moderate", 0.50), ("High", 0.15)],
        ),
        FactorSpec::new(
            "Housing Instability",
            DemographicSocioeconomic,
            &[
                ("Stable", 0.82),
                ("Unstable (eviction/foreclosure)", 0.15),
                ("Homeless", 0.03),
            ],
        ),
        yes_no("Family History of AD", MedicalBiological, 0.28, 0.72),
        yes_no("Hypertension", MedicalBiological, 0.68, 0.32),
        yes_no("Diabetes", MedicalBiological, 0.34, 0.66),
        yes_no("Cardiovascular Disease", MedicalBiological, 0.45, 0.55),
        yes_no("Obesity", MedicalBiological, 0.41, 0.59),
        yes_no("Stroke History", MedicalBiological, 0.18, 0.82),
        yes_no("Autoimmune Disorders", MedicalBiological, 0.12, 0.88),
        yes_no("Traumatic Brain Injury (TBI)", MedicalBiological, 0.09, 0.91),
        yes_no("Epilepsy", MedicalBiological, 0.04, 0.96),
        yes_no("Chronic Inflammation", MedicalBiological, 0.27, 0.73),
        diagnosis("Depression Diagnosis", 0.22, 0.15, 0.08, 0.55),
        diagnosis("Anxiety Diagnosis", 0.18, 0.12, 0.07, 0.63),
        diagnosis("Bipolar Disorder Diagnosis", 0.04, 0.02, 0.01, 0.93),
        diagnosis("Schizophrenia Diagnosis", 0.03, 0.01, 0.005, 0.955),
        yes_no("PTSD", MedicalBiological, 0.11, 0.89),
        FactorSpec::new(
            "Hearing Loss Severity",
            MedicalBiological,
            &[("None", 0.45), ("Mild", 0.35), ("Moderate", 0.15), ("Severe", 0.05)],
        ),
        FactorSpec::new(
            "Vision Loss Severity",
            MedicalBiological,
            &[("None", 0.50), ("Mild", 0.30), ("Moderate", 0.15), ("Severe", 0.05)],
        ),
        yes_no("Chronic Pain", MedicalBiological, 0.39, 0.61),
        yes_no("Acute Pain", MedicalBiological, 0.25, 0.75),
        yes_no("Physical Disability", MedicalBiological, 0.33, 0.67),
        yes_no("Cognitive Disability", MedicalBiological, 0.28, 0.72),
        FactorSpec::new(
            "Diet Type",
            LifestyleEnvironmental,
            &[("Balanced", 0.48), ("Poor (high processed foods)", 0.52)],
        ),
        yes_no("Substance Abuse (legal/illicit)", LifestyleEnvironmental, 0.17, 0.83),
        FactorSpec::new(
            "Smoking Status",
            LifestyleEnvironmental,
            &[("Never", 0.45), ("Former", 0.35), ("Current", 0.20)],
        ),
        FactorSpec::new(
            "Alcohol Use",
            LifestyleEnvironmental,
            &[("None", 0.40), ("Moderate", 0.50), ("Heavy", 0.10)],
        ),
        FactorSpec::new(
            "Physical Activity Level",
            LifestyleEnvironmental,
            &[("Sedentary", 0.55), ("Moderate", 0.35), ("Active", 0.10)],
        ),
        FactorSpec::new(
            "Sleep Patterns",
            LifestyleEnvironmental,
            &[("Regular", 0.60), ("Irregular", 0.40)],
        ),
        yes_no("Air Pollution Exposure", LifestyleEnvironmental, 0.35, 0.65),
        yes_no("Physical Abuse", PsychosocialStress, 0.07, 0.93),
        yes_no("Emotional Abuse", PsychosocialStress, 0.15, 0.85),
        yes_no("Sexual Abuse", PsychosocialStress, 0.04, 0.96),
        yes_no("Combat Exposure", PsychosocialStress, 0.06, 0.94),
        yes_no("Racism/Discrimination", PsychosocialStress, 0.22, 0.78),
        yes_no("Legal Problems", PsychosocialStress, 0.09, 0.91),
        yes_no("Cultural Stigma Around AD", PsychosocialStress, 0.31, 0.69),
        yes_no("Internalized Shame/Guilt", PsychosocialStress, 0.19, 0.81),
        FactorSpec::new(
            "Social Engagement",
            PsychosocialStress,
            &[
                ("High (regular social interaction)", 0.35),
                ("Moderate", 0.45),
                ("Isolated", 0.20),
            ],
        ),
        FactorSpec::new(
            "Marital Status",
            PsychosocialStress,
            &[
                ("Single", 0.15),
                ("Married", 0.50),
                ("Divorced", 0.25),
                ("Widowed", 0.10),
            ],
        ),
        FactorSpec::new(
            "Caregiver Availability",
            PsychosocialStress,
            &[
                ("Family", 0.65),
                ("Professional caregiver", 0.25),
                ("None", 0.10),
            ],
        ),
        FactorSpec::new(
            "Stress Levels",
            PsychosocialStress,
            &[("Low", 0.25), ("Moderate", 0.50), ("High", 0.25)],
        ),
        FactorSpec::new(
            "Proximity to Healthcare",
            AccessToCare,
            &[("Easy access", 0.60), ("Limited access", 0.30), ("Hard", 0.10)],
        ),
        FactorSpec::new(
            "Public Transport Access",
            AccessToCare,
            &[("Easy access", 0.55), ("Limited access", 0.30), ("No access", 0.15)],
        ),
        FactorSpec::new(
            "Primary Language",
            AccessToCare,
            &[("English", 0.82), ("Spanish", 0.12), ("Other", 0.06)],
        ),
        yes_no("Childhood Trauma", DevelopmentalLifecourse, 0.13, 0.87),
        yes_no("Undocumented Immigrant Status", DevelopmentalLifecourse, 0.04, 0.96),
    ]
}

pub(crate) fn lexicon() -> KeywordLexicon {
    let table: [(LexiconCategory, &[&str]); 6] = [
        (
            LexiconCategory::SpeechLanguage,
            &[
                "communication", "speech", "speaking",
                "word-finding", "word-retrieval", "naming", "encoding", "phonemic",
                "aphasia", "paraphasia", "anomia", "dysnomia",
                "fluency", "perseveration", "repetition",
                "language", "linguistic",
                "comprehend", "understand", "alexia",
            ],
        ),
        (
            LexiconCategory::Memory,
            &[
                "memory", "amnesia", "amnestic",
                "remembering", "recognizing", "recall", "recount", "retain",
                "forget", "lapse",
            ],
        ),
        (
            LexiconCategory::LearningPerception,
            &[
                "attention", "concentration", "focus",
                "learning", "abstraction", "problem-solving",
                "executive function", "cognitive", "neurocognitive", "thinking", "processing",
                "visuospatial", "multidomain", "global", "agnosia",
                "getting lost", "trouble finding", "disoriented", "confusion",
                "Handwriting deterioration",
            ],
        ),
        (
            LexiconCategory::AssistanceNeeded,
            &[
                "eating", "dressing", "grooming", "toileting", "bathing", "mobility",
                "cooking", "housekeeping", "cleaning", "laundry", "shopping",
                "phone use", "computer use",
                "managing medications", "managing bills", "managing finances",
                "driving", "transportation",
                "medical and legal decision-making",
                "healthcare proxy", "HPOA", "guardian", "guardianship",
                "supervision required",
            ],
        ),
        (
            LexiconCategory::PhysiologicalChanges,
            &[
                "hearing", "auditory", "SNHL", "HoH",
                "vision",
                "smell", "anosmia", "hyposmia",
                "swallowing", "dysphagia",
                "gait", "balance",
                "sleep", "insomnia",
                "pain",
                "incontinence",
            ],
        ),
        (
            LexiconCategory::NeuropsychiatricSymptoms,
            &[
                "mood", "affect", "behavior", "apathy",
                "personality",
                "depressed", "anhedonia",
                "anxiety", "anxious", "agitation", "hypervigilance", "restless", "overwhelmed",
                "insight", "judgment", "impulsive", "anosognosia",
                "anger", "short-tempered", "irritable", "aggressive", "shouting",
                "erratic", "rummaging",
                "wandering",
                "thought disorder",
                "delusion", "hallucination", "paranoia", "psychosis",
            ],
        ),
    ];
    KeywordLexicon {
        keywords: table
            .into_iter()
            .map(|(c, kws)| (c, kws.iter().map(|k| k.to_string()).collect()))
            .collect(),
    }
}

pub(crate) fn visits() -> VisitTypeTable {
    let windows = vec![
        VisitWindow { id: "10–7 Years Before".into(), from_year: 10, to_year: 7 },
        VisitWindow { id: "6–4 Years Before".into(), from_year: 6, to_year: 4 },
        VisitWindow { id: "3–2 Years Before".into(), from_year: 3, to_year: 2 },
        VisitWindow { id: "1 Year Before".into(), from_year: 1, to_year: 1 },
    ];
    let rows: [(NoteType, [f64; 4]); 8] = [
        (NoteType::PrimaryCare, [2.54, 2.59, 2.95, 5.01]),
        (NoteType::Neurology, [0.31, 0.74, 1.18, 2.51]),
        (NoteType::MemoryClinic, [0.31, 0.74, 1.18, 2.51]),
        (NoteType::Neuropsychology, [0.31, 0.74, 1.18, 2.51]),
        (NoteType::Geriatrics, [1.02, 0.74, 0.59, 1.67]),
        (NoteType::PsychiatryMentalHealth, [0.51, 0.74, 0.89, 1.67]),
        (NoteType::Emergency, [1.02, 1.11, 1.18, 2.51]),
        (NoteType::Hbpc, [0.00, 0.00, 0.59, 1.67]),
    ];
    let means = rows
        .into_iter()
        .map(|(nt, vals)| {
            let row: BTreeMap<String, f64> = windows
                .iter()
                .zip(vals)
                .map(|(w, v)| (w.id.clone(), v))
                .collect();
            (nt, row)
        })
        .collect();
    VisitTypeTable { windows, means }
}

pub(crate) fn keyword_trend() -> KeywordTrendTable {
    let per_year_mean = [
        (10, 2.745),
        (9, 2.874),
        (8, 2.993),
        (7, 3.101),
        (6, 3.272),
        (5, 3.384),
        (4, 3.508),
        (3, 3.678),
        (2, 3.829),
        (1, 4.160),
    ]
    .into_iter()
    .collect();
    KeywordTrendTable {
        per_year_mean,
        density_multiplier: 5.0,
    }
}

pub(crate) fn category_weights() -> CategoryWeightTable {
    CategoryWeightTable {
        weights: [
            (LexiconCategory::SpeechLanguage, 2.746),
            (LexiconCategory::Memory, 1.000),
            (LexiconCategory::LearningPerception, 1.733),
            (LexiconCategory::AssistanceNeeded, 1.531),
            (LexiconCategory::PhysiologicalChanges, 8.766),
            (LexiconCategory::NeuropsychiatricSymptoms, 4.399),
        ]
        .into_iter()
        .collect(),
    }
}

pub(crate) fn stage_map() -> StageMap {
    let stage = |year: u8| match year {
        7..=10 => "Early prodromal stage",
        5..=6 => "Mild cognitive impairment stage",
        3..=4 => "Mild dementia stage",
        _ => "Moderate dementia stage",
    };
    StageMap {
        stage_by_year: (1..=10).map(|y| (y, stage(y).to_string())).collect(),
    }
}

pub(crate) fn build() -> DistributionConfig {
    DistributionConfig {
        version: CONFIG_VERSION.to_string(),
        factors: factors(),
        lexicon: lexicon(),
        visits: visits(),
        keyword_trend: keyword_trend(),
        category_weights: category_weights(),
        stage_map: stage_map(),
        generation_params: GenerationParams::default(),
    }
}
