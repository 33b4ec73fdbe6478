//! Cachexia staging: the weight-loss/BMI two-stage rule, the configurable
//! four-stage rule table, and binary collapse for model labels.
//!
//! Staging tries the four-stage system first; when its required inputs are
//! missing it falls back to the two-stage system, then to an ingested gold
//! label, and only then reports the record unstageable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarkers::compute_bmi;
use crate::cohort::{BinaryLabel, FoodIntake, PatientRecord};

#[derive(Debug, Error, PartialEq)]
pub enum StagingError {
    #[error("missing input for two-stage rule: {0}")]
    MissingInput(&'static str),
    #[error("insufficient information for the four-stage system")]
    InsufficientInformation,
    #[error("record {0:?} cannot be staged by either system and carries no gold label")]
    Unstageable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoStage {
    Cachectic,
    NonCachectic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourStage {
    NonCachectic,
    PreCachectic,
    Cachectic,
    Refractory,
}

impl TwoStage {
    pub fn collapse_binary(self) -> BinaryLabel {
        match self {
            TwoStage::Cachectic => BinaryLabel::Cachectic,
            TwoStage::NonCachectic => BinaryLabel::NonCachectic,
        }
    }
}

impl FourStage {
    /// Non-cachectic and pre-cachectic collapse to non-cachectic; cachectic
    /// and refractory collapse to cachectic.
    pub fn collapse_binary(self) -> BinaryLabel {
        match self {
            FourStage::NonCachectic | FourStage::PreCachectic => BinaryLabel::NonCachectic,
            FourStage::Cachectic | FourStage::Refractory => BinaryLabel::Cachectic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemUsed {
    FourStage,
    TwoStage,
    GoldLabel,
}

/// Staging outcome for one record, with the criteria that fired.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageAssignment {
    pub patient_id: String,
    pub four_stage: Option<FourStage>,
    pub two_stage: Option<TwoStage>,
    pub binary: BinaryLabel,
    pub system_used: SystemUsed,
    pub criteria_trace: Vec<String>,
}

/// Two-stage rule: cachectic iff weight loss >5% at BMI ≥ 20, or >2% at
/// BMI < 20. Inequalities are strict.
pub fn stage_two(
    weight_loss_pct_6mo: Option<f64>,
    bmi: Option<f64>,
) -> Result<TwoStage, StagingError> {
    let loss = weight_loss_pct_6mo.ok_or(StagingError::MissingInput("weight_loss_pct_6mo"))?;
    let bmi = bmi.ok_or(StagingError::MissingInput("bmi"))?;
    let cachectic = if bmi >= 20.0 { loss > 5.0 } else { loss > 2.0 };
    Ok(if cachectic {
        TwoStage::Cachectic
    } else {
        TwoStage::NonCachectic
    })
}

/// Inputs to the four-stage rule table, already pulled off a record.
#[derive(Debug, Clone, Default)]
pub struct FourStageInputs {
    pub biochem_flag_count: Option<usize>,
    pub food_intake: Option<FoodIntake>,
    pub weight_loss_pct_6mo: Option<f64>,
    pub ecog: Option<u8>,
}

/// The criteria→stage mapping, shipped as data so it is reviewable and
/// swappable from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourStageRuleTable {
    /// Weight loss strictly above this percent counts as significant.
    pub significant_loss_pct: f64,
    /// Moderate loss must be strictly above this percent (and at most
    /// `significant_loss_pct`) to count toward pre-cachexia.
    pub moderate_loss_floor_pct: f64,
    /// ECOG at or above this value qualifies for refractory when combined
    /// with significant loss.
    pub refractory_ecog_min: u8,
    /// Albumin strictly below this (g/dL) derives a hypoalbuminemia flag when
    /// no explicit flag set was ingested.
    pub hypoalbuminemia_albumin_lt: f64,
    pub require_weight_loss: bool,
    pub require_biochem: bool,
    pub require_food_intake: bool,
    pub require_ecog: bool,
}

impl Default for FourStageRuleTable {
    fn default() -> Self {
        Self {
            significant_loss_pct: 5.0,
            moderate_loss_floor_pct: 0.0,
            refractory_ecog_min: 3,
            hypoalbuminemia_albumin_lt: 3.5,
            require_weight_loss: true,
            require_biochem: true,
            require_food_intake: true,
            require_ecog: true,
        }
    }
}

/// Four-stage rule evaluation. Returns `InsufficientInformation` when any
/// rule-table-required input is absent, signalling the two-stage fallback.
pub fn stage_four(
    inputs: &FourStageInputs,
    rules: &FourStageRuleTable,
    trace: &mut Vec<String>,
) -> Result<FourStage, StagingError> {
    if (rules.require_weight_loss && inputs.weight_loss_pct_6mo.is_none())
        || (rules.require_biochem && inputs.biochem_flag_count.is_none())
        || (rules.require_food_intake && inputs.food_intake.is_none())
        || (rules.require_ecog && inputs.ecog.is_none())
    {
        return Err(StagingError::InsufficientInformation);
    }
    let loss = inputs.weight_loss_pct_6mo.unwrap_or(0.0);
    let flags = inputs.biochem_flag_count.unwrap_or(0);
    let decreased = inputs.food_intake == Some(FoodIntake::Decreased);
    let significant = loss > rules.significant_loss_pct;
    let moderate = loss > rules.moderate_loss_floor_pct && loss <= rules.significant_loss_pct;

    if significant && inputs.ecog.map(|e| e >= rules.refractory_ecog_min) == Some(true) {
        trace.push(format!(
            "weight loss {loss:.2}% > {}% and ecog >= {}",
            rules.significant_loss_pct, rules.refractory_ecog_min
        ));
        return Ok(FourStage::Refractory);
    }
    if significant && (flags >= 1 || decreased) {
        trace.push(format!(
            "weight loss {loss:.2}% > {}% with {} biochemical flag(s), food intake decreased: {decreased}",
            rules.significant_loss_pct, flags
        ));
        return Ok(FourStage::Cachectic);
    }
    if moderate || flags >= 1 || decreased {
        if moderate {
            trace.push(format!(
                "moderate weight loss {loss:.2}% in ({}, {}]",
                rules.moderate_loss_floor_pct, rules.significant_loss_pct
            ));
        }
        if flags >= 1 {
            trace.push(format!("{flags} biochemical flag(s)"));
        }
        if decreased {
            trace.push("food intake decreased".to_string());
        }
        return Ok(FourStage::PreCachectic);
    }
    Ok(FourStage::NonCachectic)
}

/// Pulls four-stage inputs off a record, deriving a hypoalbuminemia flag from
/// albumin when no explicit flag set was ingested.
pub fn four_stage_inputs(record: &PatientRecord, rules: &FourStageRuleTable) -> FourStageInputs {
    let biochem_flag_count = match &record.biochem_flags {
        Some(flags) => Some(flags.len()),
        None => record.labs.albumin_g_dl.map(|alb| {
            usize::from(alb < rules.hypoalbuminemia_albumin_lt)
        }),
    };
    FourStageInputs {
        biochem_flag_count,
        food_intake: record.food_intake,
        weight_loss_pct_6mo: record.weight_loss_pct_6mo(),
        ecog: record.ecog,
    }
}

/// Stages one record: four-stage first, two-stage on insufficient information,
/// gold label as the last resort.
pub fn assign_stage(
    record: &PatientRecord,
    rules: &FourStageRuleTable,
) -> Result<StageAssignment, StagingError> {
    let mut trace = Vec::new();
    let inputs = four_stage_inputs(record, rules);
    match stage_four(&inputs, rules, &mut trace) {
        Ok(stage) => {
            return Ok(StageAssignment {
                patient_id: record.patient_id.clone(),
                four_stage: Some(stage),
                two_stage: None,
                binary: stage.collapse_binary(),
                system_used: SystemUsed::FourStage,
                criteria_trace: trace,
            });
        }
        Err(StagingError::InsufficientInformation) => {}
        Err(e) => return Err(e),
    }

    let bmi = compute_bmi(record);
    match stage_two(record.weight_loss_pct_6mo(), bmi) {
        Ok(stage) => {
            let mut trace = Vec::new();
            if stage == TwoStage::Cachectic {
                let loss = record.weight_loss_pct_6mo().unwrap_or(f64::NAN);
                let bmi = bmi.unwrap_or(f64::NAN);
                if bmi >= 20.0 {
                    trace.push(format!("weight loss {loss:.2}% > 5% at bmi {bmi:.2} >= 20"));
                } else {
                    trace.push(format!("weight loss {loss:.2}% > 2% at bmi {bmi:.2} < 20"));
                }
            }
            Ok(StageAssignment {
                patient_id: record.patient_id.clone(),
                four_stage: None,
                two_stage: Some(stage),
                binary: stage.collapse_binary(),
                system_used: SystemUsed::TwoStage,
                criteria_trace: trace,
            })
        }
        Err(StagingError::MissingInput(_)) => match record.gold_label {
            Some(label) => Ok(StageAssignment {
                patient_id: record.patient_id.clone(),
                four_stage: None,
                two_stage: None,
                binary: label,
                system_used: SystemUsed::GoldLabel,
                criteria_trace: vec!["ingested gold label".to_string()],
            }),
            None => Err(StagingError::Unstageable(record.patient_id.clone())),
        },
        Err(e) => Err(e),
    }
}

/// Convenience for staging a whole cohort; errors carry the offending patient.
pub fn stage_cohort(
    cohort: &[PatientRecord],
    rules: &FourStageRuleTable,
) -> Result<Vec<StageAssignment>, StagingError> {
    cohort.iter().map(|r| assign_stage(r, rules)).collect()
}
