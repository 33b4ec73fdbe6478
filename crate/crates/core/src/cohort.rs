//! Patient/cohort data model with explicit missingness.
//!
//! Missing values are represented structurally (`Option`) everywhere inside the
//! model; sentinel encodings (`-1`, the word `missing`) are applied only at the
//! feature/text encoding boundaries. Records are immutable after load and safe
//! to share across threads.

use std::collections::BTreeSet;
use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::LBS_TO_KG;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate patient_id {0:?}")]
    DuplicatePatientId(String),
    #[error("unit conflict for patient {patient_id:?}: weight_kg={weight_kg} vs weight_lbs={weight_lbs} ({converted_kg:.3} kg)")]
    UnitConflict {
        patient_id: String,
        weight_kg: f64,
        weight_lbs: f64,
        converted_kg: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaceEthnicity {
    NonHispanicWhite,
    HispanicLatinx,
    NonHispanicBlack,
    Other,
}

impl RaceEthnicity {
    pub const ALL: [RaceEthnicity; 4] = [
        RaceEthnicity::NonHispanicWhite,
        RaceEthnicity::HispanicLatinx,
        RaceEthnicity::NonHispanicBlack,
        RaceEthnicity::Other,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoodIntake {
    Normal,
    Decreased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiochemFlag {
    ElevatedCrp,
    ElevatedLeukocytes,
    Hypoalbuminemia,
    Anemia,
}

/// Collapsed binary cachexia label; also the type of ingested gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Cachectic,
    NonCachectic,
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryLabel::Cachectic => write!(f, "cachectic"),
            BinaryLabel::NonCachectic => write!(f, "non_cachectic"),
        }
    }
}

/// Serum labs, each optional and non-negative when present.
/// An absent lab is distinct from a measured zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabPanel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub albumin_g_dl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neutrophil_abs_k_ul: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lymphocyte_abs_k_ul: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bun_mg_dl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creatinine_mg_dl: Option<f64>,
}

impl LabPanel {
    pub fn any_present(&self) -> bool {
        self.albumin_g_dl.is_some()
            || self.neutrophil_abs_k_ul.is_some()
            || self.lymphocyte_abs_k_ul.is_some()
            || self.bun_mg_dl.is_some()
            || self.creatinine_mg_dl.is_some()
    }
}

/// CT-derived skeletal muscle measurements (computed upstream; consumed here).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkeletalMuscleMeasurements {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sma_cm2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sm_hu_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smi_precomputed: Option<f64>,
}

impl SkeletalMuscleMeasurements {
    pub fn any_present(&self) -> bool {
        self.sma_cm2.is_some() || self.sm_hu_mean.is_some() || self.smi_precomputed.is_some()
    }
}

/// Clinical note categories used by the cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteType {
    NutritionAssessmentForm,
    NutritionDiagnosisComments,
    ProgressNote,
    DietaryAssessment,
    InterVisitNote,
    AmbulatoryCareNote,
    HistoryAndPhysicalNote,
    PatientAssessment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalNote {
    pub note_type: NoteType,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotesBundle {
    pub notes: Vec<ClinicalNote>,
}

/// One patient's demographics, anthropometrics, labs, skeletal-muscle
/// measurements, notes, and embedding references. Every field except the id
/// is optional; absent means missing, never zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_years: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race_ethnicity: Option<RaceEthnicity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_kg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_weight_kg_6mo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bmi: Option<f64>,
    /// Pathological TNM stage code 1..=9; a `-1` on the wire is decoded to
    /// `None`. Out-of-range codes are preserved for `validate_record`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tnm_stage_code: Option<i32>,
    #[serde(default, skip_serializing_if = "LabPanel::is_empty")]
    pub labs: LabPanel,
    #[serde(default, skip_serializing_if = "SkeletalMuscleMeasurements::is_empty")]
    pub sm: SkeletalMuscleMeasurements,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<NotesBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecog: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub food_intake: Option<FoodIntake>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biochem_flags: Option<BTreeSet<BiochemFlag>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<BinaryLabel>,
}

impl LabPanel {
    fn is_empty(&self) -> bool {
        !self.any_present()
    }
}

impl SkeletalMuscleMeasurements {
    fn is_empty(&self) -> bool {
        !self.any_present()
    }
}

impl PatientRecord {
    /// Six-month weight-loss percent, `100·(prior − current)/prior`.
    /// Negative values mean weight gain.
    pub fn weight_loss_pct_6mo(&self) -> Option<f64> {
        match (self.prior_weight_kg_6mo, self.weight_kg) {
            (Some(prior), Some(current)) if prior > 0.0 => {
                Some(100.0 * (prior - current) / prior)
            }
            _ => None,
        }
    }
}

pub type Cohort = Vec<PatientRecord>;

/// Which data modalities a record carries. A pure function of field presence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMask {
    pub has_clinical: bool,
    pub has_sm: bool,
    pub has_labs: bool,
    pub has_notes: bool,
    pub has_image: bool,
}

/// Computes the modality mask from field presence alone.
pub fn modality_mask(record: &PatientRecord) -> ModalityMask {
    ModalityMask {
        has_clinical: true,
        has_sm: record.sm.sma_cm2.is_some() || record.sm.smi_precomputed.is_some(),
        has_labs: record.labs.any_present(),
        has_notes: record
            .notes
            .as_ref()
            .map(|b| !b.notes.is_empty())
            .unwrap_or(false),
        has_image: record.image_ref.is_some(),
    }
}

// Wire-format mirror of `PatientRecord`. Accepts the lbs weight field and the
// `-1` stage sentinel, both normalized away before the record enters the model.
#[derive(Deserialize)]
struct RawRecord {
    patient_id: String,
    #[serde(default)]
    age_years: Option<f64>,
    #[serde(default)]
    sex: Option<Sex>,
    #[serde(default)]
    race_ethnicity: Option<RaceEthnicity>,
    #[serde(default)]
    height_m: Option<f64>,
    #[serde(default)]
    weight_kg: Option<f64>,
    #[serde(default)]
    weight_lbs: Option<f64>,
    #[serde(default)]
    prior_weight_kg_6mo: Option<f64>,
    #[serde(default)]
    prior_weight_lbs_6mo: Option<f64>,
    #[serde(default)]
    bmi: Option<f64>,
    #[serde(default)]
    tnm_stage_code: Option<i32>,
    #[serde(default)]
    labs: LabPanel,
    #[serde(default)]
    sm: SkeletalMuscleMeasurements,
    #[serde(default)]
    notes: Option<NotesBundle>,
    #[serde(default)]
    image_ref: Option<String>,
    #[serde(default)]
    ecog: Option<u8>,
    #[serde(default)]
    food_intake: Option<FoodIntake>,
    #[serde(default)]
    biochem_flags: Option<BTreeSet<BiochemFlag>>,
    #[serde(default)]
    gold_label: Option<BinaryLabel>,
}

fn resolve_weight(
    patient_id: &str,
    kg: Option<f64>,
    lbs: Option<f64>,
) -> Result<Option<f64>, CohortError> {
    match (kg, lbs) {
        (Some(kg), Some(lbs)) => {
            let converted = lbs * LBS_TO_KG;
            if (kg - converted).abs() > 0.1 {
                return Err(CohortError::UnitConflict {
                    patient_id: patient_id.to_string(),
                    weight_kg: kg,
                    weight_lbs: lbs,
                    converted_kg: converted,
                });
            }
            Ok(Some(kg))
        }
        (Some(kg), None) => Ok(Some(kg)),
        (None, Some(lbs)) => Ok(Some(lbs * LBS_TO_KG)),
        (None, None) => Ok(None),
    }
}

impl RawRecord {
    fn into_record(self) -> Result<PatientRecord, CohortError> {
        let weight_kg = resolve_weight(&self.patient_id, self.weight_kg, self.weight_lbs)?;
        let prior_weight_kg_6mo = resolve_weight(
            &self.patient_id,
            self.prior_weight_kg_6mo,
            self.prior_weight_lbs_6mo,
        )?;
        // A wire-level -1 means "not assessed / not available".
        let tnm_stage_code = self.tnm_stage_code.filter(|&c| c != -1);
        Ok(PatientRecord {
            patient_id: self.patient_id,
            age_years: self.age_years,
            sex: self.sex,
            race_ethnicity: self.race_ethnicity,
            height_m: self.height_m,
            weight_kg,
            prior_weight_kg_6mo,
            bmi: self.bmi,
            tnm_stage_code,
            labs: self.labs,
            sm: self.sm,
            notes: self.notes,
            image_ref: self.image_ref,
            ecog: self.ecog,
            food_intake: self.food_intake,
            biochem_flags: self.biochem_flags,
            gold_label: self.gold_label,
        })
    }
}

/// Loads a UTF-8 JSON-lines cohort file, one patient object per line.
///
/// Weights given in lbs are converted to kg (`×0.45359237`). The whole load
/// fails on the first malformed line, duplicate id, or kg/lbs conflict.
pub fn load_cohort(path: &Path) -> Result<Cohort, CohortError> {
    let file = File::open(path)?;
    load_cohort_reader(BufReader::new(file))
}

pub fn load_cohort_reader<R: BufRead>(reader: R) -> Result<Cohort, CohortError> {
    let mut cohort = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| CohortError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        let record = raw.into_record()?;
        if !seen.insert(record.patient_id.clone()) {
            return Err(CohortError::DuplicatePatientId(record.patient_id));
        }
        cohort.push(record);
    }
    Ok(cohort)
}

/// Writes a cohort in the canonical JSONL form (kg weights, structural missing).
pub fn save_cohort(cohort: &[PatientRecord], path: &Path) -> Result<(), CohortError> {
    let mut file = File::create(path)?;
    for record in cohort {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// A single invariant violation found by [`validate_record`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    NegativeAge,
    NonPositiveHeight,
    NonPositiveWeight,
    NonPositivePriorWeight,
    NonPositiveBmi,
    StageOutOfRange,
    BmiInconsistent,
    NegativeLabValue,
    NonPositiveSma,
    NonPositiveSmi,
    EmptyNoteText,
    EcogOutOfRange,
}

pub type ValidationReport = Vec<Violation>;

fn violation(code: ViolationCode, severity: Severity, detail: String) -> Violation {
    Violation {
        code,
        severity,
        detail,
    }
}

/// Checks every record invariant and returns all violations. Never mutates;
/// violations are data, not errors.
pub fn validate_record(record: &PatientRecord) -> ValidationReport {
    use Severity::*;
    use ViolationCode::*;
    let mut report = Vec::new();

    if let Some(age) = record.age_years {
        if age < 0.0 {
            report.push(violation(NegativeAge, Error, format!("age_years={age}")));
        }
    }
    if let Some(h) = record.height_m {
        if h <= 0.0 {
            report.push(violation(NonPositiveHeight, Error, format!("height_m={h}")));
        }
    }
    if let Some(w) = record.weight_kg {
        if w <= 0.0 {
            report.push(violation(NonPositiveWeight, Error, format!("weight_kg={w}")));
        }
    }
    if let Some(w) = record.prior_weight_kg_6mo {
        if w <= 0.0 {
            report.push(violation(
                NonPositivePriorWeight,
                Error,
                format!("prior_weight_kg_6mo={w}"),
            ));
        }
    }
    if let Some(b) = record.bmi {
        if b <= 0.0 {
            report.push(violation(NonPositiveBmi, Error, format!("bmi={b}")));
        }
    }
    if let Some(code) = record.tnm_stage_code {
        if !(1..=9).contains(&code) {
            report.push(violation(
                StageOutOfRange,
                Error,
                format!("tnm_stage_code={code}"),
            ));
        }
    }
    if let (Some(bmi), Some(w), Some(h)) = (record.bmi, record.weight_kg, record.height_m) {
        if h > 0.0 {
            let implied = w / (h * h);
            if (bmi - implied).abs() > 0.5 {
                report.push(violation(
                    BmiInconsistent,
                    Warning,
                    format!("bmi={bmi} but weight/height^2={implied:.2}"),
                ));
            }
        }
    }
    for (name, value) in [
        ("albumin_g_dl", record.labs.albumin_g_dl),
        ("neutrophil_abs_k_ul", record.labs.neutrophil_abs_k_ul),
        ("lymphocyte_abs_k_ul", record.labs.lymphocyte_abs_k_ul),
        ("bun_mg_dl", record.labs.bun_mg_dl),
        ("creatinine_mg_dl", record.labs.creatinine_mg_dl),
    ] {
        if let Some(v) = value {
            if v < 0.0 {
                report.push(violation(NegativeLabValue, Error, format!("{name}={v}")));
            }
        }
    }
    if let Some(sma) = record.sm.sma_cm2 {
        if sma <= 0.0 {
            report.push(violation(NonPositiveSma, Error, format!("sma_cm2={sma}")));
        }
    }
    if let Some(smi) = record.sm.smi_precomputed {
        if smi <= 0.0 {
            report.push(violation(
                NonPositiveSmi,
                Error,
                format!("smi_precomputed={smi}"),
            ));
        }
    }
    if let Some(bundle) = &record.notes {
        for (i, note) in bundle.notes.iter().enumerate() {
            if note.text.trim().is_empty() {
                report.push(violation(EmptyNoteText, Error, format!("note index {i}")));
            }
        }
    }
    if let Some(ecog) = record.ecog {
        if ecog > 5 {
            report.push(violation(EcogOutOfRange, Error, format!("ecog={ecog}")));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn load_str(s: &str) -> Result<Cohort, CohortError> {
        load_cohort_reader(Cursor::new(s.to_string()))
    }

    #[test]
    fn lbs_converted_to_kg() {
        let cohort = load_str(r#"{"patient_id":"P1","weight_lbs":166.95}"#).unwrap();
        let w = cohort[0].weight_kg.unwrap();
        assert!((w - 75.727).abs() < 1e-3, "got {w}");
        // The conversion itself is a single multiply and must be exact.
        assert_eq!(w, 166.95 * LBS_TO_KG);
    }

    #[test]
    fn empty_file_is_empty_cohort() {
        assert!(load_str("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_patient_id_rejected() {
        let err = load_str("{\"patient_id\":\"P1\"}\n{\"patient_id\":\"P1\"}").unwrap_err();
        assert!(matches!(err, CohortError::DuplicatePatientId(id) if id == "P1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = load_str("{\"patient_id\":\"P1\"}\n{not json}").unwrap_err();
        match err {
            CohortError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unit_conflict_detected() {
        // 150 lbs = 68.039 kg; claiming 70 kg disagrees by more than 0.1 kg.
        let err =
            load_str(r#"{"patient_id":"P1","weight_kg":70.0,"weight_lbs":150.0}"#).unwrap_err();
        assert!(matches!(err, CohortError::UnitConflict { .. }));
        // Consistent values pass and keep the kg figure.
        let cohort =
            load_str(r#"{"patient_id":"P1","weight_kg":68.04,"weight_lbs":150.0}"#).unwrap();
        assert_eq!(cohort[0].weight_kg, Some(68.04));
    }

    #[test]
    fn stage_sentinel_decodes_to_missing() {
        let cohort = load_str(r#"{"patient_id":"P1","tnm_stage_code":-1}"#).unwrap();
        assert_eq!(cohort[0].tnm_stage_code, None);
        let cohort = load_str(r#"{"patient_id":"P2","tnm_stage_code":4}"#).unwrap();
        assert_eq!(cohort[0].tnm_stage_code, Some(4));
    }

    #[test]
    fn mask_for_minimal_record() {
        let cohort = load_str(r#"{"patient_id":"P1","age_years":70,"sex":"male"}"#).unwrap();
        let mask = modality_mask(&cohort[0]);
        assert_eq!(
            mask,
            ModalityMask {
                has_clinical: true,
                has_sm: false,
                has_labs: false,
                has_notes: false,
                has_image: false
            }
        );
    }

    #[test]
    fn mask_single_lab_counts() {
        let cohort =
            load_str(r#"{"patient_id":"P1","labs":{"albumin_g_dl":4.0}}"#).unwrap();
        assert!(modality_mask(&cohort[0]).has_labs);
    }

    #[test]
    fn mask_empty_notes_list_does_not_count() {
        let cohort = load_str(r#"{"patient_id":"P1","notes":{"notes":[]}}"#).unwrap();
        assert!(!modality_mask(&cohort[0]).has_notes);
        assert!(!modality_mask(&cohort[0]).has_image);
    }

    #[test]
    fn validate_flags_bmi_inconsistency() {
        let record = PatientRecord {
            patient_id: "P1".into(),
            bmi: Some(30.0),
            weight_kg: Some(60.0),
            height_m: Some(1.7),
            ..Default::default()
        };
        let report = validate_record(&record);
        assert!(report.iter().any(|v| v.code == ViolationCode::BmiInconsistent));
    }

    #[test]
    fn validate_flags_stage_out_of_range() {
        let record = PatientRecord {
            patient_id: "P1".into(),
            tnm_stage_code: Some(12),
            ..Default::default()
        };
        let report = validate_record(&record);
        assert!(report.iter().any(|v| v.code == ViolationCode::StageOutOfRange));
    }

    #[test]
    fn validate_consistent_record_is_clean() {
        let record = PatientRecord {
            patient_id: "P1".into(),
            age_years: Some(69.0),
            bmi: Some(20.76),
            weight_kg: Some(60.0),
            height_m: Some(1.7),
            tnm_stage_code: Some(8),
            ecog: Some(1),
            ..Default::default()
        };
        assert!(validate_record(&record).is_empty());
    }

    #[test]
    fn weight_loss_pct() {
        let record = PatientRecord {
            patient_id: "P1".into(),
            weight_kg: Some(76.0),
            prior_weight_kg_6mo: Some(80.0),
            ..Default::default()
        };
        assert!((record.weight_loss_pct_6mo().unwrap() - 5.0).abs() < 1e-12);
    }
}
