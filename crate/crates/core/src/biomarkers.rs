//! Derived biomarkers and composite indices with explicit missing propagation.
//!
//! Every computation takes optional inputs and yields an optional output:
//! a missing or degenerate component makes the derived value missing, never an
//! error and never a sentinel. The `-1` sentinel exists only in
//! [`SentinelView`], produced at the encoding boundary, and only for fields
//! that are non-negative by construction. Mean skeletal-muscle HU can be
//! legitimately negative, so its missingness is carried as a presence flag in
//! the feature vector instead.

use serde::{Deserialize, Serialize};

use crate::cohort::PatientRecord;

/// Sentinel written for absent non-negative panel fields at encoding time.
pub const MISSING_SENTINEL: f64 = -1.0;

/// Derived indices for one patient. `None` means not computable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerPanel {
    pub nlr: Option<f64>,
    pub ucr: Option<f64>,
    pub cxi: Option<f64>,
    pub mcxi: Option<f64>,
    pub smi: Option<f64>,
    pub bmi: Option<f64>,
    /// Copied through unchanged; may be negative, so it never takes the -1
    /// sentinel.
    pub sm_hu_mean: Option<f64>,
}

/// The panel with every absent non-negative field rendered as -1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentinelView {
    pub nlr: f64,
    pub ucr: f64,
    pub cxi: f64,
    pub mcxi: f64,
    pub smi: f64,
    pub bmi: f64,
}

impl BiomarkerPanel {
    pub fn sentinel_view(&self) -> SentinelView {
        let s = |v: Option<f64>| v.unwrap_or(MISSING_SENTINEL);
        SentinelView {
            nlr: s(self.nlr),
            ucr: s(self.ucr),
            cxi: s(self.cxi),
            mcxi: s(self.mcxi),
            smi: s(self.smi),
            bmi: s(self.bmi),
        }
    }
}

/// Neutrophil-to-lymphocyte ratio. Absent (with a logged warning) on a zero
/// denominator so one bad lab never kills a pipeline run.
pub fn compute_nlr(neutrophil_k_ul: Option<f64>, lymphocyte_k_ul: Option<f64>) -> Option<f64> {
    match (neutrophil_k_ul, lymphocyte_k_ul) {
        (Some(n), Some(l)) if l > 0.0 => Some(n / l),
        (Some(_), Some(l)) => {
            log::warn!("NLR undefined: lymphocyte count {l} is not positive");
            None
        }
        _ => None,
    }
}

/// Blood-urea-nitrogen-to-creatinine ratio.
pub fn compute_ucr(bun_mg_dl: Option<f64>, creatinine_mg_dl: Option<f64>) -> Option<f64> {
    match (bun_mg_dl, creatinine_mg_dl) {
        (Some(b), Some(c)) if c > 0.0 => Some(b / c),
        (Some(_), Some(c)) => {
            log::warn!("UCR undefined: creatinine {c} is not positive");
            None
        }
        _ => None,
    }
}

/// Skeletal muscle index, SMA (cm²) over height (m) squared.
pub fn compute_smi(sma_cm2: Option<f64>, height_m: Option<f64>) -> Option<f64> {
    match (sma_cm2, height_m) {
        (Some(sma), Some(h)) if h > 0.0 => Some(sma / (h * h)),
        _ => None,
    }
}

/// Cachexia index, `SMI · albumin / NLR`. Absent if any component is missing
/// or NLR is not positive.
pub fn compute_cxi(smi: Option<f64>, albumin_g_dl: Option<f64>, nlr: Option<f64>) -> Option<f64> {
    match (smi, albumin_g_dl, nlr) {
        (Some(smi), Some(alb), Some(nlr)) if nlr > 0.0 => Some(smi * alb / nlr),
        _ => None,
    }
}

/// Modified cachexia index, `albumin / (NLR · UCR)`.
pub fn compute_mcxi(albumin_g_dl: Option<f64>, nlr: Option<f64>, ucr: Option<f64>) -> Option<f64> {
    match (albumin_g_dl, nlr, ucr) {
        (Some(alb), Some(nlr), Some(ucr)) if nlr * ucr > 0.0 => Some(alb / (nlr * ucr)),
        _ => None,
    }
}

/// Body mass index from measured weight/height, falling back to the ingested
/// BMI when either measurement is missing.
pub fn compute_bmi(record: &PatientRecord) -> Option<f64> {
    match (record.weight_kg, record.height_m) {
        (Some(w), Some(h)) if h > 0.0 => Some(w / (h * h)),
        _ => record.bmi,
    }
}

/// Derives the full panel for one record.
///
/// SMI is computed from SMA and height when possible; otherwise a precomputed
/// SMI passes through untouched.
pub fn derive_panel(record: &PatientRecord) -> BiomarkerPanel {
    let nlr = compute_nlr(
        record.labs.neutrophil_abs_k_ul,
        record.labs.lymphocyte_abs_k_ul,
    );
    let ucr = compute_ucr(record.labs.bun_mg_dl, record.labs.creatinine_mg_dl);
    let smi = compute_smi(record.sm.sma_cm2, record.height_m).or(record.sm.smi_precomputed);
    let cxi = compute_cxi(smi, record.labs.albumin_g_dl, nlr);
    let mcxi = compute_mcxi(record.labs.albumin_g_dl, nlr, ucr);
    BiomarkerPanel {
        nlr,
        ucr,
        cxi,
        mcxi,
        smi,
        bmi: compute_bmi(record),
        sm_hu_mean: record.sm.sm_hu_mean,
    }
}
