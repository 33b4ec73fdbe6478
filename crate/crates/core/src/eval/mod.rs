//! Evaluation harness: confusion/metrics, confidence-separation analysis, the
//! synthetic cohort generator, and the five-experiment modality ablation.

mod ablation;
mod synth;

pub use ablation::{
    report_to_csv, run_ablation, standard_configs, stratified_split, AblationConfig,
    AblationContext, AblationOutcome, AblationReport, AblationRow, ConfigRunDetail,
    EmbeddingSelection, FeatureMode, TestPrediction,
};
pub use synth::{
    generate, image_slice_refs, AvailabilityRates, MarkerStubEndpoint, SignalPlan, SynthConfig,
    MARKER_VOCABULARY, SOFT_CACHECTIC_PHRASES, SOFT_NON_CACHECTIC_PHRASES,
};

use serde::Serialize;
use thiserror::Error;

use crate::cohort::BinaryLabel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {preds} predictions vs {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("empty confusion matrix")]
    EmptyMatrix,
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Staging(#[from] crate::staging::StagingError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Learn(#[from] crate::learner::LearnError),
    #[error(transparent)]
    Notes(#[from] crate::notes::NotesError),
    #[error(transparent)]
    Embed(#[from] crate::embedding::EmbedError),
}

/// Binary confusion counts with cachectic as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(
    preds: &[BinaryLabel],
    labels: &[BinaryLabel],
) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut m = ConfusionMatrix {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (p, l) in preds.iter().zip(labels) {
        match (p, l) {
            (BinaryLabel::Cachectic, BinaryLabel::Cachectic) => m.tp += 1,
            (BinaryLabel::Cachectic, BinaryLabel::NonCachectic) => m.fp += 1,
            (BinaryLabel::NonCachectic, BinaryLabel::Cachectic) => m.fn_ += 1,
            (BinaryLabel::NonCachectic, BinaryLabel::NonCachectic) => m.tn += 1,
        }
    }
    Ok(m)
}

/// Standard classification metrics. A zero denominator yields 0 with the
/// corresponding undefined flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

pub fn metrics(m: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = m.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let accuracy = (m.tp + m.tn) as f64 / total as f64;
    let precision_den = m.tp + m.fp;
    let recall_den = m.tp + m.fn_;
    let precision = if precision_den > 0 {
        m.tp as f64 / precision_den as f64
    } else {
        0.0
    };
    let recall = if recall_den > 0 {
        m.tp as f64 / recall_den as f64
    } else {
        0.0
    };
    let f1_den = precision + recall;
    let f1 = if f1_den > 0.0 {
        2.0 * precision * recall / f1_den
    } else {
        0.0
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        precision_undefined: precision_den == 0,
        recall_undefined: recall_den == 0,
        f1_undefined: f1_den == 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarStats {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

fn var_stats(mut values: Vec<f64>) -> Option<VarStats> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    let median = if values.len().is_multiple_of(2) {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    };
    Some(VarStats {
        mean,
        median,
        count: values.len(),
    })
}

/// Mean/median prediction variance for the correct and incorrect partitions.
/// An empty partition is reported as absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceSeparation {
    pub correct: Option<VarStats>,
    pub incorrect: Option<VarStats>,
}

/// `items` are `(prediction variance, prediction was correct)` pairs.
pub fn confidence_separation(items: &[(f64, bool)]) -> ConfidenceSeparation {
    let correct: Vec<f64> = items.iter().filter(|(_, c)| *c).map(|(v, _)| *v).collect();
    let incorrect: Vec<f64> = items.iter().filter(|(_, c)| !*c).map(|(v, _)| *v).collect();
    ConfidenceSeparation {
        correct: var_stats(correct),
        incorrect: var_stats(incorrect),
    }
}
