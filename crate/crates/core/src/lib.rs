//! Multimodal cachexia biomarker pipeline.
//!
//! The library is organized along the pipeline stages:
//!
//! - [`cohort`]: patient data model with explicit missingness, JSONL ingestion,
//!   validation, and modality masks.
//! - [`biomarkers`]: derived serum/muscle indices (NLR, UCR, SMI, CXI, mCXI, BMI)
//!   with missing-value propagation and the `-1` sentinel view.
//! - [`staging`]: two-stage and four-stage cachexia staging with binary collapse.
//! - [`features`]: mean imputation, categorical encoding, sentinel application,
//!   tabular-to-text serialization, and z-score standardization.
//! - [`notes`]: question battery, chat-completion extraction client,
//!   answer tabularization, and extraction scoring.
//! - [`embedding`]: pluggable text/image embedders, token chunking, mean pooling,
//!   and concatenation fusion with presence flags.
//! - [`learner`]: from-scratch MLP with dropout, 10-fold CV, a 5-architecture
//!   ensemble, variance confidence, hyperparameter search, and triage.
//! - [`eval`]: confusion/metrics, confidence-separation analysis, the synthetic
//!   cohort generator, and the modality-ablation harness.
//! - [`pipeline`]: one-config orchestration of all stages with a hashed run
//!   manifest.

pub mod biomarkers;
pub mod cohort;
pub mod embedding;
pub mod eval;
pub mod features;
pub mod hashing;
pub mod learner;
pub mod notes;
pub mod pipeline;
pub mod staging;

/// Pounds-to-kilograms conversion factor (exact by definition).
pub const LBS_TO_KG: f64 = 0.453_592_37;
