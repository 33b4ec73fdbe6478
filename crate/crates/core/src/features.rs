//! Feature construction: mean imputation, categorical encoding, sentinel
//! application, tabular-to-text serialization, and z-score standardization.
//!
//! Sentinels appear here and only here: absent non-negative numerics encode as
//! `-1`, absent qualitative values render as the word `missing` in the text
//! form, and signed quantities (mean SM HU) carry an explicit presence flag.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarkers::BiomarkerPanel;
use crate::cohort::{PatientRecord, RaceEthnicity, Sex};
use crate::hashing::sha256_hex;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("no observed values for {0}; cannot fit imputer")]
    NoObservedValues(&'static str),
    #[error("schema mismatch: expected {expected} {what}, got {got}")]
    SchemaMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad feature csv: {0}")]
    BadCsv(String),
}

#[derive(Debug, Clone, Copy, Default)]
struct MeanAccumulator {
    sum: f64,
    count: usize,
}

impl MeanAccumulator {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }
    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Per-stratum weight/height means.
#[derive(Debug, Clone, Copy, Default)]
pub struct StratumMeans {
    pub weight_kg_mean: Option<f64>,
    pub height_m_mean: Option<f64>,
}

/// Population/stratum means fitted on the training split only.
#[derive(Debug, Clone)]
pub struct ImputationModel {
    pub age_mean: f64,
    pub stratum_means: BTreeMap<(Sex, RaceEthnicity), StratumMeans>,
    pub global_weight_mean: Option<f64>,
    pub global_height_mean: Option<f64>,
}

/// Fits the imputer: age mean over observed ages, weight/height means per
/// (sex, race/ethnicity) stratum with global fallbacks. Deterministic.
pub fn fit_imputer(training_cohort: &[PatientRecord]) -> Result<ImputationModel, FeatureError> {
    if training_cohort.is_empty() {
        return Err(FeatureError::EmptyCohort);
    }
    let mut age = MeanAccumulator::default();
    let mut global_weight = MeanAccumulator::default();
    let mut global_height = MeanAccumulator::default();
    let mut strata: BTreeMap<(Sex, RaceEthnicity), (MeanAccumulator, MeanAccumulator)> =
        BTreeMap::new();

    for record in training_cohort {
        if let Some(a) = record.age_years {
            age.push(a);
        }
        if let Some(w) = record.weight_kg {
            global_weight.push(w);
        }
        if let Some(h) = record.height_m {
            global_height.push(h);
        }
        if let (Some(sex), Some(race)) = (record.sex, record.race_ethnicity) {
            let entry = strata.entry((sex, race)).or_default();
            if let Some(w) = record.weight_kg {
                entry.0.push(w);
            }
            if let Some(h) = record.height_m {
                entry.1.push(h);
            }
        }
    }

    let age_mean = age
        .mean()
        .ok_or(FeatureError::NoObservedValues("age_years"))?;
    let stratum_means = strata
        .into_iter()
        .map(|(key, (w, h))| {
            (
                key,
                StratumMeans {
                    weight_kg_mean: w.mean(),
                    height_m_mean: h.mean(),
                },
            )
        })
        .collect();
    Ok(ImputationModel {
        age_mean,
        stratum_means,
        global_weight_mean: global_weight.mean(),
        global_height_mean: global_height.mean(),
    })
}

/// Fills absent age with the population mean and absent weight/height with the
/// record's stratum means (global fallback). Labs, SM, and notes are never
/// imputed. Returns a new record; the input is untouched.
pub fn impute(record: &PatientRecord, model: &ImputationModel) -> PatientRecord {
    let mut out = record.clone();
    if out.age_years.is_none() {
        out.age_years = Some(model.age_mean);
    }
    let stratum = match (record.sex, record.race_ethnicity) {
        (Some(sex), Some(race)) => model.stratum_means.get(&(sex, race)).copied(),
        _ => None,
    }
    .unwrap_or_default();
    if out.weight_kg.is_none() {
        out.weight_kg = stratum.weight_kg_mean.or(model.global_weight_mean);
    }
    if out.height_m.is_none() {
        out.height_m = stratum.height_m_mean.or(model.global_height_mean);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Binary,
    SentinelNumeric,
    PresenceFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Which modality groups the feature vector carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub clinical: bool,
    pub sm: bool,
    pub labs: bool,
    pub notes: bool,
    pub notes_question_count: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            clinical: true,
            sm: true,
            labs: true,
            notes: true,
            notes_question_count: 26,
        }
    }
}

impl SchemaConfig {
    /// The deterministic column layout implied by this configuration.
    pub fn schema(&self) -> Vec<FeatureColumn> {
        use ColumnKind::*;
        let mut cols = Vec::new();
        let mut push = |name: &str, kind: ColumnKind| {
            cols.push(FeatureColumn {
                name: name.to_string(),
                kind,
            })
        };
        if self.clinical {
            push("age_years", SentinelNumeric);
            push("weight_kg", SentinelNumeric);
            push("height_m", SentinelNumeric);
            push("bmi", SentinelNumeric);
            push("sex_female", Binary);
            push("sex_male", Binary);
            push("race_non_hispanic_white", Binary);
            push("race_hispanic_latinx", Binary);
            push("race_non_hispanic_black", Binary);
            push("race_other", Binary);
            push("tnm_stage_code", SentinelNumeric);
        }
        if self.sm {
            push("sma_cm2", SentinelNumeric);
            push("smi", SentinelNumeric);
            push("sm_hu_mean", Numeric);
            push("sm_hu_present", PresenceFlag);
        }
        if self.labs {
            push("albumin_g_dl", SentinelNumeric);
            push("neutrophil_abs_k_ul", SentinelNumeric);
            push("lymphocyte_abs_k_ul", SentinelNumeric);
            push("bun_mg_dl", SentinelNumeric);
            push("creatinine_mg_dl", SentinelNumeric);
            push("nlr", SentinelNumeric);
            push("ucr", SentinelNumeric);
            push("cxi", SentinelNumeric);
            push("mcxi", SentinelNumeric);
        }
        if self.notes {
            for i in 1..=self.notes_question_count {
                push(&format!("notes_q{i:02}"), SentinelNumeric);
            }
        }
        cols
    }

    /// Stable identifier of the column layout; embedded in trained models so
    /// mismatched feature files refuse to combine.
    pub fn fingerprint(&self) -> String {
        schema_fingerprint(&self.schema())
    }
}

pub fn schema_fingerprint(schema: &[FeatureColumn]) -> String {
    let joined = schema
        .iter()
        .map(|c| format!("{}:{:?}", c.name, c.kind))
        .collect::<Vec<_>>()
        .join("|");
    sha256_hex(joined.as_bytes())
}

/// One encoded row plus the schema it was encoded under.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

fn sentinel(v: Option<f64>) -> f64 {
    v.unwrap_or(-1.0)
}

/// Encodes one (imputed) record into the fixed column layout.
///
/// `notes_answers` are the tabularized structured answers in battery order
/// (`1`/`0`/`-1`); pass `None` to emit all `-1` (no extraction available).
pub fn encode_features(
    record: &PatientRecord,
    panel: &BiomarkerPanel,
    notes_answers: Option<&[i8]>,
    cfg: &SchemaConfig,
) -> Result<FeatureVector, FeatureError> {
    if let Some(answers) = notes_answers {
        if cfg.notes && answers.len() != cfg.notes_question_count {
            return Err(FeatureError::SchemaMismatch {
                what: "notes answers",
                expected: cfg.notes_question_count,
                got: answers.len(),
            });
        }
    }
    let mut values = Vec::new();
    if cfg.clinical {
        values.push(sentinel(record.age_years));
        values.push(sentinel(record.weight_kg));
        values.push(sentinel(record.height_m));
        values.push(sentinel(panel.bmi));
        values.push(f64::from(record.sex == Some(Sex::Female)));
        values.push(f64::from(record.sex == Some(Sex::Male)));
        for race in RaceEthnicity::ALL {
            values.push(f64::from(record.race_ethnicity == Some(race)));
        }
        values.push(record.tnm_stage_code.map(f64::from).unwrap_or(-1.0));
    }
    if cfg.sm {
        values.push(sentinel(record.sm.sma_cm2));
        values.push(sentinel(panel.smi));
        values.push(panel.sm_hu_mean.unwrap_or(0.0));
        values.push(f64::from(panel.sm_hu_mean.is_some()));
    }
    if cfg.labs {
        let view = panel.sentinel_view();
        values.push(sentinel(record.labs.albumin_g_dl));
        values.push(sentinel(record.labs.neutrophil_abs_k_ul));
        values.push(sentinel(record.labs.lymphocyte_abs_k_ul));
        values.push(sentinel(record.labs.bun_mg_dl));
        values.push(sentinel(record.labs.creatinine_mg_dl));
        values.push(view.nlr);
        values.push(view.ucr);
        values.push(view.cxi);
        values.push(view.mcxi);
    }
    if cfg.notes {
        match notes_answers {
            Some(answers) => values.extend(answers.iter().map(|&a| f64::from(a))),
            None => values.extend(std::iter::repeat_n(-1.0, cfg.notes_question_count)),
        }
    }
    Ok(FeatureVector { values })
}

/// Keys of the tabular-to-text serialization, in emission order.
pub const TABULAR_TEXT_KEYS: [&str; 19] = [
    "age",
    "sex",
    "race_ethnicity",
    "tnm_stage",
    "height",
    "weight",
    "bmi",
    "sma",
    "smi",
    "sm_hu",
    "albumin",
    "neutrophil_count",
    "lymphocyte_count",
    "bun",
    "creatinine",
    "nlr",
    "ucr",
    "cxi",
    "mcxi",
];

fn text_value(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "missing".to_string(),
    }
}

/// Renders the record as `key: value` lines in fixed schema order. Absent
/// numerics become the word `missing`; qualitative fields keep their original
/// text.
pub fn serialize_tabular_text(record: &PatientRecord, panel: &BiomarkerPanel) -> String {
    let sex = match record.sex {
        Some(Sex::Female) => "female".to_string(),
        Some(Sex::Male) => "male".to_string(),
        None => "missing".to_string(),
    };
    let race = match record.race_ethnicity {
        Some(RaceEthnicity::NonHispanicWhite) => "non_hispanic_white".to_string(),
        Some(RaceEthnicity::HispanicLatinx) => "hispanic_latinx".to_string(),
        Some(RaceEthnicity::NonHispanicBlack) => "non_hispanic_black".to_string(),
        Some(RaceEthnicity::Other) => "other".to_string(),
        None => "missing".to_string(),
    };
    let stage = match record.tnm_stage_code {
        Some(code) => code.to_string(),
        None => "missing".to_string(),
    };
    let values = [
        text_value(record.age_years),
        sex,
        race,
        stage,
        text_value(record.height_m),
        text_value(record.weight_kg),
        text_value(panel.bmi),
        text_value(record.sm.sma_cm2),
        text_value(panel.smi),
        text_value(panel.sm_hu_mean),
        text_value(record.labs.albumin_g_dl),
        text_value(record.labs.neutrophil_abs_k_ul),
        text_value(record.labs.lymphocyte_abs_k_ul),
        text_value(record.labs.bun_mg_dl),
        text_value(record.labs.creatinine_mg_dl),
        text_value(panel.nlr),
        text_value(panel.ucr),
        text_value(panel.cxi),
        text_value(panel.mcxi),
    ];
    TABULAR_TEXT_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| format!("{k}: {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Column-wise z-scoring with statistics from the fitting rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let n = rows.len();
        if n == 0 {
            return Err(FeatureError::EmptyCohort);
        }
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for row in rows {
            if row.len() != dim {
                return Err(FeatureError::SchemaMismatch {
                    what: "columns",
                    expected: dim,
                    got: row.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A full encoded cohort: ids, column layout, and one row per patient.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: Vec<FeatureColumn>,
    pub patient_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn fingerprint(&self) -> String {
        schema_fingerprint(&self.schema)
    }
}

/// Writes the feature matrix CSV: optional `# config_hash=` comment line,
/// header row (`patient_id` first), one row per patient.
pub fn write_features_csv(
    matrix: &FeatureMatrix,
    path: &Path,
    config_hash: Option<&str>,
) -> Result<(), FeatureError> {
    let mut file = File::create(path)?;
    if let Some(hash) = config_hash {
        writeln!(file, "# config_hash={hash}")?;
    }
    let header: Vec<&str> = std::iter::once("patient_id")
        .chain(matrix.schema.iter().map(|c| c.name.as_str()))
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for (id, row) in matrix.patient_ids.iter().zip(&matrix.rows) {
        let mut line = String::from(id.as_str());
        for v in row {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Reads a feature matrix CSV back; returns the embedded config hash if one
/// was written. Column kinds are not stored in the CSV, so the schema is
/// reconstructed with every column marked numeric; fingerprint checks on read
/// data use names only.
pub fn read_features_csv(path: &Path) -> Result<(FeatureMatrix, Option<String>), FeatureError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let mut first = lines
        .next()
        .ok_or_else(|| FeatureError::BadCsv("empty file".into()))??;
    let mut config_hash = None;
    if let Some(rest) = first.strip_prefix("# config_hash=") {
        config_hash = Some(rest.trim().to_string());
        first = lines
            .next()
            .ok_or_else(|| FeatureError::BadCsv("missing header".into()))??;
    }
    let mut header = first.split(',');
    if header.next() != Some("patient_id") {
        return Err(FeatureError::BadCsv(
            "first column must be patient_id".into(),
        ));
    }
    let schema: Vec<FeatureColumn> = header
        .map(|name| FeatureColumn {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
        })
        .collect();
    let mut patient_ids = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or_else(|| FeatureError::BadCsv("empty row".into()))?;
        let row: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| FeatureError::BadCsv(format!("bad number {p:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if row.len() != schema.len() {
            return Err(FeatureError::BadCsv(format!(
                "row for {id} has {} values, header has {}",
                row.len(),
                schema.len()
            )));
        }
        patient_ids.push(id.to_string());
        rows.push(row);
    }
    Ok((
        FeatureMatrix {
            schema,
            patient_ids,
            rows,
        },
        config_hash,
    ))
}
