//! One-config orchestration of the full pipeline with a hashed run manifest.
//!
//! Every output artifact embeds the config hash; a consumer refuses to
//! combine artifacts carrying a different hash. Expensive steps (extraction,
//! training) resume from their persisted artifacts when the hash matches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biomarkers::derive_panel;
use crate::cohort::{load_cohort, BinaryLabel, Cohort};
use crate::embedding::{
    embed_image_series, embed_text, fuse_concat, write_embedding_file, FusionConfig,
    HttpImageEmbedder, HttpTextEmbedder, ImageEmbedder, StubImageEmbedder, StubTextEmbedder,
    TextEmbedder, VectorStore,
};
use crate::eval::{
    confidence_separation, confusion, image_slice_refs, metrics, ConfidenceSeparation,
    EmbeddingSelection, MarkerStubEndpoint, Metrics, SynthConfig,
};
use crate::features::{
    encode_features, fit_imputer, impute, read_features_csv, schema_fingerprint,
    serialize_tabular_text, write_features_csv, FeatureMatrix, SchemaConfig,
};
use crate::hashing::{mix_seed, sha256_hex};
use crate::learner::{
    ensemble_predict, ensemble_train, load_model, save_model, search_hyperparams, triage,
    EnsembleOptions, EnsemblePrediction, SearchSpace, TrainConfig, TrainedEnsemble,
    TriageVerdict,
};
use crate::notes::{
    extract_cohort, focused_text, read_extractions_jsonl, tabularize, write_extractions_jsonl,
    ChatEndpoint, ClientConfig, ExtractionResult, HttpChatEndpoint, QuestionBattery,
};
use crate::staging::{stage_cohort, FourStageRuleTable, StageAssignment};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config invalid: {0}")]
    ConfigInvalid(String),
    #[error("step {step} failed: {message}")]
    StepFailed { step: &'static str, message: String },
    #[error("artifact {path} carries config hash {found:?}, expected {expected}")]
    ArtifactMismatch {
        path: PathBuf,
        expected: String,
        found: Option<String>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn step_err<E: std::fmt::Display>(step: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::StepFailed {
        step,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub cohort: String,
    pub battery: Option<String>,
    pub gold_answers: Option<String>,
    pub out_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            cohort: "cohort.jsonl".to_string(),
            battery: None,
            gold_answers: None,
            out_dir: "out".to_string(),
        }
    }
}

/// Embedding provider selection for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Stub {
        dimension: usize,
        token_limit: usize,
        seed: u64,
    },
    File {
        path: String,
    },
    Http {
        url: String,
        dimension: usize,
        token_limit: usize,
        timeout_s: u64,
    },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Stub {
            dimension: 16,
            token_limit: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvidersConfig {
    pub tabular: ProviderConfig,
    pub notes: ProviderConfig,
    pub image: ProviderConfig,
}

/// Chat-completion endpoint used by notes extraction. The stub endpoint is a
/// deterministic rule-based extractor so the pipeline runs with no model
/// server.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractionEndpointConfig {
    #[default]
    Stub,
    Http { client: ClientConfig },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureModeKind {
    Tabular,
    Embeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturesConfig {
    pub mode: FeatureModeKind,
    pub sources: EmbeddingSelection,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            mode: FeatureModeKind::Tabular,
            sources: EmbeddingSelection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            budget: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub k: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            k: 10,
            train: TrainConfig::default(),
        }
    }
}

/// The single structured config file driving `run` and every subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub providers: ProvidersConfig,
    pub extraction: ExtractionEndpointConfig,
    pub staging: FourStageRuleTable,
    pub schema: SchemaConfig,
    pub features: FeaturesConfig,
    pub search: SearchConfig,
    pub training: TrainingConfig,
    pub seed: u64,
    /// Overrides the calibrated triage threshold when set.
    pub variance_threshold: Option<f64>,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| PipelineError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        toml::from_str(&raw).map_err(|e| PipelineError::ConfigInvalid(e.to_string()))
    }

    /// Hash of the canonical serialized form; embedded in every artifact.
    pub fn config_hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }

    pub fn uses_notes(&self) -> bool {
        self.schema.notes
            || (self.features.mode == FeatureModeKind::Embeddings && self.features.sources.notes)
    }

    /// Validates paths and cross-field requirements (all referenced paths must
    /// resolve at validation time).
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !Path::new(&self.paths.cohort).exists() {
            return Err(PipelineError::ConfigInvalid(format!(
                "cohort path {} does not exist",
                self.paths.cohort
            )));
        }
        if self.uses_notes() {
            match &self.paths.battery {
                None => {
                    return Err(PipelineError::ConfigInvalid(
                        "notes are enabled but no battery path is configured".to_string(),
                    ))
                }
                Some(p) if !Path::new(p).exists() => {
                    return Err(PipelineError::ConfigInvalid(format!(
                        "battery path {p} does not exist"
                    )))
                }
                _ => {}
            }
        }
        if let Some(gold) = &self.paths.gold_answers {
            if !Path::new(gold).exists() {
                return Err(PipelineError::ConfigInvalid(format!(
                    "gold answers path {gold} does not exist"
                )));
            }
        }
        Ok(())
    }

    pub fn battery(&self) -> Result<QuestionBattery, PipelineError> {
        match &self.paths.battery {
            Some(p) => QuestionBattery::load(Path::new(p))
                .map_err(|e| PipelineError::ConfigInvalid(e.to_string())),
            None => Ok(crate::notes::default_battery()),
        }
    }

    pub fn chat_endpoint(
        &self,
        battery: &QuestionBattery,
    ) -> Result<Box<dyn ChatEndpoint>, PipelineError> {
        match &self.extraction {
            ExtractionEndpointConfig::Stub => {
                Ok(Box::new(MarkerStubEndpoint::new(battery.clone())))
            }
            ExtractionEndpointConfig::Http { client } => Ok(Box::new(
                HttpChatEndpoint::new(client).map_err(|e| {
                    PipelineError::ConfigInvalid(format!("chat endpoint: {e}"))
                })?,
            )),
        }
    }

    pub fn client_cfg(&self) -> ClientConfig {
        match &self.extraction {
            ExtractionEndpointConfig::Stub => ClientConfig::default(),
            ExtractionEndpointConfig::Http { client } => client.clone(),
        }
    }

    pub fn text_embedder(&self, source: &ProviderConfig) -> Result<TextProvider, PipelineError> {
        match source {
            ProviderConfig::Stub {
                dimension,
                token_limit,
                seed,
            } => Ok(TextProvider::Live(Box::new(StubTextEmbedder {
                dimension: *dimension,
                token_limit: *token_limit,
                seed: *seed,
            }))),
            ProviderConfig::Http {
                url,
                dimension,
                token_limit,
                timeout_s,
            } => Ok(TextProvider::Live(Box::new(
                HttpTextEmbedder::new(url, *dimension, *token_limit, *timeout_s)
                    .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?,
            ))),
            ProviderConfig::File { path } => Ok(TextProvider::Precomputed(
                VectorStore::load(Path::new(path))
                    .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?,
            )),
        }
    }

    pub fn image_embedder(&self) -> Result<ImageProvider, PipelineError> {
        match &self.providers.image {
            ProviderConfig::Stub { dimension, seed, .. } => {
                Ok(ImageProvider::Live(Box::new(StubImageEmbedder {
                    dimension: *dimension,
                    seed: *seed,
                })))
            }
            ProviderConfig::Http {
                url,
                dimension,
                timeout_s,
                ..
            } => Ok(ImageProvider::Live(Box::new(
                HttpImageEmbedder::new(url, *dimension, *timeout_s)
                    .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?,
            ))),
            ProviderConfig::File { path } => Ok(ImageProvider::Precomputed(
                VectorStore::load(Path::new(path))
                    .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?,
            )),
        }
    }
}

/// A text source is either a live chunk-level embedder or a file of
/// precomputed patient-level vectors.
pub enum TextProvider {
    Live(Box<dyn TextEmbedder>),
    Precomputed(VectorStore),
}

impl TextProvider {
    pub fn dimension(&self) -> usize {
        match self {
            TextProvider::Live(p) => p.dimension(),
            TextProvider::Precomputed(s) => s.dimension(),
        }
    }

    pub fn patient_vector(
        &self,
        patient_id: &str,
        text: &str,
    ) -> Result<Option<Vec<f64>>, crate::embedding::EmbedError> {
        match self {
            TextProvider::Live(p) => {
                if text.trim().is_empty() {
                    Ok(None)
                } else {
                    embed_text(text, p.as_ref()).map(Some)
                }
            }
            TextProvider::Precomputed(store) => Ok(store.get(patient_id).cloned()),
        }
    }
}

pub enum ImageProvider {
    Live(Box<dyn ImageEmbedder>),
    Precomputed(VectorStore),
}

impl ImageProvider {
    pub fn dimension(&self) -> usize {
        match self {
            ImageProvider::Live(p) => p.dimension(),
            ImageProvider::Precomputed(s) => s.dimension(),
        }
    }

    pub fn patient_vector(
        &self,
        patient_id: &str,
        image_ref: Option<&str>,
    ) -> Result<Option<Vec<f64>>, crate::embedding::EmbedError> {
        match self {
            ImageProvider::Live(p) => match image_ref {
                Some(r) => {
                    let refs = image_slice_refs(r);
                    if refs.is_empty() {
                        Ok(None)
                    } else {
                        embed_image_series(&refs, p.as_ref()).map(Some)
                    }
                }
                None => Ok(None),
            },
            ImageProvider::Precomputed(store) => Ok(store.get(patient_id).cloned()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub name: &'static str,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub confusion: crate::eval::ConfusionMatrix,
    pub metrics: Metrics,
    pub confidence: ConfidenceSeparation,
    pub expert_review_count: usize,
}

/// What a pipeline run produced: every artifact with its content hash plus
/// the evaluation summary.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub steps: Vec<StepRecord>,
    pub summary: Option<MetricsSummary>,
}

fn artifact(out_dir: &Path, name: &str) -> Result<ArtifactRecord, PipelineError> {
    let path = out_dir.join(name);
    let bytes = fs::read(&path)?;
    Ok(ArtifactRecord {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Writes the staging CSV: patient_id, four_stage, two_stage, binary,
/// system_used.
pub fn write_stage_csv(
    assignments: &[StageAssignment],
    path: &Path,
    config_hash: Option<&str>,
) -> Result<(), PipelineError> {
    use std::io::Write;
    let mut file = fs::File::create(path)?;
    if let Some(hash) = config_hash {
        writeln!(file, "# config_hash={hash}")?;
    }
    writeln!(file, "patient_id,four_stage,two_stage,binary,system_used")?;
    for a in assignments {
        let enum_str = |v: &serde_json::Value| v.as_str().unwrap_or_default().to_string();
        let four = a
            .four_stage
            .map(|s| enum_str(&serde_json::to_value(s).unwrap()))
            .unwrap_or_default();
        let two = a
            .two_stage
            .map(|s| enum_str(&serde_json::to_value(s).unwrap()))
            .unwrap_or_default();
        writeln!(
            file,
            "{},{},{},{},{}",
            a.patient_id,
            four,
            two,
            a.binary,
            enum_str(&serde_json::to_value(a.system_used).unwrap()),
        )?;
    }
    Ok(())
}

/// Writes predictions CSV: patient_id, mean_prob, variance, label, triage.
pub fn write_predictions_csv(
    predictions: &[(EnsemblePrediction, TriageVerdict)],
    path: &Path,
    config_hash: Option<&str>,
) -> Result<(), PipelineError> {
    use std::io::Write;
    let mut file = fs::File::create(path)?;
    if let Some(hash) = config_hash {
        writeln!(file, "# config_hash={hash}")?;
    }
    writeln!(file, "patient_id,mean_prob,variance,label,triage")?;
    for (p, verdict) in predictions {
        writeln!(
            file,
            "{},{},{},{},{verdict}",
            p.patient_id, p.mean_prob, p.variance, p.label
        )?;
    }
    Ok(())
}

/// One predictions-CSV row: id, mean probability, variance, label, verdict.
pub type PredictionRow = (String, f64, f64, BinaryLabel, TriageVerdict);

/// Reads a predictions CSV back along with its embedded config hash.
pub fn read_predictions_csv(
    path: &Path,
) -> Result<(Vec<PredictionRow>, Option<String>), PipelineError> {
    let raw = fs::read_to_string(path)?;
    let mut lines = raw.lines();
    let mut first = lines.next().ok_or_else(|| PipelineError::StepFailed {
        step: "read-predictions",
        message: "empty file".into(),
    })?;
    let mut hash = None;
    if let Some(rest) = first.strip_prefix("# config_hash=") {
        hash = Some(rest.trim().to_string());
        first = lines.next().unwrap_or_default();
    }
    if !first.starts_with("patient_id,") {
        return Err(PipelineError::StepFailed {
            step: "read-predictions",
            message: format!("unexpected header {first:?}"),
        });
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(PipelineError::StepFailed {
                step: "read-predictions",
                message: format!("bad row {line:?}"),
            });
        }
        let label = match parts[3] {
            "cachectic" => BinaryLabel::Cachectic,
            "non_cachectic" => BinaryLabel::NonCachectic,
            other => {
                return Err(PipelineError::StepFailed {
                    step: "read-predictions",
                    message: format!("bad label {other:?}"),
                })
            }
        };
        let verdict = match parts[4] {
            "auto_accept" => TriageVerdict::AutoAccept,
            "expert_review" => TriageVerdict::ExpertReview,
            other => {
                return Err(PipelineError::StepFailed {
                    step: "read-predictions",
                    message: format!("bad verdict {other:?}"),
                })
            }
        };
        rows.push((
            parts[0].to_string(),
            parts[1].parse().map_err(step_err("read-predictions"))?,
            parts[2].parse().map_err(step_err("read-predictions"))?,
            label,
            verdict,
        ));
    }
    Ok((rows, hash))
}

fn check_hash(
    path: &Path,
    found: Option<&str>,
    expected: &str,
) -> Result<(), PipelineError> {
    match found {
        Some(h) if h == expected => Ok(()),
        other => Err(PipelineError::ArtifactMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: other.map(str::to_string),
        }),
    }
}

/// Builds tabular feature rows for a cohort (imputer fitted on the same
/// cohort, which is the training population in a pipeline run).
pub fn featurize_cohort(
    cohort: &Cohort,
    schema: &SchemaConfig,
    answers: Option<&[Vec<i8>]>,
) -> Result<FeatureMatrix, PipelineError> {
    let imputer = fit_imputer(cohort).map_err(step_err("featurize"))?;
    let mut rows = Vec::with_capacity(cohort.len());
    let mut ids = Vec::with_capacity(cohort.len());
    for (i, record) in cohort.iter().enumerate() {
        let imputed = impute(record, &imputer);
        let panel = derive_panel(&imputed);
        let row_answers = answers.map(|a| a[i].as_slice());
        let v = encode_features(&imputed, &panel, row_answers, schema)
            .map_err(step_err("featurize"))?;
        rows.push(v.values);
        ids.push(record.patient_id.clone());
    }
    Ok(FeatureMatrix {
        schema: schema.schema(),
        patient_ids: ids,
        rows,
    })
}

/// Builds fused embedding rows for a cohort.
pub fn embed_cohort(
    cohort: &Cohort,
    focused_texts: &[String],
    config: &PipelineConfig,
) -> Result<(Vec<Vec<f64>>, FusionConfig), PipelineError> {
    let tabular_provider = config
        .text_embedder(&config.providers.tabular)
        .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    let notes_provider = config
        .text_embedder(&config.providers.notes)
        .map_err(|e| PipelineError::ConfigInvalid(e.to_string()))?;
    let image_provider = config.image_embedder()?;
    let sources = &config.features.sources;
    let fusion = FusionConfig {
        tabular_dim: if sources.tabular {
            tabular_provider.dimension()
        } else {
            0
        },
        notes_dim: if sources.notes {
            notes_provider.dimension()
        } else {
            0
        },
        image_dim: if sources.image {
            image_provider.dimension()
        } else {
            0
        },
    };
    let imputer = fit_imputer(cohort).map_err(step_err("embed"))?;
    let mut rows = Vec::with_capacity(cohort.len());
    for (record, focused) in cohort.iter().zip(focused_texts) {
        let imputed = impute(record, &imputer);
        let panel = derive_panel(&imputed);
        let tabular = if sources.tabular {
            let text = serialize_tabular_text(&imputed, &panel);
            tabular_provider
                .patient_vector(&record.patient_id, &text)
                .map_err(step_err("embed"))?
        } else {
            None
        };
        let notes = if sources.notes {
            notes_provider
                .patient_vector(&record.patient_id, focused)
                .map_err(step_err("embed"))?
        } else {
            None
        };
        let image = if sources.image {
            image_provider
                .patient_vector(&record.patient_id, record.image_ref.as_deref())
                .map_err(step_err("embed"))?
        } else {
            None
        };
        let fused = fuse_concat(&record.patient_id, tabular, notes, image, &fusion)
            .map_err(step_err("embed"))?;
        rows.push(fused.fused);
    }
    Ok((rows, fusion))
}

/// Executes stage → featurize → extract-notes → embed → train → predict →
/// evaluate, writing artifacts under `out_dir` and returning the manifest.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let config_hash = config.config_hash();
    let out_dir = PathBuf::from(&config.paths.out_dir);
    fs::create_dir_all(&out_dir)?;
    let mut steps = Vec::new();

    // Stage.
    let cohort = load_cohort(Path::new(&config.paths.cohort)).map_err(step_err("stage"))?;
    let assignments = stage_cohort(&cohort, &config.staging).map_err(step_err("stage"))?;
    let staged: Vec<BinaryLabel> = assignments.iter().map(|a| a.binary).collect();
    write_stage_csv(&assignments, &out_dir.join("stage.csv"), Some(&config_hash))?;
    steps.push(StepRecord {
        name: "stage",
        artifacts: vec![artifact(&out_dir, "stage.csv")?],
    });

    // Extract notes (before featurize so answers can enter the tabular view).
    let battery = config.battery()?;
    let extractions: Option<Vec<ExtractionResult>> = if config.uses_notes() {
        let path = out_dir.join("extractions.jsonl");
        let reused = if path.exists() {
            match read_extractions_jsonl(&path) {
                Ok((results, Some(hash)))
                    if hash == config_hash
                        && results.len() == cohort.len()
                        && results
                            .iter()
                            .zip(&cohort)
                            .all(|(r, c)| r.patient_id == c.patient_id) =>
                {
                    log::info!("extract-notes: reusing {}", path.display());
                    Some(results)
                }
                _ => None,
            }
        } else {
            None
        };
        let results = match reused {
            Some(r) => r,
            None => {
                let endpoint = config.chat_endpoint(&battery)?;
                let results =
                    extract_cohort(&cohort, &battery, endpoint.as_ref(), &config.client_cfg())
                        .map_err(step_err("extract-notes"))?;
                write_extractions_jsonl(&results, &path, Some(&config_hash))
                    .map_err(step_err("extract-notes"))?;
                results
            }
        };
        Some(results)
    } else {
        None
    };

    // Featurize (tabular view is always produced).
    let answers: Option<Vec<Vec<i8>>> = extractions
        .as_ref()
        .map(|results| results.iter().map(tabularize).collect());
    let matrix = featurize_cohort(&cohort, &config.schema, answers.as_deref())?;
    write_features_csv(&matrix, &out_dir.join("features.csv"), Some(&config_hash))
        .map_err(step_err("featurize"))?;
    steps.push(StepRecord {
        name: "featurize",
        artifacts: vec![artifact(&out_dir, "features.csv")?],
    });
    if extractions.is_some() {
        steps.push(StepRecord {
            name: "extract-notes",
            artifacts: vec![artifact(&out_dir, "extractions.jsonl")?],
        });
    }

    // Embed (only in embeddings mode). Training rows round-trip through the
    // artifact so a resumed run sees bit-identical inputs.
    let (train_rows, fingerprint) = match config.features.mode {
        FeatureModeKind::Tabular => {
            let (matrix_back, hash) = read_features_csv(&out_dir.join("features.csv"))
                .map_err(step_err("featurize"))?;
            check_hash(
                &out_dir.join("features.csv"),
                hash.as_deref(),
                &config_hash,
            )?;
            let fingerprint = schema_fingerprint(&matrix.schema);
            (matrix_back.rows, fingerprint)
        }
        FeatureModeKind::Embeddings => {
            let focused: Vec<String> = match &extractions {
                Some(results) => results.iter().map(focused_text).collect(),
                None => vec![String::new(); cohort.len()],
            };
            let (rows, fusion) = embed_cohort(&cohort, &focused, config)?;
            let emb_path = out_dir.join("fused.emb");
            let records: Vec<(String, Vec<f64>)> = cohort
                .iter()
                .map(|r| r.patient_id.clone())
                .zip(rows)
                .collect();
            let dim = fusion.fused_len();
            write_embedding_file(&emb_path, dim, &records).map_err(step_err("embed"))?;
            fs::write(
                out_dir.join("fused.emb.meta.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "config_hash": config_hash,
                    "dimension": dim,
                    "fusion": fusion,
                }))
                .expect("meta serializes"),
            )?;
            steps.push(StepRecord {
                name: "embed",
                artifacts: vec![
                    artifact(&out_dir, "fused.emb")?,
                    artifact(&out_dir, "fused.emb.meta.json")?,
                ],
            });
            let store = VectorStore::load(&emb_path).map_err(step_err("embed"))?;
            let rows: Vec<Vec<f64>> = cohort
                .iter()
                .map(|r| store.require(&r.patient_id))
                .collect::<Result<_, _>>()
                .map_err(step_err("embed"))?;
            let fingerprint = sha256_hex(format!("fused:{dim}").as_bytes());
            (rows, fingerprint)
        }
    };

    // Train (resumable from a matching model file).
    let labels: Vec<f64> = staged
        .iter()
        .map(|l| f64::from(*l == BinaryLabel::Cachectic))
        .collect();
    let model_path = out_dir.join("model.json");
    let ensemble: TrainedEnsemble = {
        let reused = if model_path.exists() {
            match load_model(&model_path) {
                Ok(m) if m.config_hash == config_hash && m.schema_fingerprint == fingerprint => {
                    log::info!("train: reusing {}", model_path.display());
                    Some(m)
                }
                _ => None,
            }
        } else {
            None
        };
        match reused {
            Some(m) => m,
            None => {
                let archs = search_hyperparams(
                    &train_rows,
                    &labels,
                    &SearchSpace {
                        folds: config.training.k,
                        ..config.search.space.clone()
                    },
                    config.search.budget,
                    mix_seed(&[config.seed, 1]),
                    &config.training.train,
                )
                .map_err(step_err("train"))?;
                let ensemble = ensemble_train(
                    &train_rows,
                    &labels,
                    &archs,
                    &EnsembleOptions {
                        k: config.training.k,
                        global_seed: mix_seed(&[config.seed, 2]),
                        train: config.training.train.clone(),
                        schema_fingerprint: fingerprint.clone(),
                        config_hash: config_hash.clone(),
                    },
                )
                .map_err(step_err("train"))?;
                save_model(&ensemble, &model_path).map_err(step_err("train"))?;
                ensemble
            }
        }
    };
    steps.push(StepRecord {
        name: "train",
        artifacts: vec![artifact(&out_dir, "model.json")?],
    });

    // Predict.
    let threshold = config
        .variance_threshold
        .unwrap_or(ensemble.default_variance_threshold);
    let mut predictions = Vec::with_capacity(cohort.len());
    for (record, row) in cohort.iter().zip(&train_rows) {
        let p = ensemble_predict(&ensemble, &record.patient_id, row)
            .map_err(step_err("predict"))?;
        let verdict = triage(&p, threshold);
        predictions.push((p, verdict));
    }
    write_predictions_csv(&predictions, &out_dir.join("predictions.csv"), Some(&config_hash))?;
    steps.push(StepRecord {
        name: "predict",
        artifacts: vec![artifact(&out_dir, "predictions.csv")?],
    });

    // Evaluate against gold labels where present, staged labels otherwise.
    let reference: Vec<BinaryLabel> = cohort
        .iter()
        .zip(&staged)
        .map(|(r, s)| r.gold_label.unwrap_or(*s))
        .collect();
    let predicted: Vec<BinaryLabel> = predictions.iter().map(|(p, _)| p.label).collect();
    let m = confusion(&predicted, &reference).map_err(step_err("evaluate"))?;
    let metric_values = metrics(&m).map_err(step_err("evaluate"))?;
    let separation = confidence_separation(
        &predictions
            .iter()
            .zip(&reference)
            .map(|((p, _), gold)| (p.variance, p.label == *gold))
            .collect::<Vec<_>>(),
    );
    let summary = MetricsSummary {
        n: cohort.len(),
        confusion: m,
        metrics: metric_values,
        confidence: separation,
        expert_review_count: predictions
            .iter()
            .filter(|(_, v)| *v == TriageVerdict::ExpertReview)
            .count(),
    };
    fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config_hash": config_hash,
            "summary": summary,
        }))
        .expect("summary serializes"),
    )?;
    steps.push(StepRecord {
        name: "evaluate",
        artifacts: vec![artifact(&out_dir, "metrics.json")?],
    });

    let manifest = RunManifest {
        config_hash,
        steps,
        summary: Some(summary),
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{generate, AvailabilityRates};

    fn small_config(dir: &Path) -> PipelineConfig {
        let synth = SynthConfig {
            n_patients: 50,
            availability: AvailabilityRates::full(),
            ..Default::default()
        };
        let cohort = generate(&synth, 3).unwrap();
        let cohort_path = dir.join("cohort.jsonl");
        crate::cohort::save_cohort(&cohort, &cohort_path).unwrap();
        let battery_path = dir.join("battery.json");
        fs::write(
            &battery_path,
            serde_json::to_string(&crate::notes::default_battery()).unwrap(),
        )
        .unwrap();
        PipelineConfig {
            paths: PathsConfig {
                cohort: cohort_path.display().to_string(),
                battery: Some(battery_path.display().to_string()),
                gold_answers: None,
                out_dir: dir.join("out").display().to_string(),
            },
            search: SearchConfig {
                budget: 5,
                space: SearchSpace {
                    width_options: vec![8, 12, 16],
                    ..Default::default()
                },
            },
            training: TrainingConfig {
                k: 5,
                train: TrainConfig {
                    max_epochs: 20,
                    patience: 4,
                    ..Default::default()
                },
            },
            synth,
            ..Default::default()
        }
    }

    #[test]
    fn full_run_has_expected_steps_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.features.mode = FeatureModeKind::Embeddings;
        let manifest = run_pipeline(&config).unwrap();
        let names: Vec<&str> = manifest.steps.iter().map(|s| s.name).collect();
        assert_eq!(
            names,
            vec![
                "stage",
                "featurize",
                "extract-notes",
                "embed",
                "train",
                "predict",
                "evaluate"
            ]
        );
        assert_eq!(manifest.steps.len(), 7);
        // Rerun with the unchanged config: every artifact hash identical.
        let again = run_pipeline(&config).unwrap();
        let hashes = |m: &RunManifest| -> Vec<String> {
            m.steps
                .iter()
                .flat_map(|s| s.artifacts.iter().map(|a| a.sha256.clone()))
                .collect()
        };
        assert_eq!(hashes(&manifest), hashes(&again));
        assert_eq!(manifest.config_hash, again.config_hash);
    }

    #[test]
    fn tabular_run_without_notes_skips_steps() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.schema.notes = false;
        config.paths.battery = None;
        let manifest = run_pipeline(&config).unwrap();
        let names: Vec<&str> = manifest.steps.iter().map(|s| s.name).collect();
        assert_eq!(
            names,
            vec!["stage", "featurize", "train", "predict", "evaluate"]
        );
    }

    #[test]
    fn notes_enabled_without_battery_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.paths.battery = None; // schema.notes stays true
        let err = run_pipeline(&config).unwrap_err();
        assert!(matches!(err, PipelineError::ConfigInvalid(_)));
    }

    #[test]
    fn missing_cohort_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_config(dir.path());
        config.paths.cohort = dir.path().join("absent.jsonl").display().to_string();
        assert!(matches!(
            run_pipeline(&config),
            Err(PipelineError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn artifact_hash_mismatch_refuses_to_combine() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        fs::write(&path, "# config_hash=aaaa\npatient_id,x\np1,1\n").unwrap();
        let (_, hash) = read_features_csv(&path).unwrap();
        assert!(check_hash(&path, hash.as_deref(), "bbbb").is_err());
        assert!(check_hash(&path, hash.as_deref(), "aaaa").is_ok());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let h1 = config.config_hash();
        let h2 = config.config_hash();
        assert_eq!(h1, h2);
        let mut changed = config.clone();
        changed.seed = 99;
        assert_ne!(h1, changed.config_hash());
    }

    #[test]
    fn config_toml_round_trip() {
        let config = PipelineConfig::default();
        let text = toml::to_string(&config).unwrap();
        let parsed: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, config);
    }
}
