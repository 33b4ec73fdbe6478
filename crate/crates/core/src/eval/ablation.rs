//! The five-experiment modality ablation: stage, featurize (tabular or fused
//! embeddings), search, train the ensemble, and evaluate on a stratified
//! held-out split, reporting metrics and confidence statistics per experiment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::synth::image_slice_refs;
use super::{confidence_separation, confusion, metrics, EvalError};
use crate::biomarkers::derive_panel;
use crate::cohort::{BinaryLabel, PatientRecord};
use crate::embedding::{
    embed_image_series, embed_text, fuse_concat, FusionConfig, ImageEmbedder, TextEmbedder,
};
use crate::features::{
    encode_features, fit_imputer, impute, serialize_tabular_text, ColumnKind, FeatureColumn,
    SchemaConfig,
};
use crate::hashing::mix_seed;
use crate::learner::{
    ensemble_predict, ensemble_train, search_hyperparams, triage, EnsembleOptions, SearchSpace,
    TrainConfig, TriageVerdict,
};
use crate::notes::{
    extract_answers, focused_text, tabularize, ChatEndpoint, ClientConfig, QuestionBattery,
};
use crate::staging::{assign_stage, FourStageRuleTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSelection {
    pub tabular: bool,
    pub notes: bool,
    pub image: bool,
}

impl Default for EmbeddingSelection {
    fn default() -> Self {
        Self {
            tabular: true,
            notes: true,
            image: false,
        }
    }
}

/// How one experiment builds its feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeatureMode {
    Tabular { schema: SchemaConfig },
    Embeddings { sources: EmbeddingSelection },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub feature_mode: FeatureMode,
}

/// The five standard experiments, in the fixed comparison order.
pub fn standard_configs() -> Vec<AblationConfig> {
    let tabular = |name: &str, labs: bool, notes: bool| AblationConfig {
        name: name.to_string(),
        feature_mode: FeatureMode::Tabular {
            schema: SchemaConfig {
                clinical: true,
                sm: true,
                labs,
                notes,
                ..SchemaConfig::default()
            },
        },
    };
    vec![
        tabular("clinical_sm", false, false),
        tabular("clinical_sm_labs", true, false),
        tabular("clinical_sm_labs_notes", true, true),
        AblationConfig {
            name: "embeddings_tabular_notes".to_string(),
            feature_mode: FeatureMode::Embeddings {
                sources: EmbeddingSelection {
                    tabular: true,
                    notes: true,
                    image: false,
                },
            },
        },
        AblationConfig {
            name: "embeddings_tabular_notes_image".to_string(),
            feature_mode: FeatureMode::Embeddings {
                sources: EmbeddingSelection {
                    tabular: true,
                    notes: true,
                    image: true,
                },
            },
        },
    ]
}

/// Everything an ablation run needs besides the cohort: the extraction
/// endpoint, embedding providers, staging rules, and training settings.
pub struct AblationContext<'a> {
    pub chat_endpoint: &'a dyn ChatEndpoint,
    pub client_cfg: ClientConfig,
    pub battery: QuestionBattery,
    pub text_embedder: &'a dyn TextEmbedder,
    pub image_embedder: &'a dyn ImageEmbedder,
    pub rules: FourStageRuleTable,
    pub search_space: SearchSpace,
    pub search_budget: usize,
    pub train: TrainConfig,
    pub k: usize,
    pub test_fraction: f64,
    pub variance_threshold_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub modalities: String,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_var_correct: Option<f64>,
    pub mean_var_incorrect: Option<f64>,
    pub median_var_correct: Option<f64>,
    pub median_var_incorrect: Option<f64>,
    pub variance_threshold: f64,
    pub expert_review_rate_incorrect: Option<f64>,
    pub auto_accept_rate_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub report_version: u32,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// One held-out prediction with its triage verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestPrediction {
    pub patient_id: String,
    pub mean_prob: f64,
    pub variance: f64,
    pub predicted: BinaryLabel,
    pub gold: BinaryLabel,
    pub correct: bool,
    pub verdict: TriageVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigRunDetail {
    pub name: String,
    pub variance_threshold: f64,
    pub predictions: Vec<TestPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationOutcome {
    pub report: AblationReport,
    pub details: Vec<ConfigRunDetail>,
}

/// Stratified train/test index split by label, seeded.
pub fn stratified_split(
    labels: &[BinaryLabel],
    test_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [BinaryLabel::Cachectic, BinaryLabel::NonCachectic] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        test.extend(members.iter().take(n_test).copied());
        train.extend(members.iter().skip(n_test).copied());
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

struct PatientDerived {
    answers: Vec<i8>,
    focused: String,
}

fn embedding_schema(cfg: &FusionConfig) -> Vec<FeatureColumn> {
    let mut cols = Vec::new();
    for (prefix, dim) in [
        ("emb_tabular", cfg.tabular_dim),
        ("emb_notes", cfg.notes_dim),
        ("emb_image", cfg.image_dim),
    ] {
        for i in 0..dim {
            cols.push(FeatureColumn {
                name: format!("{prefix}_{i:03}"),
                kind: ColumnKind::Numeric,
            });
        }
    }
    for (prefix, dim) in [
        ("emb_tabular", cfg.tabular_dim),
        ("emb_notes", cfg.notes_dim),
        ("emb_image", cfg.image_dim),
    ] {
        if dim > 0 {
            cols.push(FeatureColumn {
                name: format!("{prefix}_present"),
                kind: ColumnKind::PresenceFlag,
            });
        }
    }
    cols
}

/// Builds feature rows for every patient under one experiment config.
/// The imputer is fitted on the training indices only.
#[allow(clippy::too_many_arguments)]
fn build_rows(
    cohort: &[PatientRecord],
    derived: &[PatientDerived],
    config: &AblationConfig,
    train_idx: &[usize],
    text_embedder: &dyn TextEmbedder,
    image_embedder: &dyn ImageEmbedder,
) -> Result<(Vec<Vec<f64>>, Vec<FeatureColumn>), EvalError> {
    let training: Vec<PatientRecord> = train_idx.iter().map(|&i| cohort[i].clone()).collect();
    let imputer = fit_imputer(&training)?;
    match &config.feature_mode {
        FeatureMode::Tabular { schema } => {
            let mut rows = Vec::with_capacity(cohort.len());
            for (record, extra) in cohort.iter().zip(derived) {
                let imputed = impute(record, &imputer);
                let panel = derive_panel(&imputed);
                let answers = schema.notes.then_some(extra.answers.as_slice());
                let v = encode_features(&imputed, &panel, answers, schema)?;
                rows.push(v.values);
            }
            Ok((rows, schema.schema()))
        }
        FeatureMode::Embeddings { sources } => {
            let fusion = FusionConfig {
                tabular_dim: if sources.tabular {
                    text_embedder.dimension()
                } else {
                    0
                },
                notes_dim: if sources.notes {
                    text_embedder.dimension()
                } else {
                    0
                },
                image_dim: if sources.image {
                    image_embedder.dimension()
                } else {
                    0
                },
            };
            let mut rows = Vec::with_capacity(cohort.len());
            for (record, extra) in cohort.iter().zip(derived) {
                let imputed = impute(record, &imputer);
                let panel = derive_panel(&imputed);
                let tabular = if sources.tabular {
                    let text = serialize_tabular_text(&imputed, &panel);
                    Some(embed_text(&text, text_embedder)?)
                } else {
                    None
                };
                let notes = if sources.notes && !extra.focused.trim().is_empty() {
                    Some(embed_text(&extra.focused, text_embedder)?)
                } else {
                    None
                };
                let image = match (&record.image_ref, sources.image) {
                    (Some(r), true) => {
                        let refs = image_slice_refs(r);
                        if refs.is_empty() {
                            None
                        } else {
                            Some(embed_image_series(&refs, image_embedder)?)
                        }
                    }
                    _ => None,
                };
                let fused = fuse_concat(&record.patient_id, tabular, notes, image, &fusion)?;
                rows.push(fused.fused);
            }
            Ok((rows, embedding_schema(&fusion)))
        }
    }
}

/// Runs the experiments in order on one cohort. Training labels come from the
/// staging engine; held-out metrics are scored against the gold label when
/// present (staged label otherwise).
pub fn run_ablation(
    cohort: &[PatientRecord],
    configs: &[AblationConfig],
    ctx: &AblationContext<'_>,
    seed: u64,
) -> Result<AblationOutcome, EvalError> {
    let staged: Vec<BinaryLabel> = cohort
        .iter()
        .map(|r| assign_stage(r, &ctx.rules).map(|a| a.binary))
        .collect::<Result<_, _>>()?;
    let gold: Vec<BinaryLabel> = cohort
        .iter()
        .zip(&staged)
        .map(|(r, s)| r.gold_label.unwrap_or(*s))
        .collect();

    let needs_notes = configs.iter().any(|c| match &c.feature_mode {
        FeatureMode::Tabular { schema } => schema.notes,
        FeatureMode::Embeddings { sources } => sources.notes,
    });
    let derived: Vec<PatientDerived> = cohort
        .iter()
        .map(|record| -> Result<PatientDerived, EvalError> {
            if needs_notes {
                let result = extract_answers(
                    &record.patient_id,
                    record.notes.as_ref(),
                    &ctx.battery,
                    ctx.chat_endpoint,
                    &ctx.client_cfg,
                )?;
                Ok(PatientDerived {
                    answers: tabularize(&result),
                    focused: focused_text(&result),
                })
            } else {
                Ok(PatientDerived {
                    answers: vec![-1; ctx.battery.len()],
                    focused: String::new(),
                })
            }
        })
        .collect::<Result<_, _>>()?;

    let (train_idx, test_idx) =
        stratified_split(&gold, ctx.test_fraction, mix_seed(&[seed, 0x5147]));

    let mut rows_out = Vec::new();
    let mut details = Vec::new();
    for (config_index, config) in configs.iter().enumerate() {
        let cfg_seed = mix_seed(&[seed, config_index as u64]);
        let (rows, schema) = build_rows(
            cohort,
            &derived,
            config,
            &train_idx,
            ctx.text_embedder,
            ctx.image_embedder,
        )?;
        let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
        let train_labels: Vec<f64> = train_idx
            .iter()
            .map(|&i| f64::from(staged[i] == BinaryLabel::Cachectic))
            .collect();

        let mut space = ctx.search_space.clone();
        space.folds = ctx.k;
        let archs = search_hyperparams(
            &train_rows,
            &train_labels,
            &space,
            ctx.search_budget,
            mix_seed(&[cfg_seed, 1]),
            &ctx.train,
        )?;
        let opts = EnsembleOptions {
            k: ctx.k,
            global_seed: mix_seed(&[cfg_seed, 2]),
            train: ctx.train.clone(),
            schema_fingerprint: crate::features::schema_fingerprint(&schema),
            config_hash: String::new(),
        };
        let ensemble = ensemble_train(&train_rows, &train_labels, &archs, &opts)?;
        let threshold = ctx
            .variance_threshold_override
            .unwrap_or(ensemble.default_variance_threshold);

        let mut predictions = Vec::with_capacity(test_idx.len());
        for &i in &test_idx {
            let p = ensemble_predict(&ensemble, &cohort[i].patient_id, &rows[i])?;
            let verdict = triage(&p, threshold);
            predictions.push(TestPrediction {
                patient_id: p.patient_id.clone(),
                mean_prob: p.mean_prob,
                variance: p.variance,
                predicted: p.label,
                gold: gold[i],
                correct: p.label == gold[i],
                verdict,
            });
        }

        let preds: Vec<BinaryLabel> = predictions.iter().map(|p| p.predicted).collect();
        let golds: Vec<BinaryLabel> = predictions.iter().map(|p| p.gold).collect();
        let m = metrics(&confusion(&preds, &golds)?)?;
        let sep = confidence_separation(
            &predictions
                .iter()
                .map(|p| (p.variance, p.correct))
                .collect::<Vec<_>>(),
        );
        let incorrect: Vec<&TestPrediction> =
            predictions.iter().filter(|p| !p.correct).collect();
        let correct: Vec<&TestPrediction> = predictions.iter().filter(|p| p.correct).collect();
        let rate = |items: &[&TestPrediction], verdict: TriageVerdict| {
            if items.is_empty() {
                None
            } else {
                Some(
                    items.iter().filter(|p| p.verdict == verdict).count() as f64
                        / items.len() as f64,
                )
            }
        };

        rows_out.push(AblationRow {
            name: config.name.clone(),
            modalities: describe_modalities(config),
            n_train: train_idx.len(),
            n_test: test_idx.len(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            mean_var_correct: sep.correct.map(|s| s.mean),
            mean_var_incorrect: sep.incorrect.map(|s| s.mean),
            median_var_correct: sep.correct.map(|s| s.median),
            median_var_incorrect: sep.incorrect.map(|s| s.median),
            variance_threshold: threshold,
            expert_review_rate_incorrect: rate(&incorrect, TriageVerdict::ExpertReview),
            auto_accept_rate_correct: rate(&correct, TriageVerdict::AutoAccept),
        });
        details.push(ConfigRunDetail {
            name: config.name.clone(),
            variance_threshold: threshold,
            predictions,
        });
    }

    Ok(AblationOutcome {
        report: AblationReport {
            report_version: 1,
            seed,
            rows: rows_out,
        },
        details,
    })
}

fn describe_modalities(config: &AblationConfig) -> String {
    match &config.feature_mode {
        FeatureMode::Tabular { schema } => {
            let mut parts = Vec::new();
            if schema.clinical {
                parts.push("clinical");
            }
            if schema.sm {
                parts.push("sm");
            }
            if schema.labs {
                parts.push("labs");
            }
            if schema.notes {
                parts.push("notes");
            }
            format!("tabular:{}", parts.join("+"))
        }
        FeatureMode::Embeddings { sources } => {
            let mut parts = Vec::new();
            if sources.tabular {
                parts.push("tabular");
            }
            if sources.notes {
                parts.push("notes");
            }
            if sources.image {
                parts.push("image");
            }
            format!("embeddings:{}", parts.join("+"))
        }
    }
}

/// CSV mirror of the report, one row per experiment.
pub fn report_to_csv(report: &AblationReport) -> String {
    let mut out = String::from(
        "name,modalities,n_train,n_test,accuracy,precision,recall,f1,\
         mean_var_correct,mean_var_incorrect,median_var_correct,median_var_incorrect,\
         variance_threshold,expert_review_rate_incorrect,auto_accept_rate_correct\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.modalities,
            r.n_train,
            r.n_test,
            r.accuracy,
            r.precision,
            r.recall,
            r.f1,
            opt(r.mean_var_correct),
            opt(r.mean_var_incorrect),
            opt(r.median_var_correct),
            opt(r.median_var_incorrect),
            r.variance_threshold,
            opt(r.expert_review_rate_incorrect),
            opt(r.auto_accept_rate_correct),
        ));
    }
    out
}
