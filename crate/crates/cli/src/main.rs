//! `cachexia` — command-line runner for the multimodal cachexia biomarker
//! pipeline. Each subcommand mirrors one pipeline stage; `run` chains them
//! under one config file.
//!
//! Exit codes: 0 success, 2 config error, 3 step failure.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cachexia::cohort::{load_cohort, modality_mask, save_cohort, validate_record, BinaryLabel};
use cachexia::eval::{
    confidence_separation, confusion, generate, metrics, report_to_csv, run_ablation,
    standard_configs, AblationContext, SynthConfig,
};
use cachexia::features::read_features_csv;
use cachexia::hashing::mix_seed;
use cachexia::learner::{
    ensemble_predict, ensemble_train, load_model, save_model, search_hyperparams, triage,
    EnsembleOptions, SearchSpace, TriageVerdict,
};
use cachexia::notes::{
    default_battery, extract_cohort, load_gold_answers, read_extractions_jsonl, score_extractions,
    write_extractions_jsonl,
};
use cachexia::pipeline::{
    embed_cohort, featurize_cohort, run_pipeline, write_predictions_csv, write_stage_csv,
    PipelineConfig, PipelineError,
};
use cachexia::staging::stage_cohort;

#[derive(Parser)]
#[command(
    name = "cachexia",
    about = "Multimodal cachexia biomarker pipeline",
    version
)]
struct Cli {
    /// Pipeline config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CohortArg {
    /// Cohort JSONL path (overrides the config).
    #[arg(long)]
    cohort: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with gold labels.
    GenerateCohort {
        /// Synthetic-cohort config (JSON); defaults mirror the published
        /// cohort tables.
        #[arg(long, value_name = "synth.json")]
        synth_config: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate every record and print violations.
    Validate {
        #[command(flatten)]
        cohort: CohortArg,
    },
    /// Assign cachexia stages and write the staging CSV.
    Stage {
        #[command(flatten)]
        cohort: CohortArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode the tabular feature matrix CSV.
    Featurize {
        #[command(flatten)]
        cohort: CohortArg,
        /// Comma-separated modality groups (clinical,sm,labs,notes).
        #[arg(long)]
        modalities: Option<String>,
        /// Extraction output to source structured note answers from.
        #[arg(long)]
        extractions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run structured extraction over every patient's notes.
    ExtractNotes {
        #[command(flatten)]
        cohort: CohortArg,
        #[arg(long)]
        battery: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score extraction output against gold answers.
    ScoreExtractions {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Produce fused embeddings for the configured sources.
    Embed {
        #[command(flatten)]
        cohort: CohortArg,
        /// Extraction output for focused notes text.
        #[arg(long)]
        extractions: Option<PathBuf>,
        /// Comma-separated sources (tabular,notes,image); overrides the config.
        #[arg(long)]
        sources: Option<String>,
        /// Provider override for every source: stub, file:<path>, or
        /// http:<url>.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hyperparameter search plus 5x10 ensemble training.
    Train {
        /// Feature matrix CSV from `featurize`.
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        cohort: CohortArg,
        /// Label source; only staging-derived labels are supported.
        #[arg(long, default_value = "from-staging")]
        labels: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a trained ensemble.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predictions against gold/staged labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        cohort: CohortArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the five modality-combination experiments.
    Ablation {
        #[command(flatten)]
        cohort: CohortArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Report JSON path; a CSV mirror is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute the full pipeline per the config file.
    Run,
    /// Write the default 26-question battery to a file.
    WriteBattery {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(2);
            }
        },
        None => PipelineConfig::default(),
    };
    match dispatch(cli.command, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map(|pe| match pe {
                    PipelineError::ConfigInvalid(_) => 2,
                    _ => 3,
                })
                .unwrap_or(3);
            ExitCode::from(code)
        }
    }
}

fn cohort_path(arg: &CohortArg, config: &PipelineConfig) -> PathBuf {
    arg.cohort
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.paths.cohort))
}

fn load_cohort_checked(path: &Path) -> Result<Vec<cachexia::cohort::PatientRecord>> {
    load_cohort(path).with_context(|| format!("loading cohort {}", path.display()))
}

fn battery_for(config: &PipelineConfig, path: Option<&PathBuf>) -> Result<cachexia::notes::QuestionBattery> {
    match path {
        Some(p) => Ok(cachexia::notes::QuestionBattery::load(p)?),
        None => Ok(config.battery()?),
    }
}

fn dispatch(command: Command, config: PipelineConfig) -> Result<()> {
    let config_hash = config.config_hash();
    match command {
        Command::GenerateCohort {
            synth_config,
            seed,
            out,
        } => {
            let synth: SynthConfig = match synth_config {
                Some(path) => serde_json::from_str(&fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                None => config.synth.clone(),
            };
            let cohort = generate(&synth, seed)?;
            save_cohort(&cohort, &out)?;
            println!("wrote {} patients to {}", cohort.len(), out.display());
        }
        Command::Validate { cohort } => {
            let path = cohort_path(&cohort, &config);
            let records = load_cohort_checked(&path)?;
            let mut total = 0usize;
            for record in &records {
                for v in validate_record(record) {
                    total += 1;
                    println!(
                        "{}\t{:?}\t{:?}\t{}",
                        record.patient_id, v.severity, v.code, v.detail
                    );
                }
            }
            let masks = records.iter().map(modality_mask).collect::<Vec<_>>();
            println!(
                "{} records, {} violations; labs {}, sm {}, notes {}, image {}",
                records.len(),
                total,
                masks.iter().filter(|m| m.has_labs).count(),
                masks.iter().filter(|m| m.has_sm).count(),
                masks.iter().filter(|m| m.has_notes).count(),
                masks.iter().filter(|m| m.has_image).count(),
            );
        }
        Command::Stage { cohort, out } => {
            let records = load_cohort_checked(&cohort_path(&cohort, &config))?;
            let assignments = stage_cohort(&records, &config.staging)?;
            write_stage_csv(&assignments, &out, Some(&config_hash))?;
            println!("staged {} patients -> {}", assignments.len(), out.display());
        }
        Command::Featurize {
            cohort,
            modalities,
            extractions,
            out,
        } => {
            let records = load_cohort_checked(&cohort_path(&cohort, &config))?;
            let mut schema = config.schema.clone();
            if let Some(spec) = modalities {
                let enabled: Vec<&str> = spec.split(',').map(str::trim).collect();
                schema.clinical = enabled.contains(&"clinical");
                schema.sm = enabled.contains(&"sm");
                schema.labs = enabled.contains(&"labs");
                schema.notes = enabled.contains(&"notes");
            }
            let answers = match extractions {
                Some(path) => Some(load_answers_in_cohort_order(&path, &records)?),
                None => None,
            };
            let matrix = featurize_cohort(&records, &schema, answers.as_deref())?;
            cachexia::features::write_features_csv(&matrix, &out, Some(&config_hash))?;
            println!(
                "wrote {} rows x {} columns to {}",
                matrix.rows.len(),
                matrix.schema.len(),
                out.display()
            );
        }
        Command::ExtractNotes {
            cohort,
            battery,
            out,
        } => {
            let records = load_cohort_checked(&cohort_path(&cohort, &config))?;
            let battery = battery_for(&config, battery.as_ref())?;
            let endpoint = config.chat_endpoint(&battery)?;
            let results =
                extract_cohort(&records, &battery, endpoint.as_ref(), &config.client_cfg())?;
            write_extractions_jsonl(&results, &out, Some(&config_hash))?;
            println!(
                "extracted {} patients (battery {}) -> {}",
                results.len(),
                battery.version_hash(),
                out.display()
            );
        }
        Command::ScoreExtractions { pred, gold } => {
            let (results, _) = read_extractions_jsonl(&pred)?;
            let gold = load_gold_answers(&gold)?;
            let summary = score_extractions(&results, &gold)?;
            for (id, score) in &summary.per_patient {
                println!("{id}\t{score}");
            }
            println!(
                "model {}: mean score {:.2} ({:.2}%) over {} patients",
                summary.model_name,
                summary.mean_score,
                summary.mean_percent,
                summary.per_patient.len()
            );
        }
        Command::Embed {
            cohort,
            extractions,
            sources,
            provider,
            out,
        } => {
            let mut config = config;
            if let Some(spec) = sources {
                let enabled: Vec<&str> = spec.split(',').map(str::trim).collect();
                config.features.sources = cachexia::eval::EmbeddingSelection {
                    tabular: enabled.contains(&"tabular"),
                    notes: enabled.contains(&"notes"),
                    image: enabled.contains(&"image"),
                };
            }
            if let Some(spec) = &provider {
                config.providers.tabular = override_provider(&config.providers.tabular, spec)?;
                config.providers.notes = override_provider(&config.providers.notes, spec)?;
                config.providers.image = override_provider(&config.providers.image, spec)?;
            }
            let records = load_cohort_checked(&cohort_path(&cohort, &config))?;
            let focused: Vec<String> = match extractions {
                Some(path) => {
                    let (results, _) = read_extractions_jsonl(&path)?;
                    let by_id: HashMap<String, String> = results
                        .iter()
                        .map(|r| (r.patient_id.clone(), cachexia::notes::focused_text(r)))
                        .collect();
                    records
                        .iter()
                        .map(|r| by_id.get(&r.patient_id).cloned().unwrap_or_default())
                        .collect()
                }
                None => vec![String::new(); records.len()],
            };
            let (rows, fusion) = embed_cohort(&records, &focused, &config)?;
            let pairs: Vec<(String, Vec<f64>)> = records
                .iter()
                .map(|r| r.patient_id.clone())
                .zip(rows)
                .collect();
            cachexia::embedding::write_embedding_file(&out, fusion.fused_len(), &pairs)?;
            println!(
                "wrote fused embeddings (dim {}) for {} patients to {}",
                fusion.fused_len(),
                pairs.len(),
                out.display()
            );
        }
        Command::Train {
            features,
            cohort,
            labels,
            out,
        } => {
            if labels != "from-staging" {
                bail!(PipelineError::ConfigInvalid(format!(
                    "unsupported label source {labels:?}; only from-staging is available"
                )));
            }
            let (matrix, hash) = read_features_csv(&features)?;
            if let Some(found) = &hash {
                if *found != config_hash {
                    bail!(PipelineError::ArtifactMismatch {
                        path: features.clone(),
                        expected: config_hash.clone(),
                        found: Some(found.clone()),
                    });
                }
            }
            let records = load_cohort_checked(&cohort_path(&cohort, &config))?;
            let assignments = stage_cohort(&records, &config.staging)?;
            let staged: HashMap<&str, BinaryLabel> = assignments
                .iter()
                .map(|a| (a.patient_id.as_str(), a.binary))
                .collect();
            let labels: Vec<f64> = matrix
                .patient_ids
                .iter()
                .map(|id| {
                    staged
                        .get(id.as_str())
                        .map(|l| f64::from(*l == BinaryLabel::Cachectic))
                        .context(format!("patient {id} missing from cohort"))
                })
                .collect::<Result<_>>()?;
            let archs = search_hyperparams(
                &matrix.rows,
                &labels,
                &SearchSpace {
                    folds: config.training.k,
                    ..config.search.space.clone()
                },
                config.search.budget,
                mix_seed(&[config.seed, 1]),
                &config.training.train,
            )?;
            let ensemble = ensemble_train(
                &matrix.rows,
                &labels,
                &archs,
                &EnsembleOptions {
                    k: config.training.k,
                    global_seed: mix_seed(&[config.seed, 2]),
                    train: config.training.train.clone(),
                    schema_fingerprint: matrix.fingerprint(),
                    config_hash: config_hash.clone(),
                },
            )?;
            save_model(&ensemble, &out)?;
            println!(
                "trained {} networks (variance threshold {:.6}) -> {}",
                ensemble.members.len() * config.training.k,
                ensemble.default_variance_threshold,
                out.display()
            );
        }
        Command::Predict {
            model,
            features,
            out,
        } => {
            let ensemble = load_model(&model)?;
            let (matrix, _) = read_features_csv(&features)?;
            if matrix.fingerprint() != ensemble.schema_fingerprint {
                log::warn!(
                    "feature schema fingerprint differs from the model's; \
                     continuing on matching dimensions only"
                );
            }
            let threshold = config
                .variance_threshold
                .unwrap_or(ensemble.default_variance_threshold);
            let mut predictions = Vec::new();
            for (id, row) in matrix.patient_ids.iter().zip(&matrix.rows) {
                let p = ensemble_predict(&ensemble, id, row)?;
                let verdict = triage(&p, threshold);
                predictions.push((p, verdict));
            }
            write_predictions_csv(&predictions, &out, Some(&config_hash))?;
            println!("wrote {} predictions to {}", predictions.len(), out.display());
        }
        Command::Evaluate {
            predictions,
            cohort,
            out,
        } => {
            let (rows, _) = cachexia::pipeline::read_predictions_csv(&predictions)?;
            let records = load_cohort_checked(&cohort_path(&cohort, &config))?;
            let assignments = stage_cohort(&records, &config.staging)?;
            let reference: HashMap<&str, BinaryLabel> = records
                .iter()
                .zip(&assignments)
                .map(|(r, a)| (r.patient_id.as_str(), r.gold_label.unwrap_or(a.binary)))
                .collect();
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            let mut items = Vec::new();
            let mut review = 0usize;
            for (id, _prob, variance, label, verdict) in &rows {
                let gold = *reference
                    .get(id.as_str())
                    .with_context(|| format!("patient {id} missing from cohort"))?;
                preds.push(*label);
                golds.push(gold);
                items.push((*variance, *label == gold));
                if *verdict == TriageVerdict::ExpertReview {
                    review += 1;
                }
            }
            let m = confusion(&preds, &golds)?;
            let metric_values = metrics(&m)?;
            let separation = confidence_separation(&items);
            let report = serde_json::json!({
                "config_hash": config_hash,
                "n": rows.len(),
                "confusion": m,
                "metrics": metric_values,
                "confidence": separation,
                "expert_review_count": review,
            });
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => {
                    fs::write(&path, &text)?;
                    println!("wrote evaluation to {}", path.display());
                }
                None => println!("{text}"),
            }
        }
        Command::Ablation { cohort, seed, out } => {
            let records = load_cohort_checked(&cohort_path(&cohort, &config))?;
            let battery = config.battery()?;
            let endpoint = config.chat_endpoint(&battery)?;
            let text_provider = stub_text_embedder(&config)?;
            let image_provider = stub_image_embedder(&config)?;
            let ctx = AblationContext {
                chat_endpoint: endpoint.as_ref(),
                client_cfg: config.client_cfg(),
                battery,
                text_embedder: text_provider.as_ref(),
                image_embedder: image_provider.as_ref(),
                rules: config.staging.clone(),
                search_space: config.search.space.clone(),
                search_budget: config.search.budget,
                train: config.training.train.clone(),
                k: config.training.k,
                test_fraction: 0.2,
                variance_threshold_override: config.variance_threshold,
            };
            let outcome = run_ablation(&records, &standard_configs(), &ctx, seed)?;
            fs::write(&out, serde_json::to_string_pretty(&outcome.report)?)?;
            let csv_path = out.with_extension("csv");
            fs::write(&csv_path, report_to_csv(&outcome.report))?;
            for row in &outcome.report.rows {
                println!(
                    "{:32} accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
                    row.name, row.accuracy, row.precision, row.recall, row.f1
                );
            }
            println!("wrote {} and {}", out.display(), csv_path.display());
        }
        Command::Run => {
            let manifest = run_pipeline(&config)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
        }
        Command::WriteBattery { out } => {
            let battery = default_battery();
            fs::write(&out, serde_json::to_string_pretty(&battery)?)?;
            println!(
                "wrote {} questions (version {}) to {}",
                battery.len(),
                battery.version_hash(),
                out.display()
            );
        }
    }
    Ok(())
}

// The ablation subcommand embeds with live providers only; file-backed
// vector stores are for the `embed`/`run` paths.
fn stub_text_embedder(
    config: &PipelineConfig,
) -> Result<Box<dyn cachexia::embedding::TextEmbedder>> {
    use cachexia::pipeline::{ProviderConfig, TextProvider};
    match config.text_embedder(&config.providers.notes)? {
        TextProvider::Live(p) => Ok(p),
        TextProvider::Precomputed(_) => match &config.providers.notes {
            ProviderConfig::File { path } => bail!(
                "ablation requires a live text provider (stub or http), got file:{path}"
            ),
            _ => unreachable!(),
        },
    }
}

fn stub_image_embedder(
    config: &PipelineConfig,
) -> Result<Box<dyn cachexia::embedding::ImageEmbedder>> {
    use cachexia::pipeline::{ImageProvider, ProviderConfig};
    match config.image_embedder()? {
        ImageProvider::Live(p) => Ok(p),
        ImageProvider::Precomputed(_) => match &config.providers.image {
            ProviderConfig::File { path } => bail!(
                "ablation requires a live image provider (stub or http), got file:{path}"
            ),
            _ => unreachable!(),
        },
    }
}

/// Applies a `stub` / `file:<path>` / `http:<url>` provider override while
/// keeping the existing dimension and token-limit settings.
fn override_provider(
    existing: &cachexia::pipeline::ProviderConfig,
    spec: &str,
) -> Result<cachexia::pipeline::ProviderConfig> {
    use cachexia::pipeline::ProviderConfig;
    let (dimension, token_limit, seed) = match existing {
        ProviderConfig::Stub {
            dimension,
            token_limit,
            seed,
        } => (*dimension, *token_limit, *seed),
        ProviderConfig::Http {
            dimension,
            token_limit,
            ..
        } => (*dimension, *token_limit, 0),
        ProviderConfig::File { .. } => (16, 512, 0),
    };
    if spec == "stub" {
        return Ok(ProviderConfig::Stub {
            dimension,
            token_limit,
            seed,
        });
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return Ok(ProviderConfig::File {
            path: path.to_string(),
        });
    }
    if let Some(url) = spec.strip_prefix("http:") {
        // Re-attach the scheme that strip_prefix consumed.
        return Ok(ProviderConfig::Http {
            url: format!("http:{url}"),
            dimension,
            token_limit,
            timeout_s: 60,
        });
    }
    bail!(PipelineError::ConfigInvalid(format!(
        "provider {spec:?} is not stub, file:<path>, or http:<url>"
    )))
}

fn load_answers_in_cohort_order(
    path: &Path,
    records: &[cachexia::cohort::PatientRecord],
) -> Result<Vec<Vec<i8>>> {
    let (results, _) = read_extractions_jsonl(path)?;
    let by_id: HashMap<String, Vec<i8>> = results
        .iter()
        .map(|r| (r.patient_id.clone(), cachexia::notes::tabularize(r)))
        .collect();
    let battery_len = results.first().map(|r| r.answers.len()).unwrap_or(26);
    Ok(records
        .iter()
        .map(|r| {
            by_id
                .get(&r.patient_id)
                .cloned()
                .unwrap_or_else(|| vec![-1; battery_len])
        })
        .collect())
}
