//! From-scratch MLP binary classifier and the fold/architecture ensemble.
//!
//! Four ReLU hidden layers with inverted dropout, a sigmoid output head, and
//! binary cross-entropy trained by mini-batch gradient descent with momentum.
//! An ensemble is five architectures times `k` fold-models; its prediction is
//! the mean of the five per-architecture probabilities and its confidence
//! signal is their population variance.
//!
//! Determinism contract: every network owns a ChaCha RNG seeded as
//! `mix(arch_seed, fold_index)` with `arch_seed` derived from the global seed
//! and architecture index, and reductions run in fixed index order, so
//! parallel and serial training produce bit-identical ensembles.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Standardizer;
use crate::hashing::mix_seed;

/// Clamp applied inside the BCE loss so log terms stay finite.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("too few samples: {n} samples for {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("ensemble requires exactly 5 architectures, got {0}")]
    WrongEnsembleSize(usize),
    #[error("search budget {0} is below the 5-architecture minimum")]
    BudgetTooSmall(usize),
    #[error("search space cannot produce {0} distinct-width architectures")]
    SearchSpaceTooSmall(usize),
    #[error("schema fingerprint mismatch: model has {model}, features have {features}")]
    SchemaMismatch { model: String, features: String },
    #[error("labels must be 0 or 1, got {0}")]
    BadLabel(f64),
    #[error("model file error: {0}")]
    Persist(String),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

/// One candidate network shape: four hidden widths, per-layer dropout,
/// learning rate, and the seed that fixes its initialization and data order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: [usize; 4],
    pub dropout_rates: [f64; 4],
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        // He-uniform for the ReLU stack; the sigmoid head gets the same
        // treatment, which is fine at these widths. Biases start slightly
        // positive so a sample can never land an entire layer exactly on the
        // ReLU kink (zero pre-activations cascade when biases start at zero).
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.01; out_dim],
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut z = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                z += w * x;
            }
            out.push(z);
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// A trained (or freshly initialized) network: four ReLU hidden layers and a
/// single sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: MlpArchitecture,
    pub layers: Vec<DenseLayer>,
}

/// Inverted-dropout masks for one sample: entries are `0` or `1/keep`.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub layers: Vec<Vec<f64>>,
}

impl MlpArchitecture {
    fn assert_valid(&self) {
        assert!(
            self.hidden.iter().all(|&w| w >= 1),
            "hidden widths must be >= 1, got {:?}",
            self.hidden
        );
        assert!(
            self.dropout_rates
                .iter()
                .all(|r| (0.0..1.0).contains(r)),
            "dropout rates must lie in [0, 1), got {:?}",
            self.dropout_rates
        );
        assert!(
            self.learning_rate > 0.0,
            "learning rate must be positive, got {}",
            self.learning_rate
        );
    }
}

impl Network {
    pub fn new(arch: MlpArchitecture) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(arch.seed);
        Self::init_with_rng(arch, &mut rng)
    }

    fn init_with_rng(arch: MlpArchitecture, rng: &mut ChaCha20Rng) -> Self {
        arch.assert_valid();
        let dims = [
            arch.input_dim,
            arch.hidden[0],
            arch.hidden[1],
            arch.hidden[2],
            arch.hidden[3],
            1,
        ];
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect();
        Self { arch, layers }
    }

    /// All-zero network of the same shape (useful for gradient buffers).
    pub fn zeros_like(&self) -> Network {
        Network {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    /// Draws one sample's dropout masks from `rng`.
    pub fn draw_masks(&self, rng: &mut ChaCha20Rng) -> DropoutMasks {
        let layers = self
            .arch
            .hidden
            .iter()
            .zip(self.arch.dropout_rates)
            .map(|(&width, rate)| {
                let keep = 1.0 - rate;
                (0..width)
                    .map(|_| {
                        if rate == 0.0 || rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        DropoutMasks { layers }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), LearnError> {
        if x.len() != self.arch.input_dim {
            return Err(LearnError::DimensionMismatch {
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Evaluation-mode forward pass: no dropout masks.
    pub fn predict(&self, x: &[f64]) -> Result<f64, LearnError> {
        self.check_input(x)?;
        Ok(self.forward_internal(x, None).probability)
    }

    /// Train-mode forward pass with the given inverted-dropout masks.
    pub fn forward_train(&self, x: &[f64], masks: &DropoutMasks) -> Result<f64, LearnError> {
        self.check_input(x)?;
        Ok(self.forward_internal(x, Some(masks)).probability)
    }

    fn forward_internal(&self, x: &[f64], masks: Option<&DropoutMasks>) -> ForwardTrace {
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(5);
        let mut pre_activations: Vec<Vec<f64>> = Vec::with_capacity(5);
        let mut current = x.to_vec();
        for (l, layer) in self.layers[..4].iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine(&current, &mut z);
            let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if let Some(masks) = masks {
                for (av, m) in a.iter_mut().zip(&masks.layers[l]) {
                    *av *= m;
                }
            }
            pre_activations.push(z);
            activations.push(a.clone());
            current = a;
        }
        let out = &self.layers[4];
        let mut z_out = Vec::with_capacity(1);
        out.affine(&current, &mut z_out);
        let probability = sigmoid(z_out[0]);
        ForwardTrace {
            pre_activations,
            activations,
            probability,
        }
    }
}

struct ForwardTrace {
    pre_activations: Vec<Vec<f64>>, // z per hidden layer
    activations: Vec<Vec<f64>>,     // post-relu, post-mask per hidden layer
    probability: f64,
}

/// Per-parameter gradients, same shapes as the network.
pub type Gradients = Network;

fn bce(probability: f64, label: f64) -> f64 {
    let p = probability.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over the batch, optionally under fixed dropout
/// masks (one per sample). Used by training and by the finite-difference
/// oracle, which must see the identical loss surface.
pub fn batch_loss(
    network: &Network,
    batch: &[(Vec<f64>, f64)],
    masks: Option<&[DropoutMasks]>,
) -> Result<f64, LearnError> {
    let mut total = 0.0;
    for (i, (x, y)) in batch.iter().enumerate() {
        network.check_input(x)?;
        let trace = network.forward_internal(x, masks.map(|m| &m[i]));
        total += bce(trace.probability, *y);
    }
    Ok(total / batch.len() as f64)
}

/// Mean BCE loss and analytic gradients for every parameter.
///
/// Labels must be 0 or 1. With `masks` the gradients are those of the
/// train-mode (dropout) loss; without, of the evaluation-mode loss.
pub fn loss_and_gradients(
    network: &Network,
    batch: &[(Vec<f64>, f64)],
    masks: Option<&[DropoutMasks]>,
) -> Result<(f64, Gradients), LearnError> {
    let mut grads = network.zeros_like();
    let mut total_loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for (i, (x, y)) in batch.iter().enumerate() {
        network.check_input(x)?;
        if *y != 0.0 && *y != 1.0 {
            return Err(LearnError::BadLabel(*y));
        }
        let sample_masks = masks.map(|m| &m[i]);
        let trace = network.forward_internal(x, sample_masks);
        total_loss += bce(trace.probability, *y);

        // Output head: d loss / d z_out for BCE∘sigmoid.
        let dz_out = trace.probability - y;
        let last_hidden = &trace.activations[3];
        {
            let g = &mut grads.layers[4];
            for (gw, a) in g.weights.iter_mut().zip(last_hidden) {
                *gw += scale * dz_out * a;
            }
            g.biases[0] += scale * dz_out;
        }

        // d loss / d a4.
        let out_layer = &network.layers[4];
        let mut d_a: Vec<f64> = out_layer.weights.iter().map(|w| w * dz_out).collect();

        for l in (0..4).rev() {
            // Through dropout then ReLU: dz = da ⊙ mask ⊙ 1[z>0].
            let z = &trace.pre_activations[l];
            let mut dz = d_a;
            if let Some(m) = sample_masks {
                for (d, mask) in dz.iter_mut().zip(&m.layers[l]) {
                    *d *= mask;
                }
            }
            for (d, zv) in dz.iter_mut().zip(z) {
                if *zv <= 0.0 {
                    *d = 0.0;
                }
            }

            let input: &[f64] = if l == 0 { x } else { &trace.activations[l - 1] };
            let layer = &network.layers[l];
            {
                let g = &mut grads.layers[l];
                for (o, &d) in dz.iter().enumerate() {
                    let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gw, inp) in row.iter_mut().zip(input) {
                        *gw += scale * d * inp;
                    }
                    g.biases[o] += scale * d;
                }
            }

            if l > 0 {
                let mut next = vec![0.0; layer.in_dim];
                for (o, &d) in dz.iter().enumerate() {
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                d_a = next;
            } else {
                d_a = Vec::new();
            }
        }
    }
    Ok((total_loss * scale, grads))
}

/// Seeded shuffled partition of `0..n` into `k` validation index sets whose
/// sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, LearnError> {
    if k < 2 || n < k {
        return Err(LearnError::TooFewSamples { n, k });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(indices[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Optimizer/schedule settings shared by every network in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    /// Early stopping: epochs without validation-loss improvement.
    pub patience: usize,
    pub min_delta: f64,
    /// Global-norm gradient clip; keeps high-learning-rate candidates from
    /// diverging to non-finite weights.
    pub clip_norm: f64,
    /// Run fold/architecture training on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 250,
            batch_size: 32,
            momentum: 0.9,
            patience: 25,
            min_delta: 1e-5,
            clip_norm: 5.0,
            parallel: true,
        }
    }
}

/// One fold's model: the scaler fitted on that fold's training rows plus the
/// trained network and its validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub standardizer: Standardizer,
    pub network: Network,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

impl FoldModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64, LearnError> {
        self.network.predict(&self.standardizer.transform(x))
    }
}

/// All fold-models for one architecture plus the CV summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchModels {
    pub arch: MlpArchitecture,
    pub folds: Vec<FoldModel>,
    pub cv_accuracy: f64,
}

fn train_one_network(
    rows: &[Vec<f64>],
    labels: &[f64],
    train_idx: &[usize],
    val_idx: &[usize],
    arch: &MlpArchitecture,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<FoldModel, LearnError> {
    let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
    let standardizer = Standardizer::fit(&train_rows)?;
    let train_scaled: Vec<Vec<f64>> = train_rows.iter().map(|r| standardizer.transform(r)).collect();
    let val_scaled: Vec<Vec<f64>> = val_idx
        .iter()
        .map(|&i| standardizer.transform(&rows[i]))
        .collect();
    let val_labels: Vec<f64> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut network = Network::init_with_rng(
        MlpArchitecture {
            seed,
            ..arch.clone()
        },
        &mut rng,
    );
    let mut velocity = network.zeros_like();
    let mut order: Vec<usize> = (0..train_scaled.len()).collect();

    let mut best = network.clone();
    let mut best_val_loss = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for _epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(Vec<f64>, f64)> = chunk
                .iter()
                .map(|&i| (train_scaled[i].clone(), labels[train_idx[i]]))
                .collect();
            let masks: Vec<DropoutMasks> =
                batch.iter().map(|_| network.draw_masks(&mut rng)).collect();
            let (_, mut grads) = loss_and_gradients(&network, &batch, Some(&masks))?;
            clip_gradients(&mut grads, cfg.clip_norm);
            for (layer, (v, g)) in network
                .layers
                .iter_mut()
                .zip(velocity.layers.iter_mut().zip(&grads.layers))
            {
                for ((w, vw), gw) in layer
                    .weights
                    .iter_mut()
                    .zip(v.weights.iter_mut())
                    .zip(&g.weights)
                {
                    *vw = cfg.momentum * *vw - arch.learning_rate * gw;
                    *w += *vw;
                }
                for ((b, vb), gb) in layer
                    .biases
                    .iter_mut()
                    .zip(v.biases.iter_mut())
                    .zip(&g.biases)
                {
                    *vb = cfg.momentum * *vb - arch.learning_rate * gb;
                    *b += *vb;
                }
            }
        }

        let val_batch: Vec<(Vec<f64>, f64)> = val_scaled
            .iter()
            .cloned()
            .zip(val_labels.iter().copied())
            .collect();
        let val_loss = if val_batch.is_empty() {
            0.0
        } else {
            batch_loss(&network, &val_batch, None)?
        };
        if val_loss.is_finite() && val_loss < best_val_loss - cfg.min_delta {
            best_val_loss = val_loss;
            best = network.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    let mut correct = 0usize;
    for (x, y) in val_scaled.iter().zip(&val_labels) {
        let p = best.predict(x)?;
        if (p >= 0.5) == (*y >= 0.5) {
            correct += 1;
        }
    }
    let val_accuracy = if val_labels.is_empty() {
        0.0
    } else {
        correct as f64 / val_labels.len() as f64
    };
    Ok(FoldModel {
        standardizer,
        network: best,
        val_accuracy,
        // Kept finite so the model file (JSON) round-trips losslessly.
        val_loss: if best_val_loss.is_finite() {
            best_val_loss
        } else {
            f64::MAX
        },
    })
}

fn clip_gradients(grads: &mut Gradients, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut sum_sq = 0.0;
    for layer in &grads.layers {
        for w in &layer.weights {
            sum_sq += w * w;
        }
        for b in &layer.biases {
            sum_sq += b * b;
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for layer in &mut grads.layers {
            for w in &mut layer.weights {
                *w *= scale;
            }
            for b in &mut layer.biases {
                *b *= scale;
            }
        }
    }
}

fn train_folds(
    rows: &[Vec<f64>],
    labels: &[f64],
    arch: &MlpArchitecture,
    folds: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<Vec<FoldModel>, LearnError> {
    let tasks: Vec<(usize, Vec<usize>, Vec<usize>)> = folds
        .iter()
        .enumerate()
        .map(|(f, val_idx)| {
            let val: std::collections::HashSet<usize> = val_idx.iter().copied().collect();
            let train_idx: Vec<usize> = (0..rows.len()).filter(|i| !val.contains(i)).collect();
            (f, train_idx, val_idx.clone())
        })
        .collect();
    let run = |(f, train_idx, val_idx): &(usize, Vec<usize>, Vec<usize>)| {
        train_one_network(
            rows,
            labels,
            train_idx,
            val_idx,
            arch,
            mix_seed(&[arch.seed, *f as u64]),
            cfg,
        )
    };
    if cfg.parallel {
        tasks.par_iter().map(run).collect()
    } else {
        tasks.iter().map(run).collect()
    }
}

/// Trains one architecture with `k`-fold CV (fold split seeded from the
/// architecture seed). Each fold gets its own scaler fitted on that fold's
/// training rows only.
pub fn train_architecture(
    rows: &[Vec<f64>],
    labels: &[f64],
    arch: &MlpArchitecture,
    k: usize,
    cfg: &TrainConfig,
) -> Result<ArchModels, LearnError> {
    let folds = kfold_split(rows.len(), k, mix_seed(&[arch.seed, 0x666f_6c64]))?;
    let fold_models = train_folds(rows, labels, arch, &folds, cfg)?;
    let cv_accuracy =
        fold_models.iter().map(|f| f.val_accuracy).sum::<f64>() / fold_models.len() as f64;
    Ok(ArchModels {
        arch: arch.clone(),
        folds: fold_models,
        cv_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    /// Exactly five architectures, `k` fold-models each.
    pub members: Vec<ArchModels>,
    pub k: usize,
    pub schema_fingerprint: String,
    pub config_hash: String,
    /// Midpoint between the mean out-of-fold variance of correct and
    /// incorrect validation predictions; the default triage cutoff.
    pub default_variance_threshold: f64,
}

/// Ensemble training options.
#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub k: usize,
    pub global_seed: u64,
    pub train: TrainConfig,
    pub schema_fingerprint: String,
    pub config_hash: String,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            k: 10,
            global_seed: 0,
            train: TrainConfig::default(),
            schema_fingerprint: String::new(),
            config_hash: String::new(),
        }
    }
}

/// Trains the 5-architecture ensemble on a shared fold split and calibrates
/// the default variance threshold from out-of-fold predictions.
pub fn ensemble_train(
    rows: &[Vec<f64>],
    labels: &[f64],
    archs: &[MlpArchitecture],
    opts: &EnsembleOptions,
) -> Result<TrainedEnsemble, LearnError> {
    if archs.len() != 5 {
        return Err(LearnError::WrongEnsembleSize(archs.len()));
    }
    let folds = kfold_split(rows.len(), opts.k, mix_seed(&[opts.global_seed, 0x666f_6c64]))?;
    let members: Vec<ArchModels> = archs
        .iter()
        .map(|arch| {
            let fold_models = train_folds(rows, labels, arch, &folds, &opts.train)?;
            let cv_accuracy = fold_models.iter().map(|f| f.val_accuracy).sum::<f64>()
                / fold_models.len() as f64;
            Ok(ArchModels {
                arch: arch.clone(),
                folds: fold_models,
                cv_accuracy,
            })
        })
        .collect::<Result<_, LearnError>>()?;

    // Threshold calibration. Correctness of a validation prediction is judged
    // out-of-fold (each architecture contributes the fold-model that held the
    // sample out), but the variance entering the midpoint is computed the way
    // deployment computes it (per-architecture mean over all fold-models), so
    // the threshold lives on the same scale as the variances it will gate.
    let mut fold_of = vec![0usize; rows.len()];
    for (f, val_idx) in folds.iter().enumerate() {
        for &i in val_idx {
            fold_of[i] = f;
        }
    }
    let mut correct_vars = Vec::new();
    let mut incorrect_vars = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let oof_probs: Vec<f64> = members
            .iter()
            .map(|m| m.folds[fold_of[i]].predict(row))
            .collect::<Result<_, _>>()?;
        let (oof_mean, _) = prediction_stats(&oof_probs);
        let deployed_probs: Vec<f64> = members
            .iter()
            .map(|m| {
                let mut sum = 0.0;
                for fold in &m.folds {
                    sum += fold.predict(row)?;
                }
                Ok(sum / m.folds.len() as f64)
            })
            .collect::<Result<_, LearnError>>()?;
        let (_, variance) = prediction_stats(&deployed_probs);
        if (oof_mean >= 0.5) == (labels[i] >= 0.5) {
            correct_vars.push(variance);
        } else {
            incorrect_vars.push(variance);
        }
    }
    let default_variance_threshold = variance_midpoint(&correct_vars, &incorrect_vars);

    Ok(TrainedEnsemble {
        members,
        k: opts.k,
        schema_fingerprint: opts.schema_fingerprint.clone(),
        config_hash: opts.config_hash.clone(),
        default_variance_threshold,
    })
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Midpoint between the mean variances of correct and incorrect predictions;
/// falls back sensibly when one side is empty.
pub fn variance_midpoint(correct_vars: &[f64], incorrect_vars: &[f64]) -> f64 {
    match (mean_of(correct_vars), mean_of(incorrect_vars)) {
        (Some(c), Some(i)) => (c + i) / 2.0,
        (Some(c), None) => c * 2.0 + 1e-6,
        (None, Some(i)) => i / 2.0,
        (None, None) => 1e-3,
    }
}

/// Mean and population variance (divide by count) of the per-architecture
/// probabilities.
pub fn prediction_stats(per_arch_probs: &[f64]) -> (f64, f64) {
    let n = per_arch_probs.len() as f64;
    let mean = per_arch_probs.iter().sum::<f64>() / n;
    let variance = per_arch_probs
        .iter()
        .map(|p| {
            let d = p - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, variance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub patient_id: String,
    pub mean_prob: f64,
    pub variance: f64,
    pub label: crate::cohort::BinaryLabel,
    pub per_architecture_probs: Vec<f64>,
}

/// Predicts one sample: per-architecture probability is the mean over its
/// fold-models (evaluation mode), the ensemble probability is the mean of
/// those five, and the confidence signal is their population variance.
pub fn ensemble_predict(
    ensemble: &TrainedEnsemble,
    patient_id: &str,
    x: &[f64],
) -> Result<EnsemblePrediction, LearnError> {
    let per_architecture_probs: Vec<f64> = ensemble
        .members
        .iter()
        .map(|m| {
            let mut sum = 0.0;
            for fold in &m.folds {
                sum += fold.predict(x)?;
            }
            Ok(sum / m.folds.len() as f64)
        })
        .collect::<Result<_, LearnError>>()?;
    let (mean_prob, variance) = prediction_stats(&per_architecture_probs);
    Ok(EnsemblePrediction {
        patient_id: patient_id.to_string(),
        mean_prob,
        variance,
        label: if mean_prob >= 0.5 {
            crate::cohort::BinaryLabel::Cachectic
        } else {
            crate::cohort::BinaryLabel::NonCachectic
        },
        per_architecture_probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageVerdict {
    AutoAccept,
    ExpertReview,
}

impl std::fmt::Display for TriageVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TriageVerdict::AutoAccept => write!(f, "auto_accept"),
            TriageVerdict::ExpertReview => write!(f, "expert_review"),
        }
    }
}

/// Routes a prediction to expert review iff its variance is at or above the
/// threshold (inclusive boundary).
pub fn triage(prediction: &EnsemblePrediction, variance_threshold: f64) -> TriageVerdict {
    if prediction.variance >= variance_threshold {
        TriageVerdict::ExpertReview
    } else {
        TriageVerdict::AutoAccept
    }
}

/// Search space for the seeded random hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub width_options: Vec<usize>,
    pub dropout_options: Vec<f64>,
    pub learning_rate_range: (f64, f64),
    pub folds: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            width_options: vec![12, 16, 24, 32],
            dropout_options: vec![0.05, 0.1, 0.2],
            learning_rate_range: (0.02, 0.1),
            folds: 10,
        }
    }
}

/// Seeded random search over widths, dropout, and learning rate; the objective
/// is mean CV validation accuracy. Returns the top five architectures with
/// distinct hidden-width tuples.
pub fn search_hyperparams(
    rows: &[Vec<f64>],
    labels: &[f64],
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<Vec<MlpArchitecture>, LearnError> {
    if budget < 5 {
        return Err(LearnError::BudgetTooSmall(budget));
    }
    let input_dim = rows.first().map(Vec::len).unwrap_or(0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen_widths = std::collections::HashSet::new();
    let mut candidates = Vec::with_capacity(budget);
    let mut attempts = 0usize;
    while candidates.len() < budget {
        attempts += 1;
        if attempts > budget * 200 {
            return Err(LearnError::SearchSpaceTooSmall(budget));
        }
        let hidden: [usize; 4] = std::array::from_fn(|_| {
            space.width_options[rng.gen_range(0..space.width_options.len())]
        });
        if !seen_widths.insert(hidden) {
            continue;
        }
        let dropout_rates: [f64; 4] = std::array::from_fn(|_| {
            space.dropout_options[rng.gen_range(0..space.dropout_options.len())]
        });
        let (lo, hi) = space.learning_rate_range;
        let learning_rate = (rng.gen_range(lo.ln()..hi.ln())).exp();
        candidates.push(MlpArchitecture {
            input_dim,
            hidden,
            dropout_rates,
            learning_rate,
            seed: mix_seed(&[seed, candidates.len() as u64]),
        });
    }

    let mut scored: Vec<(usize, f64, MlpArchitecture)> = candidates
        .into_iter()
        .enumerate()
        .map(|(i, arch)| {
            let models = train_architecture(rows, labels, &arch, space.folds, cfg)?;
            Ok((i, models.cv_accuracy, arch))
        })
        .collect::<Result<_, LearnError>>()?;
    // Rank by CV accuracy, ties broken by candidate order for determinism.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(5).map(|(_, _, a)| a).collect())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    ensemble: TrainedEnsemble,
}

pub fn save_model(ensemble: &TrainedEnsemble, path: &Path) -> Result<(), LearnError> {
    let file = ModelFile {
        format_version: 1,
        ensemble: ensemble.clone(),
    };
    let json = serde_json::to_string(&file).map_err(|e| LearnError::Persist(e.to_string()))?;
    fs::write(path, json).map_err(|e| LearnError::Persist(e.to_string()))
}

pub fn load_model(path: &Path) -> Result<TrainedEnsemble, LearnError> {
    let raw = fs::read_to_string(path).map_err(|e| LearnError::Persist(e.to_string()))?;
    let file: ModelFile =
        serde_json::from_str(&raw).map_err(|e| LearnError::Persist(e.to_string()))?;
    if file.format_version != 1 {
        return Err(LearnError::Persist(format!(
            "unsupported model format version {}",
            file.format_version
        )));
    }
    Ok(file.ensemble)
}
