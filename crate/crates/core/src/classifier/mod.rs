//! Monolabel probabilistic classifiers.
//!
//! Embeddings only need two things from a classifier: softmax posteriors for a
//! feature matrix and the last-layer weight matrix `W` (`h x N_c`). Anything
//! implementing [`Classifier`] can be plugged into the embeddings module; the
//! reference implementation is [`MlpClassifier`].

mod adadelta;
pub mod mlp;

use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adadelta::Adadelta;
pub use mlp::{gradient_check, MlpParams};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::matrix_file;

/// Softmax posteriors `P`, one row per excerpt.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputMatrix {
    values: Array2<f64>,
}

/// Row sums of an [`OutputMatrix`] must be within this of 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Looser row-sum tolerance for posteriors read back from 32-bit storage.
pub const STORED_SIMPLEX_TOLERANCE: f64 = 1e-4;

impl OutputMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (k, row) in values.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::Domain(format!("posterior row {k} has a negative or non-finite entry")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::Domain(format!("posterior row {k} sums to {sum}")));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), indices),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        matrix_file::write(path, &self.values)
    }

    /// Reads posteriors written by [`OutputMatrix::save`]. Rows are
    /// renormalized after the 32-bit round trip.
    pub fn load(path: &Path) -> Result<Self> {
        let mut values = matrix_file::read(path)?;
        for (k, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
            let sum = row.sum();
            if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > STORED_SIMPLEX_TOLERANCE {
                return Err(Error::Domain(format!("{}: row {k} is not a distribution", path.display())));
            }
            row /= sum;
        }
        Self::new(values)
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[&OutputMatrix]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self { values })
    }
}

/// A trained monolabel classifier usable by the embeddings module.
pub trait Classifier {
    fn predict_proba(&self, features: &FeatureMatrix) -> Result<OutputMatrix>;

    /// `h x N_c` last-layer weights; column `i` belongs to tag `i`.
    fn last_layer_weights(&self) -> ArrayView2<'_, f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub hidden: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            rho: 0.95,
            epsilon: 1e-6,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Parameter("hidden, batch_size and max_epochs must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Parameter(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !positive(self.epsilon) || !positive(self.learning_rate) {
            return Err(Error::Parameter("need 0 < rho < 1, epsilon > 0, learning_rate > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss during the epoch.
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Losses of the freshly initialized network.
    pub initial_train_loss: f64,
    pub initial_valid_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Smallest Adadelta accumulator value seen during training.
    pub min_optimizer_state: f64,
    pub warnings: Vec<String>,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }
}

/// Reference classifier: one rectifier hidden layer, softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    pub params: MlpParams,
    pub log: TrainingLog,
}

const PREDICT_CHUNK: usize = 256;

impl MlpClassifier {
    pub fn from_params(params: MlpParams) -> Self {
        Self {
            params,
            log: TrainingLog::default(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.params.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_params(MlpParams::from_bytes(&bytes, path)?))
    }
}

impl Classifier for MlpClassifier {
    fn predict_proba(&self, features: &FeatureMatrix) -> Result<OutputMatrix> {
        if features.dim() != self.params.input_dim() {
            return Err(Error::Shape(format!(
                "features have dimension {}, model expects {}",
                features.dim(),
                self.params.input_dim()
            )));
        }
        let x = features.view();
        let chunks: Vec<Array2<f64>> = x
            .axis_chunks_iter(Axis(0), PREDICT_CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|chunk| self.params.probabilities(chunk))
            .collect();
        let values = if chunks.is_empty() {
            Array2::zeros((0, self.params.n_classes()))
        } else {
            let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
            concatenate(Axis(0), &views).expect("same width")
        };
        OutputMatrix::new(values)
    }

    fn last_layer_weights(&self) -> ArrayView2<'_, f64> {
        self.params.output_weights.view()
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn check_labels(labels: &[usize], rows: usize, n_classes: usize, what: &str) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{what}: {rows} feature rows but {} labels", labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("{what}: no samples")));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Parameter(format!("{what}: label {bad} outside [0, {n_classes})")));
    }
    Ok(())
}

fn chunked_loss(params: &MlpParams, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, chunk) in x.axis_chunks_iter(Axis(0), 1024).enumerate() {
        let ys = &labels[i * 1024..i * 1024 + chunk.nrows()];
        total += params.loss(chunk, ys) * chunk.nrows() as f64;
    }
    total / labels.len() as f64
}

/// Trains the reference network with minibatch Adadelta on mean categorical
/// cross-entropy and returns the parameters of the epoch with the lowest
/// validation loss. Training stops once `patience` consecutive epochs fail to
/// improve on the best validation loss (so `patience = 0` runs one epoch).
pub fn train(
    train_features: &FeatureMatrix,
    train_labels: &[usize],
    valid_features: &FeatureMatrix,
    valid_labels: &[usize],
    n_classes: usize,
    config: &TrainingConfig,
) -> Result<MlpClassifier> {
    config.validate()?;
    if n_classes == 0 {
        return Err(Error::Parameter("no classes".into()));
    }
    check_labels(train_labels, train_features.rows(), n_classes, "train")?;
    check_labels(valid_labels, valid_features.rows(), n_classes, "validation")?;
    if train_features.dim() != valid_features.dim() {
        return Err(Error::Shape("train and validation feature dimensions differ".into()));
    }

    let mut log = TrainingLog::default();
    let mut seen = vec![false; n_classes];
    for &y in train_labels {
        seen[y] = true;
    }
    for (c, _) in seen.iter().enumerate().filter(|(_, s)| !**s) {
        let w = format!("class {c} has no training samples");
        log::warn!("{w}");
        log.warnings.push(w);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = train_features.dim();
    let mut params = MlpParams::init(&mut rng, d, config.hidden, n_classes);
    let opt = |shape: &[usize]| Adadelta::new(shape, config.rho, config.epsilon, config.learning_rate);
    let mut optimizers = [
        opt(params.hidden_weights.shape()),
        opt(params.hidden_bias.shape()),
        opt(params.output_weights.shape()),
        opt(params.output_bias.shape()),
    ];

    let x = train_features.view();
    let vx = valid_features.view();
    log.initial_train_loss = chunked_loss(&params, x, train_labels);
    log.initial_valid_loss = chunked_loss(&params, vx, valid_labels);
    log.min_optimizer_state = 0.0;

    let mut order: Vec<usize> = (0..train_labels.len()).collect();
    let mut best = (f64::INFINITY, params.clone());
    let mut stale = 0usize;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx = x.select(Axis(0), batch);
            let by: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let (loss, grads) = params.loss_and_grad(bx.view(), &by);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * batch.len() as f64;
            optimizers[0].step(params.hidden_weights.view_mut().into_dyn(), grads.hidden_weights.view().into_dyn());
            optimizers[1].step(params.hidden_bias.view_mut().into_dyn(), grads.hidden_bias.view().into_dyn());
            optimizers[2].step(params.output_weights.view_mut().into_dyn(), grads.output_weights.view().into_dyn());
            optimizers[3].step(params.output_bias.view_mut().into_dyn(), grads.output_bias.view().into_dyn());
        }
        let train_loss = epoch_loss / train_labels.len() as f64;
        let valid_loss = chunked_loss(&params, vx, valid_labels);
        if !valid_loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence { epoch, loss: valid_loss });
        }
        log.min_optimizer_state = optimizers
            .iter()
            .map(Adadelta::min_state)
            .fold(log.min_optimizer_state, f64::min);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5}");
        if valid_loss < best.0 {
            best = (valid_loss, params.clone());
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }
    Ok(MlpClassifier { params: best.1, log })
}
