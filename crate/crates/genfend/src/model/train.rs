//! Mini-batch training with adaptive-moment updates and early stopping on
//! validation macro-F1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::Gradients;
use super::forward::{loss, SampleFeatures};
use super::{ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::feedback::FeedbackBundle;
use crate::metrics;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// One fully assembled training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub id: String,
    pub label: u8,
    pub news: Vec<f64>,
    pub bundle: FeedbackBundle,
    pub actual: Option<Vec<f64>>,
}

impl TrainSample {
    pub fn features(&self) -> SampleFeatures<'_> {
        SampleFeatures {
            news: &self.news,
            bundle: &self.bundle,
            actual: self.actual.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
        }
    }
}

/// First and second moment estimates, flat-aligned with `Params::to_flat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], hyper: &Hyperparams) {
        self.t += 1;
        let t = self.t as f64;
        let bias1 = 1.0 - hyper.beta1.powf(t);
        let bias2 = 1.0 - hyper.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = hyper.beta1 * self.m[i] + (1.0 - hyper.beta1) * g;
            self.v[i] = hyper.beta2 * self.v[i] + (1.0 - hyper.beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mac_f1: f64,
    pub val_acc: f64,
}

/// Render history as `epoch,train_loss,val_macF1,val_acc` CSV.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_macF1,val_acc\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_mac_f1, row.val_acc
        ));
    }
    out
}

/// Probabilities for a sample set under the current parameters.
pub fn predict_probs(state: &ModelState, samples: &[TrainSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| state.forward(&s.features()).map(|t| t.prob))
        .collect()
}

/// Evaluate a sample set at the 0.5 decision threshold.
pub fn evaluate_samples(state: &ModelState, samples: &[TrainSample]) -> Result<metrics::EvalReport> {
    let probs = predict_probs(state, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    metrics::evaluate(&probs, &labels, 0.5)
}

/// Train the head on `train`, early-stopping on validation macro-F1, and
/// return the best-validation state plus the per-epoch history.
///
/// Deterministic given (inputs, config, hyper, seed): batches are drawn
/// from a seeded shuffle and gradient accumulation runs in ascending
/// sample order within each batch.
pub fn train(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    config: ModelConfig,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<(ModelState, Vec<EpochStats>)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation(
            "train and validation sets must be non-empty".into(),
        ));
    }
    if hyper.batch_size == 0 || hyper.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    let mut state = ModelState::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);

    let mut history = Vec::new();
    let mut best_mac_f1 = f64::NEG_INFINITY;
    let mut best_params = state.params.clone();
    let mut waited = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let mut batch_ids: Vec<usize> = batch.to_vec();
            batch_ids.sort_unstable();
            let mut grads = Gradients::zeros(&config);
            for &idx in &batch_ids {
                let sample = &train_set[idx];
                let features = sample.features();
                let trace = state.forward(&features)?;
                let sample_loss = loss(trace.prob, sample.label);
                if !sample_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        sample_id: sample.id.clone(),
                        param_norm: state.params.norm(),
                    });
                }
                epoch_loss += sample_loss;
                grads.accumulate(&state.backward(&trace, &features, sample.label)?);
            }
            grads.scale(1.0 / batch_ids.len() as f64);
            let mut flat = state.params.to_flat();
            state.optimizer.step(&mut flat, &grads.to_flat(), hyper);
            state.params.from_flat(&flat);
            state.version += 1;
            if !state.params.all_finite() {
                return Err(Error::NonFiniteLoss {
                    sample_id: format!("epoch {epoch} batch update"),
                    param_norm: state.params.norm(),
                });
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let report = evaluate_samples(&state, val_set)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_mac_f1: report.mac_f1,
            val_acc: report.acc,
        });
        if report.mac_f1 > best_mac_f1 {
            best_mac_f1 = report.mac_f1;
            best_params = state.params.clone();
            waited = 0;
        } else {
            waited += 1;
            if waited >= hyper.patience {
                break;
            }
        }
    }

    state.params = best_params;
    state.version += 1;
    Ok((state, history))
}

/// Versioned checkpoint wrapper; JSON serialization round-trips f64 bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub state: ModelState,
}

impl Checkpoint {
    pub fn new(state: ModelState) -> Self {
        Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, state }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let display = path.as_ref().display().to_string();
        let data = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, data).map_err(|e| Error::io(&display, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let display = path.as_ref().display().to_string();
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&data)
            .map_err(|e| Error::parse(&display, 0, e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} unsupported (expected {})",
                ckpt.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(ckpt)
    }
}
