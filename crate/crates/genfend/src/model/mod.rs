//! The aggregation-and-classification head.
//!
//! Inputs per sample are frozen features: the news vector, the per-view
//! group means and diversity vector, and optionally an actual-comments
//! vector. Learnables are the inter-view gate, the classifier MLP, and an
//! optional projection for a mismatched news width. Intra-view attention
//! is parameter-free: group means are weighted by their scaled
//! dot-product with the (projected) news vector.
//!
//! All math is 64-bit; gradients are analytic and checked against central
//! finite differences in the test suite.

mod backward;
mod forward;
mod linalg;
mod train;

pub use backward::{backward_pass, Gradients};
pub use forward::{
    forward_pass, fuse_views, inter_view_gate, intra_view_aggregate, loss, predict, sigmoid,
    ForwardTrace, SampleFeatures,
};
pub use linalg::{dot, Matrix};
pub use train::{
    history_csv, train, AdamState, Checkpoint, EpochStats, Hyperparams, TrainSample,
    CHECKPOINT_FORMAT_VERSION,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback;
use crate::profiles::ViewId;

/// Forward-pass variants used by the ablation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    /// Uniform intra-view weights instead of scaled dot-product attention.
    NoReweighting,
    /// Uniform view weights instead of the learned gate.
    NoFusionGate,
    /// Drop the listed views from fusion; the gate is built over the
    /// remaining views and the diversity vector excludes their entries.
    NoViews(Vec<ViewId>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Comment-embedding width; the head's working feature width.
    pub dim: usize,
    /// Raw news-feature width; must equal `dim` unless `project_news`.
    pub news_dim: usize,
    /// Learn a linear projection of the news feature onto `dim`.
    pub project_news: bool,
    /// Concatenate the actual-comments vector into the classifier input.
    pub with_actual: bool,
    pub gate_hidden: usize,
    pub cls_hidden: usize,
    pub ablation: Ablation,
    /// Ordered group pairs in the diversity vector (2/20/6 per view).
    pub ordered_pairs: bool,
}

impl ModelConfig {
    pub fn new(dim: usize) -> Self {
        ModelConfig {
            dim,
            news_dim: dim,
            project_news: false,
            with_actual: false,
            gate_hidden: 64,
            cls_hidden: 64,
            ablation: Ablation::Full,
            ordered_pairs: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.gate_hidden == 0 || self.cls_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.news_dim != self.dim && !self.project_news {
            return Err(Error::Config(format!(
                "news width {} differs from comment width {}; enable the projection",
                self.news_dim, self.dim
            )));
        }
        if let Ablation::NoViews(dropped) = &self.ablation {
            if self.active_views().is_empty() {
                return Err(Error::Config("cannot drop all views".into()));
            }
            for v in dropped {
                if dropped.iter().filter(|x| *x == v).count() > 1 {
                    return Err(Error::Config(format!("view {} dropped twice", v.name())));
                }
            }
        }
        Ok(())
    }

    /// Views taking part in fusion, in gender/age/education order.
    pub fn active_views(&self) -> Vec<ViewId> {
        match &self.ablation {
            Ablation::NoViews(dropped) => ViewId::ALL
                .into_iter()
                .filter(|v| !dropped.contains(v))
                .collect(),
            _ => ViewId::ALL.to_vec(),
        }
    }

    pub fn active_view_flags(&self) -> [bool; 3] {
        let active = self.active_views();
        let mut flags = [false; 3];
        for (i, v) in ViewId::ALL.iter().enumerate() {
            flags[i] = active.contains(v);
        }
        flags
    }

    pub fn diversity_len(&self) -> usize {
        feedback::diversity_len(&self.active_views(), self.ordered_pairs)
    }

    pub fn gate_input_len(&self) -> usize {
        self.dim + self.diversity_len()
    }

    pub fn gate_output_len(&self) -> usize {
        self.active_views().len()
    }

    pub fn classifier_input_len(&self) -> usize {
        self.dim * if self.with_actual { 3 } else { 2 }
    }
}

/// One affine layer, `out = weights * in + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        LinearLayer {
            weights: Matrix::from_fn(out_dim, in_dim, |_, _| rng.gen_range(-bound..bound)),
            bias: (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearLayer {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.weights.matvec(input);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub gate_hidden: LinearLayer,
    pub gate_out: LinearLayer,
    pub cls_hidden: LinearLayer,
    pub cls_out: LinearLayer,
    pub projection: Option<Matrix>,
}

impl Params {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let proj_bound = 1.0 / (config.news_dim as f64).sqrt();
        Params {
            gate_hidden: LinearLayer::init(config.gate_hidden, config.gate_input_len(), rng),
            gate_out: LinearLayer::init(config.gate_output_len(), config.gate_hidden, rng),
            cls_hidden: LinearLayer::init(config.cls_hidden, config.classifier_input_len(), rng),
            cls_out: LinearLayer::init(1, config.cls_hidden, rng),
            projection: config.project_news.then(|| {
                Matrix::from_fn(config.dim, config.news_dim, |_, _| {
                    rng.gen_range(-proj_bound..proj_bound)
                })
            }),
        }
    }

    pub fn zeros_like(config: &ModelConfig) -> Self {
        Params {
            gate_hidden: LinearLayer::zeros(config.gate_hidden, config.gate_input_len()),
            gate_out: LinearLayer::zeros(config.gate_output_len(), config.gate_hidden),
            cls_hidden: LinearLayer::zeros(config.cls_hidden, config.classifier_input_len()),
            cls_out: LinearLayer::zeros(1, config.cls_hidden),
            projection: config
                .project_news
                .then(|| Matrix::zeros(config.dim, config.news_dim)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gate_hidden.param_count()
            + self.gate_out.param_count()
            + self.cls_hidden.param_count()
            + self.cls_out.param_count()
            + self.projection.as_ref().map_or(0, |p| p.data().len())
    }

    /// Flatten in a fixed order (layer weights then bias, projection last).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in [&self.gate_hidden, &self.gate_out, &self.cls_hidden, &self.cls_out] {
            flat.extend_from_slice(layer.weights.data());
            flat.extend_from_slice(&layer.bias);
        }
        if let Some(p) = &self.projection {
            flat.extend_from_slice(p.data());
        }
        flat
    }

    pub fn from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut offset = 0;
        let mut take = |buf: &mut [f64]| {
            buf.copy_from_slice(&flat[offset..offset + buf.len()]);
            offset += buf.len();
        };
        for layer in [
            &mut self.gate_hidden,
            &mut self.gate_out,
            &mut self.cls_hidden,
            &mut self.cls_out,
        ] {
            take(layer.weights.data_mut());
            take(&mut layer.bias);
        }
        if let Some(p) = &mut self.projection {
            take(p.data_mut());
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }
}

/// Parameters plus the optimizer and a version counter used to detect
/// stale forward traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
    pub seed: u64,
    pub optimizer: AdamState,
    pub version: u64,
}

impl ModelState {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, &mut rng);
        let n = params.param_count();
        Ok(ModelState {
            config,
            params,
            seed,
            optimizer: AdamState::new(n),
            version: 0,
        })
    }

    pub fn from_parts(config: ModelConfig, params: Params, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = params.param_count();
        Ok(ModelState {
            config,
            params,
            seed,
            optimizer: AdamState::new(n),
            version: 0,
        })
    }

    pub fn forward(&self, features: &SampleFeatures) -> Result<ForwardTrace> {
        let mut trace = forward_pass(&self.params, &self.config, features)?;
        trace.version = self.version;
        Ok(trace)
    }

    /// Analytic gradients for the trace's sample. Fails if the parameters
    /// have been updated since the forward pass.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        features: &SampleFeatures,
        label: u8,
    ) -> Result<Gradients> {
        if trace.version != self.version {
            return Err(Error::StaleTrace);
        }
        backward_pass(&self.params, &self.config, trace, features, label)
    }
}
