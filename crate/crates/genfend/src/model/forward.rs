//! Forward pass: intra-view attention, inter-view gate, fusion, classifier.

use serde::{Deserialize, Serialize};

use super::linalg::dot;
use super::{Ablation, LinearLayer, ModelConfig, Params};
use crate::embedding::softmax_normalize;
use crate::error::{Error, Result};
use crate::feedback::{view_diversity_len, FeedbackBundle};
use crate::profiles::ViewId;

/// Loss clamp bounds for the predicted probability.
pub const PROB_CLAMP: f64 = 1e-7;

/// Frozen per-sample inputs.
#[derive(Debug, Clone, Copy)]
pub struct SampleFeatures<'a> {
    pub news: &'a [f64],
    pub bundle: &'a FeedbackBundle,
    pub actual: Option<&'a [f64]>,
}

/// Activations recorded by the forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub version: u64,
    /// News feature after the optional projection.
    pub news_feature: Vec<f64>,
    /// Per active view: softmax (or uniform) weights over group means.
    pub view_weights: Vec<Vec<f64>>,
    /// Per active view: the aggregated view feature.
    pub view_features: Vec<Vec<f64>>,
    pub diversity: Vec<f64>,
    pub gate_input: Vec<f64>,
    pub gate_pre_hidden: Vec<f64>,
    pub gate_hidden_act: Vec<f64>,
    pub gate_logits: Vec<f64>,
    /// View weights `a`, summing to 1 over active views.
    pub view_gate: Vec<f64>,
    /// Fused comment feature `r`.
    pub fused: Vec<f64>,
    pub cls_input: Vec<f64>,
    pub cls_pre_hidden: Vec<f64>,
    pub cls_hidden_act: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

/// Scaled dot-product weighting of group means against the news feature.
///
/// Returns the view feature and the weights (summing to 1).
pub fn intra_view_aggregate(s_means: &[Vec<f64>], news: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if s_means.is_empty() {
        return Err(Error::Validation("no group means to aggregate".into()));
    }
    let dim = news.len();
    for (i, mean) in s_means.iter().enumerate() {
        if mean.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: mean.len(),
                context: format!("group mean {i}"),
            });
        }
    }
    let scale = (dim as f64).sqrt();
    let logits: Vec<f64> = s_means.iter().map(|m| dot(m, news) / scale).collect();
    let weights = softmax_normalize(&logits);
    Ok((weighted_sum(s_means, &weights), weights))
}

fn weighted_sum(vectors: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let dim = vectors[0].len();
    let mut out = vec![0.0; dim];
    for (vec, w) in vectors.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(vec) {
            *o += w * v;
        }
    }
    out
}

/// The two-layer gate over `news ⊕ diversity`, softmaxed into view weights.
pub fn inter_view_gate(
    news: &[f64],
    diversity: &[f64],
    gate_hidden: &LinearLayer,
    gate_out: &LinearLayer,
) -> Result<Vec<f64>> {
    let expected = gate_hidden.weights.cols();
    if news.len() + diversity.len() != expected {
        return Err(Error::Shape {
            expected,
            actual: news.len() + diversity.len(),
            context: "gate input".into(),
        });
    }
    let mut input = Vec::with_capacity(expected);
    input.extend_from_slice(news);
    input.extend_from_slice(diversity);
    let hidden = relu(&gate_hidden.apply(&input));
    Ok(softmax_normalize(&gate_out.apply(&hidden)))
}

/// Convex combination of view features by the gate weights.
pub fn fuse_views(view_features: &[Vec<f64>], gate: &[f64]) -> Result<Vec<f64>> {
    if view_features.len() != gate.len() {
        return Err(Error::Shape {
            expected: view_features.len(),
            actual: gate.len(),
            context: "gate weights vs view features".into(),
        });
    }
    Ok(weighted_sum(view_features, gate))
}

/// Classifier head over `fused ⊕ news [⊕ actual]`. Wrong input widths are
/// an error, never a silent truncation.
pub fn predict(
    fused: &[f64],
    news: &[f64],
    actual: Option<&[f64]>,
    cls_hidden: &LinearLayer,
    cls_out: &LinearLayer,
) -> Result<f64> {
    let mut input = Vec::with_capacity(fused.len() + news.len());
    input.extend_from_slice(fused);
    input.extend_from_slice(news);
    if let Some(a) = actual {
        input.extend_from_slice(a);
    }
    let expected = cls_hidden.weights.cols();
    if input.len() != expected {
        return Err(Error::Shape {
            expected,
            actual: input.len(),
            context: "classifier input".into(),
        });
    }
    let hidden = relu(&cls_hidden.apply(&input));
    Ok(sigmoid(cls_out.apply(&hidden)[0]))
}

/// Per-sample cross-entropy with the probability clamped away from 0/1.
pub fn loss(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn project_news(params: &Params, config: &ModelConfig, news: &[f64]) -> Result<Vec<f64>> {
    if news.len() != config.news_dim {
        return Err(Error::Shape {
            expected: config.news_dim,
            actual: news.len(),
            context: "news feature".into(),
        });
    }
    match &params.projection {
        Some(p) => Ok(p.matvec(news)),
        None => Ok(news.to_vec()),
    }
}

fn check_bundle(config: &ModelConfig, bundle: &FeedbackBundle) -> Result<()> {
    for (view_idx, view) in ViewId::ALL.iter().enumerate() {
        if bundle.s_means[view_idx].len() != view.group_count() {
            return Err(Error::Shape {
                expected: view.group_count(),
                actual: bundle.s_means[view_idx].len(),
                context: format!("{} view group means", view.name()),
            });
        }
        for mean in &bundle.s_means[view_idx] {
            if mean.len() != config.dim {
                return Err(Error::Shape {
                    expected: config.dim,
                    actual: mean.len(),
                    context: format!("{} view mean width", view.name()),
                });
            }
        }
        let expected_d = view_diversity_len(*view, config.ordered_pairs);
        if bundle.d_views[view_idx].len() != expected_d {
            return Err(Error::Shape {
                expected: expected_d,
                actual: bundle.d_views[view_idx].len(),
                context: format!("{} view diversity", view.name()),
            });
        }
    }
    Ok(())
}

/// Run the full head for one sample under the config's ablation.
pub fn forward_pass(
    params: &Params,
    config: &ModelConfig,
    features: &SampleFeatures,
) -> Result<ForwardTrace> {
    config.validate()?;
    check_bundle(config, features.bundle)?;
    match (config.with_actual, features.actual) {
        (true, None) => {
            return Err(Error::Validation(
                "model expects an actual-comments feature but none was supplied".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::Validation(
                "model was built without actual comments but one was supplied".into(),
            ))
        }
        (true, Some(a)) if a.len() != config.dim => {
            return Err(Error::Shape {
                expected: config.dim,
                actual: a.len(),
                context: "actual-comments feature".into(),
            })
        }
        _ => {}
    }

    let news_feature = project_news(params, config, features.news)?;
    let active = config.active_views();
    let flags = config.active_view_flags();

    let mut view_weights = Vec::with_capacity(active.len());
    let mut view_features = Vec::with_capacity(active.len());
    for (view_idx, view) in ViewId::ALL.iter().enumerate() {
        if !flags[view_idx] {
            continue;
        }
        let means = &features.bundle.s_means[view_idx];
        let (feature, weights) = if matches!(config.ablation, Ablation::NoReweighting) {
            let uniform = vec![1.0 / view.group_count() as f64; view.group_count()];
            (weighted_sum(means, &uniform), uniform)
        } else {
            intra_view_aggregate(means, &news_feature)?
        };
        view_weights.push(weights);
        view_features.push(feature);
    }

    let diversity = features.bundle.diversity_concat(&flags);
    let (gate_input, gate_pre_hidden, gate_hidden_act, gate_logits, view_gate) =
        if matches!(config.ablation, Ablation::NoFusionGate) {
            let uniform = vec![1.0 / active.len() as f64; active.len()];
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), uniform)
        } else {
            let mut input = Vec::with_capacity(config.gate_input_len());
            input.extend_from_slice(&news_feature);
            input.extend_from_slice(&diversity);
            if input.len() != params.gate_hidden.weights.cols() {
                return Err(Error::Shape {
                    expected: params.gate_hidden.weights.cols(),
                    actual: input.len(),
                    context: "gate input".into(),
                });
            }
            let pre = params.gate_hidden.apply(&input);
            let act = relu(&pre);
            let logits = params.gate_out.apply(&act);
            let gate = softmax_normalize(&logits);
            (input, pre, act, logits, gate)
        };

    let fused = fuse_views(&view_features, &view_gate)?;

    let mut cls_input = Vec::with_capacity(config.classifier_input_len());
    cls_input.extend_from_slice(&fused);
    cls_input.extend_from_slice(&news_feature);
    if let Some(a) = features.actual {
        cls_input.extend_from_slice(a);
    }
    if cls_input.len() != params.cls_hidden.weights.cols() {
        return Err(Error::Shape {
            expected: params.cls_hidden.weights.cols(),
            actual: cls_input.len(),
            context: "classifier input".into(),
        });
    }
    let cls_pre_hidden = params.cls_hidden.apply(&cls_input);
    let cls_hidden_act = relu(&cls_pre_hidden);
    let logit = params.cls_out.apply(&cls_hidden_act)[0];
    let prob = sigmoid(logit);

    Ok(ForwardTrace {
        version: 0,
        news_feature,
        view_weights,
        view_features,
        diversity,
        gate_input,
        gate_pre_hidden,
        gate_hidden_act,
        gate_logits,
        view_gate,
        fused,
        cls_input,
        cls_pre_hidden,
        cls_hidden_act,
        logit,
        prob,
    })
}

/// Serializable view of trace internals used by reports (the gate weights
/// per view are the interpretable part).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateSummary {
    pub views: Vec<String>,
    pub weights: Vec<f64>,
}

impl ForwardTrace {
    pub fn gate_summary(&self, config: &ModelConfig) -> GateSummary {
        GateSummary {
            views: config
                .active_views()
                .iter()
                .map(|v| v.name().to_string())
                .collect(),
            weights: self.view_gate.clone(),
        }
    }
}
