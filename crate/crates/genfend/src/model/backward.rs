//! Analytic gradients of the per-sample cross-entropy.
//!
//! Group means, diversity entries, and the actual-comments feature are
//! frozen inputs: gradients reach the gate and classifier directly, and
//! reach the projection (when present) through three paths: the
//! classifier input, the gate input, and the intra-view attention logits.

use super::linalg::dot;
use super::{Ablation, ForwardTrace, Matrix, ModelConfig, Params, SampleFeatures};
use crate::error::Result;
use crate::profiles::ViewId;

/// Same shape as [`Params`]; one gradient slot per learnable.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub inner: Params,
}

impl Gradients {
    pub fn zeros(config: &ModelConfig) -> Self {
        Gradients { inner: Params::zeros_like(config) }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        let mut flat = self.inner.to_flat();
        for (acc, g) in flat.iter_mut().zip(other.inner.to_flat()) {
            *acc += g;
        }
        self.inner.from_flat(&flat);
    }

    pub fn scale(&mut self, factor: f64) {
        let mut flat = self.inner.to_flat();
        for g in flat.iter_mut() {
            *g *= factor;
        }
        self.inner.from_flat(&flat);
    }
}

/// d softmax / d logits, contracted with the downstream gradient:
/// dz_i = a_i (g_i - sum_j a_j g_j).
fn softmax_vjp(output: &[f64], grad_output: &[f64]) -> Vec<f64> {
    let inner = dot(output, grad_output);
    output
        .iter()
        .zip(grad_output)
        .map(|(&a, &g)| a * (g - inner))
        .collect()
}

fn relu_mask(pre: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn backward_pass(
    params: &Params,
    config: &ModelConfig,
    trace: &ForwardTrace,
    features: &SampleFeatures,
    label: u8,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros(config);
    let dim = config.dim;

    // dL/d logit. When the probability sits in the clamped region the
    // clamped loss is locally constant, so the gradient is exactly zero.
    let clamp = super::forward::PROB_CLAMP;
    let d_logit = if trace.prob < clamp || trace.prob > 1.0 - clamp {
        0.0
    } else {
        trace.prob - f64::from(label)
    };

    // Classifier output layer.
    for (slot, h) in grads.inner.cls_out.weights.data_mut().iter_mut().zip(&trace.cls_hidden_act) {
        *slot = d_logit * h;
    }
    grads.inner.cls_out.bias[0] = d_logit;

    // Classifier hidden layer.
    let mut d_cls_hidden: Vec<f64> = params
        .cls_out
        .weights
        .row(0)
        .iter()
        .map(|w| w * d_logit)
        .collect();
    relu_mask(&trace.cls_pre_hidden, &mut d_cls_hidden);
    grads
        .inner
        .cls_hidden
        .weights
        .add_outer(&d_cls_hidden, &trace.cls_input);
    grads.inner.cls_hidden.bias.copy_from_slice(&d_cls_hidden);
    let d_cls_input = params.cls_hidden.weights.matvec_t(&d_cls_hidden);

    let d_fused = &d_cls_input[0..dim];
    let mut d_news: Vec<f64> = d_cls_input[dim..2 * dim].to_vec();
    // The actual-comments slice (if any) is frozen; its gradient is dropped.

    // Fusion: r = sum_v a_v s_v.
    let d_gate_weights: Vec<f64> = trace
        .view_features
        .iter()
        .map(|s| dot(d_fused, s))
        .collect();
    let d_view_features: Vec<Vec<f64>> = trace
        .view_gate
        .iter()
        .map(|&a| d_fused.iter().map(|g| a * g).collect())
        .collect();

    // Gate path (absent under the uniform-gate ablation).
    if !matches!(config.ablation, Ablation::NoFusionGate) {
        let d_gate_logits = softmax_vjp(&trace.view_gate, &d_gate_weights);
        grads
            .inner
            .gate_out
            .weights
            .add_outer(&d_gate_logits, &trace.gate_hidden_act);
        grads.inner.gate_out.bias.copy_from_slice(&d_gate_logits);
        let mut d_gate_hidden = params.gate_out.weights.matvec_t(&d_gate_logits);
        relu_mask(&trace.gate_pre_hidden, &mut d_gate_hidden);
        grads
            .inner
            .gate_hidden
            .weights
            .add_outer(&d_gate_hidden, &trace.gate_input);
        grads.inner.gate_hidden.bias.copy_from_slice(&d_gate_hidden);
        let d_gate_input = params.gate_hidden.weights.matvec_t(&d_gate_hidden);
        for (acc, g) in d_news.iter_mut().zip(&d_gate_input[0..dim]) {
            *acc += g;
        }
        // Diversity entries are frozen inputs.
    }

    // Intra-view attention path: only the news feature receives gradient,
    // and only when the weights are data-dependent.
    if !matches!(config.ablation, Ablation::NoReweighting) {
        let scale = (dim as f64).sqrt();
        let flags = config.active_view_flags();
        let mut active_idx = 0;
        for (view_idx, _view) in ViewId::ALL.iter().enumerate() {
            if !flags[view_idx] {
                continue;
            }
            let means = &features.bundle.s_means[view_idx];
            let weights = &trace.view_weights[active_idx];
            let d_weights: Vec<f64> = means
                .iter()
                .map(|m| dot(&d_view_features[active_idx], m))
                .collect();
            let d_attn_logits = softmax_vjp(weights, &d_weights);
            for (dz, mean) in d_attn_logits.iter().zip(means) {
                for (acc, m) in d_news.iter_mut().zip(mean) {
                    *acc += dz * m / scale;
                }
            }
            active_idx += 1;
        }
    }

    // Projection (news feature is frozen without it).
    if let Some(proj) = &mut grads.inner.projection {
        let raw = features.news;
        let mut outer = Matrix::zeros(dim, raw.len());
        outer.add_outer(&d_news, raw);
        *proj = outer;
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{view_diversity_len, FeedbackBundle};
    use crate::model::{forward_pass, loss, ModelConfig, ModelState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bundle(dim: usize, rng: &mut impl Rng) -> FeedbackBundle {
        FeedbackBundle {
            s_means: ViewId::ALL
                .iter()
                .map(|v| {
                    (0..v.group_count())
                        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect()
                })
                .collect(),
            d_views: ViewId::ALL
                .iter()
                .map(|v| {
                    (0..view_diversity_len(*v, true))
                        .map(|_| rng.gen_range(0.0..0.5))
                        .collect()
                })
                .collect(),
        }
    }

    /// Central finite differences over every parameter.
    fn finite_difference(
        state: &ModelState,
        features: &SampleFeatures,
        label: u8,
        epsilon: f64,
    ) -> Vec<f64> {
        let base = state.params.to_flat();
        let mut fd = vec![0.0; base.len()];
        let mut params = state.params.clone();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += epsilon;
            params.from_flat(&plus);
            let loss_plus = loss(
                forward_pass(&params, &state.config, features).unwrap().prob,
                label,
            );
            let mut minus = base.clone();
            minus[i] -= epsilon;
            params.from_flat(&minus);
            let loss_minus = loss(
                forward_pass(&params, &state.config, features).unwrap().prob,
                label,
            );
            fd[i] = (loss_plus - loss_minus) / (2.0 * epsilon);
        }
        fd
    }

    fn check_gradients(config: ModelConfig, param_seed: u64, sample_seed: u64) -> f64 {
        let dim = config.dim;
        let news_dim = config.news_dim;
        let with_actual = config.with_actual;
        let state = ModelState::new(config, param_seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let bundle = random_bundle(dim, &mut rng);
        let news: Vec<f64> = (0..news_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let actual: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let label = u8::from(rng.gen_bool(0.5));
        let features = SampleFeatures {
            news: &news,
            bundle: &bundle,
            actual: with_actual.then_some(actual.as_slice()),
        };
        let trace = state.forward(&features).unwrap();
        let analytic = state.backward(&trace, &features, label).unwrap().to_flat();
        let numeric = finite_difference(&state, &features, label, 1e-5);
        let mut worst = 0.0f64;
        let mut worst_idx = 0usize;
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
                worst_idx = i;
            }
        }
        if worst > 1e-4 {
            eprintln!(
                "worst idx {worst_idx}: analytic {} numeric {}; gate pre {:?}; cls pre {:?}",
                analytic[worst_idx], numeric[worst_idx], trace.gate_pre_hidden, trace.cls_pre_hidden
            );
        }
        worst
    }

    #[test]
    #[ignore = "seed survey helper"]
    fn survey_fd_noise() {
        let base = ModelConfig { gate_hidden: 6, cls_hidden: 6, ..ModelConfig::new(5) };
        let configs = [
            base.clone(),
            ModelConfig { with_actual: true, ..base.clone() },
            ModelConfig { news_dim: 7, project_news: true, ..base.clone() },
            ModelConfig { ablation: Ablation::NoReweighting, ..base.clone() },
            ModelConfig { ablation: Ablation::NoFusionGate, ..base.clone() },
            ModelConfig {
                ablation: Ablation::NoViews(vec![ViewId::Gender]),
                ..base.clone()
            },
        ];
        let mut failures = 0;
        let mut runs = 0;
        for s in 0..40u64 {
            for (i, config) in configs.iter().enumerate() {
                runs += 1;
                let worst = check_gradients(config.clone(), 1000 + s, 2000 + s * 7 + i as u64);
                if worst >= 1e-4 {
                    failures += 1;
                    eprintln!("FAIL seed {s} config {i}: {worst}");
                }
            }
        }
        eprintln!("{failures}/{runs} runs exceeded 1e-4");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let base = ModelConfig { gate_hidden: 6, cls_hidden: 6, ..ModelConfig::new(5) };
        let configs = [
            base.clone(),
            ModelConfig { with_actual: true, ..base.clone() },
            ModelConfig { news_dim: 7, project_news: true, ..base.clone() },
            ModelConfig { ablation: Ablation::NoReweighting, ..base.clone() },
            ModelConfig { ablation: Ablation::NoFusionGate, ..base.clone() },
            ModelConfig {
                ablation: Ablation::NoViews(vec![ViewId::Gender]),
                ..base
            },
        ];
        for (i, config) in configs.into_iter().enumerate() {
            let worst = check_gradients(config, 100 + i as u64, 200 + i as u64);
            assert!(worst < 1e-4, "config {i}: max relative error {worst}");
        }
    }

    #[test]
    fn saturated_probability_has_zero_gradient() {
        let config = ModelConfig { gate_hidden: 4, cls_hidden: 4, ..ModelConfig::new(3) };
        let mut state = ModelState::new(config, 1).unwrap();
        // Push the output bias far positive: prob saturates against the clamp.
        state.params.cls_out.bias[0] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bundle = random_bundle(3, &mut rng);
        let news: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let features = SampleFeatures { news: &news, bundle: &bundle, actual: None };
        let trace = state.forward(&features).unwrap();
        assert!(trace.prob > 1.0 - 1e-7);
        let grads = state.backward(&trace, &features, 1).unwrap();
        assert!(grads.to_flat().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn stale_trace_is_rejected() {
        let config = ModelConfig { gate_hidden: 4, cls_hidden: 4, ..ModelConfig::new(3) };
        let mut state = ModelState::new(config, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bundle = random_bundle(3, &mut rng);
        let news: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let features = SampleFeatures { news: &news, bundle: &bundle, actual: None };
        let trace = state.forward(&features).unwrap();
        state.version += 1; // parameters notionally updated
        assert!(matches!(
            state.backward(&trace, &features, 0),
            Err(crate::error::Error::StaleTrace)
        ));
    }

    #[test]
    fn classifier_gradients_match_standalone_mlp_when_gate_is_uniform() {
        // With the gate ablated to uniform, the head reduces to a logistic
        // MLP over a fixed input; its gradients must match an independent
        // straight-line implementation.
        let dim = 4;
        let config = ModelConfig {
            gate_hidden: 4,
            cls_hidden: 5,
            ablation: Ablation::NoFusionGate,
            ..ModelConfig::new(dim)
        };
        let state = ModelState::new(config, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let bundle = random_bundle(dim, &mut rng);
        let news: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let features = SampleFeatures { news: &news, bundle: &bundle, actual: None };
        let trace = state.forward(&features).unwrap();
        let label = 1u8;
        let grads = state.backward(&trace, &features, label).unwrap();

        // Independent MLP backprop on (cls_input -> relu -> sigmoid).
        let x = &trace.cls_input;
        let w1 = &state.params.cls_hidden.weights;
        let b1 = &state.params.cls_hidden.bias;
        let w2 = &state.params.cls_out.weights;
        let b2 = state.params.cls_out.bias[0];
        let h = w1.rows();
        let mut pre = vec![0.0; h];
        for r in 0..h {
            pre[r] = b1[r];
            for c in 0..x.len() {
                pre[r] += w1.get(r, c) * x[c];
            }
        }
        let act: Vec<f64> = pre.iter().map(|p| p.max(0.0)).collect();
        let mut logit = b2;
        for r in 0..h {
            logit += w2.get(0, r) * act[r];
        }
        let prob = 1.0 / (1.0 + (-logit).exp());
        let delta = prob - f64::from(label);
        for r in 0..h {
            assert!((grads.inner.cls_out.weights.get(0, r) - delta * act[r]).abs() < 1e-12);
        }
        assert!((grads.inner.cls_out.bias[0] - delta).abs() < 1e-12);
        for r in 0..h {
            let d_h = if pre[r] > 0.0 { delta * w2.get(0, r) } else { 0.0 };
            assert!((grads.inner.cls_hidden.bias[r] - d_h).abs() < 1e-12);
            for c in 0..x.len() {
                assert!((grads.inner.cls_hidden.weights.get(r, c) - d_h * x[c]).abs() < 1e-12);
            }
        }
        // Gate parameters receive no gradient under the uniform gate.
        assert!(grads.inner.gate_hidden.weights.data().iter().all(|g| *g == 0.0));
        assert!(grads.inner.gate_out.weights.data().iter().all(|g| *g == 0.0));
    }
}
