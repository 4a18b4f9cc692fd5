//! Multi-subpopulation feedback features.
//!
//! Comments are split per view into subpopulation groups by their
//! generating profile. Each group contributes its mean embedding; each
//! ordered group pair contributes the mean pairwise KL divergence between
//! softmax-normalized comment embeddings. Concatenating the per-view
//! divergences gives the diversity vector `d` (length 2+20+6 = 28 with
//! ordered pairs).
//!
//! Policy for sparse inputs: an empty group's mean is the empty-string
//! sentinel, and any divergence involving an empty group is 0.

use serde::{Deserialize, Serialize};

use crate::dataset::CommentRecord;
use crate::embedding::{softmax_normalize, EmbeddingTable, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::profiles::{group_index, ViewId};

/// Comments' embeddings bucketed into one view's subpopulation groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGroups {
    pub view: ViewId,
    pub groups: Vec<Vec<Vec<f64>>>,
    /// Comment ids that had no embedding and were skipped.
    pub missing_ids: Vec<String>,
}

/// Per-item feedback features: group means and diversity vectors for the
/// three views, in gender/age/education order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBundle {
    /// `[view][group] -> mean embedding`; group counts 2/5/3.
    pub s_means: Vec<Vec<Vec<f64>>>,
    /// `[view] -> divergence vector` for that view.
    pub d_views: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct FeedbackOptions {
    /// Ordered pairs (p, q), p != q: lengths 2/20/6. The unordered variant
    /// (p < q: lengths 1/10/3) exists for sensitivity checks only.
    pub ordered_pairs: bool,
}

impl Default for FeedbackOptions {
    fn default() -> Self {
        FeedbackOptions { ordered_pairs: true }
    }
}

impl FeedbackBundle {
    /// Concatenated diversity vector over the selected views.
    pub fn diversity_concat(&self, active: &[bool; 3]) -> Vec<f64> {
        let mut d = Vec::new();
        for (view_idx, flag) in active.iter().enumerate() {
            if *flag {
                d.extend_from_slice(&self.d_views[view_idx]);
            }
        }
        d
    }

    pub fn diversity_full(&self) -> Vec<f64> {
        self.diversity_concat(&[true, true, true])
    }

    pub fn dim(&self) -> usize {
        self.s_means[0][0].len()
    }
}

/// Expected diversity-vector length for one view.
pub fn view_diversity_len(view: ViewId, ordered: bool) -> usize {
    let m = view.group_count();
    if ordered {
        m * (m - 1)
    } else {
        m * (m - 1) / 2
    }
}

/// Total diversity length across a set of views.
pub fn diversity_len(views: &[ViewId], ordered: bool) -> usize {
    views.iter().map(|v| view_diversity_len(*v, ordered)).sum()
}

/// Bucket comments into the view's groups by profile attribute.
///
/// Every comment must carry a profile; comments whose embedding is absent
/// are skipped and reported in `missing_ids`.
pub fn split_by_view(
    comments: &[CommentRecord],
    embeddings: &EmbeddingTable,
    view: ViewId,
) -> Result<ViewGroups> {
    let mut groups = vec![Vec::new(); view.group_count()];
    let mut missing_ids = Vec::new();
    for comment in comments {
        let profile = comment.profile.as_ref().ok_or_else(|| {
            Error::Validation(format!(
                "comment {} has no profile; grouped comments must be profiled",
                comment.id
            ))
        })?;
        match embeddings.lookup(&comment.id) {
            Some(vec) => groups[group_index(profile, view)].push(vec.to_vec()),
            None => missing_ids.push(comment.id.clone()),
        }
    }
    Ok(ViewGroups { view, groups, missing_ids })
}

/// Arithmetic mean of the group's embeddings; the sentinel for an empty group.
pub fn group_mean(group: &[Vec<f64>], sentinel: &[f64]) -> Vec<f64> {
    if group.is_empty() {
        return sentinel.to_vec();
    }
    let dim = group[0].len();
    let mut mean = vec![0.0; dim];
    for member in group {
        for (m, v) in mean.iter_mut().zip(member) {
            *m += v;
        }
    }
    let n = group.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}

fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi.max(PROB_FLOOR);
            let qi = qi.max(PROB_FLOOR);
            pi * (pi / qi).ln()
        })
        .sum()
}

/// Mean KL divergence between softmax-normalized embeddings over all cross
/// pairs of the two groups; 0 when either side is empty.
pub fn pair_divergence(side_p: &[Vec<f64>], side_q: &[Vec<f64>]) -> f64 {
    if side_p.is_empty() || side_q.is_empty() {
        return 0.0;
    }
    let probs_p: Vec<Vec<f64>> = side_p.iter().map(|v| softmax_normalize(v)).collect();
    let probs_q: Vec<Vec<f64>> = side_q.iter().map(|v| softmax_normalize(v)).collect();
    let mut total = 0.0;
    for p in &probs_p {
        for q in &probs_q {
            total += kl_divergence(p, q);
        }
    }
    total / (side_p.len() * side_q.len()) as f64
}

/// Divergence vector for one view: `pair_divergence` over group pairs in
/// lexicographic (p, q) order.
pub fn view_diversity(groups: &ViewGroups, options: FeedbackOptions) -> Vec<f64> {
    let m = groups.groups.len();
    let mut d = Vec::with_capacity(view_diversity_len(groups.view, options.ordered_pairs));
    for p in 0..m {
        let q_start = if options.ordered_pairs { 0 } else { p + 1 };
        for q in q_start..m {
            if p == q {
                continue;
            }
            d.push(pair_divergence(&groups.groups[p], &groups.groups[q]));
        }
    }
    d
}

/// Build the full per-item bundle over the gender/age/education views.
pub fn build_bundle(
    comments: &[CommentRecord],
    embeddings: &EmbeddingTable,
    options: FeedbackOptions,
) -> Result<FeedbackBundle> {
    let sentinel = embeddings.empty_vector();
    let mut s_means = Vec::with_capacity(3);
    let mut d_views = Vec::with_capacity(3);
    for view in ViewId::ALL {
        let groups = split_by_view(comments, embeddings, view)?;
        s_means.push(
            groups
                .groups
                .iter()
                .map(|g| group_mean(g, &sentinel))
                .collect(),
        );
        d_views.push(view_diversity(&groups, options));
    }
    Ok(FeedbackBundle { s_means, d_views })
}
