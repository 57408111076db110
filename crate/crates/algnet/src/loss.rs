//! Training objectives.
//!
//! The per-visit loss is `theta0 * bce + theta1 * margin`, optionally plus
//! `w_ddi * interaction`. The interaction term — predicted probability mass
//! on known-interacting pairs — is computed in both differentiable (on-tape)
//! and plain forms; with `w_ddi = 0` it is monitored but not optimized.

use crate::data::AdjacencyMatrix;
use crate::tape::{NodeId, Tape};

/// Summed binary cross-entropy on logits. Targets must be multi-hot.
pub fn loss_bce(tape: &mut Tape, logits: NodeId, targets: &[f64]) -> NodeId {
    tape.bce_with_logits(logits, targets)
}

/// Pairwise ranking hinge between all labels and those predicted positive,
/// normalized by `|truth| * label_count`.
pub fn loss_margin(tape: &mut Tape, probs: NodeId, truth_len: usize, threshold: f64) -> NodeId {
    tape.multi_label_margin(probs, truth_len, threshold)
}

/// Differentiable interaction penalty `sum_ij A_ddi[i][j] p_i p_j` (ordered
/// pairs, so each interacting pair counts twice). `ddi_node` must be the
/// interaction adjacency as a tape constant.
pub fn loss_interaction(tape: &mut Tape, probs: NodeId, ddi_node: NodeId) -> NodeId {
    let weighted = tape.matvec(ddi_node, probs);
    tape.dot(probs, weighted)
}

/// Plain value of the interaction penalty, for per-epoch monitoring.
pub fn interaction_value(probs: &[f64], ddi: &AdjacencyMatrix) -> f64 {
    let n = ddi.n();
    assert_eq!(probs.len(), n, "interaction_value: {} probs vs graph size {n}", probs.len());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if ddi.has_edge(i, j) {
                total += probs[i] * probs[j];
            }
        }
    }
    total
}

/// Weighted total `theta0 * bce + theta1 * margin [+ w_ddi * interaction]`.
pub fn loss_total(
    tape: &mut Tape,
    bce: NodeId,
    margin: NodeId,
    interaction: Option<NodeId>,
    theta0: f64,
    theta1: f64,
    w_ddi: f64,
) -> NodeId {
    let weighted_bce = tape.scale(bce, theta0);
    let weighted_margin = tape.scale(margin, theta1);
    let mut total = tape.add(weighted_bce, weighted_margin);
    if let Some(inter) = interaction {
        if w_ddi != 0.0 {
            let weighted = tape.scale(inter, w_ddi);
            total = tape.add(total, weighted);
        }
    }
    total
}
