//! Evaluation metrics over per-visit predictions.
//!
//! A [`VisitEval`] pairs the ground-truth medication set with the model's
//! probabilities; the predicted set is everything strictly above the decision
//! threshold. All metrics are means over visits, except the interaction rate
//! which is a ratio of pair counts pooled across visits. Reported numbers
//! carry a bootstrap mean/std from resampling patients with replacement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::data::AdjacencyMatrix;

#[derive(Clone, Debug)]
pub struct VisitEval {
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
    pub probs: Vec<f64>,
}

impl VisitEval {
    /// Builds an evaluation from raw probabilities; the predicted set is
    /// exactly `{ j : probs[j] > threshold }`.
    pub fn from_probs(truth: Vec<usize>, probs: Vec<f64>, threshold: f64) -> Self {
        for &t in &truth {
            assert!(t < probs.len(), "visit eval: truth index {t} out of range");
        }
        let pred = (0..probs.len()).filter(|&j| probs[j] > threshold).collect();
        VisitEval { truth, pred, probs }
    }
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    // both sides are sorted index sets
    let mut count = 0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Jaccard similarity of two index sets; two empty sets count as identical.
pub fn visit_jaccard(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() && pred.is_empty() {
        return 1.0;
    }
    let inter = intersection_size(truth, pred);
    let union = truth.len() + pred.len() - inter;
    inter as f64 / union as f64
}

/// Per-visit precision/recall/F1 with the usual conventions: precision counts
/// against the prediction, recall against the truth, and an empty/empty pair
/// is a perfect match.
pub fn visit_precision_recall_f1(truth: &[usize], pred: &[usize]) -> (f64, f64, f64) {
    if truth.is_empty() && pred.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let inter = intersection_size(truth, pred) as f64;
    let p = if pred.is_empty() { 0.0 } else { inter / pred.len() as f64 };
    let r = if truth.is_empty() { 0.0 } else { inter / truth.len() as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Average precision of one visit's ranking, with tied scores entering
/// together (equivalent to sweeping every distinct threshold). No positive
/// labels means 0.
pub fn visit_average_precision(probs: &[f64], truth: &[usize]) -> f64 {
    let n = probs.len();
    let npos = truth.len();
    if npos == 0 {
        return 0.0;
    }
    let mut is_pos = vec![false; n];
    for &t in truth {
        is_pos[t] = true;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut ap = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < n {
        let score = probs[order[k]];
        let (mut dtp, mut dfp) = (0usize, 0usize);
        let mut kk = k;
        while kk < n && probs[order[kk]] == score {
            if is_pos[order[kk]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            kk += 1;
        }
        tp += dtp;
        fp += dfp;
        if dtp > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall_increment = dtp as f64 / npos as f64;
            ap += precision * recall_increment;
        }
        k = kk;
    }
    ap
}

// aggregate means over visits

pub fn jaccard(evals: &[VisitEval]) -> f64 {
    mean(evals.iter().map(|e| visit_jaccard(&e.truth, &e.pred)))
}

pub fn precision_recall_f1(evals: &[VisitEval]) -> (f64, f64, f64) {
    if evals.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut sums = (0.0, 0.0, 0.0);
    for e in evals {
        let (p, r, f) = visit_precision_recall_f1(&e.truth, &e.pred);
        sums.0 += p;
        sums.1 += r;
        sums.2 += f;
    }
    let n = evals.len() as f64;
    (sums.0 / n, sums.1 / n, sums.2 / n)
}

pub fn f1(evals: &[VisitEval]) -> f64 {
    precision_recall_f1(evals).2
}

pub fn pr_auc(evals: &[VisitEval]) -> f64 {
    mean(evals.iter().map(|e| visit_average_precision(&e.probs, &e.truth)))
}

pub fn avg_drugs(evals: &[VisitEval]) -> f64 {
    mean(evals.iter().map(|e| e.pred.len() as f64))
}

/// Fraction of predicted unordered medication pairs that are known to
/// interact, pooled over visits. No pairs predicted anywhere means 0.
pub fn ddi_rate(evals: &[VisitEval], ddi: &AdjacencyMatrix) -> f64 {
    let mut interacting = 0usize;
    let mut total = 0usize;
    for e in evals {
        for (a, &i) in e.pred.iter().enumerate() {
            for &j in &e.pred[a + 1..] {
                total += 1;
                if ddi.has_edge(i, j) {
                    interacting += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        interacting as f64 / total as f64
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in it {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

// ── Reporting ───────────────────────────────────────────────────────────────

/// Point estimate plus bootstrap mean/std.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricStat {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricsReport {
    pub ddi_rate: MetricStat,
    pub jaccard: MetricStat,
    pub f1: MetricStat,
    pub pr_auc: MetricStat,
    pub avg_drugs: MetricStat,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Evaluates all metrics with a patient-level bootstrap: each round resamples
/// whole patients with replacement and recomputes every metric on the pooled
/// visits. `value` is the un-resampled point estimate.
pub fn metrics_report(
    evals_by_patient: &[Vec<VisitEval>],
    ddi: &AdjacencyMatrix,
    rounds: usize,
    seed: u64,
) -> MetricsReport {
    assert!(rounds >= 1, "metrics_report: need at least one bootstrap round");
    let all: Vec<VisitEval> = evals_by_patient.iter().flatten().cloned().collect();
    let compute = |evals: &[VisitEval]| -> [f64; 5] {
        [
            ddi_rate(evals, ddi),
            jaccard(evals),
            f1(evals),
            pr_auc(evals),
            avg_drugs(evals),
        ]
    };
    let point = compute(&all);

    let n = evals_by_patient.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut samples = vec![Vec::with_capacity(rounds); 5];
    for _ in 0..rounds {
        let mut resampled = Vec::with_capacity(all.len());
        for _ in 0..n {
            let pick = rng.gen_range(0..n);
            resampled.extend(evals_by_patient[pick].iter().cloned());
        }
        let vals = compute(&resampled);
        for (k, v) in vals.into_iter().enumerate() {
            samples[k].push(v);
        }
    }
    let stat = |k: usize| -> MetricStat {
        let xs = &samples[k];
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        } else {
            0.0
        };
        MetricStat {
            value: point[k],
            mean: m,
            std: var.sqrt(),
        }
    };
    MetricsReport {
        ddi_rate: stat(0),
        jaccard: stat(1),
        f1: stat(2),
        pr_auc: stat(3),
        avg_drugs: stat(4),
    }
}
