//! Memory readouts and the prediction head.
//!
//! The patient state queries the medication memory `M` two ways. The bank
//! readout attends over all medications directly. The dynamic readout routes
//! the query through the patient's *own* visit history — a key/value store of
//! (patient state, prescribed medications) pairs from earlier visits — so the
//! attention mass lands on medications that worked for this patient before.
//! On a first visit there is no history and that readout is exactly zero.

use crate::tape::{NodeId, Tape};

/// Per-patient visit history. Keys are patient-state nodes on the current
/// tape (gradients flow through them); values are fixed multi-hot
/// prescription vectors. Reset between patients.
pub struct VisitHistory {
    keys: Vec<NodeId>,
    values: Vec<Vec<f64>>,
    n_med: usize,
}

impl VisitHistory {
    pub fn new(n_med: usize) -> Self {
        VisitHistory {
            keys: Vec::new(),
            values: Vec::new(),
            n_med,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Appends one visit: the state that queried the memory and the multi-hot
    /// vector of what was actually prescribed.
    pub fn insert(&mut self, state: NodeId, prescribed: Vec<f64>) {
        assert_eq!(
            prescribed.len(),
            self.n_med,
            "visit history: value length {} vs medication count {}",
            prescribed.len(),
            self.n_med
        );
        assert!(
            prescribed.iter().all(|&v| v == 0.0 || v == 1.0),
            "visit history: values must be multi-hot"
        );
        self.keys.push(state);
        self.values.push(prescribed);
    }

    pub fn value_rows(&self) -> &[Vec<f64>] {
        &self.values
    }
}

/// Content-based bank readout: `o_b = M^T softmax(M a)`.
pub fn read_memory_bank(tape: &mut Tape, memory: NodeId, a: NodeId) -> NodeId {
    let scores = tape.matvec(memory, a); // [n_med]
    let weights = tape.softmax_rows(scores);
    let mt = tape.transpose(memory);
    tape.matvec(mt, weights) // [dim]
}

/// History-based readout: `o_d = M^T (H_v^T softmax(H_k a))`, where `H_k`
/// stacks earlier patient states and `H_v` their prescriptions. Exactly the
/// zero vector when the history is empty; gradients still flow on later
/// visits because the stored keys live on the same tape.
pub fn read_dynamic_memory(
    tape: &mut Tape,
    memory: NodeId,
    history: &VisitHistory,
    a: NodeId,
) -> NodeId {
    let dim = tape.shape(a)[0];
    if history.is_empty() {
        return tape.zeros(&[dim]);
    }
    let hk = tape.stack_rows(&history.keys); // [t-1, dim]
    let scores = tape.matvec(hk, a);
    let weights = tape.softmax_rows(scores); // [t-1]
    let flat: Vec<f64> = history.values.iter().flatten().copied().collect();
    let hv = tape.constant(&[history.len(), history.n_med], flat);
    let hvt = tape.transpose(hv); // [n_med, t-1]
    let med_weights = tape.matvec(hvt, weights); // [n_med]
    let mt = tape.transpose(memory);
    tape.matvec(mt, med_weights) // [dim]
}

/// Prediction head: `concat(a, o_b, o_d)` through one affine map, to logits
/// and sigmoid probabilities.
pub fn predict(
    tape: &mut Tape,
    a: NodeId,
    o_bank: NodeId,
    o_dyn: NodeId,
    w: NodeId,
    b: NodeId,
) -> (NodeId, NodeId) {
    let cat = tape.concat_vec(&[a, o_bank, o_dyn]);
    let lin = tape.vecmat(cat, w);
    let logits = tape.add(lin, b);
    let probs = tape.sigmoid(logits);
    (logits, probs)
}

/// Multi-hot encoding of a medication index set.
pub fn multi_hot(indices: &[usize], n_med: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_med];
    for &i in indices {
        assert!(i < n_med, "multi_hot: index {i} out of range for {n_med} medications");
        v[i] = 1.0;
    }
    v
}
