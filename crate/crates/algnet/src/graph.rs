//! Graph propagation over the medication graphs.
//!
//! The light graph convolution is parameter-free: embeddings are repeatedly
//! multiplied by the symmetrically normalized adjacency (no self-loops, no
//! weights, no nonlinearity), and the layer outputs are combined by a uniform
//! weight `alpha`. The memory bank adds the co-prescription embedding and a
//! scaled interaction embedding. A conventional weighted GCN (self-loops +
//! ReLU + per-layer weights, last layer kept) serves as the ablation arm.

use crate::data::AdjacencyMatrix;
use crate::tape::{NodeId, Tape};

/// Symmetrically normalized adjacency `A[i][j] / sqrt(d_i * d_j)`. Rows of
/// isolated nodes are all zero. Plain data, pushed onto tapes as a constant.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    n: usize,
    data: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_node(&self, tape: &mut Tape) -> NodeId {
        tape.constant(&[self.n, self.n], self.data.clone())
    }
}

/// Normalizes without self-loops. Each nonzero entry becomes exactly
/// `A[i][j] / (sqrt(d_i) * sqrt(d_j))` with `d` the row sums of `A`.
pub fn normalize_adjacency(adj: &AdjacencyMatrix) -> NormalizedAdjacency {
    adj.assert_invariants();
    let n = adj.n();
    let deg = adj.row_degrees();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = adj.get(i, j);
            if a != 0.0 {
                data[i * n + j] = a / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    NormalizedAdjacency { n, data }
}

/// Normalizes `A + I` (degrees include the self-loop), for the weighted GCN.
pub fn normalize_with_self_loops(adj: &AdjacencyMatrix) -> NormalizedAdjacency {
    adj.assert_invariants();
    let n = adj.n();
    let deg: Vec<f64> = adj.row_degrees().iter().map(|d| d + 1.0).collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = if i == j { 1.0 } else { adj.get(i, j) };
            if a != 0.0 {
                data[i * n + j] = a / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    NormalizedAdjacency { n, data }
}

/// Repeated propagation `E_{k+1} = adj_norm * E_k`. Returns the `layers`
/// outputs after 1, 2, ... steps (the input itself is not included).
pub fn lgc_propagate(
    tape: &mut Tape,
    adj_norm: &NormalizedAdjacency,
    e0: NodeId,
    layers: usize,
) -> Vec<NodeId> {
    assert!(layers >= 1, "lgc_propagate: need at least one layer");
    assert_eq!(
        tape.shape(e0)[0],
        adj_norm.n(),
        "lgc_propagate: embedding rows {:?} vs graph size {}",
        tape.shape(e0),
        adj_norm.n()
    );
    let a = adj_norm.to_node(tape);
    let mut out = Vec::with_capacity(layers);
    let mut e = e0;
    for _ in 0..layers {
        e = tape.matmul(a, e);
        out.push(e);
    }
    out
}

/// Uniformly weighted combination `alpha * (E_1 + E_2 + ...)`, optionally
/// adding the unpropagated `E_0` with the same weight.
pub fn combine_layers(
    tape: &mut Tape,
    layer_outputs: &[NodeId],
    alpha: f64,
    layer0: Option<NodeId>,
) -> NodeId {
    assert!(!layer_outputs.is_empty(), "combine_layers: no layer outputs");
    let mut acc = layer_outputs[0];
    for &e in &layer_outputs[1..] {
        acc = tape.add(acc, e);
    }
    if let Some(e0) = layer0 {
        acc = tape.add(acc, e0);
    }
    tape.scale(acc, alpha)
}

/// Memory bank `M = E_ehr + beta * E_ddi`.
pub fn build_memory_graph(tape: &mut Tape, e_ehr: NodeId, e_ddi: NodeId, beta: f64) -> NodeId {
    let scaled = tape.scale(e_ddi, beta);
    tape.add(e_ehr, scaled)
}

/// Weighted GCN: `E_{k+1} = relu((A~ E_k) W_k)` over a self-loop-normalized
/// adjacency; the last layer's output is the embedding.
pub fn gcn_propagate(
    tape: &mut Tape,
    adj_norm: &NormalizedAdjacency,
    e0: NodeId,
    weights: &[NodeId],
) -> NodeId {
    assert!(!weights.is_empty(), "gcn_propagate: need at least one weight");
    let a = adj_norm.to_node(tape);
    let mut e = e0;
    for &w in weights {
        let agg = tape.matmul(a, e);
        let lin = tape.matmul(agg, w);
        e = tape.relu(lin);
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AdjacencyKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_graph(rng: &mut ChaCha20Rng, n: usize, p: f64) -> AdjacencyMatrix {
        let mut adj = AdjacencyMatrix::new(n, AdjacencyKind::EhrCooccurrence);
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    adj.set_edge(i, j);
                }
            }
        }
        adj
    }

    fn random_embedding(rng: &mut ChaCha20Rng, n: usize, d: usize) -> Vec<f64> {
        (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Node-by-node aggregation oracle for one propagation step, written
    /// independently of the matrix route: for every node, walk its neighbors
    /// and sum their embeddings weighted by `1/sqrt(d_i d_j)`.
    fn brute_force_step(adj: &AdjacencyMatrix, e: &[f64], d: usize) -> Vec<f64> {
        let n = adj.n();
        let deg = adj.row_degrees();
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..n {
                if adj.has_edge(i, j) {
                    let w = 1.0 / (deg[i].sqrt() * deg[j].sqrt());
                    for k in 0..d {
                        out[i * d + k] += w * e[j * d + k];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn propagation_matches_brute_force_on_many_random_graphs() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for case in 0..50 {
            let n = rng.gen_range(2..=20);
            let d = rng.gen_range(1..=6);
            let p = rng.gen_range(0.05..0.9);
            let adj = random_graph(&mut rng, n, p);
            let e0_data = random_embedding(&mut rng, n, d);

            let norm = normalize_adjacency(&adj);
            let mut tape = Tape::new();
            let e0 = tape.constant(&[n, d], e0_data.clone());
            let layers = lgc_propagate(&mut tape, &norm, e0, 2);

            let step1 = brute_force_step(&adj, &e0_data, d);
            let step2 = brute_force_step(&adj, &step1, d);
            for (a, b) in tape.value(layers[0]).iter().zip(&step1) {
                assert!((a - b).abs() < 1e-12, "case {case}: layer 1 mismatch");
            }
            for (a, b) in tape.value(layers[1]).iter().zip(&step2) {
                assert!((a - b).abs() < 1e-12, "case {case}: layer 2 mismatch");
            }
        }
    }

    #[test]
    fn normalization_is_the_exact_formula() {
        let mut rng = ChaCha20Rng::seed_from_u64(78);
        let adj = random_graph(&mut rng, 12, 0.4);
        let norm = normalize_adjacency(&adj);
        let deg = adj.row_degrees();
        for i in 0..12 {
            for j in 0..12 {
                let expected = if adj.get(i, j) == 0.0 {
                    0.0
                } else {
                    adj.get(i, j) / (deg[i].sqrt() * deg[j].sqrt())
                };
                assert_eq!(norm.get(i, j), expected, "entry ({i}, {j})");
            }
        }
    }

    #[test]
    fn isolated_nodes_have_zero_rows_and_stay_zero() {
        let mut adj = AdjacencyMatrix::new(4, AdjacencyKind::EhrCooccurrence);
        adj.set_edge(0, 1); // nodes 2 and 3 are isolated
        let norm = normalize_adjacency(&adj);
        for j in 0..4 {
            assert_eq!(norm.get(2, j), 0.0);
            assert_eq!(norm.get(3, j), 0.0);
        }
        let mut tape = Tape::new();
        let e0 = tape.constant(&[4, 2], vec![1.0; 8]);
        let layers = lgc_propagate(&mut tape, &norm, e0, 2);
        for l in layers {
            let v = tape.value(l);
            assert_eq!(&v[4..8], &[0.0; 4], "isolated rows must stay zero");
        }
    }

    #[test]
    fn single_edge_graph_by_hand() {
        // two nodes, one edge: degrees are 1, so propagation just swaps rows
        let mut adj = AdjacencyMatrix::new(2, AdjacencyKind::EhrCooccurrence);
        adj.set_edge(0, 1);
        let norm = normalize_adjacency(&adj);
        assert_eq!(norm.get(0, 1), 1.0);
        assert_eq!(norm.get(1, 0), 1.0);
        let mut tape = Tape::new();
        let e0 = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let layers = lgc_propagate(&mut tape, &norm, e0, 2);
        assert_eq!(tape.value(layers[0]), &[3.0, 4.0, 1.0, 2.0]);
        assert_eq!(tape.value(layers[1]), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn combination_and_memory_are_the_stated_formulas() {
        let mut tape = Tape::new();
        let e1 = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let e2 = tape.constant(&[2, 2], vec![10.0, 20.0, 30.0, 40.0]);
        let combined = combine_layers(&mut tape, &[e1, e2], 0.5, None);
        assert_eq!(tape.value(combined), &[5.5, 11.0, 16.5, 22.0]);

        let e0 = tape.constant(&[2, 2], vec![100.0, 100.0, 100.0, 100.0]);
        let with0 = combine_layers(&mut tape, &[e1, e2], 0.5, Some(e0));
        assert_eq!(tape.value(with0), &[55.5, 61.0, 66.5, 72.0]);

        let mem = build_memory_graph(&mut tape, e1, e2, 0.5);
        assert_eq!(tape.value(mem), &[6.0, 12.0, 18.0, 24.0]);
    }

    #[test]
    fn gcn_differs_from_lgc_and_uses_self_loops() {
        let mut rng = ChaCha20Rng::seed_from_u64(79);
        let adj = random_graph(&mut rng, 6, 0.5);
        let plain = normalize_adjacency(&adj);
        let looped = normalize_with_self_loops(&adj);
        // self-loop normalization has a nonzero diagonal, the plain one not
        for i in 0..6 {
            assert_eq!(plain.get(i, i), 0.0);
            assert!(looped.get(i, i) > 0.0);
        }
        // diagonal of an isolated node under self-loops is exactly 1
        let mut lonely = AdjacencyMatrix::new(3, AdjacencyKind::Ddi);
        lonely.set_edge(0, 1);
        let ln = normalize_with_self_loops(&lonely);
        assert_eq!(ln.get(2, 2), 1.0);

        // identity weights + all-positive inputs reduce GCN to plain
        // propagation over the looped graph
        let n = 6;
        let d = 3;
        let e0_data: Vec<f64> = (0..n * d).map(|k| (k + 1) as f64).collect();
        let mut tape = Tape::new();
        let e0 = tape.constant(&[n, d], e0_data.clone());
        let mut eye = vec![0.0; d * d];
        for k in 0..d {
            eye[k * d + k] = 1.0;
        }
        let w1 = tape.constant(&[d, d], eye.clone());
        let w2 = tape.constant(&[d, d], eye);
        let out = gcn_propagate(&mut tape, &looped, e0, &[w1, w2]);
        // expected: two rounds of looped-matrix multiplication (ReLU is a
        // no-op because everything stays non-negative)
        let mut expect = e0_data;
        for _ in 0..2 {
            let mut next = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..n {
                    let w = looped.get(i, j);
                    for k in 0..d {
                        next[i * d + k] += w * expect[j * d + k];
                    }
                }
            }
            expect = next;
        }
        for (a, b) in tape.value(out).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn propagation_is_differentiable_end_to_end() {
        let mut adj = AdjacencyMatrix::new(3, AdjacencyKind::EhrCooccurrence);
        adj.set_edge(0, 1);
        adj.set_edge(1, 2);
        let norm = normalize_adjacency(&adj);
        let base: Vec<f64> = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.6];

        let loss_at = |data: &[f64]| {
            let mut tape = Tape::new();
            let e0 = tape.constant(&[3, 2], data.to_vec());
            let layers = lgc_propagate(&mut tape, &norm, e0, 2);
            let comb = combine_layers(&mut tape, &layers, 0.5, None);
            let sq = tape.mul(comb, comb);
            let loss = tape.sum_all(sq);
            (tape, e0, loss)
        };
        let (mut tape, e0, loss) = loss_at(&base);
        tape.backward(loss);
        let analytic = tape.grad(e0).unwrap().to_vec();
        let eps = 1e-5;
        for k in 0..base.len() {
            let mut up = base.clone();
            up[k] += eps;
            let mut down = base.clone();
            down[k] -= eps;
            let (tu, _, lu) = loss_at(&up);
            let (td, _, ld) = loss_at(&down);
            let numeric = (tu.scalar_value(lu) - td.scalar_value(ld)) / (2.0 * eps);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-10);
            assert!(
                (analytic[k] - numeric).abs() / denom < 1e-4,
                "component {k}: {} vs {numeric}",
                analytic[k]
            );
        }
    }

    proptest! {
        #[test]
        fn normalized_rows_of_regular_graphs_sum_to_one(n in 2usize..10) {
            // complete graph: every node has degree n-1, so each row of the
            // normalized matrix sums to (n-1)/(n-1) = 1
            let mut adj = AdjacencyMatrix::new(n, AdjacencyKind::EhrCooccurrence);
            for i in 0..n {
                for j in i + 1..n {
                    adj.set_edge(i, j);
                }
            }
            let norm = normalize_adjacency(&adj);
            for i in 0..n {
                let sum: f64 = (0..n).map(|j| norm.get(i, j)).sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
