//! Model assembly: parameter construction, tape binding, and the per-patient
//! forward pass that wires the graph, encoder, and readout pieces together
//! according to the chosen variant.
//!
//! Every variant creates the *full* parameter set — disabled blocks simply
//! never touch the tape, receive zero gradients, and are never updated. That
//! keeps initialization, checkpoints, and optimizer state identical across
//! the grid, so toggling a block is exactly an architecture change and not a
//! reshuffling of random initial values.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{GraphKind, SeqKind, TrainConfig};
use crate::data::CodeVocab;
use crate::encoder::{
    embed_visits, fuse_patient_state, gru_cell, lstm_cell, mhsa_forward, pre_combine, AttnParams,
    GruParams, LstmParams,
};
use crate::graph::{
    build_memory_graph, combine_layers, gcn_propagate, lgc_propagate, normalize_adjacency,
    normalize_with_self_loops, NormalizedAdjacency,
};
use crate::optim::GradMap;
use crate::params::ParamStore;
use crate::readout::{multi_hot, predict, read_dynamic_memory, read_memory_bank, VisitHistory};
use crate::tape::{NodeId, Tape};
use crate::{AdjacencyMatrix, PatientRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabSizes {
    pub diag: usize,
    pub proc: usize,
    pub med: usize,
}

impl VocabSizes {
    pub fn of(vocab: &CodeVocab) -> Self {
        VocabSizes {
            diag: vocab.diag.len(),
            proc: vocab.proc.len(),
            med: vocab.med.len(),
        }
    }
}

/// Reporting group of a parameter, keyed by its name prefix.
pub fn param_group(name: &str) -> String {
    match name {
        "embed.med" => "graph_base_embedding".to_string(),
        n if n.starts_with("embed.") => "embeddings".to_string(),
        n if n.starts_with("attn.") => "attention".to_string(),
        n if n.starts_with("gru.") => "gru".to_string(),
        n if n.starts_with("lstm.") => "lstm".to_string(),
        n if n.starts_with("gcn.") => "gcn".to_string(),
        n if n.starts_with("fuse.") => "fusion".to_string(),
        n if n.starts_with("head.") => "prediction_head".to_string(),
        other => panic!("unknown parameter name {other}"),
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub sizes: VocabSizes,
    pub params: ParamStore,
}

/// All parameters bound onto one tape for a forward pass.
pub struct BoundParams {
    pub embed_diag: NodeId,
    pub embed_proc: NodeId,
    pub embed_med: NodeId,
    pub attn_diag: AttnParams,
    pub attn_proc: AttnParams,
    pub gru_diag: GruParams,
    pub gru_proc: GruParams,
    pub lstm_diag: LstmParams,
    pub lstm_proc: LstmParams,
    pub gcn_ehr: [NodeId; 2],
    pub gcn_ddi: [NodeId; 2],
    pub fuse_w: NodeId,
    pub fuse_b: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
    by_name: Vec<(String, NodeId)>,
}

impl BoundParams {
    /// Gradients for every parameter, in store order, after a backward pass.
    pub fn collect_grads(&self, tape: &Tape) -> GradMap {
        let mut grads = GradMap::new();
        for (name, id) in &self.by_name {
            let g = tape
                .grad(*id)
                .unwrap_or_else(|| panic!("no gradient for parameter {name}; run backward first"));
            grads.insert(name.clone(), g.to_vec());
        }
        grads
    }
}

/// Output nodes for one visit of a patient pass.
pub struct VisitOutput {
    pub state: NodeId,
    pub o_bank: NodeId,
    pub o_dyn: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
    /// per-head attention matrices for the diagnosis stack, if attention ran
    pub attn_diag: Vec<NodeId>,
}

impl Model {
    /// Fresh model with seeded uniform init, `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// per weight matrix (embedding tables use the embedding width). Biases
    /// start at zero.
    pub fn new(config: TrainConfig, sizes: VocabSizes) -> Model {
        config.validate().expect("invalid config");
        assert!(sizes.diag > 0 && sizes.proc > 0 && sizes.med > 0, "empty vocabulary");
        let d = config.dim;
        let dm = config.di_model();
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::new();
        let b_d = 1.0 / (d as f64).sqrt();
        let b_dm = 1.0 / (dm as f64).sqrt();

        p.insert_uniform("embed.diag", vec![sizes.diag, d], b_d, &mut rng);
        p.insert_uniform("embed.proc", vec![sizes.proc, d], b_d, &mut rng);
        p.insert_uniform("embed.med", vec![sizes.med, d], b_d, &mut rng);
        for modality in ["diag", "proc"] {
            for w in ["wq", "wk", "wv"] {
                p.insert_uniform(&format!("attn.{modality}.{w}"), vec![d, dm], b_d, &mut rng);
            }
            p.insert_uniform(&format!("attn.{modality}.wo"), vec![dm, d], b_dm, &mut rng);
        }
        for modality in ["diag", "proc"] {
            for gate in ["z", "r", "h"] {
                p.insert_uniform(&format!("gru.{modality}.w{gate}"), vec![d, d], b_d, &mut rng);
                p.insert_uniform(&format!("gru.{modality}.u{gate}"), vec![d, d], b_d, &mut rng);
                p.insert_zeros(&format!("gru.{modality}.b{gate}"), vec![d]);
            }
        }
        for modality in ["diag", "proc"] {
            for gate in ["i", "f", "o", "g"] {
                p.insert_uniform(&format!("lstm.{modality}.w{gate}"), vec![d, d], b_d, &mut rng);
                p.insert_uniform(&format!("lstm.{modality}.u{gate}"), vec![d, d], b_d, &mut rng);
                p.insert_zeros(&format!("lstm.{modality}.b{gate}"), vec![d]);
            }
        }
        for graph in ["ehr", "ddi"] {
            for layer in [1, 2] {
                p.insert_uniform(&format!("gcn.{graph}.w{layer}"), vec![d, d], b_d, &mut rng);
            }
        }
        p.insert_uniform("fuse.w", vec![2 * d, d], 1.0 / (2.0 * d as f64).sqrt(), &mut rng);
        p.insert_zeros("fuse.b", vec![d]);
        p.insert_uniform("head.w", vec![3 * d, sizes.med], 1.0 / (3.0 * d as f64).sqrt(), &mut rng);
        p.insert_zeros("head.b", vec![sizes.med]);

        Model { config, sizes, params: p }
    }

    /// Rebuilds a model around existing parameters (checkpoint load).
    pub fn from_parts(config: TrainConfig, sizes: VocabSizes, params: ParamStore) -> Model {
        Model { config, sizes, params }
    }

    /// Binds every parameter onto `tape`. Zero-copy: nodes share the store's
    /// buffers.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut by_name = Vec::with_capacity(self.params.len());
        let mut node = |tape: &mut Tape, name: &str| -> NodeId {
            let p = self.params.get(name);
            let id = tape.param(&p.shape, Rc::clone(&p.data));
            by_name.push((name.to_string(), id));
            id
        };
        let attn = |tape: &mut Tape, node: &mut dyn FnMut(&mut Tape, &str) -> NodeId, m: &str| AttnParams {
            wq: node(tape, &format!("attn.{m}.wq")),
            wk: node(tape, &format!("attn.{m}.wk")),
            wv: node(tape, &format!("attn.{m}.wv")),
            wo: node(tape, &format!("attn.{m}.wo")),
        };
        let embed_diag = node(tape, "embed.diag");
        let embed_proc = node(tape, "embed.proc");
        let embed_med = node(tape, "embed.med");
        let attn_diag = attn(tape, &mut node, "diag");
        let attn_proc = attn(tape, &mut node, "proc");
        let gru = |tape: &mut Tape, node: &mut dyn FnMut(&mut Tape, &str) -> NodeId, m: &str| GruParams {
            wz: node(tape, &format!("gru.{m}.wz")),
            uz: node(tape, &format!("gru.{m}.uz")),
            bz: node(tape, &format!("gru.{m}.bz")),
            wr: node(tape, &format!("gru.{m}.wr")),
            ur: node(tape, &format!("gru.{m}.ur")),
            br: node(tape, &format!("gru.{m}.br")),
            wh: node(tape, &format!("gru.{m}.wh")),
            uh: node(tape, &format!("gru.{m}.uh")),
            bh: node(tape, &format!("gru.{m}.bh")),
        };
        let gru_diag = gru(tape, &mut node, "diag");
        let gru_proc = gru(tape, &mut node, "proc");
        let lstm = |tape: &mut Tape, node: &mut dyn FnMut(&mut Tape, &str) -> NodeId, m: &str| LstmParams {
            wi: node(tape, &format!("lstm.{m}.wi")),
            ui: node(tape, &format!("lstm.{m}.ui")),
            bi: node(tape, &format!("lstm.{m}.bi")),
            wf: node(tape, &format!("lstm.{m}.wf")),
            uf: node(tape, &format!("lstm.{m}.uf")),
            bf: node(tape, &format!("lstm.{m}.bf")),
            wo: node(tape, &format!("lstm.{m}.wo")),
            uo: node(tape, &format!("lstm.{m}.uo")),
            bo: node(tape, &format!("lstm.{m}.bo")),
            wg: node(tape, &format!("lstm.{m}.wg")),
            ug: node(tape, &format!("lstm.{m}.ug")),
            bg: node(tape, &format!("lstm.{m}.bg")),
        };
        let lstm_diag = lstm(tape, &mut node, "diag");
        let lstm_proc = lstm(tape, &mut node, "proc");
        let gcn_ehr = [node(tape, "gcn.ehr.w1"), node(tape, "gcn.ehr.w2")];
        let gcn_ddi = [node(tape, "gcn.ddi.w1"), node(tape, "gcn.ddi.w2")];
        let fuse_w = node(tape, "fuse.w");
        let fuse_b = node(tape, "fuse.b");
        let head_w = node(tape, "head.w");
        let head_b = node(tape, "head.b");
        BoundParams {
            embed_diag,
            embed_proc,
            embed_med,
            attn_diag,
            attn_proc,
            gru_diag,
            gru_proc,
            lstm_diag,
            lstm_proc,
            gcn_ehr,
            gcn_ddi,
            fuse_w,
            fuse_b,
            head_w,
            head_b,
            by_name,
        }
    }

    /// Builds the medication memory from the two drug graphs per the variant:
    /// parameter-free propagation with layer averaging, or the weighted GCN.
    pub fn build_memory(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graphs: &PreparedGraphs,
    ) -> NodeId {
        match self.config.variant.graph_kind() {
            GraphKind::Lgc => {
                let e0 = bound.embed_med;
                let layer0 = self.config.include_layer0.then_some(e0);
                let ehr_layers =
                    lgc_propagate(tape, &graphs.ehr_plain, e0, self.config.lgc_layers);
                let e_ehr = combine_layers(tape, &ehr_layers, self.config.alpha, layer0);
                let ddi_layers =
                    lgc_propagate(tape, &graphs.ddi_plain, e0, self.config.lgc_layers);
                let e_ddi = combine_layers(tape, &ddi_layers, self.config.alpha, layer0);
                build_memory_graph(tape, e_ehr, e_ddi, self.config.beta)
            }
            GraphKind::Gcn => {
                let e0 = bound.embed_med;
                let e_ehr = gcn_propagate(tape, &graphs.ehr_looped, e0, &bound.gcn_ehr);
                let e_ddi = gcn_propagate(tape, &graphs.ddi_looped, e0, &bound.gcn_ddi);
                build_memory_graph(tape, e_ehr, e_ddi, self.config.beta)
            }
        }
    }

    /// Encodes the visit prefix `visits[..=t]` of one modality into a vector:
    /// attention branch over the prefix, recurrence over the prefix, merged.
    /// Also returns the attention matrices (empty when attention is off).
    fn encode_modality(
        &self,
        tape: &mut Tape,
        embedded: &[NodeId],
        attn: &AttnParams,
        gru: &GruParams,
        lstm: &LstmParams,
    ) -> (NodeId, Vec<NodeId>) {
        let v = self.config.variant;
        let (l, weights) = if v.uses_attention() {
            let out = mhsa_forward(tape, embedded, attn, self.config.heads, self.config.attn_pool);
            (Some(out.pooled), out.attn)
        } else {
            (None, Vec::new())
        };
        let s = v.seq_kind().map(|kind| match kind {
            SeqKind::Gru => {
                let dim = tape.shape(embedded[0]).to_vec();
                let mut h = tape.zeros(&dim);
                for &x in embedded {
                    h = gru_cell(tape, x, h, gru);
                }
                h
            }
            SeqKind::Lstm => {
                let dim = tape.shape(embedded[0]).to_vec();
                let mut h = tape.zeros(&dim);
                let mut c = tape.zeros(&dim);
                for &x in embedded {
                    let (h2, c2) = lstm_cell(tape, x, h, c, lstm);
                    h = h2;
                    c = c2;
                }
                h
            }
        });
        (pre_combine(tape, l, s, self.config.gamma), weights)
    }

    /// Full forward pass over one patient: for each visit t, encode the visit
    /// prefix, query the memory (bank + own history), predict, then store the
    /// visit in the history. The stored prescriptions are the ground truth —
    /// past prescriptions are observed data at inference time too — unless
    /// `self_history` asks for the model's own thresholded output.
    pub fn forward_patient(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graphs: &PreparedGraphs,
        record: &PatientRecord,
    ) -> Vec<VisitOutput> {
        assert!(!record.visits.is_empty(), "patient {} has no visits", record.id);
        let memory = self.build_memory(tape, bound, graphs);
        let mut history = VisitHistory::new(self.sizes.med);
        let mut outputs = Vec::with_capacity(record.visits.len());

        let diag_sets: Vec<&[usize]> =
            record.visits.iter().map(|v| v.diag.as_slice()).collect();
        let proc_sets: Vec<&[usize]> =
            record.visits.iter().map(|v| v.proc.as_slice()).collect();
        let diag_embedded = embed_visits(tape, bound.embed_diag, &diag_sets);
        let proc_embedded = embed_visits(tape, bound.embed_proc, &proc_sets);

        for (t, visit) in record.visits.iter().enumerate() {
            let prefix_d = &diag_embedded[..=t];
            let prefix_p = &proc_embedded[..=t];
            let (pre_d, attn_weights) = self.encode_modality(
                tape,
                prefix_d,
                &bound.attn_diag,
                &bound.gru_diag,
                &bound.lstm_diag,
            );
            let (pre_p, _) = self.encode_modality(
                tape,
                prefix_p,
                &bound.attn_proc,
                &bound.gru_proc,
                &bound.lstm_proc,
            );
            let state = fuse_patient_state(tape, pre_d, pre_p, bound.fuse_w, bound.fuse_b);

            let o_bank = read_memory_bank(tape, memory, state);
            let o_dyn = read_dynamic_memory(tape, memory, &history, state);
            let (logits, probs) = predict(tape, state, o_bank, o_dyn, bound.head_w, bound.head_b);

            let stored = if !self.config.self_history {
                multi_hot(&visit.med, self.sizes.med)
            } else {
                let pv = tape.value(probs);
                let predicted: Vec<usize> = (0..pv.len())
                    .filter(|&j| pv[j] > self.config.threshold)
                    .collect();
                multi_hot(&predicted, self.sizes.med)
            };
            history.insert(state, stored);

            outputs.push(VisitOutput {
                state,
                o_bank,
                o_dyn,
                logits,
                probs,
                attn_diag: attn_weights,
            });
        }
        outputs
    }
}

/// Normalized adjacencies shared across passes: plain (no self-loops) for the
/// light convolution, self-looped for the GCN arm.
#[derive(Clone, Debug)]
pub struct PreparedGraphs {
    pub ehr_plain: NormalizedAdjacency,
    pub ddi_plain: NormalizedAdjacency,
    pub ehr_looped: NormalizedAdjacency,
    pub ddi_looped: NormalizedAdjacency,
}

impl PreparedGraphs {
    pub fn new(ehr: &AdjacencyMatrix, ddi: &AdjacencyMatrix) -> Self {
        assert_eq!(ehr.n(), ddi.n(), "drug graphs must share the medication vocabulary");
        PreparedGraphs {
            ehr_plain: normalize_adjacency(ehr),
            ddi_plain: normalize_adjacency(ddi),
            ehr_looped: normalize_with_self_loops(ehr),
            ddi_looped: normalize_with_self_loops(ddi),
        }
    }
}
