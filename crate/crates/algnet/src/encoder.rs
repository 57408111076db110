//! Patient encoder: visit embeddings, multi-head self-attention over the
//! visit sequence, GRU/LSTM recurrence, and fusion into one query vector.
//!
//! Diagnoses and procedures run through *separate* encoder stacks whose
//! outputs are merged per modality (`attention + gamma * recurrent`), then the
//! two modality vectors are concatenated and squashed to the patient state
//! `a_t` that queries the medication memory.

use crate::config::AttnPool;
use crate::tape::{NodeId, Tape};

/// Attention projections for one modality. `wq/wk/wv` map `dim ->
/// dim * heads`; `wo` folds the concatenated heads back to `dim`.
#[derive(Clone, Copy, Debug)]
pub struct AttnParams {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub wi: NodeId,
    pub ui: NodeId,
    pub bi: NodeId,
    pub wf: NodeId,
    pub uf: NodeId,
    pub bf: NodeId,
    pub wo: NodeId,
    pub uo: NodeId,
    pub bo: NodeId,
    pub wg: NodeId,
    pub ug: NodeId,
    pub bg: NodeId,
}

/// Sum of embedding-table rows for each visit's code set.
pub fn embed_visits(tape: &mut Tape, table: NodeId, code_sets: &[&[usize]]) -> Vec<NodeId> {
    code_sets
        .iter()
        .map(|codes| tape.embedding_sum(table, codes))
        .collect()
}

pub struct MhsaOutput {
    /// pooled sequence representation, `[dim]`
    pub pooled: NodeId,
    /// per-position outputs after the head projection, `[t, dim]`
    pub per_position: NodeId,
    /// one `[t, t]` attention matrix per head (rows sum to 1)
    pub attn: Vec<NodeId>,
}

/// Multi-head self-attention over a visit sequence.
///
/// Every head spans `dim` columns of the stacked `dim * heads` projections;
/// scores are scaled by `1/sqrt(dim)`. The concatenated heads are projected
/// back to `dim` by `wo` and the sequence is pooled to a single vector.
pub fn mhsa_forward(
    tape: &mut Tape,
    seq: &[NodeId],
    params: &AttnParams,
    heads: usize,
    pool: AttnPool,
) -> MhsaOutput {
    assert!(!seq.is_empty(), "mhsa_forward: empty sequence");
    assert!(heads >= 1, "mhsa_forward: need at least one head");
    let t = seq.len();
    let dim = tape.shape(seq[0])[0];
    let di_model = tape.shape(params.wq)[1];
    assert_eq!(
        di_model,
        dim * heads,
        "mhsa_forward: projection width {di_model} does not match dim {dim} x heads {heads}"
    );

    let x = tape.stack_rows(seq); // [t, dim]
    let q = tape.matmul(x, params.wq); // [t, di_model]
    let k = tape.matmul(x, params.wk);
    let v = tape.matmul(x, params.wv);

    let scale = 1.0 / (dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dim, dim); // [t, dim]
        let kh = tape.slice_cols(k, h * dim, dim);
        let vh = tape.slice_cols(v, h * dim, dim);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt); // [t, t]
        let scaled = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scaled);
        attn.push(weights);
        head_outputs.push(tape.matmul(weights, vh)); // [t, dim]
    }
    let concat = if heads == 1 {
        head_outputs[0]
    } else {
        tape.concat_cols(&head_outputs) // [t, di_model]
    };
    let per_position = tape.matmul(concat, params.wo); // [t, dim]

    let pooled = match pool {
        AttnPool::Last => tape.row(per_position, t - 1),
        AttnPool::Mean => {
            let w = tape.constant(&[t], vec![1.0 / t as f64; t]);
            tape.vecmat(w, per_position)
        }
    };
    MhsaOutput {
        pooled,
        per_position,
        attn,
    }
}

/// One GRU step:
/// `z = sig(Wz x + Uz h + bz)`, `r = sig(Wr x + Ur h + br)`,
/// `h~ = tanh(Wh x + Uh (r . h) + bh)`, `h' = (1 - z) . h + z . h~`.
pub fn gru_cell(tape: &mut Tape, x: NodeId, h: NodeId, p: &GruParams) -> NodeId {
    let gate = |tape: &mut Tape, w, u, b, hin| {
        let xs = tape.vecmat(x, w);
        let hs = tape.vecmat(hin, u);
        let s = tape.add(xs, hs);
        tape.add(s, b)
    };
    let z_pre = gate(tape, p.wz, p.uz, p.bz, h);
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, p.wr, p.ur, p.br, h);
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h);
    let h_pre = gate(tape, p.wh, p.uh, p.bh, rh);
    let h_tilde = tape.tanh(h_pre);
    let dim = tape.shape(h).to_vec();
    let ones = tape.ones(&dim);
    let one_minus_z = tape.sub(ones, z);
    let keep = tape.mul(one_minus_z, h);
    let update = tape.mul(z, h_tilde);
    tape.add(keep, update)
}

/// Folds a sequence through the GRU from a zero initial state; returns the
/// final hidden state.
pub fn gru_forward(tape: &mut Tape, seq: &[NodeId], p: &GruParams) -> NodeId {
    assert!(!seq.is_empty(), "gru_forward: empty sequence");
    let dim = tape.shape(seq[0]).to_vec();
    let mut h = tape.zeros(&dim);
    for &x in seq {
        h = gru_cell(tape, x, h, p);
    }
    h
}

/// One LSTM step (canonical gates); returns `(h', c')`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    p: &LstmParams,
) -> (NodeId, NodeId) {
    let gate = |tape: &mut Tape, w, u, b| {
        let xs = tape.vecmat(x, w);
        let hs = tape.vecmat(h, u);
        let s = tape.add(xs, hs);
        tape.add(s, b)
    };
    let i_pre = gate(tape, p.wi, p.ui, p.bi);
    let i = tape.sigmoid(i_pre);
    let f_pre = gate(tape, p.wf, p.uf, p.bf);
    let f = tape.sigmoid(f_pre);
    let o_pre = gate(tape, p.wo, p.uo, p.bo);
    let o = tape.sigmoid(o_pre);
    let g_pre = gate(tape, p.wg, p.ug, p.bg);
    let g = tape.tanh(g_pre);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c_next = tape.add(fc, ig);
    let c_tanh = tape.tanh(c_next);
    let h_next = tape.mul(o, c_tanh);
    (h_next, c_next)
}

pub fn lstm_forward(tape: &mut Tape, seq: &[NodeId], p: &LstmParams) -> NodeId {
    assert!(!seq.is_empty(), "lstm_forward: empty sequence");
    let dim = tape.shape(seq[0]).to_vec();
    let mut h = tape.zeros(&dim);
    let mut c = tape.zeros(&dim);
    for &x in seq {
        let (h2, c2) = lstm_cell(tape, x, h, c, p);
        h = h2;
        c = c2;
    }
    h
}

/// Merges the attention output `l` with the recurrent output `s` for one
/// modality: `l + gamma * s`. Either branch may be absent (disabled by the
/// variant); with both absent there is nothing to encode.
pub fn pre_combine(
    tape: &mut Tape,
    l: Option<NodeId>,
    s: Option<NodeId>,
    gamma: f64,
) -> NodeId {
    match (l, s) {
        (Some(l), Some(s)) => {
            let gs = tape.scale(s, gamma);
            tape.add(l, gs)
        }
        (Some(l), None) => l,
        (None, Some(s)) => tape.scale(s, gamma),
        (None, None) => panic!("pre_combine: both branches disabled"),
    }
}

/// Fuses the two modality vectors into the patient state:
/// `a = tanh(concat(pre_d, pre_p) W + b)`.
pub fn fuse_patient_state(
    tape: &mut Tape,
    pre_diag: NodeId,
    pre_proc: NodeId,
    w: NodeId,
    b: NodeId,
) -> NodeId {
    let cat = tape.concat_vec(&[pre_diag, pre_proc]);
    let lin = tape.vecmat(cat, w);
    let aff = tape.add(lin, b);
    tape.tanh(aff)
}
