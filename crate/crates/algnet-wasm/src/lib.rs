//! Browser demo for the medication-recommendation model.
//!
//! The whole pipeline — synthetic corpus, training loop, and model — runs
//! inside the page via wasm. A [`DemoSession`] owns one corpus and one
//! trainer; the page drives it with three calls:
//!
//! * [`DemoSession::run_epoch`] — one optimizer pass, returns the loss line
//! * [`DemoSession::inspect_patient`] — per-visit predictions and the
//!   attention weights the model put on each earlier visit
//! * [`DemoSession::memory_heatmap`] — similarity of the graph-propagated
//!   drug-memory rows, next to the raw co-prescription/interaction graphs
//!
//! Everything crosses the boundary as JSON strings, so the page stays plain
//! JavaScript with no generated bindings beyond wasm-bindgen's own.
//!
//! [`Session`] is the target-independent core; [`DemoSession`] only adapts
//! its errors for JavaScript. Tests drive [`Session`] directly, so the whole
//! demo logic is covered by a plain `cargo test` on the host.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use algnet::config::{TrainConfig, Variant};
use algnet::model::PreparedGraphs;
use algnet::synth::{synth_generate, SynthConfig};
use algnet::tape::Tape;
use algnet::train::Trainer;
use algnet::PatientRecord;

// ── session options ─────────────────────────────────────────────────────────

/// Page-facing knobs, all optional; sized so an epoch stays well under a
/// second even on a slow laptop.
#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DemoOptions {
    seed: u64,
    patients: usize,
    diag_count: usize,
    med_count: usize,
    min_visits: usize,
    max_visits: usize,
    chronic: f64,
    noise: f64,
    ddi_edges: usize,
    dim: usize,
    heads: usize,
    lr: f64,
    variant: String,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            seed: 42,
            patients: 48,
            diag_count: 12,
            med_count: 12,
            min_visits: 2,
            max_visits: 4,
            chronic: 0.5,
            noise: 0.05,
            ddi_edges: 8,
            dim: 8,
            heads: 2,
            lr: 1e-2,
            variant: "ALGNET".to_string(),
        }
    }
}

// ── JSON shapes returned to the page ────────────────────────────────────────

#[derive(Serialize)]
struct VisitView {
    diag: Vec<String>,
    truth: Vec<String>,
    predicted: Vec<String>,
    /// probability per medication, vocabulary order
    probs: Vec<f64>,
    /// head-averaged attention of this visit over visits `0..=t`;
    /// empty for variants without the attention stack
    attention: Vec<f64>,
}

#[derive(Serialize)]
struct PatientView {
    id: String,
    visits: Vec<VisitView>,
}

#[derive(Serialize)]
struct HeatmapView {
    meds: Vec<String>,
    /// cosine similarity of the propagated drug-memory rows
    similarity: Vec<Vec<f64>>,
    cooccurrence: Vec<Vec<f64>>,
    interactions: Vec<Vec<f64>>,
}

// ── target-independent core ─────────────────────────────────────────────────

pub struct Session {
    trainer: Trainer,
}

impl Session {
    pub fn new(options_json: &str) -> Result<Session, String> {
        let opts: DemoOptions =
            serde_json::from_str(options_json).map_err(|e| e.to_string())?;
        let variant: Variant = opts.variant.parse()?;

        let synth = SynthConfig {
            patients: opts.patients,
            diag_count: opts.diag_count,
            proc_count: 6,
            med_count: opts.med_count,
            min_visits: opts.min_visits,
            max_visits: opts.max_visits,
            chronic: opts.chronic,
            noise: opts.noise,
            ddi_edges: opts.ddi_edges,
            ..SynthConfig::default()
        };
        let out = synth_generate(&synth, opts.seed).map_err(|e| e.to_string())?;

        let config = TrainConfig {
            dim: opts.dim,
            heads: opts.heads,
            lr: opts.lr,
            seed: opts.seed,
            variant,
            // the page steps epochs one click at a time; this is just the cap
            epochs: 10_000,
            bootstrap_rounds: 1,
            ..TrainConfig::default()
        };
        let data = out
            .to_dataset(opts.seed, config.split)
            .map_err(|e| e.to_string())?;
        let trainer = Trainer::new(config, data).map_err(|e| e.to_string())?;
        Ok(Session { trainer })
    }

    pub fn run_epoch(&mut self) -> Result<String, String> {
        let entry = self.trainer.run_epoch().map_err(|e| e.to_string())?;
        serde_json::to_string(&entry).map_err(|e| e.to_string())
    }

    pub fn n_patients(&self) -> usize {
        self.trainer.data.val.len()
    }

    pub fn med_codes(&self) -> String {
        let vocab = &self.trainer.data.vocab;
        let codes: Vec<&str> = (0..vocab.med.len()).map(|i| vocab.med.code(i)).collect();
        serde_json::to_string(&codes).expect("string arrays always serialize")
    }

    pub fn inspect_patient(&self, index: usize) -> Result<String, String> {
        let record = self
            .trainer
            .data
            .val
            .get(index)
            .ok_or_else(|| "patient index out of range".to_string())?;
        let view = self.patient_view(record);
        serde_json::to_string(&view).map_err(|e| e.to_string())
    }

    pub fn memory_heatmap(&self) -> String {
        let model = &self.trainer.model;
        let data = &self.trainer.data;
        let graphs = PreparedGraphs::new(&data.ehr_adj, &data.ddi_adj);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let memory = model.build_memory(&mut tape, &bound, &graphs);
        let rows = tape.value(memory);

        let n = model.sizes.med;
        let dim = model.config.dim;
        let row = |i: usize| &rows[i * dim..(i + 1) * dim];
        let similarity: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| cosine(row(i), row(j))).collect())
            .collect();
        let dense = |adj: &algnet::AdjacencyMatrix| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..n).map(|j| adj.get(i, j)).collect()).collect()
        };

        let vocab = &data.vocab;
        let view = HeatmapView {
            meds: (0..n).map(|i| vocab.med.code(i).to_string()).collect(),
            similarity,
            cooccurrence: dense(&data.ehr_adj),
            interactions: dense(&data.ddi_adj),
        };
        serde_json::to_string(&view).expect("finite floats always serialize")
    }

    fn patient_view(&self, record: &PatientRecord) -> PatientView {
        let model = &self.trainer.model;
        let data = &self.trainer.data;
        let graphs = PreparedGraphs::new(&data.ehr_adj, &data.ddi_adj);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let outputs = model.forward_patient(&mut tape, &bound, &graphs, record);

        let med_code = |i: &usize| data.vocab.med.code(*i).to_string();
        let visits = record
            .visits
            .iter()
            .zip(&outputs)
            .enumerate()
            .map(|(t, (visit, out))| {
                let probs = tape.value(out.probs).to_vec();
                let predicted = probs
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > model.config.threshold)
                    .map(|(i, _)| med_code(&i))
                    .collect();

                // average the heads' final row: how much this visit's query
                // weighted each visit in the prefix
                let mut attention = vec![0.0; t + 1];
                for &head in &out.attn_diag {
                    let a = tape.value(head);
                    for (j, slot) in attention.iter_mut().enumerate() {
                        *slot += a[t * (t + 1) + j] / out.attn_diag.len() as f64;
                    }
                }
                if out.attn_diag.is_empty() {
                    attention.clear();
                }

                VisitView {
                    diag: visit.diag.iter().map(|&i| data.vocab.diag.code(i).to_string()).collect(),
                    truth: visit.med.iter().map(med_code).collect(),
                    predicted,
                    probs,
                    attention,
                }
            })
            .collect();

        PatientView {
            id: record.id.clone(),
            visits,
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0 // isolated drugs have zero memory rows; call them dissimilar
    } else {
        dot / (na * nb)
    }
}

// ── JavaScript boundary ─────────────────────────────────────────────────────

#[wasm_bindgen]
pub struct DemoSession {
    inner: Session,
}

#[wasm_bindgen]
impl DemoSession {
    /// Builds a fresh corpus and model from an options JSON object
    /// (`"{}"` for the defaults).
    #[wasm_bindgen(constructor)]
    pub fn new(options_json: &str) -> Result<DemoSession, JsError> {
        Session::new(options_json)
            .map(|inner| DemoSession { inner })
            .map_err(|e| JsError::new(&e))
    }

    /// Runs one training epoch and returns its log entry
    /// (`epoch`, loss terms, validation metrics) as JSON.
    pub fn run_epoch(&mut self) -> Result<String, JsError> {
        self.inner.run_epoch().map_err(|e| JsError::new(&e))
    }

    /// Number of patients available to [`DemoSession::inspect_patient`] —
    /// the validation split, which the model never trains on.
    pub fn n_patients(&self) -> usize {
        self.inner.n_patients()
    }

    /// Medication vocabulary in index order, as a JSON array of codes.
    pub fn med_codes(&self) -> String {
        self.inner.med_codes()
    }

    /// Runs the current model over one validation patient and reports each
    /// visit: coded diagnoses, true and predicted medications, the full
    /// probability vector, and where the attention looked in the history.
    pub fn inspect_patient(&self, index: usize) -> Result<String, JsError> {
        self.inner.inspect_patient(index).map_err(|e| JsError::new(&e))
    }

    /// Returns the drug-memory similarity matrix and both drug graphs as
    /// JSON, ready for a canvas heatmap.
    pub fn memory_heatmap(&self) -> String {
        self.inner.memory_heatmap()
    }
}

// ── host-side tests (the same code paths the page calls) ────────────────────
