//! Medication recommendation over longitudinal EHR records.
//!
//! The model embeds every medication into a memory bank built by light graph
//! convolution over two drug graphs (co-prescription and drug–drug
//! interaction), encodes a patient's visit history with multi-head
//! self-attention plus a GRU, and reads the memory bank twice per visit: once
//! by content, once through the patient's own visit history. Everything runs
//! on a small tape-based reverse-mode autodiff engine in `f64`, so the whole
//! pipeline is differentiable end to end and checkable against finite
//! differences.
//!
//! Module map:
//! - [`tape`]: dense tensors + reverse-mode autodiff tape
//! - [`params`] / [`optim`]: named parameter store and Adam
//! - [`gradcheck`]: finite-difference verification harness
//! - [`data`]: record/vocab model, JSONL + DDI file loading, adjacency builders, splits
//! - [`synth`]: planted-rule synthetic EHR generator
//! - [`graph`]: light graph convolution, layer combination, memory graph, GCN baseline
//! - [`encoder`]: visit embedding, self-attention, GRU/LSTM, patient state fusion
//! - [`readout`]: memory-bank and dynamic-history readouts, prediction head
//! - [`loss`] / [`metrics`]: training objectives and evaluation metrics
//! - [`config`] / [`model`] / [`train`]: configuration, variant wiring, training loop
//! - [`checkpoint`]: binary parameter serialization

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod readout;
pub mod synth;
pub mod tape;
pub mod train;

pub use config::{AttnPool, TrainConfig, Variant};
pub use data::{AdjacencyMatrix, CodeVocab, Dataset, PatientRecord, Visit};
pub use model::Model;
pub use tape::{NodeId, Tape};
pub use train::{train, Trainer};
