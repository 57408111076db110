//! Training loop, evaluation, and the ablation driver.
//!
//! One epoch sweeps the training patients in a seeded shuffled order. Each
//! patient gets a fresh tape: bind parameters, run the visit-by-visit forward
//! pass, sum the per-visit losses, backprop once, and take one optimizer step
//! (optionally one per visit behind a flag). The interaction penalty is
//! evaluated for monitoring every step even when its weight is zero. After
//! every epoch the validation split is scored and the parameters with the
//! best validation Jaccard so far are kept aside as the checkpoint.
//!
//! A non-finite value anywhere in a step aborts training with an error naming
//! the epoch and patient, rather than limping on with NaNs.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, TrainConfig, Variant};
use crate::data::{AdjacencyMatrix, CodeVocab, DataError, Dataset, PatientRecord};
use crate::gradcheck::{check_gradients, GradCheckReport};
use crate::loss::{interaction_value, loss_bce, loss_interaction, loss_margin, loss_total};
use crate::metrics::{self, metrics_report, MetricsReport, VisitEval};
use crate::model::{param_group, Model, PreparedGraphs, VocabSizes};
use crate::optim::{AdamState, OptimError};
use crate::params::ParamStore;
use crate::synth::{synth_generate, SynthConfig};
use crate::tape::Tape;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("epoch {epoch}, patient index {patient} ({id}): non-finite value: {message}")]
    NonFinite {
        epoch: usize,
        patient: usize,
        id: String,
        message: String,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Per-epoch record: mean per-visit loss components on the training split and
/// metrics on the validation split.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_bce: f64,
    pub loss_margin: f64,
    pub loss_interaction: f64,
    pub val_jaccard: f64,
    pub val_f1: f64,
    pub val_pr_auc: f64,
    pub val_ddi_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_jaccard: f64,
}

impl RunLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serialization cannot fail")
    }

    /// Per-epoch CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,loss_total,loss_bce,loss_margin,loss_interaction,val_jaccard,val_f1,val_pr_auc,val_ddi_rate\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.loss_total,
                e.loss_bce,
                e.loss_margin,
                e.loss_interaction,
                e.val_jaccard,
                e.val_f1,
                e.val_pr_auc,
                e.val_ddi_rate
            ));
        }
        out
    }
}

pub struct Trainer {
    pub model: Model,
    pub data: Dataset,
    graphs: PreparedGraphs,
    adam: AdamState,
    log: RunLog,
    best: Option<(f64, ParamStore)>,
    next_epoch: usize,
}

struct StepStats {
    bce: f64,
    margin: f64,
    interaction: f64,
    total: f64,
    visits: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Dataset) -> Result<Trainer, TrainError> {
        config.validate()?;
        let sizes = VocabSizes::of(&data.vocab);
        let graphs = PreparedGraphs::new(&data.ehr_adj, &data.ddi_adj);
        let adam = AdamState::new(config.lr);
        let model = Model::new(config.clone(), sizes);
        Ok(Trainer {
            model,
            data,
            graphs,
            adam,
            log: RunLog {
                config,
                epochs: Vec::new(),
                best_epoch: None,
                best_val_jaccard: f64::NEG_INFINITY,
            },
            best: None,
            next_epoch: 0,
        })
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn graphs(&self) -> &PreparedGraphs {
        &self.graphs
    }

    pub fn epochs_run(&self) -> usize {
        self.next_epoch
    }

    /// Parameters of the best validation epoch so far (current ones if no
    /// epoch has finished yet).
    pub fn best_params(&self) -> &ParamStore {
        self.best.as_ref().map(|(_, p)| p).unwrap_or(&self.model.params)
    }

    /// Model carrying the best-validation parameters.
    pub fn best_model(&self) -> Model {
        Model::from_parts(
            self.model.config.clone(),
            self.model.sizes,
            self.best_params().clone(),
        )
    }

    /// One optimizer pass over one patient. Returns the loss pieces and takes
    /// the Adam step(s).
    fn train_patient(&mut self, record: &PatientRecord) -> Result<StepStats, TrainError> {
        if self.model.config.per_visit_step {
            // one step per visit: replay the prefix so the history keys are
            // consistent with the freshly updated parameters
            let mut stats = StepStats { bce: 0.0, margin: 0.0, interaction: 0.0, total: 0.0, visits: 0 };
            for t in 0..record.visits.len() {
                let prefix = PatientRecord {
                    id: record.id.clone(),
                    visits: record.visits[..=t].to_vec(),
                };
                let s = self.step_on_record(&prefix, t)?;
                stats.bce += s.bce;
                stats.margin += s.margin;
                stats.interaction += s.interaction;
                stats.total += s.total;
                stats.visits += 1;
            }
            Ok(stats)
        } else {
            self.step_on_record(record, usize::MAX)
        }
    }

    /// Forward + backward + Adam on `record`. With `only_visit == usize::MAX`
    /// the loss sums every visit; otherwise just that visit contributes.
    fn step_on_record(
        &mut self,
        record: &PatientRecord,
        only_visit: usize,
    ) -> Result<StepStats, TrainError> {
        let cfg = &self.model.config;
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let outputs = self.model.forward_patient(&mut tape, &bound, &self.graphs, record);

        let ddi_node = (cfg.w_ddi != 0.0).then(|| {
            tape.constant(
                &[self.data.ddi_adj.n(), self.data.ddi_adj.n()],
                self.data.ddi_adj.as_slice().to_vec(),
            )
        });

        let mut stats = StepStats { bce: 0.0, margin: 0.0, interaction: 0.0, total: 0.0, visits: 0 };
        let mut total_node = None;
        for (t, (out, visit)) in outputs.iter().zip(&record.visits).enumerate() {
            if only_visit != usize::MAX && t != only_visit {
                continue;
            }
            let targets = crate::readout::multi_hot(&visit.med, self.model.sizes.med);
            let bce = loss_bce(&mut tape, out.logits, &targets);
            let margin = loss_margin(&mut tape, out.probs, visit.med.len(), cfg.threshold);
            let inter_node = ddi_node.map(|d| loss_interaction(&mut tape, out.probs, d));
            let visit_total = loss_total(
                &mut tape,
                bce,
                margin,
                inter_node,
                cfg.theta0,
                cfg.theta1,
                cfg.w_ddi,
            );
            stats.bce += tape.scalar_value(bce);
            stats.margin += tape.scalar_value(margin);
            stats.interaction += match inter_node {
                Some(n) => tape.scalar_value(n),
                None => interaction_value(tape.value(out.probs), &self.data.ddi_adj),
            };
            stats.total += tape.scalar_value(visit_total);
            stats.visits += 1;
            total_node = Some(match total_node {
                None => visit_total,
                Some(acc) => tape.add(acc, visit_total),
            });
        }
        let loss = total_node.expect("record has no visits");
        tape.backward(loss);
        let grads = bound.collect_grads(&tape);
        drop(tape); // release parameter borrows so Adam mutates in place
        self.adam.step(&mut self.model.params, &grads)?;
        Ok(stats)
    }

    /// One full epoch: seeded-shuffle sweep over the training split, then a
    /// validation pass. Keeps the best-validation parameters aside.
    pub fn run_epoch(&mut self) -> Result<EpochLog, TrainError> {
        let epoch = self.next_epoch;
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(
            self.model.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut rng);

        let mut sums = StepStats { bce: 0.0, margin: 0.0, interaction: 0.0, total: 0.0, visits: 0 };
        for &idx in &order {
            let record = self.data.train[idx].clone();
            let result = catch_unwind(AssertUnwindSafe(|| self.train_patient(&record)));
            let stats = match result {
                Ok(r) => r?,
                Err(payload) => {
                    let message = payload
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| payload.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "panic without message".to_string());
                    return Err(TrainError::NonFinite {
                        epoch: epoch + 1,
                        patient: idx,
                        id: record.id.clone(),
                        message,
                    });
                }
            };
            sums.bce += stats.bce;
            sums.margin += stats.margin;
            sums.interaction += stats.interaction;
            sums.total += stats.total;
            sums.visits += stats.visits;
        }

        let val_evals = self.evaluate_split(&self.data.val);
        let flat: Vec<VisitEval> = val_evals.iter().flatten().cloned().collect();
        let nv = sums.visits.max(1) as f64;
        let entry = EpochLog {
            // reported epoch numbers are 1-based; the raw counter seeds the
            // shuffle and must keep its history
            epoch: epoch + 1,
            loss_total: sums.total / nv,
            loss_bce: sums.bce / nv,
            loss_margin: sums.margin / nv,
            loss_interaction: sums.interaction / nv,
            val_jaccard: metrics::jaccard(&flat),
            val_f1: metrics::f1(&flat),
            val_pr_auc: metrics::pr_auc(&flat),
            val_ddi_rate: metrics::ddi_rate(&flat, &self.data.ddi_adj),
        };
        if entry.val_jaccard > self.log.best_val_jaccard {
            self.log.best_val_jaccard = entry.val_jaccard;
            self.log.best_epoch = Some(epoch + 1);
            self.best = Some((entry.val_jaccard, self.model.params.clone()));
        }
        self.log.epochs.push(entry.clone());
        self.next_epoch += 1;
        Ok(entry)
    }

    pub fn run_to_completion(&mut self) -> Result<(), TrainError> {
        while self.next_epoch < self.model.config.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Scores `records` with the *current* parameters; one eval per visit,
    /// grouped by patient.
    pub fn evaluate_split(&self, records: &[PatientRecord]) -> Vec<Vec<VisitEval>> {
        evaluate_records(&self.model, &self.graphs, records)
    }
}

/// Forward-only scoring of records with a given model.
pub fn evaluate_records(
    model: &Model,
    graphs: &PreparedGraphs,
    records: &[PatientRecord],
) -> Vec<Vec<VisitEval>> {
    records
        .iter()
        .map(|r| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let outputs = model.forward_patient(&mut tape, &bound, graphs, r);
            outputs
                .iter()
                .zip(&r.visits)
                .map(|(out, visit)| {
                    VisitEval::from_probs(
                        visit.med.clone(),
                        tape.value(out.probs).to_vec(),
                        model.config.threshold,
                    )
                })
                .collect()
        })
        .collect()
}

pub struct TrainOutcome {
    /// model carrying the best-validation parameters
    pub model: Model,
    pub log: RunLog,
    /// metrics of the best model on the held-out test split
    pub test_report: MetricsReport,
}

/// Trains to completion and scores the test split with the best parameters.
pub fn train(config: TrainConfig, data: Dataset) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(config, data)?;
    trainer.run_to_completion()?;
    let best = trainer.best_model();
    let test_evals = evaluate_records(&best, &trainer.graphs, &trainer.data.test);
    let test_report = metrics_report(
        &test_evals,
        &trainer.data.ddi_adj,
        best.config.bootstrap_rounds,
        best.config.seed,
    );
    Ok(TrainOutcome {
        model: best,
        log: trainer.log,
        test_report,
    })
}

// ── Ablation ────────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AblationCell {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub jaccard: AblationCell,
    pub f1: AblationCell,
    pub pr_auc: AblationCell,
    pub ddi_rate: AblationCell,
    pub avg_drugs: AblationCell,
}

fn cell(values: &[f64]) -> AblationCell {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    AblationCell { mean, std }
}

/// Runs the variant grid: for each variant and seed, re-split the records,
/// train to completion, and score the test split with the best parameters.
/// Point values are aggregated to mean/std across seeds.
pub fn ablate(
    base: &TrainConfig,
    vocab: &CodeVocab,
    records: &[PatientRecord],
    ddi_adj: &AdjacencyMatrix,
    seeds: &[u64],
    variants: &[Variant],
) -> Result<Vec<AblationRow>, TrainError> {
    assert!(!seeds.is_empty() && !variants.is_empty(), "ablate: empty grid");
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut jac = Vec::new();
        let mut f1v = Vec::new();
        let mut auc = Vec::new();
        let mut ddi = Vec::new();
        let mut drugs = Vec::new();
        for &seed in seeds {
            let config = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            let data = Dataset::build(
                vocab.clone(),
                records.to_vec(),
                ddi_adj.clone(),
                seed,
                config.split,
            )?;
            let outcome = train(config, data)?;
            jac.push(outcome.test_report.jaccard.value);
            f1v.push(outcome.test_report.f1.value);
            auc.push(outcome.test_report.pr_auc.value);
            ddi.push(outcome.test_report.ddi_rate.value);
            drugs.push(outcome.test_report.avg_drugs.value);
        }
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            seeds: seeds.to_vec(),
            jaccard: cell(&jac),
            f1: cell(&f1v),
            pr_auc: cell(&auc),
            ddi_rate: cell(&ddi),
            avg_drugs: cell(&drugs),
        });
    }
    Ok(rows)
}

// ── Whole-pipeline gradient check ───────────────────────────────────────────

/// Finite-difference check of the complete model on a tiny synthetic
/// instance: 3 patients, 8 diagnoses, 5 procedures, 6 medications, width 8,
/// 2 heads. The loss is the training objective summed over all patients.
pub fn toy_gradient_check(seed: u64, eps: f64, tol: f64) -> GradCheckReport {
    let synth_cfg = SynthConfig {
        patients: 3,
        diag_count: 8,
        proc_count: 5,
        med_count: 6,
        max_visits: 3,
        diag_per_visit: (1, 2),
        meds_per_diag: (1, 2),
        noise: 0.0,
        ddi_edges: 4,
        ..SynthConfig::default()
    };
    let out = synth_generate(&synth_cfg, seed).expect("valid synth config");
    let config = TrainConfig {
        dim: 8,
        heads: 2,
        seed,
        ..TrainConfig::default()
    };
    let sizes = VocabSizes::of(&out.vocab);
    let model = Model::new(config.clone(), sizes);
    let ehr = crate::data::build_ehr_adjacency(&out.records, sizes.med);
    let graphs = PreparedGraphs::new(&ehr, &out.ddi_adjacency());
    let records = out.records;

    let mut store = model.params.clone();
    check_gradients(&mut store, eps, tol, param_group, |params, want_grads| {
        let probe = Model::from_parts(config.clone(), sizes, params.clone());
        let mut tape = Tape::new();
        let bound = probe.bind(&mut tape);
        let mut total = None;
        for record in &records {
            let outputs = probe.forward_patient(&mut tape, &bound, &graphs, record);
            for (out, visit) in outputs.iter().zip(&record.visits) {
                let targets = crate::readout::multi_hot(&visit.med, sizes.med);
                let bce = loss_bce(&mut tape, out.logits, &targets);
                let margin = loss_margin(&mut tape, out.probs, visit.med.len(), config.threshold);
                let visit_total = loss_total(
                    &mut tape,
                    bce,
                    margin,
                    None,
                    config.theta0,
                    config.theta1,
                    0.0,
                );
                total = Some(match total {
                    None => visit_total,
                    Some(acc) => tape.add(acc, visit_total),
                });
            }
        }
        let loss = total.expect("no visits in toy instance");
        let value = tape.scalar_value(loss);
        if !want_grads {
            return (value, None);
        }
        tape.backward(loss);
        (value, Some(bound.collect_grads(&tape)))
    })
}
