//! Synthetic EHR generator with planted prescription rules.
//!
//! Every diagnosis code is assigned a fixed small set of medications. A
//! visit samples a few diagnoses and prescribes the union of their sets,
//! optionally corrupted by bounded noise (one spurious addition and/or one
//! dropped medication, each with probability `noise`). The mapping is
//! recoverable: an oracle that knows the planted rules predicts the union
//! exactly on noise-free data, which puts a ceiling on what any model can
//! learn and a floor under what a working one should reach.
//!
//! Interaction edges are drawn preferentially between medications that are
//! *never* co-prescribed, so low predicted-interaction rates stay achievable.
//!
//! Setting `chronic` above zero switches on a longitudinal mode: conditions
//! persist across visits with that probability, each visit codes only the
//! *newly arrived* conditions, and prescriptions cover every condition still
//! active. Current-visit codes then underdetermine the medication set, so a
//! model must carry patient state forward to predict well — which is what
//! separates sequence-aware architectures from per-visit ones on this data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::data::{
    ddi_from_edges, AdjacencyMatrix, CodeVocab, DataError, Dataset, PatientRecord, Visit,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub patients: usize,
    pub diag_count: usize,
    pub proc_count: usize,
    pub med_count: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    /// diagnoses sampled per visit, inclusive range
    pub diag_per_visit: (usize, usize),
    /// planted medications per diagnosis, inclusive range
    pub meds_per_diag: (usize, usize),
    /// probability of each corruption (spurious add, random drop) per visit
    pub noise: f64,
    /// probability an active condition carries over to the next visit; at 0
    /// (the default) visits are independent, above 0 visits code only new
    /// conditions while medications cover everything still active
    pub chronic: f64,
    pub ddi_edges: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 200,
            diag_count: 24,
            proc_count: 10,
            med_count: 20,
            min_visits: 1,
            max_visits: 4,
            diag_per_visit: (1, 3),
            meds_per_diag: (1, 3),
            noise: 0.1,
            chronic: 0.0,
            ddi_edges: 20,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.patients == 0 || self.diag_count == 0 || self.proc_count == 0 {
            return bad("patients, diag_count, and proc_count must be positive".into());
        }
        if self.med_count < 2 {
            return bad(format!("med_count must be at least 2, got {}", self.med_count));
        }
        if self.min_visits == 0 || self.min_visits > self.max_visits {
            return bad(format!(
                "visit range ({}, {}) must satisfy 1 <= min <= max",
                self.min_visits, self.max_visits
            ));
        }
        let (dlo, dhi) = self.diag_per_visit;
        if dlo == 0 || dlo > dhi || dhi > self.diag_count {
            return bad(format!(
                "diag_per_visit range ({dlo}, {dhi}) must fit in 1..={}",
                self.diag_count
            ));
        }
        let (mlo, mhi) = self.meds_per_diag;
        if mlo == 0 || mlo > mhi || mhi > self.med_count {
            return bad(format!(
                "meds_per_diag range ({mlo}, {mhi}) must fit in 1..={}",
                self.med_count
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.chronic) {
            return bad(format!("chronic must lie in [0, 1], got {}", self.chronic));
        }
        Ok(())
    }
}

/// Generator output. `planted` maps each diagnosis index to its medication
/// set; it is the ground truth behind the records and drives the oracle.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub vocab: CodeVocab,
    pub records: Vec<PatientRecord>,
    pub ddi_edges: Vec<(usize, usize)>,
    pub planted: Vec<Vec<usize>>,
}

impl SynthOutput {
    pub fn ddi_adjacency(&self) -> AdjacencyMatrix {
        ddi_from_edges(self.vocab.med.len(), &self.ddi_edges)
    }

    /// Interaction edges as code pairs, one per line, for the edge-list file.
    pub fn ddi_file_contents(&self) -> String {
        let mut out = String::new();
        for &(i, j) in &self.ddi_edges {
            out.push_str(self.vocab.med.code(i));
            out.push(' ');
            out.push_str(self.vocab.med.code(j));
            out.push('\n');
        }
        out
    }

    /// Splits the records and packages everything a trainer needs.
    pub fn to_dataset(&self, seed: u64, split: [f64; 3]) -> Result<Dataset, DataError> {
        Dataset::build(
            self.vocab.clone(),
            self.records.clone(),
            self.ddi_adjacency(),
            seed,
            split,
        )
    }
}

fn sample_distinct(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    pool.shuffle(rng);
    let mut picked: Vec<usize> = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut vocab = CodeVocab::default();
    for d in 0..config.diag_count {
        vocab.diag.intern(&format!("D{d}"));
    }
    for p in 0..config.proc_count {
        vocab.proc.intern(&format!("PR{p}"));
    }
    for m in 0..config.med_count {
        vocab.med.intern(&format!("M{m}"));
    }

    // fixed rule per diagnosis; seeding with d % med_count keeps every
    // medication reachable when there are enough diagnoses
    let mut planted: Vec<Vec<usize>> = Vec::with_capacity(config.diag_count);
    for d in 0..config.diag_count {
        let size = rng.gen_range(config.meds_per_diag.0..=config.meds_per_diag.1);
        let mut set = vec![d % config.med_count];
        while set.len() < size {
            let m = rng.gen_range(0..config.med_count);
            if !set.contains(&m) {
                set.push(m);
            }
        }
        set.sort_unstable();
        planted.push(set);
    }

    let mut records = Vec::with_capacity(config.patients);
    for p in 0..config.patients {
        let n_visits = rng.gen_range(config.min_visits..=config.max_visits);
        let mut visits = Vec::with_capacity(n_visits);
        // conditions still active from earlier visits (longitudinal mode only)
        let mut active: Vec<usize> = Vec::new();
        for _ in 0..n_visits {
            let diag = if config.chronic == 0.0 {
                let nd = rng.gen_range(config.diag_per_visit.0..=config.diag_per_visit.1);
                sample_distinct(&mut rng, config.diag_count, nd)
            } else {
                active.retain(|_| rng.gen_bool(config.chronic));
                let nd = rng.gen_range(config.diag_per_visit.0..=config.diag_per_visit.1);
                let mut pool: Vec<usize> = (0..config.diag_count)
                    .filter(|d| !active.contains(d))
                    .collect();
                pool.shuffle(&mut rng);
                pool.truncate(nd);
                if pool.is_empty() {
                    // every condition is already active: code one as a flare-up
                    pool.push(active[rng.gen_range(0..active.len())]);
                }
                pool.sort_unstable();
                for &d in &pool {
                    if !active.contains(&d) {
                        active.push(d);
                    }
                }
                pool
            };
            // memoryless mode prescribes for the visit's codes; longitudinal
            // mode prescribes for everything active, coded or not
            let source: &[usize] = if config.chronic == 0.0 { &diag } else { &active };
            let mut med: Vec<usize> = source
                .iter()
                .flat_map(|&d| planted[d].iter().copied())
                .collect();
            med.sort_unstable();
            med.dedup();
            if rng.gen_bool(config.noise) {
                let absent: Vec<usize> =
                    (0..config.med_count).filter(|m| !med.contains(m)).collect();
                if let Some(&extra) = absent.as_slice().choose(&mut rng) {
                    med.push(extra);
                    med.sort_unstable();
                }
            }
            if rng.gen_bool(config.noise) && med.len() > 1 {
                let drop = rng.gen_range(0..med.len());
                med.remove(drop);
            }
            let np = rng.gen_range(1..=2.min(config.proc_count));
            let proc = sample_distinct(&mut rng, config.proc_count, np);
            visits.push(Visit { diag, proc, med });
        }
        records.push(PatientRecord {
            id: format!("P{p:04}"),
            visits,
        });
    }

    // prefer interaction edges between never-co-prescribed pairs
    let n = config.med_count;
    let mut co = vec![false; n * n];
    for r in &records {
        for v in &r.visits {
            for (a, &i) in v.med.iter().enumerate() {
                for &j in &v.med[a + 1..] {
                    co[i * n + j] = true;
                    co[j * n + i] = true;
                }
            }
        }
    }
    let mut clean: Vec<(usize, usize)> = Vec::new();
    let mut dirty: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if co[i * n + j] {
                dirty.push((i, j));
            } else {
                clean.push((i, j));
            }
        }
    }
    clean.shuffle(&mut rng);
    dirty.shuffle(&mut rng);
    let ddi_edges: Vec<(usize, usize)> = clean
        .into_iter()
        .chain(dirty)
        .take(config.ddi_edges)
        .collect();

    Ok(SynthOutput {
        vocab,
        records,
        ddi_edges,
        planted,
    })
}

/// Predictions of the rule oracle: for each visit, the union of the planted
/// sets of its diagnoses. Exact on noise-free data.
pub fn planted_oracle_predictions(record: &PatientRecord, planted: &[Vec<usize>]) -> Vec<Vec<usize>> {
    record
        .visits
        .iter()
        .map(|v| {
            let mut meds: Vec<usize> = v
                .diag
                .iter()
                .flat_map(|&d| planted[d].iter().copied())
                .collect();
            meds.sort_unstable();
            meds.dedup();
            meds
        })
        .collect()
}
