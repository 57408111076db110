//! EHR records, code vocabularies, drug graphs, and dataset splits.
//!
//! Records arrive as JSON Lines, one patient per line:
//!
//! ```text
//! {"patient_id": "P0", "visits": [{"diag": ["D1"], "proc": ["PR0"], "med": ["M2", "M5"]}]}
//! ```
//!
//! Codes are opaque strings; loading interns them into dense indices in order
//! of first appearance, so the same file always yields the same vocabulary.
//! Inside a visit each code set is deduplicated and kept sorted.
//!
//! Drug–drug interaction edges come from a separate text file with one
//! `"<med_code> <med_code>"` pair per line; edges naming a medication that
//! never occurs in the records are skipped (and counted, so callers can warn).

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid record: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: patient {patient}: empty {field} set")]
    EmptyCodeSet {
        line: usize,
        patient: String,
        field: &'static str,
    },
    #[error("line {line}: patient {patient}: no visits")]
    NoVisits { line: usize, patient: String },
    #[error("need at least {need} patients to split, got {got}")]
    TooFewPatients { got: usize, need: usize },
    #[error("line {line}: invalid interaction edge {content:?}: expected two codes")]
    BadDdiLine { line: usize, content: String },
    #[error("invalid vocabulary file: {0}")]
    BadVocab(String),
}

// ── Vocabulary ──────────────────────────────────────────────────────────────

/// Bidirectional code <-> dense index map for one code type.
#[derive(Clone, Debug, Default)]
pub struct IndexVocab {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl IndexVocab {
    pub fn intern(&mut self, code: &str) -> usize {
        if let Some(&i) = self.index.get(code) {
            return i;
        }
        let i = self.codes.len();
        self.codes.push(code.to_string());
        self.index.insert(code.to_string(), i);
        i
    }

    pub fn get(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, idx: usize) -> &str {
        &self.codes[idx]
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    fn to_map(&self) -> BTreeMap<String, usize> {
        self.index.iter().map(|(k, &v)| (k.clone(), v)).collect()
    }

    fn from_map(map: &BTreeMap<String, usize>) -> Result<Self, DataError> {
        let mut codes = vec![String::new(); map.len()];
        for (code, &idx) in map {
            if idx >= map.len() || !codes[idx].is_empty() {
                return Err(DataError::BadVocab(format!(
                    "indices must be dense and unique; {code} maps to {idx}"
                )));
            }
            codes[idx] = code.clone();
        }
        let index = map.iter().map(|(k, &v)| (k.clone(), v)).collect();
        Ok(IndexVocab { codes, index })
    }
}

#[derive(Clone, Debug, Default)]
pub struct CodeVocab {
    pub diag: IndexVocab,
    pub proc: IndexVocab,
    pub med: IndexVocab,
}

/// Serialized form: one code -> index table per code type.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    diagnosis: BTreeMap<String, usize>,
    procedure: BTreeMap<String, usize>,
    medication: BTreeMap<String, usize>,
}

impl CodeVocab {
    pub fn to_json(&self) -> String {
        let file = VocabFile {
            diagnosis: self.diag.to_map(),
            procedure: self.proc.to_map(),
            medication: self.med.to_map(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| DataError::BadVocab(e.to_string()))?;
        Ok(CodeVocab {
            diag: IndexVocab::from_map(&file.diagnosis)?,
            proc: IndexVocab::from_map(&file.procedure)?,
            med: IndexVocab::from_map(&file.medication)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

// ── Records ─────────────────────────────────────────────────────────────────

/// One visit, index-encoded. Each field is a sorted, deduplicated set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Visit {
    pub diag: Vec<usize>,
    pub proc: Vec<usize>,
    pub med: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientRecord {
    pub id: String,
    pub visits: Vec<Visit>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVisit {
    diag: Vec<String>,
    proc: Vec<String>,
    med: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPatient {
    patient_id: String,
    visits: Vec<RawVisit>,
}

fn intern_set(vocab: &mut IndexVocab, codes: &[String]) -> Vec<usize> {
    let mut out: Vec<usize> = codes.iter().map(|c| vocab.intern(c)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Parses JSONL records, interning codes in order of first appearance.
/// Every visit must carry at least one diagnosis, procedure, and medication.
pub fn parse_records(reader: impl BufRead) -> Result<(CodeVocab, Vec<PatientRecord>), DataError> {
    let mut vocab = CodeVocab::default();
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPatient =
            serde_json::from_str(&line).map_err(|source| DataError::Json { line: lineno, source })?;
        if raw.visits.is_empty() {
            return Err(DataError::NoVisits {
                line: lineno,
                patient: raw.patient_id,
            });
        }
        let mut visits = Vec::with_capacity(raw.visits.len());
        for rv in &raw.visits {
            for (field, codes) in [("diag", &rv.diag), ("proc", &rv.proc), ("med", &rv.med)] {
                if codes.is_empty() {
                    return Err(DataError::EmptyCodeSet {
                        line: lineno,
                        patient: raw.patient_id.clone(),
                        field,
                    });
                }
            }
            visits.push(Visit {
                diag: intern_set(&mut vocab.diag, &rv.diag),
                proc: intern_set(&mut vocab.proc, &rv.proc),
                med: intern_set(&mut vocab.med, &rv.med),
            });
        }
        records.push(PatientRecord {
            id: raw.patient_id,
            visits,
        });
    }
    Ok((vocab, records))
}

pub fn load_records(path: &Path) -> Result<(CodeVocab, Vec<PatientRecord>), DataError> {
    let file = std::fs::File::open(path)?;
    parse_records(std::io::BufReader::new(file))
}

/// Writes records as JSONL, decoding indices back to code strings.
pub fn write_records(
    mut w: impl Write,
    records: &[PatientRecord],
    vocab: &CodeVocab,
) -> Result<(), DataError> {
    for r in records {
        let raw = RawPatient {
            patient_id: r.id.clone(),
            visits: r
                .visits
                .iter()
                .map(|v| RawVisit {
                    diag: v.diag.iter().map(|&i| vocab.diag.code(i).to_string()).collect(),
                    proc: v.proc.iter().map(|&i| vocab.proc.code(i).to_string()).collect(),
                    med: v.med.iter().map(|&i| vocab.med.code(i).to_string()).collect(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&raw).expect("record serialization cannot fail");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn save_records(
    path: &Path,
    records: &[PatientRecord],
    vocab: &CodeVocab,
) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_records(std::io::BufWriter::new(file), records, vocab)
}

// ── Adjacency matrices ──────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencyKind {
    /// medications prescribed together in at least one visit
    EhrCooccurrence,
    /// known drug–drug interactions
    Ddi,
}

/// Symmetric 0/1 medication graph with an empty diagonal.
#[derive(Clone, Debug)]
pub struct AdjacencyMatrix {
    n: usize,
    kind: AdjacencyKind,
    data: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn new(n: usize, kind: AdjacencyKind) -> Self {
        AdjacencyMatrix {
            n,
            kind,
            data: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> AdjacencyKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize) {
        assert!(i != j, "adjacency: self-edge at {i}");
        assert!(i < self.n && j < self.n, "adjacency: ({i}, {j}) out of range for n = {}", self.n);
        self.data[i * self.n + j] = 1.0;
        self.data[j * self.n + i] = 1.0;
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.get(i, j) != 0.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_degrees(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().sum())
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        (self.data.iter().filter(|&&v| v != 0.0).count()) / 2
    }

    /// Structural invariants: symmetric, binary, no self-loops.
    pub fn assert_invariants(&self) {
        for i in 0..self.n {
            assert_eq!(self.get(i, i), 0.0, "adjacency: self-loop at {i}");
            for j in 0..self.n {
                let v = self.get(i, j);
                assert!(v == 0.0 || v == 1.0, "adjacency: non-binary entry {v} at ({i}, {j})");
                assert_eq!(v, self.get(j, i), "adjacency: asymmetric at ({i}, {j})");
            }
        }
    }
}

/// Binary co-prescription graph: medications i and j are linked iff they
/// appear together in at least one visit of `records`.
pub fn build_ehr_adjacency(records: &[PatientRecord], n_med: usize) -> AdjacencyMatrix {
    let mut adj = AdjacencyMatrix::new(n_med, AdjacencyKind::EhrCooccurrence);
    for r in records {
        for v in &r.visits {
            for (a, &i) in v.med.iter().enumerate() {
                for &j in &v.med[a + 1..] {
                    adj.set_edge(i, j);
                }
            }
        }
    }
    adj
}

/// Raw pair counts behind the binarized co-prescription graph, for
/// diagnostics. Entry `i * n + j` counts visits prescribing both i and j.
pub fn co_occurrence_counts(records: &[PatientRecord], n_med: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_med * n_med];
    for r in records {
        for v in &r.visits {
            for (a, &i) in v.med.iter().enumerate() {
                for &j in &v.med[a + 1..] {
                    counts[i * n_med + j] += 1;
                    counts[j * n_med + i] += 1;
                }
            }
        }
    }
    counts
}

/// Parses a DDI edge list (`"<med_code> <med_code>"` per line) against the
/// medication vocabulary. Returns the graph and how many edges were skipped
/// because a code is absent from the records.
pub fn parse_ddi_edges(
    reader: impl BufRead,
    vocab: &CodeVocab,
) -> Result<(AdjacencyMatrix, usize), DataError> {
    let mut adj = AdjacencyMatrix::new(vocab.med.len(), AdjacencyKind::Ddi);
    let mut skipped = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(DataError::BadDdiLine {
                    line: lineno + 1,
                    content: trimmed.to_string(),
                })
            }
        };
        match (vocab.med.get(a), vocab.med.get(b)) {
            (Some(i), Some(j)) if i != j => adj.set_edge(i, j),
            (Some(_), Some(_)) => {} // self-interaction lines are ignored
            _ => skipped += 1,
        }
    }
    Ok((adj, skipped))
}

pub fn load_ddi_edges(
    path: &Path,
    vocab: &CodeVocab,
) -> Result<(AdjacencyMatrix, usize), DataError> {
    let file = std::fs::File::open(path)?;
    parse_ddi_edges(std::io::BufReader::new(file), vocab)
}

/// Builds a DDI graph directly from index pairs (used by the generator).
pub fn ddi_from_edges(n_med: usize, edges: &[(usize, usize)]) -> AdjacencyMatrix {
    let mut adj = AdjacencyMatrix::new(n_med, AdjacencyKind::Ddi);
    for &(i, j) in edges {
        adj.set_edge(i, j);
    }
    adj
}

// ── Splitting ───────────────────────────────────────────────────────────────

/// Splits records by patient into train/validation/test after a seeded
/// shuffle. Validation and test sizes are the rounded fractions; train takes
/// the rest. Needs at least 6 patients so no part is starved.
pub fn split_dataset(
    records: &[PatientRecord],
    seed: u64,
    split: [f64; 3],
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>, Vec<PatientRecord>), DataError> {
    let n = records.len();
    if n < 6 {
        return Err(DataError::TooFewPatients { got: n, need: 6 });
    }
    let n_val = ((n as f64) * split[1]).round() as usize;
    let n_test = ((n as f64) * split[2]).round() as usize;
    if n_val + n_test >= n {
        return Err(DataError::TooFewPatients {
            got: n,
            need: n_val + n_test + 1,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let pick = |idxs: &[usize]| idxs.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let val = pick(&order[..n_val]);
    let test = pick(&order[n_val..n_val + n_test]);
    let train = pick(&order[n_val + n_test..]);
    Ok((train, val, test))
}

// ── Bundled dataset ─────────────────────────────────────────────────────────

/// Everything the training loop needs: split records, vocabulary, and the two
/// drug graphs. The co-prescription graph is built from the training split
/// only, so evaluation visits cannot leak their prescriptions into the memory
/// bank.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: CodeVocab,
    pub train: Vec<PatientRecord>,
    pub val: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
    pub ehr_adj: AdjacencyMatrix,
    pub ddi_adj: AdjacencyMatrix,
}

impl Dataset {
    pub fn build(
        vocab: CodeVocab,
        records: Vec<PatientRecord>,
        ddi_adj: AdjacencyMatrix,
        seed: u64,
        split: [f64; 3],
    ) -> Result<Dataset, DataError> {
        assert_eq!(ddi_adj.n(), vocab.med.len(), "DDI graph size vs vocabulary");
        let (train, val, test) = split_dataset(&records, seed, split)?;
        let ehr_adj = build_ehr_adjacency(&train, vocab.med.len());
        Ok(Dataset {
            vocab,
            train,
            val,
            test,
            ehr_adj,
            ddi_adj,
        })
    }

    pub fn split_named(&self, name: &str) -> Option<&[PatientRecord]> {
        match name {
            "train" => Some(&self.train),
            "val" | "validation" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}
