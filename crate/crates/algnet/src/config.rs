//! Run configuration and the model-variant grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("could not parse config file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which pieces of the architecture a run uses. Every variant is a point in
/// the grid (sequence branch: GRU / LSTM / none) x (attention on/off) x
/// (light graph convolution / weighted GCN).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// attention + GRU + light graph convolution (the full model)
    Algnet,
    RnnLgnet,
    LstmLgnet,
    ALgnetNoRnn,
    ALstmLgnet,
    RnnGcn,
    LstmGcn,
    AGcn,
    ALstmGcn,
    ARnnGcn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SeqKind {
    Gru,
    Lstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphKind {
    /// parameter-free propagation, layer outputs averaged
    Lgc,
    /// self-loops + per-layer weights + ReLU, last layer kept
    Gcn,
}

impl Variant {
    pub fn all() -> [Variant; 10] {
        use Variant::*;
        [
            Algnet, RnnLgnet, LstmLgnet, ALgnetNoRnn, ALstmLgnet, RnnGcn, LstmGcn, AGcn,
            ALstmGcn, ARnnGcn,
        ]
    }

    pub fn uses_attention(self) -> bool {
        use Variant::*;
        matches!(
            self,
            Algnet | ALgnetNoRnn | ALstmLgnet | AGcn | ALstmGcn | ARnnGcn
        )
    }

    pub fn seq_kind(self) -> Option<SeqKind> {
        use Variant::*;
        match self {
            Algnet | RnnLgnet | RnnGcn | ARnnGcn => Some(SeqKind::Gru),
            LstmLgnet | ALstmLgnet | LstmGcn | ALstmGcn => Some(SeqKind::Lstm),
            ALgnetNoRnn | AGcn => None,
        }
    }

    pub fn graph_kind(self) -> GraphKind {
        use Variant::*;
        match self {
            Algnet | RnnLgnet | LstmLgnet | ALgnetNoRnn | ALstmLgnet => GraphKind::Lgc,
            RnnGcn | LstmGcn | AGcn | ALstmGcn | ARnnGcn => GraphKind::Gcn,
        }
    }

    pub fn name(self) -> &'static str {
        use Variant::*;
        match self {
            Algnet => "ALGNET",
            RnnLgnet => "RNN_LGNET",
            LstmLgnet => "LSTM_LGNET",
            ALgnetNoRnn => "A_LGNET_NO_RNN",
            ALstmLgnet => "A_LSTM_LGNET",
            RnnGcn => "RNN_GCN",
            LstmGcn => "LSTM_GCN",
            AGcn => "A_GCN",
            ALstmGcn => "A_LSTM_GCN",
            ARnnGcn => "A_RNN_GCN",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Variant::all()
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::all().iter().map(|v| v.name()).collect();
                format!("unknown variant {s:?}; expected one of {}", names.join(", "))
            })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How a visit sequence is pooled into one vector after self-attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnPool {
    /// take the output row of the newest visit (default)
    Last,
    /// average the output rows
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// embedding width; also the per-head attention width
    pub dim: usize,
    pub heads: usize,
    /// propagation depth of the light graph convolution
    pub lgc_layers: usize,
    /// weight of every layer output in the combined embedding
    pub alpha: f64,
    /// weight of the interaction-graph embedding in the memory bank
    pub beta: f64,
    /// weight of the sequence branch when merged with the attention branch
    pub gamma: f64,
    /// cross-entropy weight in the combined loss
    pub theta0: f64,
    /// margin-loss weight in the combined loss
    pub theta1: f64,
    /// weight of the interaction penalty; 0 keeps it monitoring-only
    pub w_ddi: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// train/validation/test fractions; must sum to 1
    pub split: [f64; 3],
    /// probability above which a medication counts as predicted
    pub threshold: f64,
    pub variant: Variant,
    /// also add the unpropagated layer-0 embedding into the combination
    pub include_layer0: bool,
    pub attn_pool: AttnPool,
    /// take an optimizer step after every visit instead of every patient
    pub per_visit_step: bool,
    /// store the model's own thresholded predictions in the visit history
    /// instead of the ground-truth prescriptions
    pub self_history: bool,
    /// resampling rounds behind every metric's mean/std
    pub bootstrap_rounds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            heads: 8,
            lgc_layers: 2,
            alpha: 0.5,
            beta: 0.5,
            gamma: 1.0,
            theta0: 0.95,
            theta1: 0.05,
            w_ddi: 0.0,
            lr: 2e-4,
            epochs: 60,
            seed: 42,
            split: [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            threshold: 0.5,
            variant: Variant::Algnet,
            include_layer0: false,
            attn_pool: AttnPool::Last,
            per_visit_step: false,
            self_history: false,
            bootstrap_rounds: 200,
        }
    }
}

impl TrainConfig {
    /// Width of the stacked attention projections (`dim` per head).
    pub fn di_model(&self) -> usize {
        self.dim * self.heads
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.heads == 0 {
            return bad("heads must be positive".into());
        }
        if self.lgc_layers == 0 {
            return bad("lgc_layers must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if !(self.theta0 >= 0.0 && self.theta1 >= 0.0) {
            return bad(format!(
                "loss weights must be non-negative, got theta0 = {}, theta1 = {}",
                self.theta0, self.theta1
            ));
        }
        if ((self.theta0 + self.theta1) - 1.0).abs() > 1e-9 {
            return bad(format!(
                "theta0 + theta1 must equal 1, got {}",
                self.theta0 + self.theta1
            ));
        }
        if self.w_ddi < 0.0 {
            return bad(format!("w_ddi must be non-negative, got {}", self.w_ddi));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!(
                "threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            ));
        }
        let split_sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|&f| f <= 0.0) || (split_sum - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.split
            ));
        }
        if self.bootstrap_rounds == 0 {
            return bad("bootstrap_rounds must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<TrainConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config: TrainConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}
