use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ConstantTable;
use crate::error::{Error, Result};

/// Components removed for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// All node types share one projection set.
    pub node_type: bool,
    /// Edge vectors stay at their static type embeddings.
    pub line_graph: bool,
    /// Comparison loss weight forced to zero.
    pub auxiliary: bool,
}

impl Ablations {
    pub fn parse_flag(&mut self, flag: &str) -> Result<()> {
        match flag {
            "node-type" => self.node_type = true,
            "line-graph" => self.line_graph = true,
            "auxiliary" => self.auxiliary = true,
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn tag(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }
}

/// Shape-relevant settings shared by the encoder and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub allow_pow: bool,
    pub ablate: Ablations,
}

/// Training configuration. Defaults follow the reference setup; unknown
/// keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs between learning-rate halvings.
    pub halving_period: usize,
    pub epochs: usize,
    pub beta_com: f64,
    pub beam: usize,
    pub max_len: usize,
    pub clip_norm: f64,
    pub allow_pow: bool,
    pub constants: Vec<String>,
    pub ablate: Ablations,
    pub seed: u64,
    pub precision: Precision,
    /// Relative tolerance for answer comparison; `None` means exact.
    pub answer_tolerance: Option<f64>,
    /// Reserved for pretrained word vectors; loading them is unsupported.
    pub pretrained_embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 512,
            heads: 4,
            layers: 2,
            batch_size: 64,
            lr: 1e-3,
            halving_period: 20,
            epochs: 80,
            beta_com: 0.1,
            beam: 5,
            max_len: 30,
            clip_norm: 5.0,
            allow_pow: true,
            constants: ConstantTable::default().literals().to_vec(),
            ablate: Ablations::default(),
            seed: 1,
            precision: Precision::F64,
            answer_tolerance: None,
            pretrained_embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
            ("halving_period", self.halving_period),
            ("epochs", self.epochs),
            ("beam", self.beam),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be positive")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide hidden ({})",
                self.heads, self.hidden
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("`lr` must be positive".into()));
        }
        if !(self.beta_com >= 0.0 && self.beta_com.is_finite()) {
            return Err(Error::Config("`beta_com` must be non-negative".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("`clip_norm` must be positive".into()));
        }
        if let Some(t) = self.answer_tolerance {
            if !(t >= 0.0) {
                return Err(Error::Config("`answer_tolerance` must be non-negative".into()));
            }
        }
        if let Some(p) = &self.pretrained_embeddings {
            return Err(Error::Config(format!(
                "pretrained embeddings ({}) are not supported",
                p.display()
            )));
        }
        self.constant_table()?;
        Ok(())
    }

    pub fn constant_table(&self) -> Result<ConstantTable> {
        ConstantTable::new(self.constants.clone())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            heads: self.heads,
            layers: self.layers,
            max_len: self.max_len,
            allow_pow: self.allow_pow,
            ablate: self.ablate,
        }
    }

    /// Comparison loss weight after ablation.
    pub fn effective_beta(&self) -> f64 {
        if self.ablate.auxiliary {
            0.0
        } else {
            self.beta_com
        }
    }

    /// Learning rate at `epoch` (0-based): halved every `halving_period`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.halving_period) as i32)
    }
}
