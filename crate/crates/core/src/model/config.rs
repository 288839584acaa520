use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::Task;
use crate::numcore::DecayMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Graph,
    Batch,
    Layer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

impl OptimizerKind {
    pub fn decay_mode(self) -> DecayMode {
        match self {
            OptimizerKind::Adam => DecayMode::Coupled,
            OptimizerKind::AdamW => DecayMode::Decoupled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
    pub num_layers: usize,
    pub heads: usize,
    pub dropout_pre: f64,
    pub dropout_post: f64,
    pub dropout_mlp: f64,
    pub attention_dropout: f64,
    pub mlp_layers: usize,
    pub activation: Activation,
    pub norm: NormKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub cosine_schedule: bool,
    pub task: Task,
    pub seed: u64,
    /// Relaxes the hidden-width and epoch ranges for small runs.
    pub desk_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            h1: 256,
            h2: 128,
            h3: 64,
            num_layers: 2,
            heads: 4,
            dropout_pre: 0.1,
            dropout_post: 0.1,
            dropout_mlp: 0.1,
            attention_dropout: 0.0,
            mlp_layers: 2,
            activation: Activation::Relu,
            norm: NormKind::Graph,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            weight_decay: 1e-5,
            epochs: 300,
            cosine_schedule: true,
            task: Task::Classification,
            seed: 0,
            desk_scale: false,
        }
    }
}

impl ModelConfig {
    /// A small configuration for quick runs on fixture-sized data.
    pub fn desk() -> Self {
        Self {
            h1: 32,
            h2: 16,
            h3: 16,
            heads: 2,
            epochs: 60,
            lr: 5e-3,
            desk_scale: true,
            ..Self::default()
        }
    }

    /// Output width of layer `i`.
    pub fn layer_width(&self, i: usize) -> usize {
        if i == 0 {
            self.h2
        } else {
            self.h3
        }
    }

    pub fn layer_input_width(&self, i: usize) -> usize {
        match i {
            0 => self.h1,
            1 => self.h2,
            _ => self.h3,
        }
    }

    pub fn output_width(&self) -> usize {
        self.layer_width(self.num_layers.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        let in_range = |name: &str, v: f64, lo: f64, hi: f64| -> Result<(), ModelError> {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(ModelError::Config(format!(
                    "{name} = {v} outside [{lo}, {hi}]"
                )))
            }
        };
        if !(2..=4).contains(&self.num_layers) {
            return bad(format!("num_layers = {} outside 2..=4", self.num_layers));
        }
        if !(2..=8).contains(&self.heads) {
            return bad(format!("heads = {} outside 2..=8", self.heads));
        }
        if !(1..=3).contains(&self.mlp_layers) {
            return bad(format!("mlp_layers = {} outside 1..=3", self.mlp_layers));
        }
        in_range("dropout_pre", self.dropout_pre, 0.1, 0.5)?;
        in_range("dropout_post", self.dropout_post, 0.1, 0.5)?;
        in_range("dropout_mlp", self.dropout_mlp, 0.1, 0.5)?;
        in_range("attention_dropout", self.attention_dropout, 0.0, 0.4)?;
        in_range("lr", self.lr, 1e-5, 1e-2)?;
        in_range("weight_decay", self.weight_decay, 1e-6, 1e-2)?;

        if self.desk_scale {
            if self.h1 == 0 || self.h2 == 0 || self.h3 == 0 {
                return bad("hidden widths must be positive".into());
            }
            if self.h2 > self.h1 || self.h3 > self.h2 {
                return bad(format!(
                    "hidden widths must not grow: h1={} h2={} h3={}",
                    self.h1, self.h2, self.h3
                ));
            }
        } else {
            in_range("h1", self.h1 as f64, 256.0, 512.0)?;
            in_range("h2", self.h2 as f64, 64.0, self.h1.min(256) as f64)?;
            in_range("h3", self.h3 as f64, 32.0, self.h2.min(128) as f64)?;
            if !(300..=1500).contains(&self.epochs) || !self.epochs.is_multiple_of(100) {
                return bad(format!(
                    "epochs = {} not in 300..=1500 step 100",
                    self.epochs
                ));
            }
        }
        for (name, w) in [("h2", self.h2), ("h3", self.h3)] {
            if w % self.heads != 0 {
                return bad(format!(
                    "{name} = {w} not divisible by {} heads",
                    self.heads
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
    }

    #[test]
    fn range_violations_rejected() {
        let cases: Vec<fn(&mut ModelConfig)> = vec![
            |c| c.h1 = 128,
            |c| c.h2 = 300,
            |c| c.h3 = 130,
            |c| c.heads = 3,
            |c| c.num_layers = 5,
            |c| c.lr = 0.1,
            |c| c.epochs = 350,
            |c| c.dropout_pre = 0.05,
            |c| c.attention_dropout = 0.5,
            |c| c.mlp_layers = 0,
        ];
        for f in cases {
            let mut c = ModelConfig::default();
            f(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn desk_relaxes_only_widths_and_epochs() {
        let mut c = ModelConfig::desk();
        c.epochs = 7;
        c.validate().unwrap();
        c.lr = 0.5;
        assert!(c.validate().is_err());
    }
}
