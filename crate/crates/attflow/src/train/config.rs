use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            OptimizerKind::SgdMomentum { .. } => 1,
            OptimizerKind::Adam { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Halve the learning rate every N iterations.
    HalveEvery { every: usize },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, iteration: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::HalveEvery { every } => base * 0.5f64.powi((iteration / every) as i32),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Per-level loss weights, index 0 = full resolution.
    pub loss_weights: Vec<f64>,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Mirror samples (with u negation) with probability 1/2.
    pub augment_flip: bool,
    /// Identical brightness/contrast jitter on both frames.
    pub augment_photometric: bool,
    /// Resume from a training-state file written by an earlier run.
    pub resume_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch_size: 4,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::adam_default(),
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            loss_weights: LossWeights::default_schedule().0.to_vec(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            augment_flip: false,
            augment_photometric: false,
            resume_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.loss_weights.len() != 7 {
            return Err(Error::Config(format!(
                "expected 7 loss weights (levels 0..6), got {}",
                self.loss_weights.len()
            )));
        }
        self.weights().validate()
    }

    pub fn weights(&self) -> LossWeights {
        let mut w = [0.0; 7];
        w.copy_from_slice(&self.loss_weights);
        LossWeights(w)
    }

    /// Loads a TOML config file and overlays it on the defaults.
    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub final_eval_epe: Option<f64>,
    pub total_wall_s: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Writes the per-iteration records as JSON lines.
    pub fn write_jsonl(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        if let Some(epe) = self.final_eval_epe {
            writeln!(
                w,
                "{}",
                serde_json::json!({"final_eval_epe": epe, "total_wall_s": self.total_wall_s})
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig {
            iterations: 42,
            augment_flip: true,
            ..TrainConfig::default()
        };
        let text = cfg.to_toml();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.iterations, 42);
        assert!(back.augment_flip);
        assert_eq!(back.optimizer, cfg.optimizer);
    }

    #[test]
    fn halving_schedule() {
        let s = LrSchedule::HalveEvery { every: 100 };
        assert_eq!(s.lr_at(1.0, 0), 1.0);
        assert_eq!(s.lr_at(1.0, 99), 1.0);
        assert_eq!(s.lr_at(1.0, 100), 0.5);
        assert_eq!(s.lr_at(1.0, 250), 0.25);
    }
}
