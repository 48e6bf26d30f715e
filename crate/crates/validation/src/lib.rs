//! Helpers shared by the acceptance runner: fixture locations, a small
//! training driver and pass/fail reporting.

use std::fmt;
use std::path::PathBuf;

use dbdn::data::{ImageRgb, PatchSampler};
use dbdn::metrics::score;
use dbdn::train::{TrainSchedule, Trainer};
use dbdn::{ModelConfig, Result};

/// Test images bundled with the core crate.
pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn workspace_root() -> PathBuf {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.canonicalize().unwrap_or(root)
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict { passed, detail: detail.into() }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self::new(false, detail)
    }

    /// Folds an error into a failing verdict.
    pub fn from_result(r: Result<Verdict>) -> Self {
        r.unwrap_or_else(|e| Self::fail(format!("error: {e}")))
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", if self.passed { "PASS" } else { "FAIL" }, self.detail)
    }
}

/// Trains a fresh network for `schedule.total` steps without touching disk.
pub fn train(config: ModelConfig, schedule: TrainSchedule, seed: u64, sampler: &PatchSampler) -> Result<Trainer> {
    let mut trainer = Trainer::new(config, schedule, seed)?;
    while trainer.step < schedule.total {
        trainer.train_step(sampler)?;
    }
    Ok(trainer)
}

/// Y-channel PSNR of the network's output on `lr` against `hr`.
pub fn psnr_on(trainer: &Trainer, lr: &ImageRgb, hr: &ImageRgb) -> Result<f64> {
    let out = trainer.net.forward(&lr.to_tensor())?;
    let sr = ImageRgb::from_tensor(&out, 0)?;
    Ok(score(&sr, hr, trainer.net.config().scale)?.0)
}
