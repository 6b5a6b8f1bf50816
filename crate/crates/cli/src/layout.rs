//! Fixed file names under the output directory.

use std::path::{Path, PathBuf};

pub const DATASET: &str = "dataset.jsonl";
pub const SCORED: &str = "scored.jsonl";
pub const FILTERED: &str = "filtered.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final.json";
pub const TRAIN_LOG: &str = "logs/train.csv";
pub const EVAL_REPORT: &str = "reports/eval.json";
pub const ALIGNMENT_REPORT: &str = "reports/alignment.csv";
pub const SWEEP_REPORT: &str = "reports/sweep.csv";
pub const SWEEP_PLOT: &str = "reports/sweep_plot.dat";
pub const ORACLE_REPORT: &str = "reports/oracle.txt";

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Resolved configuration echoed by `command`.
    pub fn config_echo(&self, command: &str) -> PathBuf {
        self.root.join("config").join(format!("{command}.toml"))
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("step-{step:06}.json"))
    }

    /// Dataset file served and appended to by name.
    pub fn named_dataset(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.jsonl"))
    }
}
